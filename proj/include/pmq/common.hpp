#pragma once

#include <stdexcept>
#include <string>

namespace pmq {

// Error taxonomy shared across modules. The CLI maps these to
// machine-readable "error: <name>: <message>" lines and a nonzero exit.
enum class Err {
  MissingFile,
  MalformedManifest,
  ShapeMismatch,
  SplitLeak,
  TrialTooShort,
  TooFewPatients,
  EmptyTrainSet,
  IoError,
  OddLength,
  NormViolation,
  Underflow,
  NoPositive,
  LabelMissing,
  ClassCountMismatch,
  NumericalDivergence,
  LengthMismatch,
  DegenerateLabels,
  Empty,
  BadConfig,
};

const char* err_name(Err e);

class Error : public std::runtime_error {
 public:
  Error(Err code, const std::string& msg)
      : std::runtime_error(std::string(err_name(code)) + ": " + msg), code_(code) {}
  Err code() const { return code_; }

 private:
  Err code_;
};

[[noreturn]] inline void fail(Err code, const std::string& msg) { throw Error(code, msg); }

inline void require(bool ok, Err code, const std::string& msg) {
  if (!ok) fail(code, msg);
}

}  // namespace pmq
