#include "pmq/common.hpp"

namespace pmq {

const char* err_name(Err e) {
  switch (e) {
    case Err::MissingFile: return "MissingFile";
    case Err::MalformedManifest: return "MalformedManifest";
    case Err::ShapeMismatch: return "ShapeMismatch";
    case Err::SplitLeak: return "SplitLeak";
    case Err::TrialTooShort: return "TrialTooShort";
    case Err::TooFewPatients: return "TooFewPatients";
    case Err::EmptyTrainSet: return "EmptyTrainSet";
    case Err::IoError: return "IoError";
    case Err::OddLength: return "OddLength";
    case Err::NormViolation: return "NormViolation";
    case Err::Underflow: return "Underflow";
    case Err::NoPositive: return "NoPositive";
    case Err::LabelMissing: return "LabelMissing";
    case Err::ClassCountMismatch: return "ClassCountMismatch";
    case Err::NumericalDivergence: return "NumericalDivergence";
    case Err::LengthMismatch: return "LengthMismatch";
    case Err::DegenerateLabels: return "DegenerateLabels";
    case Err::Empty: return "Empty";
    case Err::BadConfig: return "BadConfig";
  }
  return "Unknown";
}

}  // namespace pmq
