#pragma once

#include <complex>
#include <vector>

namespace pmq::fft {

using cd = std::complex<double>;

bool is_pow2(int n);
int next_pow2(int n);

// In-place iterative radix-2 transform; a.size() must be a power of two.
// inverse=true applies the 1/n scaling.
void fft_pow2(std::vector<cd>& a, bool inverse);

// Real-input transform plan for a fixed length n (any n >= 1).
// Non power-of-two lengths go through Bluestein's chirp-z algorithm with a
// precomputed chirp so repeated transforms share the setup cost.
//
// Conventions: forward is unscaled, inverse carries the 1/n factor, so
// inverse(forward(x)) == x.
class RealFft {
 public:
  explicit RealFft(int n);

  int n() const { return n_; }
  // Number of non-redundant spectrum bins for a real input.
  int bins() const { return n_ / 2 + 1; }

  // x[n] -> spectrum[bins()]
  void forward(const double* x, cd* spectrum) const;
  // spectrum[bins()] (hermitian half) -> x[n]
  void inverse(const cd* spectrum, double* x) const;

 private:
  void cfft(std::vector<cd>& a, bool inverse) const;

  int n_ = 0;
  bool pow2_ = false;
  // Bluestein working tables (empty when pow2_).
  int m_ = 0;                  // padded convolution length
  std::vector<cd> chirp_;      // exp(-i*pi*k^2/n)
  std::vector<cd> chirp_fft_;  // FFT of the zero-padded conjugate chirp
};

}  // namespace pmq::fft
