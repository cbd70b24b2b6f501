#include "pmq/fft.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace pmq::fft {

bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }

int next_pow2(int n) {
  int m = 1;
  while (m < n) m <<= 1;
  return m;
}

void fft_pow2(std::vector<cd>& a, bool inverse) {
  const int n = static_cast<int>(a.size());
  if (n <= 1) return;

  // Bit-reversal permutation.
  for (int i = 1, j = 0; i < n; ++i) {
    int bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }

  for (int len = 2; len <= n; len <<= 1) {
    const double ang = 2.0 * std::numbers::pi / len * (inverse ? 1.0 : -1.0);
    const cd wlen(std::cos(ang), std::sin(ang));
    for (int i = 0; i < n; i += len) {
      cd w(1.0, 0.0);
      for (int j = 0; j < len / 2; ++j) {
        cd u = a[i + j];
        cd v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
  if (inverse) {
    for (cd& x : a) x /= static_cast<double>(n);
  }
}

RealFft::RealFft(int n) : n_(n) {
  if (n < 1) throw std::invalid_argument("RealFft: length must be >= 1");
  pow2_ = is_pow2(n);
  if (pow2_) return;

  // Bluestein: chirp_[k] = exp(-i*pi*k^2/n). k^2 mod 2n keeps the angle
  // argument small for large k.
  m_ = next_pow2(2 * n - 1);
  chirp_.resize(n);
  for (int k = 0; k < n; ++k) {
    long long k2 = (1LL * k * k) % (2LL * n);
    double ang = std::numbers::pi * static_cast<double>(k2) / n;
    chirp_[k] = cd(std::cos(ang), -std::sin(ang));
  }
  std::vector<cd> b(m_, cd(0.0, 0.0));
  b[0] = std::conj(chirp_[0]);
  for (int k = 1; k < n; ++k) {
    b[k] = std::conj(chirp_[k]);
    b[m_ - k] = std::conj(chirp_[k]);
  }
  fft_pow2(b, false);
  chirp_fft_ = std::move(b);
}

void RealFft::cfft(std::vector<cd>& a, bool inverse) const {
  if (pow2_) {
    fft_pow2(a, inverse);
    return;
  }
  // Bluestein via the forward chirp; the inverse uses conj(fft(conj(x)))/n.
  if (inverse) {
    for (cd& x : a) x = std::conj(x);
    cfft(a, false);
    for (cd& x : a) x = std::conj(x) / static_cast<double>(n_);
    return;
  }
  std::vector<cd> tmp(m_, cd(0.0, 0.0));
  for (int k = 0; k < n_; ++k) tmp[k] = a[k] * chirp_[k];
  fft_pow2(tmp, false);
  for (int k = 0; k < m_; ++k) tmp[k] *= chirp_fft_[k];
  fft_pow2(tmp, true);
  for (int k = 0; k < n_; ++k) a[k] = tmp[k] * chirp_[k];
}

void RealFft::forward(const double* x, cd* spectrum) const {
  std::vector<cd> a(n_);
  for (int t = 0; t < n_; ++t) a[t] = cd(x[t], 0.0);
  cfft(a, false);
  const int nb = bins();
  for (int k = 0; k < nb; ++k) spectrum[k] = a[k];
}

void RealFft::inverse(const cd* spectrum, double* x) const {
  std::vector<cd> a(n_);
  const int nb = bins();
  for (int k = 0; k < nb; ++k) a[k] = spectrum[k];
  // Hermitian extension of the redundant half.
  for (int k = nb; k < n_; ++k) a[k] = std::conj(spectrum[n_ - k]);
  cfft(a, true);
  for (int t = 0; t < n_; ++t) x[t] = a[t].real();
}

}  // namespace pmq::fft
