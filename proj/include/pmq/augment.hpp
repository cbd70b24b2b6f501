#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "pmq/common.hpp"
#include "pmq/fft.hpp"
#include "pmq/rng.hpp"
#include "pmq/tensor.hpp"

namespace pmq::aug {

struct MaskConfig {
  double timestamp_p = 0.5;  // per-timestamp zeroing probability
  double freq_frac = 0.1;    // fraction of frequency bins zeroed
  bool enable_time_mask = true;
  bool enable_freq_mask = true;
  bool enable_neighbor = true;
  bool per_channel_freq = false;  // independent bin sets per channel
};

template <typename T>
struct ViewPair {
  Matrix<T> query_view;
  Matrix<T> key_view;
  int64_t patient_id = 0;
};

// Splits a record into two adjacent halves (query = first, key = second).
// With neighboring disabled both views are full copies of the record and the
// masks alone provide variation.
template <typename T>
ViewPair<T> sample_neighbor_views(const Matrix<T>& values, int64_t patient_id,
                                  bool enable_neighbor, Rng& rng) {
  ViewPair<T> out;
  out.patient_id = patient_id;
  if (!enable_neighbor) {
    out.query_view = values;
    out.key_view = values;
    return out;
  }
  const int s = values.rows;
  require(s % 2 == 0, Err::OddLength,
          "temporal neighboring needs an even sample length, got " + std::to_string(s));
  const int dt = s / 2;
  // Window start chosen uniformly among valid positions; with the window
  // spanning the whole record that is t = 0.
  const int t = static_cast<int>(rng.uniform_int(s - 2 * dt + 1));
  out.query_view.resize(dt, values.cols);
  out.key_view.resize(dt, values.cols);
  for (int r = 0; r < dt; ++r) {
    for (int c = 0; c < values.cols; ++c) {
      out.query_view(r, c) = values(t + r, c);
      out.key_view(r, c) = values(t + dt + r, c);
    }
  }
  return out;
}

// A drawn mask instance. Keeping the realization explicit lets a forward
// pass be replayed exactly (finite-difference checks, resumed runs).
struct MaskRealization {
  std::vector<uint8_t> keep_row;            // empty = timestamp mask disabled
  std::vector<std::vector<int>> freq_bins;  // one shared set, or one per channel; empty = disabled
};

inline std::vector<int> draw_freq_bins(double freq_frac, int len, Rng& rng) {
  const int bins = len / 2 + 1;
  const int k = static_cast<int>(std::ceil(freq_frac * bins));
  return sample_without_replacement(bins, k, rng);
}

inline MaskRealization draw_masks(const MaskConfig& cfg, int len, int dim, Rng& rng) {
  require(cfg.timestamp_p >= 0.0 && cfg.timestamp_p <= 1.0, Err::BadConfig,
          "timestamp_p must be in [0,1]");
  require(cfg.freq_frac >= 0.0 && cfg.freq_frac <= 1.0, Err::BadConfig,
          "freq_frac must be in [0,1]");
  MaskRealization r;
  if (cfg.enable_freq_mask) {
    const int sets = cfg.per_channel_freq ? dim : 1;
    for (int s = 0; s < sets; ++s) r.freq_bins.push_back(draw_freq_bins(cfg.freq_frac, len, rng));
  }
  if (cfg.enable_time_mask) {
    r.keep_row.resize(static_cast<size_t>(len));
    for (int t = 0; t < len; ++t) r.keep_row[t] = rng.uniform() >= cfg.timestamp_p ? 1 : 0;
  }
  return r;
}

// Zeroes masked rows across all channels, in place.
template <typename T>
void timestamp_mask_apply(Matrix<T>& e, const std::vector<uint8_t>& keep_row) {
  if (keep_row.empty()) return;
  for (int t = 0; t < e.rows; ++t) {
    if (!keep_row[static_cast<size_t>(t)]) {
      T* row = e.row(t);
      for (int c = 0; c < e.cols; ++c) row[c] = T(0);
    }
  }
}

// Zeroes the selected spectrum bins per channel and inverts the transform,
// in place. This is a linear orthogonal projection of the signal, so it is
// its own adjoint: the backward pass reapplies it to the gradient.
template <typename T>
void frequency_mask_apply(Matrix<T>& e, const std::vector<std::vector<int>>& bin_sets,
                          const fft::RealFft& plan) {
  if (bin_sets.empty()) return;
  require(plan.n() == e.rows, Err::ShapeMismatch, "frequency mask plan length mismatch");
  std::vector<double> col(static_cast<size_t>(e.rows));
  std::vector<fft::cd> spec(static_cast<size_t>(plan.bins()));
  for (int c = 0; c < e.cols; ++c) {
    const std::vector<int>& bins = bin_sets.size() == 1 ? bin_sets[0]
                                                        : bin_sets[static_cast<size_t>(c)];
    if (bins.empty()) continue;
    for (int t = 0; t < e.rows; ++t) col[static_cast<size_t>(t)] = e(t, c);
    plan.forward(col.data(), spec.data());
    for (int b : bins) spec[static_cast<size_t>(b)] = fft::cd(0.0, 0.0);
    plan.inverse(spec.data(), col.data());
    for (int t = 0; t < e.rows; ++t) e(t, c) = static_cast<T>(col[static_cast<size_t>(t)]);
  }
}

// One-shot forms of the two masks.
template <typename T>
Matrix<T> timestamp_mask(const Matrix<T>& e, double p, Rng& rng) {
  require(p >= 0.0 && p <= 1.0, Err::BadConfig, "timestamp_p must be in [0,1]");
  std::vector<uint8_t> keep(static_cast<size_t>(e.rows));
  for (int t = 0; t < e.rows; ++t) keep[static_cast<size_t>(t)] = rng.uniform() >= p ? 1 : 0;
  Matrix<T> out = e;
  timestamp_mask_apply(out, keep);
  return out;
}

template <typename T>
Matrix<T> frequency_mask(const Matrix<T>& e, double freq_frac, Rng& rng) {
  require(freq_frac >= 0.0 && freq_frac <= 1.0, Err::BadConfig, "freq_frac must be in [0,1]");
  fft::RealFft plan(e.rows);
  std::vector<std::vector<int>> sets{draw_freq_bins(freq_frac, e.rows, rng)};
  Matrix<T> out = e;
  frequency_mask_apply(out, sets, plan);
  return out;
}

}  // namespace pmq::aug
