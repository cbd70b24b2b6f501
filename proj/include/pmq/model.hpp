#pragma once

#include <optional>
#include <type_traits>
#include <string>
#include <vector>

#include "pmq/augment.hpp"
#include "pmq/common.hpp"
#include "pmq/nn.hpp"
#include "pmq/rng.hpp"
#include "pmq/tensor.hpp"

namespace pmq::model {

struct EncoderConfig {
  int input_leads = 12;
  int hidden_dim = 64;   // D
  int output_dim = 320;  // K
  int num_blocks = 10;
  int kernel_size = 3;
  bool linear_dilation = false;  // dilation 2(i+1) instead of 2^i
  bool mean_pool = false;        // mean instead of max over time

  int dilation_of(int block) const {
    return linear_dilation ? 2 * (block + 1) : (1 << block);
  }
};

// ---------------------------------------------------------------------------
// Encoder: per-timestep input projection, embedding-space masks (training
// only), a stack of residual dilated-conv blocks, a width-1 output conv and
// global pooling over time.
// ---------------------------------------------------------------------------

template <typename T>
struct Encoder {
  EncoderConfig cfg;
  nn::Linear<T> inproj;  // L -> D
  struct Block {
    nn::Conv1d<T> conv1, conv2;
  };
  std::vector<Block> blocks;
  nn::Linear<T> outconv;  // D -> K, width-1

  void init(const EncoderConfig& c, Rng& rng) {
    cfg = c;
    inproj.init(c.input_leads, c.hidden_dim, rng);
    blocks.resize(static_cast<size_t>(c.num_blocks));
    for (int i = 0; i < c.num_blocks; ++i) {
      blocks[static_cast<size_t>(i)].conv1.init(c.hidden_dim, c.kernel_size, c.dilation_of(i), rng);
      blocks[static_cast<size_t>(i)].conv2.init(c.hidden_dim, c.kernel_size, c.dilation_of(i), rng);
    }
    outconv.init(c.hidden_dim, c.output_dim, rng);
  }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    inproj.visit(prefix + ".inproj", f);
    for (size_t i = 0; i < blocks.size(); ++i) {
      blocks[i].conv1.visit(prefix + ".block" + std::to_string(i) + ".conv1", f);
      blocks[i].conv2.visit(prefix + ".block" + std::to_string(i) + ".conv2", f);
    }
    outconv.visit(prefix + ".out", f);
  }
};

template <typename T>
struct EncCache {
  Matrix<T> x;                 // input view
  std::vector<Matrix<T>> h;    // h[0] = masked embedding, h[i+1] = block i output
  std::vector<Matrix<T>> c1;   // per block: first conv output (pre-activation)
  Matrix<T> y;                 // outconv output, S' x K
  std::vector<int> argmax;     // max-pool source row per output channel
  aug::MaskRealization masks;  // realization used by this pass
};

// Forward to a K-vector. `masks`/`plan` may be null (no augmentation, e.g.
// finetuning and evaluation). `cache` may be null for gradient-free passes.
template <typename T>
void encode_forward(const Encoder<T>& enc, const Matrix<T>& view,
                    const aug::MaskRealization* masks, const fft::RealFft* plan,
                    EncCache<T>* cache, std::vector<T>& out) {
  const EncoderConfig& cfg = enc.cfg;
  require(view.cols == cfg.input_leads, Err::ShapeMismatch,
          "view has " + std::to_string(view.cols) + " leads, encoder expects " +
              std::to_string(cfg.input_leads));

  std::vector<Matrix<T>> local_h;
  std::vector<Matrix<T>>& h = cache ? cache->h : local_h;
  h.assign(static_cast<size_t>(cfg.num_blocks) + 1, Matrix<T>());
  if (cache) {
    cache->x = view;
    cache->c1.assign(static_cast<size_t>(cfg.num_blocks), Matrix<T>());
    cache->masks = masks ? *masks : aug::MaskRealization{};
  }

  enc.inproj.forward(view, h[0]);
  if (masks) {
    if (!masks->freq_bins.empty()) {
      require(plan != nullptr && plan->n() == view.rows, Err::ShapeMismatch,
              "frequency mask needs a transform plan of the view length");
      aug::frequency_mask_apply(h[0], masks->freq_bins, *plan);
    }
    aug::timestamp_mask_apply(h[0], masks->keep_row);
  }

  Matrix<T> a, c1_local, bg;
  for (int i = 0; i < cfg.num_blocks; ++i) {
    const auto& blk = enc.blocks[static_cast<size_t>(i)];
    const Matrix<T>& hin = h[static_cast<size_t>(i)];
    a.resize(hin.rows, hin.cols);
    for (size_t k = 0; k < hin.v.size(); ++k) a.v[k] = nn::gelu(hin.v[k]);
    Matrix<T>& c1 = cache ? cache->c1[static_cast<size_t>(i)] : c1_local;
    blk.conv1.forward(a, c1);
    bg.resize(c1.rows, c1.cols);
    for (size_t k = 0; k < c1.v.size(); ++k) bg.v[k] = nn::gelu(c1.v[k]);
    Matrix<T>& hout = h[static_cast<size_t>(i) + 1];
    blk.conv2.forward(bg, hout);
    for (size_t k = 0; k < hout.v.size(); ++k) hout.v[k] += hin.v[k];
  }

  Matrix<T> y_local;
  Matrix<T>& y = cache ? cache->y : y_local;
  enc.outconv.forward(h[static_cast<size_t>(cfg.num_blocks)], y);

  out.assign(static_cast<size_t>(cfg.output_dim), T(0));
  if (cfg.mean_pool) {
    for (int t = 0; t < y.rows; ++t) {
      const T* yr = y.row(t);
      for (int k = 0; k < cfg.output_dim; ++k) out[static_cast<size_t>(k)] += yr[k];
    }
    for (T& v : out) v /= T(y.rows);
  } else {
    std::vector<int> local_arg;
    std::vector<int>& arg = cache ? cache->argmax : local_arg;
    arg.assign(static_cast<size_t>(cfg.output_dim), 0);
    for (int k = 0; k < cfg.output_dim; ++k) {
      T best = y(0, k);
      int bt = 0;
      for (int t = 1; t < y.rows; ++t) {
        if (y(t, k) > best) {
          best = y(t, k);
          bt = t;
        }
      }
      out[static_cast<size_t>(k)] = best;
      arg[static_cast<size_t>(k)] = bt;
    }
  }
}

// Accumulates parameter gradients from d(loss)/d(pooled output).
template <typename T>
void encode_backward(Encoder<T>& enc, const EncCache<T>& cache, const fft::RealFft* plan,
                     const std::vector<T>& dout) {
  const EncoderConfig& cfg = enc.cfg;
  const int s = cache.y.rows;

  Matrix<T> dy(s, cfg.output_dim);
  if (cfg.mean_pool) {
    for (int t = 0; t < s; ++t) {
      for (int k = 0; k < cfg.output_dim; ++k) dy(t, k) = dout[static_cast<size_t>(k)] / T(s);
    }
  } else {
    for (int k = 0; k < cfg.output_dim; ++k) {
      dy(cache.argmax[static_cast<size_t>(k)], k) = dout[static_cast<size_t>(k)];
    }
  }

  Matrix<T> dh;
  enc.outconv.backward(cache.h[static_cast<size_t>(cfg.num_blocks)], dy, &dh);

  Matrix<T> a, bg, dbg, dc1, da;
  for (int i = cfg.num_blocks - 1; i >= 0; --i) {
    auto& blk = enc.blocks[static_cast<size_t>(i)];
    const Matrix<T>& hin = cache.h[static_cast<size_t>(i)];
    const Matrix<T>& c1 = cache.c1[static_cast<size_t>(i)];
    a.resize(hin.rows, hin.cols);
    for (size_t k = 0; k < hin.v.size(); ++k) a.v[k] = nn::gelu(hin.v[k]);
    bg.resize(c1.rows, c1.cols);
    for (size_t k = 0; k < c1.v.size(); ++k) bg.v[k] = nn::gelu(c1.v[k]);

    blk.conv2.backward(bg, dh, &dbg);
    dc1.resize(c1.rows, c1.cols);
    for (size_t k = 0; k < c1.v.size(); ++k) dc1.v[k] = dbg.v[k] * nn::gelu_grad(c1.v[k]);
    blk.conv1.backward(a, dc1, &da);
    // Skip connection: grad w.r.t. block input adds the pass-through term.
    for (size_t k = 0; k < hin.v.size(); ++k) dh.v[k] += da.v[k] * nn::gelu_grad(hin.v[k]);
  }

  // Masks were applied after the projection: timestamp masking zeroes the
  // same rows of the gradient; the frequency mask is an orthogonal
  // projection and therefore self-adjoint.
  aug::timestamp_mask_apply(dh, cache.masks.keep_row);
  if (!cache.masks.freq_bins.empty()) {
    aug::frequency_mask_apply(dh, cache.masks.freq_bins, *plan);
  }
  enc.inproj.backward(cache.x, dh, nullptr);
}

// Convenience wrapper matching the spec surface: draws fresh mask
// realizations when training.
template <typename T>
std::vector<T> encode(const Encoder<T>& enc, const Matrix<T>& view, const aug::MaskConfig& masks,
                      Rng& rng, bool training) {
  std::vector<T> out;
  if (!training) {
    encode_forward(enc, view, nullptr, nullptr, static_cast<EncCache<T>*>(nullptr), out);
    return out;
  }
  fft::RealFft plan(view.rows);
  aug::MaskRealization real = aug::draw_masks(masks, view.rows, enc.cfg.hidden_dim, rng);
  encode_forward(enc, view, &real, &plan, static_cast<EncCache<T>*>(nullptr), out);
  return out;
}

// ---------------------------------------------------------------------------
// Heads. Projection (3 layers) and prediction (2 layers) share the MLP
// shape: linear -> BN for every layer, ReLU after the hidden ones.
// ---------------------------------------------------------------------------

template <typename T>
struct MlpHead {
  std::vector<nn::Linear<T>> lin;
  std::vector<nn::BatchNorm<T>> bn;

  void init(int dim, int layers, Rng& rng) {
    lin.resize(static_cast<size_t>(layers));
    bn.resize(static_cast<size_t>(layers));
    for (int i = 0; i < layers; ++i) {
      lin[static_cast<size_t>(i)].init(dim, dim, rng);
      bn[static_cast<size_t>(i)].init(dim);
    }
  }

  int layers() const { return static_cast<int>(lin.size()); }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    for (size_t i = 0; i < lin.size(); ++i) {
      lin[i].visit(prefix + ".lin" + std::to_string(i), f);
      bn[i].visit(prefix + ".bn" + std::to_string(i), f);
    }
  }
  template <typename F>
  void visit_buffers(const std::string& prefix, F&& f) {
    for (size_t i = 0; i < bn.size(); ++i) {
      bn[i].visit_buffers(prefix + ".bn" + std::to_string(i), f);
    }
  }
};

template <typename T>
struct MlpCache {
  std::vector<Matrix<T>> lin_in;
  std::vector<nn::BnCache<T>> bn;
  std::vector<Matrix<T>> bn_out;  // pre-ReLU
};

template <typename T>
void mlp_forward(MlpHead<T>& head, const Matrix<T>& x, bool training, MlpCache<T>* cache,
                 Matrix<T>& out) {
  const int n = head.layers();
  if (cache) {
    cache->lin_in.assign(static_cast<size_t>(n), Matrix<T>());
    cache->bn.assign(static_cast<size_t>(n), nn::BnCache<T>());
    cache->bn_out.assign(static_cast<size_t>(n), Matrix<T>());
  }
  Matrix<T> cur = x;
  Matrix<T> y, z;
  for (int i = 0; i < n; ++i) {
    if (cache) cache->lin_in[static_cast<size_t>(i)] = cur;
    head.lin[static_cast<size_t>(i)].forward(cur, y);
    head.bn[static_cast<size_t>(i)].forward(y, training, cache ? &cache->bn[static_cast<size_t>(i)] : nullptr, z);
    if (i + 1 < n) {
      if (cache) cache->bn_out[static_cast<size_t>(i)] = z;
      cur.resize(z.rows, z.cols);
      for (size_t k = 0; k < z.v.size(); ++k) cur.v[k] = z.v[k] > T(0) ? z.v[k] : T(0);
    } else {
      cur = z;
    }
  }
  out = cur;
}

template <typename T>
void mlp_backward(MlpHead<T>& head, const MlpCache<T>& cache, const Matrix<T>& dout,
                  std::type_identity_t<Matrix<T>>* dx) {
  const int n = head.layers();
  Matrix<T> d = dout, dy, dprev;
  for (int i = n - 1; i >= 0; --i) {
    if (i + 1 < n) {
      const Matrix<T>& z = cache.bn_out[static_cast<size_t>(i)];
      for (size_t k = 0; k < d.v.size(); ++k) {
        if (z.v[k] <= T(0)) d.v[k] = T(0);
      }
    }
    head.bn[static_cast<size_t>(i)].backward(cache.bn[static_cast<size_t>(i)], d, &dy);
    Matrix<T>* target = i > 0 ? &dprev : dx;
    head.lin[static_cast<size_t>(i)].backward(cache.lin_in[static_cast<size_t>(i)], dy, target);
    if (i > 0) d = dprev;
  }
}

// Batched head applications under their task names: projection into the
// loss space and the query-side prediction are the same MLP machinery.
template <typename T>
Matrix<T> project(MlpHead<T>& head, const Matrix<T>& repr, bool training = false) {
  Matrix<T> out;
  mlp_forward(head, repr, training, static_cast<MlpCache<T>*>(nullptr), out);
  return out;
}

template <typename T>
Matrix<T> predict(MlpHead<T>& head, const Matrix<T>& repr, bool training = false) {
  Matrix<T> out;
  mlp_forward(head, repr, training, static_cast<MlpCache<T>*>(nullptr), out);
  return out;
}

// ---------------------------------------------------------------------------
// Classifier head: K -> H -> C with BN+ReLU after the hidden layer and
// dropout applied after the output layer.
// ---------------------------------------------------------------------------

template <typename T>
struct ClassifierHead {
  nn::Linear<T> lin1;
  nn::BatchNorm<T> bn;
  nn::Linear<T> lin2;
  double dropout_p = 0.1;

  void init(int in_dim, int hidden, int num_classes, double dropout, Rng& rng) {
    dropout_p = dropout;
    lin1.init(in_dim, hidden, rng);
    bn.init(hidden);
    lin2.init(hidden, num_classes, rng);
  }
  int num_classes() const { return lin2.out; }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    lin1.visit(prefix + ".lin1", f);
    bn.visit(prefix + ".bn", f);
    lin2.visit(prefix + ".lin2", f);
  }
  template <typename F>
  void visit_buffers(const std::string& prefix, F&& f) {
    bn.visit_buffers(prefix + ".bn", f);
  }
};

template <typename T>
struct ClsCache {
  Matrix<T> x;
  nn::BnCache<T> bn;
  Matrix<T> bn_out;   // pre-ReLU
  Matrix<T> relu_out;
  std::vector<uint8_t> drop_keep;  // empty when dropout inactive
};

template <typename T>
void classifier_forward(ClassifierHead<T>& head, const Matrix<T>& x, bool training, Rng* rng,
                        ClsCache<T>* cache, Matrix<T>& logits) {
  Matrix<T> y, z;
  head.lin1.forward(x, y);
  head.bn.forward(y, training, cache ? &cache->bn : nullptr, z);
  Matrix<T> r(z.rows, z.cols);
  for (size_t k = 0; k < z.v.size(); ++k) r.v[k] = z.v[k] > T(0) ? z.v[k] : T(0);
  head.lin2.forward(r, logits);
  if (cache) {
    cache->x = x;
    cache->bn_out = z;
    cache->relu_out = r;
    cache->drop_keep.clear();
  }
  if (training && head.dropout_p > 0.0) {
    require(rng != nullptr, Err::BadConfig, "dropout needs an rng in training mode");
    require(head.dropout_p < 1.0, Err::BadConfig, "dropout_p must be < 1");
    const T scale = T(1.0 / (1.0 - head.dropout_p));
    std::vector<uint8_t> keep(logits.v.size());
    for (size_t k = 0; k < logits.v.size(); ++k) {
      keep[k] = rng->uniform() >= head.dropout_p ? 1 : 0;
      logits.v[k] = keep[k] ? logits.v[k] * scale : T(0);
    }
    if (cache) cache->drop_keep = std::move(keep);
  }
}

template <typename T>
void classifier_backward(ClassifierHead<T>& head, const ClsCache<T>& cache,
                         const Matrix<T>& dlogits, std::type_identity_t<Matrix<T>>* dx) {
  Matrix<T> d = dlogits;
  if (!cache.drop_keep.empty()) {
    const T scale = T(1.0 / (1.0 - head.dropout_p));
    for (size_t k = 0; k < d.v.size(); ++k) d.v[k] = cache.drop_keep[k] ? d.v[k] * scale : T(0);
  }
  Matrix<T> dr, dz, dy;
  head.lin2.backward(cache.relu_out, d, &dr);
  for (size_t k = 0; k < dr.v.size(); ++k) {
    if (cache.bn_out.v[k] <= T(0)) dr.v[k] = T(0);
  }
  head.bn.backward(cache.bn, dr, &dz);
  head.lin1.backward(cache.x, dz, dx);
}

// Logits for a batch of representations; dropout active only in training.
template <typename T>
Matrix<T> classify(ClassifierHead<T>& head, const Matrix<T>& repr, bool training = false,
                   Rng* rng = nullptr) {
  Matrix<T> logits;
  classifier_forward(head, repr, training, rng, static_cast<ClsCache<T>*>(nullptr), logits);
  return logits;
}

// ---------------------------------------------------------------------------
// Branch = encoder + projection head (+ prediction head on the query side).
// ---------------------------------------------------------------------------

template <typename T>
struct Branch {
  Encoder<T> enc;
  MlpHead<T> proj;
  bool has_pred = false;
  MlpHead<T> pred;

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    enc.visit(prefix + ".enc", f);
    proj.visit(prefix + ".proj", f);
    if (has_pred) pred.visit(prefix + ".pred", f);
  }
  template <typename F>
  void visit_buffers(const std::string& prefix, F&& f) {
    proj.visit_buffers(prefix + ".proj", f);
    if (has_pred) pred.visit_buffers(prefix + ".pred", f);
  }

  // Parameter tensors shared by the momentum pairing (everything except the
  // prediction head).
  template <typename F>
  void visit_momentum(const std::string& prefix, F&& f) {
    enc.visit(prefix + ".enc", f);
    proj.visit(prefix + ".proj", f);
  }

  size_t param_count() {
    size_t n = 0;
    visit("p", [&](const std::string&, std::vector<T>& w, std::vector<T>&) { n += w.size(); });
    return n;
  }

  void zero_grads() {
    visit("p", [](const std::string&, std::vector<T>&, std::vector<T>& g) {
      std::fill(g.begin(), g.end(), T(0));
    });
  }
};

// Query branch from a fan-in-scaled random init; key branch starts as a
// value copy without the prediction head and is never touched by gradients.
template <typename T>
std::pair<Branch<T>, Branch<T>> init_branches(const EncoderConfig& cfg, uint64_t seed) {
  Rng rng(derive_seed(seed, 0x1417));
  Branch<T> query;
  query.enc.init(cfg, rng);
  query.proj.init(cfg.output_dim, 3, rng);
  query.has_pred = true;
  query.pred.init(cfg.output_dim, 2, rng);

  Branch<T> key;
  key.enc = query.enc;
  key.proj = query.proj;
  key.has_pred = false;
  return {std::move(query), std::move(key)};
}

}  // namespace pmq::model
