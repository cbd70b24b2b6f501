#pragma once

#include <atomic>
#include <type_traits>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "pmq/augment.hpp"
#include "pmq/common.hpp"
#include "pmq/data.hpp"
#include "pmq/fft.hpp"
#include "pmq/model.hpp"
#include "pmq/optim.hpp"
#include "pmq/tensor.hpp"

namespace pmq::pcl {

struct PclConfig {
  double tau = 0.1;
  double momentum_m = 0.999;
  int queue_size = 16384;
  bool enable_queue = true;
  // Alternative reading of the in-batch similarity matrix: a second loss
  // term against the batch keys instead of folding them into the queue.
  bool separate_batch_term = false;
};

// Counts degenerate zero-vector normalizations instead of producing NaN.
int64_t zero_vector_warnings();
void reset_zero_vector_warnings();
void bump_zero_vector_warnings();

template <typename T>
std::vector<T> l2_normalize(const std::vector<T>& v) {
  double n2 = 0.0;
  for (T x : v) n2 += static_cast<double>(x) * static_cast<double>(x);
  if (n2 == 0.0) {
    bump_zero_vector_warnings();
    return v;
  }
  const double inv = 1.0 / std::sqrt(n2);
  std::vector<T> out(v.size());
  for (size_t i = 0; i < v.size(); ++i) out[i] = static_cast<T>(v[i] * inv);
  return out;
}

// Row-wise normalization keeping the pre-normalization norms for backward.
template <typename T>
void l2_normalize_rows(const Matrix<T>& x, Matrix<T>& out, std::vector<double>* norms) {
  out.resize(x.rows, x.cols);
  if (norms) norms->assign(static_cast<size_t>(x.rows), 1.0);
  for (int r = 0; r < x.rows; ++r) {
    double n2 = 0.0;
    const T* xr = x.row(r);
    for (int c = 0; c < x.cols; ++c) n2 += static_cast<double>(xr[c]) * xr[c];
    T* yr = out.row(r);
    if (n2 == 0.0) {
      bump_zero_vector_warnings();
      for (int c = 0; c < x.cols; ++c) yr[c] = xr[c];
      continue;
    }
    const double n = std::sqrt(n2);
    if (norms) (*norms)[static_cast<size_t>(r)] = n;
    for (int c = 0; c < x.cols; ++c) yr[c] = static_cast<T>(xr[c] / n);
  }
}

// d(pre-norm) = (dq - (dq.q) q) / norm, per row.
template <typename T>
void l2_normalize_rows_backward(const Matrix<T>& normalized, const std::vector<double>& norms,
                                const Matrix<T>& dout, Matrix<T>& dx) {
  dx.resize(normalized.rows, normalized.cols);
  for (int r = 0; r < normalized.rows; ++r) {
    const T* q = normalized.row(r);
    const T* dq = dout.row(r);
    double dot = 0.0;
    for (int c = 0; c < normalized.cols; ++c) dot += static_cast<double>(dq[c]) * q[c];
    const double inv = 1.0 / norms[static_cast<size_t>(r)];
    T* dxr = dx.row(r);
    for (int c = 0; c < normalized.cols; ++c) {
      dxr[c] = static_cast<T>((static_cast<double>(dq[c]) - dot * q[c]) * inv);
    }
  }
}

// ---------------------------------------------------------------------------
// Fixed-capacity FIFO of (patient id, unit-norm key representation). A ring
// buffer holds capacity+B transiently between the enqueue and the paired
// dequeue of a training step.
// ---------------------------------------------------------------------------

template <typename T>
class PatientMemoryQueue {
 public:
  PatientMemoryQueue(int capacity, int dim) : capacity_(capacity), dim_(dim) {
    require(capacity >= 1 && dim >= 1, Err::BadConfig, "queue capacity and dim must be >= 1");
  }

  int capacity() const { return capacity_; }
  int dim() const { return dim_; }
  int size() const { return len_; }
  int64_t total_enqueued() const { return total_enqueued_; }
  void set_total_enqueued(int64_t n) { total_enqueued_ = n; }

  int64_t id_at(int i) const { return ids_[phys(i)]; }
  const T* key_at(int i) const { return keys_.data() + static_cast<size_t>(phys(i)) * dim_; }

  void enqueue(const std::vector<int64_t>& patient_ids, const Matrix<T>& keys) {
    require(keys.rows == static_cast<int>(patient_ids.size()) && keys.cols == dim_,
            Err::ShapeMismatch, "enqueue shapes do not match queue");
    for (int r = 0; r < keys.rows; ++r) {
      double n2 = 0.0;
      const T* kr = keys.row(r);
      for (int c = 0; c < dim_; ++c) n2 += static_cast<double>(kr[c]) * kr[c];
      require(std::abs(std::sqrt(n2) - 1.0) <= 1e-6, Err::NormViolation,
              "enqueued key is not unit-norm (|k| = " + std::to_string(std::sqrt(n2)) + ")");
    }
    reserve(len_ + keys.rows);
    for (int r = 0; r < keys.rows; ++r) {
      const int p = phys(len_);
      ids_[p] = patient_ids[static_cast<size_t>(r)];
      std::copy(keys.row(r), keys.row(r) + dim_, keys_.begin() + static_cast<size_t>(p) * dim_);
      ++len_;
      ++total_enqueued_;
    }
  }

  void dequeue(int count) {
    require(count >= 0 && count <= len_, Err::Underflow,
            "dequeue of " + std::to_string(count) + " from queue of " + std::to_string(len_));
    head_ = (head_ + count) % phys_cap();
    len_ -= count;
  }

  std::vector<int> positives_for(int64_t patient_id) const {
    std::vector<int> out;
    for (int i = 0; i < len_; ++i) {
      if (id_at(i) == patient_id) out.push_back(i);
    }
    return out;
  }

  // Rebuilds contents from serialized state (logical FIFO order, oldest
  // first); keys are trusted to be unit-norm already.
  void restore(const std::vector<int64_t>& patient_ids, const Matrix<T>& keys,
               int64_t total_enqueued) {
    require(keys.rows == static_cast<int>(patient_ids.size()) && keys.cols == dim_,
            Err::ShapeMismatch, "restore shapes do not match queue");
    head_ = 0;
    len_ = keys.rows;
    ids_.assign(static_cast<size_t>(std::max(len_, 1)), 0);
    keys_.assign(static_cast<size_t>(std::max(len_, 1)) * dim_, T(0));
    for (int i = 0; i < len_; ++i) {
      ids_[static_cast<size_t>(i)] = patient_ids[static_cast<size_t>(i)];
      std::copy(keys.row(i), keys.row(i) + dim_, keys_.begin() + static_cast<size_t>(i) * dim_);
    }
    total_enqueued_ = total_enqueued;
  }

 private:
  int phys(int logical) const { return (head_ + logical) % phys_cap(); }
  int phys_cap() const { return static_cast<int>(ids_.size()); }

  void reserve(int need) {
    if (need <= phys_cap()) return;
    const int new_cap = std::max(need, phys_cap() * 2);
    std::vector<int64_t> nids(static_cast<size_t>(new_cap), 0);
    std::vector<T> nkeys(static_cast<size_t>(new_cap) * dim_, T(0));
    for (int i = 0; i < len_; ++i) {
      nids[static_cast<size_t>(i)] = id_at(i);
      std::copy(key_at(i), key_at(i) + dim_, nkeys.begin() + static_cast<size_t>(i) * dim_);
    }
    ids_ = std::move(nids);
    keys_ = std::move(nkeys);
    head_ = 0;
  }

  int capacity_ = 0;
  int dim_ = 0;
  int head_ = 0;
  int len_ = 0;
  int64_t total_enqueued_ = 0;
  std::vector<int64_t> ids_;
  std::vector<T> keys_;
};

// ---------------------------------------------------------------------------
// Multi-positive contrastive loss over the queue:
//   2*tau * mean_i mean_{k+ in P_i} -log( exp(q_i.k+/tau) / sum_Q exp(q_i.k/tau) )
// The denominator runs over every queue entry; logits are stabilized by the
// per-query max. Intermediate sums are carried in double regardless of T.
// ---------------------------------------------------------------------------

template <typename T>
double pcl_loss(const Matrix<T>& queries, const std::vector<int64_t>& patient_ids,
                const PatientMemoryQueue<T>& queue, double tau,
                std::type_identity_t<Matrix<T>>* dq, bool allow_missing_positives = false) {
  const int b = queries.rows;
  const int k_dim = queries.cols;
  const int m = queue.size();
  require(b >= 1 && static_cast<int>(patient_ids.size()) == b, Err::ShapeMismatch,
          "queries/patient_ids size mismatch");
  require(queue.dim() == k_dim, Err::ShapeMismatch, "query dim does not match queue dim");
  require(tau > 0.0, Err::BadConfig, "tau must be positive");

  if (dq) {
    dq->resize(b, k_dim);
    dq->zero();
  }

  std::vector<double> logits(static_cast<size_t>(m));
  std::vector<double> probs(static_cast<size_t>(m));
  double loss_sum = 0.0;
  int counted = 0;

  for (int i = 0; i < b; ++i) {
    const T* q = queries.row(i);
    double max_logit = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < m; ++j) {
      const T* key = queue.key_at(j);
      double dot = 0.0;
      for (int c = 0; c < k_dim; ++c) dot += static_cast<double>(q[c]) * key[c];
      logits[static_cast<size_t>(j)] = dot / tau;
      max_logit = std::max(max_logit, logits[static_cast<size_t>(j)]);
    }
    auto positives = queue.positives_for(patient_ids[static_cast<size_t>(i)]);
    if (positives.empty()) {
      require(allow_missing_positives, Err::NoPositive,
              "patient " + std::to_string(patient_ids[static_cast<size_t>(i)]) +
                  " has no key in the queue");
      continue;
    }
    ++counted;

    double denom = 0.0;
    for (int j = 0; j < m; ++j) {
      probs[static_cast<size_t>(j)] = std::exp(logits[static_cast<size_t>(j)] - max_logit);
      denom += probs[static_cast<size_t>(j)];
    }
    const double lse = std::log(denom) + max_logit;

    double pos_term = 0.0;
    for (int j : positives) pos_term += logits[static_cast<size_t>(j)];
    const double inv_p = 1.0 / static_cast<double>(positives.size());
    loss_sum += lse - inv_p * pos_term;

    if (dq) {
      // dL/dq_i = (2/B) * (sum_j p_ij k_j - mean_{j in P_i} k_j); the 1/B
      // factor is applied after the loop once `counted` is known.
      std::vector<double> row(static_cast<size_t>(k_dim), 0.0);
      for (int j = 0; j < m; ++j) {
        const double p = probs[static_cast<size_t>(j)] / denom;
        const T* key = queue.key_at(j);
        for (int c = 0; c < k_dim; ++c) row[static_cast<size_t>(c)] += p * key[c];
      }
      for (int j : positives) {
        const T* key = queue.key_at(j);
        for (int c = 0; c < k_dim; ++c) row[static_cast<size_t>(c)] -= inv_p * key[c];
      }
      T* dqr = dq->row(i);
      for (int c = 0; c < k_dim; ++c) dqr[c] = static_cast<T>(row[static_cast<size_t>(c)]);
    }
  }

  if (counted == 0) return 0.0;
  const double scale = 2.0 * tau / static_cast<double>(counted);
  if (dq) {
    const double gscale = 2.0 / static_cast<double>(counted);
    for (T& g : dq->v) g = static_cast<T>(static_cast<double>(g) * gscale);
  }
  return scale * loss_sum;
}

// Eq.-style moving average of the momentum-paired parameters (everything
// except the prediction head): theta_k <- m*theta_k + (1-m)*theta_q.
template <typename T>
void momentum_update(model::Branch<T>& query, model::Branch<T>& key, double m) {
  require(m >= 0.0 && m <= 1.0, Err::BadConfig, "momentum must be in [0,1]");
  if (m == 1.0) return;  // exact fixed point

  std::vector<std::vector<T>*> qp, kp;
  query.visit_momentum("q", [&](const std::string&, std::vector<T>& w, std::vector<T>&) {
    qp.push_back(&w);
  });
  key.visit_momentum("k", [&](const std::string&, std::vector<T>& w, std::vector<T>&) {
    kp.push_back(&w);
  });
  require(qp.size() == kp.size(), Err::ShapeMismatch, "branch structures differ");
  for (size_t t = 0; t < qp.size(); ++t) {
    require(qp[t]->size() == kp[t]->size(), Err::ShapeMismatch, "parameter tensor sizes differ");
    std::vector<T>& wq = *qp[t];
    std::vector<T>& wk = *kp[t];
    if (m == 0.0) {
      wk = wq;  // bit-exact hard copy
      continue;
    }
    for (size_t i = 0; i < wq.size(); ++i) {
      wk[i] = static_cast<T>(m * static_cast<double>(wk[i]) + (1.0 - m) * static_cast<double>(wq[i]));
    }
  }
}

// ---------------------------------------------------------------------------
// One pretraining step.
// ---------------------------------------------------------------------------

template <typename T>
struct PmqState {
  model::Branch<T> query;
  model::Branch<T> key;
  PatientMemoryQueue<T> queue;
  optim::AdamW<T> opt;
  int64_t step = 0;

  // Transform plan reused across steps of equal view length.
  std::unique_ptr<fft::RealFft> plan;

  PmqState(const model::EncoderConfig& cfg, const PclConfig& pcfg, uint64_t seed)
      : queue(pcfg.enable_queue ? pcfg.queue_size : 1, cfg.output_dim) {
    auto branches = model::init_branches<T>(cfg, seed);
    query = std::move(branches.first);
    key = std::move(branches.second);
    opt.attach(query, "query");
  }

  const fft::RealFft& plan_for(int len) {
    if (!plan || plan->n() != len) plan = std::make_unique<fft::RealFft>(len);
    return *plan;
  }
};

// Runs augment -> query path (encode/project/predict/normalize) -> key path
// without gradients -> enqueue -> loss -> backprop through the query branch
// only -> optimizer step -> momentum update -> dequeue down to capacity.
template <typename T>
double step_contrast(const data::Batch& batch, PmqState<T>& st, const aug::MaskConfig& mcfg,
                     const PclConfig& pcfg, double lr, uint64_t step_seed) {
  const int b = batch.size();
  require(b >= 1, Err::ShapeMismatch, "empty batch");
  const model::EncoderConfig& cfg = st.query.enc.cfg;
  const int k_dim = cfg.output_dim;

  // Build the two augmented views per sample with per-view rng streams.
  std::vector<Matrix<T>> qviews(static_cast<size_t>(b)), kviews(static_cast<size_t>(b));
  std::vector<aug::MaskRealization> qmasks(static_cast<size_t>(b)), kmasks(static_cast<size_t>(b));
  int view_len = 0;
  for (int i = 0; i < b; ++i) {
    Matrix<T> values = cast_matrix<T>(batch.values[static_cast<size_t>(i)]);
    Rng vr(derive_seed(step_seed, static_cast<uint64_t>(i), 0));
    auto vp = aug::sample_neighbor_views(values, batch.patient_ids[static_cast<size_t>(i)],
                                         mcfg.enable_neighbor, vr);
    view_len = vp.query_view.rows;
    Rng qr(derive_seed(step_seed, static_cast<uint64_t>(i), 1));
    Rng kr(derive_seed(step_seed, static_cast<uint64_t>(i), 2));
    qmasks[static_cast<size_t>(i)] = aug::draw_masks(mcfg, view_len, cfg.hidden_dim, qr);
    kmasks[static_cast<size_t>(i)] = aug::draw_masks(mcfg, view_len, cfg.hidden_dim, kr);
    qviews[static_cast<size_t>(i)] = std::move(vp.query_view);
    kviews[static_cast<size_t>(i)] = std::move(vp.key_view);
  }
  const fft::RealFft* plan = mcfg.enable_freq_mask ? &st.plan_for(view_len) : nullptr;

  // Query path with caches for backward.
  std::vector<model::EncCache<T>> enc_caches(static_cast<size_t>(b));
  Matrix<T> zq(b, k_dim);
  std::vector<T> zrow;
  for (int i = 0; i < b; ++i) {
    model::encode_forward(st.query.enc, qviews[static_cast<size_t>(i)],
                          &qmasks[static_cast<size_t>(i)], plan,
                          &enc_caches[static_cast<size_t>(i)], zrow);
    std::copy(zrow.begin(), zrow.end(), zq.row(i));
  }
  model::MlpCache<T> proj_cache, pred_cache;
  Matrix<T> pq, hq;
  model::mlp_forward(st.query.proj, zq, true, &proj_cache, pq);
  model::mlp_forward(st.query.pred, pq, true, &pred_cache, hq);
  Matrix<T> q;
  std::vector<double> qnorms;
  l2_normalize_rows(hq, q, &qnorms);

  // Key path, gradient-free.
  Matrix<T> zk(b, k_dim);
  for (int i = 0; i < b; ++i) {
    model::encode_forward(st.key.enc, kviews[static_cast<size_t>(i)],
                          &kmasks[static_cast<size_t>(i)], plan,
                          static_cast<model::EncCache<T>*>(nullptr), zrow);
    std::copy(zrow.begin(), zrow.end(), zk.row(i));
  }
  Matrix<T> pk, keys;
  model::mlp_forward(st.key.proj, zk, true, static_cast<model::MlpCache<T>*>(nullptr), pk);
  l2_normalize_rows(pk, keys, nullptr);

  // Loss over the queue (with the fresh keys folded in) or over the batch
  // keys alone when the queue is ablated.
  double loss = 0.0;
  Matrix<T> dq;
  if (!pcfg.enable_queue) {
    PatientMemoryQueue<T> batch_queue(b, k_dim);
    batch_queue.enqueue(batch.patient_ids, keys);
    loss = pcl_loss(q, batch.patient_ids, batch_queue, pcfg.tau, &dq);
  } else if (pcfg.separate_batch_term) {
    PatientMemoryQueue<T> batch_queue(b, k_dim);
    batch_queue.enqueue(batch.patient_ids, keys);
    loss = pcl_loss(q, batch.patient_ids, batch_queue, pcfg.tau, &dq);
    if (st.queue.size() > 0) {
      Matrix<T> dq2;
      loss += pcl_loss(q, batch.patient_ids, st.queue, pcfg.tau, &dq2,
                       /*allow_missing_positives=*/true);
      for (size_t i = 0; i < dq.v.size(); ++i) dq.v[i] += dq2.v[i];
    }
    st.queue.enqueue(batch.patient_ids, keys);
  } else {
    st.queue.enqueue(batch.patient_ids, keys);
    loss = pcl_loss(q, batch.patient_ids, st.queue, pcfg.tau, &dq);
  }

  // Backward through the query branch only.
  st.query.zero_grads();
  Matrix<T> dhq, dpq, dzq;
  l2_normalize_rows_backward(q, qnorms, dq, dhq);
  model::mlp_backward(st.query.pred, pred_cache, dhq, &dpq);
  model::mlp_backward(st.query.proj, proj_cache, dpq, &dzq);
  std::vector<T> drow(static_cast<size_t>(k_dim));
  for (int i = 0; i < b; ++i) {
    std::copy(dzq.row(i), dzq.row(i) + k_dim, drow.begin());
    model::encode_backward(st.query.enc, enc_caches[static_cast<size_t>(i)], plan, drow);
  }

  st.opt.step(lr);
  momentum_update(st.query, st.key, pcfg.momentum_m);

  if (pcfg.enable_queue && st.queue.size() > st.queue.capacity()) {
    st.queue.dequeue(st.queue.size() - st.queue.capacity());
  }
  ++st.step;
  return loss;
}

}  // namespace pmq::pcl
