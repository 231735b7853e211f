#ifndef LDL_TRAIN_HPP
#define LDL_TRAIN_HPP

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "ldl/dataset.hpp"
#include "ldl/errors.hpp"
#include "ldl/metrics.hpp"
#include "ldl/rng.hpp"
#include "ldl/tabmixer.hpp"
#include "ldl/tape.hpp"
#include "ldl/tensor.hpp"

namespace ldl {

struct LossConfig {
  double alpha = 1.0;
  double beta = 0.5;

  void validate() const {
    if (alpha < 0.0 || beta < 0.0 || (alpha == 0.0 && beta == 0.0))
      throw config_error("loss weights must be >= 0 and not both 0");
  }
};

/// alpha * sum|p - t| + beta * sum t ln(t/p); 0 ln 0 := 0.
inline double combined_loss(std::span<const double> pred,
                            std::span<const double> target,
                            const LossConfig& cfg = {}) {
  cfg.validate();
  check_pair(pred, target, "combined_loss");
  double l1 = 0.0, kl = 0.0;
  for (std::size_t j = 0; j < pred.size(); ++j) {
    if (!(pred[j] > 0.0))
      throw contract_error("combined_loss: pred must be strictly positive");
    l1 += std::abs(pred[j] - target[j]);
    if (target[j] > 0.0) kl += target[j] * std::log(target[j] / pred[j]);
  }
  return cfg.alpha * l1 + cfg.beta * kl;
}

struct ModelConfig {
  std::size_t blocks = 12;
  std::size_t hidden = 512;
  std::size_t learner_hidden = 64;
};

struct TrainConfig {
  std::size_t batch_size = 1000;
  double learning_rate = 2e-4;
  std::size_t epochs = 500;
  double weight_decay = 0.01;
  std::uint64_t seed = 1024;
  /// Tiled warm-up length; defaults to 10% of epochs.
  std::optional<std::size_t> pretrain_epochs;
  bool with_fa = true;  // false: tiled mode throughout (w/o FA ablation)
  bool with_pt = true;  // false: skip pre-training (w/o PT ablation)
  LossConfig loss;
  ModelConfig model;
  std::size_t threads = 1;  // chunk-parallel workers inside a batch

  std::size_t resolved_pretrain_epochs() const {
    return pretrain_epochs ? *pretrain_epochs : epochs / 10;
  }

  void validate() const {
    if (batch_size < 1) throw config_error("batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw config_error("learning_rate must be > 0");
    if (epochs < 1) throw config_error("epochs must be >= 1");
    if (weight_decay < 0.0) throw config_error("weight_decay must be >= 0");
    loss.validate();
  }
};

// ---- AdamW -----------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// First/second moment accumulators plus the per-parameter step count.
struct AdamState {
  Tensor m;
  Tensor v;
  std::size_t t = 0;

  explicit AdamState(const Shape& shape)
      : m(Tensor::zeros(shape)), v(Tensor::zeros(shape)) {}
};

/// One decoupled-weight-decay Adam update:
///   m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2
///   theta <- theta - lr (m_hat / (sqrt(v_hat) + eps) + wd theta)
inline void adamw_step(Tensor& param, const Tensor& grad, AdamState& state,
                       const AdamConfig& cfg) {
  check_same_shape(param, grad, "adamw_step");
  check_same_shape(param, state.m, "adamw_step");
  ++state.t;
  const double bc1 = 1.0 - std::pow(cfg.beta1, double(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, double(state.t));
  for (std::size_t i = 0; i < param.numel(); ++i) {
    const double g = grad[i];
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    param[i] -= cfg.lr * (m_hat / (std::sqrt(v_hat) + cfg.eps) +
                          cfg.weight_decay * param[i]);
  }
}

/// Optimizer over a fixed parameter list; entries can be masked out so a
/// phase leaves them untouched (no decay either).
class AdamW {
 public:
  AdamW(std::vector<Tensor*> params, AdamConfig cfg)
      : params_(std::move(params)), cfg_(cfg) {
    states_.reserve(params_.size());
    for (Tensor* p : params_) states_.emplace_back(p->shape());
  }

  void step(const std::vector<Tensor>& grads,
            const std::vector<bool>* trainable = nullptr) {
    if (grads.size() != params_.size())
      throw dim_error("adamw: gradient list length mismatch");
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (trainable && !(*trainable)[i]) continue;
      adamw_step(*params_[i], grads[i], states_[i], cfg_);
    }
  }

  const AdamConfig& config() const { return cfg_; }

 private:
  std::vector<Tensor*> params_;
  AdamConfig cfg_;
  std::vector<AdamState> states_;
};

// ---- training loops ---------------------------------------------------

struct TrainResult {
  std::vector<double> pretrain_trace;  // mean loss per tiled warm-up epoch
  std::vector<double> train_trace;     // mean loss per main epoch
};

namespace detail {

struct ChunkGrads {
  std::vector<Tensor> grads;
  double loss_sum = 0.0;
};

/// Forward + backward on one contiguous chunk of the batch; returns the
/// per-parameter gradient sums (unnormalized) and the summed loss.
inline ChunkGrads run_chunk(const TabMixerModel& model, const Tensor& x_chunk,
                            Tensor y_chunk, PredictMode mode,
                            NoiseSource* noise, const LossConfig& loss_cfg) {
  Tape tape;
  BoundModel bound = BoundModel::bind(tape, model);
  NodeId vx = tape.leaf(x_chunk);
  NodeId pred = predict_node(tape, bound, vx, mode, noise);
  NodeId loss = tape.l1_kl_loss(pred, std::move(y_chunk), loss_cfg.alpha,
                                loss_cfg.beta, Reduction::sum);
  tape.backward(loss);
  ChunkGrads out;
  out.loss_sum = tape.value(loss)[0];
  const std::vector<NodeId> nodes = bound.parameter_nodes();
  out.grads.reserve(nodes.size());
  for (NodeId id : nodes) out.grads.push_back(tape.grad(id));
  return out;
}

inline constexpr std::size_t kChunkRows = 64;

}  // namespace detail

/// One optimization phase (tiled or augmented) over shuffled mini-batches.
/// The remainder batch is kept. Chunks inside a batch may run on several
/// threads; gradients are reduced in chunk order so the result does not
/// depend on the thread count.
inline std::vector<double> train_phase(TabMixerModel& model, const Tensor& x,
                                       const Tensor& y, std::size_t epochs,
                                       PredictMode mode, const TrainConfig& cfg,
                                       NoiseSource& noise, AdamW& opt,
                                       const std::vector<bool>* trainable,
                                       std::uint64_t shuffle_tag) {
  const std::size_t m = x.extent(0), n = x.extent(1), c = y.extent(1);
  const std::size_t params_count = model.parameters().size();
  std::vector<double> trace;
  trace.reserve(epochs);
  Rng shuffle_rng(derive_seed(cfg.seed, shuffle_tag, 0x5f1e));
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    for (std::size_t i = m - 1; i > 0; --i) {
      const std::size_t j = shuffle_rng.below(i + 1);
      std::swap(order[i], order[j]);
    }
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < m; start += cfg.batch_size) {
      const std::size_t len = std::min(cfg.batch_size, m - start);

      std::vector<std::pair<std::size_t, std::size_t>> chunks;
      for (std::size_t off = 0; off < len; off += detail::kChunkRows)
        chunks.emplace_back(off, std::min(detail::kChunkRows, len - off));

      std::vector<detail::ChunkGrads> results(chunks.size());
      auto run_one = [&](std::size_t ci) {
        const auto [off, rows] = chunks[ci];
        Tensor xc({rows, n});
        Tensor yc({rows, c});
        for (std::size_t r = 0; r < rows; ++r) {
          const std::size_t src = order[start + off + r];
          for (std::size_t j = 0; j < n; ++j) xc(r, j) = x(src, j);
          for (std::size_t j = 0; j < c; ++j) yc(r, j) = y(src, j);
        }
        NoiseSource chunk_noise = noise.fork_at(off * n * n);
        results[ci] =
            detail::run_chunk(model, xc, std::move(yc), mode,
                              mode == PredictMode::augmented ? &chunk_noise
                                                             : nullptr,
                              cfg.loss);
      };

      if (cfg.threads > 1 && chunks.size() > 1) {
        std::atomic<std::size_t> next{0};
        auto worker = [&] {
          for (std::size_t ci = next.fetch_add(1); ci < chunks.size();
               ci = next.fetch_add(1))
            run_one(ci);
        };
        std::vector<std::thread> pool;
        const std::size_t nthreads = std::min(cfg.threads, chunks.size());
        pool.reserve(nthreads - 1);
        for (std::size_t t = 0; t + 1 < nthreads; ++t)
          pool.emplace_back(worker);
        worker();
        for (std::thread& t : pool) t.join();
      } else {
        for (std::size_t ci = 0; ci < chunks.size(); ++ci) run_one(ci);
      }

      // Fixed-order reduction, then scale to the batch mean.
      std::vector<Tensor> grads = std::move(results[0].grads);
      double batch_loss = results[0].loss_sum;
      for (std::size_t ci = 1; ci < results.size(); ++ci) {
        batch_loss += results[ci].loss_sum;
        for (std::size_t pi = 0; pi < params_count; ++pi) {
          Tensor& dst = grads[pi];
          const Tensor& src = results[ci].grads[pi];
          for (std::size_t k = 0; k < dst.numel(); ++k) dst[k] += src[k];
        }
      }
      const double inv = 1.0 / static_cast<double>(len);
      for (Tensor& g : grads)
        for (std::size_t k = 0; k < g.numel(); ++k) g[k] *= inv;

      opt.step(grads, trainable);
      if (mode == PredictMode::augmented) noise.skip(len * n * n);
      epoch_loss += batch_loss;
    }
    trace.push_back(epoch_loss / static_cast<double>(m));
  }
  return trace;
}

/// Tiled warm-up on deterministic row copies; the Learner stays frozen
/// because that path never reaches it.
inline std::vector<double> pretrain(TabMixerModel& model, const Tensor& x,
                                    const Tensor& y, const TrainConfig& cfg,
                                    NoiseSource& noise, AdamW& opt) {
  if (!cfg.with_pt) return {};
  std::vector<bool> trainable(model.parameters().size(), true);
  for (std::size_t i = 0; i < TabMixerModel::kLearnerTensors; ++i)
    trainable[i] = false;
  return train_phase(model, x, y, cfg.resolved_pretrain_epochs(),
                     PredictMode::tiled, cfg, noise, opt, &trainable, 0x9e);
}

/// Full schedule: optional tiled pre-training, then the main phase in
/// augmented mode (or tiled throughout when with_fa is off). Features
/// must already be scaled for this fold.
inline TrainResult train_model(TabMixerModel& model, const Tensor& x,
                               const Tensor& y, const TrainConfig& cfg,
                               NoiseSource& noise) {
  cfg.validate();
  if (x.ndim() != 2 || y.ndim() != 2 || x.extent(0) != y.extent(0))
    throw dim_error("train_model: want aligned [m x n] and [m x c]");
  AdamW opt(model.parameters(),
            {cfg.learning_rate, 0.9, 0.999, 1e-8, cfg.weight_decay});
  TrainResult result;
  result.pretrain_trace = pretrain(model, x, y, cfg, noise, opt);
  const PredictMode mode =
      cfg.with_fa ? PredictMode::augmented : PredictMode::tiled;
  std::vector<bool> trainable(model.parameters().size(), true);
  if (!cfg.with_fa)
    for (std::size_t i = 0; i < TabMixerModel::kLearnerTensors; ++i)
      trainable[i] = false;
  result.train_trace = train_phase(model, x, y, cfg.epochs, mode, cfg, noise,
                                   opt, &trainable, 0xa7);
  return result;
}

/// Six metrics averaged over the test rows. The noise stream is reset
/// first so repeated evaluations are bit-identical.
inline MetricValues evaluate_model(const TabMixerModel& model, const Tensor& x,
                                   const Tensor& y, NoiseSource& noise,
                                   PredictMode mode) {
  if (x.ndim() != 2 || y.ndim() != 2 || x.extent(0) != y.extent(0))
    throw dim_error("evaluate_model: want aligned [m x n] and [m x c]");
  noise.reset();
  const std::size_t m = x.extent(0), n = x.extent(1), c = y.extent(1);
  MetricValues acc{};
  constexpr std::size_t kEvalChunk = 256;
  for (std::size_t start = 0; start < m; start += kEvalChunk) {
    const std::size_t rows = std::min(kEvalChunk, m - start);
    Tensor xc({rows, n});
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < n; ++j) xc(r, j) = x(start + r, j);
    Tape tape;
    BoundModel bound = BoundModel::bind(tape, model);
    NoiseSource chunk_noise = noise.fork_at(start * n * n);
    NodeId pred = predict_node(
        tape, bound, tape.leaf(std::move(xc)), mode,
        mode == PredictMode::augmented ? &chunk_noise : nullptr);
    const Tensor& pv = tape.value(pred);
    for (std::size_t r = 0; r < rows; ++r) {
      std::span<const double> p(pv.data() + r * c, c);
      std::span<const double> t(y.data() + (start + r) * c, c);
      const MetricValues v = all_metrics(p, t);
      for (std::size_t k = 0; k < kMetricCount; ++k) acc[k] += v[k];
    }
  }
  for (double& v : acc) v /= static_cast<double>(m);
  return acc;
}

// ---- cross-validation -------------------------------------------------

struct CvResult {
  MetricsReport report;  // runs in repeat-major, fold-minor order
  std::size_t k = 0;
  std::size_t repeats = 0;
};

/// Repeated k-fold cross-validation: a fresh model per (repeat, fold),
/// per-fold z-scoring fitted on the training rows only. Folds may run on
/// parallel workers; the aggregation order is fixed, so the report is
/// identical for any worker count.
inline CvResult run_cv(const LdlDataset& data, const TrainConfig& cfg,
                       std::size_t k = 5, std::size_t repeats = 10,
                       std::size_t workers = 1) {
  cfg.validate();
  data.validate(1e-4);
  const FoldPlan plan = kfold_split(data.size(), k, repeats, cfg.seed);
  const std::size_t total = k * repeats;
  std::vector<MetricValues> slots(total);

  auto run_task = [&](std::size_t task) {
    const std::size_t r = task / k, f = task % k;
    const std::vector<std::size_t> train_idx = plan.train_indices(r, f);
    const std::vector<std::size_t>& test_idx = plan.test_indices(r, f);
    const Tensor x_train_raw = take_rows(data.features, train_idx);
    const Scaler scaler = zscore_fit(x_train_raw);
    const Tensor x_train = scaler.apply(x_train_raw);
    const Tensor y_train = take_rows(data.labels, train_idx);
    const Tensor x_test = scaler.apply(take_rows(data.features, test_idx));
    const Tensor y_test = take_rows(data.labels, test_idx);

    TabMixerModel model = TabMixerModel::init(
        data.feature_dim(), data.label_dim(), derive_seed(cfg.seed, r, f, 1),
        cfg.model.blocks, cfg.model.hidden, cfg.model.learner_hidden);
    NoiseSource train_noise(derive_seed(cfg.seed, r, f, 2));
    TrainConfig local = cfg;
    local.threads = workers > 1 ? 1 : cfg.threads;
    train_model(model, x_train, y_train, local, train_noise);

    NoiseSource eval_noise(derive_seed(cfg.seed, r, f, 3));
    slots[task] = evaluate_model(
        model, x_test, y_test, eval_noise,
        cfg.with_fa ? PredictMode::augmented : PredictMode::tiled);
  };

  if (workers > 1 && total > 1) {
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
      for (std::size_t t = next.fetch_add(1); t < total;
           t = next.fetch_add(1))
        run_task(t);
    };
    std::vector<std::thread> pool;
    const std::size_t nthreads = std::min(workers, total);
    pool.reserve(nthreads - 1);
    for (std::size_t t = 0; t + 1 < nthreads; ++t) pool.emplace_back(worker);
    worker();
    for (std::thread& t : pool) t.join();
  } else {
    for (std::size_t t = 0; t < total; ++t) run_task(t);
  }

  CvResult out;
  out.k = k;
  out.repeats = repeats;
  for (const MetricValues& v : slots) out.report.add(v);
  return out;
}

}  // namespace ldl

#endif  // LDL_TRAIN_HPP
