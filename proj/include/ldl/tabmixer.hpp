#ifndef LDL_TABMIXER_HPP
#define LDL_TABMIXER_HPP

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ldl/augment.hpp"
#include "ldl/dataset.hpp"
#include "ldl/errors.hpp"
#include "ldl/rng.hpp"
#include "ldl/tape.hpp"
#include "ldl/tensor.hpp"

namespace ldl {

/// One LMResidual block: a 3x3 local-attention convolution gating a
/// token-mixing perceptron, y = LA(x) * MLP(LayerNorm(x) + x).
struct LmResidualParams {
  Tensor conv_kernel;  // [3 x 3]
  Tensor conv_bias;    // [1]
  Tensor ln_gain;      // [n]
  Tensor ln_bias;      // [n]
  Tensor mlp_w1, mlp_b1;  // n -> hidden
  Tensor mlp_w2, mlp_b2;  // hidden -> n
  bool mix_columns = false;  // true: perceptron runs along columns (tokens)

  static LmResidualParams init(std::size_t n, std::size_t hidden,
                               bool mix_columns, Rng& rng) {
    LmResidualParams p;
    p.conv_kernel = Tensor::uniform({3, 3}, 1.0 / 3.0, rng);
    p.conv_bias = Tensor::zeros({1});
    p.ln_gain = Tensor::full({n}, 1.0);
    p.ln_bias = Tensor::zeros({n});
    p.mlp_w1 = Tensor::uniform({n, hidden}, 1.0 / std::sqrt(double(n)), rng);
    p.mlp_b1 = Tensor::zeros({hidden});
    p.mlp_w2 =
        Tensor::uniform({hidden, n}, 1.0 / std::sqrt(double(hidden)), rng);
    p.mlp_b2 = Tensor::zeros({n});
    p.mix_columns = mix_columns;
    return p;
  }
};

struct SqueezeParams {
  Tensor w;  // [n x c]
  Tensor b;  // [c]

  static SqueezeParams init(std::size_t n, std::size_t c, Rng& rng) {
    SqueezeParams p;
    p.w = Tensor::uniform({n, c}, 1.0 / std::sqrt(double(n)), rng);
    p.b = Tensor::zeros({c});
    return p;
  }
};

/// Full parameter set of the network: variance Learner, attention gate,
/// the LMResidual stack and the squeeze head. Blocks alternate their
/// mixing axis, even index -> columns (tokens), odd -> rows.
struct TabMixerModel {
  std::size_t n = 0;  // feature count == augmented matrix side
  std::size_t c = 0;  // label count
  LearnerParams learner;
  GateParams gate;
  std::vector<LmResidualParams> blocks;
  SqueezeParams squeeze;

  static constexpr std::size_t kLearnerTensors = 6;

  static TabMixerModel init(std::size_t n, std::size_t c,
                            std::uint64_t seed, std::size_t block_count = 12,
                            std::size_t hidden = 512,
                            std::size_t learner_hidden = 64) {
    if (n == 0 || c == 0) throw config_error("model dims must be positive");
    if (block_count == 0) throw config_error("need at least one block");
    Rng rng(derive_seed(seed, 0x1417));
    TabMixerModel m;
    m.n = n;
    m.c = c;
    m.learner = LearnerParams::init(n, learner_hidden, rng);
    m.gate = GateParams::init(n, rng);
    m.blocks.reserve(block_count);
    for (std::size_t i = 0; i < block_count; ++i)
      m.blocks.push_back(LmResidualParams::init(n, hidden, i % 2 == 0, rng));
    m.squeeze = SqueezeParams::init(n, c, rng);
    return m;
  }

  /// Every parameter tensor in checkpoint order. The first
  /// kLearnerTensors entries belong to the Learner.
  std::vector<Tensor*> parameters() {
    std::vector<Tensor*> out = {&learner.w1, &learner.b1, &learner.w2,
                                &learner.b2, &learner.w3, &learner.b3,
                                &gate.w,     &gate.b};
    for (LmResidualParams& blk : blocks) {
      out.push_back(&blk.conv_kernel);
      out.push_back(&blk.conv_bias);
      out.push_back(&blk.ln_gain);
      out.push_back(&blk.ln_bias);
      out.push_back(&blk.mlp_w1);
      out.push_back(&blk.mlp_b1);
      out.push_back(&blk.mlp_w2);
      out.push_back(&blk.mlp_b2);
    }
    out.push_back(&squeeze.w);
    out.push_back(&squeeze.b);
    return out;
  }

  std::vector<std::string> parameter_names() const {
    std::vector<std::string> out = {"learner.w1", "learner.b1", "learner.w2",
                                    "learner.b2", "learner.w3", "learner.b3",
                                    "gate.w",     "gate.b"};
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      const std::string p = "block." + std::to_string(i) + ".";
      for (const char* f : {"conv_kernel", "conv_bias", "ln_gain", "ln_bias",
                            "mlp_w1", "mlp_b1", "mlp_w2", "mlp_b2"})
        out.push_back(p + f);
    }
    out.push_back("squeeze.w");
    out.push_back("squeeze.b");
    return out;
  }
};

struct BoundBlock {
  NodeId conv_kernel, conv_bias, ln_gain, ln_bias;
  NodeId mlp_w1, mlp_b1, mlp_w2, mlp_b2;
  bool mix_columns;

  static BoundBlock bind(Tape& tape, const LmResidualParams& p) {
    return {tape.leaf(p.conv_kernel, true), tape.leaf(p.conv_bias, true),
            tape.leaf(p.ln_gain, true),     tape.leaf(p.ln_bias, true),
            tape.leaf(p.mlp_w1, true),      tape.leaf(p.mlp_b1, true),
            tape.leaf(p.mlp_w2, true),      tape.leaf(p.mlp_b2, true),
            p.mix_columns};
  }
};

/// Leaf ids of every model tensor on one tape, in parameters() order.
struct BoundModel {
  BoundLearner learner;
  BoundGate gate;
  std::vector<BoundBlock> blocks;
  NodeId squeeze_w, squeeze_b;
  std::size_t n, c;

  static BoundModel bind(Tape& tape, const TabMixerModel& m) {
    BoundModel b{BoundLearner::bind(tape, m.learner),
                 BoundGate::bind(tape, m.gate),
                 {},
                 0,
                 0,
                 m.n,
                 m.c};
    b.blocks.reserve(m.blocks.size());
    for (const LmResidualParams& blk : m.blocks)
      b.blocks.push_back(BoundBlock::bind(tape, blk));
    b.squeeze_w = tape.leaf(m.squeeze.w, true);
    b.squeeze_b = tape.leaf(m.squeeze.b, true);
    return b;
  }

  /// Assemble from pre-created leaves in parameters() order; lets a
  /// caller substitute individual parameter nodes (gradient checks).
  static BoundModel from_nodes(const TabMixerModel& m,
                               const std::vector<NodeId>& ids) {
    const std::size_t expected = TabMixerModel::kLearnerTensors + 2 +
                                 m.blocks.size() * 8 + 2;
    if (ids.size() != expected)
      throw dim_error("from_nodes: expected " + std::to_string(expected) +
                      " node ids");
    BoundModel b{{ids[0], ids[1], ids[2], ids[3], ids[4], ids[5]},
                 {ids[6], ids[7]},
                 {},
                 0,
                 0,
                 m.n,
                 m.c};
    std::size_t at = 8;
    b.blocks.reserve(m.blocks.size());
    for (const LmResidualParams& blk : m.blocks) {
      b.blocks.push_back({ids[at], ids[at + 1], ids[at + 2], ids[at + 3],
                          ids[at + 4], ids[at + 5], ids[at + 6], ids[at + 7],
                          blk.mix_columns});
      at += 8;
    }
    b.squeeze_w = ids[at];
    b.squeeze_b = ids[at + 1];
    return b;
  }

  /// Node ids aligned with TabMixerModel::parameters().
  std::vector<NodeId> parameter_nodes() const {
    std::vector<NodeId> out = {learner.w1, learner.b1, learner.w2, learner.b2,
                               learner.w3, learner.b3, gate.w,     gate.b};
    for (const BoundBlock& blk : blocks) {
      out.push_back(blk.conv_kernel);
      out.push_back(blk.conv_bias);
      out.push_back(blk.ln_gain);
      out.push_back(blk.ln_bias);
      out.push_back(blk.mlp_w1);
      out.push_back(blk.mlp_b1);
      out.push_back(blk.mlp_w2);
      out.push_back(blk.mlp_b2);
    }
    out.push_back(squeeze_w);
    out.push_back(squeeze_b);
    return out;
  }
};

/// Local attention: relu over a biased 3x3 convolution of the map.
inline NodeId la_block(Tape& tape, const BoundBlock& p, NodeId x) {
  return tape.elementwise(tape.conv2d_3x3(x, p.conv_kernel, p.conv_bias),
                          Activation::relu);
}

/// y = LA(x) * MLP(LayerNorm(x) + x), elementwise product, shape kept.
/// The perceptron (and the layer norm feeding it) run along the block's
/// mixing axis; column blocks transpose in and out.
inline NodeId lm_residual(Tape& tape, const BoundBlock& p, NodeId x) {
  NodeId z = p.mix_columns ? tape.transpose_last2(x) : x;
  NodeId res = tape.add(tape.layer_norm(z, p.ln_gain, p.ln_bias), z);
  NodeId h = tape.linear(res, p.mlp_w1, p.mlp_b1, Activation::relu);
  NodeId mlp = tape.linear(h, p.mlp_w2, p.mlp_b2, Activation::identity);
  if (p.mix_columns) mlp = tape.transpose_last2(mlp);
  return tape.hadamard(la_block(tape, p, x), mlp);
}

/// Blocks in order, column-mean squeeze, linear head, softmax.
/// g_star: [B x n x n] -> [B x c] rows summing to 1.
inline NodeId tabmixer_forward(Tape& tape, const BoundModel& m, NodeId g_star) {
  NodeId x = g_star;
  const Shape want = tape.value(g_star).shape();
  for (const BoundBlock& blk : m.blocks) {
    x = lm_residual(tape, blk, x);
    if (tape.value(x).shape() != want)
      throw contract_error("block stack changed the map shape");
  }
  NodeId pooled = tape.mean_columns(x);
  NodeId logits =
      tape.linear(pooled, m.squeeze_w, m.squeeze_b, Activation::identity);
  return tape.softmax_rows(logits);
}

enum class PredictMode { augmented, tiled };

/// Full pipeline on an already-bound model. v: [B x n].
/// augmented: Learner -> Gaussian expansion -> gate -> mixer;
/// tiled: deterministic row copies -> gate -> mixer (pre-training path).
inline NodeId predict_node(Tape& tape, const BoundModel& m, NodeId v,
                           PredictMode mode, NoiseSource* noise) {
  const Tensor& vv = tape.value(v);
  if (vv.cols() != m.n)
    throw dim_error("predict: sample width " + std::to_string(vv.cols()) +
                    " != model n " + std::to_string(m.n));
  NodeId g;
  if (mode == PredictMode::augmented) {
    if (noise == nullptr)
      throw contract_error("predict: augmented mode needs a noise source");
    NodeId sigma = learner_forward(tape, m.learner, v);
    g = gaussian_augment(tape, v, sigma, *noise);
  } else {
    g = tile_sample(tape, v, m.n);
  }
  return tabmixer_forward(tape, m, horizontal_attention(tape, m.gate, g));
}

/// Single-sample convenience: returns the predicted distribution.
inline Tensor predict(const TabMixerModel& model, const Tensor& v,
                      PredictMode mode, NoiseSource* noise = nullptr) {
  Tape tape;
  BoundModel bound = BoundModel::bind(tape, model);
  NodeId vx = tape.leaf(v.reshaped({1, v.numel()}));
  NodeId out = predict_node(tape, bound, vx, mode, noise);
  return tape.value(out).reshaped({model.c});
}

// ---- checkpoints ------------------------------------------------------

namespace detail {

inline void write_u32_le(std::ostream& out, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.write(b, 4);
}

inline void write_u64_le(std::ostream& out, std::uint64_t v) {
  char b[8];
  std::memcpy(b, &v, 8);
  out.write(b, 8);
}

inline std::uint32_t read_u32_le(std::istream& in, const std::string& path) {
  std::uint32_t v;
  char b[4];
  if (!in.read(b, 4)) throw parse_error(path + ": truncated checkpoint");
  std::memcpy(&v, b, 4);
  return v;
}

inline std::uint64_t read_u64_le(std::istream& in, const std::string& path) {
  std::uint64_t v;
  char b[8];
  if (!in.read(b, 8)) throw parse_error(path + ": truncated checkpoint");
  std::memcpy(&v, b, 8);
  return v;
}

inline void write_record(std::ostream& out, const std::string& name,
                         const Tensor& t) {
  write_u32_le(out, static_cast<std::uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_u32_le(out, static_cast<std::uint32_t>(t.ndim()));
  for (std::size_t e : t.shape()) write_u64_le(out, e);
  out.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * sizeof(double)));
}

}  // namespace detail

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// TBMX flat binary: magic "TBMX", u32 version, then little-endian
/// (name, shape, f64 payload) records in parameters() order, followed by
/// optional scaler records.
inline void save_checkpoint(TabMixerModel& model, const std::string& path,
                            const Scaler* scaler = nullptr) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw error("cannot write " + path);
  out.write("TBMX", 4);
  detail::write_u32_le(out, kCheckpointVersion);
  const std::vector<Tensor*> params = model.parameters();
  const std::vector<std::string> names = model.parameter_names();
  detail::write_u32_le(
      out, static_cast<std::uint32_t>(params.size() + (scaler ? 2 : 0)));
  for (std::size_t i = 0; i < params.size(); ++i)
    detail::write_record(out, names[i], *params[i]);
  if (scaler) {
    detail::write_record(out, "scaler.mean",
                         Tensor::from_vector(scaler->mean));
    detail::write_record(out, "scaler.std", Tensor::from_vector(scaler->std));
  }
}

struct Checkpoint {
  TabMixerModel model;
  std::optional<Scaler> scaler;
};

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw parse_error("cannot open " + path);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "TBMX", 4) != 0)
    throw parse_error(path + ": not a TBMX checkpoint");
  if (detail::read_u32_le(in, path) != kCheckpointVersion)
    throw parse_error(path + ": unsupported checkpoint version");
  const std::uint32_t count = detail::read_u32_le(in, path);
  std::map<std::string, Tensor> records;
  for (std::uint32_t r = 0; r < count; ++r) {
    const std::uint32_t name_len = detail::read_u32_le(in, path);
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len))
      throw parse_error(path + ": truncated checkpoint");
    const std::uint32_t ndim = detail::read_u32_le(in, path);
    if (ndim == 0 || ndim > 4)
      throw parse_error(path + ": bad tensor rank for " + name);
    Shape shape(ndim);
    for (std::uint32_t i = 0; i < ndim; ++i)
      shape[i] = detail::read_u64_le(in, path);
    Tensor t(shape);
    if (!in.read(reinterpret_cast<char*>(t.data()),
                 static_cast<std::streamsize>(t.numel() * sizeof(double))))
      throw parse_error(path + ": truncated checkpoint");
    records.emplace(name, std::move(t));
  }

  const auto need = [&](const std::string& name) -> Tensor& {
    auto it = records.find(name);
    if (it == records.end())
      throw parse_error(path + ": missing record " + name);
    return it->second;
  };

  const std::size_t n = need("learner.w1").extent(0);
  const std::size_t c = need("squeeze.w").extent(1);
  const std::size_t learner_hidden = need("learner.w1").extent(1);
  const std::size_t hidden = need("block.0.mlp_w1").extent(1);
  std::size_t block_count = 0;
  while (records.count("block." + std::to_string(block_count) + ".mlp_w1"))
    ++block_count;

  Checkpoint ck;
  ck.model = TabMixerModel::init(n, c, 0, block_count, hidden, learner_hidden);
  const std::vector<Tensor*> params = ck.model.parameters();
  const std::vector<std::string> names = ck.model.parameter_names();
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& rec = need(names[i]);
    if (rec.shape() != params[i]->shape())
      throw parse_error(path + ": shape mismatch for " + names[i]);
    *params[i] = std::move(rec);
  }
  if (records.count("scaler.mean")) {
    Scaler s;
    const Tensor& mean = need("scaler.mean");
    const Tensor& sd = need("scaler.std");
    s.mean.assign(mean.data(), mean.data() + mean.numel());
    s.std.assign(sd.data(), sd.data() + sd.numel());
    ck.scaler = std::move(s);
  }
  return ck;
}

}  // namespace ldl

#endif  // LDL_TABMIXER_HPP
