#ifndef LDL_AUGMENT_HPP
#define LDL_AUGMENT_HPP

#include <cmath>
#include <cstddef>
#include <utility>

#include "ldl/rng.hpp"
#include "ldl/tape.hpp"
#include "ldl/tensor.hpp"

namespace ldl {

/// The variance sub-network: three linear layers n -> h -> h -> n with
/// relu between them and a final sigmoid, so each feature gets a
/// standard deviation in (0, 1).
struct LearnerParams {
  Tensor w1, b1;  // n -> h
  Tensor w2, b2;  // h -> h
  Tensor w3, b3;  // h -> n

  static LearnerParams init(std::size_t n, std::size_t hidden, Rng& rng) {
    LearnerParams p;
    p.w1 = Tensor::uniform({n, hidden}, 1.0 / std::sqrt(double(n)), rng);
    p.b1 = Tensor::zeros({hidden});
    p.w2 = Tensor::uniform({hidden, hidden}, 1.0 / std::sqrt(double(hidden)), rng);
    p.b2 = Tensor::zeros({hidden});
    p.w3 = Tensor::uniform({hidden, n}, 1.0 / std::sqrt(double(hidden)), rng);
    p.b3 = Tensor::zeros({n});
    return p;
  }
};

/// Shared row-wise linear map used by the horizontal attention gate.
struct GateParams {
  Tensor w;  // [n x n]
  Tensor b;  // [n]

  static GateParams init(std::size_t n, Rng& rng) {
    GateParams p;
    p.w = Tensor::uniform({n, n}, 1.0 / std::sqrt(double(n)), rng);
    p.b = Tensor::zeros({n});
    return p;
  }
};

struct BoundLearner {
  NodeId w1, b1, w2, b2, w3, b3;

  static BoundLearner bind(Tape& tape, const LearnerParams& p) {
    return {tape.leaf(p.w1, true), tape.leaf(p.b1, true),
            tape.leaf(p.w2, true), tape.leaf(p.b2, true),
            tape.leaf(p.w3, true), tape.leaf(p.b3, true)};
  }
};

struct BoundGate {
  NodeId w, b;

  static BoundGate bind(Tape& tape, const GateParams& p) {
    return {tape.leaf(p.w, true), tape.leaf(p.b, true)};
  }
};

/// sigma = sigmoid(W3 relu(W2 relu(W1 v + b1) + b2) + b3), one standard
/// deviation per input feature. v: [B x n].
inline NodeId learner_forward(Tape& tape, const BoundLearner& p, NodeId v) {
  NodeId h1 = tape.linear(v, p.w1, p.b1, Activation::relu);
  NodeId h2 = tape.linear(h1, p.w2, p.b2, Activation::relu);
  return tape.linear(h2, p.w3, p.b3, Activation::sigmoid);
}

/// Reparameterized expansion G[b,j,i] = v[b,i] + sigma[b,i] * eps[b,j,i]
/// with eps drawn from the noise source in sample-major order. Column i
/// of each slice holds n draws from N(v_i, sigma_i^2); gradients reach
/// both v and sigma.
inline NodeId gaussian_augment(Tape& tape, NodeId v, NodeId sigma,
                               NoiseSource& noise) {
  const Tensor& vv = tape.value(v);
  check_same_shape(vv, tape.value(sigma), "gaussian_augment");
  const std::size_t n = vv.cols();
  Shape eps_shape = vv.shape();
  eps_shape.insert(eps_shape.end() - 1, n);
  Tensor eps(eps_shape);
  for (std::size_t i = 0; i < eps.numel(); ++i) eps[i] = noise.normal();
  NodeId eps_leaf = tape.leaf(std::move(eps), false);
  NodeId spread = tape.hadamard(tape.broadcast_rows(sigma, n), eps_leaf);
  return tape.add(tape.broadcast_rows(v, n), spread);
}

/// Deterministic stand-in for the augmentation: every row a copy of the
/// sample. Equals gaussian_augment with sigma = 0.
inline NodeId tile_sample(Tape& tape, NodeId v, std::size_t rows) {
  return tape.broadcast_rows(v, rows);
}

/// Row-wise gate A = linear(sigmoid(g)), output A * g elementwise.
inline NodeId horizontal_attention(Tape& tape, const BoundGate& p, NodeId g) {
  NodeId a = tape.linear(tape.elementwise(g, Activation::sigmoid), p.w, p.b,
                         Activation::identity);
  return tape.hadamard(a, g);
}

// ---- single-sample value wrappers ----------------------------------------

inline Tensor learner_forward(const Tensor& v, const LearnerParams& p) {
  Tape tape;
  NodeId vx = tape.leaf(v.reshaped({1, v.numel()}));
  NodeId out = learner_forward(tape, BoundLearner::bind(tape, p), vx);
  return tape.value(out).reshaped({v.numel()});
}

inline Tensor gaussian_augment(const Tensor& v, const Tensor& sigma,
                               NoiseSource& noise) {
  Tape tape;
  const std::size_t n = v.numel();
  NodeId vx = tape.leaf(v.reshaped({1, n}));
  NodeId sx = tape.leaf(sigma.reshaped({1, n}));
  NodeId g = gaussian_augment(tape, vx, sx, noise);
  return tape.value(g).reshaped({n, n});
}

inline Tensor tile_sample(const Tensor& v) {
  const std::size_t n = v.numel();
  Tensor out({n, n});
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t i = 0; i < n; ++i) out(j, i) = v[i];
  return out;
}

inline Tensor horizontal_attention(const Tensor& g, const GateParams& p) {
  Tape tape;
  const std::size_t n = g.extent(0);
  NodeId gx = tape.leaf(g.reshaped({1, n, n}));
  NodeId out = horizontal_attention(tape, BoundGate::bind(tape, p), gx);
  return tape.value(out).reshaped({n, n});
}

}  // namespace ldl

#endif  // LDL_AUGMENT_HPP
