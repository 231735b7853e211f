#ifndef LDL_VERIFY_HPP
#define LDL_VERIFY_HPP

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "ldl/augment.hpp"
#include "ldl/grad_check.hpp"
#include "ldl/metrics.hpp"
#include "ldl/rng.hpp"
#include "ldl/tabmixer.hpp"
#include "ldl/tape.hpp"
#include "ldl/tensor.hpp"
#include "ldl/train.hpp"

namespace ldl {

struct CheckResult {
  std::string name;
  double value = 0.0;  // measured error
  double tol = 0.0;
  bool pass = false;
};

namespace detail {

inline void add_check(std::vector<CheckResult>& out, const std::string& name,
                      double value, double tol) {
  out.push_back({name, value, tol, value < tol});
}

/// Random tensor with entries kept away from 0 so kinked functions
/// (relu, |.|) stay differentiable within the finite-difference step.
inline Tensor away_from_zero(const Shape& shape, Rng& rng) {
  Tensor t(shape);
  for (std::size_t i = 0; i < t.numel(); ++i) {
    double v = rng.uniform(-1.0, 1.0);
    if (std::abs(v) < 0.05) v += v >= 0.0 ? 0.1 : -0.1;
    t[i] = v;
  }
  return t;
}

template <typename BuildFn>
double max_err_over_instances(BuildFn&& make_case, std::size_t instances,
                              std::uint64_t seed) {
  double worst = 0.0;
  for (std::size_t i = 0; i < instances; ++i) {
    Rng rng(derive_seed(seed, i));
    worst = std::max(worst, make_case(rng));
  }
  return worst;
}

}  // namespace detail

/// Finite-difference checks for every tape primitive, 20 random
/// instances each at h = 1e-5.
inline void verify_primitives(std::vector<CheckResult>& out) {
  constexpr double h = 1e-5, tol = 1e-4;
  constexpr std::size_t reps = 20;
  using detail::away_from_zero;

  auto run = [&](const char* name, auto make_case) {
    detail::add_check(out, name,
                      detail::max_err_over_instances(make_case, reps,
                                                     derive_seed(0xc0de, 1)),
                      tol);
  };

  run("grad.matmul.lhs", [&](Rng& rng) {
    Tensor a({3, 4});
    for (std::size_t i = 0; i < a.numel(); ++i) a[i] = rng.uniform(-1, 1);
    Tensor b({4, 5});
    for (std::size_t i = 0; i < b.numel(); ++i) b[i] = rng.uniform(-1, 1);
    return grad_check(
               [&](Tape& t, NodeId p) {
                 return t.sum_all(t.matmul(p, t.leaf(b)));
               },
               a, h, tol)
        .max_rel_err;
  });
  run("grad.matmul.rhs", [&](Rng& rng) {
    Tensor a({3, 4});
    for (std::size_t i = 0; i < a.numel(); ++i) a[i] = rng.uniform(-1, 1);
    Tensor b({4, 5});
    for (std::size_t i = 0; i < b.numel(); ++i) b[i] = rng.uniform(-1, 1);
    return grad_check(
               [&](Tape& t, NodeId p) {
                 return t.sum_all(t.matmul(t.leaf(a), p));
               },
               b, h, tol)
        .max_rel_err;
  });
  run("grad.relu", [&](Rng& rng) {
    Tensor x = away_from_zero({4, 6}, rng);
    return grad_check(
               [&](Tape& t, NodeId p) {
                 return t.sum_all(
                     t.hadamard(t.elementwise(p, Activation::relu), p));
               },
               x, h, tol)
        .max_rel_err;
  });
  run("grad.sigmoid", [&](Rng& rng) {
    Tensor x = Tensor::uniform({4, 6}, 2.0, rng);
    return grad_check(
               [&](Tape& t, NodeId p) {
                 return t.sum_all(
                     t.hadamard(t.elementwise(p, Activation::sigmoid), p));
               },
               x, h, tol)
        .max_rel_err;
  });
  run("grad.softmax_rows", [&](Rng& rng) {
    Tensor x = Tensor::uniform({4, 6}, 2.0, rng);
    Tensor w = Tensor::uniform({4, 6}, 1.0, rng);
    return grad_check(
               [&](Tape& t, NodeId p) {
                 return t.sum_all(t.hadamard(t.softmax_rows(p), t.leaf(w)));
               },
               x, h, tol)
        .max_rel_err;
  });
  run("grad.layer_norm", [&](Rng& rng) {
    Tensor x = Tensor::uniform({4, 6}, 1.5, rng);
    Tensor gain = Tensor::uniform({6}, 1.0, rng);
    Tensor bias = Tensor::uniform({6}, 1.0, rng);
    Tensor w = Tensor::uniform({4, 6}, 1.0, rng);
    double worst = grad_check(
                       [&](Tape& t, NodeId p) {
                         return t.sum_all(t.hadamard(
                             t.layer_norm(p, t.leaf(gain, true),
                                          t.leaf(bias, true)),
                             t.leaf(w)));
                       },
                       x, h, tol)
                       .max_rel_err;
    worst = std::max(
        worst, grad_check(
                   [&](Tape& t, NodeId p) {
                     return t.sum_all(t.hadamard(
                         t.layer_norm(t.leaf(x, true), p, t.leaf(bias, true)),
                         t.leaf(w)));
                   },
                   gain, h, tol)
                   .max_rel_err);
    return std::max(
        worst, grad_check(
                   [&](Tape& t, NodeId p) {
                     return t.sum_all(t.hadamard(
                         t.layer_norm(t.leaf(x, true), t.leaf(gain, true), p),
                         t.leaf(w)));
                   },
                   bias, h, tol)
                   .max_rel_err);
  });
  run("grad.conv2d_3x3", [&](Rng& rng) {
    Tensor x = Tensor::uniform({5, 7}, 1.0, rng);
    Tensor k = Tensor::uniform({3, 3}, 1.0, rng);
    Tensor b = Tensor::uniform({1}, 1.0, rng);
    Tensor w = Tensor::uniform({5, 7}, 1.0, rng);
    auto weighted = [&](Tape& t, NodeId conv) {
      return t.sum_all(t.hadamard(conv, t.leaf(w)));
    };
    double worst =
        grad_check(
            [&](Tape& t, NodeId p) {
              return weighted(
                  t, t.conv2d_3x3(p, t.leaf(k, true), t.leaf(b, true)));
            },
            x, h, tol)
            .max_rel_err;
    worst = std::max(
        worst,
        grad_check(
            [&](Tape& t, NodeId p) {
              return weighted(
                  t, t.conv2d_3x3(t.leaf(x, true), p, t.leaf(b, true)));
            },
            k, h, tol)
            .max_rel_err);
    return std::max(
        worst,
        grad_check(
            [&](Tape& t, NodeId p) {
              return weighted(
                  t, t.conv2d_3x3(t.leaf(x, true), t.leaf(k, true), p));
            },
            b, h, tol)
            .max_rel_err);
  });
  run("grad.mean_columns", [&](Rng& rng) {
    Tensor x = Tensor::uniform({5, 4}, 1.0, rng);
    Tensor w = Tensor::uniform({4}, 1.0, rng);
    return grad_check(
               [&](Tape& t, NodeId p) {
                 return t.sum_all(t.hadamard(t.mean_columns(p), t.leaf(w)));
               },
               x, h, tol)
        .max_rel_err;
  });
  run("grad.transpose_broadcast", [&](Rng& rng) {
    Tensor x = Tensor::uniform({1, 5}, 1.0, rng);
    Tensor w = Tensor::uniform({1, 5, 5}, 1.0, rng);
    return grad_check(
               [&](Tape& t, NodeId p) {
                 NodeId g = t.transpose_last2(t.broadcast_rows(p, 5));
                 return t.sum_all(t.hadamard(g, t.leaf(w)));
               },
               x, h, tol)
        .max_rel_err;
  });
  run("grad.add_bias", [&](Rng& rng) {
    Tensor x = Tensor::uniform({4, 3}, 1.0, rng);
    Tensor b = Tensor::uniform({3}, 1.0, rng);
    Tensor w = Tensor::uniform({4, 3}, 1.0, rng);
    return grad_check(
               [&](Tape& t, NodeId p) {
                 return t.sum_all(t.hadamard(
                     t.add_bias(t.leaf(x, true), p), t.leaf(w)));
               },
               b, h, tol)
        .max_rel_err;
  });
  run("grad.linear", [&](Rng& rng) {
    Tensor x = Tensor::uniform({4, 5}, 1.0, rng);
    Tensor w = Tensor::uniform({5, 7}, 1.0, rng);
    Tensor b = Tensor::uniform({7}, 1.0, rng);
    Tensor mix = Tensor::uniform({4, 7}, 1.0, rng);
    const Activation act = rng.below(2) == 0 ? Activation::relu
                                             : Activation::sigmoid;
    auto weighted = [&](Tape& t, NodeId lin) {
      return t.sum_all(t.hadamard(lin, t.leaf(mix)));
    };
    double worst =
        grad_check(
            [&](Tape& t, NodeId p) {
              return weighted(
                  t, t.linear(p, t.leaf(w, true), t.leaf(b, true), act));
            },
            x, h, tol)
            .max_rel_err;
    worst = std::max(
        worst,
        grad_check(
            [&](Tape& t, NodeId p) {
              return weighted(
                  t, t.linear(t.leaf(x, true), p, t.leaf(b, true), act));
            },
            w, h, tol)
            .max_rel_err);
    return std::max(
        worst,
        grad_check(
            [&](Tape& t, NodeId p) {
              return weighted(
                  t, t.linear(t.leaf(x, true), t.leaf(w, true), p, act));
            },
            b, h, tol)
            .max_rel_err);
  });
  run("grad.l1_kl_loss", [&](Rng& rng) {
    // Rows are strictly positive distributions kept apart from the target.
    Tensor logits = Tensor::uniform({3, 5}, 1.0, rng);
    Tensor target({3, 5});
    for (std::size_t r = 0; r < 3; ++r) {
      double sum = 0.0;
      for (std::size_t j = 0; j < 5; ++j) {
        target(r, j) = 0.05 + rng.uniform();
        sum += target(r, j);
      }
      for (std::size_t j = 0; j < 5; ++j) target(r, j) /= sum;
    }
    return grad_check(
               [&](Tape& t, NodeId p) {
                 return t.l1_kl_loss(t.softmax_rows(p), target, 1.0, 0.5);
               },
               logits, h, tol)
        .max_rel_err;
  });
  run("grad.gaussian_reparam", [&](Rng& rng) {
    Tensor v = Tensor::uniform({1, 6}, 1.0, rng);
    Tensor sigma = Tensor::uniform({1, 6}, 0.4, rng);
    for (std::size_t i = 0; i < sigma.numel(); ++i)
      sigma[i] = std::abs(sigma[i]) + 0.1;
    Tensor w = Tensor::uniform({1, 6, 6}, 1.0, rng);
    const NoiseSource frozen(derive_seed(77, rng.next_u64()));
    auto loss_of = [&](Tape& t, NodeId vx, NodeId sx) {
      NoiseSource ns = frozen;  // same draws every call
      NodeId g = gaussian_augment(t, vx, sx, ns);
      return t.sum_all(t.hadamard(g, t.leaf(w)));
    };
    double worst =
        grad_check(
            [&](Tape& t, NodeId p) { return loss_of(t, p, t.leaf(sigma, true)); },
            v, h, tol)
            .max_rel_err;
    return std::max(
        worst,
        grad_check(
            [&](Tape& t, NodeId p) { return loss_of(t, t.leaf(v, true), p); },
            sigma, h, tol)
            .max_rel_err);
  });
}

/// Gradient check of one LMResidual block on a random 8x8 map, every
/// parameter tensor and the input.
inline void verify_block(std::vector<CheckResult>& out) {
  constexpr double h = 1e-5, tol = 1e-4;
  Rng rng(derive_seed(0xc0de, 2));
  LmResidualParams blk = LmResidualParams::init(8, 32, true, rng);
  Tensor x = detail::away_from_zero({1, 8, 8}, rng);
  Tensor w = Tensor::uniform({1, 8, 8}, 1.0, rng);

  std::vector<Tensor*> tensors = {&blk.conv_kernel, &blk.conv_bias,
                                  &blk.ln_gain,     &blk.ln_bias,
                                  &blk.mlp_w1,      &blk.mlp_b1,
                                  &blk.mlp_w2,      &blk.mlp_b2};
  double worst = 0.0;
  for (std::size_t pi = 0; pi <= tensors.size(); ++pi) {
    const bool vary_input = pi == tensors.size();
    const Tensor& subject = vary_input ? x : *tensors[pi];
    auto build = [&](Tape& t, NodeId p) {
      std::vector<NodeId> ids(tensors.size());
      for (std::size_t i = 0; i < tensors.size(); ++i)
        ids[i] = (!vary_input && i == pi) ? p : t.leaf(*tensors[i], true);
      BoundBlock bound{ids[0], ids[1], ids[2], ids[3],
                       ids[4], ids[5], ids[6], ids[7], blk.mix_columns};
      NodeId input = vary_input ? p : t.leaf(x, true);
      return t.sum_all(t.hadamard(lm_residual(t, bound, input), t.leaf(w)));
    };
    worst = std::max(worst,
                     grad_check(build, subject, h, tol, 96).max_rel_err);
  }
  detail::add_check(out, "grad.lm_residual", worst, tol);
}

/// End-to-end gradient check: loss through predict in augmented mode
/// with frozen noise on an n=8, c=4 toy model (full 12-block stack).
inline void verify_pipeline(std::vector<CheckResult>& out) {
  constexpr double h = 1e-5, tol = 1e-3;
  Rng rng(derive_seed(0xc0de, 3));
  TabMixerModel model = TabMixerModel::init(8, 4, 4242);
  Tensor x = detail::away_from_zero({2, 8}, rng);
  Tensor target({2, 4});
  for (std::size_t r = 0; r < 2; ++r) {
    double sum = 0.0;
    for (std::size_t j = 0; j < 4; ++j) {
      target(r, j) = 0.1 + rng.uniform();
      sum += target(r, j);
    }
    for (std::size_t j = 0; j < 4; ++j) target(r, j) /= sum;
  }
  const NoiseSource frozen(991);

  std::vector<Tensor*> params = model.parameters();
  double worst = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto build = [&](Tape& t, NodeId p) {
      std::vector<NodeId> ids(params.size());
      for (std::size_t i = 0; i < params.size(); ++i)
        ids[i] = i == pi ? p : t.leaf(*params[i], true);
      BoundModel bound = BoundModel::from_nodes(model, ids);
      NoiseSource ns = frozen;
      NodeId pred =
          predict_node(t, bound, t.leaf(x), PredictMode::augmented, &ns);
      return t.l1_kl_loss(pred, target, 1.0, 0.5);
    };
    worst =
        std::max(worst, grad_check(build, *params[pi], h, tol, 24,
                                   derive_seed(0xc0de, 4, pi))
                            .max_rel_err);
  }
  detail::add_check(out, "grad.predict_pipeline", worst, tol);
}

/// Structural invariants guarded by the check suite.
inline void verify_invariants(std::vector<CheckResult>& out) {
  Rng rng(derive_seed(0xc0de, 5));

  {  // softmax rows sum to 1, entries strictly positive
    double worst = 0.0;
    for (int i = 0; i < 50; ++i) {
      Tape t;
      Tensor x = Tensor::uniform({4, 7}, 30.0, rng);
      const Tensor& y = t.value(t.softmax_rows(t.leaf(x)));
      for (std::size_t r = 0; r < 4; ++r) {
        double sum = 0.0;
        for (std::size_t j = 0; j < 7; ++j) {
          if (!(y(r, j) > 0.0)) worst = 1.0;
          sum += y(r, j);
        }
        worst = std::max(worst, std::abs(sum - 1.0));
      }
    }
    detail::add_check(out, "invariant.softmax_rows", worst, 1e-12);
  }
  {  // conv linearity (bias 0)
    double worst = 0.0;
    for (int i = 0; i < 20; ++i) {
      Tensor x = Tensor::uniform({6, 6}, 1.0, rng);
      Tensor y = Tensor::uniform({6, 6}, 1.0, rng);
      Tensor k = Tensor::uniform({3, 3}, 1.0, rng);
      const double a = rng.uniform(-2, 2), b = rng.uniform(-2, 2);
      Tensor zero_bias = Tensor::zeros({1});
      Tensor mix({6, 6});
      for (std::size_t j = 0; j < 36; ++j) mix[j] = a * x[j] + b * y[j];
      Tape t;
      NodeId kb = t.leaf(k), bb = t.leaf(zero_bias);
      const Tensor& lhs = t.value(t.conv2d_3x3(t.leaf(mix), kb, bb));
      const Tensor& cx = t.value(t.conv2d_3x3(t.leaf(x), kb, bb));
      const Tensor& cy = t.value(t.conv2d_3x3(t.leaf(y), kb, bb));
      for (std::size_t j = 0; j < 36; ++j)
        worst = std::max(worst, std::abs(lhs[j] - (a * cx[j] + b * cy[j])));
    }
    detail::add_check(out, "invariant.conv_linearity", worst, 1e-10);
  }
  {  // layer_norm pre-affine rows: mean ~ 0, variance ~ 1 (eps = 1e-12)
    double worst_mean = 0.0, worst_var = 0.0;
    Tensor gain = Tensor::full({9}, 1.0);
    Tensor bias = Tensor::zeros({9});
    for (int i = 0; i < 20; ++i) {
      Tensor x = Tensor::uniform({5, 9}, 3.0, rng);
      Tape t;
      const Tensor& y = t.value(
          t.layer_norm(t.leaf(x), t.leaf(gain), t.leaf(bias), 1e-12));
      for (std::size_t r = 0; r < 5; ++r) {
        double mean = 0.0, var = 0.0;
        for (std::size_t j = 0; j < 9; ++j) mean += y(r, j);
        mean /= 9.0;
        for (std::size_t j = 0; j < 9; ++j)
          var += (y(r, j) - mean) * (y(r, j) - mean);
        var /= 9.0;
        worst_mean = std::max(worst_mean, std::abs(mean));
        worst_var = std::max(worst_var, std::abs(var - 1.0));
      }
    }
    detail::add_check(out, "invariant.layer_norm_mean", worst_mean, 1e-10);
    detail::add_check(out, "invariant.layer_norm_var", worst_var, 1e-6);
  }
  {  // sigma = 0: the Gaussian expansion degenerates to the tile exactly
    double worst = 0.0;
    NoiseSource ns(31337);
    for (int i = 0; i < 100; ++i) {
      Tensor v = Tensor::uniform({7}, 2.0, rng);
      Tensor g = gaussian_augment(v, Tensor::zeros({7}), ns);
      if (!(g == tile_sample(v))) worst = 1.0;
    }
    detail::add_check(out, "invariant.sigma0_degeneracy", worst, 0.5);
  }
  {  // d(combined loss)/d(pred) against finite differences
    double worst = 0.0;
    for (int i = 0; i < 20; ++i) {
      Tensor pred({1, 6}), target({1, 6});
      double sp = 0.0, st = 0.0;
      for (std::size_t j = 0; j < 6; ++j) {
        pred[j] = 0.05 + rng.uniform();
        target[j] = 0.05 + rng.uniform();
        sp += pred[j];
        st += target[j];
      }
      for (std::size_t j = 0; j < 6; ++j) {
        pred[j] /= sp;
        target[j] /= st;
        // keep the |.| kink out of finite-difference range
        if (std::abs(pred[j] - target[j]) < 0.01) pred[j] += 0.02;
      }
      Tape t;
      NodeId p = t.leaf(pred, true);
      t.backward(t.l1_kl_loss(p, target, 1.0, 0.5));
      const Tensor analytic = t.grad(p);
      for (std::size_t j = 0; j < 6; ++j) {
        Tensor pp = pred, pm = pred;
        pp[j] += 1e-6;
        pm[j] -= 1e-6;
        Tape tp, tm;
        const double fp =
            tp.value(tp.l1_kl_loss(tp.leaf(pp), target, 1.0, 0.5))[0];
        const double fm =
            tm.value(tm.l1_kl_loss(tm.leaf(pm), target, 1.0, 0.5))[0];
        worst = std::max(worst, std::abs((fp - fm) / 2e-6 - analytic[j]));
      }
    }
    detail::add_check(out, "invariant.loss_gradient", worst, 1e-6);
  }
}

/// Full suite used by the `check` subcommand and the acceptance tests.
inline std::vector<CheckResult> run_verification_suite() {
  std::vector<CheckResult> out;
  verify_primitives(out);
  verify_block(out);
  verify_pipeline(out);
  verify_invariants(out);
  return out;
}

inline bool all_passed(const std::vector<CheckResult>& results) {
  for (const CheckResult& r : results)
    if (!r.pass) return false;
  return true;
}

}  // namespace ldl

#endif  // LDL_VERIFY_HPP
