#ifndef LDL_TAPE_HPP
#define LDL_TAPE_HPP

#include <Eigen/Core>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "ldl/errors.hpp"
#include "ldl/tensor.hpp"

namespace ldl {

using NodeId = std::size_t;

enum class Activation { relu, sigmoid, identity };

inline Activation activation_from_name(const std::string& name) {
  if (name == "relu") return Activation::relu;
  if (name == "sigmoid") return Activation::sigmoid;
  if (name == "identity") return Activation::identity;
  throw config_error("unknown activation '" + name + "'");
}

enum class Reduction { sum, mean };

namespace detail {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

inline double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

// Forward passes allocate and free multi-megabyte buffers at a high
// rate; without these knobs glibc hands each one back to the kernel
// (mmap/munmap plus page faults) and throughput drops several-fold.
inline void tune_allocator_once() {
#if defined(__GLIBC__)
  static const bool done = [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    return true;
  }();
  (void)done;
#endif
}

}  // namespace detail

/// Define-by-run reverse-mode differentiation record. Nodes are appended
/// in execution order, so inputs always precede their consumers; the
/// backward pass walks the record in reverse. A tape is rebuilt for every
/// forward pass and must not be shared across threads.
///
/// Ops accept the documented 1-D/2-D shapes and, where noted, an extra
/// leading batch axis processed independently per slice.
///
/// Gradient buffers are allocated on first touch. The first writer of a
/// buffer assigns instead of accumulating, which skips a zero-fill and a
/// read pass over tensors that are written exactly once -- almost all of
/// them in a feed-forward net.
class Tape {
  struct Node {
    Tensor value;
    Tensor grad;
    bool grad_live = false;  // grad holds accumulated data
    bool needs_grad = false;
    std::function<void(Tape&)> backprop;  // empty for leaves
  };

 public:
  Tape() { detail::tune_allocator_once(); }

  NodeId leaf(Tensor value, bool needs_grad = false) {
    return push(std::move(value), needs_grad, {});
  }

  const Tensor& value(NodeId id) const { return nodes_[id].value; }

  /// Gradient of the last backward() loss w.r.t. this node.
  const Tensor& grad(NodeId id) const {
    if (!nodes_[id].grad_live)
      throw contract_error("grad requested for a node backward() never reached");
    return nodes_[id].grad;
  }

  bool needs_grad(NodeId id) const { return nodes_[id].needs_grad; }
  std::size_t size() const { return nodes_.size(); }

  void clear() { nodes_.clear(); }

  // ---- primitives ----------------------------------------------------

  /// a: [m x k] (optionally [B x m x k]), b: [k x n] -> [.. m x n].
  NodeId matmul(NodeId a, NodeId b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    if (bv.ndim() != 2)
      throw dim_error("matmul: rhs must be 2-D, got " + shape_str(bv.shape()));
    if (av.ndim() < 2)
      throw dim_error("matmul: lhs must have >= 2 axes, got " +
                      shape_str(av.shape()));
    const std::size_t k = av.cols(), n = bv.extent(1);
    if (k != bv.extent(0))
      throw dim_error("matmul: inner extents differ, " + shape_str(av.shape()) +
                      " vs " + shape_str(bv.shape()));
    const std::size_t rows = av.rows();
    Shape out_shape = av.shape();
    out_shape.back() = n;
    Tensor out = Tensor::no_init(out_shape);
    {
      detail::ECMap A(av.data(), rows, k), B(bv.data(), k, n);
      detail::EMap C(out.data(), rows, n);
      C.noalias() = A * B;
    }
    return push(std::move(out), needs_grad(a) || needs_grad(b),
                [a, b, rows, k, n](Tape& t) {
                  NodeId self = t.current_;
                  detail::ECMap G(t.nodes_[self].grad.data(), rows, n);
                  if (t.needs_grad(a)) {
                    detail::ECMap B(t.value(b).data(), k, n);
                    auto [ga, fresh] = t.grad_target(a);
                    detail::EMap GA(ga.data(), rows, k);
                    if (fresh)
                      GA.noalias() = G * B.transpose();
                    else
                      GA.noalias() += G * B.transpose();
                  }
                  if (t.needs_grad(b)) {
                    detail::ECMap A(t.value(a).data(), rows, k);
                    auto [gb, fresh] = t.grad_target(b);
                    detail::EMap GB(gb.data(), k, n);
                    if (fresh)
                      GB.noalias() = A.transpose() * G;
                    else
                      GB.noalias() += A.transpose() * G;
                  }
                });
  }

  /// Fused act(x @ w + bias) over the trailing axis. One node instead of
  /// three keeps the big intermediate buffers off the tape; the hot path
  /// of every perceptron goes through here.
  NodeId linear(NodeId x, NodeId w, NodeId bias, Activation f) {
    const Tensor& xv = value(x);
    const Tensor& wv = value(w);
    const Tensor& bv = value(bias);
    if (wv.ndim() != 2)
      throw dim_error("linear: weights must be 2-D, got " +
                      shape_str(wv.shape()));
    const std::size_t k = xv.cols(), n = wv.extent(1);
    if (xv.ndim() < 2 || k != wv.extent(0))
      throw dim_error("linear: inner extents differ, " + shape_str(xv.shape()) +
                      " vs " + shape_str(wv.shape()));
    if (bv.ndim() != 1 || bv.extent(0) != n)
      throw dim_error("linear: bias must be length " + std::to_string(n));
    const std::size_t rows = xv.rows();
    Shape out_shape = xv.shape();
    out_shape.back() = n;
    Tensor out = Tensor::no_init(out_shape);
    {
      detail::ECMap X(xv.data(), rows, k), W(wv.data(), k, n);
      detail::EMap Y(out.data(), rows, n);
      Y.noalias() = X * W;
    }
    double* y = out.data();
    switch (f) {
      case Activation::relu:
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < n; ++j) {
            const double v = y[r * n + j] + bv[j];
            y[r * n + j] = v > 0.0 ? v : 0.0;
          }
        break;
      case Activation::sigmoid:
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < n; ++j)
            y[r * n + j] = detail::stable_sigmoid(y[r * n + j] + bv[j]);
        break;
      case Activation::identity:
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < n; ++j) y[r * n + j] += bv[j];
        break;
    }
    return push(
        std::move(out), needs_grad(x) || needs_grad(w) || needs_grad(bias),
        [x, w, bias, f, rows, k, n](Tape& t) {
          NodeId self = t.current_;
          const Tensor& g = t.nodes_[self].grad;
          const Tensor& y = t.nodes_[self].value;
          // d(pre-activation); relu' at 0 is 0, and y > 0 iff pre > 0
          Tensor dz = Tensor::no_init(y.shape());
          switch (f) {
            case Activation::relu:
              for (std::size_t i = 0; i < dz.numel(); ++i)
                dz[i] = y[i] > 0.0 ? g[i] : 0.0;
              break;
            case Activation::sigmoid:
              for (std::size_t i = 0; i < dz.numel(); ++i)
                dz[i] = g[i] * y[i] * (1.0 - y[i]);
              break;
            case Activation::identity:
              for (std::size_t i = 0; i < dz.numel(); ++i) dz[i] = g[i];
              break;
          }
          detail::ECMap DZ(dz.data(), rows, n);
          if (t.needs_grad(x)) {
            detail::ECMap W(t.value(w).data(), k, n);
            auto [gx, fresh] = t.grad_target(x);
            detail::EMap GX(gx.data(), rows, k);
            if (fresh)
              GX.noalias() = DZ * W.transpose();
            else
              GX.noalias() += DZ * W.transpose();
          }
          if (t.needs_grad(w)) {
            detail::ECMap X(t.value(x).data(), rows, k);
            auto [gw, fresh] = t.grad_target(w);
            detail::EMap GW(gw.data(), k, n);
            if (fresh)
              GW.noalias() = X.transpose() * DZ;
            else
              GW.noalias() += X.transpose() * DZ;
          }
          if (t.needs_grad(bias)) {
            std::vector<double> acc(n, 0.0);
            for (std::size_t r = 0; r < rows; ++r)
              for (std::size_t j = 0; j < n; ++j) acc[j] += dz[r * n + j];
            t.apply_acc(bias, acc.data(), n);
          }
        });
  }

  NodeId add(NodeId a, NodeId b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    check_same_shape(av, bv, "add");
    Tensor out = av;
    const double* q = bv.data();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += q[i];
    return push(std::move(out), needs_grad(a) || needs_grad(b),
                [a, b](Tape& t) {
                  const Tensor& g = t.nodes_[t.current_].grad;
                  if (t.needs_grad(a)) t.axpy(g, 1.0, a);
                  if (t.needs_grad(b)) t.axpy(g, 1.0, b);
                });
  }

  NodeId sub(NodeId a, NodeId b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    check_same_shape(av, bv, "sub");
    Tensor out = av;
    const double* q = bv.data();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= q[i];
    return push(std::move(out), needs_grad(a) || needs_grad(b),
                [a, b](Tape& t) {
                  const Tensor& g = t.nodes_[t.current_].grad;
                  if (t.needs_grad(a)) t.axpy(g, 1.0, a);
                  if (t.needs_grad(b)) t.axpy(g, -1.0, b);
                });
  }

  /// Elementwise product.
  NodeId hadamard(NodeId a, NodeId b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    check_same_shape(av, bv, "hadamard");
    Tensor out = av;
    const double* q = bv.data();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= q[i];
    return push(std::move(out), needs_grad(a) || needs_grad(b),
                [a, b](Tape& t) {
                  NodeId self = t.current_;
                  const Tensor& g = t.nodes_[self].grad;
                  if (t.needs_grad(a)) {
                    auto [ga, fresh] = t.grad_target(a);
                    const double* bb = t.value(b).data();
                    if (fresh)
                      for (std::size_t i = 0; i < g.numel(); ++i)
                        ga[i] = g[i] * bb[i];
                    else
                      for (std::size_t i = 0; i < g.numel(); ++i)
                        ga[i] += g[i] * bb[i];
                  }
                  if (t.needs_grad(b)) {
                    auto [gb, fresh] = t.grad_target(b);
                    const double* aa = t.value(a).data();
                    if (fresh)
                      for (std::size_t i = 0; i < g.numel(); ++i)
                        gb[i] = g[i] * aa[i];
                    else
                      for (std::size_t i = 0; i < g.numel(); ++i)
                        gb[i] += g[i] * aa[i];
                  }
                });
  }

  NodeId scale(NodeId a, double s) {
    Tensor out = value(a);
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= s;
    return push(std::move(out), needs_grad(a), [a, s](Tape& t) {
      if (t.needs_grad(a)) t.axpy(t.nodes_[t.current_].grad, s, a);
    });
  }

  /// a: [.. x n] plus a length-n bias broadcast over every row.
  NodeId add_bias(NodeId a, NodeId bias) {
    const Tensor& av = value(a);
    const Tensor& bv = value(bias);
    if (bv.ndim() != 1 || bv.extent(0) != av.cols())
      throw dim_error("add_bias: bias " + shape_str(bv.shape()) +
                      " does not match columns of " + shape_str(av.shape()));
    const std::size_t rows = av.rows(), n = av.cols();
    Tensor out = av;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < n; ++j) out[r * n + j] += bv[j];
    return push(std::move(out), needs_grad(a) || needs_grad(bias),
                [a, bias, rows, n](Tape& t) {
                  const Tensor& g = t.nodes_[t.current_].grad;
                  if (t.needs_grad(a)) t.axpy(g, 1.0, a);
                  if (t.needs_grad(bias)) {
                    std::vector<double> acc(n, 0.0);
                    for (std::size_t r = 0; r < rows; ++r)
                      for (std::size_t j = 0; j < n; ++j)
                        acc[j] += g[r * n + j];
                    t.apply_acc(bias, acc.data(), n);
                  }
                });
  }

  /// Apply relu / sigmoid / identity per element.
  /// relu' at exactly 0 is 0.
  NodeId elementwise(NodeId a, Activation f) {
    const Tensor& av = value(a);
    Tensor out = av;
    switch (f) {
      case Activation::relu:
        for (std::size_t i = 0; i < out.numel(); ++i)
          if (out[i] < 0.0) out[i] = 0.0;
        break;
      case Activation::sigmoid:
        for (std::size_t i = 0; i < out.numel(); ++i)
          out[i] = detail::stable_sigmoid(out[i]);
        break;
      case Activation::identity:
        break;
    }
    return push(std::move(out), needs_grad(a), [a, f](Tape& t) {
      if (!t.needs_grad(a)) return;
      NodeId self = t.current_;
      const Tensor& g = t.nodes_[self].grad;
      const Tensor& y = t.nodes_[self].value;
      const Tensor& x = t.value(a);
      auto [ga, fresh] = t.grad_target(a);
      switch (f) {
        case Activation::relu:
          if (fresh)
            for (std::size_t i = 0; i < g.numel(); ++i)
              ga[i] = x[i] > 0.0 ? g[i] : 0.0;
          else
            for (std::size_t i = 0; i < g.numel(); ++i)
              if (x[i] > 0.0) ga[i] += g[i];
          break;
        case Activation::sigmoid:
          if (fresh)
            for (std::size_t i = 0; i < g.numel(); ++i)
              ga[i] = g[i] * y[i] * (1.0 - y[i]);
          else
            for (std::size_t i = 0; i < g.numel(); ++i)
              ga[i] += g[i] * y[i] * (1.0 - y[i]);
          break;
        case Activation::identity:
          if (fresh)
            for (std::size_t i = 0; i < g.numel(); ++i) ga[i] = g[i];
          else
            for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
          break;
      }
    });
  }

  /// Softmax over the trailing axis, max-subtracted for stability.
  NodeId softmax_rows(NodeId a) {
    const Tensor& av = value(a);
    const std::size_t rows = av.rows(), n = av.cols();
    Tensor out = av;
    for (std::size_t r = 0; r < rows; ++r) {
      double* y = out.data() + r * n;
      double mx = y[0];
      for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, y[j]);
      double sum = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        y[j] = std::exp(y[j] - mx);
        sum += y[j];
      }
      for (std::size_t j = 0; j < n; ++j) y[j] /= sum;
    }
    return push(std::move(out), needs_grad(a), [a, rows, n](Tape& t) {
      if (!t.needs_grad(a)) return;
      NodeId self = t.current_;
      const Tensor& g = t.nodes_[self].grad;
      const Tensor& y = t.nodes_[self].value;
      auto [ga, fresh] = t.grad_target(a);
      for (std::size_t r = 0; r < rows; ++r) {
        const double* gr = g.data() + r * n;
        const double* yr = y.data() + r * n;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += gr[j] * yr[j];
        if (fresh)
          for (std::size_t j = 0; j < n; ++j)
            ga[r * n + j] = yr[j] * (gr[j] - dot);
        else
          for (std::size_t j = 0; j < n; ++j)
            ga[r * n + j] += yr[j] * (gr[j] - dot);
      }
    });
  }

  /// Normalize each trailing-axis row to zero mean / unit variance
  /// (population convention), then apply a per-column affine map.
  NodeId layer_norm(NodeId x, NodeId gain, NodeId bias, double eps = 1e-5) {
    if (eps <= 0.0) throw contract_error("layer_norm: eps must be positive");
    const Tensor& xv = value(x);
    const std::size_t rows = xv.rows(), n = xv.cols();
    const Tensor& gv = value(gain);
    const Tensor& bv = value(bias);
    if (gv.ndim() != 1 || gv.extent(0) != n || bv.ndim() != 1 ||
        bv.extent(0) != n)
      throw dim_error("layer_norm: gain/bias must be length " +
                      std::to_string(n));
    Tensor out = Tensor::no_init(xv.shape());
    Tensor xhat = Tensor::no_init(xv.shape());
    std::vector<double> rstd(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* xr = xv.data() + r * n;
      double mean = 0.0;
      for (std::size_t j = 0; j < n; ++j) mean += xr[j];
      mean /= static_cast<double>(n);
      double var = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double d = xr[j] - mean;
        var += d * d;
      }
      var /= static_cast<double>(n);
      const double rs = 1.0 / std::sqrt(var + eps);
      rstd[r] = rs;
      for (std::size_t j = 0; j < n; ++j) {
        const double h = (xr[j] - mean) * rs;
        xhat[r * n + j] = h;
        out[r * n + j] = h * gv[j] + bv[j];
      }
    }
    return push(std::move(out),
                needs_grad(x) || needs_grad(gain) || needs_grad(bias),
                [x, gain, bias, rows, n, xhat = std::move(xhat),
                 rstd = std::move(rstd)](Tape& t) {
                  const Tensor& g = t.nodes_[t.current_].grad;
                  if (t.needs_grad(gain) || t.needs_grad(bias)) {
                    std::vector<double> dgain(n, 0.0), dbias(n, 0.0);
                    for (std::size_t r = 0; r < rows; ++r)
                      for (std::size_t j = 0; j < n; ++j) {
                        dgain[j] += g[r * n + j] * xhat[r * n + j];
                        dbias[j] += g[r * n + j];
                      }
                    if (t.needs_grad(gain)) t.apply_acc(gain, dgain.data(), n);
                    if (t.needs_grad(bias)) t.apply_acc(bias, dbias.data(), n);
                  }
                  if (t.needs_grad(x)) {
                    const Tensor& gv = t.value(gain);
                    auto [gx, fresh] = t.grad_target(x);
                    std::vector<double> dh(n);
                    for (std::size_t r = 0; r < rows; ++r) {
                      double mean_dh = 0.0, mean_dhh = 0.0;
                      for (std::size_t j = 0; j < n; ++j) {
                        dh[j] = g[r * n + j] * gv[j];
                        mean_dh += dh[j];
                        mean_dhh += dh[j] * xhat[r * n + j];
                      }
                      mean_dh /= static_cast<double>(n);
                      mean_dhh /= static_cast<double>(n);
                      if (fresh)
                        for (std::size_t j = 0; j < n; ++j)
                          gx[r * n + j] = rstd[r] * (dh[j] - mean_dh -
                                                     xhat[r * n + j] * mean_dhh);
                      else
                        for (std::size_t j = 0; j < n; ++j)
                          gx[r * n + j] += rstd[r] * (dh[j] - mean_dh -
                                                      xhat[r * n + j] * mean_dhh);
                    }
                  }
                });
  }

  /// 3x3 cross-correlation, stride 1, zero padding 1, single channel.
  /// x: [H x W] or [B x H x W]; kernel holds 9 values; bias is scalar.
  NodeId conv2d_3x3(NodeId x, NodeId kernel, NodeId bias) {
    const Tensor& xv = value(x);
    const Tensor& kv = value(kernel);
    const Tensor& bv = value(bias);
    if (kv.numel() != 9 || kv.shape().back() != 3 ||
        kv.shape()[kv.ndim() - 2] != 3)
      throw config_error("conv2d_3x3: kernel must be 3x3, got " +
                         shape_str(kv.shape()));
    if (bv.numel() != 1)
      throw config_error("conv2d_3x3: bias must be a scalar");
    if (xv.ndim() < 2)
      throw dim_error("conv2d_3x3: input must be [H x W] or [B x H x W]");
    const std::size_t W = xv.shape().back();
    const std::size_t H = xv.shape()[xv.ndim() - 2];
    const std::size_t batch = xv.numel() / (H * W);
    Tensor out = Tensor::no_init(xv.shape());
    const double b0 = bv[0];
    const double* kk = kv.data();
    for (std::size_t s = 0; s < batch; ++s) {
      const double* xs = xv.data() + s * H * W;
      double* ys = out.data() + s * H * W;
      for (std::size_t i = 0; i < H; ++i) {
        const bool row_edge = i == 0 || i + 1 == H;
        for (std::size_t j = 0; j < W; ++j) {
          if (!row_edge && j > 0 && j + 1 < W) {
            // interior: all nine taps are in range
            const double* p0 = xs + (i - 1) * W + (j - 1);
            const double* p1 = p0 + W;
            const double* p2 = p1 + W;
            ys[i * W + j] = b0 + kk[0] * p0[0] + kk[1] * p0[1] +
                            kk[2] * p0[2] + kk[3] * p1[0] + kk[4] * p1[1] +
                            kk[5] * p1[2] + kk[6] * p2[0] + kk[7] * p2[1] +
                            kk[8] * p2[2];
            continue;
          }
          double acc = b0;
          for (std::size_t u = 0; u < 3; ++u) {
            const std::size_t ii = i + u;
            if (ii < 1 || ii > H) continue;  // zero padding
            for (std::size_t v = 0; v < 3; ++v) {
              const std::size_t jj = j + v;
              if (jj < 1 || jj > W) continue;
              acc += kk[u * 3 + v] * xs[(ii - 1) * W + (jj - 1)];
            }
          }
          ys[i * W + j] = acc;
        }
      }
    }
    return push(
        std::move(out), needs_grad(x) || needs_grad(kernel) || needs_grad(bias),
        [x, kernel, bias, H, W, batch](Tape& t) {
          const Tensor& g = t.nodes_[t.current_].grad;
          const Tensor& xv = t.value(x);
          const Tensor& kv = t.value(kernel);
          const bool gx_on = t.needs_grad(x);
          const bool gk_on = t.needs_grad(kernel);
          // the input gradient scatters, so it needs a zeroed buffer
          Tensor* gx = gx_on ? &t.grad_zeroed(x) : nullptr;
          double kacc[9] = {0, 0, 0, 0, 0, 0, 0, 0, 0};
          double bacc = 0.0;
          const double* kk = kv.data();
          for (std::size_t s = 0; s < batch; ++s) {
            const double* gs = g.data() + s * H * W;
            const double* xs = xv.data() + s * H * W;
            double* gxs = gx_on ? gx->data() + s * H * W : nullptr;
            for (std::size_t i = 0; i < H; ++i) {
              const bool row_edge = i == 0 || i + 1 == H;
              for (std::size_t j = 0; j < W; ++j) {
                const double gv = gs[i * W + j];
                bacc += gv;
                if (gv == 0.0) continue;
                if (!row_edge && j > 0 && j + 1 < W) {
                  const std::size_t base = (i - 1) * W + (j - 1);
                  if (gx_on) {
                    double* q0 = gxs + base;
                    double* q1 = q0 + W;
                    double* q2 = q1 + W;
                    q0[0] += gv * kk[0];
                    q0[1] += gv * kk[1];
                    q0[2] += gv * kk[2];
                    q1[0] += gv * kk[3];
                    q1[1] += gv * kk[4];
                    q1[2] += gv * kk[5];
                    q2[0] += gv * kk[6];
                    q2[1] += gv * kk[7];
                    q2[2] += gv * kk[8];
                  }
                  if (gk_on) {
                    const double* p0 = xs + base;
                    const double* p1 = p0 + W;
                    const double* p2 = p1 + W;
                    kacc[0] += gv * p0[0];
                    kacc[1] += gv * p0[1];
                    kacc[2] += gv * p0[2];
                    kacc[3] += gv * p1[0];
                    kacc[4] += gv * p1[1];
                    kacc[5] += gv * p1[2];
                    kacc[6] += gv * p2[0];
                    kacc[7] += gv * p2[1];
                    kacc[8] += gv * p2[2];
                  }
                  continue;
                }
                for (std::size_t u = 0; u < 3; ++u) {
                  const std::size_t ii = i + u;
                  if (ii < 1 || ii > H) continue;
                  for (std::size_t v = 0; v < 3; ++v) {
                    const std::size_t jj = j + v;
                    if (jj < 1 || jj > W) continue;
                    const std::size_t at = (ii - 1) * W + (jj - 1);
                    if (gx_on) gxs[at] += gv * kk[u * 3 + v];
                    if (gk_on) kacc[u * 3 + v] += gv * xs[at];
                  }
                }
              }
            }
          }
          if (gk_on) t.apply_acc(kernel, kacc, 9);
          if (t.needs_grad(bias)) t.apply_acc(bias, &bacc, 1);
        });
  }

  /// x: [r x c] (or [B x r x c]) -> per-column mean over the row axis.
  NodeId mean_columns(NodeId x) {
    const Tensor& xv = value(x);
    if (xv.ndim() < 2)
      throw dim_error("mean_columns: input must have >= 2 axes");
    const std::size_t c = xv.shape().back();
    const std::size_t r = xv.shape()[xv.ndim() - 2];
    const std::size_t batch = xv.numel() / (r * c);
    Shape out_shape(xv.shape().begin(), xv.shape().end() - 2);
    out_shape.push_back(c);
    Tensor out(out_shape);
    for (std::size_t s = 0; s < batch; ++s) {
      const double* xs = xv.data() + s * r * c;
      double* ys = out.data() + s * c;
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) ys[j] += xs[i * c + j];
      for (std::size_t j = 0; j < c; ++j) ys[j] /= static_cast<double>(r);
    }
    return push(std::move(out), needs_grad(x), [x, r, c, batch](Tape& t) {
      if (!t.needs_grad(x)) return;
      const Tensor& g = t.nodes_[t.current_].grad;
      auto [gx, fresh] = t.grad_target(x);
      const double inv_r = 1.0 / static_cast<double>(r);
      for (std::size_t s = 0; s < batch; ++s)
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) {
            const double v = g[s * c + j] * inv_r;
            if (fresh)
              gx[(s * r + i) * c + j] = v;
            else
              gx[(s * r + i) * c + j] += v;
          }
    });
  }

  /// Swap the last two axes (per batch slice).
  NodeId transpose_last2(NodeId x) {
    const Tensor& xv = value(x);
    if (xv.ndim() < 2) throw dim_error("transpose_last2: need >= 2 axes");
    const std::size_t n = xv.shape().back();
    const std::size_t m = xv.shape()[xv.ndim() - 2];
    const std::size_t batch = xv.numel() / (m * n);
    Shape out_shape = xv.shape();
    std::swap(out_shape[out_shape.size() - 1], out_shape[out_shape.size() - 2]);
    Tensor out = Tensor::no_init(out_shape);
    for (std::size_t s = 0; s < batch; ++s) {
      const double* xs = xv.data() + s * m * n;
      double* ys = out.data() + s * m * n;
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ys[j * m + i] = xs[i * n + j];
    }
    return push(std::move(out), needs_grad(x), [x, m, n, batch](Tape& t) {
      if (!t.needs_grad(x)) return;
      const Tensor& g = t.nodes_[t.current_].grad;
      auto [gx, fresh] = t.grad_target(x);
      for (std::size_t s = 0; s < batch; ++s) {
        const double* gs = g.data() + s * m * n;
        double* gxs = gx.data() + s * m * n;
        if (fresh)
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gxs[i * n + j] = gs[j * m + i];
        else
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gxs[i * n + j] += gs[j * m + i];
      }
    });
  }

  /// x: [.. x n] -> [.. x t x n], each of the t rows a copy of x.
  NodeId broadcast_rows(NodeId x, std::size_t t_rows) {
    const Tensor& xv = value(x);
    const std::size_t n = xv.cols();
    const std::size_t batch = xv.rows();
    Shape out_shape = xv.shape();
    out_shape.insert(out_shape.end() - 1, t_rows);
    Tensor out = Tensor::no_init(out_shape);
    for (std::size_t s = 0; s < batch; ++s)
      for (std::size_t j = 0; j < t_rows; ++j)
        for (std::size_t i = 0; i < n; ++i)
          out[(s * t_rows + j) * n + i] = xv[s * n + i];
    return push(std::move(out), needs_grad(x), [x, t_rows, n, batch](Tape& t) {
      if (!t.needs_grad(x)) return;
      const Tensor& g = t.nodes_[t.current_].grad;
      auto [gx, fresh] = t.grad_target(x);
      for (std::size_t s = 0; s < batch; ++s) {
        double* dst = gx.data() + s * n;
        const double* base = g.data() + s * t_rows * n;
        if (fresh)
          for (std::size_t i = 0; i < n; ++i) dst[i] = base[i];
        else
          for (std::size_t i = 0; i < n; ++i) dst[i] += base[i];
        for (std::size_t j = 1; j < t_rows; ++j) {
          const double* row = base + j * n;
          for (std::size_t i = 0; i < n; ++i) dst[i] += row[i];
        }
      }
    });
  }

  NodeId sum_all(NodeId x) {
    const Tensor& xv = value(x);
    double acc = 0.0;
    for (std::size_t i = 0; i < xv.numel(); ++i) acc += xv[i];
    Tensor out({1});
    out[0] = acc;
    return push(std::move(out), needs_grad(x), [x](Tape& t) {
      if (!t.needs_grad(x)) return;
      const double g = t.nodes_[t.current_].grad[0];
      auto [gx, fresh] = t.grad_target(x);
      if (fresh)
        for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] = g;
      else
        for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += g;
    });
  }

  /// alpha * L1 + beta * KL(target || pred) per trailing-axis row,
  /// reduced over rows. Conventions: 0*ln(0/q) := 0, d|0|/dx := 0.
  /// pred entries must be strictly positive.
  NodeId l1_kl_loss(NodeId pred, Tensor target, double alpha, double beta,
                    Reduction reduction = Reduction::mean) {
    const Tensor& pv = value(pred);
    check_same_shape(pv, target, "l1_kl_loss");
    const std::size_t rows = pv.rows(), n = pv.cols();
    for (std::size_t i = 0; i < pv.numel(); ++i)
      if (!(pv[i] > 0.0))
        throw contract_error("l1_kl_loss: pred entry " + std::to_string(i) +
                             " is not strictly positive");
    double total = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* p = pv.data() + r * n;
      const double* q = target.data() + r * n;
      double l1 = 0.0, kl = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        l1 += std::abs(p[j] - q[j]);
        if (q[j] > 0.0) kl += q[j] * std::log(q[j] / p[j]);
      }
      total += alpha * l1 + beta * kl;
    }
    const double w =
        reduction == Reduction::mean ? 1.0 / static_cast<double>(rows) : 1.0;
    Tensor out({1});
    out[0] = total * w;
    return push(std::move(out), needs_grad(pred),
                [pred, target = std::move(target), alpha, beta, w, rows,
                 n](Tape& t) {
                  if (!t.needs_grad(pred)) return;
                  const double g = t.nodes_[t.current_].grad[0] * w;
                  const Tensor& pv = t.value(pred);
                  auto [gp, fresh] = t.grad_target(pred);
                  for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < n; ++j) {
                      const double p = pv[r * n + j], q = target[r * n + j];
                      double d = 0.0;
                      if (p > q)
                        d += alpha;
                      else if (p < q)
                        d -= alpha;
                      if (q > 0.0) d -= beta * q / p;
                      if (fresh)
                        gp[r * n + j] = g * d;
                      else
                        gp[r * n + j] += g * d;
                    }
                });
  }

  // ---- reverse pass ----------------------------------------------------

  /// Accumulate gradients of a scalar loss node into every node that
  /// needs them. The loss node's own gradient ends up exactly 1.
  void backward(NodeId loss) {
    if (value(loss).numel() != 1)
      throw contract_error("backward: loss node must be scalar, got " +
                           shape_str(value(loss).shape()));
    for (Node& node : nodes_) {
      node.grad = Tensor();
      node.grad_live = false;
    }
    Node& ln = nodes_[loss];
    ln.grad = Tensor::zeros(ln.value.shape());
    ln.grad[0] = 1.0;
    ln.grad_live = true;
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      Node& node = nodes_[i];
      if (!node.backprop || !node.grad_live || !node.needs_grad) continue;
      current_ = i;
      node.backprop(*this);
    }
    // untouched parameter leaves still report a (zero) gradient
    for (Node& node : nodes_)
      if (node.needs_grad && !node.backprop && !node.grad_live) {
        node.grad = Tensor::zeros(node.value.shape());
        node.grad_live = true;
      }
  }

 private:
  NodeId push(Tensor value, bool needs_grad, std::function<void(Tape&)> back) {
    Node node;
    node.value = std::move(value);
    node.needs_grad = needs_grad;
    node.backprop = std::move(back);
    nodes_.push_back(std::move(node));
    return nodes_.size() - 1;
  }

  struct GradTarget {
    Tensor& tensor;
    bool fresh;  // true: buffer is uninitialized, assign every element
  };

  /// Gradient buffer of a node for a writer that touches every element.
  GradTarget grad_target(NodeId id) {
    Node& n = nodes_[id];
    if (!n.grad_live) {
      n.grad = Tensor::no_init(n.value.shape());
      n.grad_live = true;
      return {n.grad, true};
    }
    return {n.grad, false};
  }

  /// Gradient buffer for scatter-style writers; zeroed on first use.
  Tensor& grad_zeroed(NodeId id) {
    Node& n = nodes_[id];
    if (!n.grad_live) {
      n.grad = Tensor::zeros(n.value.shape());
      n.grad_live = true;
    }
    return n.grad;
  }

  void axpy(const Tensor& g, double s, NodeId target) {
    auto [dst, fresh] = grad_target(target);
    if (fresh)
      for (std::size_t i = 0; i < g.numel(); ++i) dst[i] = s * g[i];
    else
      for (std::size_t i = 0; i < g.numel(); ++i) dst[i] += s * g[i];
  }

  /// Add a fully-reduced local accumulator into a (small) gradient.
  void apply_acc(NodeId target, const double* acc, std::size_t n) {
    auto [dst, fresh] = grad_target(target);
    if (fresh)
      for (std::size_t i = 0; i < n; ++i) dst[i] = acc[i];
    else
      for (std::size_t i = 0; i < n; ++i) dst[i] += acc[i];
  }

  std::deque<Node> nodes_;  // deque: value()/grad() references stay valid
  NodeId current_ = 0;      // node whose backprop is running
};

}  // namespace ldl

#endif  // LDL_TAPE_HPP
