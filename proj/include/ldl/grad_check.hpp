#ifndef LDL_GRAD_CHECK_HPP
#define LDL_GRAD_CHECK_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

#include "ldl/errors.hpp"
#include "ldl/rng.hpp"
#include "ldl/tape.hpp"
#include "ldl/tensor.hpp"

namespace ldl {

/// |a - b| scaled by the larger magnitude, floored so that gradients
/// near zero compare absolutely instead of blowing up.
inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-3});
}

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::size_t coords_checked = 0;
  bool pass = false;
};

/// Compare tape gradients of a scalar function against central finite
/// differences. `build` receives a fresh tape and the parameter leaf and
/// returns the loss node; it must be deterministic (fixed data, frozen
/// noise). When max_coords > 0, only that many coordinates are probed,
/// chosen by a seeded draw.
template <typename BuildFn>
GradCheckReport grad_check(BuildFn&& build, const Tensor& params, double h,
                           double tol, std::size_t max_coords = 0,
                           std::uint64_t coord_seed = 7) {
  if (!(h >= 1e-6 && h <= 1e-4))
    throw contract_error("grad_check: h must lie in [1e-6, 1e-4]");

  auto eval = [&](const Tensor& theta) {
    Tape tape;
    NodeId p = tape.leaf(theta, true);
    NodeId loss = build(tape, p);
    return tape.value(loss)[0];
  };

  // Analytic gradient.
  Tape tape;
  NodeId p = tape.leaf(params, true);
  NodeId loss = build(tape, p);
  const double f0 = tape.value(loss)[0];
  if (eval(params) != f0)
    throw contract_error(
        "grad_check: function is not deterministic (freeze the noise source)");
  tape.backward(loss);
  Tensor analytic = tape.grad(p);

  std::vector<std::size_t> coords(params.numel());
  std::iota(coords.begin(), coords.end(), 0);
  if (max_coords > 0 && max_coords < coords.size()) {
    Rng rng(coord_seed);
    for (std::size_t i = 0; i < max_coords; ++i) {
      std::size_t j = i + rng.below(coords.size() - i);
      std::swap(coords[i], coords[j]);
    }
    coords.resize(max_coords);
  }

  GradCheckReport report;
  Tensor theta = params;
  for (std::size_t c : coords) {
    const double saved = theta[c];
    theta[c] = saved + h;
    const double fp = eval(theta);
    theta[c] = saved - h;
    const double fm = eval(theta);
    theta[c] = saved;
    const double fd = (fp - fm) / (2.0 * h);
    report.max_rel_err =
        std::max(report.max_rel_err, relative_error(fd, analytic[c]));
  }
  report.coords_checked = coords.size();
  report.pass = report.max_rel_err < tol;
  return report;
}

}  // namespace ldl

#endif  // LDL_GRAD_CHECK_HPP
