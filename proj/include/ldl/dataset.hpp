#ifndef LDL_DATASET_HPP
#define LDL_DATASET_HPP

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "ldl/errors.hpp"
#include "ldl/format.hpp"
#include "ldl/rng.hpp"
#include "ldl/tensor.hpp"

namespace ldl {

/// A label-distribution dataset: m feature rows and m label rows, every
/// label row non-negative and summing to 1.
struct LdlDataset {
  std::string name;
  Tensor features;  // [m x n]
  Tensor labels;    // [m x c]

  std::size_t size() const { return features.extent(0); }
  std::size_t feature_dim() const { return features.extent(1); }
  std::size_t label_dim() const { return labels.extent(1); }

  void validate(double sum_tol = 1e-6) const {
    if (features.ndim() != 2 || labels.ndim() != 2)
      throw dim_error("dataset tensors must be 2-D");
    if (features.extent(0) != labels.extent(0))
      throw dim_error("feature/label row counts differ");
    if (!features.all_finite() || !labels.all_finite())
      throw contract_error("dataset contains non-finite values");
    const std::size_t m = size(), c = label_dim();
    for (std::size_t i = 0; i < m; ++i) {
      double sum = 0.0;
      for (std::size_t j = 0; j < c; ++j) {
        const double v = labels(i, j);
        if (v < 0.0)
          throw contract_error("negative label in row " + std::to_string(i));
        sum += v;
      }
      if (std::abs(sum - 1.0) > sum_tol)
        throw contract_error("label row " + std::to_string(i) + " sums to " +
                             fmt_g(sum));
    }
  }
};

namespace detail {

inline std::vector<double> parse_numbers(const std::string& line,
                                         std::size_t line_no) {
  std::vector<double> out;
  const char* s = line.c_str();
  char* end = nullptr;
  while (*s) {
    while (*s == ' ' || *s == '\t' || *s == '\r') ++s;
    if (!*s) break;
    const double v = std::strtod(s, &end);
    if (end == s)
      throw parse_error("line " + std::to_string(line_no) +
                        ": expected a number, got '" + std::string(s, 1) + "'");
    out.push_back(v);
    s = end;
  }
  return out;
}

}  // namespace detail

/// Canonical text format: line 1 = "m n c", then m lines of n feature
/// values followed by c label values. Label rows off by at most 1e-4
/// from unit sum are renormalized; anything worse is rejected.
inline LdlDataset parse_ldl_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw parse_error("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw parse_error(path + ": empty file");
  std::vector<double> header = detail::parse_numbers(line, 1);
  if (header.size() != 3 || header[0] < 1 || header[1] < 1 || header[2] < 1 ||
      header[0] != std::floor(header[0]) || header[1] != std::floor(header[1]) ||
      header[2] != std::floor(header[2]))
    throw parse_error("line 1: header must be 'm n c' positive integers");
  const auto m = static_cast<std::size_t>(header[0]);
  const auto n = static_cast<std::size_t>(header[1]);
  const auto c = static_cast<std::size_t>(header[2]);

  LdlDataset ds;
  ds.name = path;
  ds.features = Tensor({m, n});
  ds.labels = Tensor({m, c});
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t line_no = i + 2;
    if (!std::getline(in, line))
      throw parse_error("line " + std::to_string(line_no) +
                        ": unexpected end of file");
    std::vector<double> row = detail::parse_numbers(line, line_no);
    if (row.size() != n + c)
      throw parse_error("line " + std::to_string(line_no) + ": expected " +
                        std::to_string(n + c) + " values, got " +
                        std::to_string(row.size()));
    double sum = 0.0;
    for (std::size_t j = 0; j < n + c; ++j) {
      if (!std::isfinite(row[j]))
        throw parse_error("line " + std::to_string(line_no) +
                          ": non-finite value");
      if (j >= n) {
        if (row[j] < 0.0)
          throw parse_error("line " + std::to_string(line_no) +
                            ": negative label value");
        sum += row[j];
      }
    }
    if (std::abs(sum - 1.0) > 1e-4)
      throw parse_error("line " + std::to_string(line_no) +
                        ": label row sums to " + fmt_g(sum));
    // renormalize only real deviations so written files re-parse bit-exactly
    const double scale = std::abs(sum - 1.0) <= 1e-12 ? 1.0 : sum;
    for (std::size_t j = 0; j < n; ++j) ds.features(i, j) = row[j];
    for (std::size_t j = 0; j < c; ++j)
      ds.labels(i, j) = scale == 1.0 ? row[n + j] : row[n + j] / scale;
  }
  return ds;
}

inline void write_ldl_file(const LdlDataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw error("cannot write " + path);
  const std::size_t m = ds.size(), n = ds.feature_dim(), c = ds.label_dim();
  out << m << ' ' << n << ' ' << c << '\n';
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j)
      out << (j ? " " : "") << fmt_g17(ds.features(i, j));
    for (std::size_t j = 0; j < c; ++j) out << ' ' << fmt_g17(ds.labels(i, j));
    out << '\n';
  }
}

// ---- feature scaling ----------------------------------------------------

/// Per-column mean/std (population convention) fitted on training rows.
struct Scaler {
  std::vector<double> mean;
  std::vector<double> std;

  Tensor apply(const Tensor& x) const {
    if (x.ndim() != 2 || x.extent(1) != mean.size())
      throw dim_error("scaler: column count mismatch");
    Tensor out = x;
    const std::size_t m = x.extent(0), n = x.extent(1);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j)
        out(i, j) = (x(i, j) - mean[j]) / std[j];
    return out;
  }
};

inline Scaler zscore_fit(const Tensor& train) {
  if (train.ndim() != 2 || train.extent(0) == 0)
    throw dim_error("zscore_fit: want a non-empty [m x n] tensor");
  const std::size_t m = train.extent(0), n = train.extent(1);
  Scaler s;
  s.mean.assign(n, 0.0);
  s.std.assign(n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) s.mean[j] += train(i, j);
  for (double& v : s.mean) v /= static_cast<double>(m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double d = train(i, j) - s.mean[j];
      s.std[j] += d * d;
    }
  for (double& v : s.std) {
    v = std::sqrt(v / static_cast<double>(m));
    if (v < 1e-12) v = 1.0;  // constant column: center only
  }
  return s;
}

inline std::pair<Tensor, Scaler> zscore_fit_transform(const Tensor& train,
                                                      const Tensor& apply_to) {
  Scaler s = zscore_fit(train);
  return {s.apply(apply_to), std::move(s)};
}

// ---- cross-validation plan ------------------------------------------------

/// Repeated k-fold assignment. Within a repeat the folds partition all
/// row indices with sizes differing by at most one.
struct FoldPlan {
  std::size_t k = 0;
  std::size_t repeats = 0;
  std::uint64_t seed = 0;
  // folds[repeat][fold] -> row indices
  std::vector<std::vector<std::vector<std::size_t>>> folds;

  const std::vector<std::size_t>& test_indices(std::size_t repeat,
                                               std::size_t fold) const {
    return folds[repeat][fold];
  }

  std::vector<std::size_t> train_indices(std::size_t repeat,
                                         std::size_t fold) const {
    std::vector<std::size_t> out;
    for (std::size_t f = 0; f < k; ++f)
      if (f != fold)
        out.insert(out.end(), folds[repeat][f].begin(),
                   folds[repeat][f].end());
    return out;
  }
};

inline FoldPlan kfold_split(std::size_t m, std::size_t k, std::size_t repeats,
                            std::uint64_t seed) {
  if (k < 2) throw config_error("kfold_split: k must be >= 2");
  if (m < k) throw config_error("kfold_split: need at least k rows");
  FoldPlan plan;
  plan.k = k;
  plan.repeats = repeats;
  plan.seed = seed;
  plan.folds.resize(repeats);
  for (std::size_t r = 0; r < repeats; ++r) {
    std::vector<std::size_t> perm(m);
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(derive_seed(seed, r, 0xf01d));
    for (std::size_t i = m - 1; i > 0; --i) {
      const std::size_t j = rng.below(i + 1);
      std::swap(perm[i], perm[j]);
    }
    plan.folds[r].resize(k);
    const std::size_t base = m / k, extra = m % k;
    std::size_t pos = 0;
    for (std::size_t f = 0; f < k; ++f) {
      const std::size_t len = base + (f < extra ? 1 : 0);
      plan.folds[r][f].assign(perm.begin() + pos, perm.begin() + pos + len);
      pos += len;
    }
  }
  return plan;
}

inline Tensor take_rows(const Tensor& x, const std::vector<std::size_t>& idx) {
  if (x.ndim() != 2) throw dim_error("take_rows: want 2-D tensor");
  const std::size_t n = x.extent(1);
  Tensor out({idx.size(), n});
  for (std::size_t i = 0; i < idx.size(); ++i)
    for (std::size_t j = 0; j < n; ++j) out(i, j) = x(idx[i], j);
  return out;
}

// ---- IDX binary files -----------------------------------------------------

namespace detail {

inline std::uint32_t read_u32_be(std::istream& in, const std::string& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4))
    throw parse_error(path + ": truncated IDX header");
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

inline void write_u32_be(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace detail

/// IDX image file (magic 0x00000803); pixels scaled to [0, 1].
inline Tensor load_idx_images(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw parse_error("cannot open " + path);
  if (detail::read_u32_be(in, path) != 0x00000803u)
    throw parse_error(path + ": bad IDX image magic");
  const std::size_t m = detail::read_u32_be(in, path);
  const std::size_t h = detail::read_u32_be(in, path);
  const std::size_t w = detail::read_u32_be(in, path);
  if (m == 0 || h == 0 || w == 0) throw parse_error(path + ": empty IDX file");
  std::vector<unsigned char> raw(m * h * w);
  if (!in.read(reinterpret_cast<char*>(raw.data()),
               static_cast<std::streamsize>(raw.size())))
    throw parse_error(path + ": truncated IDX payload");
  Tensor out({m, h, w});
  for (std::size_t i = 0; i < raw.size(); ++i)
    out[i] = static_cast<double>(raw[i]) / 255.0;
  return out;
}

/// IDX label file (magic 0x00000801).
inline std::vector<int> load_idx_labels(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw parse_error("cannot open " + path);
  if (detail::read_u32_be(in, path) != 0x00000801u)
    throw parse_error(path + ": bad IDX label magic");
  const std::size_t m = detail::read_u32_be(in, path);
  std::vector<unsigned char> raw(m);
  if (!in.read(reinterpret_cast<char*>(raw.data()),
               static_cast<std::streamsize>(raw.size())))
    throw parse_error(path + ": truncated IDX payload");
  return {raw.begin(), raw.end()};
}

inline void write_idx_images(const Tensor& images, const std::string& path) {
  if (images.ndim() != 3) throw dim_error("write_idx_images: want [m x h x w]");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw error("cannot write " + path);
  detail::write_u32_be(out, 0x00000803u);
  detail::write_u32_be(out, static_cast<std::uint32_t>(images.extent(0)));
  detail::write_u32_be(out, static_cast<std::uint32_t>(images.extent(1)));
  detail::write_u32_be(out, static_cast<std::uint32_t>(images.extent(2)));
  for (std::size_t i = 0; i < images.numel(); ++i) {
    const double v = std::clamp(images[i], 0.0, 1.0);
    out.put(static_cast<char>(std::lround(v * 255.0)));
  }
}

inline void write_idx_labels(const std::vector<int>& labels,
                             const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw error("cannot write " + path);
  detail::write_u32_be(out, 0x00000801u);
  detail::write_u32_be(out, static_cast<std::uint32_t>(labels.size()));
  for (int v : labels) out.put(static_cast<char>(v));
}

// ---- PCA -------------------------------------------------------------------

struct EighResult {
  std::vector<double> values;  // unordered
  Tensor vectors;              // [d x d], column j pairs with values[j]
};

/// Cyclic Jacobi eigen-decomposition of a symmetric matrix. Rotations are
/// applied in row-cyclic order with the usual early-sweep threshold.
inline EighResult jacobi_eigh(const Tensor& sym) {
  if (sym.ndim() != 2 || sym.extent(0) != sym.extent(1))
    throw dim_error("jacobi_eigh: want a square matrix");
  const std::size_t d = sym.extent(0);
  Tensor a = sym;
  Tensor v = Tensor::zeros({d, d});
  for (std::size_t i = 0; i < d; ++i) v(i, i) = 1.0;
  double fro = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) fro += a[i] * a[i];
  fro = std::sqrt(fro);
  const double stop = 1e-12 * (fro + 1.0);

  for (int sweep = 0; sweep < 64; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < d; ++p)
      for (std::size_t q = p + 1; q < d; ++q) off += a(p, q) * a(p, q);
    off = std::sqrt(2.0 * off);
    if (off <= stop) break;
    const double thresh =
        sweep < 3 ? 0.2 * off / static_cast<double>(d * d) : 0.0;
    for (std::size_t p = 0; p < d; ++p) {
      for (std::size_t q = p + 1; q < d; ++q) {
        const double apq = a(p, q);
        if (std::abs(apq) <= thresh) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t i = 0; i < d; ++i) {
          const double aip = a(i, p), aiq = a(i, q);
          a(i, p) = c * aip - s * aiq;
          a(i, q) = s * aip + c * aiq;
        }
        for (std::size_t i = 0; i < d; ++i) {
          const double api = a(p, i), aqi = a(q, i);
          a(p, i) = c * api - s * aqi;
          a(q, i) = s * api + c * aqi;
        }
        for (std::size_t i = 0; i < d; ++i) {
          const double vip = v(i, p), viq = v(i, q);
          v(i, p) = c * vip - s * viq;
          v(i, q) = s * vip + c * viq;
        }
      }
    }
  }
  EighResult r;
  r.values.resize(d);
  for (std::size_t i = 0; i < d; ++i) r.values[i] = a(i, i);
  r.vectors = std::move(v);
  return r;
}

struct PcaBasis {
  Tensor components;               // [d x k], columns orthonormal
  std::vector<double> eigenvalues;  // descending, length k
  std::vector<double> center;       // column means of the fitted data
};

/// Project onto the top-k principal directions of the population
/// covariance. Components are ordered by descending eigenvalue and
/// signed so each one's largest-magnitude entry is positive.
inline std::pair<Tensor, PcaBasis> pca_project(const Tensor& x,
                                               std::size_t k) {
  if (x.ndim() != 2) throw dim_error("pca_project: want [m x d]");
  const std::size_t m = x.extent(0), d = x.extent(1);
  if (k > d) throw config_error("pca_project: k exceeds feature count");
  if (m < 2) throw config_error("pca_project: need at least 2 rows");

  std::vector<double> center(d, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < d; ++j) center[j] += x(i, j);
  for (double& v : center) v /= static_cast<double>(m);
  Tensor xc = x;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < d; ++j) xc(i, j) -= center[j];

  using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const EMat> xm(xc.data(), static_cast<Eigen::Index>(m),
                            static_cast<Eigen::Index>(d));
  Tensor cov({d, d});
  Eigen::Map<EMat> cm(cov.data(), static_cast<Eigen::Index>(d),
                      static_cast<Eigen::Index>(d));
  cm.noalias() = xm.transpose() * xm / static_cast<double>(m);

  EighResult eig = jacobi_eigh(cov);
  std::vector<std::size_t> order(d);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return eig.values[a] > eig.values[b];
  });

  PcaBasis basis;
  basis.components = Tensor({d, k});
  basis.eigenvalues.resize(k);
  basis.center = std::move(center);
  for (std::size_t j = 0; j < k; ++j) {
    const std::size_t src = order[j];
    basis.eigenvalues[j] = eig.values[src];
    std::size_t arg = 0;
    double best = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double mag = std::abs(eig.vectors(i, src));
      if (mag > best) {
        best = mag;
        arg = i;
      }
    }
    const double sign = eig.vectors(arg, src) >= 0.0 ? 1.0 : -1.0;
    for (std::size_t i = 0; i < d; ++i)
      basis.components(i, j) = sign * eig.vectors(i, src);
  }

  Tensor projected({m, k});
  Eigen::Map<const EMat> bm(basis.components.data(),
                            static_cast<Eigen::Index>(d),
                            static_cast<Eigen::Index>(k));
  Eigen::Map<EMat> pm(projected.data(), static_cast<Eigen::Index>(m),
                      static_cast<Eigen::Index>(k));
  pm.noalias() = xm * bm;
  return {std::move(projected), std::move(basis)};
}

// ---- synthetic labels and noise --------------------------------------------

/// Gaussian density with mean class_id and std sigma evaluated on c grid
/// points spanning [0, 9], normalized to a distribution.
inline std::vector<double> gaussian_label_distribution(int class_id,
                                                       std::size_t c,
                                                       double sigma) {
  if (class_id < 0 || class_id > 9)
    throw config_error("gaussian_label_distribution: class must be 0..9");
  if (c < 2) throw config_error("gaussian_label_distribution: c must be >= 2");
  if (!(sigma > 0.0))
    throw config_error("gaussian_label_distribution: sigma must be positive");
  std::vector<double> row(c);
  double sum = 0.0;
  for (std::size_t j = 0; j < c; ++j) {
    const double x = 9.0 * static_cast<double>(j) / static_cast<double>(c - 1);
    const double z = (x - static_cast<double>(class_id)) / sigma;
    row[j] = std::exp(-0.5 * z * z);
    sum += row[j];
  }
  for (double& v : row) v /= sum;
  return row;
}

/// Flatten images, PCA-reduce the pixels, and attach Gaussian label
/// rows centered on each class.
inline LdlDataset build_synthetic(const Tensor& images,
                                  const std::vector<int>& classes,
                                  std::size_t c = 56, double sigma = 0.5,
                                  std::size_t pca_dim = 28) {
  if (images.ndim() != 3) throw dim_error("build_synthetic: want [m x h x w]");
  const std::size_t m = images.extent(0);
  if (classes.size() != m)
    throw dim_error("build_synthetic: image/class counts differ");
  const std::size_t d = images.extent(1) * images.extent(2);
  Tensor flat({m, d});
  std::copy(images.data(), images.data() + images.numel(), flat.data());

  LdlDataset ds;
  ds.name = "synthetic";
  ds.features = pca_project(flat, pca_dim).first;
  ds.labels = Tensor({m, c});
  for (std::size_t i = 0; i < m; ++i) {
    const std::vector<double> row =
        gaussian_label_distribution(classes[i], c, sigma);
    for (std::size_t j = 0; j < c; ++j) ds.labels(i, j) = row[j];
  }
  ds.validate();
  return ds;
}

/// x + N(0, sigma^2) elementwise, seeded; sigma = 0 returns x unchanged.
inline Tensor inject_feature_noise(const Tensor& x, double sigma,
                                   std::uint64_t seed) {
  if (sigma < 0.0)
    throw contract_error("inject_feature_noise: sigma must be >= 0");
  if (sigma == 0.0) return x;
  Tensor out = x;
  NoiseSource ns(seed);
  for (std::size_t i = 0; i < out.numel(); ++i)
    out[i] += sigma * ns.normal_at(i);
  return out;
}

}  // namespace ldl

#endif  // LDL_DATASET_HPP
