#include "ldl/dataset.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>

#include "ldl/rng.hpp"
#include "ldl/tensor.hpp"

namespace ldl {
namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::path(::testing::TempDir()) / name).string();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

TEST(ParseLdl, MinimalFile) {
  const std::string path = temp_path("mini.ldl");
  write_text(path, "2 3 2\n1 2 3 0.25 0.75\n-1 0.5 4 1 0\n");
  const LdlDataset ds = parse_ldl_file(path);
  EXPECT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.feature_dim(), 3u);
  EXPECT_EQ(ds.label_dim(), 2u);
  EXPECT_DOUBLE_EQ(ds.features(1, 0), -1.0);
  EXPECT_DOUBLE_EQ(ds.labels(0, 1), 0.75);
  ds.validate();
}

TEST(ParseLdl, RejectsBadRows) {
  const std::string bad_sum = temp_path("badsum.ldl");
  write_text(bad_sum, "1 1 2\n1 0.6 0.3\n");
  try {
    parse_ldl_file(bad_sum);
    FAIL() << "expected parse_error";
  } catch (const parse_error& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }

  const std::string negative = temp_path("neg.ldl");
  write_text(negative, "1 1 2\n1 -0.1 1.1\n");
  EXPECT_THROW(parse_ldl_file(negative), parse_error);

  const std::string arity = temp_path("arity.ldl");
  write_text(arity, "1 2 2\n1 2 0.5\n");
  EXPECT_THROW(parse_ldl_file(arity), parse_error);

  const std::string truncated = temp_path("trunc.ldl");
  write_text(truncated, "3 1 2\n1 0.5 0.5\n");
  EXPECT_THROW(parse_ldl_file(truncated), parse_error);
}

TEST(ParseLdl, RenormalizesSmallDeviation) {
  const std::string path = temp_path("renorm.ldl");
  write_text(path, "1 1 2\n7 0.500004 0.500004\n");
  const LdlDataset ds = parse_ldl_file(path);
  EXPECT_NEAR(ds.labels(0, 0) + ds.labels(0, 1), 1.0, 1e-15);
}

TEST(ParseLdl, WriteParseRoundTripsBitIdentical) {
  Rng rng(31);
  LdlDataset ds;
  ds.name = "roundtrip";
  ds.features = Tensor::uniform({7, 4}, 13.0, rng);
  ds.labels = Tensor({7, 3});
  for (std::size_t i = 0; i < 7; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < 3; ++j) {
      ds.labels(i, j) = 0.01 + rng.uniform();
      sum += ds.labels(i, j);
    }
    for (std::size_t j = 0; j < 3; ++j) ds.labels(i, j) /= sum;
  }
  const std::string path = temp_path("rt.ldl");
  write_ldl_file(ds, path);
  const LdlDataset back = parse_ldl_file(path);
  EXPECT_EQ(back.features, ds.features);
  EXPECT_EQ(back.labels, ds.labels);
}

TEST(ParseLdl, YeastAlphaShapeWhenPresent) {
  const char* candidates[] = {"data/yeast-alpha.ldl",
                              "../data/yeast-alpha.ldl"};
  for (const char* path : candidates)
    if (std::filesystem::exists(path)) {
      const LdlDataset ds = parse_ldl_file(path);
      EXPECT_EQ(ds.size(), 2465u);
      EXPECT_EQ(ds.feature_dim(), 24u);
      EXPECT_EQ(ds.label_dim(), 18u);
      return;
    }
  GTEST_SKIP() << "Yeast-alpha benchmark file not available";
}

TEST(Zscore, SelfStatsAndConstantColumn) {
  Rng rng(32);
  Tensor x = Tensor::uniform({50, 3}, 4.0, rng);
  for (std::size_t i = 0; i < 50; ++i) x(i, 2) = 9.0;  // constant column
  const auto [scaled, scaler] = zscore_fit_transform(x, x);
  for (std::size_t j = 0; j < 2; ++j) {
    double mean = 0.0, var = 0.0;
    for (std::size_t i = 0; i < 50; ++i) mean += scaled(i, j);
    mean /= 50.0;
    for (std::size_t i = 0; i < 50; ++i)
      var += (scaled(i, j) - mean) * (scaled(i, j) - mean);
    var /= 50.0;
    EXPECT_LT(std::abs(mean), 1e-12);
    EXPECT_NEAR(var, 1.0, 1e-12);
  }
  for (std::size_t i = 0; i < 50; ++i) EXPECT_EQ(scaled(i, 2), 0.0);
  EXPECT_EQ(scaler.std[2], 1.0);
}

TEST(Zscore, HandExampleAndMismatch) {
  Tensor train = Tensor::from_rows({{0.0}, {2.0}});
  Tensor apply = Tensor::from_rows({{1.0}});
  const auto [scaled, scaler] = zscore_fit_transform(train, apply);
  EXPECT_EQ(scaled(0, 0), 0.0);  // mean 1, population std 1
  EXPECT_THROW(scaler.apply(Tensor::from_rows({{1.0, 2.0}})), dim_error);
}

TEST(Kfold, SizesAndDeterminism) {
  const FoldPlan even = kfold_split(10, 5, 1, 99);
  for (std::size_t f = 0; f < 5; ++f)
    EXPECT_EQ(even.folds[0][f].size(), 2u);

  const FoldPlan odd = kfold_split(11, 5, 1, 99);
  EXPECT_EQ(odd.folds[0][0].size(), 3u);
  for (std::size_t f = 1; f < 5; ++f) EXPECT_EQ(odd.folds[0][f].size(), 2u);

  const FoldPlan again = kfold_split(11, 5, 1, 99);
  EXPECT_EQ(odd.folds, again.folds);
  const FoldPlan other = kfold_split(11, 5, 1, 100);
  EXPECT_NE(odd.folds, other.folds);

  EXPECT_THROW(kfold_split(4, 5, 1, 0), config_error);
  EXPECT_THROW(kfold_split(10, 1, 1, 0), config_error);
}

TEST(Kfold, FoldsPartitionEveryRepeat) {
  const FoldPlan plan = kfold_split(23, 4, 3, 7);
  for (std::size_t r = 0; r < 3; ++r) {
    std::vector<int> seen(23, 0);
    for (std::size_t f = 0; f < 4; ++f)
      for (std::size_t idx : plan.folds[r][f]) ++seen[idx];
    for (int count : seen) EXPECT_EQ(count, 1);
    const std::vector<std::size_t> train = plan.train_indices(r, 1);
    EXPECT_EQ(train.size() + plan.test_indices(r, 1).size(), 23u);
  }
}

TEST(Idx, RoundTripAndErrors) {
  Tensor images({2, 28, 28});
  Rng rng(33);
  for (std::size_t i = 0; i < images.numel(); ++i) images[i] = rng.uniform();
  images[0] = 1.0;  // pixel 255
  const std::string img_path = temp_path("imgs.idx");
  const std::string lbl_path = temp_path("lbls.idx");
  write_idx_images(images, img_path);
  write_idx_labels({3, 9}, lbl_path);

  const Tensor back = load_idx_images(img_path);
  EXPECT_EQ(back.shape(), (Shape{2, 28, 28}));
  EXPECT_EQ(back[0], 1.0);
  for (std::size_t i = 0; i < back.numel(); ++i)
    EXPECT_NEAR(back[i], images[i], 0.5 / 255.0);

  const std::vector<int> labels = load_idx_labels(lbl_path);
  EXPECT_EQ(labels, (std::vector<int>{3, 9}));

  EXPECT_THROW(load_idx_images(lbl_path), parse_error);  // wrong magic
  const std::string short_path = temp_path("short.idx");
  {
    std::ofstream out(short_path, std::ios::binary);
    detail::write_u32_be(out, 0x00000803u);
    detail::write_u32_be(out, 2);
    detail::write_u32_be(out, 28);
    detail::write_u32_be(out, 28);
    out.put(char(1));  // payload far too short
  }
  EXPECT_THROW(load_idx_images(short_path), parse_error);
}

TEST(Pca, AxisAlignedVariance) {
  Tensor x({6, 2});
  for (std::size_t i = 0; i < 6; ++i) {
    x(i, 0) = double(i);
    x(i, 1) = 4.0;
  }
  const auto [proj, basis] = pca_project(x, 2);
  EXPECT_NEAR(std::abs(basis.components(0, 0)), 1.0, 1e-12);
  EXPECT_NEAR(basis.components(1, 0), 0.0, 1e-12);
  EXPECT_NEAR(basis.eigenvalues[1], 0.0, 1e-12);
  EXPECT_GT(basis.components(0, 0), 0.0);  // sign convention
}

TEST(Pca, FullRankProjectionPreservesDistances) {
  Rng rng(34);
  Tensor x = Tensor::uniform({10, 5}, 3.0, rng);
  const auto [proj, basis] = pca_project(x, 5);
  for (std::size_t a = 0; a < 10; ++a)
    for (std::size_t b = a + 1; b < 10; ++b) {
      double before = 0.0, after = 0.0;
      for (std::size_t j = 0; j < 5; ++j) {
        before += (x(a, j) - x(b, j)) * (x(a, j) - x(b, j));
        after += (proj(a, j) - proj(b, j)) * (proj(a, j) - proj(b, j));
      }
      EXPECT_NEAR(std::sqrt(before), std::sqrt(after), 1e-8);
    }
}

TEST(Pca, BasisOrthonormalAndErrorMonotone) {
  Rng rng(35);
  Tensor x = Tensor::uniform({20, 6}, 2.0, rng);
  const auto [proj6, basis] = pca_project(x, 6);
  for (std::size_t a = 0; a < 6; ++a)
    for (std::size_t b = 0; b < 6; ++b) {
      double dot = 0.0;
      for (std::size_t i = 0; i < 6; ++i)
        dot += basis.components(i, a) * basis.components(i, b);
      EXPECT_NEAR(dot, a == b ? 1.0 : 0.0, 1e-8);
    }

  // reconstruction error is non-increasing in k
  double prev = 1e300;
  for (std::size_t k = 1; k <= 6; ++k) {
    const auto [proj, pb] = pca_project(x, k);
    double err = 0.0;
    for (std::size_t i = 0; i < 20; ++i)
      for (std::size_t j = 0; j < 6; ++j) {
        double rec = pb.center[j];
        for (std::size_t t = 0; t < k; ++t)
          rec += proj(i, t) * pb.components(j, t);
        err += (x(i, j) - rec) * (x(i, j) - rec);
      }
    EXPECT_LE(err, prev + 1e-9);
    prev = err;
  }
  EXPECT_THROW(pca_project(x, 7), config_error);
}

TEST(GaussianLabels, SimplexAndSymmetry) {
  const std::vector<double> row = gaussian_label_distribution(3, 21, 0.5);
  double sum = 0.0;
  for (double v : row) {
    EXPECT_GT(v, 0.0);
    sum += v;
  }
  EXPECT_NEAR(sum, 1.0, 1e-12);

  const std::vector<double> lo = gaussian_label_distribution(0, 21, 0.5);
  const std::vector<double> hi = gaussian_label_distribution(9, 21, 0.5);
  for (std::size_t j = 0; j < lo.size(); ++j)
    EXPECT_NEAR(lo[j], hi[lo.size() - 1 - j], 1e-12);
}

TEST(GaussianLabels, ArgmaxAtNearestGridPoint) {
  const std::size_t c = 56;
  const std::vector<double> row = gaussian_label_distribution(5, c, 0.5);
  std::size_t argmax = 0;
  std::size_t nearest = 0;
  double best_gap = 1e300;
  for (std::size_t j = 0; j < c; ++j) {
    if (row[j] > row[argmax]) argmax = j;
    const double gap = std::abs(9.0 * double(j) / double(c - 1) - 5.0);
    if (gap < best_gap) {
      best_gap = gap;
      nearest = j;
    }
  }
  EXPECT_EQ(argmax, nearest);
  EXPECT_THROW(gaussian_label_distribution(10, c, 0.5), config_error);
  EXPECT_THROW(gaussian_label_distribution(5, 1, 0.5), config_error);
  EXPECT_THROW(gaussian_label_distribution(5, c, 0.0), config_error);
}

TEST(BuildSynthetic, SmallPipeline) {
  Rng rng(36);
  const std::size_t m = 60;
  Tensor images({m, 12, 12});
  std::vector<int> classes(m);
  for (std::size_t i = 0; i < m; ++i) {
    classes[i] = int(i % 10);
    for (std::size_t p = 0; p < 144; ++p)
      images(i, p / 12, p % 12) =
          0.5 + 0.4 * std::sin(double(classes[i]) + double(p)) +
          0.05 * rng.normal();
  }
  const LdlDataset ds = build_synthetic(images, classes, 56, 0.5, 28);
  EXPECT_EQ(ds.size(), m);
  EXPECT_EQ(ds.feature_dim(), 28u);
  EXPECT_EQ(ds.label_dim(), 56u);
  ds.validate();
}

TEST(BuildSynthetic, WideSigmaApproachesUniform) {
  const std::vector<double> row = gaussian_label_distribution(4, 56, 1e4);
  for (double v : row) EXPECT_NEAR(v, 1.0 / 56.0, 1e-6);
}

TEST(InjectNoise, DeterminismAndMoments) {
  Rng rng(37);
  Tensor x = Tensor::uniform({100, 100}, 2.0, rng);
  EXPECT_EQ(inject_feature_noise(x, 0.0, 5), x);
  EXPECT_EQ(inject_feature_noise(x, 0.7, 5), inject_feature_noise(x, 0.7, 5));
  EXPECT_NE(inject_feature_noise(x, 0.7, 5), inject_feature_noise(x, 0.7, 6));

  const Tensor noisy = inject_feature_noise(x, 1.0, 5);
  double mean = 0.0, var = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) mean += noisy[i] - x[i];
  mean /= double(x.numel());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double d = noisy[i] - x[i] - mean;
    var += d * d;
  }
  var /= double(x.numel());
  EXPECT_LT(std::abs(mean), 0.05);
  EXPECT_NEAR(std::sqrt(var), 1.0, 0.05);
}

}  // namespace
}  // namespace ldl
