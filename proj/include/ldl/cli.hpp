#ifndef LDL_CLI_HPP
#define LDL_CLI_HPP

#include <CLI11.hpp>

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ldl/dataset.hpp"
#include "ldl/errors.hpp"
#include "ldl/format.hpp"
#include "ldl/metrics.hpp"
#include "ldl/tabmixer.hpp"
#include "ldl/train.hpp"
#include "ldl/verify.hpp"

namespace ldl::cli {

/// Command-line level mistakes (exit code 2, like unknown flags).
struct usage_error : error {
  using error::error;
};

namespace detail {

/// Line-oriented `key = value` file; every key must name a flag of the
/// running subcommand.
inline std::map<std::string, std::string> load_config(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw usage_error("cannot open config file " + path);
  std::map<std::string, std::string> out;
  std::string line;
  std::size_t line_no = 0;
  auto trim = [](std::string s) {
    const auto a = s.find_first_not_of(" \t\r");
    const auto b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw usage_error("config line " + std::to_string(line_no) +
                        ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw usage_error("config line " + std::to_string(line_no) +
                        ": empty key");
    out[key] = value;
  }
  return out;
}

inline double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw usage_error("config key '" + key + "': bad number '" + v + "'");
  }
}

inline std::uint64_t to_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const unsigned long long u = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return u;
  } catch (const std::exception&) {
    throw usage_error("config key '" + key + "': bad integer '" + v + "'");
  }
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw usage_error("config key '" + key + "': bad boolean '" + v + "'");
}

/// Applies precedence flag > config > LDL_SEED > built-in default and
/// rejects config keys that do not name a flag.
class Overlay {
 public:
  explicit Overlay(CLI::App* sub) : sub_(sub) {}

  void on_u64(const std::string& key, std::uint64_t* slot) {
    setters_[key] = [key, slot](const std::string& v) { *slot = to_u64(key, v); };
  }
  void on_size(const std::string& key, std::size_t* slot) {
    setters_[key] = [key, slot](const std::string& v) {
      *slot = static_cast<std::size_t>(to_u64(key, v));
    };
  }
  void on_i64(const std::string& key, std::int64_t* slot) {
    setters_[key] = [key, slot](const std::string& v) {
      *slot = static_cast<std::int64_t>(to_u64(key, v));
    };
  }
  void on_double(const std::string& key, double* slot) {
    setters_[key] = [key, slot](const std::string& v) {
      *slot = to_double(key, v);
    };
  }
  void on_bool(const std::string& key, bool* slot) {
    setters_[key] = [key, slot](const std::string& v) {
      *slot = to_bool(key, v);
    };
  }
  void on_string(const std::string& key, std::string* slot) {
    setters_[key] = [slot](const std::string& v) { *slot = v; };
  }

  void apply(const std::string& config_path,
             std::uint64_t* seed_slot = nullptr) {
    std::map<std::string, std::string> cfg;
    if (!config_path.empty()) cfg = load_config(config_path);
    for (const auto& [key, value] : cfg) {
      auto it = setters_.find(key);
      if (it == setters_.end())
        throw usage_error("config key '" + key +
                          "' is not a flag of this subcommand");
      if (sub_->count("--" + key) == 0) it->second(value);
    }
    if (seed_slot && sub_->count("--seed") == 0 && cfg.count("seed") == 0) {
      if (const char* env = std::getenv("LDL_SEED"))
        *seed_slot = to_u64("LDL_SEED", env);
    }
  }

 private:
  CLI::App* sub_;
  std::map<std::string, std::function<void(const std::string&)>> setters_;
};

inline std::vector<double> parse_sigma_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    out.push_back(to_double("sigmas", item));
    if (out.back() < 0.0) throw usage_error("sigmas must be >= 0");
  }
  if (out.empty()) throw usage_error("sigmas list is empty");
  return out;
}

inline void print_report(const MetricsReport& report) {
  const MetricValues m = report.mean(), s = report.stddev();
  for (std::size_t i = 0; i < kMetricCount; ++i)
    std::cout << metric_names()[i] << " = " << fmt_g(m[i]) << " +- "
              << fmt_g(s[i]) << "\n";
}

inline void write_fold_csv(const std::string& path,
                           const MetricsReport& report, std::size_t k) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw error("cannot write " + path);
  out << "repeat,fold";
  for (const char* name : metric_names()) out << ',' << name;
  out << '\n';
  for (std::size_t i = 0; i < report.runs.size(); ++i) {
    out << i / k << ',' << i % k;
    for (double v : report.runs[i]) out << ',' << fmt_g(v);
    out << '\n';
  }
}

}  // namespace detail

/// Hyperparameter flags shared by train / cv / ablate / noise.
struct TrainerOpts {
  TrainConfig cfg;
  std::size_t workers = 1;
  std::size_t k = 5;
  std::size_t repeats = 10;
  bool no_fa = false;
  bool no_pt = false;
  std::int64_t pretrain_epochs = -1;  // <0: default 10% of epochs
  std::string config_path;

  void register_core(CLI::App* sub, detail::Overlay& overlay) {
    sub->add_option("--seed", cfg.seed, "Master seed (default 1024)");
    sub->add_option("--batch", cfg.batch_size, "Mini-batch size");
    sub->add_option("--lr", cfg.learning_rate, "AdamW learning rate");
    sub->add_option("--epochs", cfg.epochs, "Training epochs");
    sub->add_option("--alpha", cfg.loss.alpha, "L1 loss weight");
    sub->add_option("--beta", cfg.loss.beta, "KL loss weight");
    sub->add_option("--weight-decay", cfg.weight_decay, "AdamW weight decay");
    sub->add_option("--blocks", cfg.model.blocks, "LMResidual block count");
    sub->add_option("--hidden", cfg.model.hidden, "Block perceptron width");
    sub->add_option("--pretrain-epochs", pretrain_epochs,
                    "Tiled warm-up epochs (default: 10% of --epochs)");
    sub->add_flag("--no-fa", no_fa, "Disable feature augmentation");
    sub->add_flag("--no-pt", no_pt, "Disable tiled pre-training");
    sub->add_option("--workers", workers, "Parallel workers");
    sub->add_option("--config", config_path, "key = value defaults file");
    overlay.on_u64("seed", &cfg.seed);
    overlay.on_size("batch", &cfg.batch_size);
    overlay.on_double("lr", &cfg.learning_rate);
    overlay.on_size("epochs", &cfg.epochs);
    overlay.on_double("alpha", &cfg.loss.alpha);
    overlay.on_double("beta", &cfg.loss.beta);
    overlay.on_double("weight-decay", &cfg.weight_decay);
    overlay.on_size("blocks", &cfg.model.blocks);
    overlay.on_size("hidden", &cfg.model.hidden);
    overlay.on_i64("pretrain-epochs", &pretrain_epochs);
    overlay.on_bool("no-fa", &no_fa);
    overlay.on_bool("no-pt", &no_pt);
    overlay.on_size("workers", &workers);
  }

  void register_folds(CLI::App* sub, detail::Overlay& overlay) {
    sub->add_option("--k", k, "Fold count");
    sub->add_option("--repeats", repeats, "Cross-validation repetitions");
    overlay.on_size("k", &k);
    overlay.on_size("repeats", &repeats);
  }

  TrainConfig finalize(detail::Overlay& overlay) {
    overlay.apply(config_path, &cfg.seed);
    cfg.with_fa = !no_fa;
    cfg.with_pt = !no_pt;
    if (pretrain_epochs >= 0)
      cfg.pretrain_epochs = static_cast<std::size_t>(pretrain_epochs);
    return cfg;
  }
};

namespace detail {

inline void cmd_synth(const std::string& images_path,
                      const std::string& labels_path, const std::string& out,
                      std::size_t label_count, double label_sigma,
                      std::size_t pca_dim, std::size_t limit) {
  Tensor images = load_idx_images(images_path);
  std::vector<int> classes = load_idx_labels(labels_path);
  if (classes.size() != images.extent(0))
    throw parse_error("image/label counts differ: " +
                      std::to_string(images.extent(0)) + " vs " +
                      std::to_string(classes.size()));
  if (limit > 0 && limit < images.extent(0)) {
    const std::size_t h = images.extent(1), w = images.extent(2);
    Tensor head({limit, h, w});
    std::copy(images.data(), images.data() + limit * h * w, head.data());
    images = std::move(head);
    classes.resize(limit);
  }
  LdlDataset ds =
      build_synthetic(images, classes, label_count, label_sigma, pca_dim);
  write_ldl_file(ds, out);
  std::cout << "wrote " << out << ": m=" << ds.size()
            << " n=" << ds.feature_dim() << " c=" << ds.label_dim() << "\n";
}

inline void cmd_train(const std::string& data, const std::string& out,
                      const std::string& trace_path, TrainConfig cfg,
                      std::size_t workers) {
  LdlDataset ds = parse_ldl_file(data);
  const Scaler scaler = zscore_fit(ds.features);
  const Tensor x = scaler.apply(ds.features);
  TabMixerModel model = TabMixerModel::init(
      ds.feature_dim(), ds.label_dim(), derive_seed(cfg.seed, 0x7a11),
      cfg.model.blocks, cfg.model.hidden, cfg.model.learner_hidden);
  NoiseSource noise(derive_seed(cfg.seed, 0x7a12));
  cfg.threads = workers;
  const TrainResult result = train_model(model, x, ds.labels, cfg, noise);
  save_checkpoint(model, out, &scaler);
  if (!trace_path.empty()) {
    std::ofstream tr(trace_path, std::ios::binary);
    if (!tr) throw error("cannot write " + trace_path);
    tr << "phase,epoch,loss\n";
    for (std::size_t e = 0; e < result.pretrain_trace.size(); ++e)
      tr << "pretrain," << e << ',' << fmt_g(result.pretrain_trace[e]) << '\n';
    for (std::size_t e = 0; e < result.train_trace.size(); ++e)
      tr << "train," << e << ',' << fmt_g(result.train_trace[e]) << '\n';
  }
  std::cout << "wrote " << out << " (final loss "
            << fmt_g(result.train_trace.back()) << ")\n";
}

inline void cmd_eval(const std::string& data, const std::string& model_path,
                     const std::string& out, std::uint64_t seed, bool no_fa) {
  Checkpoint ck = load_checkpoint(model_path);
  LdlDataset ds = parse_ldl_file(data);
  if (ck.model.n != ds.feature_dim() || ck.model.c != ds.label_dim())
    throw dim_error("checkpoint dims do not match the dataset");
  const Tensor x =
      ck.scaler ? ck.scaler->apply(ds.features) : ds.features;
  NoiseSource noise(derive_seed(seed, 0xe7a1));
  MetricsReport report;
  report.add(evaluate_model(ck.model, x, ds.labels, noise,
                            no_fa ? PredictMode::tiled
                                  : PredictMode::augmented));
  report.write_csv(out);
  print_report(report);
}

inline void cmd_cv(const std::string& data, const std::string& out,
                   const std::string& folds_out, const TrainConfig& cfg,
                   std::size_t k, std::size_t repeats, std::size_t workers) {
  LdlDataset ds = parse_ldl_file(data);
  const CvResult result = run_cv(ds, cfg, k, repeats, workers);
  result.report.write_csv(out);
  if (!folds_out.empty()) write_fold_csv(folds_out, result.report, k);
  print_report(result.report);
}

inline void cmd_ablate(const std::string& data, const std::string& out,
                       const TrainConfig& cfg, std::size_t k,
                       std::size_t repeats, std::size_t workers) {
  LdlDataset ds = parse_ldl_file(data);
  TrainConfig full = cfg, wo_fa = cfg, wo_pt = cfg;
  full.with_fa = full.with_pt = true;
  wo_fa.with_fa = false;
  wo_fa.with_pt = true;
  wo_pt.with_fa = true;
  wo_pt.with_pt = false;
  const MetricsReport r_full = run_cv(ds, full, k, repeats, workers).report;
  const MetricsReport r_wo_fa = run_cv(ds, wo_fa, k, repeats, workers).report;
  const MetricsReport r_wo_pt = run_cv(ds, wo_pt, k, repeats, workers).report;

  std::ofstream os(out, std::ios::binary);
  if (!os) throw error("cannot write " + out);
  os << "metric,direction,full_mean,full_std,wo_fa_mean,wo_fa_std,"
        "wo_pt_mean,wo_pt_std\n";
  const MetricValues fm = r_full.mean(), fs = r_full.stddev();
  const MetricValues am = r_wo_fa.mean(), as = r_wo_fa.stddev();
  const MetricValues pm = r_wo_pt.mean(), ps = r_wo_pt.stddev();
  for (std::size_t i = 0; i < kMetricCount; ++i)
    os << metric_names()[i] << ','
       << (metric_ascending()[i] ? "up" : "down") << ',' << fmt_g(fm[i]) << ','
       << fmt_g(fs[i]) << ',' << fmt_g(am[i]) << ',' << fmt_g(as[i]) << ','
       << fmt_g(pm[i]) << ',' << fmt_g(ps[i]) << '\n';
  std::cout << "full model:\n";
  print_report(r_full);
  std::cout << "w/o FA:\n";
  print_report(r_wo_fa);
  std::cout << "w/o PT:\n";
  print_report(r_wo_pt);
}

inline void cmd_noise(const std::string& data, const std::string& out,
                      const std::vector<double>& sigmas,
                      const TrainConfig& cfg, std::size_t k,
                      std::size_t repeats, std::size_t workers) {
  LdlDataset ds = parse_ldl_file(data);
  std::ofstream os(out, std::ios::binary);
  if (!os) throw error("cannot write " + out);
  os << "sigma,metric,direction,mean,std\n";
  for (std::size_t si = 0; si < sigmas.size(); ++si) {
    LdlDataset noisy = ds;
    noisy.features = inject_feature_noise(
        ds.features, sigmas[si], derive_seed(cfg.seed, 0x4015e, si));
    const MetricsReport report = run_cv(noisy, cfg, k, repeats, workers).report;
    const MetricValues m = report.mean(), s = report.stddev();
    for (std::size_t i = 0; i < kMetricCount; ++i)
      os << fmt_g(sigmas[si]) << ',' << metric_names()[i] << ','
         << (metric_ascending()[i] ? "up" : "down") << ',' << fmt_g(m[i])
         << ',' << fmt_g(s[i]) << '\n';
    std::cout << "sigma " << fmt_g(sigmas[si]) << ":\n";
    print_report(report);
  }
}

inline void cmd_score(const std::string& pred_path, const std::string& data,
                      const std::string& out) {
  LdlDataset ds = parse_ldl_file(data);
  std::ifstream in(pred_path, std::ios::binary);
  if (!in) throw parse_error("cannot open " + pred_path);
  const std::size_t m = ds.size(), c = ds.label_dim();
  Tensor pred({m, c});
  std::string line;
  for (std::size_t i = 0; i < m; ++i) {
    if (!std::getline(in, line))
      throw parse_error(pred_path + ": line " + std::to_string(i + 1) +
                        ": unexpected end of file");
    const std::vector<double> row = ldl::detail::parse_numbers(line, i + 1);
    if (row.size() != c)
      throw parse_error(pred_path + ": line " + std::to_string(i + 1) +
                        ": expected " + std::to_string(c) + " values");
    for (std::size_t j = 0; j < c; ++j) pred(i, j) = row[j];
  }
  MetricsReport report;
  for (std::size_t i = 0; i < m; ++i) {
    std::span<const double> p(pred.data() + i * c, c);
    std::span<const double> t(ds.labels.data() + i * c, c);
    validate_distribution_row(p, i, "pred");
    report.add(all_metrics(p, t));
  }
  report.write_csv(out);
  print_report(report);
}

inline int cmd_check() {
  const std::vector<CheckResult> results = run_verification_suite();
  bool ok = true;
  for (const CheckResult& r : results) {
    std::cout << (r.pass ? "PASS " : "FAIL ") << r.name
              << "  err=" << fmt_g(r.value) << "  tol=" << fmt_g(r.tol)
              << "\n";
    ok = ok && r.pass;
  }
  std::cout << (ok ? "all checks passed\n" : "CHECK FAILURES\n");
  return ok ? 0 : 1;
}

}  // namespace detail

/// Parse argv (without the program name) and run one subcommand.
/// Exit status: 0 ok, 1 runtime failure, 2 usage error.
inline int dispatch(std::vector<std::string> args) {
  CLI::App app{"TabMixer label-distribution learning toolkit"};
  app.name("ldl");
  app.require_subcommand(1);
  int exit_code = 0;

  // synth
  auto* synth = app.add_subcommand(
      "synth", "Build a synthetic LDL dataset from IDX images");
  detail::Overlay synth_overlay(synth);
  struct {
    std::string images, labels, out, config;
    std::size_t label_count = 56, pca = 28, limit = 0;
    double label_sigma = 0.5;
  } so;
  synth->add_option("--images", so.images, "IDX image file")->required();
  synth->add_option("--labels", so.labels, "IDX label file")->required();
  synth->add_option("--out", so.out, "Output dataset path")->required();
  synth->add_option("--labels-count", so.label_count, "Label space size");
  synth->add_option("--label-sigma", so.label_sigma, "Gaussian label std");
  synth->add_option("--pca", so.pca, "PCA output dimension");
  synth->add_option("--limit", so.limit, "Use only the first N images");
  synth->add_option("--config", so.config, "key = value defaults file");
  synth_overlay.on_string("images", &so.images);
  synth_overlay.on_string("labels", &so.labels);
  synth_overlay.on_string("out", &so.out);
  synth_overlay.on_size("labels-count", &so.label_count);
  synth_overlay.on_double("label-sigma", &so.label_sigma);
  synth_overlay.on_size("pca", &so.pca);
  synth_overlay.on_size("limit", &so.limit);
  synth->callback([&] {
    synth_overlay.apply(so.config);
    detail::cmd_synth(so.images, so.labels, so.out, so.label_count,
                      so.label_sigma, so.pca, so.limit);
  });

  // train
  auto* train = app.add_subcommand("train", "Train on a whole dataset");
  detail::Overlay train_overlay(train);
  TrainerOpts to;
  std::string train_data, train_out, train_trace;
  train->add_option("--data", train_data, "Dataset path")->required();
  train->add_option("--out", train_out, "Checkpoint path (TBMX)")->required();
  train->add_option("--trace", train_trace, "Loss trace CSV path");
  to.register_core(train, train_overlay);
  train_overlay.on_string("data", &train_data);
  train_overlay.on_string("out", &train_out);
  train_overlay.on_string("trace", &train_trace);
  train->callback([&] {
    const TrainConfig cfg = to.finalize(train_overlay);
    detail::cmd_train(train_data, train_out, train_trace, cfg, to.workers);
  });

  // eval
  auto* eval = app.add_subcommand("eval", "Score a checkpoint on a dataset");
  detail::Overlay eval_overlay(eval);
  struct {
    std::string data, model, out, config;
    std::uint64_t seed = 1024;
    bool no_fa = false;
  } eo;
  eval->add_option("--data", eo.data, "Dataset path")->required();
  eval->add_option("--model", eo.model, "Checkpoint path")->required();
  eval->add_option("--out", eo.out, "Report CSV path")->required();
  eval->add_option("--seed", eo.seed, "Evaluation noise seed");
  eval->add_flag("--no-fa", eo.no_fa, "Evaluate on the tiled path");
  eval->add_option("--config", eo.config, "key = value defaults file");
  eval_overlay.on_string("data", &eo.data);
  eval_overlay.on_string("model", &eo.model);
  eval_overlay.on_string("out", &eo.out);
  eval_overlay.on_u64("seed", &eo.seed);
  eval_overlay.on_bool("no-fa", &eo.no_fa);
  eval->callback([&] {
    eval_overlay.apply(eo.config, &eo.seed);
    detail::cmd_eval(eo.data, eo.model, eo.out, eo.seed, eo.no_fa);
  });

  // cv
  auto* cv = app.add_subcommand("cv", "Repeated k-fold cross-validation");
  detail::Overlay cv_overlay(cv);
  TrainerOpts cvo;
  std::string cv_data, cv_out, cv_folds_out;
  cv->add_option("--data", cv_data, "Dataset path")->required();
  cv->add_option("--out", cv_out, "Aggregate report CSV path")->required();
  cv->add_option("--folds-out", cv_folds_out, "Per-fold CSV path");
  cvo.register_core(cv, cv_overlay);
  cvo.register_folds(cv, cv_overlay);
  cv_overlay.on_string("data", &cv_data);
  cv_overlay.on_string("out", &cv_out);
  cv_overlay.on_string("folds-out", &cv_folds_out);
  cv->callback([&] {
    const TrainConfig cfg = cvo.finalize(cv_overlay);
    detail::cmd_cv(cv_data, cv_out, cv_folds_out, cfg, cvo.k, cvo.repeats,
                   cvo.workers);
  });

  // ablate
  auto* ablate =
      app.add_subcommand("ablate", "Full vs w/o FA vs w/o PT comparison");
  detail::Overlay ablate_overlay(ablate);
  TrainerOpts abo;
  std::string ab_data, ab_out;
  ablate->add_option("--data", ab_data, "Dataset path")->required();
  ablate->add_option("--out", ab_out, "Side-by-side CSV path")->required();
  abo.register_core(ablate, ablate_overlay);
  abo.register_folds(ablate, ablate_overlay);
  ablate_overlay.on_string("data", &ab_data);
  ablate_overlay.on_string("out", &ab_out);
  ablate->callback([&] {
    const TrainConfig cfg = abo.finalize(ablate_overlay);
    detail::cmd_ablate(ab_data, ab_out, cfg, abo.k, abo.repeats, abo.workers);
  });

  // noise
  auto* noise =
      app.add_subcommand("noise", "Noise-robustness sweep over sigma");
  detail::Overlay noise_overlay(noise);
  TrainerOpts no;
  std::string no_data, no_out, no_sigmas = "0.1,0.5,1.0";
  noise->add_option("--data", no_data, "Dataset path")->required();
  noise->add_option("--out", no_out, "Report CSV path")->required();
  noise->add_option("--sigmas", no_sigmas, "Comma-separated noise stds");
  no.register_core(noise, noise_overlay);
  no.register_folds(noise, noise_overlay);
  noise_overlay.on_string("data", &no_data);
  noise_overlay.on_string("out", &no_out);
  noise_overlay.on_string("sigmas", &no_sigmas);
  noise->callback([&] {
    const TrainConfig cfg = no.finalize(noise_overlay);
    detail::cmd_noise(no_data, no_out, detail::parse_sigma_list(no_sigmas),
                      cfg, no.k, no.repeats, no.workers);
  });

  // score
  auto* score =
      app.add_subcommand("score", "Score an external prediction file");
  detail::Overlay score_overlay(score);
  struct {
    std::string pred, data, out, config;
  } sc;
  score->add_option("--pred", sc.pred, "Predictions (m rows x c values)")
      ->required();
  score->add_option("--data", sc.data, "Dataset with target labels")
      ->required();
  score->add_option("--out", sc.out, "Report CSV path")->required();
  score->add_option("--config", sc.config, "key = value defaults file");
  score_overlay.on_string("pred", &sc.pred);
  score_overlay.on_string("data", &sc.data);
  score_overlay.on_string("out", &sc.out);
  score->callback([&] {
    score_overlay.apply(sc.config);
    detail::cmd_score(sc.pred, sc.data, sc.out);
  });

  // check
  auto* check =
      app.add_subcommand("check", "Run the gradient and invariant suite");
  check->callback([&] { exit_code = detail::cmd_check(); });

  try {
    std::reverse(args.begin(), args.end());
    app.parse(std::move(args));
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const usage_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return exit_code;
}

}  // namespace ldl::cli

#endif  // LDL_CLI_HPP
