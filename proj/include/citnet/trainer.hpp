#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "citnet/config.hpp"
#include "citnet/optim.hpp"

// Training loop and experiment harness. Samples are shuffled once with the
// experiment seed and split train/test by the configured fraction;
// normalization statistics come from the training split only. Mini-batches
// keep the last partial batch, except a training batch of one, which batch
// norm cannot use and which is skipped with a notice. The returned
// parameters are the best-test-accuracy checkpoint (an optimistic
// selection rule; reports label accordingly). Train-split metrics are
// accumulated from the training-pass outputs; test metrics come from a
// separate inference pass per epoch.

namespace citnet {

struct EpochMetrics {
  int64_t epoch = 0;
  double train_loss = 0.0, train_acc = 0.0;
  double test_loss = 0.0, test_acc = 0.0;
  bool has_test = false;
};

struct Metrics {
  std::vector<EpochMetrics> epochs;
  std::vector<double> step_losses;  // first steps, for determinism checks
  double final_acc = 0.0;           // best test accuracy (train if no test)
  int64_t best_epoch = -1;
};

namespace detail {

enum SeedStream : uint64_t {
  kSplitStream = 0,
  kInitStream = 1,
  kShuffleStream = 2,
  kDropoutStream = 3,
};

}  // namespace detail

// Deterministic shuffled split: identical (dataset size, seed) gives
// identical index sets.
inline std::pair<std::vector<int64_t>, std::vector<int64_t>> split_dataset(
    size_t n, double train_fraction, uint64_t seed) {
  std::vector<int64_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(derive_seed(seed, detail::kSplitStream));
  rng.shuffle(idx.begin(), idx.end());
  const auto n_train = static_cast<size_t>(
      std::llround(train_fraction * static_cast<double>(n)));
  std::vector<int64_t> train(idx.begin(),
                             idx.begin() + static_cast<std::ptrdiff_t>(
                                               std::min(n_train, n)));
  std::vector<int64_t> test(idx.begin() + static_cast<std::ptrdiff_t>(
                                              std::min(n_train, n)),
                            idx.end());
  return {std::move(train), std::move(test)};
}

// Grids -> [n, B, H, W] tensor (optionally log1p+z-scored per band) plus
// labels.
template <typename T>
std::pair<Tensor<T>, std::vector<int64_t>> tensorize(
    const std::vector<SpatialFrequencyGrid>& grids,
    std::span<const int64_t> indices, const BandNormStats* norm) {
  if (indices.empty()) throw std::invalid_argument("tensorize: empty batch");
  const auto& first = grids[static_cast<size_t>(indices[0])];
  const int64_t b = first.n_bands, h = first.height, w = first.width;
  const int64_t hw = h * w;
  std::vector<T> data(static_cast<size_t>(indices.size()) *
                      static_cast<size_t>(b * hw));
  std::vector<int64_t> labels(indices.size());
  for (size_t s = 0; s < indices.size(); ++s) {
    const auto& g = grids[static_cast<size_t>(indices[s])];
    if (g.n_bands != b || g.height != h || g.width != w) {
      throw std::invalid_argument("tensorize: inconsistent grid shapes");
    }
    labels[s] = g.label;
    T* dst = data.data() + s * static_cast<size_t>(b * hw);
    for (int64_t bi = 0; bi < b; ++bi) {
      for (int64_t i = 0; i < hw; ++i) {
        double v = static_cast<double>(g.data[static_cast<size_t>(bi * hw + i)]);
        if (norm != nullptr) {
          v = (std::log1p(v) - norm->mean[static_cast<size_t>(bi)]) /
              norm->stdev[static_cast<size_t>(bi)];
        }
        dst[bi * hw + i] = static_cast<T>(v);
      }
    }
  }
  return {Tensor<T>::from_data({static_cast<int64_t>(indices.size()), b, h, w},
                               std::move(data)),
          std::move(labels)};
}

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
  int64_t count = 0;
};

// Inference-mode pass: no dropout, batch norm running statistics.
template <typename T>
EvalResult evaluate(Model<T>& model,
                    const std::vector<SpatialFrequencyGrid>& grids,
                    std::span<const int64_t> indices,
                    const BandNormStats* norm, int64_t batch_size) {
  EvalResult out;
  NoGradGuard no_grad;
  for (size_t i0 = 0; i0 < indices.size();
       i0 += static_cast<size_t>(batch_size)) {
    const size_t i1 =
        std::min(indices.size(), i0 + static_cast<size_t>(batch_size));
    auto [batch, labels] = tensorize<T>(
        grids, indices.subspan(i0, i1 - i0), norm);
    for (int64_t lab : labels) {
      if (lab < 0 || lab >= model.config().num_classes) {
        throw std::invalid_argument("evaluate: label " + std::to_string(lab) +
                                    " outside the configured class count");
      }
    }
    Tensor<T> logits = model.forward(batch, Mode::kEval, nullptr);
    const double n = static_cast<double>(labels.size());
    out.loss += static_cast<double>(cross_entropy(logits, labels).item()) * n;
    out.accuracy += accuracy(logits, labels) * n;
    out.count += static_cast<int64_t>(labels.size());
  }
  if (out.count > 0) {
    out.loss /= static_cast<double>(out.count);
    out.accuracy /= static_cast<double>(out.count);
  }
  return out;
}

template <typename T>
struct TrainResult {
  ModelParams<T> best_params;
  Metrics metrics;
  BandNormStats norm;
  bool normalized = false;
};

template <typename T>
TrainResult<T> train(const std::vector<SpatialFrequencyGrid>& dataset,
                     const ExperimentConfig& cfg, std::ostream* log = nullptr) {
  cfg.validate();
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
  for (const auto& g : dataset) {
    if (g.label < 0 || g.label >= cfg.num_classes) {
      throw std::invalid_argument("train: label " + std::to_string(g.label) +
                                  " outside [0," +
                                  std::to_string(cfg.num_classes) + ")");
    }
    if (g.height != cfg.grid_h || g.width != cfg.grid_w) {
      throw std::invalid_argument(
          "train: dataset grid " + std::to_string(g.height) + "x" +
          std::to_string(g.width) + " does not match config " +
          std::to_string(cfg.grid_h) + "x" + std::to_string(cfg.grid_w));
    }
  }

  auto [train_idx, test_idx] =
      split_dataset(dataset.size(), cfg.train_fraction, cfg.seed);
  if (train_idx.empty()) throw std::invalid_argument("train: empty train split");
  if (test_idx.empty() && log) {
    *log << "note: train_fraction " << cfg.train_fraction
         << " leaves no test split; best checkpoint tracks train accuracy\n";
  }

  TrainResult<T> result;
  result.normalized = cfg.normalize;
  if (cfg.normalize) result.norm = compute_band_norm(dataset, train_idx);
  const BandNormStats* norm = cfg.normalize ? &result.norm : nullptr;

  Model<T> model(cfg.model_config(dataset[0].n_bands), cfg.model_variant(),
                 derive_seed(cfg.seed, detail::kInitStream));
  Adam<T> opt(cfg.lr);
  Rng shuffle_rng(derive_seed(cfg.seed, detail::kShuffleStream));
  Rng dropout_rng(derive_seed(cfg.seed, detail::kDropoutStream));

  Metrics& metrics = result.metrics;
  double best = -1.0;
  int64_t stagnant = 0;
  int64_t global_step = 0;
  constexpr size_t kKeepStepLosses = 10;

  for (int64_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(train_idx.begin(), train_idx.end());
    double loss_sum = 0.0, acc_sum = 0.0;
    int64_t seen = 0;
    for (size_t i0 = 0; i0 < train_idx.size();
         i0 += static_cast<size_t>(cfg.batch_size)) {
      const size_t i1 = std::min(train_idx.size(),
                                 i0 + static_cast<size_t>(cfg.batch_size));
      if (i1 - i0 == 1) {
        if (log) {
          *log << "note: skipping final training batch of 1 (batch norm "
                  "needs >= 2 samples)\n";
        }
        continue;
      }
      auto [batch, labels] = tensorize<T>(
          dataset, std::span<const int64_t>(train_idx).subspan(i0, i1 - i0),
          norm);
      Tensor<T> logits = model.forward(batch, Mode::kTrain, &dropout_rng);
      Tensor<T> loss = cross_entropy(logits, labels);
      const double loss_v = static_cast<double>(loss.item());
      ++global_step;
      if (!std::isfinite(loss_v)) {
        throw std::runtime_error("train: non-finite loss at step " +
                                 std::to_string(global_step));
      }
      if (metrics.step_losses.size() < kKeepStepLosses) {
        metrics.step_losses.push_back(loss_v);
      }
      loss.backward();
      opt.step(model.params());
      const double n = static_cast<double>(labels.size());
      loss_sum += loss_v * n;
      acc_sum += accuracy(logits, labels) * n;
      seen += static_cast<int64_t>(labels.size());
    }
    if (seen == 0) {
      throw std::runtime_error("train: no usable training batches");
    }

    EpochMetrics em;
    em.epoch = epoch;
    em.train_loss = loss_sum / static_cast<double>(seen);
    em.train_acc = acc_sum / static_cast<double>(seen);
    if (!test_idx.empty()) {
      const EvalResult ev =
          evaluate(model, dataset, test_idx, norm, cfg.batch_size);
      em.test_loss = ev.loss;
      em.test_acc = ev.accuracy;
      em.has_test = true;
    }
    metrics.epochs.push_back(em);
    if (log) {
      *log << "epoch " << epoch << " train_loss " << em.train_loss
           << " train_acc " << em.train_acc;
      if (em.has_test) {
        *log << " test_loss " << em.test_loss << " test_acc " << em.test_acc;
      }
      *log << "\n";
    }

    const double selector = em.has_test ? em.test_acc : em.train_acc;
    if (selector > best) {
      best = selector;
      metrics.best_epoch = epoch;
      result.best_params = model.params().clone();
      stagnant = 0;
    } else {
      ++stagnant;
    }
    if (cfg.target_train_acc > 0.0 && em.train_acc >= cfg.target_train_acc) {
      if (log) *log << "reached target train accuracy, stopping\n";
      break;
    }
    if (cfg.target_test_acc > 0.0 && em.has_test &&
        em.test_acc >= cfg.target_test_acc) {
      if (log) *log << "reached target test accuracy, stopping\n";
      break;
    }
    if (cfg.early_stop_patience > 0 && stagnant >= cfg.early_stop_patience) {
      if (log) *log << "no improvement for " << stagnant << " epochs, stopping\n";
      break;
    }
  }
  metrics.final_acc = best;
  return result;
}

inline void write_metrics_csv(const Metrics& metrics, const std::string& variant,
                              uint64_t seed, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) {
    throw std::runtime_error("metrics: cannot open '" + path.string() + "'");
  }
  os << "variant,seed,epoch,split,loss,accuracy\n";
  for (const auto& e : metrics.epochs) {
    os << variant << "," << seed << "," << e.epoch << ",train," << e.train_loss
       << "," << e.train_acc << "\n";
    if (e.has_test) {
      os << variant << "," << seed << "," << e.epoch << ",test," << e.test_loss
         << "," << e.test_acc << "\n";
    }
  }
}

// ---------------------------------------------------------------------------
// Ablation suite: every variant x every seed, means and stds across seeds.
// A variant failure marks its row and the suite continues.
// ---------------------------------------------------------------------------

struct AblationRow {
  std::string key;
  std::string label;
  std::vector<double> accs;
  bool failed = false;
  std::string error;

  double mean() const {
    if (accs.empty()) return 0.0;
    return std::accumulate(accs.begin(), accs.end(), 0.0) /
           static_cast<double>(accs.size());
  }
  // Sample standard deviation across seeds; absent for fewer than 2 runs.
  bool has_std() const { return accs.size() >= 2; }
  double stdev() const {
    if (!has_std()) return 0.0;
    const double m = mean();
    double acc = 0.0;
    for (double v : accs) acc += (v - m) * (v - m);
    return std::sqrt(acc / static_cast<double>(accs.size() - 1));
  }
};

template <typename T>
std::vector<AblationRow> run_ablation_suite(
    const std::vector<SpatialFrequencyGrid>& dataset,
    const ExperimentConfig& base_cfg, const std::vector<uint64_t>& seeds,
    std::ostream* log = nullptr) {
  if (seeds.empty()) {
    throw std::invalid_argument("ablation: need at least one seed");
  }
  std::vector<AblationRow> rows;
  for (ModelVariant v : all_variants()) {
    AblationRow row;
    row.key = variant_key(v);
    row.label = variant_label(v);
    for (uint64_t seed : seeds) {
      ExperimentConfig cfg = base_cfg;
      cfg.variant = row.key;
      cfg.seed = seed;
      try {
        TrainResult<T> r = train<T>(dataset, cfg, nullptr);
        row.accs.push_back(r.metrics.final_acc);
        if (log) {
          *log << row.key << " seed " << seed << " acc "
               << r.metrics.final_acc << "\n";
        }
      } catch (const std::exception& e) {
        row.failed = true;
        row.error = e.what();
        if (log) {
          *log << row.key << " seed " << seed << " FAILED: " << e.what()
               << "\n";
        }
      }
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

inline void write_ablation_csv(const std::vector<AblationRow>& rows,
                               const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) {
    throw std::runtime_error("ablation: cannot open '" + path.string() + "'");
  }
  os << "variant,mean_acc,std_acc,n_seeds\n";
  for (const auto& r : rows) {
    if (r.failed && r.accs.empty()) {
      os << r.key << ",failed,," << r.accs.size() << "\n";
      continue;
    }
    os << r.key << "," << r.mean() << ",";
    if (r.has_std()) os << r.stdev();
    os << "," << r.accs.size() << "\n";
  }
}

// Fixed-width table with the row labels of the comparison tables. STD is
// across seeds (no multi-subject sessions here) and is shown only for 2+
// runs.
inline std::string ablation_table_text(const std::vector<AblationRow>& rows) {
  size_t label_w = 6;
  for (const auto& r : rows) label_w = std::max(label_w, r.label.size());
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(label_w) + 2) << "Method"
     << std::right << std::setw(10) << "ACC (%)" << std::setw(10) << "STD (%)"
     << std::setw(9) << "n_seeds" << "\n";
  os << std::string(label_w + 2 + 29, '-') << "\n";
  for (const auto& r : rows) {
    os << std::left << std::setw(static_cast<int>(label_w) + 2) << r.label;
    if (r.failed && r.accs.empty()) {
      os << std::right << std::setw(10) << "FAILED" << std::setw(10) << "-"
         << std::setw(9) << r.accs.size() << "\n";
      continue;
    }
    os << std::right << std::setw(10) << std::fixed << std::setprecision(2)
       << r.mean() * 100.0;
    if (r.has_std()) {
      os << std::setw(10) << std::fixed << std::setprecision(2)
         << r.stdev() * 100.0;
    } else {
      os << std::setw(10) << "-";
    }
    os << std::setw(9) << r.accs.size();
    if (r.failed) os << "  (some seeds failed)";
    os << "\n";
  }
  return os.str();
}

}  // namespace citnet
