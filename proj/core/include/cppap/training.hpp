#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cppap/data.hpp"
#include "cppap/loss.hpp"
#include "cppap/model.hpp"
#include "cppap/stats.hpp"

namespace cppap {

struct TrainConfig {
  double lr = 1e-4;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 100;
  std::size_t patience = 10;  // epochs without val-J improvement before stopping
};

struct EpochStats {
  std::size_t epoch = 0;
  double train_j = 0;
  double val_j = 0;
};

struct RunResult {
  std::string label;
  int fold = -1;
  std::uint64_t seed = 0;
  double val_mse = 0;
  std::size_t epochs_run = 0;
  std::vector<EpochStats> curve;
  std::string error;  // non-empty when the run failed
};

struct TrainOutput {
  RunResult result;
  Model model;  // best-validation-J weights
};

// Mini-batch Adam on the probabilistic loss with best-checkpoint retention
// and early stopping. Seed fixes init, shuffling, dropout, and silent-gain
// draws; identical inputs give bitwise-identical results.
TrainOutput train(const ModelConfig& cfg, const std::vector<Sample>& train_samples,
                  const std::vector<Sample>& val_samples, std::uint64_t seed,
                  const TrainConfig& tc = {});

struct EvalResult {
  double mse = 0;
  std::vector<double> labels;
  std::vector<PredictedDistribution> predictions;
};
EvalResult evaluate(Model& model, const std::vector<Sample>& samples);

struct AblationRow {
  std::string label;
  std::size_t runs = 0;
  double mean_mse = 0;
  double std_mse = 0;
  double pct_delta = 0;                 // 100*(base-cfg)/base, + = improvement
  std::optional<double> p_adj;          // empty for the baseline row
  bool significant = false;
};

struct AblationReport {
  std::vector<RunResult> runs;
  std::vector<AblationRow> rows;
};

// Grid of variant labels x folds x seeds; failed runs are recorded, not
// fatal. Runs execute on `threads` workers; output is order-independent.
AblationReport run_ablation(const std::vector<Sample>& samples,
                            const ModelConfig& base_cfg,
                            const std::vector<std::string>& labels,
                            const std::vector<int>& folds,
                            const std::vector<std::uint64_t>& seeds,
                            const TrainConfig& tc, std::size_t threads = 1,
                            const std::string& checkpoint_dir = "");

void write_runs_csv(const std::vector<RunResult>& runs, const std::string& path);
void write_ablation_csv(const AblationReport& report, const std::string& path);
std::vector<RunResult> read_runs_csv(const std::string& path);

struct SweepPoint {
  double grid_value = 0;
  double mean_prediction = 0;
};

struct SweepResult {
  std::size_t dim = 0;
  double training_mean = 0;  // dataset mean of the swept dimension
  std::vector<SweepPoint> points;
};

// Ceteris-paribus sweep: p[dim] walks the grid, the other dims sit at their
// dataset means, and predictions are averaged over every sample. Rejects
// models trained without the participant modality.
SweepResult participant_sweep(Model& model, const std::vector<Sample>& samples,
                              std::size_t dim, const std::vector<double>& grid);

void write_sweep_csv(const SweepResult& sweep, const std::string& path);
void write_sweep_svg(const SweepResult& sweep, const std::string& path);

}  // namespace cppap
