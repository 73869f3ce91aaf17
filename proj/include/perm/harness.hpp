#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "perm/baselines.hpp"
#include "perm/datagen.hpp"
#include "perm/discrepancy.hpp"
#include "perm/single_loop.hpp"

namespace perm {

enum class Method { kTwoStage, kSingleLoop, kWerm, kLocalizedFedAvg };

std::string_view to_string(Method m);
Method method_from_string(std::string_view name);

/// Documented configuration key with its default ("" means unset).
struct ConfigKey {
  const char* name;
  const char* default_value;
  const char* help;
};

/// Every key accepted by config files and `--<key>` flags.
const std::vector<ConfigKey>& config_keys();

/// Fully typed run configuration. Built from flat key=value pairs.
struct RunConfig {
  Method method = Method::kTwoStage;

  // Data source: synthetic | clusters | csv | dir.
  std::string data = "synthetic";
  SyntheticSpec synthetic;
  std::filesystem::path csv_path;
  CsvOptions csv;
  PartitionSpec partition;
  std::size_t n_classes = 10;
  std::size_t rows_per_class = 250;
  double separation = 3.0;
  std::filesystem::path data_dir;

  LossModel loss;

  std::optional<double> gamma;  // global / Local SGD step; default from the schedule
  std::optional<double> eta;    // personalized step; default from the schedule
  double gamma_c = 1.0;
  double eta_c = 1.0;
  std::size_t local_steps = 5;                 // K
  std::optional<std::size_t> global_rounds;    // two-stage stage-1 rounds; default N
  std::size_t rounds = 20;                     // R: epochs (PERM) or rounds (baselines)
  AlphaSolverConfig alpha;
  std::size_t batch = 32;                      // M, capped at each n_i
  std::size_t fine_tune_steps = 50;
  Domain domain;
  std::uint64_t seed = 0;
  Sampling sampling = Sampling::kSingleSample;
  std::size_t log_every = 1;
  std::string suboptimality = "auto";  // auto (ridge only) | on | off
  bool alpha_trace = false;

  /// Normalized key=value pairs, echoed to `config_used`.
  std::map<std::string, std::string> values;
};

/// Validates and converts raw pairs; unknown keys and bad values raise
/// ConfigError naming the key. `seed` is mandatory.
RunConfig parse_run_config(const std::map<std::string, std::string>& raw);

Federation build_federation(const RunConfig& cfg);

/// One row per (method, epoch, client).
struct MetricsRow {
  std::string method;
  std::size_t epoch = 0;
  std::size_t round = 0;  // cumulative communication rounds
  std::size_t client = 0;
  double train_loss = 0.0;
  double eval_loss = 0.0;
  double eval_accuracy = 0.0;
  std::optional<double> suboptimality;
  std::size_t messages = 0;
  std::optional<double> global_loss;
  std::optional<double> alpha_drift;
  long long elapsed_ns = 0;  // wall clock of the epoch; written to timing.csv only
};

/// Step sizes and constants actually used by a run.
struct ResolvedSteps {
  double smoothness = 0.0;
  double strong_convexity = 0.0;
  double gamma = 0.0;
  double eta = 0.0;
  std::size_t global_rounds = 0;
  std::size_t batch = 0;
};

struct RunOutcome {
  Method method;
  std::vector<Vector> models;  // final per-client models
  ClientMetrics final_metrics;
  std::vector<MixWeights> alphas;  // PERM methods only
  std::optional<DissimilarityMatrix> dissimilarity;
  Vector global_model;
  Budget budget;
  ResolvedSteps steps;
  std::vector<MetricsRow> rows;
  std::vector<std::vector<MixWeights>> alpha_trace;  // per epoch, when requested
  std::size_t safety_clamps = 0;
};

/// Communication rounds a method will use under `cfg` for N clients.
std::size_t communication_rounds(const RunConfig& cfg, std::size_t n_clients);

/// Runs one method end to end in memory.
RunOutcome run_method(const RunConfig& cfg, const Federation& fed);

/// metrics.csv header shared by every method.
std::string metrics_header();
std::string format_metrics(const std::vector<MetricsRow>& rows, bool with_header = true);

/// alpha_matrix.csv (6 significant digits) plus alpha_heatmap.pgm: plain
/// ASCII PGM, one pixel per entry, scaled so the largest entry is white.
void emit_heatmap(const std::vector<MixWeights>& alphas, const std::filesystem::path& dir);

/// Writes metrics.csv, timing.csv, config_used, models.csv and, for PERM
/// methods, alpha_matrix.csv, alpha_heatmap.pgm, dissimilarity.csv.
void write_run_outputs(const RunConfig& cfg, const RunOutcome& outcome, const std::filesystem::path& dir);

struct SummaryRow {
  std::string method;
  std::size_t runs = 0;
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;
  double mean_loss = 0.0;
  double std_loss = 0.0;
};

struct SummaryTable {
  std::vector<SummaryRow> rows;
  std::string to_csv() const;
  std::string to_text() const;
  const SummaryRow* find(std::string_view method) const;
};

/// Final-epoch personalized accuracy and eval loss per method: each file
/// contributes its client mean; mean and sample std are taken across files.
/// Throws IoError listing any (method, client) pairs missing a final row.
SummaryTable summarize(const std::vector<std::filesystem::path>& metrics_files);

/// Entry point for the command-line tool.
int cli_main(int argc, char** argv);

}  // namespace perm
