#include "perm/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "perm/errors.hpp"
#include "perm/io.hpp"
#include "perm/parallel.hpp"

namespace perm {
namespace {

using Clock = std::chrono::steady_clock;

const std::vector<ConfigKey> kKeys = {
    {"method", "two-stage", "two-stage | single-loop | werm | localized-fedavg"},
    {"data", "synthetic", "data source: synthetic | clusters | csv | dir"},
    {"synthetic", "two-group", "synthetic preset: two-group (fixed 50-client setup) | custom (use the keys below)"},
    {"n_clients", "50", "number of clients"},
    {"dim", "60", "feature dimension (synthetic and clusters)"},
    {"samples_per_client", "500", "synthetic samples per client"},
    {"mu1", "0.2", "group-A feature mean"},
    {"mu2", "-0.2", "group-B feature mean"},
    {"mu_w", "0.1", "labeling-model mean"},
    {"sigma_exponent", "1.2", "covariance decay: Sigma_kk = k^-exponent"},
    {"train_fraction", "0.8", "training share of each shard"},
    {"data_seed", "", "seed for data generation and partitioning (default: seed)"},
    {"csv", "", "CSV file for data=csv"},
    {"csv_header", "true", "CSV has a header row"},
    {"label_col", "label", "label column (name or zero-based index)"},
    {"class_col", "", "class column for by-label partitioning (default: label column)"},
    {"partition", "homogeneous", "homogeneous | by-label"},
    {"classes_per_client", "1", "classes per client for by-label partitioning"},
    {"n_classes", "10", "clusters for data=clusters"},
    {"rows_per_class", "250", "rows per cluster for data=clusters"},
    {"separation", "3", "cluster-center scale for data=clusters"},
    {"data_dir", "", "exported federation directory for data=dir"},
    {"loss", "logistic", "logistic | ridge"},
    {"reg", "0.01", "l2 regularization coefficient"},
    {"gamma", "auto", "global-model step size"},
    {"gamma_c", "1", "multiplier on the default global step"},
    {"eta", "auto", "personalized-model step size"},
    {"eta_c", "1", "multiplier on the default personalized step"},
    {"K", "5", "local steps per round"},
    {"R_global", "auto", "two-stage: Local SGD rounds for the global model (default N)"},
    {"R", "20", "epochs (PERM methods) or rounds (baselines)"},
    {"t_alpha", "200", "projected-GD steps per mixing-weight solve"},
    {"lambda", "1", "mixing-weight regularizer"},
    {"M", "32", "single-loop global mini-batch size (full batch when >= n_i)"},
    {"fine_tune_steps", "50", "localized FedAvg fine-tuning steps"},
    {"diameter", "2000", "diameter of the l2-ball domain"},
    {"seed", "", "run seed (required)"},
    {"sampling", "single", "single (one sample per step) | full (exact gradients)"},
    {"log_every", "1", "log metrics every this many epochs (the last is always logged)"},
    {"suboptimality", "auto", "auto (ridge only) | on | off"},
    {"alpha_trace", "false", "dump alpha_trace/epoch_<r>.csv (single-loop)"},
    {"methods", "two-stage,single-loop,localized-fedavg,werm", "compare: methods to run"},
    {"seeds", "", "compare: comma-separated seeds (default: seed)"},
    {"budget", "auto", "compare: communication rounds per method"},
    {"allow_budget_mismatch", "false", "compare: permit unequal round budgets"},
};

class Reader {
 public:
  explicit Reader(const std::map<std::string, std::string>& values) : values_(values) {}

  const std::string& str(const std::string& key) const { return values_.at(key); }
  bool is_auto(const std::string& key) const { return str(key) == "auto" || str(key).empty(); }

  double real(const std::string& key) const {
    try {
      const double v = io::parse_double(str(key));
      if (!std::isfinite(v)) throw ConfigError(key, "must be finite");
      return v;
    } catch (const IoError&) {
      throw ConfigError(key, "expected a number, got '" + str(key) + "'");
    }
  }

  double positive(const std::string& key) const {
    const double v = real(key);
    if (!(v > 0.0)) throw ConfigError(key, "must be > 0, got " + str(key));
    return v;
  }

  std::uint64_t count(const std::string& key, std::uint64_t min_value = 0) const {
    const std::string& s = str(key);
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      if (s.empty() || s.front() == '-') throw std::invalid_argument("negative");
      v = std::stoull(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != s.size()) throw ConfigError(key, "expected a non-negative integer, got '" + s + "'");
    if (v < min_value) throw ConfigError(key, "must be >= " + std::to_string(min_value));
    return v;
  }

  bool flag(const std::string& key) const {
    const std::string& s = str(key);
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw ConfigError(key, "expected true or false, got '" + s + "'");
  }

  std::string choice(const std::string& key, std::initializer_list<const char*> options) const {
    const std::string& s = str(key);
    for (const char* o : options)
      if (s == o) return s;
    std::string allowed;
    for (const char* o : options) allowed += std::string(allowed.empty() ? "" : " | ") + o;
    throw ConfigError(key, "expected one of " + allowed + ", got '" + s + "'");
  }

 private:
  const std::map<std::string, std::string>& values_;
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  for (auto& cell : io::split_csv_line(s))
    if (!cell.empty()) out.push_back(cell);
  return out;
}

double mean_loss(const Federation& fed, const LossModel& model, const Vector& w) {
  double total = 0.0;
  for (const Shard& s : fed.shards) total += loss(model, w, s.train);
  return total / static_cast<double>(fed.size());
}

std::string opt(const std::optional<double>& v) { return v ? io::format_g(*v) : std::string(); }

// Collects per-client rows for one logged epoch.
class RowLogger {
 public:
  RowLogger(const RunConfig& cfg, const Federation& fed, std::vector<MetricsRow>& rows)
      : cfg_(cfg), fed_(fed), rows_(rows), last_(Clock::now()) {}

  bool wants(std::size_t epoch, std::size_t last_epoch) const {
    return epoch == last_epoch || epoch % cfg_.log_every == 0;
  }

  long long lap() {
    const auto now = Clock::now();
    const auto ns = std::chrono::duration_cast<std::chrono::nanoseconds>(now - last_).count();
    last_ = now;
    return ns;
  }

  void log(std::size_t epoch, std::size_t round, const std::vector<Vector>& models, std::size_t messages,
           const std::vector<double>* subopt, std::optional<double> global_loss, std::optional<double> drift,
           long long elapsed) {
    const ClientMetrics m = evaluate_clients(models, fed_, cfg_.loss);
    for (std::size_t i = 0; i < fed_.size(); ++i) {
      MetricsRow row;
      row.method = std::string(to_string(cfg_.method));
      row.epoch = epoch;
      row.round = round;
      row.client = i;
      row.train_loss = m.train_loss[i];
      row.eval_loss = m.eval_loss[i];
      row.eval_accuracy = m.eval_accuracy[i];
      if (subopt) row.suboptimality = (*subopt)[i];
      row.messages = messages;
      row.global_loss = global_loss;
      row.alpha_drift = drift;
      row.elapsed_ns = elapsed;
      rows_.push_back(std::move(row));
    }
  }

 private:
  const RunConfig& cfg_;
  const Federation& fed_;
  std::vector<MetricsRow>& rows_;
  Clock::time_point last_;
};

bool want_suboptimality(const RunConfig& cfg) {
  if (cfg.suboptimality == "on") return true;
  if (cfg.suboptimality == "off") return false;
  return cfg.loss.kind == LossKind::kRidge;
}

std::vector<double> suboptimality_against(const std::vector<Vector>& models, const std::vector<MixWeights>& alphas,
                                          const std::vector<Vector>& best, const Federation& fed,
                                          const LossModel& model) {
  std::vector<double> gap(models.size());
  for (std::size_t i = 0; i < models.size(); ++i)
    gap[i] = phi(alphas[i], models[i], fed, model) - phi(alphas[i], best[i], fed, model);
  return gap;
}

std::vector<Vector> reference_models(const std::vector<MixWeights>& alphas, const Federation& fed,
                                     const LossModel& model, const Domain& domain) {
  std::vector<Vector> best(alphas.size());
  parallel_for(alphas.size(), [&](std::size_t i) { best[i] = reference_minimizer(alphas[i], fed, model, domain); });
  return best;
}

LocalSgdConfig local_sgd_config(const RunConfig& cfg, double gamma, std::size_t rounds) {
  LocalSgdConfig sgd;
  sgd.step = gamma;
  sgd.local_steps = cfg.local_steps;
  sgd.rounds = rounds;
  sgd.seed = cfg.seed;
  sgd.sampling = cfg.sampling;
  sgd.domain = cfg.domain;
  return sgd;
}

RunOutcome run_two_stage(const RunConfig& cfg, const Federation& fed, RunOutcome out) {
  const std::size_t n = fed.size();
  const double L = out.steps.smoothness;
  const double mu = out.steps.strong_convexity;
  const std::size_t rg = out.steps.global_rounds;

  out.steps.gamma = cfg.gamma ? *cfg.gamma
                              : std::min(default_local_sgd_step(mu, rg, cfg.local_steps, cfg.gamma_c), 1.0 / L);
  out.global_model = local_sgd_global(fed, cfg.loss, local_sgd_config(cfg, out.steps.gamma, rg));

  const auto counts = fed.train_counts();
  out.dissimilarity = pairwise_dissimilarity(fed, cfg.loss, out.global_model);
  out.alphas = solve_all_alphas(*out.dissimilarity, counts, cfg.alpha);

  out.steps.eta = cfg.eta ? *cfg.eta
                          : std::min(default_shuffling_step(mu, n, cfg.local_steps, cfg.rounds, cfg.eta_c),
                                     personalized_step_cap(out.alphas, L));

  ShufflingConfig sh;
  sh.step = out.steps.eta;
  sh.local_steps = cfg.local_steps;
  sh.epochs = cfg.rounds;
  sh.smoothness = L;
  sh.seed = cfg.seed;
  sh.sampling = cfg.sampling;
  sh.domain = cfg.domain;

  const std::size_t stage1_messages = 2 * n * rg;
  const double global_loss = mean_loss(fed, cfg.loss, out.global_model);
  std::vector<Vector> best;
  if (want_suboptimality(cfg)) best = reference_models(out.alphas, fed, cfg.loss, cfg.domain);

  RowLogger logger(cfg, fed, out.rows);
  long long pending_ns = 0;
  auto observer = [&](std::size_t epoch, const std::vector<Vector>& models, const ShuffleStats& stats) {
    pending_ns += logger.lap();
    if (epoch == cfg.rounds || !logger.wants(epoch, cfg.rounds)) return;
    std::vector<double> gap;
    if (!best.empty()) gap = suboptimality_against(models, out.alphas, best, fed, cfg.loss);
    logger.log(epoch, rg + stats.rounds, models, stage1_messages + stats.messages, best.empty() ? nullptr : &gap,
               global_loss, std::nullopt, pending_ns);
    pending_ns = 0;
  };
  ShufflingResult res = run_shuffling(fed, cfg.loss, out.alphas, sh, {}, observer);
  pending_ns += logger.lap();

  std::vector<double> gap;
  if (!best.empty()) gap = suboptimality_against(res.v_hat, out.alphas, best, fed, cfg.loss);
  logger.log(cfg.rounds, rg + res.stats.rounds, res.v_hat, stage1_messages + res.stats.messages,
             best.empty() ? nullptr : &gap, global_loss, std::nullopt, pending_ns);

  out.models = std::move(res.v_hat);
  out.safety_clamps = res.stats.safety_clamps;
  out.budget = {rg + res.stats.rounds, rg * cfg.local_steps + cfg.rounds * n * cfg.local_steps,
                stage1_messages + res.stats.messages};
  return out;
}

RunOutcome run_single_loop_method(const RunConfig& cfg, const Federation& fed, RunOutcome out) {
  const std::size_t n = fed.size();
  const double L = out.steps.smoothness;
  const double mu = out.steps.strong_convexity;

  SingleLoopConfig sl;
  sl.personal.local_steps = cfg.local_steps;
  sl.personal.epochs = cfg.rounds;
  sl.personal.smoothness = L;
  sl.personal.seed = cfg.seed;
  sl.personal.sampling = cfg.sampling;
  sl.personal.domain = cfg.domain;
  sl.alpha = cfg.alpha;
  sl.batch = cfg.batch;
  if (cfg.eta) {
    sl.personal.step = *cfg.eta;
  } else {
    sl.personal.step = default_shuffling_step(mu, n, cfg.local_steps, cfg.rounds, cfg.eta_c);
    sl.step_cap_smoothness = L;
  }
  sl.global_step = cfg.gamma ? *cfg.gamma
                             : std::min(default_global_step(mu, n, cfg.local_steps, cfg.rounds, cfg.gamma_c), 1.0 / L);
  out.steps.eta = sl.personal.step;
  out.steps.gamma = sl.global_step;

  const bool subopt = want_suboptimality(cfg);
  RowLogger logger(cfg, fed, out.rows);
  long long pending_ns = 0;
  double last_drift = 0.0;
  auto observer = [&](const SingleLoopEpoch& e) {
    pending_ns += logger.lap();
    last_drift = e.alpha_drift;
    if (cfg.alpha_trace) out.alpha_trace.push_back(e.state.alpha);
    if (e.epoch == cfg.rounds || !logger.wants(e.epoch, cfg.rounds)) return;
    std::vector<double> gap;
    if (subopt)
      gap = suboptimality_against(e.state.v, e.state.alpha, reference_models(e.state.alpha, fed, cfg.loss, cfg.domain),
                                  fed, cfg.loss);
    logger.log(e.epoch, e.stats.rounds, e.state.v, e.stats.messages, subopt ? &gap : nullptr,
               mean_loss(fed, cfg.loss, e.state.w), e.alpha_drift, pending_ns);
    pending_ns = 0;
  };
  SingleLoopResult res = run_single_loop(fed, cfg.loss, sl, observer);
  pending_ns += logger.lap();

  std::vector<double> gap;
  if (subopt)
    gap = suboptimality_against(res.v_hat, res.alpha, reference_models(res.alpha, fed, cfg.loss, cfg.domain), fed,
                                cfg.loss);
  logger.log(cfg.rounds, res.stats.rounds, res.v_hat, res.stats.messages, subopt ? &gap : nullptr,
             mean_loss(fed, cfg.loss, res.w), last_drift, pending_ns);

  out.models = std::move(res.v_hat);
  out.alphas = std::move(res.alpha);
  out.global_model = std::move(res.w);
  out.dissimilarity = pairwise_dissimilarity(fed, cfg.loss, out.global_model);
  out.safety_clamps = res.stats.safety_clamps;
  out.budget = {res.stats.rounds, cfg.rounds * n * cfg.local_steps, res.stats.messages};
  return out;
}

RunOutcome run_baseline(const RunConfig& cfg, const Federation& fed, RunOutcome out) {
  const double L = out.steps.smoothness;
  const double mu = out.steps.strong_convexity;
  out.steps.gamma = cfg.gamma ? *cfg.gamma
                              : std::min(default_local_sgd_step(mu, cfg.rounds, cfg.local_steps, cfg.gamma_c), 1.0 / L);
  const LocalSgdConfig sgd = local_sgd_config(cfg, out.steps.gamma, cfg.rounds);
  const bool localized = cfg.method == Method::kLocalizedFedAvg;
  const std::size_t tune = localized ? cfg.fine_tune_steps : 0;
  const std::size_t n = fed.size();

  RowLogger logger(cfg, fed, out.rows);
  long long pending_ns = 0;
  auto observer = [&](std::size_t round, const Vector& w) {
    pending_ns += logger.lap();
    if (!logger.wants(round, cfg.rounds)) return;
    const std::vector<Vector> models = localized ? fine_tune(w, fed, cfg.loss, sgd, tune) : std::vector<Vector>(n, w);
    logger.log(round, round, models, 2 * n * round, nullptr, mean_loss(fed, cfg.loss, w), std::nullopt, pending_ns);
    pending_ns = 0;
  };
  BaselineResult res = localized ? run_localized_fedavg(fed, cfg.loss, sgd, tune, observer)
                                 : run_werm(fed, cfg.loss, sgd, std::nullopt, observer);
  out.models = std::move(res.client_models);
  out.global_model = std::move(res.global_model);
  out.budget = res.budget;
  return out;
}

std::string join_models(const std::vector<Vector>& models) {
  std::ostringstream s;
  for (const Vector& v : models) {
    for (Eigen::Index k = 0; k < v.size(); ++k) s << (k ? "," : "") << io::format_g(v[k], 17);
    s << '\n';
  }
  return s.str();
}

}  // namespace

std::string_view to_string(Method m) {
  switch (m) {
    case Method::kTwoStage: return "two-stage";
    case Method::kSingleLoop: return "single-loop";
    case Method::kWerm: return "werm";
    case Method::kLocalizedFedAvg: return "localized-fedavg";
  }
  return "unknown";
}

Method method_from_string(std::string_view name) {
  if (name == "two-stage") return Method::kTwoStage;
  if (name == "single-loop") return Method::kSingleLoop;
  if (name == "werm") return Method::kWerm;
  if (name == "localized-fedavg") return Method::kLocalizedFedAvg;
  throw ConfigError("method", "expected two-stage | single-loop | werm | localized-fedavg, got '" +
                                  std::string(name) + "'");
}

const std::vector<ConfigKey>& config_keys() { return kKeys; }

RunConfig parse_run_config(const std::map<std::string, std::string>& raw) {
  std::map<std::string, std::string> values;
  for (const ConfigKey& k : kKeys) values[k.name] = k.default_value;
  for (const auto& [key, value] : raw) {
    if (!values.contains(key)) throw ConfigError(key, "unknown configuration key");
    values[key] = io::trim(value);
  }
  const Reader r(values);
  if (values["seed"].empty()) throw ConfigError("seed", "a seed is required");

  RunConfig cfg;
  cfg.method = method_from_string(values["method"]);
  cfg.seed = r.count("seed");
  const std::uint64_t data_seed = values["data_seed"].empty() ? cfg.seed : r.count("data_seed");

  cfg.data = r.choice("data", {"synthetic", "clusters", "csv", "dir"});
  const std::string preset = r.choice("synthetic", {"two-group", "custom"});
  if (cfg.data == "synthetic" && preset == "two-group") {
    cfg.synthetic = SyntheticSpec::two_group(data_seed);
  } else {
    cfg.synthetic.n_clients = r.count("n_clients", 1);
    cfg.synthetic.dim = r.count("dim", 1);
    cfg.synthetic.samples_per_client = r.count("samples_per_client", 2);
    cfg.synthetic.mu1 = r.real("mu1");
    cfg.synthetic.mu2 = r.real("mu2");
    cfg.synthetic.mu_w = r.real("mu_w");
    cfg.synthetic.sigma_exponent = r.real("sigma_exponent");
    cfg.synthetic.seed = data_seed;
  }
  const double fraction = r.positive("train_fraction");
  if (fraction >= 1.0) throw ConfigError("train_fraction", "must lie in (0, 1)");
  if (cfg.data == "synthetic" && cfg.synthetic.n_clients % 2 != 0)
    throw ConfigError("n_clients", "synthetic federations need an even client count");
  if (preset == "custom" || cfg.data != "synthetic") cfg.synthetic.train_fraction = fraction;

  cfg.csv_path = values["csv"];
  cfg.csv.has_header = r.flag("csv_header");
  cfg.csv.label_column = values["label_col"];
  if (!values["class_col"].empty()) cfg.csv.class_column = values["class_col"];
  if (cfg.data == "csv" && cfg.csv_path.empty()) throw ConfigError("csv", "data=csv needs a CSV path");
  cfg.partition.n_clients = r.count("n_clients", 1);
  cfg.partition.mode = r.choice("partition", {"homogeneous", "by-label"}) == "homogeneous" ? PartitionMode::kHomogeneous
                                                                                          : PartitionMode::kByLabel;
  cfg.partition.classes_per_client = r.count("classes_per_client", 1);
  cfg.partition.train_fraction = fraction;
  cfg.partition.seed = data_seed;
  cfg.n_classes = r.count("n_classes", 1);
  cfg.rows_per_class = r.count("rows_per_class", 1);
  cfg.separation = r.positive("separation");
  cfg.data_dir = values["data_dir"];
  if (cfg.data == "dir" && cfg.data_dir.empty()) throw ConfigError("data_dir", "data=dir needs a directory");

  cfg.loss.kind = r.choice("loss", {"logistic", "ridge"}) == "ridge" ? LossKind::kRidge : LossKind::kLogistic;
  cfg.loss.reg = r.real("reg");
  if (cfg.loss.reg < 0.0) throw ConfigError("reg", "must be >= 0");
  if (cfg.loss.kind == LossKind::kLogistic && cfg.loss.reg <= 0.0)
    throw ConfigError("reg", "logistic loss needs reg > 0 for strong convexity");

  if (!r.is_auto("gamma")) cfg.gamma = r.positive("gamma");
  if (!r.is_auto("eta")) cfg.eta = r.positive("eta");
  cfg.gamma_c = r.positive("gamma_c");
  cfg.eta_c = r.positive("eta_c");
  cfg.local_steps = r.count("K", 1);
  if (!r.is_auto("R_global")) cfg.global_rounds = r.count("R_global", 1);
  cfg.rounds = r.count("R", 1);
  cfg.alpha.t_alpha = r.count("t_alpha", 1);
  cfg.alpha.lambda = r.positive("lambda");
  cfg.batch = r.count("M", 1);
  cfg.fine_tune_steps = r.count("fine_tune_steps");
  cfg.domain.diameter = r.positive("diameter");
  cfg.sampling = r.choice("sampling", {"single", "full"}) == "full" ? Sampling::kFullBatch : Sampling::kSingleSample;
  cfg.log_every = r.count("log_every", 1);
  cfg.suboptimality = r.choice("suboptimality", {"auto", "on", "off"});
  cfg.alpha_trace = r.flag("alpha_trace");
  r.flag("allow_budget_mismatch");
  if (!r.is_auto("budget")) r.count("budget", 1);
  for (const auto& m : split_list(values["methods"])) method_from_string(m);
  cfg.values = std::move(values);
  return cfg;
}

Federation build_federation(const RunConfig& cfg) {
  if (cfg.data == "synthetic") return gen_synthetic(cfg.synthetic);
  if (cfg.data == "dir") return load_federation(cfg.data_dir);
  if (cfg.data == "clusters") {
    const LabeledRows rows =
        gen_clusters(cfg.n_classes, cfg.rows_per_class, cfg.synthetic.dim, cfg.separation, cfg.partition.seed);
    return partition_rows(rows, cfg.partition);
  }
  return partition_rows(read_labeled_csv(cfg.csv_path, cfg.csv), cfg.partition);
}

std::size_t communication_rounds(const RunConfig& cfg, std::size_t n_clients) {
  switch (cfg.method) {
    case Method::kTwoStage: return cfg.global_rounds.value_or(n_clients) + cfg.rounds * n_clients;
    case Method::kSingleLoop: return cfg.rounds * n_clients;
    case Method::kWerm:
    case Method::kLocalizedFedAvg: return cfg.rounds;
  }
  return 0;
}

RunOutcome run_method(const RunConfig& cfg, const Federation& fed) {
  fed.validate();
  RunOutcome out;
  out.method = cfg.method;
  const CurvatureConstants c = estimate_constants(cfg.loss, fed.shards);
  if (!(c.strong_convexity > 0.0) && (!cfg.gamma || !cfg.eta))
    throw NumericError("objectives are not strongly convex; set reg > 0 or give gamma and eta explicitly");
  out.steps.smoothness = c.smoothness;
  out.steps.strong_convexity = c.strong_convexity;
  out.steps.global_rounds = cfg.method == Method::kTwoStage ? cfg.global_rounds.value_or(fed.size()) : 0;
  out.steps.batch = cfg.batch;

  switch (cfg.method) {
    case Method::kTwoStage: out = run_two_stage(cfg, fed, std::move(out)); break;
    case Method::kSingleLoop: out = run_single_loop_method(cfg, fed, std::move(out)); break;
    case Method::kWerm:
    case Method::kLocalizedFedAvg: out = run_baseline(cfg, fed, std::move(out)); break;
  }
  out.final_metrics = evaluate_clients(out.models, fed, cfg.loss);
  return out;
}

std::string metrics_header() {
  return "method,epoch,round,client,personalized_train_loss,personalized_eval_loss,personalized_eval_accuracy,"
         "suboptimality,messages_sent,global_loss,alpha_drift";
}

std::string format_metrics(const std::vector<MetricsRow>& rows, bool with_header) {
  std::ostringstream s;
  if (with_header) s << metrics_header() << '\n';
  for (const MetricsRow& r : rows) {
    s << r.method << ',' << r.epoch << ',' << r.round << ',' << r.client << ',' << io::format_g(r.train_loss) << ','
      << io::format_g(r.eval_loss) << ',' << io::format_g(r.eval_accuracy) << ',' << opt(r.suboptimality) << ','
      << r.messages << ',' << opt(r.global_loss) << ',' << opt(r.alpha_drift) << '\n';
  }
  return s.str();
}

void emit_heatmap(const std::vector<MixWeights>& alphas, const std::filesystem::path& dir) {
  const Matrix a = alpha_matrix(alphas);
  io::write_matrix_csv(dir / "alpha_matrix.csv", a, 6);
  const double top = a.maxCoeff();
  std::ostringstream pgm;
  pgm << "P2\n" << a.cols() << ' ' << a.rows() << "\n255\n";
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      pgm << (j ? " " : "") << (top > 0.0 ? std::lround(255.0 * a(i, j) / top) : 0L);
    pgm << '\n';
  }
  io::write_text(dir / "alpha_heatmap.pgm", pgm.str());
}

void write_run_outputs(const RunConfig& cfg, const RunOutcome& outcome, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  io::write_text(dir / "metrics.csv", format_metrics(outcome.rows));

  std::ostringstream timing;
  timing << "method,epoch,round,elapsed_ns\n";
  for (const MetricsRow& r : outcome.rows)
    if (r.client == 0) timing << r.method << ',' << r.epoch << ',' << r.round << ',' << r.elapsed_ns << '\n';
  io::write_text(dir / "timing.csv", timing.str());

  std::ostringstream echo;
  echo << "# resolved: L=" << io::format_g(outcome.steps.smoothness, 10)
       << " mu=" << io::format_g(outcome.steps.strong_convexity, 10)
       << " gamma=" << io::format_g(outcome.steps.gamma, 10) << " eta=" << io::format_g(outcome.steps.eta, 10)
       << " rounds=" << outcome.budget.rounds << " messages=" << outcome.budget.messages
       << " safety_clamps=" << outcome.safety_clamps << '\n';
  for (const auto& [k, v] : cfg.values) echo << k << '=' << v << '\n';
  io::write_text(dir / "config_used", echo.str());
  io::write_text(dir / "models.csv", join_models(outcome.models));

  if (!outcome.alphas.empty()) {
    emit_heatmap(outcome.alphas, dir);
    if (outcome.dissimilarity) io::write_matrix_csv(dir / "dissimilarity.csv", outcome.dissimilarity->z, 6);
  }
  for (std::size_t r = 0; r < outcome.alpha_trace.size(); ++r)
    io::write_matrix_csv(dir / "alpha_trace" / ("epoch_" + std::to_string(r + 1) + ".csv"),
                         alpha_matrix(outcome.alpha_trace[r]), 6);
}

std::string SummaryTable::to_csv() const {
  std::ostringstream s;
  s << "method,runs,mean_accuracy,std_accuracy,mean_loss,std_loss\n";
  for (const SummaryRow& r : rows)
    s << r.method << ',' << r.runs << ',' << io::format_g(r.mean_accuracy) << ',' << io::format_g(r.std_accuracy)
      << ',' << io::format_g(r.mean_loss) << ',' << io::format_g(r.std_loss) << '\n';
  return s.str();
}

std::string SummaryTable::to_text() const {
  std::ostringstream s;
  char line[160];
  std::snprintf(line, sizeof line, "%-18s %5s %10s %10s %10s %10s\n", "method", "runs", "acc_mean", "acc_std",
                "loss_mean", "loss_std");
  s << line;
  for (const SummaryRow& r : rows) {
    std::snprintf(line, sizeof line, "%-18s %5zu %10.4f %10.4f %10.4f %10.4f\n", r.method.c_str(), r.runs,
                  r.mean_accuracy, r.std_accuracy, r.mean_loss, r.std_loss);
    s << line;
  }
  return s.str();
}

const SummaryRow* SummaryTable::find(std::string_view method) const {
  for (const SummaryRow& r : rows)
    if (r.method == method) return &r;
  return nullptr;
}

SummaryTable summarize(const std::vector<std::filesystem::path>& metrics_files) {
  if (metrics_files.empty()) throw IoError("summarize: no metrics files");

  // method -> per-file (mean accuracy, mean loss)
  std::map<std::string, std::vector<std::pair<double, double>>> per_method;
  std::map<std::string, std::set<std::size_t>> clients_of;
  std::vector<std::string> missing;

  struct Final {
    std::size_t epoch = 0;
    std::map<std::size_t, std::pair<double, double>> by_client;
    std::set<std::size_t> seen;
  };
  std::vector<std::map<std::string, Final>> files;

  for (const auto& path : metrics_files) {
    const std::string text = io::read_text(path);
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw IoError(path.string() + ": empty metrics file");
    const auto header = io::split_csv_line(line);
    auto col = [&](const char* name) {
      const auto it = std::find(header.begin(), header.end(), name);
      if (it == header.end()) throw IoError(path.string() + ": missing column " + name);
      return static_cast<std::size_t>(it - header.begin());
    };
    const std::size_t c_method = col("method"), c_epoch = col("epoch"), c_client = col("client"),
                      c_acc = col("personalized_eval_accuracy"), c_loss = col("personalized_eval_loss");

    std::map<std::string, Final> finals;
    while (std::getline(in, line)) {
      if (io::trim(line).empty()) continue;
      const auto cells = io::split_csv_line(line);
      if (cells.size() != header.size()) throw IoError(path.string() + ": ragged metrics row");
      const std::size_t epoch = std::stoul(cells[c_epoch]);
      const std::size_t client = std::stoul(cells[c_client]);
      Final& f = finals[cells[c_method]];
      f.seen.insert(client);
      clients_of[cells[c_method]].insert(client);
      if (epoch > f.epoch) {
        f.epoch = epoch;
        f.by_client.clear();
      }
      if (epoch == f.epoch) f.by_client[client] = {io::parse_double(cells[c_acc]), io::parse_double(cells[c_loss])};
    }
    files.push_back(std::move(finals));
  }

  for (std::size_t fi = 0; fi < files.size(); ++fi) {
    for (const auto& [method, clients] : clients_of) {
      const auto it = files[fi].find(method);
      if (it == files[fi].end()) continue;
      for (std::size_t c : clients)
        if (!it->second.by_client.contains(c))
          missing.push_back("(" + method + ", " + std::to_string(c) + ") in " + metrics_files[fi].string());
    }
  }
  if (!missing.empty()) {
    std::string msg = "summarize: missing final-epoch rows for";
    for (const auto& m : missing) msg += " " + m;
    throw IoError(msg);
  }

  for (const auto& finals : files)
    for (const auto& [method, f] : finals) {
      double acc = 0.0, ls = 0.0;
      for (const auto& [client, v] : f.by_client) {
        acc += v.first;
        ls += v.second;
      }
      const auto k = static_cast<double>(f.by_client.size());
      per_method[method].emplace_back(acc / k, ls / k);
    }

  SummaryTable table;
  for (const auto& [method, runs] : per_method) {
    SummaryRow row;
    row.method = method;
    row.runs = runs.size();
    for (const auto& [a, l] : runs) {
      row.mean_accuracy += a;
      row.mean_loss += l;
    }
    row.mean_accuracy /= static_cast<double>(runs.size());
    row.mean_loss /= static_cast<double>(runs.size());
    if (runs.size() > 1) {
      double va = 0.0, vl = 0.0;
      for (const auto& [a, l] : runs) {
        va += (a - row.mean_accuracy) * (a - row.mean_accuracy);
        vl += (l - row.mean_loss) * (l - row.mean_loss);
      }
      row.std_accuracy = std::sqrt(va / static_cast<double>(runs.size() - 1));
      row.std_loss = std::sqrt(vl / static_cast<double>(runs.size() - 1));
    }
    table.rows.push_back(row);
  }
  return table;
}

}  // namespace perm
