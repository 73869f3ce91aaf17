#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

#include "perm/errors.hpp"
#include "perm/harness.hpp"
#include "perm/io.hpp"

namespace perm {
namespace {

namespace fs = std::filesystem;

struct Overrides {
  std::map<std::string, std::string> flags;
  std::string config_file;
  std::string out;
};

void add_config_flags(CLI::App& cmd, Overrides& o) {
  cmd.add_option("--config", o.config_file, "key=value configuration file (flags override it)");
  cmd.add_option("--out", o.out, "output directory")->required();
  for (const ConfigKey& k : config_keys()) {
    std::string names = std::string("--") + k.name;
    std::string dashed = k.name;
    std::replace(dashed.begin(), dashed.end(), '_', '-');
    if (dashed != k.name) names += ",--" + dashed;
    std::string help = k.help;
    if (*k.default_value) help += std::string(" [") + k.default_value + "]";
    cmd.add_option_function<std::string>(
        names, [&o, name = std::string(k.name)](const std::string& v) { o.flags[name] = v; }, help);
  }
}

RunConfig load_config(const Overrides& o) {
  std::map<std::string, std::string> raw;
  if (!o.config_file.empty()) raw = io::read_key_values(o.config_file);
  for (const auto& [k, v] : o.flags) raw[k] = v;
  // compare may name its seeds only through `seeds`
  if (!raw.contains("seed") && raw.contains("seeds")) {
    const auto first = io::split_csv_line(raw["seeds"]);
    if (!first.empty() && !io::trim(first.front()).empty()) raw["seed"] = io::trim(first.front());
  }
  return parse_run_config(raw);
}

std::string fmt_row(const MixWeights& a) {
  std::string s;
  for (std::size_t j = 0; j < a.size(); ++j) s += (j ? "," : "") + io::format_g(a[j]);
  return s;
}

int cmd_gen_data(const Overrides& o) {
  const RunConfig cfg = load_config(o);
  const Federation fed = build_federation(cfg);
  export_federation(fed, o.out);
  std::printf("wrote %zu shards to %s\n", fed.size(), o.out.c_str());
  return 0;
}

int cmd_run(const Overrides& o) {
  const RunConfig cfg = load_config(o);
  const Federation fed = build_federation(cfg);
  const RunOutcome out = run_method(cfg, fed);
  write_run_outputs(cfg, out, o.out);
  std::printf("%s: mean personalized eval accuracy %.4f, eval loss %.4f, %zu rounds\n",
              std::string(to_string(cfg.method)).c_str(), out.final_metrics.mean_accuracy(),
              out.final_metrics.mean_eval_loss(), out.budget.rounds);
  return 0;
}

struct AlphaArgs {
  std::string z_path;
  std::string counts;
  double lambda = 1.0;
  std::size_t t_alpha = 0;
  std::string solver = "gd";
  std::string out;
};

int cmd_solve_alpha(const AlphaArgs& a) {
  const Matrix z = io::read_matrix_csv(a.z_path);
  const auto n = static_cast<std::size_t>(z.cols());
  if (z.rows() != 1 && static_cast<std::size_t>(z.rows()) != n)
    throw ConfigError("z", "expected one row or an N x N matrix, got " + std::to_string(z.rows()) + " x " +
                               std::to_string(n));
  std::vector<double> counts(n, 1.0);
  if (!a.counts.empty()) {
    const auto cells = io::split_csv_line(a.counts);
    if (cells.size() != n) throw ConfigError("counts", "need " + std::to_string(n) + " entries");
    for (std::size_t j = 0; j < n; ++j) {
      counts[j] = io::parse_double(cells[j]);
      if (!(counts[j] > 0.0)) throw ConfigError("counts", "entries must be > 0");
    }
  }
  if (!(a.lambda > 0.0)) throw ConfigError("lambda", "must be > 0");

  AlphaSolverConfig cfg;
  cfg.lambda = a.lambda;
  cfg.t_alpha = a.t_alpha ? a.t_alpha
                          : std::max<std::size_t>(200, static_cast<std::size_t>(
                                                           std::ceil(40.0 * alpha_kappa(counts, a.lambda))));
  std::vector<MixWeights> rows;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const Vector row = z.row(i).transpose();
    const std::span<const double> zs(row.data(), n);
    rows.push_back(a.solver == "kkt" ? solve_alpha_kkt(zs, counts, cfg.lambda) : solve_alpha_gd(zs, counts, cfg));
    std::printf("%s\n", fmt_row(rows.back()).c_str());
  }
  if (!a.out.empty()) emit_heatmap(rows, a.out);
  return 0;
}

int cmd_compare(const Overrides& o) {
  const RunConfig base = load_config(o);
  const Federation probe = build_federation(base);
  const std::size_t n = probe.size();

  std::vector<Method> methods;
  for (const auto& m : io::split_csv_line(base.values.at("methods")))
    if (!m.empty()) methods.push_back(method_from_string(m));
  std::vector<std::uint64_t> seeds;
  for (const auto& s : io::split_csv_line(base.values.at("seeds"))) {
    if (s.empty()) continue;
    auto raw = base.values;
    raw["seed"] = s;
    seeds.push_back(parse_run_config(raw).seed);
  }
  if (seeds.empty()) seeds.push_back(base.seed);

  const std::size_t rg = base.global_rounds.value_or(n);
  std::size_t budget = base.rounds * n + rg;
  if (base.values.at("budget") != "auto") budget = std::stoull(base.values.at("budget"));
  const bool allow_mismatch = base.values.at("allow_budget_mismatch") == "true" ||
                              base.values.at("allow_budget_mismatch") == "1" ||
                              base.values.at("allow_budget_mismatch") == "yes";

  std::vector<fs::path> files;
  std::string ledger = "method,rounds_budget,rounds_used,R\n";
  for (Method m : methods) {
    std::size_t per = 1, fixed = 0;
    if (m == Method::kTwoStage) {
      per = n;
      fixed = rg;
    } else if (m == Method::kSingleLoop) {
      per = n;
    }
    if (budget <= fixed) throw ConfigError("budget", "too small for " + std::string(to_string(m)));
    const std::size_t r = (budget - fixed) / per;
    if (r == 0) throw ConfigError("budget", "too small for " + std::string(to_string(m)));
    if ((budget - fixed) % per != 0 && !allow_mismatch)
      throw ConfigError("budget", std::to_string(budget) + " rounds cannot be matched exactly by " +
                                      std::string(to_string(m)) + "; set allow_budget_mismatch=true to proceed");

    for (std::uint64_t seed : seeds) {
      auto raw = base.values;
      raw["method"] = std::string(to_string(m));
      raw["seed"] = std::to_string(seed);
      raw["R"] = std::to_string(r);
      const RunConfig cfg = parse_run_config(raw);
      const Federation fed = build_federation(cfg);
      const RunOutcome out = run_method(cfg, fed);
      const fs::path dir = fs::path(o.out) / std::string(to_string(m)) / ("seed_" + std::to_string(seed));
      write_run_outputs(cfg, out, dir);
      files.push_back(dir / "metrics.csv");
      if (seed == seeds.front())
        ledger += std::string(to_string(m)) + "," + std::to_string(budget) + "," +
                  std::to_string(out.budget.rounds) + "," + std::to_string(r) + "\n";
    }
  }
  const SummaryTable table = summarize(files);
  io::write_text(fs::path(o.out) / "summary.csv", table.to_csv());
  io::write_text(fs::path(o.out) / "summary.txt", table.to_text());
  io::write_text(fs::path(o.out) / "budget.csv", ledger);
  std::fputs(table.to_text().c_str(), stdout);
  return 0;
}

}  // namespace

int cli_main(int argc, char** argv) {
  CLI::App app{"Personalized empirical risk minimization: federated simulation harness"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "show help for every subcommand");

  Overrides gen, run, cmp;
  add_config_flags(*app.add_subcommand("gen-data", "generate or partition a federation and export it"), gen);
  add_config_flags(*app.add_subcommand("run", "run one method end to end"), run);
  add_config_flags(*app.add_subcommand("compare", "run several methods at equal communication budget"), cmp);

  AlphaArgs alpha;
  auto* sa = app.add_subcommand("solve-alpha", "solve the mixing-weight problem for dissimilarity rows");
  sa->add_option("--z", alpha.z_path, "CSV with one dissimilarity row or an N x N matrix")->required();
  sa->add_option("--counts", alpha.counts, "comma-separated sample counts (default all ones)");
  sa->add_option("--lambda", alpha.lambda, "regularizer [1]");
  sa->add_option("--t-alpha,--t_alpha", alpha.t_alpha, "projected-GD steps [max(200, 40 kappa)]");
  sa->add_option("--solver", alpha.solver, "gd | kkt [gd]")->check(CLI::IsMember({"gd", "kkt"}));
  sa->add_option("--out", alpha.out, "also write alpha_matrix.csv and alpha_heatmap.pgm here");

  std::vector<std::string> summary_files;
  std::string summary_out;
  auto* sm = app.add_subcommand("summarize", "final-epoch mean and std per method over metrics files");
  sm->add_option("files", summary_files, "metrics.csv files")->required();
  sm->add_option("--out", summary_out, "write summary.csv and summary.txt here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (app.got_subcommand("gen-data")) return cmd_gen_data(gen);
    if (app.got_subcommand("run")) return cmd_run(run);
    if (app.got_subcommand("compare")) return cmd_compare(cmp);
    if (app.got_subcommand("solve-alpha")) return cmd_solve_alpha(alpha);
    std::vector<fs::path> paths(summary_files.begin(), summary_files.end());
    const SummaryTable table = summarize(paths);
    if (!summary_out.empty()) {
      io::write_text(fs::path(summary_out) / "summary.csv", table.to_csv());
      io::write_text(fs::path(summary_out) / "summary.txt", table.to_text());
    }
    std::fputs(table.to_text().c_str(), stdout);
    return 0;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "invalid parameter: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}

}  // namespace perm
