#include "perm/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "perm/errors.hpp"
#include "perm/io.hpp"
#include "perm/parallel.hpp"
#include "perm/rng.hpp"

namespace perm {
namespace {

std::size_t train_rows_for(std::size_t n, double fraction) {
  const auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  return std::clamp<std::size_t>(k, 1, n - 1);
}

// Copies the listed rows of (features, labels) into a dataset.
Dataset gather(const FeatureMatrix& features, const Vector& labels, const std::vector<std::size_t>& rows) {
  Dataset out;
  out.features.resize(static_cast<Eigen::Index>(rows.size()), features.cols());
  out.labels.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.features.row(static_cast<Eigen::Index>(i)) = features.row(static_cast<Eigen::Index>(rows[i]));
    out.labels[static_cast<Eigen::Index>(i)] = labels[static_cast<Eigen::Index>(rows[i])];
  }
  return out;
}

Shard split_shard(const FeatureMatrix& features, const Vector& labels, std::vector<std::size_t> rows,
                  double train_fraction) {
  const std::size_t n_train = train_rows_for(rows.size(), train_fraction);
  std::vector<std::size_t> eval(rows.begin() + static_cast<std::ptrdiff_t>(n_train), rows.end());
  rows.resize(n_train);
  return Shard{gather(features, labels, rows), gather(features, labels, eval)};
}

Vector diag_scale(std::size_t dim, double exponent) {
  Vector s(static_cast<Eigen::Index>(dim));
  for (std::size_t k = 0; k < dim; ++k) s[static_cast<Eigen::Index>(k)] = std::sqrt(std::pow(static_cast<double>(k + 1), -exponent));
  return s;
}

std::string join(const Vector& v) {
  std::string out;
  for (Eigen::Index k = 0; k < v.size(); ++k) {
    if (k > 0) out += ',';
    out += io::format_g(v[k], 17);
  }
  return out;
}

}  // namespace

SyntheticSpec SyntheticSpec::two_group(std::uint64_t seed) {
  SyntheticSpec spec;
  spec.seed = seed;
  return spec;
}

void SyntheticSpec::validate() const {
  if (n_clients == 0 || n_clients % 2 != 0) throw ParameterError("synthetic: n_clients must be even and positive");
  if (dim < 1) throw ParameterError("synthetic: dim must be >= 1");
  if (samples_per_client < 2) throw ParameterError("synthetic: samples_per_client must be >= 2");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ParameterError("synthetic: train_fraction must lie in (0, 1)");
  if (!std::isfinite(mu1) || !std::isfinite(mu2) || !std::isfinite(mu_w) || !std::isfinite(sigma_exponent))
    throw ParameterError("synthetic: non-finite mean or exponent");
}

std::size_t Federation::dim() const {
  if (shards.empty()) throw DimensionError("federation: no shards");
  return shards.front().dim();
}

std::vector<double> Federation::train_counts() const {
  std::vector<double> n;
  n.reserve(shards.size());
  for (const Shard& s : shards) n.push_back(static_cast<double>(s.n()));
  return n;
}

void Federation::validate() const {
  if (shards.empty()) throw DimensionError("federation: no shards");
  const std::size_t d = shards.front().dim();
  for (const Shard& s : shards) {
    s.train.validate();
    s.eval.validate();
    if (s.n() == 0) throw DimensionError("federation: shard without training rows");
    if (s.train.dim() != d || (s.eval.rows() > 0 && s.eval.dim() != d))
      throw DimensionError("federation: shards disagree on feature width");
  }
}

Federation gen_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const Vector scale = diag_scale(spec.dim, spec.sigma_exponent);
  const auto d = static_cast<Eigen::Index>(spec.dim);

  Stream labeler_rng(spec.seed, StreamTag::kLabeler);
  Vector true_w(d);
  for (Eigen::Index k = 0; k < d; ++k) true_w[k] = spec.mu_w + scale[k] * labeler_rng.normal();

  Federation fed;
  fed.true_w = true_w;
  fed.shards.resize(spec.n_clients);
  fed.group_of.resize(spec.n_clients);
  const std::size_t half = spec.n_clients / 2;

  parallel_for(spec.n_clients, [&](std::size_t client) {
    const bool group_a = client < half;
    const double mean = group_a ? spec.mu1 : spec.mu2;
    const double sign = group_a ? 1.0 : -1.0;
    FeatureMatrix x(static_cast<Eigen::Index>(spec.samples_per_client), d);
    Vector y(static_cast<Eigen::Index>(spec.samples_per_client));
    for (std::size_t s = 0; s < spec.samples_per_client; ++s) {
      Stream rng(spec.seed, StreamTag::kFeatures, {client, s});
      const auto row = static_cast<Eigen::Index>(s);
      for (Eigen::Index k = 0; k < d; ++k) x(row, k) = mean + scale[k] * rng.normal();
      y[row] = sign * x.row(row).dot(true_w) >= 0.0 ? 1.0 : -1.0;
    }
    std::vector<std::size_t> rows(spec.samples_per_client);
    for (std::size_t s = 0; s < rows.size(); ++s) rows[s] = s;
    fed.shards[client] = split_shard(x, y, std::move(rows), spec.train_fraction);
    fed.group_of[client] = group_a ? 0 : 1;
  });

  fed.provenance = {
      {"source", "synthetic"},
      {"n_clients", std::to_string(spec.n_clients)},
      {"dim", std::to_string(spec.dim)},
      {"samples_per_client", std::to_string(spec.samples_per_client)},
      {"mu1", io::format_g(spec.mu1, 17)},
      {"mu2", io::format_g(spec.mu2, 17)},
      {"mu_w", io::format_g(spec.mu_w, 17)},
      {"sigma_exponent", io::format_g(spec.sigma_exponent, 17)},
      {"train_fraction", io::format_g(spec.train_fraction, 17)},
      {"seed", std::to_string(spec.seed)},
  };
  return fed;
}

Federation partition_rows(const LabeledRows& rows, const PartitionSpec& spec) {
  const std::size_t n = static_cast<std::size_t>(rows.features.rows());
  if (n == 0) throw ParameterError("partition: no rows");
  if (rows.labels.size() != rows.features.rows() || rows.classes.size() != n)
    throw DimensionError("partition: features, labels and classes are not aligned");
  if (spec.n_clients == 0) throw ParameterError("partition: n_clients must be positive");
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0))
    throw ParameterError("partition: train_fraction must lie in (0, 1)");

  std::vector<std::vector<std::size_t>> assigned(spec.n_clients);
  std::vector<int> group_of(spec.n_clients, 0);

  if (spec.mode == PartitionMode::kHomogeneous) {
    Stream rng(spec.seed, StreamTag::kPartition);
    const auto order = random_permutation(n, rng);
    for (std::size_t k = 0; k < n; ++k) assigned[k % spec.n_clients].push_back(order[k]);
  } else {
    const std::set<long> distinct(rows.classes.begin(), rows.classes.end());
    const std::vector<long> classes(distinct.begin(), distinct.end());
    const std::size_t c = spec.classes_per_client;
    if (c == 0) throw ParameterError("partition: classes_per_client must be positive");
    if (c > classes.size())
      throw ParameterError("partition: " + std::to_string(c) + " classes per client requested but data has only " +
                           std::to_string(classes.size()));

    std::vector<std::vector<std::size_t>> owners(classes.size());
    for (std::size_t i = 0; i < spec.n_clients; ++i) {
      for (std::size_t t = 0; t < c; ++t) owners[(i * c + t) % classes.size()].push_back(i);
      group_of[i] = static_cast<int>(classes[(i * c) % classes.size()]);
    }
    for (std::size_t ci = 0; ci < classes.size(); ++ci) {
      if (owners[ci].empty()) continue;
      std::vector<std::size_t> members;
      for (std::size_t r = 0; r < n; ++r)
        if (rows.classes[r] == classes[ci]) members.push_back(r);
      Stream rng(spec.seed, StreamTag::kPartition, {ci + 1});
      const auto order = random_permutation(members.size(), rng);
      for (std::size_t k = 0; k < order.size(); ++k)
        assigned[owners[ci][k % owners[ci].size()]].push_back(members[order[k]]);
    }
  }

  Federation fed;
  fed.group_of = group_of;
  fed.shards.reserve(spec.n_clients);
  for (std::size_t i = 0; i < spec.n_clients; ++i) {
    if (assigned[i].size() < 2)
      throw ParameterError("partition: client " + std::to_string(i) + " received " +
                           std::to_string(assigned[i].size()) + " rows; at least 2 are needed");
    // Shuffle within the client so the train/eval split mixes its classes.
    Stream rng(spec.seed, StreamTag::kSplit, {i});
    const auto order = random_permutation(assigned[i].size(), rng);
    std::vector<std::size_t> mixed(order.size());
    for (std::size_t k = 0; k < order.size(); ++k) mixed[k] = assigned[i][order[k]];
    fed.shards.push_back(split_shard(rows.features, rows.labels, std::move(mixed), spec.train_fraction));
  }
  fed.provenance = {
      {"source", "partition"},
      {"n_clients", std::to_string(spec.n_clients)},
      {"partition", spec.mode == PartitionMode::kHomogeneous ? "homogeneous" : "by-label"},
      {"classes_per_client", std::to_string(spec.classes_per_client)},
      {"train_fraction", io::format_g(spec.train_fraction, 17)},
      {"seed", std::to_string(spec.seed)},
  };
  return fed;
}

LabeledRows read_labeled_csv(const std::filesystem::path& path, const CsvOptions& options) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::vector<std::string>> lines;
  std::string line;
  while (std::getline(in, line))
    if (!io::trim(line).empty()) lines.push_back(io::split_csv_line(line));
  if (lines.empty()) throw IoError(path.string() + ": empty file");

  std::vector<std::string> header;
  if (options.has_header) {
    header = lines.front();
    lines.erase(lines.begin());
  }
  if (lines.empty()) throw IoError(path.string() + ": no data rows");
  const std::size_t width = lines.front().size();

  auto resolve = [&](const std::string& column) -> std::size_t {
    if (auto it = std::find(header.begin(), header.end(), column); it != header.end())
      return static_cast<std::size_t>(it - header.begin());
    try {
      std::size_t used = 0;
      const unsigned long idx = std::stoul(column, &used);
      if (used == column.size() && idx < width) return idx;
    } catch (const std::exception&) {
    }
    throw IoError(path.string() + ": unknown column '" + column + "'");
  };
  const std::size_t label_col = resolve(options.label_column);
  const std::size_t class_col = options.class_column ? resolve(*options.class_column) : label_col;
  if (width < 2) throw IoError(path.string() + ": need at least one feature column");

  LabeledRows out;
  const std::size_t n_features = width - (class_col == label_col ? 1 : 2);
  out.features.resize(static_cast<Eigen::Index>(lines.size()), static_cast<Eigen::Index>(n_features));
  out.labels.resize(static_cast<Eigen::Index>(lines.size()));
  out.classes.resize(lines.size());
  for (std::size_t r = 0; r < lines.size(); ++r) {
    if (lines[r].size() != width)
      throw IoError(path.string() + ": row " + std::to_string(r + 1) + " has " + std::to_string(lines[r].size()) +
                    " cells, expected " + std::to_string(width));
    std::size_t f = 0;
    for (std::size_t c = 0; c < width; ++c) {
      const double v = io::parse_double(lines[r][c]);
      if (c == label_col) out.labels[static_cast<Eigen::Index>(r)] = v;
      if (c == class_col) out.classes[r] = std::lround(v);
      if (c != label_col && c != class_col) out.features(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(f++)) = v;
    }
  }
  return out;
}

LabeledRows gen_clusters(std::size_t n_classes, std::size_t rows_per_class, std::size_t dim, double separation,
                         std::uint64_t seed) {
  if (n_classes == 0 || rows_per_class == 0 || dim == 0) throw ParameterError("clusters: sizes must be positive");
  const auto d = static_cast<Eigen::Index>(dim);
  const std::size_t n = n_classes * rows_per_class;
  LabeledRows out;
  out.features.resize(static_cast<Eigen::Index>(n), d);
  out.labels.resize(static_cast<Eigen::Index>(n));
  out.classes.resize(n);
  for (std::size_t c = 0; c < n_classes; ++c) {
    Stream center_rng(seed, StreamTag::kLabeler, {c});
    Vector center(d);
    for (Eigen::Index k = 0; k < d; ++k) center[k] = separation * center_rng.normal();
    for (std::size_t s = 0; s < rows_per_class; ++s) {
      Stream rng(seed, StreamTag::kFeatures, {c, s});
      const auto row = static_cast<Eigen::Index>(c * rows_per_class + s);
      for (Eigen::Index k = 0; k < d; ++k) out.features(row, k) = center[k] + rng.normal();
      out.labels[row] = c % 2 == 0 ? 1.0 : -1.0;
      out.classes[static_cast<std::size_t>(row)] = static_cast<long>(c);
    }
  }
  return out;
}

void export_federation(const Federation& fed, const std::filesystem::path& dir) {
  fed.validate();
  std::filesystem::create_directories(dir);
  const std::size_t d = fed.dim();
  for (std::size_t i = 0; i < fed.size(); ++i) {
    std::ostringstream out;
    out << "split,label";
    for (std::size_t k = 0; k < d; ++k) out << ",x" << k;
    out << '\n';
    auto emit = [&](const Dataset& data, const char* split) {
      for (Eigen::Index r = 0; r < data.features.rows(); ++r) {
        out << split << ',' << io::format_g(data.labels[r], 17);
        for (Eigen::Index k = 0; k < data.features.cols(); ++k) out << ',' << io::format_g(data.features(r, k), 17);
        out << '\n';
      }
    };
    emit(fed.shards[i].train, "train");
    emit(fed.shards[i].eval, "eval");
    io::write_text(dir / ("shard_" + std::to_string(i) + ".csv"), out.str());
  }
  auto manifest = fed.provenance;
  manifest["n_clients"] = std::to_string(fed.size());
  manifest["dim"] = std::to_string(d);
  std::string groups;
  for (std::size_t i = 0; i < fed.group_of.size(); ++i) groups += (i ? "," : "") + std::to_string(fed.group_of[i]);
  manifest["group_of"] = groups;
  if (fed.true_w.size() > 0) manifest["true_w"] = join(fed.true_w);
  io::write_key_values(dir / "federation.manifest", manifest);
}

Federation load_federation(const std::filesystem::path& dir) {
  const auto manifest = io::read_key_values(dir / "federation.manifest");
  auto get = [&](const std::string& key) -> const std::string& {
    const auto it = manifest.find(key);
    if (it == manifest.end()) throw IoError("federation.manifest: missing key '" + key + "'");
    return it->second;
  };
  const std::size_t n = std::stoul(get("n_clients"));
  Federation fed;
  fed.provenance = manifest;
  fed.provenance.erase("group_of");
  fed.provenance.erase("true_w");
  for (const auto& g : io::split_csv_line(get("group_of"))) fed.group_of.push_back(std::stoi(g));
  if (auto it = manifest.find("true_w"); it != manifest.end()) {
    const auto cells = io::split_csv_line(it->second);
    fed.true_w.resize(static_cast<Eigen::Index>(cells.size()));
    for (std::size_t k = 0; k < cells.size(); ++k) fed.true_w[static_cast<Eigen::Index>(k)] = io::parse_double(cells[k]);
  }
  for (std::size_t i = 0; i < n; ++i) {
    const auto path = dir / ("shard_" + std::to_string(i) + ".csv");
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::string line;
    std::getline(in, line);
    std::vector<std::vector<double>> train, eval;
    while (std::getline(in, line)) {
      if (io::trim(line).empty()) continue;
      const auto cells = io::split_csv_line(line);
      std::vector<double> values;
      for (std::size_t c = 1; c < cells.size(); ++c) values.push_back(io::parse_double(cells[c]));
      (cells[0] == "eval" ? eval : train).push_back(std::move(values));
    }
    auto to_dataset = [&](const std::vector<std::vector<double>>& rows) {
      Dataset ds;
      const auto width = rows.empty() ? static_cast<Eigen::Index>(std::stoul(get("dim")))
                                      : static_cast<Eigen::Index>(rows.front().size() - 1);
      ds.features.resize(static_cast<Eigen::Index>(rows.size()), width);
      ds.labels.resize(static_cast<Eigen::Index>(rows.size()));
      for (std::size_t r = 0; r < rows.size(); ++r) {
        if (static_cast<Eigen::Index>(rows[r].size()) != width + 1) throw IoError(path.string() + ": ragged row");
        ds.labels[static_cast<Eigen::Index>(r)] = rows[r][0];
        for (Eigen::Index k = 0; k < width; ++k) ds.features(static_cast<Eigen::Index>(r), k) = rows[r][static_cast<std::size_t>(k) + 1];
      }
      return ds;
    };
    fed.shards.push_back(Shard{to_dataset(train), to_dataset(eval)});
  }
  fed.validate();
  return fed;
}

}  // namespace perm
