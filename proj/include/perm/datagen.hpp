#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "perm/objectives.hpp"

namespace perm {

/// Two-group Gaussian federation with opposite labelings.
///
/// Clients [0, N/2) draw features from N(mu1 * 1, S) and label with
/// sign(w.x); clients [N/2, N) draw from N(mu2 * 1, S) and label with
/// sign(-w.x). S = diag(k^-sigma_exponent), k = 1..dim, and the labeling
/// vector w ~ N(mu_w * 1, S).
struct SyntheticSpec {
  std::size_t n_clients = 50;
  std::size_t dim = 60;
  std::size_t samples_per_client = 500;
  double mu1 = 0.2;
  double mu2 = -0.2;
  double mu_w = 0.1;
  double sigma_exponent = 1.2;
  double train_fraction = 0.8;
  std::uint64_t seed = 0;

  /// 50 clients, d = 60, 500 samples each.
  static SyntheticSpec two_group(std::uint64_t seed);

  void validate() const;
};

struct Federation {
  std::vector<Shard> shards;
  /// Group (synthetic) or first assigned class (by-label) of each client.
  std::vector<int> group_of;
  /// Labeling model for synthetic federations; empty otherwise.
  Vector true_w;
  /// Provenance recorded in the export manifest.
  std::map<std::string, std::string> provenance;

  std::size_t size() const noexcept { return shards.size(); }
  std::size_t dim() const;
  std::vector<double> train_counts() const;
  void validate() const;
};

Federation gen_synthetic(const SyntheticSpec& spec);

/// Rows, training targets and the class id used for label-based partitioning.
struct LabeledRows {
  FeatureMatrix features;
  Vector labels;
  std::vector<long> classes;
};

enum class PartitionMode { kHomogeneous, kByLabel };

struct PartitionSpec {
  std::size_t n_clients = 10;
  PartitionMode mode = PartitionMode::kHomogeneous;
  std::size_t classes_per_client = 1;
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
};

/// Splits rows across clients.
///
/// Homogeneous: a seeded shuffle dealt round-robin, so every client gets
/// floor(n/N) rows and the remainder goes to the lowest client indices.
/// By-label: client i owns classes (i*c + t) mod C for t < c, and every
/// class's rows are dealt round-robin among its owners.
Federation partition_rows(const LabeledRows& rows, const PartitionSpec& spec);

struct CsvOptions {
  bool has_header = true;
  /// Column name (requires a header) or zero-based index.
  std::string label_column = "label";
  /// Column holding the class id for by-label partitioning; defaults to the label.
  std::optional<std::string> class_column;
};

LabeledRows read_labeled_csv(const std::filesystem::path& path, const CsvOptions& options);

/// Well-separated Gaussian clusters, one per class; the training label is
/// +1 for even class ids and -1 for odd.
LabeledRows gen_clusters(std::size_t n_classes, std::size_t rows_per_class, std::size_t dim,
                         double separation, std::uint64_t seed);

/// Writes shard_<i>.csv (columns split,label,x0..) and federation.manifest.
void export_federation(const Federation& fed, const std::filesystem::path& dir);
Federation load_federation(const std::filesystem::path& dir);

}  // namespace perm
