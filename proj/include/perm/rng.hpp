#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <random>
#include <vector>

namespace perm {

/// Purpose tags that separate the random streams used by different stages.
enum class StreamTag : std::uint64_t {
  kFeatures = 1,
  kLabeler = 2,
  kSplit = 3,
  kPartition = 4,
  kLocalSgd = 5,
  kPermutation = 6,
  kShuffleSample = 7,
  kGlobalBatch = 8,
  kFineTune = 9,
};

/// Counter-based generator: the n-th output is a pure function of
/// (seed, key..., n), so streams for different clients or rounds can be
/// drawn in any order or on any thread with identical results.
///
/// Satisfies UniformRandomBitGenerator, so it plugs into <random>
/// distributions.
class Stream {
 public:
  using result_type = std::uint64_t;

  Stream(std::uint64_t seed, StreamTag tag, std::initializer_list<std::uint64_t> key = {});

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() { return mix(key_ + (++counter_) * kGolden); }

  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n);
  /// Uniform double in [0, 1).
  double uniform();
  double normal() { return normal_(*this); }

  static std::uint64_t mix(std::uint64_t x);

 private:
  static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

/// Uniform random permutation of 0..n-1 (Fisher-Yates).
std::vector<std::size_t> random_permutation(std::size_t n, Stream& rng);

}  // namespace perm
