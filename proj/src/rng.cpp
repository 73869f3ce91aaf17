#include "perm/rng.hpp"

#include <numeric>
#include <utility>

#include "perm/errors.hpp"

namespace perm {

std::uint64_t Stream::mix(std::uint64_t x) {
  // splitmix64 finalizer
  x ^= x >> 30;
  x *= 0xBF58476D1CE4E5B9ULL;
  x ^= x >> 27;
  x *= 0x94D049BB133111EBULL;
  x ^= x >> 31;
  return x;
}

Stream::Stream(std::uint64_t seed, StreamTag tag, std::initializer_list<std::uint64_t> key) {
  std::uint64_t h = mix(seed + kGolden);
  h = mix(h ^ (static_cast<std::uint64_t>(tag) * kGolden));
  for (std::uint64_t k : key) h = mix(h ^ mix(k + kGolden));
  key_ = h;
}

std::size_t Stream::index(std::size_t n) {
  if (n == 0) throw ParameterError("stream: index range must be non-empty");
  // Multiply-shift range reduction; bias is below 2^-40 for any realistic n.
  const unsigned __int128 wide = static_cast<unsigned __int128>((*this)()) * n;
  return static_cast<std::size_t>(wide >> 64);
}

double Stream::uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

std::vector<std::size_t> random_permutation(std::size_t n, Stream& rng) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.index(i)]);
  return perm;
}

}  // namespace perm
