#pragma once

#include <cstdint>
#include <initializer_list>
#include <string_view>

// Counter-based random numbers. A key names an independent stream; the value
// at position n of a stream is a pure function of (key, n), so draws never
// depend on how many other streams were consumed or in which thread.
namespace rica::rng {

// SplitMix64 finaliser.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// FNV-1a, used to turn parameter names into stream keys.
constexpr std::uint64_t hash_name(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Key {
 public:
  constexpr Key() = default;
  constexpr explicit Key(std::uint64_t seed) : value_(mix64(seed ^ 0x5851f42d4c957f2dULL)) {}

  // Child stream keyed by an integer label.
  constexpr Key derive(std::uint64_t label) const {
    Key k;
    k.value_ = mix64(value_ ^ mix64(label + 0x632be59bd9b4e019ULL));
    return k;
  }

  constexpr Key derive(std::initializer_list<std::uint64_t> labels) const {
    Key k = *this;
    for (auto l : labels) k = k.derive(l);
    return k;
  }

  constexpr std::uint64_t bits(std::uint64_t counter) const {
    return mix64(value_ ^ mix64(counter ^ 0xd1b54a32d192ed03ULL));
  }

  // Uniform in the open interval (0, 1).
  double uniform(std::uint64_t counter) const;
  // Standard normal by Box-Muller.
  double normal(std::uint64_t counter) const;

  constexpr std::uint64_t value() const { return value_; }
  friend constexpr bool operator==(Key a, Key b) { return a.value_ == b.value_; }

 private:
  std::uint64_t value_ = 0;
};

// Sequential reader over one keyed stream.
class Stream {
 public:
  explicit Stream(Key key) : key_(key) {}

  double uniform() { return key_.uniform(counter_++); }
  double normal() { return key_.normal(counter_++); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [lo, hi].
  std::int64_t integer(std::int64_t lo, std::int64_t hi);

  std::uint64_t counter() const { return counter_; }

 private:
  Key key_;
  std::uint64_t counter_ = 0;
};

}  // namespace rica::rng
