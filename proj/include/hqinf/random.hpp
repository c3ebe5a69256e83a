#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace hqinf {

// Tags for the independent noise sources inside one replication.
enum class Component : std::uint64_t {
  arrivals = 1,
  services = 2,
  initial = 3,
  thinning = 4,
  arrival_noise = 5,
  sheet = 6,
  splitting = 7,
  work_noise = 8,
  bridge = 9,
  initial_count = 10,
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

inline std::uint64_t hash_combine(std::uint64_t seed, std::uint64_t v) {
  return splitmix64(seed ^ splitmix64(v + 0x632BE59BD9B4E019ULL));
}

/// Substream id = hash(master_seed, experiment, n, replication, component).
inline std::uint64_t substream_id(std::uint64_t master_seed, std::string_view experiment, std::uint64_t n,
                                  std::uint64_t replication, Component component) {
  std::uint64_t h = splitmix64(master_seed);
  h = hash_combine(h, fnv1a(experiment));
  h = hash_combine(h, n);
  h = hash_combine(h, replication);
  return hash_combine(h, static_cast<std::uint64_t>(component));
}

/// Explicit per-caller random stream. Nothing in the library draws from
/// hidden global state.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed) : engine_(seed) {}

  /// Uniform on the open interval (0, 1).
  double uniform() {
    double u;
    do {
      u = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    } while (u == 0.0);
    return u;
  }

  double normal() { return std_normal_(engine_); }

  double exponential(double rate) { return -std::log(uniform()) / rate; }

  long poisson(double mean) {
    if (mean <= 0.0) return 0;
    return std::poisson_distribution<long>(mean)(engine_);
  }

  long binomial(long trials, double p) {
    if (trials <= 0 || p <= 0.0) return 0;
    if (p >= 1.0) return trials;
    return std::binomial_distribution<long>(trials, p)(engine_);
  }

  std::uint64_t bits() { return engine_(); }

  /// Independent child stream; consumes one draw from this stream.
  RandomStream split() { return RandomStream(splitmix64(engine_())); }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> std_normal_{0.0, 1.0};
};

}  // namespace hqinf
