#pragma once

#include <cstdint>
#include <random>

#include "gmmlab/types.hpp"

namespace gmmlab {

/// Deterministic random stream with key-derived children.
///
/// A stream is identified by a 64-bit key. `split(id)` derives a child key by
/// hashing (key, id), so any tree of streams (master -> chain -> sub-stream) is
/// reproducible regardless of the order in which the children are created or
/// consumed. A stream must not be shared between threads.
class RngStream {
 public:
  explicit RngStream(std::uint64_t key) : key_(key), engine_(mix(key)) {}

  std::uint64_t key() const noexcept { return key_; }

  RngStream split(std::uint64_t id) const { return RngStream(mix(key_ ^ mix(id + 0x632be59bd9b4e019ULL))); }

  double normal() { return normal_(engine_); }

  /// Uniform in [0, 1).
  double uniform() { return std::generate_canonical<double, 53>(engine_); }

  Vec normal_vector(Eigen::Index dim) {
    Vec v(dim);
    for (Eigen::Index i = 0; i < dim; ++i) v[i] = normal();
    return v;
  }

  /// Index drawn from unnormalized nonnegative weights.
  Eigen::Index categorical(const Vec& weights) {
    const double u = uniform() * weights.sum();
    double acc = 0.0;
    for (Eigen::Index i = 0; i < weights.size(); ++i) {
      acc += weights[i];
      if (u < acc) return i;
    }
    return weights.size() - 1;
  }

  std::mt19937_64& engine() noexcept { return engine_; }

  /// splitmix64 finalizer.
  static std::uint64_t mix(std::uint64_t z) noexcept {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t key_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace gmmlab
