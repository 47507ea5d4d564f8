#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "palette/common.hpp"

namespace palette {

// Bounded uniform sample of a stream (Algorithm R). `seen()` counts every
// offered value, `samples()` holds at most `capacity()` of them.
class Reservoir {
 public:
  explicit Reservoir(std::size_t capacity = 10000);

  // Rebuilds a reservoir from serialized parts.
  static Reservoir from_parts(std::size_t capacity, std::uint64_t seen,
                              std::vector<double> samples);

  void add(double value, Rng& rng);

  // Weighted merge: each retained slot is drawn from `a` or `b` with
  // probability proportional to the number of values each side has seen.
  static Reservoir merged(const Reservoir& a, const Reservoir& b, Rng& rng);

  std::size_t capacity() const { return capacity_; }
  std::uint64_t seen() const { return seen_; }
  const std::vector<double>& samples() const { return samples_; }
  bool empty() const { return samples_.empty(); }

  double mean() const;
  double sample(Rng& rng) const;

  bool operator==(const Reservoir&) const = default;

 private:
  std::size_t capacity_;
  std::uint64_t seen_ = 0;
  std::vector<double> samples_;
};

}  // namespace palette
