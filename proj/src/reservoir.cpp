#include "palette/reservoir.hpp"

#include <numeric>

namespace palette {

Reservoir::Reservoir(std::size_t capacity) : capacity_(capacity) {
  if (capacity_ == 0) throw ConfigError("reservoir capacity must be >= 1");
}

Reservoir Reservoir::from_parts(std::size_t capacity, std::uint64_t seen,
                                std::vector<double> samples) {
  Reservoir r(capacity);
  if (samples.size() > capacity) {
    throw SchemaError("reservoir holds more samples than its capacity");
  }
  if (seen < samples.size()) {
    throw SchemaError("reservoir seen count is below its sample count");
  }
  r.seen_ = seen;
  r.samples_ = std::move(samples);
  return r;
}

void Reservoir::add(double value, Rng& rng) {
  ++seen_;
  if (samples_.size() < capacity_) {
    samples_.push_back(value);
    return;
  }
  const std::uint64_t slot = rng.uniform_index(seen_);
  if (slot < capacity_) samples_[slot] = value;
}

Reservoir Reservoir::merged(const Reservoir& a, const Reservoir& b, Rng& rng) {
  if (a.capacity_ != b.capacity_) {
    throw ConfigError("cannot merge reservoirs of different capacity");
  }
  Reservoir out(a.capacity_);
  out.seen_ = a.seen_ + b.seen_;
  if (a.samples_.size() + b.samples_.size() <= out.capacity_) {
    out.samples_ = a.samples_;
    out.samples_.insert(out.samples_.end(), b.samples_.begin(), b.samples_.end());
    return out;
  }

  // Draw without replacement from each side in a random order; the side is
  // picked with probability proportional to the stream mass it represents.
  std::vector<double> pa = a.samples_;
  std::vector<double> pb = b.samples_;
  auto shuffle = [&rng](std::vector<double>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[rng.uniform_index(i)]);
    }
  };
  shuffle(pa);
  shuffle(pb);
  const double wa = static_cast<double>(a.seen_);
  const double wb = static_cast<double>(b.seen_);
  std::size_t ia = 0;
  std::size_t ib = 0;
  out.samples_.reserve(out.capacity_);
  while (out.samples_.size() < out.capacity_) {
    const bool a_left = ia < pa.size();
    const bool b_left = ib < pb.size();
    bool take_a;
    if (a_left && b_left) {
      take_a = rng.uniform01() * (wa + wb) < wa;
    } else {
      take_a = a_left;
    }
    out.samples_.push_back(take_a ? pa[ia++] : pb[ib++]);
  }
  return out;
}

double Reservoir::mean() const {
  if (samples_.empty()) return 0.0;
  return std::accumulate(samples_.begin(), samples_.end(), 0.0) /
         static_cast<double>(samples_.size());
}

double Reservoir::sample(Rng& rng) const {
  if (samples_.empty()) return 0.0;
  return samples_[rng.uniform_index(samples_.size())];
}

}  // namespace palette
