#pragma once

#include <compare>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace palette {

// An API is identified by the service (partition) it runs in plus its
// operation name.
struct VertexId {
  std::string service;
  std::string operation;

  auto operator<=>(const VertexId&) const = default;
  bool operator==(const VertexId&) const = default;

  std::string str() const { return service + "." + operation; }
};

// Callees invoked together in one execution step. Kept sorted; a callee may
// appear more than once when it is invoked concurrently with itself.
using CallSet = std::vector<VertexId>;

CallSet make_call_set(std::vector<VertexId> callees);
std::string label(const CallSet& set);

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid user-supplied configuration, detected before any processing.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A caller broke an operation's precondition.
class ContractViolation : public Error {
 public:
  using Error::Error;
};

// A structured document has the wrong schema tag or shape.
class SchemaError : public Error {
 public:
  using Error::Error;
};

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a(std::string_view text);
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

// Portable, seedable random source. Uses mt19937_64 (whose output sequence
// is fixed by the standard) and implements its own conversions so results do
// not depend on the standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  // Uniform in [0, 1).
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  // Uniform in [0, n). n must be > 0.
  std::uint64_t uniform_index(std::uint64_t n);
  double exponential(double rate);
  double normal();

 private:
  std::mt19937_64 engine_;
};

}  // namespace palette
