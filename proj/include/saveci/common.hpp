#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace saveci {

// ---------------------------------------------------------------------------
// Error types
// ---------------------------------------------------------------------------

class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DegenerateDataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class PartitionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class RunError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Thrown when a linear system is numerically singular at lambda = 0.
// Carries the reciprocal condition estimate so callers can decide to retry
// with a ridge term.
class SingularSystemError : public std::runtime_error {
 public:
  explicit SingularSystemError(double rcond, const std::string& context = "")
      : std::runtime_error("singular system (rcond=" + std::to_string(rcond) +
                           (context.empty() ? "" : ", " + context) + ")"),
        rcond_(rcond) {}
  double rcond() const { return rcond_; }

 private:
  double rcond_;
};

// ---------------------------------------------------------------------------
// Random number generation
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Deterministic generator with explicit distribution algorithms, so that a
// fixed seed produces identical streams across standard library versions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(splitmix64(seed)) {}

  // Derive an independent stream for (seed, stream index).
  static Rng derive(std::uint64_t seed, std::uint64_t stream) {
    return Rng(splitmix64(seed) ^ splitmix64(stream * 0xd1342543de82ef95ULL + 1));
  }

  // Uniform on [0, 1).
  double uniform() {
    return (gen_() >> 11) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller (no cached second draw).
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
  }

  // Uniform integer in {0, ..., m-1}.
  int uniform_int(int m) {
    return static_cast<int>(uniform() * m) % m;
  }

  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::mt19937_64 gen_;
};

// ---------------------------------------------------------------------------
// Normal distribution helpers
// ---------------------------------------------------------------------------

inline double normal_cdf(double x) {
  return 0.5 * std::erfc(-x * 0.7071067811865475244008444);
}

// Inverse standard normal CDF (Wichura's AS 241, double precision branch).
double normal_quantile(double p);

// z_{alpha/2}: two-sided critical value at miscoverage alpha.
inline double z_quantile(double alpha) { return normal_quantile(1.0 - alpha / 2.0); }

}  // namespace saveci
