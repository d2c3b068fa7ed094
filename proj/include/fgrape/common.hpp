// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <iostream>
#include <mutex>
#include <stdexcept>
#include <string>
#include <vector>

namespace fgrape {

using cxd = std::complex<double>;

inline constexpr double kPi = 3.14159265358979323846;

// Error vocabulary. Everything user-facing throws one of these so callers can
// distinguish bad layouts from bad states from numerical breakdown.
struct LayoutError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DimensionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct StateError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct TruncationError : std::runtime_error {
  double lost_norm;
  TruncationError(const std::string& msg, double lost)
      : std::runtime_error(msg), lost_norm(lost) {}
};
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct GradientError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-fatal warning channel: mirrored to stderr and collected so tests can
// assert that a guard fired.
inline std::vector<std::string>& warning_log() {
  static std::vector<std::string> log;
  return log;
}

inline void warn(const std::string& msg) {
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  warning_log().push_back(msg);
  std::cerr << "[warn] " << msg << "\n";
}

// splitmix64, used to derive independent per-trajectory stream seeds from
// (run seed, trajectory index) without correlations between streams.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Deterministic RNG. Draws doubles straight from the raw 64-bit stream so the
// sequence is identical across standard libraries (std::uniform_real_distribution
// is not portable bit-for-bit).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : s_(seed == 0 ? 0x6a09e667f3bcc909ULL : seed) {}
  static Rng for_stream(std::uint64_t seed, std::uint64_t index) {
    return Rng(splitmix64(seed ^ splitmix64(index + 0x51ed270b7a64fa71ULL)));
  }

  std::uint64_t next_u64() {
    // xorshift64* on a splitmix-initialised state
    std::uint64_t x = s_;
    x ^= x >> 12;
    x ^= x << 25;
    x ^= x >> 27;
    s_ = x;
    return x * 0x2545f4914f6cdd1dULL;
  }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // standard normal via Box-Muller (explicit formulas for portability)
  double gauss() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * kPi * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

 private:
  std::uint64_t s_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace fgrape
