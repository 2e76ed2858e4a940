#ifndef CLC_RNG_HPP_
#define CLC_RNG_HPP_

#include <charconv>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "clc/errors.hpp"
#include "clc/matrix.hpp"

namespace clc {

// Deterministic random source. The engine is std::mt19937_64, whose output
// stream is fully specified by the standard, and all distribution transforms
// are implemented here (53-bit uniform, Box-Muller normals, rejection-sampled
// indices) so that a seed produces the identical stream on every platform.
// Single-owner: never share one instance across threads.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; the second deviate is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  // Unbiased integer in [0, n) via rejection sampling.
  std::size_t uniform_index(std::size_t n) {
    if (n == 0) throw ContractError("Rng::uniform_index: n must be positive");
    const std::uint64_t span = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return static_cast<std::size_t>(x % span);
  }

  // Fisher-Yates; std::shuffle is implementation-defined, this is not.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[uniform_index(i)]);
    }
  }

  // Child stream seeded from this stream; advances the parent.
  Rng split() { return Rng(next_u64() ^ 0x9e3779b97f4a7c15ull); }

  // Textual state round-trip, used by checkpoints to resume streams exactly.
  std::string state() const {
    std::ostringstream os;
    os << engine_ << '|' << (has_spare_ ? 1 : 0) << '|';
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), spare_, std::chars_format::hex);
    os.write(buf, ptr - buf);
    return os.str();
  }

  void set_state(const std::string& s) {
    const std::size_t p1 = s.rfind('|');
    const std::size_t p0 = p1 == std::string::npos ? std::string::npos : s.rfind('|', p1 - 1);
    if (p0 == std::string::npos || p1 == std::string::npos) {
      throw ParseError("Rng::set_state: malformed state string");
    }
    std::istringstream is(s.substr(0, p0));
    is >> engine_;
    if (!is) throw ParseError("Rng::set_state: malformed engine state");
    has_spare_ = s.substr(p0 + 1, p1 - p0 - 1) == "1";
    const std::string hex = s.substr(p1 + 1);
    auto [ptr, ec] = std::from_chars(hex.data(), hex.data() + hex.size(), spare_,
                                     std::chars_format::hex);
    if (ec != std::errc{}) throw ParseError("Rng::set_state: malformed spare value");
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

inline Matrix random_uniform(Rng& rng, std::size_t rows, std::size_t cols, double lo, double hi) {
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(lo, hi);
  return m;
}

inline Matrix random_normal(Rng& rng, std::size_t rows, std::size_t cols, double mean = 0.0,
                            double stddev = 1.0) {
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = mean + stddev * rng.normal();
  return m;
}

}  // namespace clc

#endif  // CLC_RNG_HPP_
