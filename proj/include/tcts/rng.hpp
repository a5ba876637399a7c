#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace tcts {

// Deterministic RNG wrapper. All draws go through explicitly coded
// transforms (Box-Muller, CDF scan) so results depend only on the
// mt19937_64 stream, not on library-specific distribution internals.
class Rng {
public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  // Named substream: derive an independent generator from (seed, tag).
  // Identical (seed, tag) pairs always yield identical streams.
  static Rng substream(uint64_t seed, std::string_view tag) {
    uint64_t h = 0x9e3779b97f4a7c15ull ^ seed;
    for (char c : tag) {
      h ^= static_cast<uint64_t>(static_cast<unsigned char>(c));
      h *= 0x100000001b3ull;
    }
    return Rng(splitmix(h));
  }

  double uniform() {  // [0, 1)
    return (engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Inclusive integer range.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    if (lo > hi) throw std::invalid_argument("uniform_int: empty range");
    uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    // Rejection sampling keeps the draw unbiased.
    uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    uint64_t v;
    do {
      v = engine_();
    } while (v >= limit);
    return lo + static_cast<int64_t>(v % span);
  }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0, u2 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  // Index draw from an (unnormalized is not allowed) probability vector.
  size_t sample_discrete(const std::vector<double>& probs) {
    double u = uniform();
    double acc = 0.0;
    for (size_t i = 0; i < probs.size(); ++i) {
      acc += probs[i];
      if (u < acc) return i;
    }
    return probs.size() - 1;  // guards rounding at the tail
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_int(0, static_cast<int64_t>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

  std::string state() const {
    std::ostringstream os;
    os << engine_ << ' ' << (have_spare_ ? 1 : 0) << ' ' << spare_;
    return os.str();
  }

  void restore(const std::string& s) {
    std::istringstream is(s);
    int flag = 0;
    is >> engine_ >> flag >> spare_;
    if (!is) throw std::invalid_argument("Rng::restore: malformed state string");
    have_spare_ = flag != 0;
  }

private:
  static uint64_t splitmix(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }

  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace tcts
