#pragma once

#include <cmath>
#include <cstdint>

namespace stgrid {

// splitmix64-based generator. Deterministic across platforms and compilers,
// which std:: distributions do not guarantee; every seeded run of the
// pipeline must be byte-reproducible.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  std::size_t index(std::size_t n) { return std::size_t(next_u64() % n); }

  // Marsaglia polar method with the usual cached spare.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u = 0.0, v = 0.0, s = 0.0;
    do {
      u = uniform(-1.0, 1.0);
      v = uniform(-1.0, 1.0);
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    double m = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * m;
    has_spare_ = true;
    return u * m;
  }

  // Independent substream for a pipeline stage; salting keeps stage
  // streams decorrelated while staying a pure function of (seed, salt).
  Rng split(std::uint64_t salt) const {
    Rng r(state_ ^ (salt * 0x9e3779b97f4a7c15ull + 0x632be59bd9b4e019ull));
    r.next_u64();
    return r;
  }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace stgrid
