#pragma once

#include <cmath>
#include <cstdint>

namespace voxseg {

// Counter-based generator: output i of stream s under seed k is
// splitmix64(k ^ splitmix64(s) ^ golden*i). Stateless apart from the counter,
// so any (seed, stream, index) triple is reproducible across platforms and
// independent of call ordering elsewhere in the program.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream = 0)
      : base_(splitmix64(seed ^ splitmix64(stream * 0xda942042e4dd58b5ULL))) {}

  std::uint64_t next_u64() { return splitmix64(base_ + counter_++ * 0x9e3779b97f4a7c15ULL); }

  // uniform in [0, 1)
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * (1.0 / 9007199254740992.0);
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  std::int64_t uniform_int(std::int64_t n) {  // [0, n)
    return static_cast<std::int64_t>(next_u64() % static_cast<std::uint64_t>(n));
  }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  CounterRng fork(std::uint64_t substream) const {
    CounterRng r(base_, substream + 1);
    return r;
  }

 private:
  std::uint64_t base_;
  std::uint64_t counter_ = 0;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace voxseg
