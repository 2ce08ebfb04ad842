#pragma once

#include <cstdint>
#include <initializer_list>
#include <string_view>

namespace dro {

// Counter-based splitmix64 stream. Every random decision in the project is
// drawn from a stream derived from the run's root seed plus a label path,
// so results are reproducible across platforms and independent of call order
// elsewhere in the program. std::random distributions are deliberately not
// used (their output is implementation-defined).
struct RngStream {
  std::uint64_t state = 0x9e3779b97f4a7c15ULL;

  std::uint64_t next() {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // [0, 1)
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n), Lemire multiply-shift
  std::uint64_t below(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next()) * n) >> 64);
  }
};

inline std::uint64_t hash_label(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t mix_u64(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  return z ^ (z >> 27);
}

inline RngStream substream(std::uint64_t root,
                           std::initializer_list<std::uint64_t> path) {
  std::uint64_t s = root;
  for (std::uint64_t p : path) s = mix_u64(s, p);
  return RngStream{s};
}

}  // namespace dro
