#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace reflect {

// Counter-based RNG (Philox 4x32-10). A draw is a pure function of
// (seed, path_index, step_index, stream), so parallel simulation over paths
// is reproducible bit-for-bit regardless of scheduling.
namespace philox {

inline constexpr uint32_t kMul0 = 0xD2511F53u;
inline constexpr uint32_t kMul1 = 0xCD9E8D57u;
inline constexpr uint32_t kWeyl0 = 0x9E3779B9u;
inline constexpr uint32_t kWeyl1 = 0xBB67AE85u;

inline std::array<uint32_t, 4> block(uint64_t seed, uint64_t path_index,
                                     uint64_t step_index, uint32_t stream) {
  uint32_t c0 = static_cast<uint32_t>(step_index);
  uint32_t c1 = static_cast<uint32_t>(step_index >> 32);
  uint32_t c2 = static_cast<uint32_t>(path_index);
  uint32_t c3 = static_cast<uint32_t>(path_index >> 32) ^ stream;
  uint32_t k0 = static_cast<uint32_t>(seed);
  uint32_t k1 = static_cast<uint32_t>(seed >> 32);
  for (int round = 0; round < 10; ++round) {
    uint64_t p0 = static_cast<uint64_t>(kMul0) * c0;
    uint64_t p1 = static_cast<uint64_t>(kMul1) * c2;
    uint32_t hi0 = static_cast<uint32_t>(p0 >> 32), lo0 = static_cast<uint32_t>(p0);
    uint32_t hi1 = static_cast<uint32_t>(p1 >> 32), lo1 = static_cast<uint32_t>(p1);
    c0 = hi1 ^ c1 ^ k0;
    c1 = lo1;
    c2 = hi0 ^ c3 ^ k1;
    c3 = lo0;
    k0 += kWeyl0;
    k1 += kWeyl1;
  }
  return {c0, c1, c2, c3};
}

// 53-bit uniform in (0,1]; never 0, so it is safe under log().
inline double u01(uint32_t hi, uint32_t lo) {
  uint64_t bits = (static_cast<uint64_t>(hi) << 32) | lo;
  return (static_cast<double>(bits >> 11) + 1.0) * 0x1p-53;
}

}  // namespace philox

struct NormalPair {
  double z1, z2;
};

// Two independent standard normals per (path, step) via Box-Muller.
inline NormalPair normal_pair(uint64_t seed, uint64_t path_index,
                              uint64_t step_index, uint32_t stream = 0) {
  auto b = philox::block(seed, path_index, step_index, stream);
  double u1 = philox::u01(b[0], b[1]);
  double u2 = philox::u01(b[2], b[3]);
  double r = std::sqrt(-2.0 * std::log(u1));
  double a = 6.283185307179586476925286766559 * u2;
  return {r * std::cos(a), r * std::sin(a)};
}

inline double uniform01(uint64_t seed, uint64_t path_index, uint64_t step_index,
                        uint32_t stream = 0) {
  auto b = philox::block(seed, path_index, step_index, stream);
  return philox::u01(b[0], b[1]);
}

}  // namespace reflect
