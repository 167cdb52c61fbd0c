#pragma once

#include <chrono>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>

namespace fedsparse {

// splitmix64: seed derivation for independent RNG streams.
inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline uint64_t mix_seed(uint64_t seed, uint64_t stream) {
    return splitmix64(seed ^ splitmix64(stream));
}

// FNV-1a, used for reproducibility checksums in reports.
inline uint64_t fnv1a64(std::span<const uint8_t> bytes, uint64_t h = 0xcbf29ce484222325ULL) {
    for (uint8_t b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline uint64_t fnv1a64_str(const std::string& s, uint64_t h = 0xcbf29ce484222325ULL) {
    return fnv1a64({reinterpret_cast<const uint8_t*>(s.data()), s.size()}, h);
}

inline uint64_t fnv1a64_double(double v, uint64_t h) {
    uint8_t raw[sizeof(double)];
    std::memcpy(raw, &v, sizeof(double));
    return fnv1a64({raw, sizeof(double)}, h);
}

inline int64_t now_ms() {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::system_clock::now().time_since_epoch())
        .count();
}

}  // namespace fedsparse
