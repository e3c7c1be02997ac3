#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace flava {

// FNV-1a 64-bit. Used for content hashes and per-name parameter seeding.
inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Deterministic stream derivation: every stochastic decision in the project
// draws from an rng keyed by (seed, domain string, counter). Combined with a
// per-step counter this makes checkpoint resume exactly reproduce the
// uninterrupted trajectory.
inline std::mt19937_64 derive_rng(std::uint64_t seed, std::string_view domain,
                                  std::uint64_t counter = 0) {
    std::uint64_t k = splitmix64(seed ^ fnv1a64(domain));
    return std::mt19937_64(splitmix64(k ^ counter * 0x9e3779b97f4a7c15ULL));
}

// Shortest decimal form that round-trips a double (metrics logs must be
// byte-identical across runs, so all float formatting goes through here).
std::string format_double(double v);

std::string format_kv(std::string_view key, double v);
std::string format_kv(std::string_view key, std::int64_t v);
std::string format_kv(std::string_view key, std::string_view v);

struct FlavaError : std::runtime_error {
    std::string category;
    FlavaError(std::string cat, const std::string& msg)
        : std::runtime_error(msg), category(std::move(cat)) {}
};

[[noreturn]] inline void fail(std::string category, const std::string& msg) {
    throw FlavaError(std::move(category), msg);
}

}  // namespace flava
