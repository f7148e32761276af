#include "psagan/rng.hpp"

#include <cmath>

namespace psagan {

namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
    x += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace

Rng::Rng(std::uint64_t seed) : state_(seed) {}

Rng Rng::split(std::string_view tag) const {
    std::uint64_t s = state_ ^ fnv1a64(tag);
    // One scramble so that child streams with related tags decorrelate.
    splitmix64(s);
    return Rng(s);
}

Rng Rng::split(std::string_view tag, std::uint64_t index) const {
    std::uint64_t s = state_ ^ fnv1a64(tag) ^ (0x6a09e667f3bcc909ULL * (index + 1));
    splitmix64(s);
    return Rng(s);
}

std::uint64_t Rng::next_u64() {
    return splitmix64(state_);
}

double Rng::next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::int64_t Rng::uniform_int(std::int64_t lo, std::int64_t hi) {
    if (hi < lo) return lo;
    std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    if (span == 0) return static_cast<std::int64_t>(next_u64());
    // Multiply-shift mapping; bias is negligible for span << 2^64 and the
    // mapping is a pure function of the stream, which is what matters here.
    unsigned __int128 m = static_cast<unsigned __int128>(next_u64()) * span;
    return lo + static_cast<std::int64_t>(m >> 64);
}

float Rng::uniform(float lo, float hi) {
    return lo + static_cast<float>(next_double()) * (hi - lo);
}

float Rng::normal() {
    double u1 = 0.0;
    do {
        u1 = next_double();
    } while (u1 <= 0.0);
    double u2 = next_double();
    double r = std::sqrt(-2.0 * std::log(u1));
    return static_cast<float>(r * std::cos(2.0 * M_PI * u2));
}

std::vector<float> normal_vector(Rng& rng, std::size_t n) {
    std::vector<float> v(n);
    for (auto& x : v) x = rng.normal();
    return v;
}

std::vector<float> uniform_vector(Rng& rng, std::size_t n, float lo, float hi) {
    std::vector<float> v(n);
    for (auto& x : v) x = rng.uniform(lo, hi);
    return v;
}

std::uint64_t fnv1a64(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t fnv1a64(std::string_view s) {
    return fnv1a64(s.data(), s.size());
}

}  // namespace psagan
