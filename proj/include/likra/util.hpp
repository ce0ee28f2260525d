#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace likra {

// Contract violations: a caller handed us arguments that break a documented
// precondition (shape mismatch, empty target, mixed polarity, ...).
class ContractError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

// Malformed input files (JSONL datasets, likelihood tables, config files).
class ParseError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Inputs are well-formed but inconsistent with each other (missing table
// entries, checkpoint/config mismatch, absent checkpoint files).
class ValidationError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

using Rng = std::mt19937_64;

// FNV-1a, used for seed derivation and content checksums.
inline uint64_t fnv1a64(const void* bytes, size_t n, uint64_t h = 1469598103934665603ull) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

inline uint64_t fnv1a64(std::string_view s, uint64_t h = 1469598103934665603ull) {
    return fnv1a64(s.data(), s.size(), h);
}

inline std::string hex64(uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[i] = digits[v & 0xf];
        v >>= 4;
    }
    return out;
}

// Independent child seed for a named sub-stream of a run seed. Two distinct
// tags never collide in practice, and the mapping is stable across builds.
inline uint64_t derive_seed(uint64_t seed, std::string_view tag) {
    uint64_t h = fnv1a64(tag);
    h = fnv1a64(&seed, sizeof(seed), h);
    // splitmix64 finalizer
    h += 0x9e3779b97f4a7c15ull;
    h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ull;
    h = (h ^ (h >> 27)) * 0x94d049bb133111ebull;
    return h ^ (h >> 31);
}

inline uint64_t derive_seed(uint64_t seed, std::string_view tag, uint64_t index) {
    uint64_t h = derive_seed(seed, tag);
    h = fnv1a64(&index, sizeof(index), h);
    return h * 0x2545f4914f6cdd1dull ^ (h >> 29);
}

// Number of Unicode code points in a UTF-8 string (continuation bytes do not
// count). Invalid sequences degrade to byte counting, which is fine for the
// byte-level pipeline.
inline size_t utf8_char_count(std::string_view s) {
    size_t n = 0;
    for (unsigned char c : s) {
        if ((c & 0xC0) != 0x80) ++n;
    }
    return n;
}

template <typename T>
inline bool all_finite(const std::vector<T>& v) {
    for (T x : v) {
        if (!std::isfinite(static_cast<double>(x))) return false;
    }
    return true;
}

inline std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

inline std::string iso8601_now() {
    using namespace std::chrono;
    auto now = system_clock::now();
    std::time_t t = system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

inline std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    size_t start = 0;
    while (true) {
        size_t pos = s.find(sep, start);
        if (pos == std::string_view::npos) {
            out.emplace_back(s.substr(start));
            break;
        }
        out.emplace_back(s.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

inline std::string trim(std::string_view s) {
    size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return std::string(s.substr(a, b - a));
}

}  // namespace likra
