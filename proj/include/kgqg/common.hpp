#pragma once

#include <cctype>
#include <cstddef>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace kgqg {

class Error : public std::runtime_error {
  public:
    explicit Error(const std::string &msg) : std::runtime_error(msg) {}
};

namespace detail {
inline void format_into(std::ostringstream &) {}
template <typename T, typename... Rest>
void format_into(std::ostringstream &os, const T &head, const Rest &...rest) {
    os << head;
    format_into(os, rest...);
}
} // namespace detail

template <typename... Args>
[[noreturn]] void fail(const Args &...args) {
    std::ostringstream os;
    detail::format_into(os, args...);
    throw Error(os.str());
}

template <typename... Args>
void require(bool cond, const Args &...args) {
    if (!cond) fail(args...);
}

/// Deterministic RNG. Distributions are hand-rolled on top of mt19937_64 so
/// that sampled values do not depend on the standard library implementation.
class Rng {
  public:
    explicit Rng(std::uint64_t seed = 42) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    /// Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    bool bernoulli(double p) { return uniform() < p; }

    /// Uniform integer in [0, n).
    std::size_t index(std::size_t n) {
        return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
    }

    /// Sample an index from an unnormalized non-negative weight vector.
    template <typename F>
    std::size_t categorical(const std::vector<F> &weights) {
        double total = 0;
        for (F w : weights) total += static_cast<double>(w);
        double u = uniform() * total;
        double acc = 0;
        for (std::size_t i = 0; i < weights.size(); ++i) {
            acc += static_cast<double>(weights[i]);
            if (u < acc) return i;
        }
        return weights.empty() ? 0 : weights.size() - 1;
    }

    std::string state() const {
        std::ostringstream os;
        os << gen_;
        return os.str();
    }

    void restore(const std::string &s) {
        std::istringstream is(s);
        is >> gen_;
    }

  private:
    std::mt19937_64 gen_;
};

// --- text utilities ---

inline std::string lowercase(const std::string &s) {
    std::string out = s;
    for (char &c : out)
        c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

/// Lowercase, set punctuation characters off as their own tokens, then split
/// on whitespace. "where was Mario born?" -> {where, was, mario, born, ?}
inline std::vector<std::string> tokenize(const std::string &text) {
    std::string spaced;
    spaced.reserve(text.size() * 2);
    for (char raw : text) {
        char c = static_cast<char>(std::tolower(static_cast<unsigned char>(raw)));
        if (std::ispunct(static_cast<unsigned char>(c))) {
            spaced += ' ';
            spaced += c;
            spaced += ' ';
        } else {
            spaced += c;
        }
    }
    std::vector<std::string> tokens;
    std::istringstream is(spaced);
    std::string tok;
    while (is >> tok) tokens.push_back(tok);
    return tokens;
}

inline std::string join(const std::vector<std::string> &tokens, const std::string &sep = " ") {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) out += sep;
        out += tokens[i];
    }
    return out;
}

/// FNV-1a, used for input/config change detection (not cryptographic).
inline std::uint64_t fnv1a_bytes(const void *data, std::size_t len,
                                 std::uint64_t h = 0xcbf29ce484222325ull) {
    const auto *p = static_cast<const unsigned char *>(data);
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t fnv1a(const std::string &s, std::uint64_t h = 0xcbf29ce484222325ull) {
    return fnv1a_bytes(s.data(), s.size(), h);
}

} // namespace kgqg
