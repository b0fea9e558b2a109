#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace degdit {

// SplitMix64. Small, fast, and stable across platforms; every stochastic
// choice in the project goes through this so runs are reproducible bit for bit.
struct SplitMix64 {
    uint64_t state = 0;

    explicit SplitMix64(uint64_t seed = 0) : state(seed) {}

    uint64_t next() {
        uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }
};

inline uint64_t fnv1a64(std::string_view s) {
    uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

inline uint64_t mix_seed(uint64_t a, uint64_t b) {
    SplitMix64 sm(a ^ (0x9E3779B97F4A7C15ULL + (b << 6) + (b >> 2)));
    sm.next();
    return sm.next();
}

// Deterministic RNG: uniform doubles in [0,1), Box-Muller gaussians (spare
// cached), unbiased-enough integer draws for desk-scale sampling.
class Rng {
  public:
    explicit Rng(uint64_t seed = 0) : sm_(seed) {}

    uint64_t next_u64() { return sm_.next(); }

    double uniform() {
        return static_cast<double>(sm_.next() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * M_PI * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    // integer in [0, n)
    int uniform_int(int n) {
        return static_cast<int>(sm_.next() % static_cast<uint64_t>(n));
    }

    Eigen::MatrixXd gaussian_matrix(int rows, int cols) {
        Eigen::MatrixXd m(rows, cols);
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j) m(i, j) = gaussian();
        return m;
    }

  private:
    SplitMix64 sm_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Named sub-stream of a master seed. Keeps corpus synthesis, parameter init,
// training draws, and sampler noise statistically independent but reproducible.
inline Rng derive_rng(uint64_t seed, std::string_view stream) {
    return Rng(mix_seed(seed, fnv1a64(stream)));
}

inline std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    std::string cur;
    for (char ch : text) {
        if (std::isspace(static_cast<unsigned char>(ch))) {
            if (!cur.empty()) {
                tokens.push_back(cur);
                cur.clear();
            }
        } else {
            cur.push_back(static_cast<char>(
                std::tolower(static_cast<unsigned char>(ch))));
        }
    }
    if (!cur.empty()) tokens.push_back(cur);
    return tokens;
}

// Vocabulary-free embedding table: a token's row is a pure function of
// (token, seed), so the table never needs to be materialized or stored.
inline Eigen::RowVectorXd token_embedding(std::string_view token, uint64_t seed,
                                          int dim) {
    Rng rng(mix_seed(seed ^ 0x7E46A0B1C3D5E7F9ULL, fnv1a64(token)));
    Eigen::RowVectorXd v(dim);
    const double s = 1.0 / std::sqrt(static_cast<double>(dim));
    for (int i = 0; i < dim; ++i) v(i) = rng.gaussian() * s;
    return v;
}

// Unit-norm class signature, same hashing scheme as token_embedding.
inline Eigen::RowVectorXd class_signature(std::string_view label, uint64_t seed,
                                          int dim) {
    Rng rng(mix_seed(seed ^ 0x51A7B3C9D2E4F601ULL, fnv1a64(label)));
    Eigen::RowVectorXd v(dim);
    for (int i = 0; i < dim; ++i) v(i) = rng.gaussian();
    double n = v.norm();
    if (n < 1e-12) {
        v.setZero();
        v(0) = 1.0;
        return v;
    }
    return v / n;
}

}  // namespace degdit
