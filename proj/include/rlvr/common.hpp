#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace rlvr {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Index = Eigen::Index;
using TokenId = int;

using Rng = std::mt19937_64;

// Error taxonomy mapped onto CLI exit codes: ConfigError/UsageError -> 1,
// everything else -> 2.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Sub-seed derivation: every rng stream is keyed by (master seed, component
// name, up to two integer coordinates such as step and prompt index).  This
// makes results independent of scheduling order.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view component,
                                 std::uint64_t a = 0, std::uint64_t b = 0) {
    std::uint64_t h = splitmix64(master);
    for (char c : component) {
        h = splitmix64(h ^ static_cast<std::uint64_t>(static_cast<unsigned char>(c)));
    }
    h = splitmix64(h ^ a);
    h = splitmix64(h ^ b);
    return h;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Numerically stable softmax / log-softmax over a logit vector.
template <typename Derived>
Vec softmax(const Eigen::MatrixBase<Derived>& logits) {
    Vec z = logits;
    const double m = z.maxCoeff();
    z = (z.array() - m).exp();
    return z / z.sum();
}

template <typename Derived>
Vec log_softmax(const Eigen::MatrixBase<Derived>& logits) {
    Vec z = logits;
    const double m = z.maxCoeff();
    const double lse = std::log((z.array() - m).exp().sum()) + m;
    return z.array() - lse;
}

}  // namespace rlvr
