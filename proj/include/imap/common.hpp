#ifndef IMAP_COMMON_HPP
#define IMAP_COMMON_HPP

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace imap {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Rng = std::mt19937_64;

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
  public:
    using Error::Error;
};

class NumericError : public Error {
  public:
    using Error::Error;
};

class PreconditionError : public Error {
  public:
    using Error::Error;
};

class ConfigError : public Error {
  public:
    using Error::Error;
};

class CheckpointError : public Error {
  public:
    using Error::Error;
};

/// Raised when a training loss leaves the sane range; carries a diagnostic message.
class DivergenceError : public Error {
  public:
    using Error::Error;
};

/// splitmix64 finalizer, used to derive independent RNG streams from (seed, stream id).
[[nodiscard]] constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) noexcept
{
    std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

[[nodiscard]] inline double uniform01(Rng& rng)
{
    return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

/// Standard Gumbel(0, 1) draw.
[[nodiscard]] inline double sample_gumbel(Rng& rng)
{
    return std::extreme_value_distribution<double>(0.0, 1.0)(rng);
}

/// Index drawn from an unnormalized non-negative weight vector.
[[nodiscard]] inline std::size_t sample_categorical(std::span<const double> weights, Rng& rng)
{
    return std::discrete_distribution<std::size_t>(weights.begin(), weights.end())(rng);
}

[[nodiscard]] inline double logistic(double x) noexcept
{
    if(x >= 0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

/// log(logistic(x)) without overflow for large |x|.
[[nodiscard]] inline double log_logistic(double x) noexcept
{
    return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

[[nodiscard]] inline double softplus(double x) noexcept
{
    return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

/// Inverse of softplus for y > 0.
[[nodiscard]] inline double inverse_softplus(double y)
{
    if(!(y > 0)) {
        throw PreconditionError("inverse_softplus requires a positive argument");
    }
    return y > 30 ? y + std::log(-std::expm1(-y)) : std::log(std::expm1(y));
}

/// beta * log(sum_i exp(x_i / beta)).
[[nodiscard]] inline double soft_maximum(std::span<const double> xs, double beta)
{
    double top = -std::numeric_limits<double>::infinity();
    for(double x : xs) {
        top = std::max(top, x);
    }
    double acc = 0.0;
    for(double x : xs) {
        acc += std::exp((x - top) / beta);
    }
    return top + beta * std::log(acc);
}

[[nodiscard]] inline bool all_finite(std::span<const double> xs) noexcept
{
    for(double x : xs) {
        if(!std::isfinite(x)) {
            return false;
        }
    }
    return true;
}

}  // namespace imap

#endif  // IMAP_COMMON_HPP
