#ifndef ASMCMC_CORE_HPP
#define ASMCMC_CORE_HPP

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace asmcmc {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();
inline constexpr double kLogTwoPi = 1.8378770664093454835606594728112;

/// Error categories surfaced by the library; the CLI prints them verbatim.
enum class ErrorCode {
  degenerate_weights,
  dimension_mismatch,
  invalid_argument,
  non_finite_gradient,
  proposal_support,
  degenerate_smc,
  not_positive_definite,
  budget_exceeded,
  config_validation,
  io,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::degenerate_weights: return "degenerate_weights";
    case ErrorCode::dimension_mismatch: return "dimension_mismatch";
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::non_finite_gradient: return "non_finite_gradient";
    case ErrorCode::proposal_support: return "proposal_support";
    case ErrorCode::degenerate_smc: return "degenerate_smc";
    case ErrorCode::not_positive_definite: return "not_positive_definite";
    case ErrorCode::budget_exceeded: return "budget_exceeded";
    case ErrorCode::config_validation: return "config_validation";
    case ErrorCode::io: return "io";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline void require_dim(Eigen::Index got, Eigen::Index want, const char* what) {
  if (got != want) {
    throw Error(ErrorCode::dimension_mismatch, std::string(what) + ": expected dimension " +
                                                   std::to_string(want) + ", got " + std::to_string(got));
  }
}

// ---------------------------------------------------------------------------
// Log-domain weight arithmetic
// ---------------------------------------------------------------------------

struct NormalizedWeights {
  Vector normalized;
  double log_sum = kNegInf;  // log sum_n exp(lw_n)
};

/// Max-shifted normalisation of log-domain weights. Entries may be -inf.
inline NormalizedWeights normalize_log_weights(const Vector& log_weights) {
  if (log_weights.size() == 0) {
    throw Error(ErrorCode::degenerate_weights, "normalize_log_weights: empty weight vector");
  }
  const double max = log_weights.maxCoeff();
  if (!(max > kNegInf)) {
    throw Error(ErrorCode::degenerate_weights, "normalize_log_weights: all weights are zero");
  }
  if (std::isinf(max) || std::isnan(max)) {
    throw Error(ErrorCode::degenerate_weights, "normalize_log_weights: non-finite maximum weight");
  }
  NormalizedWeights out;
  // std::exp keeps exp(-inf) = 0; Eigen's packet exp clamps to a denormal
  out.normalized = log_weights.unaryExpr([max](double v) { return std::exp(v - max); });
  const double sum = out.normalized.sum();
  out.normalized /= sum;
  out.log_sum = max + std::log(sum);
  return out;
}

inline double log_sum_exp(const Vector& log_weights) { return normalize_log_weights(log_weights).log_sum; }

/// log( (1/N) sum_n exp(lw_n) ).
inline double log_sum_exp_mean(const Vector& log_weights) {
  if (log_weights.size() == 0) {
    throw Error(ErrorCode::invalid_argument, "log_sum_exp_mean: empty input");
  }
  const double max = log_weights.maxCoeff();
  if (!(max > kNegInf)) return kNegInf;
  if (log_weights.size() == 1) return max;
  const double sum = log_weights.unaryExpr([max](double v) { return std::exp(v - max); }).sum();
  return max + std::log(sum / static_cast<double>(log_weights.size()));
}

/// log(exp(a) + exp(b)) without overflow.
inline double log_add(double a, double b) {
  if (a < b) std::swap(a, b);
  if (!(b > kNegInf)) return a;
  return a + std::log1p(std::exp(b - a));
}

// ---------------------------------------------------------------------------
// Random streams
// ---------------------------------------------------------------------------

/// Reproducible random stream keyed by (seed, stream_id).
///
/// The key is expanded through std::seed_seq into the full Mersenne Twister
/// state, so distinct stream ids give unrelated sequences and equal keys give
/// bit-identical ones. Satisfies UniformRandomBitGenerator.
class RngStream {
 public:
  using result_type = std::mt19937_64::result_type;

  RngStream(std::uint64_t seed, std::uint64_t stream_id) : seed_(seed), stream_id_(stream_id) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream_id), static_cast<std::uint32_t>(stream_id >> 32),
                      0x61637469u /* tag */};
    engine_.seed(seq);
  }

  static constexpr result_type min() { return std::mt19937_64::min(); }
  static constexpr result_type max() { return std::mt19937_64::max(); }
  result_type operator()() { return engine_(); }

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream_id() const noexcept { return stream_id_; }

  /// Child stream for a sub-task; derived deterministically from this stream's key.
  RngStream substream(std::uint64_t index) const {
    return RngStream(seed_ ^ (0x9E3779B97F4A7C15ull * (stream_id_ + 1)), index);
  }

  /// Uniform on the open interval (0, 1), 53-bit resolution.
  double uniform() {
    double u;
    do {
      u = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    } while (u == 0.0);
    return u;
  }

  double normal() { return normal_(engine_); }

  Vector standard_normal(Eigen::Index n) {
    Vector z(n);
    for (Eigen::Index k = 0; k < n; ++k) z[k] = normal();
    return z;
  }

  /// Single draw from a categorical distribution given normalised probabilities.
  std::size_t categorical(const Vector& probabilities) {
    const double u = uniform();
    double cumulative = 0.0;
    const auto n = static_cast<std::size_t>(probabilities.size());
    for (std::size_t k = 0; k < n; ++k) {
      cumulative += probabilities[static_cast<Eigen::Index>(k)];
      if (u < cumulative) return k;
    }
    // Rounding left u above the final cumulative sum; return the last atom with mass.
    for (std::size_t k = n; k-- > 0;) {
      if (probabilities[static_cast<Eigen::Index>(k)] > 0.0) return k;
    }
    throw Error(ErrorCode::degenerate_weights, "categorical: no atom with positive mass");
  }

  /// Accept with probability min(1, exp(log_ratio)).
  bool accept(double log_ratio) {
    if (std::isnan(log_ratio)) return false;
    if (log_ratio >= 0.0) return true;
    return std::log(uniform()) < log_ratio;
  }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

// ---------------------------------------------------------------------------
// Gaussian helpers
// ---------------------------------------------------------------------------

inline double log_normal_density(double x, double mean, double variance) {
  const double r = x - mean;
  return -0.5 * (kLogTwoPi + std::log(variance) + r * r / variance);
}

/// Multivariate normal with a cached Cholesky factor.
class Gaussian {
 public:
  Gaussian() = default;
  Gaussian(Vector mean, Matrix covariance) : mean_(std::move(mean)), covariance_(std::move(covariance)) {
    require_dim(covariance_.rows(), mean_.size(), "Gaussian covariance rows");
    require_dim(covariance_.cols(), mean_.size(), "Gaussian covariance cols");
    if (mean_.size() == 0) return;
    Eigen::LLT<Matrix> llt(covariance_);
    if (llt.info() != Eigen::Success || !llt.matrixL().toDenseMatrix().diagonal().allFinite() ||
        (llt.matrixL().toDenseMatrix().diagonal().array() <= 0.0).any()) {
      throw Error(ErrorCode::not_positive_definite, "Gaussian: covariance is not symmetric positive definite");
    }
    lower_ = llt.matrixL();
    log_det_ = 2.0 * lower_.diagonal().array().log().sum();
  }

  Eigen::Index dim() const noexcept { return mean_.size(); }
  const Vector& mean() const noexcept { return mean_; }
  const Matrix& covariance() const noexcept { return covariance_; }
  const Matrix& cholesky() const noexcept { return lower_; }

  double log_density(const Vector& x) const {
    require_dim(x.size(), dim(), "Gaussian::log_density");
    if (dim() == 0) return 0.0;
    const Vector z = lower_.triangularView<Eigen::Lower>().solve(x - mean_);
    return -0.5 * (static_cast<double>(dim()) * kLogTwoPi + log_det_ + z.squaredNorm());
  }

  Vector sample(RngStream& rng) const {
    if (dim() == 0) return Vector(0);
    return mean_ + lower_ * rng.standard_normal(dim());
  }

 private:
  Vector mean_;
  Matrix covariance_;
  Matrix lower_;
  double log_det_ = 0.0;
};

inline Matrix empirical_covariance(std::span<const Vector> points) {
  if (points.empty()) throw Error(ErrorCode::invalid_argument, "empirical_covariance: no points");
  const Eigen::Index d = points.front().size();
  Vector mean = Vector::Zero(d);
  for (const auto& p : points) mean += p;
  mean /= static_cast<double>(points.size());
  Matrix cov = Matrix::Zero(d, d);
  for (const auto& p : points) {
    const Vector r = p - mean;
    cov.noalias() += r * r.transpose();
  }
  const double denom = points.size() > 1 ? static_cast<double>(points.size() - 1) : 1.0;
  return cov / denom;
}

}  // namespace asmcmc

#endif  // ASMCMC_CORE_HPP
