#ifndef ASMCMC_DIAGNOSTICS_HPP
#define ASMCMC_DIAGNOSTICS_HPP

#include "asmcmc/core.hpp"
#include "asmcmc/models.hpp"
#include "asmcmc/samplers.hpp"
#include "asmcmc/subspace.hpp"
#include "asmcmc/trace.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <utility>
#include <vector>

namespace asmcmc {

// ---------------------------------------------------------------------------
// Eigen-spectrum
// ---------------------------------------------------------------------------

struct SpectrumReport {
  Vector eigenvalues;              // nonincreasing
  std::vector<double> gap_ratios;  // λ_j / λ_{j+1}, j = 1..d-1; +inf when λ_{j+1} <= 0 < λ_j, NaN when both <= 0
  std::vector<std::size_t> candidates;  // d_a = j where the gap ratio exceeds the threshold
};

inline SpectrumReport spectrum_report(const Matrix& c, double gap_threshold = 10.0) {
  if (c.rows() != c.cols()) throw Error(ErrorCode::dimension_mismatch, "spectrum_report: matrix is not square");
  SpectrumReport out;
  out.eigenvalues = sorted_eigen(c).values;
  const Eigen::Index d = out.eigenvalues.size();
  for (Eigen::Index j = 0; j + 1 < d; ++j) {
    const double hi = out.eigenvalues[j];
    const double lo = out.eigenvalues[j + 1];
    double ratio;
    if (lo > 0.0) {
      ratio = hi / lo;
    } else if (hi > 0.0) {
      ratio = std::numeric_limits<double>::infinity();
    } else {
      ratio = std::numeric_limits<double>::quiet_NaN();
    }
    out.gap_ratios.push_back(ratio);
    if (ratio > gap_threshold) out.candidates.push_back(static_cast<std::size_t>(j + 1));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Errors and occupancy
// ---------------------------------------------------------------------------

inline double posterior_mean_error(const Vector& estimate, const Vector& reference) {
  require_dim(estimate.size(), reference.size(), "posterior_mean_error");
  return (estimate - reference).norm();
}

struct ModeOccupancy {
  double negative = 0.0;
  double positive = 0.0;
};

inline ModeOccupancy mode_occupancy(std::span<const double> values) {
  if (values.empty()) throw Error(ErrorCode::invalid_argument, "mode_occupancy: no samples");
  std::size_t neg = 0;
  std::size_t pos = 0;
  for (double v : values) {
    neg += v < 0.0 ? 1 : 0;
    pos += v > 0.0 ? 1 : 0;
  }
  const auto n = static_cast<double>(values.size());
  return {static_cast<double>(neg) / n, static_cast<double>(pos) / n};
}

/// Occupancy of the sign of `functional` over records first..end of the trace.
inline ModeOccupancy mode_occupancy(const ChainTrace& trace, const std::function<double(const Vector&)>& functional,
                                    std::size_t first = 0) {
  if (trace.records.size() <= first) throw Error(ErrorCode::invalid_argument, "mode_occupancy: empty trace");
  std::vector<double> values;
  values.reserve(trace.records.size() - first);
  for (std::size_t m = first; m < trace.records.size(); ++m) values.push_back(functional(trace.theta(m)));
  return mode_occupancy(values);
}

/// θ₁ + θ₂, the mean of the first mixture component.
inline double first_component_mean(const Vector& theta) { return theta[0] + theta[1]; }

// ---------------------------------------------------------------------------
// Autocorrelation and Monte Carlo error
// ---------------------------------------------------------------------------

/// Integrated autocorrelation time 1 + 2 Σ ρ_k, truncated by Geyer's initial
/// positive sequence. Returns 1 for constant or very short series.
inline double integrated_autocorrelation_time(std::span<const double> x) {
  const std::size_t n = x.size();
  if (n < 4) return 1.0;
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(n);
  std::vector<double> centred(n);
  for (std::size_t k = 0; k < n; ++k) centred[k] = x[k] - mean;
  auto autocov = [&](std::size_t lag) {
    double s = 0.0;
    for (std::size_t k = 0; k + lag < n; ++k) s += centred[k] * centred[k + lag];
    return s / static_cast<double>(n);
  };
  const double c0 = autocov(0);
  if (!(c0 > 0.0)) return 1.0;
  double tau = -1.0;  // Σ over pairs counts ρ_0 twice
  double previous_pair = std::numeric_limits<double>::infinity();
  for (std::size_t lag = 0; lag + 1 < n; lag += 2) {
    double pair = (autocov(lag) + autocov(lag + 1)) / c0;
    if (pair <= 0.0) break;
    pair = std::min(pair, previous_pair);  // initial monotone sequence
    tau += 2.0 * pair;
    previous_pair = pair;
  }
  return std::max(tau, 1.0);
}

struct McmcSummary {
  double mean = 0.0;
  double variance = 0.0;
  double iact = 1.0;
  double standard_error = 0.0;  // sqrt(variance · iact / n)
  double ess = 0.0;
};

inline McmcSummary mcmc_summary(std::span<const double> x) {
  if (x.empty()) throw Error(ErrorCode::invalid_argument, "mcmc_summary: empty series");
  McmcSummary s;
  const auto n = static_cast<double>(x.size());
  for (double v : x) s.mean += v;
  s.mean /= n;
  for (double v : x) s.variance += (v - s.mean) * (v - s.mean);
  s.variance /= std::max(1.0, n - 1.0);
  s.iact = integrated_autocorrelation_time(x);
  s.standard_error = std::sqrt(s.variance * s.iact / n);
  s.ess = n / s.iact;
  return s;
}

/// Coordinate j of θ over records first..end.
inline std::vector<double> coordinate_series(const ChainTrace& trace, Eigen::Index j, std::size_t first = 0) {
  std::vector<double> out;
  for (std::size_t m = first; m < trace.records.size(); ++m) out.push_back(trace.theta(m)[j]);
  return out;
}

// ---------------------------------------------------------------------------
// Reference posterior means
// ---------------------------------------------------------------------------

/// Gauss-Hermite rule for ∫ f(x) N(x | 0, 1) dx (probabilists' weights, summing to 1).
struct GaussHermiteRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

inline GaussHermiteRule gauss_hermite(std::size_t order) {
  if (order == 0) throw Error(ErrorCode::invalid_argument, "gauss_hermite: order must be positive");
  // Golub-Welsch on the Jacobi matrix of the probabilists' Hermite polynomials
  const auto n = static_cast<Eigen::Index>(order);
  Matrix jacobi = Matrix::Zero(n, n);
  for (Eigen::Index k = 1; k < n; ++k) {
    jacobi(k, k - 1) = std::sqrt(static_cast<double>(k));
    jacobi(k - 1, k) = jacobi(k, k - 1);
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(jacobi);
  GaussHermiteRule rule;
  for (Eigen::Index k = 0; k < n; ++k) {
    rule.nodes.push_back(eig.eigenvalues()[k]);
    const double v = eig.eigenvectors()(0, k);
    rule.weights.push_back(v * v);
  }
  return rule;
}

/// Posterior mean of the banana model under a zero-mean isotropic prior.
///
/// The likelihood depends on θ only through s = c(θ_{1:k}) + u with
/// u = Σ_{j>k} θ_j, so u integrates out in closed form: given θ_{1:k},
/// ȳ ~ N(c, V + 1/n) with V = (d-k)σ², and E[θ_j | θ_{1:k}, y] = E[u | ...]/(d-k)
/// for j > k. The remaining k-dimensional prior integral uses a tensor
/// Gauss-Hermite rule.
inline Vector banana_posterior_mean(const BananaModel& model, std::size_t order = 64) {
  const std::size_t d = model.dim();
  const std::size_t k = model.curvature_count();
  const double b = model.curvature();
  const Gaussian& prior = model.prior();
  const double var = prior.covariance()(0, 0);
  if (!prior.mean().isZero(0.0) || !prior.covariance().isApprox(var * Matrix::Identity(prior.dim(), prior.dim()))) {
    throw Error(ErrorCode::invalid_argument, "banana_posterior_mean: needs a zero-mean isotropic prior");
  }
  if (k >= d) throw Error(ErrorCode::invalid_argument, "banana_posterior_mean: needs at least one flat coordinate");
  const std::vector<double>& y = model.data();
  const auto n = static_cast<double>(y.size());
  double ybar = 0.0;
  for (double v : y) ybar += v;
  ybar /= n;
  const double flat_var = static_cast<double>(d - k) * var;
  const double marginal_var = flat_var + 1.0 / n;
  const double shrink = flat_var / marginal_var;

  const GaussHermiteRule rule = gauss_hermite(order);
  const double sd = std::sqrt(var);
  std::vector<std::size_t> index(k, 0);
  Vector theta_k(static_cast<Eigen::Index>(k));
  std::vector<double> log_w;
  std::vector<Vector> curved;
  std::vector<double> flat_sum;
  std::size_t total = 1;
  for (std::size_t j = 0; j < k; ++j) total *= order;
  log_w.reserve(total);
  for (std::size_t cell = 0; cell < total; ++cell) {
    double log_prior_weight = 0.0;
    double c = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double x = sd * rule.nodes[index[j]];
      theta_k[static_cast<Eigen::Index>(j)] = x;
      log_prior_weight += std::log(rule.weights[index[j]]);
      c += x + b * x * x;
    }
    const double r = ybar - c;
    log_w.push_back(log_prior_weight - 0.5 * r * r / marginal_var);
    curved.push_back(theta_k);
    flat_sum.push_back(shrink * r);
    for (std::size_t j = 0; j < k; ++j) {
      if (++index[j] < order) break;
      index[j] = 0;
    }
  }
  Vector lw = Eigen::Map<Vector>(log_w.data(), static_cast<Eigen::Index>(log_w.size()));
  const Vector w = normalize_log_weights(lw).normalized;
  Vector mean = Vector::Zero(static_cast<Eigen::Index>(d));
  double flat_mean = 0.0;
  for (std::size_t cell = 0; cell < total; ++cell) {
    const double wc = w[static_cast<Eigen::Index>(cell)];
    if (k > 0) mean.head(static_cast<Eigen::Index>(k)) += wc * curved[cell];
    flat_mean += wc * flat_sum[cell];
  }
  mean.tail(static_cast<Eigen::Index>(d - k)).setConstant(flat_mean / static_cast<double>(d - k));
  return mean;
}

struct StreamingReference {
  Vector mean;
  std::size_t samples = 0;
  double acceptance = 0.0;
};

/// Posterior mean from a long random-walk MH run that keeps only running sums.
inline StreamingReference long_mh_reference(const TargetModel& model, const Matrix& proposal_covariance,
                                            std::size_t steps, const Vector& init, RngStream& rng,
                                            double burn_in = 0.1) {
  require_dim(init.size(), static_cast<Eigen::Index>(model.dim()), "long_mh_reference init");
  const RandomWalk walk(proposal_covariance);
  Vector theta = init;
  double log_post = model.log_prior(theta) + model.log_likelihood(theta);
  const auto skip = static_cast<std::size_t>(burn_in * static_cast<double>(steps));
  StreamingReference out;
  out.mean = Vector::Zero(init.size());
  std::size_t accepted = 0;
  for (std::size_t m = 1; m <= steps; ++m) {
    Vector candidate = walk.propose(theta, rng);
    const double cand = model.log_prior(candidate) + model.log_likelihood(candidate);
    if (rng.accept(cand - log_post)) {
      theta = std::move(candidate);
      log_post = cand;
      ++accepted;
    }
    if (m > skip) {
      out.mean += theta;
      ++out.samples;
    }
  }
  out.mean /= static_cast<double>(std::max<std::size_t>(out.samples, 1));
  out.acceptance = steps ? static_cast<double>(accepted) / static_cast<double>(steps) : 0.0;
  return out;
}

}  // namespace asmcmc

#endif  // ASMCMC_DIAGNOSTICS_HPP
