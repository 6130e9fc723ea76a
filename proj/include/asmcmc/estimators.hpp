#ifndef ASMCMC_ESTIMATORS_HPP
#define ASMCMC_ESTIMATORS_HPP

#include "asmcmc/core.hpp"
#include "asmcmc/models.hpp"
#include "asmcmc/subspace.hpp"
#include "asmcmc/trace.hpp"

#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace asmcmc {

/// Particles with log-domain unnormalised weights and their normalisation.
struct WeightedParticleSet {
  std::vector<Vector> points;
  Vector log_weights;
  Vector normalized;
  std::vector<double> log_z_increments;
};

struct MarginalLikelihoodEstimate {
  double log_value = kNegInf;
  WeightedParticleSet particles;
  double ess = 0.0;
};

/// 1 / Σ w_n² for normalised weights.
inline double ess(const Vector& normalized) {
  if (normalized.size() == 0) throw Error(ErrorCode::invalid_argument, "ess: empty weights");
  if ((normalized.array() < 0.0).any() || !normalized.allFinite()) {
    throw Error(ErrorCode::invalid_argument, "ess: weights must be finite and nonnegative");
  }
  if (std::abs(normalized.sum() - 1.0) > 1e-9) throw Error(ErrorCode::invalid_argument, "ess: weights do not sum to 1");
  return 1.0 / normalized.squaredNorm();
}

/// Proposal q_i(· | a) for the inactive block.
struct ConditionalProposal {
  std::function<Vector(const Vector& a, RngStream& rng)> sample;
  std::function<double(const Vector& i, const Vector& a)> log_density;
  bool is_prior_conditional = false;
};

/// q_i = p_{i|a}.
inline ConditionalProposal prior_conditional_proposal(const GaussianPriorFactorization& prior) {
  ConditionalProposal q;
  q.sample = [&prior](const Vector& a, RngStream& rng) { return prior.sample_conditional(a, rng); };
  q.log_density = [&prior](const Vector& i, const Vector& a) { return prior.log_conditional(i, a); };
  q.is_prior_conditional = true;
  return q;
}

/// N(mean_{i|a}(a), scale² cov_{i|a}); scale > 1 gives a heavier-spread IS proposal.
inline ConditionalProposal scaled_conditional_proposal(const GaussianPriorFactorization& prior, double scale) {
  if (!(scale > 0.0)) throw Error(ErrorCode::invalid_argument, "scaled_conditional_proposal: scale must be positive");
  auto noise = std::make_shared<Gaussian>(Vector::Zero(prior.inactive_dim()),
                                          scale * scale * prior.conditional_covariance());
  ConditionalProposal q;
  q.sample = [&prior, noise](const Vector& a, RngStream& rng) -> Vector {
    return prior.conditional_mean(a) + noise->sample(rng);
  };
  q.log_density = [&prior, noise](const Vector& i, const Vector& a) {
    return noise->log_density(i - prior.conditional_mean(a));
  };
  return q;
}

/// Importance-sampling estimate of l_a(a) = ∫ p_{i|a}(i|a) l(B_a a + B_i i) di.
inline MarginalLikelihoodEstimate is_marginal_likelihood(const Vector& a, const TargetModel& model,
                                                         const SubspaceSplit& split,
                                                         const GaussianPriorFactorization& prior,
                                                         const ConditionalProposal& proposal, std::size_t count,
                                                         RngStream& rng, EvaluationCounter* counter = nullptr) {
  if (count == 0) throw Error(ErrorCode::invalid_argument, "is_marginal_likelihood: need at least one particle");
  MarginalLikelihoodEstimate out;
  auto& set = out.particles;
  set.points.reserve(count);
  set.log_weights.resize(static_cast<Eigen::Index>(count));
  for (std::size_t n = 0; n < count; ++n) {
    Vector i = proposal.sample(a, rng);
    const double log_q = proposal.log_density(i, a);
    if (!(log_q > kNegInf) || std::isnan(log_q)) {
      throw Error(ErrorCode::proposal_support, "is_marginal_likelihood: proposal density is zero at a sampled point");
    }
    const double log_p = prior.log_conditional(i, a);
    const double log_l = model.log_likelihood(split.to_theta(a, i));
    set.log_weights[static_cast<Eigen::Index>(n)] = log_l + (log_p - log_q);
    set.points.push_back(std::move(i));
  }
  if (counter) counter->evaluations += count;
  out.log_value = log_sum_exp_mean(set.log_weights);
  if (out.log_value > kNegInf) {
    set.normalized = normalize_log_weights(set.log_weights).normalized;
    out.ess = ess(set.normalized);
  } else {
    set.normalized = Vector::Zero(set.log_weights.size());
  }
  set.log_z_increments = {out.log_value};
  return out;
}

/// The plain Monte Carlo estimate (1/N) Σ l(B_a a + B_i iⁿ), iⁿ ~ p_{i|a}.
inline double prior_marginal_likelihood(const Vector& a, const TargetModel& model, const SubspaceSplit& split,
                                        const GaussianPriorFactorization& prior, std::size_t count, RngStream& rng) {
  if (count == 0) throw Error(ErrorCode::invalid_argument, "prior_marginal_likelihood: need at least one particle");
  Vector log_l(static_cast<Eigen::Index>(count));
  for (std::size_t n = 0; n < count; ++n) {
    const Vector i = prior.sample_conditional(a, rng);
    log_l[static_cast<Eigen::Index>(n)] = model.log_likelihood(split.to_theta(a, i));
  }
  return log_sum_exp_mean(log_l);
}

using Functional = std::function<Vector(const Vector& theta)>;

/// (1/(M+1)) Σ_m g(B_a a^m + B_i i^{u^m, m}) over records first..end.
inline Vector estimate_expectation_single(const ChainTrace& trace, const Functional& g, std::size_t first = 0) {
  if (trace.records.size() <= first) throw Error(ErrorCode::invalid_argument, "estimate_expectation_single: empty trace");
  Vector total = g(trace.theta(first));
  for (std::size_t m = first + 1; m < trace.records.size(); ++m) total += g(trace.theta(m));
  return total / static_cast<double>(trace.records.size() - first);
}

/// (1/(M+1)) Σ_m Σ_n w^{n,m} g(B_a a^m + B_i i^{n,m}).
inline Vector estimate_expectation_weighted(const ChainTrace& trace, const Functional& g, std::size_t first = 0) {
  if (trace.records.size() <= first) {
    throw Error(ErrorCode::invalid_argument, "estimate_expectation_weighted: empty trace");
  }
  Vector total;
  for (std::size_t m = first; m < trace.records.size(); ++m) {
    const ChainRecord& r = trace.records[m];
    if (!trace.split || r.particles.empty()) {
      Vector v = g(trace.theta(m));
      total = total.size() == 0 ? v : Vector(total + v);
      continue;
    }
    for (std::size_t n = 0; n < r.particles.size(); ++n) {
      const double w = r.weights[static_cast<Eigen::Index>(n)];
      if (w == 0.0) continue;
      Vector v = w * g(trace.theta(m, n));
      total = total.size() == 0 ? v : Vector(total + v);
    }
  }
  return total / static_cast<double>(trace.records.size() - first);
}

inline Functional identity_functional() {
  return [](const Vector& theta) { return theta; };
}

// ---------------------------------------------------------------------------
// ESS against subspace dimension
// ---------------------------------------------------------------------------

struct EssCurvePoint {
  std::size_t active_dim = 0;
  std::size_t inactive_dim = 0;
  double ess_percent = 0.0;
  double log_weight_variance = 0.0;
};

/// For d_a = 1..d-1, the ESS (as % of N_i) of the prior-proposal IS estimator
/// at `point` (default a = 0) together with the sample variance of the log weights.
inline std::vector<EssCurvePoint> ess_vs_dimension_curve(const TargetModel& model, const Matrix& gradient_matrix,
                                                         std::size_t count, RngStream& rng,
                                                         std::optional<double> point = std::nullopt) {
  const std::size_t d = model.dim();
  std::vector<EssCurvePoint> rows;
  for (std::size_t da = 1; da < d; ++da) {
    const SubspaceSplit split = split_from_matrix(gradient_matrix, da);
    const GaussianPriorFactorization prior = factorize_gaussian_prior(model.prior(), split);
    const Vector a = Vector::Constant(static_cast<Eigen::Index>(da), point.value_or(0.0));
    RngStream stream = rng.substream(da);
    const MarginalLikelihoodEstimate est =
        is_marginal_likelihood(a, model, split, prior, prior_conditional_proposal(prior), count, stream);
    EssCurvePoint row;
    row.active_dim = da;
    row.inactive_dim = d - da;
    row.ess_percent = 100.0 * est.ess / static_cast<double>(count);
    const Vector& lw = est.particles.log_weights;
    if (!lw.allFinite()) {
      row.log_weight_variance = std::numeric_limits<double>::infinity();
    } else if (lw.size() > 1) {
      const double mean = lw.mean();
      row.log_weight_variance = (lw.array() - mean).square().sum() / static_cast<double>(lw.size() - 1);
    }
    rows.push_back(row);
  }
  return rows;
}

/// Largest inactive dimension whose ESS% stays above the threshold; 0 if none.
inline std::size_t select_active_dim_by_ess(const std::vector<EssCurvePoint>& curve, double threshold_percent) {
  for (const auto& row : curve) {
    if (row.ess_percent > threshold_percent) return row.active_dim;
  }
  return 0;
}

}  // namespace asmcmc

#endif  // ASMCMC_ESTIMATORS_HPP
