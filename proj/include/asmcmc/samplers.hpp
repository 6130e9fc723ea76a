#ifndef ASMCMC_SAMPLERS_HPP
#define ASMCMC_SAMPLERS_HPP

#include "asmcmc/core.hpp"
#include "asmcmc/estimators.hpp"
#include "asmcmc/models.hpp"
#include "asmcmc/smc.hpp"
#include "asmcmc/subspace.hpp"
#include "asmcmc/trace.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace asmcmc {

enum class ProposalFamily { random_walk, prior_conditional };

/// Proposal for one block: a Gaussian random walk with the given covariance,
/// or an independence proposal from the block's conditional prior.
struct ProposalSpec {
  ProposalFamily family = ProposalFamily::random_walk;
  Matrix covariance;

  static ProposalSpec random_walk(Matrix covariance) { return {ProposalFamily::random_walk, std::move(covariance)}; }
  static ProposalSpec prior_conditional() { return {ProposalFamily::prior_conditional, Matrix()}; }
};

/// Symmetric Gaussian random walk. A zero covariance gives a frozen chain.
class RandomWalk {
 public:
  explicit RandomWalk(const Matrix& covariance) {
    if (covariance.rows() != covariance.cols()) {
      throw Error(ErrorCode::dimension_mismatch, "RandomWalk: covariance is not square");
    }
    if (covariance.isZero(0.0)) {
      factor_ = Matrix::Zero(covariance.rows(), covariance.cols());
      return;
    }
    Eigen::LLT<Matrix> llt(0.5 * (covariance + covariance.transpose()));
    if (llt.info() != Eigen::Success) {
      throw Error(ErrorCode::not_positive_definite, "RandomWalk: proposal covariance is not positive definite");
    }
    factor_ = llt.matrixL();
  }

  Eigen::Index dim() const noexcept { return factor_.rows(); }
  Vector propose(const Vector& from, RngStream& rng) const { return from + factor_ * rng.standard_normal(dim()); }

 private:
  Matrix factor_;
};

// ---------------------------------------------------------------------------
// Budget accounting
// ---------------------------------------------------------------------------

enum class Algorithm { mh, as_mh, as_pmmh, as_pmmh_inverted, as_mwg, as_mwpg };

inline std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::mh: return "mh";
    case Algorithm::as_mh: return "as-mh";
    case Algorithm::as_pmmh: return "as-pmmh";
    case Algorithm::as_pmmh_inverted: return "as-pmmh-i";
    case Algorithm::as_mwg: return "as-mwg";
    case Algorithm::as_mwpg: return "as-mwpg";
  }
  return "unknown";
}

inline Algorithm algorithm_from_string(const std::string& name) {
  for (Algorithm a : {Algorithm::mh, Algorithm::as_mh, Algorithm::as_pmmh, Algorithm::as_pmmh_inverted,
                      Algorithm::as_mwg, Algorithm::as_mwpg}) {
    if (to_string(a) == name) return a;
  }
  throw Error(ErrorCode::config_validation, "unknown algorithm '" + name + "'");
}

/// Which likelihood evaluations count against a budget.
enum class BudgetConvention { reweight_only, with_moves };

/// Evaluation cost of a run, split into the initial state and each iteration.
struct BudgetPlan {
  EvaluationCounter initialisation;
  EvaluationCounter per_iteration;

  EvaluationCounter total(std::size_t iterations) const {
    EvaluationCounter out = initialisation;
    out.evaluations += per_iteration.evaluations * iterations;
    out.move_evaluations += per_iteration.move_evaluations * iterations;
    return out;
  }
  std::uint64_t charged_per_iteration(BudgetConvention c) const {
    return c == BudgetConvention::with_moves ? per_iteration.total() : per_iteration.evaluations;
  }
  /// Iterations that fit in `budget`; the initial state is not charged.
  std::size_t iterations_for(std::uint64_t budget, BudgetConvention c) const {
    const std::uint64_t step = charged_per_iteration(c);
    if (step == 0) throw Error(ErrorCode::invalid_argument, "budget: zero cost per iteration");
    return static_cast<std::size_t>(budget / step);
  }
};

/// `particles` is N_i for AS-MH/AS-PMMH and N_a for AS-PMMH-i/AS-MwPG.
inline BudgetPlan budget_plan(Algorithm algorithm, std::size_t particles = 1, std::size_t stages = 1,
                              std::size_t moves_per_stage = 1) {
  BudgetPlan plan;
  const std::uint64_t n = particles;
  const std::uint64_t t = stages;
  const std::uint64_t moves = moves_per_stage * (t - 1);
  switch (algorithm) {
    case Algorithm::mh:
      plan.initialisation.evaluations = 1;
      plan.per_iteration.evaluations = 1;
      break;
    case Algorithm::as_mh:
      plan.initialisation.evaluations = n;
      plan.per_iteration.evaluations = n;
      break;
    case Algorithm::as_pmmh:
    case Algorithm::as_pmmh_inverted:
      plan.initialisation = {n * t, n * moves};
      plan.per_iteration = {n * t, n * moves};
      break;
    case Algorithm::as_mwg:
      plan.initialisation.evaluations = 1;
      plan.per_iteration.evaluations = 2;
      break;
    case Algorithm::as_mwpg:
      // the retained particle is re-evaluated once per stage in place of its move
      plan.initialisation = {n * t, n * moves};
      plan.per_iteration = {1 + n * t, ((n - 1) * moves_per_stage + 1) * (t - 1)};
      break;
  }
  return plan;
}

// ---------------------------------------------------------------------------
// Plain Metropolis-Hastings on θ
// ---------------------------------------------------------------------------

inline ChainTrace run_mh(const TargetModel& model, const ProposalSpec& proposal, std::size_t steps, const Vector& init,
                         RngStream& rng) {
  require_dim(init.size(), static_cast<Eigen::Index>(model.dim()), "run_mh init");
  if (proposal.family != ProposalFamily::random_walk) {
    throw Error(ErrorCode::invalid_argument, "run_mh: only random-walk proposals are supported");
  }
  const RandomWalk walk(proposal.covariance);
  require_dim(walk.dim(), init.size(), "run_mh proposal");

  ChainTrace trace;
  trace.algorithm = "mh";
  trace.records.reserve(steps + 1);
  Vector theta = init;
  double log_prior = model.log_prior(theta);
  double log_lik = model.log_likelihood(theta);
  ++trace.evaluations.evaluations;
  if (!std::isfinite(log_prior) || std::isnan(log_lik) || !(log_lik > kNegInf)) {
    throw Error(ErrorCode::invalid_argument, "run_mh: initial state has zero posterior density");
  }
  trace.records.push_back({theta, {}, Vector(), 0, log_lik, false, false});

  for (std::size_t m = 1; m <= steps; ++m) {
    Vector candidate = walk.propose(theta, rng);
    const double cand_prior = model.log_prior(candidate);
    const double cand_lik = model.log_likelihood(candidate);
    ++trace.evaluations.evaluations;
    const bool accept = rng.accept((cand_prior + cand_lik) - (log_prior + log_lik));
    if (accept) {
      theta = std::move(candidate);
      log_prior = cand_prior;
      log_lik = cand_lik;
    }
    trace.records.push_back({theta, {}, Vector(), 0, log_lik, accept, false});
  }
  return trace;
}

// ---------------------------------------------------------------------------
// Pseudo-marginal samplers on the active block
// ---------------------------------------------------------------------------

namespace detail {

struct MarginalDraw {
  std::vector<Vector> particles;
  Vector normalized;
  double log_value = kNegInf;
};

/// Pseudo-marginal MH on a; `estimate(a)` returns a fresh unbiased estimate of
/// l_a(a) with its weighted inactive particles. The denominator always reuses
/// the estimate stored with the current state.
template <typename Estimator>
ChainTrace run_pseudo_marginal(std::string name, const SubspaceSplit& split, const GaussianPriorFactorization& prior,
                               const ProposalSpec& q_a, std::size_t iterations, const Vector& init, RngStream& rng,
                               EvaluationCounter& counter, Estimator&& estimate) {
  require_dim(init.size(), static_cast<Eigen::Index>(split.active_dim()), (name + " init").c_str());
  if (q_a.family != ProposalFamily::random_walk) {
    throw Error(ErrorCode::invalid_argument, name + ": the active proposal must be a random walk");
  }
  const RandomWalk walk(q_a.covariance);
  require_dim(walk.dim(), init.size(), (name + " proposal").c_str());

  ChainTrace trace;
  trace.algorithm = std::move(name);
  trace.split = split;
  trace.records.reserve(iterations + 1);

  MarginalDraw current = estimate(init);
  if (!(current.log_value > kNegInf)) {
    throw Error(ErrorCode::degenerate_weights, trace.algorithm + ": degenerate marginal-likelihood estimate at the initial state");
  }
  ChainRecord state;
  state.point = init;
  state.selected = rng.categorical(current.normalized);
  state.particles = std::move(current.particles);
  state.weights = std::move(current.normalized);
  state.log_estimate = current.log_value;
  double log_prior = prior.log_active(init);
  trace.records.push_back(state);

  for (std::size_t m = 1; m <= iterations; ++m) {
    Vector candidate = walk.propose(state.point, rng);
    MarginalDraw draw = estimate(candidate);
    bool accept = false;
    std::size_t selected = 0;
    double cand_prior = kNegInf;
    if (draw.log_value > kNegInf) {
      selected = rng.categorical(draw.normalized);
      cand_prior = prior.log_active(candidate);
      accept = rng.accept((cand_prior + draw.log_value) - (log_prior + state.log_estimate));
    }
    if (accept) {
      state.point = std::move(candidate);
      state.particles = std::move(draw.particles);
      state.weights = std::move(draw.normalized);
      state.selected = selected;
      state.log_estimate = draw.log_value;
      log_prior = cand_prior;
    }
    state.accepted = accept;
    trace.records.push_back(state);
  }
  trace.evaluations = counter;
  return trace;
}

}  // namespace detail

/// Active subspace MH: importance-sampling estimates of l_a over N_i inactive draws.
inline ChainTrace run_as_mh(const TargetModel& model, const SubspaceSplit& split,
                            const GaussianPriorFactorization& prior, const ProposalSpec& q_a,
                            const ConditionalProposal& q_i, std::size_t inactive_particles, std::size_t iterations,
                            const Vector& init, RngStream& rng) {
  if (inactive_particles == 0) throw Error(ErrorCode::invalid_argument, "as-mh: need at least one inactive particle");
  EvaluationCounter counter;
  return detail::run_pseudo_marginal(
      "as-mh", split, prior, q_a, iterations, init, rng, counter, [&](const Vector& a) {
        MarginalLikelihoodEstimate est =
            is_marginal_likelihood(a, model, split, prior, q_i, inactive_particles, rng, &counter);
        return detail::MarginalDraw{std::move(est.particles.points), std::move(est.particles.normalized),
                                    est.log_value};
      });
}

/// Active subspace PMMH: SMC estimates l̂_{T,a} of the marginal likelihood.
inline ChainTrace run_as_pmmh(const TargetModel& model, const SubspaceSplit& split,
                              const GaussianPriorFactorization& prior, const ProposalSpec& q_a,
                              const SmcConfig& smc, std::size_t iterations, const Vector& init, RngStream& rng) {
  EvaluationCounter counter;
  const std::size_t stages = model.num_stages();
  SmcConfig current = smc;
  bool frozen = false;
  return detail::run_pseudo_marginal(
      split.is_inverted() ? "as-pmmh-i" : "as-pmmh", split, prior, q_a, iterations, init, rng, counter,
      [&](const Vector& a) {
        SmcRunRecord run;
        try {
          run = run_inactive_smc(a, stages, model, split, prior, current, rng, &counter);
        } catch (const Error& e) {
          if (e.code() != ErrorCode::degenerate_smc) throw;
          return detail::MarginalDraw{};
        }
        if (!frozen) {
          current = freeze_moves(smc, run);
          frozen = true;
        }
        return detail::MarginalDraw{std::move(run.final.points), std::move(run.final.normalized), run.log_z_estimate};
      });
}

/// AS-PMMH with the blocks swapped: MH on the inactive coordinates, SMC over the
/// active ones. The trace carries the inverted split.
inline ChainTrace run_as_pmmh_inverted(const TargetModel& model, const SubspaceSplit& split, const ProposalSpec& q_i,
                                       const SmcConfig& smc, std::size_t iterations, const Vector& init_inactive,
                                       RngStream& rng) {
  const SubspaceSplit inverted = split.inverted();
  const GaussianPriorFactorization prior = factorize_gaussian_prior(model.prior(), inverted);
  return run_as_pmmh(model, inverted, prior, q_i, smc, iterations, init_inactive, rng);
}

// ---------------------------------------------------------------------------
// Metropolis-within-Gibbs
// ---------------------------------------------------------------------------

/// Active subspace Metropolis-within-Gibbs: per sweep an MH update of i given
/// a, then of a given i. The a-update targets the full conditional
/// p_a(a) p_{i|a}(i|a) l(θ); the p_{i|a} term is constant in a whenever the
/// prior makes the blocks independent.
inline ChainTrace run_as_mwg(const TargetModel& model, const SubspaceSplit& split,
                             const GaussianPriorFactorization& prior, const ProposalSpec& q_i,
                             const ProposalSpec& q_a, std::size_t sweeps, const Vector& init_active,
                             const Vector& init_inactive, RngStream& rng) {
  require_dim(init_active.size(), static_cast<Eigen::Index>(split.active_dim()), "as-mwg init active");
  require_dim(init_inactive.size(), static_cast<Eigen::Index>(split.inactive_dim()), "as-mwg init inactive");
  if (q_a.family != ProposalFamily::random_walk) {
    throw Error(ErrorCode::invalid_argument, "as-mwg: the active proposal must be a random walk");
  }
  const RandomWalk walk_a(q_a.covariance);
  std::optional<RandomWalk> walk_i;
  if (q_i.family == ProposalFamily::random_walk) walk_i.emplace(q_i.covariance);

  ChainTrace trace;
  trace.algorithm = "as-mwg";
  trace.split = split;
  trace.has_inner_update = true;
  trace.records.reserve(sweeps + 1);

  Vector a = init_active;
  Vector i = init_inactive;
  double log_pa = prior.log_active(a);
  double log_pi = prior.log_conditional(i, a);
  double log_lik = model.log_likelihood(split.to_theta(a, i));
  ++trace.evaluations.evaluations;
  if (!std::isfinite(log_pa) || !std::isfinite(log_pi) || !(log_lik > kNegInf) || std::isnan(log_lik)) {
    throw Error(ErrorCode::invalid_argument, "as-mwg: initial state has zero posterior density");
  }
  auto snapshot = [&](bool acc_a, bool acc_i) {
    ChainRecord r;
    r.point = a;
    r.particles = {i};
    r.weights = Vector::Ones(1);
    r.log_estimate = log_lik;
    r.accepted = acc_a;
    r.inner_accepted = acc_i;
    return r;
  };
  trace.records.push_back(snapshot(false, false));

  for (std::size_t m = 1; m <= sweeps; ++m) {
    // i | a
    bool acc_i = false;
    {
      Vector candidate;
      double log_ratio;
      double cand_pi;
      double cand_lik;
      if (walk_i) {
        candidate = walk_i->propose(i, rng);
        cand_pi = prior.log_conditional(candidate, a);
        cand_lik = model.log_likelihood(split.to_theta(a, candidate));
        log_ratio = (cand_pi + cand_lik) - (log_pi + log_lik);
      } else {
        // q_i = p_{i|a}: prior and proposal cancel
        candidate = prior.sample_conditional(a, rng);
        cand_pi = prior.log_conditional(candidate, a);
        cand_lik = model.log_likelihood(split.to_theta(a, candidate));
        log_ratio = cand_lik - log_lik;
      }
      ++trace.evaluations.evaluations;
      if (rng.accept(log_ratio)) {
        i = std::move(candidate);
        log_pi = cand_pi;
        log_lik = cand_lik;
        acc_i = true;
      }
    }
    // a | i
    bool acc_a = false;
    {
      Vector candidate = walk_a.propose(a, rng);
      const double cand_pa = prior.log_active(candidate);
      const double cand_pi = prior.log_conditional(i, candidate);
      const double cand_lik = model.log_likelihood(split.to_theta(candidate, i));
      ++trace.evaluations.evaluations;
      if (rng.accept((cand_pa + cand_pi + cand_lik) - (log_pa + log_pi + log_lik))) {
        a = std::move(candidate);
        log_pa = cand_pa;
        log_pi = cand_pi;
        log_lik = cand_lik;
        acc_a = true;
      }
    }
    trace.records.push_back(snapshot(acc_a, acc_i));
  }
  return trace;
}

/// Active subspace Metropolis-within-particle-Gibbs: per sweep an MH update of
/// i given the retained endpoint a_T, then conditional SMC on the active block
/// and promotion of the trajectory drawn from the final weights.
///
/// The conditional SMC starts from p_a, so the prior must make a and i
/// independent. The trace uses the inverted split: `point` is i, the particles
/// are the final active endpoints and `selected` is u^m.
inline ChainTrace run_as_mwpg(const TargetModel& model, const SubspaceSplit& split,
                              const GaussianPriorFactorization& prior, const ProposalSpec& q_i,
                              const SmcConfig& csmc, std::size_t sweeps, const Vector& init_inactive,
                              RngStream& rng) {
  require_dim(init_inactive.size(), static_cast<Eigen::Index>(split.inactive_dim()), "as-mwpg init inactive");
  if (csmc.particles < 2) throw Error(ErrorCode::invalid_argument, "as-mwpg: conditional SMC needs at least two particles");
  if (!prior.blocks_independent(1e-9)) {
    throw Error(ErrorCode::invalid_argument, "as-mwpg: the prior couples the active and inactive blocks");
  }
  const std::size_t stages = model.num_stages();
  std::optional<RandomWalk> walk_i;
  if (q_i.family == ProposalFamily::random_walk) walk_i.emplace(q_i.covariance);

  ChainTrace trace;
  trace.algorithm = "as-mwpg";
  trace.split = split.inverted();
  trace.records.reserve(sweeps + 1);
  EvaluationCounter& counter = trace.evaluations;

  Vector i = init_inactive;
  ConditionalSmcResult init = run_active_smc_paths(i, stages, model, split, prior, csmc, rng, &counter);
  const SmcConfig frozen = freeze_moves(csmc, init.run);
  std::size_t u = rng.categorical(init.run.final.normalized);
  Trajectory retained = init.trajectories[u];
  double log_lik = init.run.final_log_likelihood[u];  // log l(B_a a_T + B_i i) for the retained endpoint

  auto record_from = [&](const ConditionalSmcResult& res, std::size_t selected, bool acc_i) {
    ChainRecord r;
    r.point = i;
    r.particles.reserve(res.trajectories.size());
    for (const auto& path : res.trajectories) r.particles.push_back(path.points.back());
    r.weights = res.run.final.normalized;
    r.selected = selected;
    r.log_estimate = res.run.log_z_estimate;
    r.accepted = acc_i;
    return r;
  };
  trace.records.push_back(record_from(init, u, false));

  for (std::size_t m = 1; m <= sweeps; ++m) {
    const Vector& a_end = retained.points.back();
    Vector candidate;
    double log_ratio;
    if (walk_i) {
      candidate = walk_i->propose(i, rng);
      const double cand_lik = model.log_likelihood(split.to_theta(a_end, candidate));
      log_ratio = (prior.log_conditional(candidate, a_end) + cand_lik) - (prior.log_conditional(i, a_end) + log_lik);
    } else {
      candidate = prior.sample_conditional(a_end, rng);
      log_ratio = model.log_likelihood(split.to_theta(a_end, candidate)) - log_lik;
    }
    ++counter.evaluations;
    const bool acc_i = rng.accept(log_ratio);
    if (acc_i) i = std::move(candidate);

    ConditionalSmcResult res = run_conditional_smc(i, retained, stages, model, split, prior, frozen, rng, &counter);
    u = rng.categorical(res.run.final.normalized);
    trace.records.push_back(record_from(res, u, acc_i));
    retained = std::move(res.trajectories[u]);
    log_lik = res.run.final_log_likelihood[u];
  }
  return trace;
}

// ---------------------------------------------------------------------------
// Pilot tuning
// ---------------------------------------------------------------------------

struct PilotResult {
  Matrix covariance;  // posterior covariance estimate from the post-burn-in draws
  Vector mean;
  Vector last;
  double acceptance = 0.0;
};

/// Adaptive random-walk Metropolis on θ used only to tune proposals.
///
/// Starts from an identity-scaled proposal; the covariance follows the running
/// sample covariance and a global scale is driven towards 23.4% acceptance.
/// The first `burn_in` fraction of draws is discarded from the estimate.
inline PilotResult run_adaptive_pilot(const TargetModel& model, const Vector& init, std::size_t steps, RngStream& rng,
                                      double burn_in = 0.2) {
  const auto d = static_cast<Eigen::Index>(model.dim());
  require_dim(init.size(), d, "pilot init");
  if (steps < 10) throw Error(ErrorCode::invalid_argument, "pilot: need at least 10 steps");
  Vector theta = init;
  double log_post = model.log_prior(theta) + model.log_likelihood(theta);
  Vector running_mean = theta;
  Matrix running_cov = Matrix::Identity(d, d);
  double log_scale = std::log(2.38 * 2.38 / static_cast<double>(d));
  const auto keep_from = static_cast<std::size_t>(burn_in * static_cast<double>(steps));

  Vector kept_mean = Vector::Zero(d);
  Matrix kept_outer = Matrix::Zero(d, d);
  std::size_t kept = 0;
  std::size_t accepted = 0;
  Matrix factor = Matrix::Identity(d, d);

  for (std::size_t k = 1; k <= steps; ++k) {
    if (k % 10 == 1) {
      Matrix cov = std::exp(log_scale) * running_cov;
      cov.diagonal().array() += 1e-12 * (1.0 + cov.diagonal().cwiseAbs().maxCoeff());
      Eigen::LLT<Matrix> llt(cov);
      if (llt.info() == Eigen::Success) factor = llt.matrixL();
    }
    const Vector candidate = theta + factor * rng.standard_normal(d);
    const double cand_post = model.log_prior(candidate) + model.log_likelihood(candidate);
    const double log_ratio = cand_post - log_post;
    const double alpha = std::isnan(log_ratio) ? 0.0 : std::min(1.0, std::exp(std::min(0.0, log_ratio)));
    if (rng.accept(log_ratio)) {
      theta = candidate;
      log_post = cand_post;
      ++accepted;
    }
    const double gamma = 1.0 / std::pow(static_cast<double>(k) + 1.0, 0.6);
    log_scale += gamma * (alpha - 0.234);
    const Vector r = theta - running_mean;
    running_mean += gamma * r;
    running_cov += gamma * (r * r.transpose() - running_cov);
    if (k > keep_from) {
      kept_mean += theta;
      kept_outer.noalias() += theta * theta.transpose();
      ++kept;
    }
  }
  PilotResult out;
  out.mean = kept_mean / static_cast<double>(kept);
  out.covariance = kept_outer / static_cast<double>(kept) - out.mean * out.mean.transpose();
  if (kept > 1) out.covariance *= static_cast<double>(kept) / static_cast<double>(kept - 1);
  out.covariance = 0.5 * (out.covariance + out.covariance.transpose());
  out.last = theta;
  out.acceptance = static_cast<double>(accepted) / static_cast<double>(steps);
  return out;
}

/// (scale²/dim) · Bᵀ Σ B, regularised so that it is positive definite.
inline Matrix projected_proposal_covariance(const Matrix& posterior_cov, const Matrix& basis, double multiplier = 1.0) {
  const auto dim = static_cast<double>(basis.cols());
  Matrix cov = basis.transpose() * posterior_cov * basis;
  cov = 0.5 * (cov + cov.transpose());
  const double floor = 1e-10 * std::max(1e-300, cov.diagonal().cwiseAbs().maxCoeff());
  cov.diagonal().array() += floor;
  return multiplier * (2.38 * 2.38 / dim) * cov;
}

}  // namespace asmcmc

#endif  // ASMCMC_SAMPLERS_HPP
