#ifndef ASMCMC_SMC_HPP
#define ASMCMC_SMC_HPP

#include "asmcmc/core.hpp"
#include "asmcmc/estimators.hpp"
#include "asmcmc/models.hpp"
#include "asmcmc/subspace.hpp"

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace asmcmc {

// ---------------------------------------------------------------------------
// Resampling
// ---------------------------------------------------------------------------

inline void check_probability_vector(const Vector& normalized, const char* who) {
  if (normalized.size() == 0) throw Error(ErrorCode::degenerate_weights, std::string(who) + ": empty weights");
  if (!normalized.allFinite() || (normalized.array() < 0.0).any()) {
    throw Error(ErrorCode::degenerate_weights, std::string(who) + ": weights must be finite and nonnegative");
  }
  if (std::abs(normalized.sum() - 1.0) > 1e-9) {
    throw Error(ErrorCode::degenerate_weights, std::string(who) + ": weights do not sum to 1");
  }
}

/// Stratified resampling: u_n = (n + U_n)/N inverted through the cumulative weights.
inline std::vector<std::size_t> stratified_resample(const Vector& normalized, std::size_t count, RngStream& rng) {
  check_probability_vector(normalized, "stratified_resample");
  const auto atoms = static_cast<std::size_t>(normalized.size());
  std::size_t last = atoms - 1;
  while (last > 0 && normalized[static_cast<Eigen::Index>(last)] == 0.0) --last;

  std::vector<std::size_t> ancestors(count);
  double cumulative = normalized[0];
  std::size_t k = 0;
  for (std::size_t n = 0; n < count; ++n) {
    const double u = (static_cast<double>(n) + rng.uniform()) / static_cast<double>(count);
    while (u >= cumulative && k < last) {
      ++k;
      cumulative += normalized[static_cast<Eigen::Index>(k)];
    }
    ancestors[n] = k;
  }
  return ancestors;
}

/// Independent categorical draws.
inline std::vector<std::size_t> multinomial_resample(const Vector& normalized, std::size_t count, RngStream& rng) {
  check_probability_vector(normalized, "multinomial_resample");
  std::vector<std::size_t> ancestors(count);
  for (auto& a : ancestors) a = rng.categorical(normalized);
  return ancestors;
}

// ---------------------------------------------------------------------------
// Configuration and records
// ---------------------------------------------------------------------------

enum class MoveKind {
  adaptive_random_walk,  // (scale²/dim) × weighted covariance of the previous stage's population
  fixed_random_walk,     // fixed covariance
  stagewise_random_walk,  // stage_move_covariances[s-1] at stage s
  prior_independence,    // propose from the block's prior (conditional) distribution
};

struct SmcConfig {
  std::size_t particles = 10;
  double resample_threshold = 0.5;  // resample iff ESS < threshold · N
  std::size_t moves_per_stage = 1;
  MoveKind move = MoveKind::adaptive_random_walk;
  double adaptive_scale = 2.38;
  Matrix fixed_move_covariance;
  std::vector<Matrix> stage_move_covariances;
  double regularization = 1e-10;
  bool record_history = false;
};

/// Output of one SMC run. `final` holds the stage-t particles with their
/// unnormalised (log_weights) and normalised weights.
struct SmcRunRecord {
  WeightedParticleSet final;
  double log_z_estimate = 0.0;
  std::vector<double> ess;              // per stage 1..t
  std::vector<bool> resampled;          // per stage 1..t-1
  std::vector<double> move_acceptance;  // per stage 1..t-1
  std::vector<Matrix> move_covariances;  // random-walk covariance per stage 1..t-1
  std::vector<WeightedParticleSet> history;
  std::vector<double> final_log_likelihood;  // log l_{1:t} at each final particle
};

/// Adaptive moves tuned on the population they move make the evidence estimate
/// slightly biased, which breaks pseudo-marginal exactness. Samplers run the
/// first SMC adaptively and then reuse its per-stage covariances unchanged.
inline SmcConfig freeze_moves(const SmcConfig& config, const SmcRunRecord& run) {
  if (config.move != MoveKind::adaptive_random_walk || run.move_covariances.empty()) return config;
  SmcConfig frozen = config;
  frozen.move = MoveKind::stagewise_random_walk;
  frozen.stage_move_covariances = run.move_covariances;
  return frozen;
}

/// One particle path a_{0:T} with its log unnormalised weights w̃_{0:T}.
struct Trajectory {
  std::vector<Vector> points;
  std::vector<double> log_weights;
};

struct ConditionalSmcResult {
  SmcRunRecord run;
  std::vector<Trajectory> trajectories;  // index 0 is the retained path
};

namespace detail {

/// The block being propagated: its prior, how to rebuild θ, how to draw it.
struct SmcBlock {
  Eigen::Index dim = 0;
  std::function<Vector(RngStream&)> sample_prior;
  std::function<double(const Vector&)> log_prior;
  std::function<Vector(const Vector&)> theta;
};

/// Move covariance for stage s, built from the stage s-1 population and its
/// normalised weights before the stage-s reweighting.
inline Matrix move_covariance(const SmcConfig& config, std::size_t stage, const std::vector<Vector>& population,
                              const Vector& weights, Eigen::Index dim) {
  auto checked = [dim](const Matrix& m, const char* what) -> const Matrix& {
    if (m.rows() != dim || m.cols() != dim) throw Error(ErrorCode::dimension_mismatch, what);
    return m;
  };
  if (config.move == MoveKind::fixed_random_walk) {
    return checked(config.fixed_move_covariance, "SmcConfig: fixed move covariance has the wrong shape");
  }
  if (config.move == MoveKind::stagewise_random_walk) {
    if (stage == 0 || stage > config.stage_move_covariances.size()) {
      throw Error(ErrorCode::invalid_argument, "SmcConfig: no move covariance for stage " + std::to_string(stage));
    }
    return checked(config.stage_move_covariances[stage - 1], "SmcConfig: stage move covariance has the wrong shape");
  }
  Vector mean = Vector::Zero(dim);
  for (std::size_t n = 0; n < population.size(); ++n) mean += weights[static_cast<Eigen::Index>(n)] * population[n];
  Matrix cov = Matrix::Zero(dim, dim);
  for (std::size_t n = 0; n < population.size(); ++n) {
    const Vector centred = population[n] - mean;
    cov += weights[static_cast<Eigen::Index>(n)] * centred * centred.transpose();
  }
  cov *= config.adaptive_scale * config.adaptive_scale / static_cast<double>(dim);
  cov.diagonal().array() += config.regularization;
  return cov;
}

/// Shared engine for the inactive SMC sampler and conditional SMC.
///
/// With a retained trajectory, particle 0 follows it exactly: it is never
/// moved, always its own ancestor, and the remaining particles draw their
/// ancestors independently from the full weight vector.
inline ConditionalSmcResult run_smc_engine(const SmcBlock& block, const TargetModel& model, std::size_t t,
                                           const SmcConfig& config, RngStream& rng, EvaluationCounter* counter,
                                           const Trajectory* retained, bool track_paths = false) {
  const std::size_t n_particles = config.particles;
  const bool conditional = retained != nullptr;
  track_paths = track_paths || conditional;
  if (n_particles == 0) throw Error(ErrorCode::invalid_argument, "SMC: need at least one particle");
  if (t == 0 || t > model.num_stages()) {
    throw Error(ErrorCode::invalid_argument, "SMC: target stage must be in 1..T");
  }
  if (conditional && retained->points.size() < t + 1) {
    throw Error(ErrorCode::invalid_argument, "conditional SMC: retained trajectory is shorter than the run");
  }
  const std::size_t first_free = conditional ? 1 : 0;
  const auto nn = static_cast<Eigen::Index>(n_particles);
  const double log_uniform = -std::log(static_cast<double>(n_particles));

  std::vector<Vector> x(n_particles);
  std::vector<double> log_prior(n_particles, 0.0);
  std::vector<double> cumulative(n_particles, 0.0);  // log l_{1:s}(x_n)
  std::vector<Trajectory> paths;

  if (conditional) x[0] = retained->points[0];
  for (std::size_t n = first_free; n < n_particles; ++n) x[n] = block.sample_prior(rng);
  // Independence proposals from the block prior cancel the prior term, so it is left at zero.
  const bool uses_prior = config.move != MoveKind::prior_independence;
  if (uses_prior) {
    for (std::size_t n = 0; n < n_particles; ++n) log_prior[n] = block.log_prior(x[n]);
  }
  if (track_paths) {
    paths.resize(n_particles);
    for (std::size_t n = 0; n < n_particles; ++n) {
      paths[n].points.push_back(x[n]);
      paths[n].log_weights.push_back(log_uniform);
    }
  }

  ConditionalSmcResult result;
  SmcRunRecord& record = result.run;
  Vector log_w_prev = Vector::Constant(nn, log_uniform);  // log of normalised w_{s-1}
  bool uniform = true;
  Vector increments(nn);
  Vector log_tilde(nn);
  Vector normalized;

  for (std::size_t s = 1; s <= t; ++s) {
    Matrix chol;
    if (s < t && config.move != MoveKind::prior_independence && config.moves_per_stage > 0) {
      const Vector w_prev = log_w_prev.unaryExpr([](double v) { return std::exp(v); });
      Matrix cov = move_covariance(config, s, x, w_prev, block.dim);
      Eigen::LLT<Matrix> llt(cov);
      if (llt.info() != Eigen::Success) {
        throw Error(ErrorCode::not_positive_definite, "SMC: move covariance is not positive definite");
      }
      chol = llt.matrixL();
      record.move_covariances.push_back(std::move(cov));
    }
    for (std::size_t n = 0; n < n_particles; ++n) {
      const auto nk = static_cast<Eigen::Index>(n);
      increments[nk] = model.log_likelihood_increment(block.theta(x[n]), s);
      cumulative[n] += increments[nk];
    }
    if (counter) counter->evaluations += n_particles;
    log_tilde = log_w_prev + increments;

    double stage_log_z;
    try {
      if (uniform) {
        stage_log_z = log_sum_exp_mean(increments);
        normalized = normalize_log_weights(increments).normalized;
      } else {
        stage_log_z = log_sum_exp(log_tilde);
        normalized = normalize_log_weights(log_tilde).normalized;
      }
    } catch (const Error&) {
      throw Error(ErrorCode::degenerate_smc, "SMC: all particle weights are zero at stage " + std::to_string(s));
    }
    if (!(stage_log_z > kNegInf)) {
      throw Error(ErrorCode::degenerate_smc, "SMC: all particle weights are zero at stage " + std::to_string(s));
    }
    record.log_z_estimate += stage_log_z;
    record.final.log_z_increments.push_back(stage_log_z);
    const double stage_ess = 1.0 / normalized.squaredNorm();
    record.ess.push_back(stage_ess);
    if (track_paths) {
      for (std::size_t n = 0; n < n_particles; ++n) paths[n].log_weights.push_back(log_tilde[static_cast<Eigen::Index>(n)]);
    }
    if (config.record_history) {
      WeightedParticleSet snapshot;
      snapshot.points = x;
      snapshot.log_weights = log_tilde;
      snapshot.normalized = normalized;
      snapshot.log_z_increments = record.final.log_z_increments;
      record.history.push_back(std::move(snapshot));
    }

    if (s == t) break;

    // resample
    const bool resample = stage_ess < config.resample_threshold * static_cast<double>(n_particles);
    record.resampled.push_back(resample);
    if (resample) {
      std::vector<std::size_t> ancestors;
      if (conditional) {
        ancestors = multinomial_resample(normalized, n_particles, rng);
        ancestors[0] = 0;
      } else {
        ancestors = stratified_resample(normalized, n_particles, rng);
      }
      std::vector<Vector> x_new(n_particles);
      std::vector<double> prior_new(n_particles);
      std::vector<double> cumulative_new(n_particles);
      for (std::size_t n = 0; n < n_particles; ++n) {
        x_new[n] = x[ancestors[n]];
        prior_new[n] = log_prior[ancestors[n]];
        cumulative_new[n] = cumulative[ancestors[n]];
      }
      x = std::move(x_new);
      log_prior = std::move(prior_new);
      cumulative = std::move(cumulative_new);
      if (track_paths) {
        std::vector<Trajectory> paths_new(n_particles);
        for (std::size_t n = 0; n < n_particles; ++n) paths_new[n] = paths[ancestors[n]];
        paths = std::move(paths_new);
      }
      log_w_prev.setConstant(log_uniform);
      uniform = true;
    } else {
      log_w_prev = normalized.unaryExpr([](double w) { return std::log(w); });
      uniform = false;
    }

    // move, targeting p(x) l_{1:s}(θ(x))
    std::size_t proposed = 0;
    std::size_t accepted = 0;
    for (std::size_t sweep = 0; sweep < config.moves_per_stage; ++sweep) {
      for (std::size_t n = first_free; n < n_particles; ++n) {
        Vector candidate;
        double candidate_prior = 0.0;
        if (config.move == MoveKind::prior_independence) {
          candidate = block.sample_prior(rng);
        } else {
          candidate = x[n] + chol * rng.standard_normal(block.dim);
          candidate_prior = block.log_prior(candidate);
        }
        const double candidate_ll = model.log_likelihood_cumulative(block.theta(candidate), s);
        if (counter) ++counter->move_evaluations;
        ++proposed;
        const double log_ratio = (candidate_ll + candidate_prior) - (cumulative[n] + log_prior[n]);
        if (rng.accept(log_ratio)) {
          x[n] = std::move(candidate);
          cumulative[n] = candidate_ll;
          log_prior[n] = candidate_prior;
          ++accepted;
        }
      }
    }
    record.move_acceptance.push_back(proposed ? static_cast<double>(accepted) / static_cast<double>(proposed) : 0.0);

    if (conditional) {
      // the retained particle jumps to its stored stage-s state; charged as its move
      x[0] = retained->points[s];
      if (uses_prior) log_prior[0] = block.log_prior(x[0]);
      cumulative[0] = model.log_likelihood_cumulative(block.theta(x[0]), s);
      if (counter) ++counter->move_evaluations;
    }
    if (track_paths) {
      for (std::size_t n = 0; n < n_particles; ++n) paths[n].points.push_back(x[n]);
    }
  }

  if (track_paths) {
    // No move at the final stage: the endpoint repeats the stage t-1 value.
    for (std::size_t n = 0; n < n_particles; ++n) {
      paths[n].points.push_back(conditional && n == 0 ? retained->points[t] : x[n]);
    }
    result.trajectories = std::move(paths);
  }
  record.final_log_likelihood = std::move(cumulative);
  record.final.points = std::move(x);
  record.final.log_weights = log_tilde;
  record.final.normalized = normalized;
  return result;
}

}  // namespace detail

/// SMC sampler on the inactive block for a fixed a, targeting
/// p_{i|a}(i|a) l_{1:s}(B_a a + B_i i) for s = 1..t. The log normalising-constant
/// estimate is log l̂_{t,a}(a) = Σ_s log Σ_n w̃_s^n.
inline SmcRunRecord run_inactive_smc(const Vector& a, std::size_t t, const TargetModel& model,
                                     const SubspaceSplit& split, const GaussianPriorFactorization& prior,
                                     const SmcConfig& config, RngStream& rng, EvaluationCounter* counter = nullptr) {
  require_dim(a.size(), static_cast<Eigen::Index>(split.active_dim()), "run_inactive_smc");
  detail::SmcBlock block;
  block.dim = static_cast<Eigen::Index>(split.inactive_dim());
  block.sample_prior = [&](RngStream& r) { return prior.sample_conditional(a, r); };
  block.log_prior = [&](const Vector& i) { return prior.log_conditional(i, a); };
  block.theta = [&](const Vector& i) { return split.to_theta(a, i); };
  return detail::run_smc_engine(block, model, t, config, rng, counter, nullptr).run;
}

/// Unconditional SMC on the active block for a fixed i, keeping full paths.
/// Used to initialise particle Gibbs.
inline ConditionalSmcResult run_active_smc_paths(const Vector& i, std::size_t t, const TargetModel& model,
                                                 const SubspaceSplit& split, const GaussianPriorFactorization& prior,
                                                 const SmcConfig& config, RngStream& rng,
                                                 EvaluationCounter* counter = nullptr) {
  require_dim(i.size(), static_cast<Eigen::Index>(split.inactive_dim()), "run_active_smc_paths");
  detail::SmcBlock block;
  block.dim = static_cast<Eigen::Index>(split.active_dim());
  block.sample_prior = [&](RngStream& r) { return prior.sample_active(r); };
  block.log_prior = [&](const Vector& a) { return prior.log_active(a); };
  block.theta = [&](const Vector& a) { return split.to_theta(a, i); };
  return detail::run_smc_engine(block, model, t, config, rng, counter, nullptr, true);
}

/// Conditional SMC on the active block for a fixed i. Particle 0 carries the
/// retained trajectory unchanged; its weights are recomputed under the current i.
inline ConditionalSmcResult run_conditional_smc(const Vector& i, const Trajectory& retained, std::size_t t,
                                                const TargetModel& model, const SubspaceSplit& split,
                                                const GaussianPriorFactorization& prior, const SmcConfig& config,
                                                RngStream& rng, EvaluationCounter* counter = nullptr) {
  if (config.particles < 2) {
    throw Error(ErrorCode::invalid_argument, "conditional SMC needs at least two particles");
  }
  require_dim(i.size(), static_cast<Eigen::Index>(split.inactive_dim()), "run_conditional_smc");
  detail::SmcBlock block;
  block.dim = static_cast<Eigen::Index>(split.active_dim());
  block.sample_prior = [&](RngStream& r) { return prior.sample_active(r); };
  block.log_prior = [&](const Vector& a) { return prior.log_active(a); };
  block.theta = [&](const Vector& a) { return split.to_theta(a, i); };
  return detail::run_smc_engine(block, model, t, config, rng, counter, &retained);
}

}  // namespace asmcmc

#endif  // ASMCMC_SMC_HPP
