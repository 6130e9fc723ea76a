#ifndef ASMCMC_TRACE_HPP
#define ASMCMC_TRACE_HPP

#include "asmcmc/core.hpp"
#include "asmcmc/models.hpp"
#include "asmcmc/subspace.hpp"

#include <optional>
#include <string>
#include <vector>

namespace asmcmc {

/// State of a chain after one iteration (or sweep).
///
/// `point` is the block updated by the outer MH step; `particles` and
/// `weights` are the weighted set carried for the other block, and
/// `selected` is the index u drawn from those weights.
struct ChainRecord {
  Vector point;
  std::vector<Vector> particles;
  Vector weights;
  std::size_t selected = 0;
  double log_estimate = 0.0;  // log marginal-likelihood estimate, or log l for exact-likelihood samplers
  bool accepted = false;
  bool inner_accepted = false;
};

/// Output of every sampler. records[0] is the initial state.
///
/// With a split, θ = B_a point + B_i particles[selected]; without one, `point`
/// is θ itself. Samplers that update the inactive block by MH and carry the
/// active block as particles record the inverted split.
struct ChainTrace {
  std::string algorithm;
  std::optional<SubspaceSplit> split;
  std::vector<ChainRecord> records;
  EvaluationCounter evaluations;
  bool has_inner_update = false;

  std::size_t iterations() const noexcept { return records.empty() ? 0 : records.size() - 1; }

  Vector theta(std::size_t m, std::size_t particle) const {
    const ChainRecord& r = records.at(m);
    if (!split) return r.point;
    return split->to_theta(r.point, r.particles.at(particle));
  }

  Vector theta(std::size_t m) const { return theta(m, records.at(m).selected); }

  /// Fraction of iterations 1..N whose outer proposal was accepted.
  double acceptance_rate() const {
    if (iterations() == 0) return 0.0;
    std::size_t count = 0;
    for (std::size_t m = 1; m < records.size(); ++m) count += records[m].accepted ? 1 : 0;
    return static_cast<double>(count) / static_cast<double>(iterations());
  }

  double inner_acceptance_rate() const {
    if (iterations() == 0 || !has_inner_update) return 0.0;
    std::size_t count = 0;
    for (std::size_t m = 1; m < records.size(); ++m) count += records[m].inner_accepted ? 1 : 0;
    return static_cast<double>(count) / static_cast<double>(iterations());
  }
};

/// Index of the first record kept after discarding a burn-in fraction.
inline std::size_t burn_in_start(const ChainTrace& trace, double fraction) {
  if (fraction < 0.0 || fraction >= 1.0) throw Error(ErrorCode::invalid_argument, "burn-in fraction outside [0, 1)");
  return static_cast<std::size_t>(fraction * static_cast<double>(trace.records.size()));
}

}  // namespace asmcmc

#endif  // ASMCMC_TRACE_HPP
