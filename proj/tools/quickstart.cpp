// Identify a one-dimensional active subspace for a small banana model, then
// compare plain MH with active-subspace Metropolis-within-Gibbs at equal cost.
#include "asmcmc.hpp"

#include <iostream>

int main() {
  using namespace asmcmc;

  RngStream data_rng(1, kDatasetStream);
  const std::vector<double> y = generate_gaussian_data(100, data_rng);
  const BananaModel model(10, 3, BananaModel::kDefaultCurvature, y, 1, 100.0);

  RngStream grad_rng(1, kSubspaceStream);
  const Matrix c = estimate_gradient_matrix(model, 2000, grad_rng);
  const SpectrumReport spectrum = spectrum_report(c);
  std::cout << "leading eigenvalues: " << spectrum.eigenvalues.head(3).transpose() << '\n';

  const SubspaceSplit split = split_from_matrix(c, 1);
  const GaussianPriorFactorization prior = factorize_gaussian_prior(model.prior(), split);

  RngStream pilot_rng(1, kPilotStream);
  const PilotResult pilot = run_adaptive_pilot(model, Vector::Zero(10), 10000, pilot_rng);
  const Vector reference = banana_posterior_mean(model);

  const std::uint64_t budget = 20000;
  RngStream mh_rng(1, 1);
  const ChainTrace mh =
      run_mh(model, ProposalSpec::random_walk(projected_proposal_covariance(pilot.covariance, Matrix::Identity(10, 10))),
             budget_plan(Algorithm::mh).iterations_for(budget, BudgetConvention::reweight_only), pilot.last, mh_rng);

  const auto [a0, i0] = split.from_theta(pilot.last);
  RngStream mwg_rng(1, 2);
  const ChainTrace mwg = run_as_mwg(
      model, split, prior, ProposalSpec::prior_conditional(),
      ProposalSpec::random_walk(projected_proposal_covariance(pilot.covariance, split.active_basis())),
      budget_plan(Algorithm::as_mwg).iterations_for(budget, BudgetConvention::reweight_only), a0, i0, mwg_rng);

  for (const ChainTrace* trace : {&mh, &mwg}) {
    const Vector mean = estimate_expectation_single(*trace, identity_functional(), burn_in_start(*trace, 0.1));
    std::cout << trace->algorithm << ": " << trace->evaluations.evaluations << " evaluations, acceptance "
              << trace->acceptance_rate() << ", posterior-mean error " << posterior_mean_error(mean, reference) << '\n';
  }
}
