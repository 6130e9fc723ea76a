#include "asmcmc/models.hpp"

#include "support/stats_oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <memory>
#include <numbers>

using namespace asmcmc;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index k = 0;
  for (double x : v) out[k++] = x;
  return out;
}

double normal_log_pdf(double x, double m) { return -0.5 * std::log(2.0 * std::numbers::pi) - 0.5 * (x - m) * (x - m); }

std::vector<double> standard_data(std::size_t n, std::uint64_t seed) {
  RngStream rng(seed, 0);
  return generate_gaussian_data(n, rng);
}

Vector fd_gradient(const TargetModel& m, const Vector& theta) {
  Vector g(theta.size());
  for (Eigen::Index j = 0; j < theta.size(); ++j) {
    const double h = 1e-5 * (1.0 + std::abs(theta[j]));
    Vector up = theta, down = theta;
    up[j] += h;
    down[j] -= h;
    g[j] = (m.log_likelihood(up) - m.log_likelihood(down)) / (2.0 * h);
  }
  return g;
}

}  // namespace

TEST(Tempering, DataBlocksCoverAllPoints) {
  const auto s = TemperingSchedule::data(100, 6);
  EXPECT_EQ(s.stages(), 6u);
  EXPECT_EQ(s.data_end(0), 0u);
  EXPECT_EQ(s.data_end(1), 17u);
  EXPECT_EQ(s.data_end(5), 85u);
  EXPECT_EQ(s.data_end(6), 100u);
  EXPECT_THROW(TemperingSchedule::data(4, 3), Error);  // blocks of 2 leave the third empty
  EXPECT_THROW(TemperingSchedule::data(10, 0), Error);
}

TEST(Tempering, AnnealingValidation) {
  EXPECT_THROW(TemperingSchedule::annealing(std::vector<double>{0.0, 0.6, 0.5, 1.0}), Error);
  EXPECT_THROW(TemperingSchedule::annealing(std::vector<double>{0.1, 1.0}), Error);
  const auto s = TemperingSchedule::annealing(4);
  EXPECT_DOUBLE_EQ(s.eta(2), 0.5);
}

TEST(PlaneModel, Examples) {
  const PlaneModel one(1, {0.0});
  EXPECT_EQ(one.log_likelihood_cumulative(vec({0.0}), 0), 0.0);
  EXPECT_NEAR(one.log_likelihood_cumulative(vec({0.0}), 1), -0.5 * std::log(2.0 * std::numbers::pi), 1e-14);
  const PlaneModel two(2, {1.0, -1.0});
  EXPECT_NEAR(two.log_likelihood(vec({0.5, -0.5})), -std::log(2.0 * std::numbers::pi) - 1.0, 1e-14);
}

TEST(BananaModel, Examples) {
  const auto y = standard_data(7, 1);
  const BananaModel flat(4, 2, 0.0, y, 1);
  const PlaneModel plane(4, y, 1);
  RngStream rng(2, 0);
  for (int rep = 0; rep < 20; ++rep) {
    const Vector theta = 30.0 * rng.standard_normal(4);
    EXPECT_EQ(flat.log_likelihood(theta), plane.log_likelihood(theta));
  }
  const BananaModel curved(4, 2, 0.5, y, 1);
  EXPECT_NEAR(curved.log_likelihood(Vector::Zero(4)), plane.log_likelihood(Vector::Zero(4)), 1e-13);

  const BananaModel b(2, 1, 0.001, y, 1);
  double expected = 0.0;
  for (double v : y) expected += normal_log_pdf(v, 0.1);  // 10 - 10 + 0.001·100
  EXPECT_NEAR(b.log_likelihood(vec({10.0, -10.0})), expected, 1e-11);
}

TEST(MixtureModel, Examples) {
  const auto y = standard_data(9, 3);
  const MixtureModel m(y, 1);
  double collapse = 0.0;
  for (double v : y) collapse += normal_log_pdf(v, 0.0);
  EXPECT_NEAR(m.log_likelihood(vec({1.3, -1.3, -2.0, 2.0})), collapse, 1e-12);
  EXPECT_NEAR(m.log_likelihood(vec({1, 2, 3, 4})), m.log_likelihood(vec({3, 4, 1, 2})), 1e-12);

  const MixtureModel single({5.0}, 1);
  const double hand = std::log(0.5 * std::exp(normal_log_pdf(5.0, 5.0)) + 0.5 * std::exp(normal_log_pdf(5.0, -5.0)));
  EXPECT_NEAR(single.log_likelihood(vec({2, 3, -2, -3})), hand, 1e-13);
}

TEST(MixtureModel, ExchangeableUnderComponentSwap) {
  RngStream rng(4, 0);
  const auto y = generate_mixture_data(50, rng);
  const MixtureModel m(y, 5);
  for (int rep = 0; rep < 30; ++rep) {
    const Vector t = 4.0 * rng.standard_normal(4);
    const Vector swapped = vec({t[2], t[3], t[0], t[1]});
    for (std::size_t s = 0; s <= 5; ++s) {
      EXPECT_NEAR(m.log_likelihood_cumulative(t, s), m.log_likelihood_cumulative(swapped, s), 1e-10);
    }
  }
}

TEST(ConjugateModel, MarginalExamples) {
  const std::vector<double> y{0.7, -1.2, 2.0};
  const ConjugateGaussianModel zero(isotropic_prior(2, 3.0), Vector::Zero(2), 0.5, y);
  double expected = 0.0;
  for (double v : y) expected += log_normal_density(v, 0.0, 0.5);
  EXPECT_NEAR(zero.log_marginal(), expected, 1e-12);

  const ConjugateGaussianModel one(isotropic_prior(1, 1.0), vec({1.0}), 1.0, {0.9});
  EXPECT_NEAR(one.log_marginal(), log_normal_density(0.9, 0.0, 2.0), 1e-13);
  const double quad = std::log(oracle::integrate_real_line([](double t) {
    return std::exp(log_normal_density(t, 0.0, 1.0) + log_normal_density(0.9, t, 1.0));
  }));
  EXPECT_NEAR(one.log_marginal(), quad, 1e-10);

  std::vector<double> neg = y;
  for (auto& v : neg) v = -v;
  const ConjugateGaussianModel a(isotropic_prior(2, 2.0), vec({1.0, -0.5}), 0.7, y);
  const ConjugateGaussianModel b(isotropic_prior(2, 2.0), vec({1.0, -0.5}), 0.7, neg);
  EXPECT_NEAR(a.log_marginal(), b.log_marginal(), 1e-12);
}

TEST(ConjugateModel, MarginalMatchesQuadratureWithManyPoints) {
  const auto y = standard_data(12, 5);
  const ConjugateGaussianModel m(isotropic_prior(1, 4.0), vec({1.5}), 0.8, y);
  double max_log = -1e300;
  for (double t = -5; t < 5; t += 0.01) max_log = std::max(max_log, m.log_prior(vec({t})) + m.log_likelihood(vec({t})));
  const double integral = oracle::integrate_real_line(
      [&](double t) { return std::exp(m.log_prior(vec({t})) + m.log_likelihood(vec({t})) - max_log); });
  EXPECT_NEAR(m.log_marginal(), max_log + std::log(integral), 1e-8);
}

TEST(ConjugateModel, PosteriorMatchesQuadratureMoments) {
  const auto y = standard_data(10, 6);
  const ConjugateGaussianModel m(isotropic_prior(1, 2.0, 0.3), vec({0.8}), 1.3, y);
  const double lz = m.log_marginal();
  auto density = [&](double t) { return std::exp(m.log_prior(vec({t})) + m.log_likelihood(vec({t})) - lz); };
  const double mass = oracle::integrate_real_line(density);
  const double mean = oracle::integrate_real_line([&](double t) { return t * density(t); });
  const double second = oracle::integrate_real_line([&](double t) { return t * t * density(t); });
  EXPECT_NEAR(mass, 1.0, 1e-9);
  const Gaussian post = m.posterior();
  EXPECT_NEAR(post.mean()[0], mean, 1e-9);
  EXPECT_NEAR(post.covariance()(0, 0), second - mean * mean, 1e-9);
}

TEST(PlaneModel, ConjugateViewAgrees) {
  const auto y = standard_data(20, 7);
  const PlaneModel plane(3, y, 4);
  const ConjugateGaussianModel conj = plane.conjugate();
  RngStream rng(8, 0);
  for (int rep = 0; rep < 10; ++rep) {
    const Vector t = 5.0 * rng.standard_normal(3);
    EXPECT_NEAR(plane.log_likelihood(t), conj.log_likelihood(t), 1e-9);
  }
}

class AllModels : public ::testing::TestWithParam<int> {
 protected:
  std::unique_ptr<TargetModel> make(std::size_t stages) const {
    RngStream rng(40 + static_cast<std::uint64_t>(GetParam()), 0);
    switch (GetParam()) {
      case 0: return std::make_unique<PlaneModel>(5, generate_gaussian_data(30, rng), stages);
      case 1: return std::make_unique<BananaModel>(6, 3, 0.05, generate_gaussian_data(30, rng), stages);
      case 2: return std::make_unique<MixtureModel>(generate_mixture_data(30, rng), stages);
      case 3:
        return std::make_unique<ConjugateGaussianModel>(isotropic_prior(3, 2.0), vec({1.0, -2.0, 0.5}), 0.6,
                                                        generate_gaussian_data(30, rng), stages);
      default:
        return std::make_unique<BananaModel>(4, 2, 0.01, generate_gaussian_data(30, rng),
                                             TemperingSchedule::annealing(std::vector<double>{0.0, 0.1, 0.4, 1.0}));
    }
  }
};

TEST_P(AllModels, TemperingTelescopes) {
  const auto model = make(6);
  RngStream rng(50, 0);
  for (int rep = 0; rep < 10; ++rep) {
    const Vector theta = 3.0 * rng.standard_normal(static_cast<Eigen::Index>(model->dim()));
    EXPECT_EQ(model->log_likelihood_cumulative(theta, 0), 0.0);
    const std::size_t t_max = model->num_stages();
    EXPECT_NEAR(model->log_likelihood_cumulative(theta, t_max), model->log_likelihood(theta), 1e-10);
    double running = 0.0;
    for (std::size_t s = 1; s <= t_max; ++s) {
      const double inc = model->log_likelihood_increment(theta, s);
      EXPECT_TRUE(std::isfinite(inc));
      EXPECT_NEAR(model->log_likelihood_cumulative(theta, s) - model->log_likelihood_cumulative(theta, s - 1), inc,
                  1e-10 * (1.0 + std::abs(inc)));
      running += inc;
    }
    EXPECT_NEAR(running, model->log_likelihood(theta), 1e-9 * (1.0 + std::abs(running)));
  }
  EXPECT_THROW(model->log_likelihood_cumulative(Vector::Zero(static_cast<Eigen::Index>(model->dim())), model->num_stages() + 1),
               Error);
}

TEST_P(AllModels, AnalyticGradientMatchesFiniteDifferences) {
  const auto model = make(1);
  RngStream rng(51, 0);
  for (int rep = 0; rep < 20; ++rep) {
    const Vector theta = 2.0 * rng.standard_normal(static_cast<Eigen::Index>(model->dim()));
    const Vector g = model->grad_log_likelihood(theta);
    const Vector fd = fd_gradient(*model, theta);
    EXPECT_LE((g - fd).norm(), 1e-4 * std::max(1.0, fd.norm())) << "rep " << rep;
  }
}

INSTANTIATE_TEST_SUITE_P(Models, AllModels, ::testing::Range(0, 5));

TEST(PlaneModel, GradientZeroAtFittedMean) {
  const auto y = standard_data(15, 9);
  const PlaneModel plane(3, y, 1);
  double ybar = 0.0;
  for (double v : y) ybar += v;
  ybar /= static_cast<double>(y.size());
  const Vector g = plane.grad_log_likelihood(vec({ybar, 0.0, 0.0}));
  EXPECT_LE(g.cwiseAbs().maxCoeff(), 1e-12);
  // the plane gradient is parallel to 1_d
  const Vector g2 = plane.grad_log_likelihood(vec({1.0, -2.0, 0.3}));
  EXPECT_NEAR(g2[0], g2[1], 1e-12);
  EXPECT_NEAR(g2[0], g2[2], 1e-12);
}

TEST(BananaModel, ZeroCurvatureGradientEqualsPlane) {
  const auto y = standard_data(15, 10);
  const BananaModel flat(5, 3, 0.0, y, 1);
  const PlaneModel plane(5, y, 1);
  const Vector t = vec({1, -2, 3, 0.5, 4});
  EXPECT_EQ(flat.grad_log_likelihood(t), plane.grad_log_likelihood(t));
}

TEST(DefaultGradient, FallsBackToCentralDifferences) {
  const ConstantModel flat(isotropic_prior(3, 1.0), 0.2, 4);
  EXPECT_EQ(flat.grad_log_likelihood(Vector::Ones(3)), Vector::Zero(3));
  class Quadratic final : public TargetModel {
   public:
    Quadratic() : TargetModel(isotropic_prior(2, 1.0), TemperingSchedule::data(1, 1)) {}
    std::string name() const override { return "q"; }
    std::size_t data_size() const override { return 1; }

   protected:
    double log_likelihood_range(const Vector& t, std::size_t, std::size_t) const override {
      return -0.5 * (t[0] * t[0] + 3.0 * t[1] * t[1]);
    }
  };
  const Vector g = Quadratic().grad_log_likelihood(vec({1.0, 2.0}));
  EXPECT_NEAR(g[0], -1.0, 1e-8);
  EXPECT_NEAR(g[1], -6.0, 1e-8);
}

TEST(Datasets, ReproducibleAndRoundTrip) {
  RngStream a(77, 0), b(77, 0);
  const auto ya = generate_mixture_data(100, a);
  const auto yb = generate_mixture_data(100, b);
  EXPECT_EQ(ya, yb);
  const auto path = std::filesystem::temp_directory_path() / "asmcmc_dataset_roundtrip.txt";
  write_dataset(path.string(), ya);
  EXPECT_EQ(read_dataset(path.string()), ya);
  {
    std::ofstream out(path);
    out << "1.0\nnan\n";
  }
  EXPECT_THROW(read_dataset(path.string()), Error);
  std::filesystem::remove(path);
}

TEST(Datasets, MixtureDataIsBimodal) {
  RngStream rng(78, 0);
  const auto y = generate_mixture_data(10000, rng);
  int positive = 0;
  double sum_abs = 0.0;
  for (double v : y) {
    positive += v > 0 ? 1 : 0;
    sum_abs += std::abs(v);
  }
  EXPECT_NEAR(positive / 10000.0, 0.5, 5.0 * 0.005);
  EXPECT_NEAR(sum_abs / 10000.0, 5.0, 0.05);
}
