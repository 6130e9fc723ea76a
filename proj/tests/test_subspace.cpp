#include "asmcmc/subspace.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>

using namespace asmcmc;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index k = 0;
  for (double x : v) out[k++] = x;
  return out;
}

/// Orthonormal split from the QR factor of a random matrix.
SubspaceSplit random_split(std::size_t d, std::size_t da, RngStream& rng) {
  Matrix m(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = rng.normal();
  const Matrix q = Eigen::HouseholderQR<Matrix>(m).householderQ();
  const auto a = static_cast<Eigen::Index>(da);
  return SubspaceSplit(q.leftCols(a), q.rightCols(q.cols() - a), Vector::Zero(q.cols()));
}

Matrix random_spd(std::size_t d, RngStream& rng) {
  Matrix m(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = rng.normal();
  return m * m.transpose() + Matrix::Identity(m.rows(), m.cols());
}

}  // namespace

TEST(SplitFromMatrix, DiagonalMatrix) {
  const Matrix c = vec({3, 2, 1}).asDiagonal();
  const SubspaceSplit s = split_from_matrix(c, 1);
  EXPECT_NEAR(std::abs(s.active_basis()(0, 0)), 1.0, 1e-12);
  EXPECT_NEAR(s.eigenvalues()[0], 3.0, 1e-12);
  EXPECT_NEAR(s.eigenvalues()[1], 2.0, 1e-12);
  EXPECT_NEAR(s.eigenvalues()[2], 1.0, 1e-12);
  EXPECT_LE(s.gram_error(), 1e-10);
}

TEST(SplitFromMatrix, DegenerateSpectrumInvariantsOnly) {
  const SubspaceSplit s = split_from_matrix(Matrix::Identity(3, 3), 1);
  EXPECT_EQ(s.active_dim(), 1u);
  EXPECT_EQ(s.inactive_dim(), 2u);
  EXPECT_LE(s.gram_error(), 1e-10);
}

TEST(SplitFromMatrix, RangeAndSymmetryErrors) {
  const Matrix c = Matrix::Identity(3, 3);
  EXPECT_THROW(split_from_matrix(c, 0), Error);
  EXPECT_THROW(split_from_matrix(c, 3), Error);
  Matrix asym = c;
  asym(0, 1) = 0.5;
  EXPECT_THROW(split_from_matrix(asym, 1), Error);
  Matrix neg = c;
  neg(2, 2) = -1e-3;
  EXPECT_THROW(split_from_matrix(neg, 1), Error);
}

TEST(SplitFromMatrix, ClampsRoundingNegatives) {
  Matrix c = vec({2, 1, -1e-13}).asDiagonal();
  const SubspaceSplit s = split_from_matrix(c, 1);
  EXPECT_EQ(s.eigenvalues()[2], 0.0);
}

TEST(SplitFromMatrix, PropertiesOnRandomPsd) {
  RngStream rng(21, 0);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t d = 2 + static_cast<std::size_t>(rng.uniform() * 8);
    const std::size_t da = 1 + static_cast<std::size_t>(rng.uniform() * static_cast<double>(d - 1));
    const Matrix c = random_spd(d, rng);
    const SubspaceSplit s = split_from_matrix(c, da);
    EXPECT_LE(s.gram_error(), 1e-10);
    for (Eigen::Index k = 0; k + 1 < s.eigenvalues().size(); ++k) EXPECT_GE(s.eigenvalues()[k], s.eigenvalues()[k + 1]);
    // B_a spans the top eigen-directions: Rayleigh quotients equal the top eigenvalues
    for (Eigen::Index k = 0; k < static_cast<Eigen::Index>(da); ++k) {
      const Vector v = s.active_basis().col(k);
      EXPECT_NEAR(v.dot(c * v), s.eigenvalues()[k], 1e-9 * s.eigenvalues()[0]);
    }
  }
}

TEST(Reparameterisation, Examples) {
  const SubspaceSplit s = SubspaceSplit::axis_aligned(3, 1);
  EXPECT_EQ(s.to_theta(Vector::Zero(1), Vector::Zero(2)), Vector::Zero(3));
  EXPECT_EQ(s.to_theta(vec({2}), vec({3, 4})), vec({2, 3, 4}));
  const auto [a, i] = s.from_theta(vec({2, 3, 4}));
  EXPECT_EQ(a, vec({2}));
  EXPECT_EQ(i, vec({3, 4}));
  const auto [a0, i0] = s.from_theta(Vector::Zero(3));
  EXPECT_EQ(a0, Vector::Zero(1));
  EXPECT_EQ(i0, Vector::Zero(2));
  EXPECT_THROW(s.to_theta(vec({1, 2}), vec({3})), Error);
  EXPECT_THROW(s.from_theta(vec({1, 2})), Error);
}

TEST(Reparameterisation, RoundTripAndParseval) {
  RngStream rng(22, 0);
  for (int rep = 0; rep < 50; ++rep) {
    const std::size_t d = 2 + static_cast<std::size_t>(rng.uniform() * 20);
    const std::size_t da = 1 + static_cast<std::size_t>(rng.uniform() * static_cast<double>(d - 1));
    const SubspaceSplit s = random_split(d, da, rng);
    EXPECT_LE(s.gram_error(), 1e-10);
    const Vector theta = 10.0 * rng.standard_normal(static_cast<Eigen::Index>(d));
    const auto [a, i] = s.from_theta(theta);
    EXPECT_LE((s.to_theta(a, i) - theta).cwiseAbs().maxCoeff(), 1e-10 * (1.0 + theta.cwiseAbs().maxCoeff()));
    EXPECT_NEAR(a.squaredNorm() + i.squaredNorm(), theta.squaredNorm(), 1e-10 * theta.squaredNorm());
    const Vector a2 = rng.standard_normal(static_cast<Eigen::Index>(da));
    const Vector i2 = rng.standard_normal(static_cast<Eigen::Index>(d - da));
    const auto [a3, i3] = s.from_theta(s.to_theta(a2, i2));
    EXPECT_LE((a3 - a2).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LE((i3 - i2).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Reparameterisation, InvertedSwapsBlocks) {
  RngStream rng(23, 0);
  const SubspaceSplit s = random_split(5, 2, rng);
  const SubspaceSplit inv = s.inverted();
  EXPECT_TRUE(inv.is_inverted());
  EXPECT_EQ(inv.active_dim(), 3u);
  const Vector theta = rng.standard_normal(5);
  const auto [a, i] = s.from_theta(theta);
  const auto [a_inv, i_inv] = inv.from_theta(theta);
  EXPECT_EQ(a, i_inv);
  EXPECT_EQ(i, a_inv);
  EXPECT_FALSE(inv.inverted().is_inverted());
}

TEST(SubspaceSplit, RejectsNonOrthonormal) {
  Matrix a(2, 1), i(2, 1);
  a << 1, 0;
  i << 1, 1;
  EXPECT_THROW(SubspaceSplit(a, i, Vector::Zero(2)), Error);
}

TEST(Factorization, IsotropicPrior) {
  RngStream rng(24, 0);
  const SubspaceSplit s = random_split(6, 2, rng);
  const GaussianPriorFactorization f(Gaussian(Vector::Zero(6), 7.0 * Matrix::Identity(6, 6)), s);
  EXPECT_LE((f.active_marginal().covariance() - 7.0 * Matrix::Identity(2, 2)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE((f.conditional_covariance() - 7.0 * Matrix::Identity(4, 4)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE(f.conditional_mean(vec({3.0, -2.0})).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_TRUE(f.blocks_independent(1e-12));
}

TEST(Factorization, IndependentCoordinates) {
  const SubspaceSplit s = SubspaceSplit::axis_aligned(2, 1);
  const GaussianPriorFactorization f(Gaussian(Vector::Zero(2), vec({1.0, 4.0}).asDiagonal()), s);
  EXPECT_NEAR(f.conditional_covariance()(0, 0), 4.0, 1e-14);
  for (double a : {-3.0, 0.0, 5.0}) EXPECT_NEAR(f.conditional_mean(vec({a}))[0], 0.0, 1e-14);
}

TEST(Factorization, CorrelatedPriorRotatedBasis) {
  Matrix sigma(2, 2);
  sigma << 2, 1, 1, 2;
  const Vector mu = vec({0.5, -1.0});
  const double r = 1.0 / std::sqrt(2.0);
  Matrix ba(2, 1), bi(2, 1);
  ba << r, -r;
  bi << r, r;
  const SubspaceSplit s(ba, bi, Vector::Zero(2));
  const GaussianPriorFactorization f(Gaussian(mu, sigma), s);
  // dense oracle: joint of (a, i) then textbook conditioning
  Matrix w(2, 2);
  w << ba, bi;
  const Matrix joint = w.transpose() * sigma * w;
  const Vector joint_mean = w.transpose() * mu;
  const double a = 0.8;
  const double cond_mean = joint_mean[1] + joint(1, 0) / joint(0, 0) * (a - joint_mean[0]);
  const double cond_var = joint(1, 1) - joint(1, 0) * joint(1, 0) / joint(0, 0);
  EXPECT_NEAR(f.conditional_mean(vec({a}))[0], cond_mean, 1e-12);
  EXPECT_NEAR(f.conditional_covariance()(0, 0), cond_var, 1e-12);
  EXPECT_NEAR(f.active_marginal().covariance()(0, 0), joint(0, 0), 1e-12);
  EXPECT_NEAR(f.active_marginal().mean()[0], joint_mean[0], 1e-12);
}

TEST(Factorization, CorrelatedGeneralCase) {
  // a correlated rotated prior where the blocks are dependent
  Matrix sigma(2, 2);
  sigma << 3, 1, 1, 1;
  const SubspaceSplit s = SubspaceSplit::axis_aligned(2, 1);
  const GaussianPriorFactorization f(Gaussian(Vector::Zero(2), sigma), s);
  EXPECT_NEAR(f.conditional_mean(vec({3.0}))[0], 1.0, 1e-12);
  EXPECT_NEAR(f.conditional_covariance()(0, 0), 1.0 - 1.0 / 3.0, 1e-12);
  EXPECT_FALSE(f.blocks_independent());
}

TEST(Factorization, RejectsNonSpd) {
  Matrix sigma(2, 2);
  sigma << 1, 2, 2, 1;
  EXPECT_THROW(Gaussian(Vector::Zero(2), sigma), Error);
}

TEST(Factorization, PriorDensityConsistency) {
  RngStream rng(25, 0);
  for (int rep = 0; rep < 30; ++rep) {
    const std::size_t d = 2 + static_cast<std::size_t>(rng.uniform() * 8);
    const std::size_t da = 1 + static_cast<std::size_t>(rng.uniform() * static_cast<double>(d - 1));
    const Matrix sigma = random_spd(d, rng);
    const Vector mu = rng.standard_normal(static_cast<Eigen::Index>(d));
    const Gaussian prior(mu, sigma);
    const SubspaceSplit s = random_split(d, da, rng);
    const GaussianPriorFactorization f(prior, s);
    const Vector theta = prior.sample(rng);
    const auto [a, i] = s.from_theta(theta);
    EXPECT_NEAR(prior.log_density(theta), f.log_active(a) + f.log_conditional(i, a), 1e-8);
  }
}

TEST(Factorization, SamplingConsistency) {
  RngStream rng(26, 0);
  Matrix sigma(3, 3);
  sigma << 2.0, 0.5, 0.3, 0.5, 1.0, -0.2, 0.3, -0.2, 1.5;
  const Gaussian prior(Vector::Zero(3), sigma);
  const SubspaceSplit s = random_split(3, 1, rng);
  const GaussianPriorFactorization f(prior, s);
  const int n = 100000;
  std::vector<Vector> xs;
  xs.reserve(n);
  for (int k = 0; k < n; ++k) {
    const Vector a = f.sample_active(rng);
    xs.push_back(s.to_theta(a, f.sample_conditional(a, rng)));
  }
  const Matrix c = empirical_covariance(xs);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      const double se = std::sqrt((sigma(i, i) * sigma(j, j) + sigma(i, j) * sigma(i, j)) / n);
      EXPECT_NEAR(c(i, j), sigma(i, j), 5.0 * se) << i << "," << j;
    }
  }
}

namespace {

class QuadraticModel final : public TargetModel {
 public:
  explicit QuadraticModel(Vector direction)
      : TargetModel(isotropic_prior(static_cast<std::size_t>(direction.size()), 1.0), TemperingSchedule::data(1, 1)),
        direction_(std::move(direction)) {}
  std::string name() const override { return "quadratic"; }
  std::size_t data_size() const override { return 1; }

 protected:
  double log_likelihood_range(const Vector& theta, std::size_t, std::size_t) const override {
    const double s = direction_.dot(theta) - 1.0;
    return -0.5 * s * s;
  }

 private:
  Vector direction_;
};

}  // namespace

TEST(GradientMatrix, FlatLikelihoodGivesZero) {
  const ConstantModel model(isotropic_prior(4, 1.0), -0.3, 5);
  RngStream rng(27, 0);
  EXPECT_EQ(estimate_gradient_matrix(model, 100, rng), Matrix::Zero(4, 4));
}

TEST(GradientMatrix, SingleSampleIsOuterProduct) {
  const QuadraticModel model(vec({1.0, 2.0, -1.0}));
  RngStream rng(28, 0), replay(28, 0);
  const Matrix c = estimate_gradient_matrix(model, 1, rng);
  const Vector theta = model.prior().sample(replay);
  const Vector g = model.grad_log_likelihood(theta);
  EXPECT_LE((c - g * g.transpose()).cwiseAbs().maxCoeff(), 1e-12 * (1.0 + g.squaredNorm()));
}

TEST(GradientMatrix, RankOneAlongDirectionSymmetricPsd) {
  const Vector dir = vec({1.0, 2.0, -1.0, 0.5});
  const QuadraticModel model(dir);
  RngStream rng(29, 0);
  const Matrix c = estimate_gradient_matrix(model, 500, rng);
  EXPECT_LE((c - c.transpose()).cwiseAbs().maxCoeff(), 1e-12 * c.cwiseAbs().maxCoeff());
  const SortedEigen eig = sorted_eigen(c);
  EXPECT_GE(eig.values.minCoeff(), -1e-10 * eig.values[0]);
  EXPECT_GT(eig.values[0] / std::max(eig.values[1], 1e-300), 1e6);
  EXPECT_NEAR(std::abs(eig.vectors.col(0).dot(dir.normalized())), 1.0, 1e-6);
}

TEST(GradientMatrix, NonFiniteGradientNamesThePoint) {
  class Broken final : public TargetModel {
   public:
    Broken() : TargetModel(isotropic_prior(2, 1.0), TemperingSchedule::data(1, 1)) {}
    std::string name() const override { return "broken"; }
    std::size_t data_size() const override { return 1; }
    Vector grad_log_likelihood(const Vector&) const override { return Vector::Constant(2, std::nan("")); }

   protected:
    double log_likelihood_range(const Vector&, std::size_t, std::size_t) const override { return 0.0; }
  };
  RngStream rng(30, 0);
  try {
    estimate_gradient_matrix(Broken(), 3, rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::non_finite_gradient);
    EXPECT_NE(std::string(e.what()).find("theta = ["), std::string::npos);
  }
}

TEST(SplitPersistence, RoundTripExact) {
  RngStream rng(31, 0);
  Matrix c = random_spd(5, rng);
  const SubspaceSplit s = split_from_matrix(c, 2);
  const auto path = std::filesystem::temp_directory_path() / "asmcmc_split_roundtrip.txt";
  write_split(path.string(), s);
  const SubspaceSplit back = read_split(path.string());
  EXPECT_EQ(back.active_basis(), s.active_basis());
  EXPECT_EQ(back.inactive_basis(), s.inactive_basis());
  EXPECT_EQ(back.eigenvalues(), s.eigenvalues());
  EXPECT_EQ(back.is_inverted(), s.is_inverted());
  std::filesystem::remove(path);
}

TEST(SplitPersistence, TruncatedFileIsAnError) {
  const auto path = std::filesystem::temp_directory_path() / "asmcmc_split_truncated.txt";
  {
    std::ofstream out(path);
    out << "# split\ndim 3\nactive_dim 1\ninverted 0\neigenvalues\n1\n2\n";
  }
  EXPECT_THROW(read_split(path.string()), Error);
  std::filesystem::remove(path);
}
