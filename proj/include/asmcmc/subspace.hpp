#ifndef ASMCMC_SUBSPACE_HPP
#define ASMCMC_SUBSPACE_HPP

#include "asmcmc/core.hpp"
#include "asmcmc/models.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <utility>

namespace asmcmc {

/// Eigenpairs of a symmetric matrix, eigenvalues sorted nonincreasing.
struct SortedEigen {
  Vector values;
  Matrix vectors;  // column k pairs with values[k]
};

inline SortedEigen sorted_eigen(const Matrix& symmetric) {
  if (symmetric.rows() != symmetric.cols()) {
    throw Error(ErrorCode::dimension_mismatch, "sorted_eigen: matrix is not square");
  }
  Eigen::SelfAdjointEigenSolver<Matrix> solver(0.5 * (symmetric + symmetric.transpose()));
  if (solver.info() != Eigen::Success) throw Error(ErrorCode::invalid_argument, "sorted_eigen: solver failed");
  SortedEigen out;
  out.values = solver.eigenvalues().reverse();
  out.vectors = solver.eigenvectors().rowwise().reverse();
  return out;
}

/// Orthonormal split θ = B_a a + B_i i.
///
/// An identified split pairs the columns of B_a with the d_a largest
/// eigenvalues of the gradient outer-product matrix. `inverted()` swaps the
/// roles of the two blocks; the eigenvalue vector keeps its original order.
class SubspaceSplit {
 public:
  static constexpr double kOrthonormalTolerance = 1e-8;

  SubspaceSplit() = default;

  SubspaceSplit(Matrix active_basis, Matrix inactive_basis, Vector eigenvalues, bool inverted = false)
      : active_(std::move(active_basis)),
        inactive_(std::move(inactive_basis)),
        eigenvalues_(std::move(eigenvalues)),
        inverted_(inverted) {
    const Eigen::Index d = active_.rows();
    require_dim(inactive_.rows(), d, "SubspaceSplit inactive basis rows");
    require_dim(active_.cols() + inactive_.cols(), d, "SubspaceSplit total columns");
    require_dim(eigenvalues_.size(), d, "SubspaceSplit eigenvalues");
    if (active_.cols() == 0 || inactive_.cols() == 0) {
      throw Error(ErrorCode::invalid_argument, "SubspaceSplit: both blocks need at least one direction");
    }
    if (gram_error() > kOrthonormalTolerance) {
      throw Error(ErrorCode::invalid_argument, "SubspaceSplit: basis is not orthonormal");
    }
  }

  /// Coordinate-aligned split: the first d_a axes are active.
  static SubspaceSplit axis_aligned(std::size_t dim, std::size_t active_dim) {
    const auto d = static_cast<Eigen::Index>(dim);
    const auto da = static_cast<Eigen::Index>(active_dim);
    const Matrix eye = Matrix::Identity(d, d);
    return SubspaceSplit(eye.leftCols(da), eye.rightCols(d - da), Vector::Zero(d));
  }

  std::size_t dim() const noexcept { return static_cast<std::size_t>(active_.rows()); }
  std::size_t active_dim() const noexcept { return static_cast<std::size_t>(active_.cols()); }
  std::size_t inactive_dim() const noexcept { return static_cast<std::size_t>(inactive_.cols()); }
  const Matrix& active_basis() const noexcept { return active_; }
  const Matrix& inactive_basis() const noexcept { return inactive_; }
  const Vector& eigenvalues() const noexcept { return eigenvalues_; }
  bool is_inverted() const noexcept { return inverted_; }

  /// [B_a, B_i].
  Matrix basis() const {
    Matrix w(active_.rows(), active_.rows());
    w << active_, inactive_;
    return w;
  }

  /// max |[B_a,B_i]ᵀ[B_a,B_i] - I|.
  double gram_error() const {
    const Matrix w = basis();
    return (w.transpose() * w - Matrix::Identity(w.cols(), w.cols())).cwiseAbs().maxCoeff();
  }

  Vector to_theta(const Vector& a, const Vector& i) const {
    require_dim(a.size(), active_.cols(), "to_theta active coordinates");
    require_dim(i.size(), inactive_.cols(), "to_theta inactive coordinates");
    return active_ * a + inactive_ * i;
  }

  std::pair<Vector, Vector> from_theta(const Vector& theta) const {
    require_dim(theta.size(), active_.rows(), "from_theta");
    return {active_.transpose() * theta, inactive_.transpose() * theta};
  }

  SubspaceSplit inverted() const { return SubspaceSplit(inactive_, active_, eigenvalues_, !inverted_); }

 private:
  Matrix active_;
  Matrix inactive_;
  Vector eigenvalues_;
  bool inverted_ = false;
};

/// (1/N) Σ_m ∇log l(θ^m) ∇log l(θ^m)ᵀ with θ^m drawn from the prior.
inline Matrix estimate_gradient_matrix(const TargetModel& model, std::size_t samples, RngStream& rng) {
  if (samples == 0) throw Error(ErrorCode::invalid_argument, "estimate_gradient_matrix: need at least one sample");
  const auto d = static_cast<Eigen::Index>(model.dim());
  Matrix c = Matrix::Zero(d, d);
  for (std::size_t m = 0; m < samples; ++m) {
    const Vector theta = model.prior().sample(rng);
    const Vector g = model.grad_log_likelihood(theta);
    if (!g.allFinite()) {
      std::ostringstream msg;
      msg << std::setprecision(17) << "non-finite gradient at sample " << m << ", theta = ["
          << theta.transpose() << "]";
      throw Error(ErrorCode::non_finite_gradient, msg.str());
    }
    c.selfadjointView<Eigen::Lower>().rankUpdate(g);
  }
  c = c.selfadjointView<Eigen::Lower>();
  return c / static_cast<double>(samples);
}

/// Eigendecomposition of C split into the top-d_a and remaining directions.
///
/// Slightly negative eigenvalues (down to -1e-10 relative to the largest
/// magnitude) are rounding noise and are clamped to zero.
inline SubspaceSplit split_from_matrix(const Matrix& c, std::size_t active_dim) {
  if (c.rows() != c.cols()) throw Error(ErrorCode::dimension_mismatch, "split_from_matrix: matrix is not square");
  const auto d = static_cast<std::size_t>(c.rows());
  if (active_dim < 1 || active_dim + 1 > d) {
    throw Error(ErrorCode::invalid_argument, "split_from_matrix: active dimension " + std::to_string(active_dim) +
                                                 " outside [1, " + std::to_string(d == 0 ? 0 : d - 1) + "]");
  }
  const double scale = std::max(1.0, c.cwiseAbs().maxCoeff());
  if ((c - c.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
    throw Error(ErrorCode::invalid_argument, "split_from_matrix: matrix is not symmetric");
  }
  SortedEigen eig = sorted_eigen(c);
  const double floor = -1e-10 * std::max(1.0, eig.values.cwiseAbs().maxCoeff());
  for (Eigen::Index k = 0; k < eig.values.size(); ++k) {
    if (eig.values[k] < floor) {
      throw Error(ErrorCode::invalid_argument, "split_from_matrix: matrix has a negative eigenvalue " +
                                                   std::to_string(eig.values[k]));
    }
    if (eig.values[k] < 0.0) eig.values[k] = 0.0;
  }
  const auto da = static_cast<Eigen::Index>(active_dim);
  return SubspaceSplit(eig.vectors.leftCols(da), eig.vectors.rightCols(c.cols() - da), eig.values);
}

// ---------------------------------------------------------------------------
// Prior factorisation p(a, i) = p_a(a) p_{i|a}(i | a)
// ---------------------------------------------------------------------------

class GaussianPriorFactorization {
 public:
  GaussianPriorFactorization(const Gaussian& prior, const SubspaceSplit& split) {
    require_dim(prior.dim(), static_cast<Eigen::Index>(split.dim()), "factorize_gaussian_prior");
    const Eigen::Index di = static_cast<Eigen::Index>(split.inactive_dim());
    const Matrix& ba = split.active_basis();
    const Matrix& bi = split.inactive_basis();
    const Matrix& sigma = prior.covariance();

    const Vector mean_a = ba.transpose() * prior.mean();
    mean_i_ = bi.transpose() * prior.mean();
    Matrix s_aa = ba.transpose() * sigma * ba;
    s_aa = 0.5 * (s_aa + s_aa.transpose());
    const Matrix s_ia = bi.transpose() * sigma * ba;
    Matrix s_ii = bi.transpose() * sigma * bi;

    active_ = Gaussian(mean_a, s_aa);
    Eigen::LLT<Matrix> llt(s_aa);
    gain_ = llt.solve(s_ia.transpose()).transpose();  // S_ia S_aa^{-1}
    Matrix cond = s_ii - gain_ * s_ia.transpose();
    cond = 0.5 * (cond + cond.transpose());
    conditional_noise_ = Gaussian(Vector::Zero(di), cond);
  }

  const Gaussian& active_marginal() const noexcept { return active_; }
  const Matrix& conditional_covariance() const noexcept { return conditional_noise_.covariance(); }
  Eigen::Index active_dim() const noexcept { return active_.dim(); }
  Eigen::Index inactive_dim() const noexcept { return conditional_noise_.dim(); }
  /// S_ia S_aa⁻¹; zero when a and i are a priori independent.
  const Matrix& gain() const noexcept { return gain_; }
  bool blocks_independent(double tol = 1e-12) const { return gain_.size() == 0 || gain_.cwiseAbs().maxCoeff() <= tol; }

  double log_active(const Vector& a) const { return active_.log_density(a); }
  Vector sample_active(RngStream& rng) const { return active_.sample(rng); }

  Vector conditional_mean(const Vector& a) const {
    require_dim(a.size(), active_.dim(), "conditional_mean");
    return mean_i_ + gain_ * (a - active_.mean());
  }

  double log_conditional(const Vector& i, const Vector& a) const {
    require_dim(i.size(), conditional_noise_.dim(), "log_conditional");
    return conditional_noise_.log_density(i - conditional_mean(a));
  }

  Vector sample_conditional(const Vector& a, RngStream& rng) const {
    return conditional_mean(a) + conditional_noise_.sample(rng);
  }

 private:
  Gaussian active_;
  Vector mean_i_;
  Matrix gain_;
  Gaussian conditional_noise_;
};

inline GaussianPriorFactorization factorize_gaussian_prior(const Gaussian& prior, const SubspaceSplit& split) {
  return GaussianPriorFactorization(prior, split);
}

// ---------------------------------------------------------------------------
// Split persistence
// ---------------------------------------------------------------------------

/// Text format: header lines `dim`, `active_dim`, `inverted`, then the d
/// eigenvalues and the d×d basis [B_a, B_i] in column-major order, one number
/// per line at full precision.
inline void write_split(const std::string& path, const SubspaceSplit& split) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::io, "cannot write split " + path);
  out << "# active subspace split\n";
  out << "dim " << split.dim() << '\n';
  out << "active_dim " << split.active_dim() << '\n';
  out << "inverted " << (split.is_inverted() ? 1 : 0) << '\n';
  out << std::setprecision(17);
  out << "eigenvalues\n";
  for (Eigen::Index k = 0; k < split.eigenvalues().size(); ++k) out << split.eigenvalues()[k] << '\n';
  out << "basis\n";
  const Matrix w = split.basis();
  for (Eigen::Index col = 0; col < w.cols(); ++col) {
    for (Eigen::Index row = 0; row < w.rows(); ++row) out << w(row, col) << '\n';
  }
  if (!out) throw Error(ErrorCode::io, "failed writing split " + path);
}

inline SubspaceSplit read_split(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "cannot read split " + path);
  std::string line;
  std::getline(in, line);
  auto expect_key = [&](const char* key) {
    std::string got;
    if (!(in >> got) || got != key) throw Error(ErrorCode::io, path + ": expected '" + key + "'");
  };
  std::size_t dim = 0;
  std::size_t active_dim = 0;
  int inverted = 0;
  expect_key("dim");
  in >> dim;
  expect_key("active_dim");
  in >> active_dim;
  expect_key("inverted");
  in >> inverted;
  if (!in || dim < 2 || active_dim == 0 || active_dim >= dim) throw Error(ErrorCode::io, path + ": bad header");
  const auto d = static_cast<Eigen::Index>(dim);
  Vector eigenvalues(d);
  expect_key("eigenvalues");
  for (Eigen::Index k = 0; k < d; ++k) in >> eigenvalues[k];
  Matrix w(d, d);
  expect_key("basis");
  for (Eigen::Index col = 0; col < d; ++col) {
    for (Eigen::Index row = 0; row < d; ++row) in >> w(row, col);
  }
  if (!in) throw Error(ErrorCode::io, path + ": truncated split file");
  const auto da = static_cast<Eigen::Index>(active_dim);
  return SubspaceSplit(w.leftCols(da), w.rightCols(d - da), eigenvalues, inverted != 0);
}

}  // namespace asmcmc

#endif  // ASMCMC_SUBSPACE_HPP
