#ifndef ASMCMC_MODELS_HPP
#define ASMCMC_MODELS_HPP

#include "asmcmc/core.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <limits>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

namespace asmcmc {

// ---------------------------------------------------------------------------
// Tempering schedules
// ---------------------------------------------------------------------------

enum class TemperingKind { data, annealing };

/// Sequence of targets p(θ) l_{1:t}(θ), t = 0..T.
///
/// Data tempering adds ceil(n/T) observations per stage (the last block may be
/// smaller); annealing raises the full likelihood to η_t with η_T = 1.
class TemperingSchedule {
 public:
  static TemperingSchedule data(std::size_t num_points, std::size_t stages) {
    if (stages == 0) throw Error(ErrorCode::invalid_argument, "tempering: need at least one stage");
    if (num_points == 0) throw Error(ErrorCode::invalid_argument, "tempering: data tempering needs data");
    TemperingSchedule s;
    s.kind_ = TemperingKind::data;
    s.stages_ = stages;
    const std::size_t block = (num_points + stages - 1) / stages;
    if (block * (stages - 1) >= num_points) {
      throw Error(ErrorCode::invalid_argument, "tempering: " + std::to_string(stages) +
                                                   " stages leave an empty final block for " +
                                                   std::to_string(num_points) + " points");
    }
    s.ends_.resize(stages + 1);
    for (std::size_t t = 0; t <= stages; ++t) s.ends_[t] = std::min(num_points, t * block);
    return s;
  }

  /// Equally spaced temperatures η_t = t/T.
  static TemperingSchedule annealing(std::size_t stages) {
    if (stages == 0) throw Error(ErrorCode::invalid_argument, "tempering: need at least one stage");
    std::vector<double> etas(stages + 1);
    for (std::size_t t = 0; t <= stages; ++t) etas[t] = static_cast<double>(t) / static_cast<double>(stages);
    return annealing(std::move(etas));
  }

  /// Explicit temperatures η_0 = 0 < ... < η_T = 1.
  static TemperingSchedule annealing(std::vector<double> etas) {
    if (etas.size() < 2 || etas.front() != 0.0 || etas.back() != 1.0) {
      throw Error(ErrorCode::invalid_argument, "tempering: temperatures must run from 0 to 1");
    }
    for (std::size_t t = 1; t < etas.size(); ++t) {
      if (!(etas[t] > etas[t - 1])) throw Error(ErrorCode::invalid_argument, "tempering: temperatures must increase");
    }
    TemperingSchedule s;
    s.kind_ = TemperingKind::annealing;
    s.stages_ = etas.size() - 1;
    s.etas_ = std::move(etas);
    return s;
  }

  TemperingKind kind() const noexcept { return kind_; }
  std::size_t stages() const noexcept { return stages_; }
  /// Data tempering: number of observations included at stage t.
  std::size_t data_end(std::size_t t) const { return ends_.at(t); }
  double eta(std::size_t t) const { return etas_.at(t); }
  const std::vector<double>& etas() const noexcept { return etas_; }

 private:
  TemperingKind kind_ = TemperingKind::data;
  std::size_t stages_ = 1;
  std::vector<std::size_t> ends_;
  std::vector<double> etas_;
};

/// Likelihood-evaluation tally. `evaluations` counts likelihood factors
/// evaluated for weighting and MH ratios; `move_evaluations` counts those
/// spent on MCMC moves inside SMC samplers.
struct EvaluationCounter {
  std::uint64_t evaluations = 0;
  std::uint64_t move_evaluations = 0;

  std::uint64_t total() const noexcept { return evaluations + move_evaluations; }
  EvaluationCounter& operator+=(const EvaluationCounter& other) {
    evaluations += other.evaluations;
    move_evaluations += other.move_evaluations;
    return *this;
  }
  bool operator==(const EvaluationCounter&) const = default;
};

// ---------------------------------------------------------------------------
// Model interface
// ---------------------------------------------------------------------------

/// Gaussian prior, tempered likelihood factors and the likelihood gradient.
class TargetModel {
 public:
  TargetModel(Gaussian prior, TemperingSchedule schedule) : prior_(std::move(prior)), schedule_(std::move(schedule)) {}
  virtual ~TargetModel() = default;

  virtual std::string name() const = 0;

  std::size_t dim() const noexcept { return static_cast<std::size_t>(prior_.dim()); }
  const Gaussian& prior() const noexcept { return prior_; }
  const TemperingSchedule& schedule() const noexcept { return schedule_; }
  std::size_t num_stages() const noexcept { return schedule_.stages(); }

  double log_prior(const Vector& theta) const { return prior_.log_density(theta); }

  double log_likelihood(const Vector& theta) const {
    require_dim(theta.size(), prior_.dim(), "model parameter");
    return log_likelihood_range(theta, 0, data_size());
  }

  /// log l_{1:t}(θ); zero at t = 0 and the full log-likelihood at t = T.
  double log_likelihood_cumulative(const Vector& theta, std::size_t t) const {
    check_stage(t);
    require_dim(theta.size(), prior_.dim(), "model parameter");
    if (t == 0) return 0.0;
    if (schedule_.kind() == TemperingKind::data) return log_likelihood_range(theta, 0, schedule_.data_end(t));
    if (t == schedule_.stages()) return log_likelihood_range(theta, 0, data_size());
    return schedule_.eta(t) * log_likelihood_range(theta, 0, data_size());
  }

  /// log l_s(θ) = log l_{1:s}(θ) - log l_{1:s-1}(θ), for s >= 1.
  double log_likelihood_increment(const Vector& theta, std::size_t s) const {
    check_stage(s);
    if (s == 0) throw Error(ErrorCode::invalid_argument, "log_likelihood_increment: stage must be >= 1");
    require_dim(theta.size(), prior_.dim(), "model parameter");
    if (schedule_.kind() == TemperingKind::data) {
      return log_likelihood_range(theta, schedule_.data_end(s - 1), schedule_.data_end(s));
    }
    return (schedule_.eta(s) - schedule_.eta(s - 1)) * log_likelihood_range(theta, 0, data_size());
  }

  /// ∇ log l(θ) of the full likelihood. Defaults to central differences.
  virtual Vector grad_log_likelihood(const Vector& theta) const {
    require_dim(theta.size(), prior_.dim(), "model parameter");
    Vector grad(theta.size());
    Vector probe = theta;
    for (Eigen::Index j = 0; j < theta.size(); ++j) {
      const double h = 1e-5 * (1.0 + std::abs(theta[j]));
      probe[j] = theta[j] + h;
      const double up = log_likelihood(probe);
      probe[j] = theta[j] - h;
      const double down = log_likelihood(probe);
      probe[j] = theta[j];
      grad[j] = (up - down) / (2.0 * h);
    }
    return grad;
  }

  /// Number of observations (or likelihood factors) the likelihood is built from.
  virtual std::size_t data_size() const = 0;

 protected:
  /// Sum of per-observation log-likelihood terms over observations [begin, end).
  virtual double log_likelihood_range(const Vector& theta, std::size_t begin, std::size_t end) const = 0;

 private:
  void check_stage(std::size_t t) const {
    if (t > schedule_.stages()) {
      throw Error(ErrorCode::invalid_argument,
                  "stage " + std::to_string(t) + " exceeds T = " + std::to_string(schedule_.stages()));
    }
  }

  Gaussian prior_;
  TemperingSchedule schedule_;
};

inline Gaussian isotropic_prior(std::size_t dim, double variance, double mean = 0.0) {
  const auto d = static_cast<Eigen::Index>(dim);
  return Gaussian(Vector::Constant(d, mean), variance * Matrix::Identity(d, d));
}

namespace detail {

/// Prefix sums of y and y² so that Σ_{j∈[b,e)} (y_j - m)² is O(1).
class GaussianDataBlock {
 public:
  GaussianDataBlock() = default;
  explicit GaussianDataBlock(std::vector<double> y) : y_(std::move(y)) {
    sum_.assign(y_.size() + 1, 0.0);
    sum_sq_.assign(y_.size() + 1, 0.0);
    for (std::size_t j = 0; j < y_.size(); ++j) {
      sum_[j + 1] = sum_[j] + y_[j];
      sum_sq_[j + 1] = sum_sq_[j] + y_[j] * y_[j];
    }
  }

  const std::vector<double>& values() const noexcept { return y_; }
  std::size_t size() const noexcept { return y_.size(); }

  double sum(std::size_t b, std::size_t e) const { return sum_[e] - sum_[b]; }

  /// Σ_{j∈[b,e)} (y_j - ȳ)² with ȳ the block mean.
  double scatter(std::size_t b, std::size_t e) const {
    if (e <= b) return 0.0;
    const double sy = sum_[e] - sum_[b];
    return std::max(0.0, (sum_sq_[e] - sum_sq_[b]) - sy * sy / static_cast<double>(e - b));
  }

  /// Σ_{j∈[b,e)} log N(y_j | mean, variance).
  double log_density(double mean, double variance, std::size_t b, std::size_t e) const {
    if (e <= b) return 0.0;
    const auto n = static_cast<double>(e - b);
    const double sy = sum_[e] - sum_[b];
    const double syy = sum_sq_[e] - sum_sq_[b];
    const double ss = std::max(0.0, syy - 2.0 * mean * sy + n * mean * mean);
    return -0.5 * (n * (kLogTwoPi + std::log(variance)) + ss / variance);
  }

 private:
  std::vector<double> y_;
  std::vector<double> sum_;
  std::vector<double> sum_sq_;
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Conjugate linear-Gaussian model
// ---------------------------------------------------------------------------

/// y_j ~ N(cᵀθ, σ²) with a Gaussian prior on θ; posterior and evidence are closed form.
class ConjugateGaussianModel : public TargetModel {
 public:
  ConjugateGaussianModel(Gaussian prior, Vector design, double noise_variance, std::vector<double> y,
                         std::size_t stages = 1)
      : TargetModel(std::move(prior), TemperingSchedule::data(y.size(), stages)),
        design_(std::move(design)),
        noise_variance_(noise_variance),
        data_(std::move(y)) {
    require_dim(design_.size(), static_cast<Eigen::Index>(dim()), "ConjugateGaussianModel design");
    if (!(noise_variance_ > 0.0)) throw Error(ErrorCode::invalid_argument, "noise variance must be positive");
  }

  std::string name() const override { return "conjugate"; }
  std::size_t data_size() const override { return data_.size(); }
  const Vector& design() const noexcept { return design_; }
  double noise_variance() const noexcept { return noise_variance_; }
  const std::vector<double>& data() const noexcept { return data_.values(); }

  Vector grad_log_likelihood(const Vector& theta) const override {
    require_dim(theta.size(), static_cast<Eigen::Index>(dim()), "grad_log_likelihood");
    const double m = design_.dot(theta);
    const auto n = static_cast<double>(data_.size());
    return ((data_.sum(0, data_.size()) - n * m) / noise_variance_) * design_;
  }

  /// log ∫ Π_j N(y_j | m, σ²) N(m | m0, v) dm, for a scalar Gaussian m.
  double log_evidence_for_mean(double m0, double v) const {
    const auto n = static_cast<double>(data_.size());
    const double total = v + noise_variance_ / n;
    if (!(total > 0.0)) throw Error(ErrorCode::not_positive_definite, "conjugate evidence: singular covariance");
    const double ybar = data_.sum(0, data_.size()) / n;
    // Π N(y|m,σ²) = N(ȳ | m, σ²/n) · (2πσ²)^{-(n-1)/2} n^{-1/2} exp(-S/2σ²)
    const double scatter = data_.scatter(0, data_.size());
    const double log_residual =
        -0.5 * (n - 1.0) * (kLogTwoPi + std::log(noise_variance_)) - 0.5 * std::log(n) - 0.5 * scatter / noise_variance_;
    return log_residual + log_normal_density(ybar, m0, total);
  }

  /// Exact log marginal likelihood log ∫ p(θ) l(θ) dθ.
  double log_marginal() const {
    const Gaussian& p = prior();
    return log_evidence_for_mean(design_.dot(p.mean()), design_.dot(p.covariance() * design_));
  }

  /// Exact posterior N(μ_post, Σ_post).
  Gaussian posterior() const {
    const Gaussian& p = prior();
    const auto n = static_cast<double>(data_.size());
    const double ybar = data_.sum(0, data_.size()) / n;
    const Vector sc = p.covariance() * design_;
    const double total = design_.dot(sc) + noise_variance_ / n;
    if (!(total > 0.0)) throw Error(ErrorCode::not_positive_definite, "conjugate posterior: singular covariance");
    Vector mean = p.mean() + sc * ((ybar - design_.dot(p.mean())) / total);
    Matrix cov = p.covariance() - sc * sc.transpose() / total;
    cov = 0.5 * (cov + cov.transpose());
    return Gaussian(std::move(mean), std::move(cov));
  }

 protected:
  double log_likelihood_range(const Vector& theta, std::size_t begin, std::size_t end) const override {
    return data_.log_density(design_.dot(theta), noise_variance_, begin, end);
  }

 private:
  Vector design_;
  double noise_variance_;
  detail::GaussianDataBlock data_;
};

// ---------------------------------------------------------------------------
// Plane and banana
// ---------------------------------------------------------------------------

/// y ~ N(Σ_j θ_j + b Σ_{j<k} θ_j², 1) with prior θ ~ N(0, σ² I).
class BananaModel : public TargetModel {
 public:
  static constexpr double kDefaultPriorVariance = 5000.0;
  static constexpr double kDefaultCurvature = 0.001;

  BananaModel(std::size_t dim, std::size_t curvature_count, double curvature, std::vector<double> y,
              TemperingSchedule schedule, double prior_variance = kDefaultPriorVariance)
      : TargetModel(isotropic_prior(dim, prior_variance), std::move(schedule)),
        curvature_count_(curvature_count),
        curvature_(curvature),
        prior_variance_(prior_variance),
        data_(std::move(y)) {
    if (dim == 0) throw Error(ErrorCode::invalid_argument, "banana: dimension must be positive");
    if (curvature_count_ > dim) throw Error(ErrorCode::invalid_argument, "banana: curvature count exceeds dimension");
    if (schedule_data_mismatch()) {
      throw Error(ErrorCode::invalid_argument, "banana: tempering schedule does not match the data size");
    }
  }

  BananaModel(std::size_t dim, std::size_t curvature_count, double curvature, std::vector<double> y,
              std::size_t stages = 1, double prior_variance = kDefaultPriorVariance)
      : BananaModel(dim, curvature_count, curvature, y, TemperingSchedule::data(y.size(), stages), prior_variance) {}

  std::string name() const override { return "banana"; }
  std::size_t data_size() const override { return data_.size(); }
  std::size_t curvature_count() const noexcept { return curvature_count_; }
  double curvature() const noexcept { return curvature_; }
  double prior_variance() const noexcept { return prior_variance_; }
  const std::vector<double>& data() const noexcept { return data_.values(); }

  /// Likelihood mean s(θ) = Σ_j θ_j + b Σ_{j<k} θ_j².
  double mean_of(const Vector& theta) const {
    double s = theta.sum();
    if (curvature_ != 0.0) s += curvature_ * theta.head(static_cast<Eigen::Index>(curvature_count_)).squaredNorm();
    return s;
  }

  Vector grad_log_likelihood(const Vector& theta) const override {
    require_dim(theta.size(), static_cast<Eigen::Index>(dim()), "grad_log_likelihood");
    const double s = mean_of(theta);
    const double score = data_.sum(0, data_.size()) - static_cast<double>(data_.size()) * s;
    Vector grad = Vector::Constant(theta.size(), score);
    for (std::size_t j = 0; j < curvature_count_; ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      grad[jj] = score * (1.0 + 2.0 * curvature_ * theta[jj]);
    }
    return grad;
  }

 protected:
  double log_likelihood_range(const Vector& theta, std::size_t begin, std::size_t end) const override {
    return data_.log_density(mean_of(theta), 1.0, begin, end);
  }

 private:
  bool schedule_data_mismatch() const {
    return schedule().kind() == TemperingKind::data && schedule().data_end(schedule().stages()) != data_.size();
  }

  std::size_t curvature_count_;
  double curvature_;
  double prior_variance_;
  detail::GaussianDataBlock data_;
};

/// The banana model with the curvature switched off: y ~ N(Σ_j θ_j, 1).
class PlaneModel final : public BananaModel {
 public:
  PlaneModel(std::size_t dim, std::vector<double> y, TemperingSchedule schedule,
             double prior_variance = kDefaultPriorVariance)
      : BananaModel(dim, 0, 0.0, std::move(y), std::move(schedule), prior_variance) {}

  PlaneModel(std::size_t dim, std::vector<double> y, std::size_t stages = 1,
             double prior_variance = kDefaultPriorVariance)
      : BananaModel(dim, 0, 0.0, std::move(y), stages, prior_variance) {}

  std::string name() const override { return "plane"; }

  /// The same likelihood written as a conjugate linear-Gaussian model.
  ConjugateGaussianModel conjugate() const {
    return ConjugateGaussianModel(prior(), Vector::Ones(static_cast<Eigen::Index>(dim())), 1.0, data(), 1);
  }
};

// ---------------------------------------------------------------------------
// Two-component mixture
// ---------------------------------------------------------------------------

/// y ~ ½ N(θ₁+θ₂, 1) + ½ N(θ₃+θ₄, 1), θ ~ N(0, 25 I₄).
class MixtureModel final : public TargetModel {
 public:
  static constexpr double kDefaultPriorVariance = 25.0;

  MixtureModel(std::vector<double> y, TemperingSchedule schedule, double prior_variance = kDefaultPriorVariance)
      : TargetModel(isotropic_prior(4, prior_variance), std::move(schedule)), y_(std::move(y)) {
    if (this->schedule().kind() == TemperingKind::data && this->schedule().data_end(this->schedule().stages()) != y_.size()) {
      throw Error(ErrorCode::invalid_argument, "mixture: tempering schedule does not match the data size");
    }
  }

  MixtureModel(std::vector<double> y, std::size_t stages = 1, double prior_variance = kDefaultPriorVariance)
      : MixtureModel(y, TemperingSchedule::data(y.size(), stages), prior_variance) {}

  std::string name() const override { return "mixture"; }
  std::size_t data_size() const override { return y_.size(); }
  const std::vector<double>& data() const noexcept { return y_; }

  Vector grad_log_likelihood(const Vector& theta) const override {
    require_dim(theta.size(), 4, "grad_log_likelihood");
    const double m1 = theta[0] + theta[1];
    const double m2 = theta[2] + theta[3];
    double g1 = 0.0;
    double g2 = 0.0;
    for (double y : y_) {
      const double l1 = -0.5 * (y - m1) * (y - m1);
      const double l2 = -0.5 * (y - m2) * (y - m2);
      const double r1 = 1.0 / (1.0 + std::exp(l2 - l1));  // responsibility of component 1
      g1 += r1 * (y - m1);
      g2 += (1.0 - r1) * (y - m2);
    }
    Vector grad(4);
    grad << g1, g1, g2, g2;
    return grad;
  }

 protected:
  double log_likelihood_range(const Vector& theta, std::size_t begin, std::size_t end) const override {
    const double m1 = theta[0] + theta[1];
    const double m2 = theta[2] + theta[3];
    double total = 0.0;
    for (std::size_t j = begin; j < end; ++j) {
      const double y = y_[j];
      total += std::log(0.5) - 0.5 * kLogTwoPi + log_add(-0.5 * (y - m1) * (y - m1), -0.5 * (y - m2) * (y - m2));
    }
    return total;
  }

 private:
  std::vector<double> y_;
};

// ---------------------------------------------------------------------------
// Flat likelihood
// ---------------------------------------------------------------------------

/// Every observation contributes the same constant factor c: l_{1:t} = c^{n_t}.
class ConstantModel final : public TargetModel {
 public:
  ConstantModel(Gaussian prior, double log_factor, std::size_t factors, std::size_t stages = 1)
      : TargetModel(std::move(prior), TemperingSchedule::data(factors, stages)),
        log_factor_(log_factor),
        factors_(factors) {}

  std::string name() const override { return "constant"; }
  std::size_t data_size() const override { return factors_; }
  Vector grad_log_likelihood(const Vector& theta) const override { return Vector::Zero(theta.size()); }

 protected:
  double log_likelihood_range(const Vector&, std::size_t begin, std::size_t end) const override {
    return static_cast<double>(end - begin) * log_factor_;
  }

 private:
  double log_factor_;
  std::size_t factors_;
};

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

/// n draws of N(0, 1): the plane/banana data.
inline std::vector<double> generate_gaussian_data(std::size_t n, RngStream& rng) {
  std::vector<double> y(n);
  for (auto& v : y) v = rng.normal();
  return y;
}

/// n draws of ½ N(-5, 1) + ½ N(5, 1): the mixture data.
inline std::vector<double> generate_mixture_data(std::size_t n, RngStream& rng) {
  std::vector<double> y(n);
  for (auto& v : y) {
    const double centre = rng.uniform() < 0.5 ? -5.0 : 5.0;
    v = centre + rng.normal();
  }
  return y;
}

inline void write_dataset(const std::string& path, const std::vector<double>& y) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::io, "cannot write dataset " + path);
  out << std::setprecision(17);
  for (double v : y) out << v << '\n';
  if (!out) throw Error(ErrorCode::io, "failed writing dataset " + path);
}

inline std::vector<double> read_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "cannot read dataset " + path);
  std::vector<double> y;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream parse(line);
    double v;
    if (!(parse >> v) || !std::isfinite(v)) {
      throw Error(ErrorCode::io, path + ":" + std::to_string(line_no) + ": not a finite number");
    }
    y.push_back(v);
  }
  return y;
}

}  // namespace asmcmc

#endif  // ASMCMC_MODELS_HPP
