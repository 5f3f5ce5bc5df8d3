#pragma once

#include <Eigen/Dense>
#include <functional>

#include "icjm/random.hpp"

namespace icjm {

/// Robbins-Monro controlled proposal scale. The log-scale moves by
/// c (accepted - target) / (offset + step)^decay, with c the Garthwaite
/// step-size constant for the block dimension.
struct AdaptiveScale {
  double log_sd = 0.0;
  int dim = 1;
  long step = 0;
  double decay = 1.0;
  double offset = 10.0;

  double sd() const;
};

/// Garthwaite, Fan and Sisson (2016) step-size constant for a target
/// acceptance rate in dimension dim.
double garthwaite_constant(double target, int dim);

AdaptiveScale rm_adapt(AdaptiveScale scale, bool accepted, double target);

/// Welford running mean and covariance.
class RunningMoments {
 public:
  explicit RunningMoments(int dim = 0);
  void add(const Eigen::VectorXd& x);
  long count() const { return n_; }
  const Eigen::VectorXd& mean() const { return mean_; }
  /// Unbiased sample covariance; zero when fewer than two points.
  Eigen::MatrixXd covariance() const;

 private:
  long n_ = 0;
  Eigen::VectorXd mean_;
  Eigen::MatrixXd m2_;
};

/// Gaussian random-walk proposal N(x, sd^2 S) whose shape S can be replaced by
/// an empirical covariance and whose sd follows rm_adapt.
class RandomWalkBlock {
 public:
  RandomWalkBlock() = default;
  RandomWalkBlock(const Eigen::MatrixXd& shape, double target);

  int dim() const { return static_cast<int>(chol_.rows()); }
  double target() const { return target_; }
  const AdaptiveScale& scale() const { return scale_; }
  const Eigen::MatrixXd& shape() const { return shape_; }

  Eigen::VectorXd propose(const Eigen::VectorXd& x, Rng& rng) const;
  /// Count an MH outcome; the scale adapts only when adapt is set.
  void record(bool accepted, bool adapt);
  void set_shape(const Eigen::MatrixXd& shape);
  void set_log_sd(double v) { scale_.log_sd = v; }
  void set_scale(const AdaptiveScale& s) { scale_ = s; }

  long accepted() const { return accepted_; }
  long proposed() const { return proposed_; }
  double acceptance_rate() const;
  void reset_counts();

 private:
  Eigen::MatrixXd shape_;
  Eigen::MatrixXd chol_;
  AdaptiveScale scale_;
  double target_ = 0.234;
  long accepted_ = 0;
  long proposed_ = 0;
};

/// Central-difference Hessian of f at x.
Eigen::MatrixXd numeric_hessian(const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& x);

/// Covariance (-H)^-1 with eigenvalues of -H floored so the result is positive
/// definite even away from a mode; `fallback_var` bounds variances from above.
Eigen::MatrixXd covariance_from_hessian(const Eigen::MatrixXd& hessian, double fallback_var = 1.0);

/// Mix an empirical covariance with a small ridge so Cholesky always succeeds.
Eigen::MatrixXd regularised_covariance(const Eigen::MatrixXd& cov, double ridge = 1e-8);

}  // namespace icjm
