#include "icjm/adaptive.hpp"

#include <boost/math/distributions/normal.hpp>
#include <cmath>
#include <numbers>

#include "icjm/error.hpp"

namespace icjm {

double AdaptiveScale::sd() const { return std::exp(log_sd); }

double garthwaite_constant(double target, int dim) {
  if (!(target > 0.0 && target < 1.0)) throw InvalidArgument("target acceptance must lie in (0, 1)");
  if (dim < 1) throw InvalidArgument("block dimension must be positive");
  const double a = -boost::math::quantile(boost::math::normal(), target / 2.0);
  const double m = dim;
  return (1.0 - 1.0 / m) * std::sqrt(2.0 * std::numbers::pi) * std::exp(a * a / 2.0) / (2.0 * a) +
         1.0 / (m * target * (1.0 - target));
}

AdaptiveScale rm_adapt(AdaptiveScale scale, bool accepted, double target) {
  const double c = garthwaite_constant(target, scale.dim);
  ++scale.step;
  const double gain = c / std::pow(scale.offset + static_cast<double>(scale.step), scale.decay);
  scale.log_sd += gain * ((accepted ? 1.0 : 0.0) - target);
  return scale;
}

RunningMoments::RunningMoments(int dim) : mean_(Eigen::VectorXd::Zero(dim)), m2_(Eigen::MatrixXd::Zero(dim, dim)) {}

void RunningMoments::add(const Eigen::VectorXd& x) {
  ++n_;
  const Eigen::VectorXd d = x - mean_;
  mean_ += d / static_cast<double>(n_);
  m2_ += d * (x - mean_).transpose();
}

Eigen::MatrixXd RunningMoments::covariance() const {
  if (n_ < 2) return Eigen::MatrixXd::Zero(mean_.size(), mean_.size());
  const Eigen::MatrixXd c = m2_ / static_cast<double>(n_ - 1);
  return 0.5 * (c + c.transpose());
}

RandomWalkBlock::RandomWalkBlock(const Eigen::MatrixXd& shape, double target) : target_(target) {
  set_shape(shape);
  scale_.dim = static_cast<int>(shape.rows());
  scale_.log_sd = std::log(2.38 / std::sqrt(static_cast<double>(scale_.dim)));
}

void RandomWalkBlock::set_shape(const Eigen::MatrixXd& shape) {
  Eigen::LLT<Eigen::MatrixXd> llt(shape);
  if (llt.info() != Eigen::Success) throw NumericalError("proposal covariance is not positive definite");
  shape_ = shape;
  chol_ = llt.matrixL();
}

Eigen::VectorXd RandomWalkBlock::propose(const Eigen::VectorXd& x, Rng& rng) const {
  Eigen::VectorXd z(x.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = std_normal(rng);
  return x + scale_.sd() * (chol_ * z);
}

void RandomWalkBlock::record(bool accepted, bool adapt) {
  ++proposed_;
  if (accepted) ++accepted_;
  if (adapt) scale_ = rm_adapt(scale_, accepted, target_);
}

double RandomWalkBlock::acceptance_rate() const {
  return proposed_ > 0 ? static_cast<double>(accepted_) / static_cast<double>(proposed_) : 0.0;
}

void RandomWalkBlock::reset_counts() {
  accepted_ = 0;
  proposed_ = 0;
}

Eigen::MatrixXd numeric_hessian(const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& x) {
  const Eigen::Index n = x.size();
  Eigen::VectorXd h(n);
  for (Eigen::Index i = 0; i < n; ++i) h(i) = 1e-3 * (1.0 + std::abs(x(i)));
  const double f0 = f(x);
  Eigen::MatrixXd H(n, n);
  auto at = [&](Eigen::Index i, double si, Eigen::Index j, double sj) {
    Eigen::VectorXd y = x;
    y(i) += si * h(i);
    y(j) += sj * h(j);
    return f(y);
  };
  for (Eigen::Index i = 0; i < n; ++i) {
    H(i, i) = (at(i, 1, i, 0) - 2.0 * f0 + at(i, -1, i, 0)) / (h(i) * h(i));
    for (Eigen::Index j = 0; j < i; ++j) {
      const double v = (at(i, 1, j, 1) - at(i, 1, j, -1) - at(i, -1, j, 1) + at(i, -1, j, -1)) / (4.0 * h(i) * h(j));
      H(i, j) = v;
      H(j, i) = v;
    }
  }
  return H;
}

Eigen::MatrixXd covariance_from_hessian(const Eigen::MatrixXd& hessian, double fallback_var) {
  const Eigen::MatrixXd a = -0.5 * (hessian + hessian.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
  Eigen::VectorXd inv = es.eigenvalues();
  for (Eigen::Index i = 0; i < inv.size(); ++i) {
    const double lam = std::isfinite(inv(i)) ? std::max(inv(i), 1.0 / fallback_var) : 1.0 / fallback_var;
    inv(i) = 1.0 / lam;
  }
  const Eigen::MatrixXd c = es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
  return 0.5 * (c + c.transpose());
}

Eigen::MatrixXd regularised_covariance(const Eigen::MatrixXd& cov, double ridge) {
  const double scale = std::max(cov.diagonal().maxCoeff(), 1e-300);
  return cov + ridge * scale * Eigen::MatrixXd::Identity(cov.rows(), cov.cols());
}

}  // namespace icjm
