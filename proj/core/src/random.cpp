#include "icjm/random.hpp"

#include <cmath>
#include <numbers>

#include "icjm/error.hpp"

namespace icjm {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
  std::uint64_t h = mix64(seed);
  for (auto k : keys) h = mix64(h ^ mix64(k + 0x632be59bd9b4e019ULL));
  return h;
}

Rng make_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
  return Rng(derive_seed(seed, keys));
}

double std_normal(Rng& rng) { return std::normal_distribution<double>(0.0, 1.0)(rng); }

double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

double gamma_draw(Rng& rng, double shape, double rate) {
  if (!(shape > 0.0) || !(rate > 0.0)) throw InvalidArgument("gamma_draw: shape and rate must be positive");
  return std::gamma_distribution<double>(shape, 1.0 / rate)(rng);
}

double student_t_draw(Rng& rng, double df) { return std::student_t_distribution<double>(df)(rng); }

double truncated_normal_draw(Rng& rng, double mean, double sd, double lo, double hi) {
  if (!(lo < hi)) throw InvalidArgument("truncated_normal_draw: empty interval");
  for (int i = 0; i < 100000; ++i) {
    const double x = mean + sd * std_normal(rng);
    if (x >= lo && x <= hi) return x;
  }
  throw NumericalError("truncated_normal_draw: interval has negligible mass");
}

double gig_draw(Rng& rng, double lambda, double chi, double psi) {
  if (!(chi >= 0.0) || !(psi > 0.0) || lambda == 0.0)
    throw InvalidArgument("gig_draw: requires chi >= 0, psi > 0 and lambda != 0");
  // For lambda > 0 the density is a Gamma(lambda, psi/2) kernel times
  // exp(-chi/(2x)) <= 1, so rejection from that Gamma is exact. Negative
  // lambda is handled through the reciprocal, which is GIG(-lambda, psi, chi).
  if (lambda < 0.0) {
    if (!(chi > 0.0)) throw InvalidArgument("gig_draw: lambda < 0 requires chi > 0");
    return 1.0 / gig_draw(rng, -lambda, psi, chi);
  }
  for (int i = 0; i < 1000000; ++i) {
    const double x = gamma_draw(rng, lambda, 0.5 * psi);
    if (uniform01(rng) <= std::exp(-0.5 * chi / x)) return x;
  }
  throw NumericalError("gig_draw: rejection sampler did not accept");
}

Eigen::VectorXd mvn_draw_chol(Rng& rng, const Eigen::VectorXd& mean, const Eigen::MatrixXd& chol_lower) {
  Eigen::VectorXd z(mean.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = std_normal(rng);
  return mean + chol_lower.triangularView<Eigen::Lower>() * z;
}

Eigen::VectorXd mvn_draw(Rng& rng, const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov) {
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) throw NumericalError("mvn_draw: covariance is not positive definite");
  return mvn_draw_chol(rng, mean, llt.matrixL());
}

Eigen::MatrixXd inverse_wishart_draw(Rng& rng, double df, const Eigen::MatrixXd& scale) {
  const Eigen::Index p = scale.rows();
  if (!(df > static_cast<double>(p) - 1.0)) throw InvalidArgument("inverse_wishart_draw: df must exceed p - 1");
  Eigen::LLT<Eigen::MatrixXd> scale_llt(scale);
  if (scale_llt.info() != Eigen::Success) throw NumericalError("inverse_wishart_draw: singular scale matrix");
  const Eigen::MatrixXd precision_scale = scale_llt.solve(Eigen::MatrixXd::Identity(p, p));
  Eigen::LLT<Eigen::MatrixXd> llt(0.5 * (precision_scale + precision_scale.transpose()));
  if (llt.info() != Eigen::Success) throw NumericalError("inverse_wishart_draw: singular scale matrix");
  const Eigen::MatrixXd L = llt.matrixL();

  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(p, p);
  for (Eigen::Index i = 0; i < p; ++i) {
    A(i, i) = std::sqrt(2.0 * gamma_draw(rng, 0.5 * (df - static_cast<double>(i)), 1.0));
    for (Eigen::Index j = 0; j < i; ++j) A(i, j) = std_normal(rng);
  }
  const Eigen::MatrixXd LA = L * A;
  const Eigen::MatrixXd W = LA * LA.transpose();
  Eigen::LLT<Eigen::MatrixXd> w_llt(W);
  if (w_llt.info() != Eigen::Success) throw NumericalError("inverse_wishart_draw: degenerate Wishart draw");
  Eigen::MatrixXd out = w_llt.solve(Eigen::MatrixXd::Identity(p, p));
  return 0.5 * (out + out.transpose());
}

double log_normal_pdf(double x, double mean, double var) {
  const double r = x - mean;
  return -0.5 * (std::log(2.0 * std::numbers::pi * var) + r * r / var);
}

double log_gamma_pdf(double x, double shape, double rate) {
  if (!(x > 0.0)) return -INFINITY;
  return shape * std::log(rate) - std::lgamma(shape) + (shape - 1.0) * std::log(x) - rate * x;
}

double log_mvn_pdf(const Eigen::VectorXd& x, const Eigen::MatrixXd& cov) {
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) return -INFINITY;
  const Eigen::MatrixXd L = llt.matrixL();
  const Eigen::VectorXd z = L.triangularView<Eigen::Lower>().solve(x);
  const double logdet = 2.0 * L.diagonal().array().log().sum();
  return -0.5 * (static_cast<double>(x.size()) * std::log(2.0 * std::numbers::pi) + logdet + z.squaredNorm());
}

double log_multigamma(double a, int p) {
  double s = 0.25 * p * (p - 1) * std::log(std::numbers::pi);
  for (int j = 1; j <= p; ++j) s += std::lgamma(a + 0.5 * (1 - j));
  return s;
}

double log_inverse_wishart_pdf(const Eigen::MatrixXd& x, double df, const Eigen::MatrixXd& scale) {
  const auto p = static_cast<int>(x.rows());
  Eigen::LLT<Eigen::MatrixXd> xl(x), sl(scale);
  if (xl.info() != Eigen::Success || sl.info() != Eigen::Success) return -INFINITY;
  const Eigen::MatrixXd Lx = xl.matrixL(), Ls = sl.matrixL();
  const double logdet_x = 2.0 * Lx.diagonal().array().log().sum();
  const double logdet_s = 2.0 * Ls.diagonal().array().log().sum();
  const double trace = xl.solve(scale).trace();
  return 0.5 * df * logdet_s - 0.5 * df * p * std::log(2.0) - log_multigamma(0.5 * df, p) -
         0.5 * (df + p + 1.0) * logdet_x - 0.5 * trace;
}

}  // namespace icjm
