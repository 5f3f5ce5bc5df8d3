#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <initializer_list>
#include <random>

namespace icjm {

using Rng = std::mt19937_64;

/// splitmix64 finaliser.
std::uint64_t mix64(std::uint64_t x);

/// Seed for an independent stream identified by (seed, keys...).
std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> keys);
Rng make_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> keys = {});

double std_normal(Rng& rng);
double uniform01(Rng& rng);
/// Gamma with shape/rate.
double gamma_draw(Rng& rng, double shape, double rate);
/// Student t with df degrees of freedom, location 0, scale 1.
double student_t_draw(Rng& rng, double df);
double truncated_normal_draw(Rng& rng, double mean, double sd, double lo, double hi);

/// Generalised inverse Gaussian with density proportional to
/// x^(lambda-1) exp(-(chi/x + psi x)/2).
double gig_draw(Rng& rng, double lambda, double chi, double psi);

/// x ~ N(mean, L L') given the lower Cholesky factor L.
Eigen::VectorXd mvn_draw_chol(Rng& rng, const Eigen::VectorXd& mean, const Eigen::MatrixXd& chol_lower);
Eigen::VectorXd mvn_draw(Rng& rng, const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov);

/// Inverse-Wishart IW(df, scale) draw via the Bartlett decomposition of the
/// Wishart(df, scale^-1) precision. Throws NumericalError on a singular scale.
Eigen::MatrixXd inverse_wishart_draw(Rng& rng, double df, const Eigen::MatrixXd& scale);

// log densities
double log_normal_pdf(double x, double mean, double var);
double log_gamma_pdf(double x, double shape, double rate);
double log_mvn_pdf(const Eigen::VectorXd& x, const Eigen::MatrixXd& cov);
double log_inverse_wishart_pdf(const Eigen::MatrixXd& x, double df, const Eigen::MatrixXd& scale);
/// log of the multivariate gamma function Gamma_p(a).
double log_multigamma(double a, int p);

}  // namespace icjm
