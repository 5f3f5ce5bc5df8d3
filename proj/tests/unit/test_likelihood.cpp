#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "icjm/error.hpp"
#include "icjm/likelihood.hpp"
#include "icjm/random.hpp"

using namespace icjm;

namespace {

ModelSpec test_spec(Variant v = Variant::ICJM1) {
  return ModelSpec::make(v, KnotVector{0.0, 10.0, {3.2, 6.4}},
                         KnotVector{0.0, 11.0, {1.0, 2.0, 3.0, 3.5, 4.0, 5.0, 6.5, 8.0}});
}

ModelParameters reference_params(const ModelSpec& spec) {
  auto p = simulation_preset_parameters();
  if (spec.variant == Variant::ICJM2) {
    auto q = ModelParameters::zeros(spec);
    q.beta.head(5) = p.beta;
    q.beta.tail(3) << -2.09, -0.20, 0.04;
    q.omega.topLeftCorner(4, 4) = p.omega;
    q.omega.bottomRightCorner(3, 3) = 0.3 * Eigen::MatrixXd::Identity(3, 3);
    q.tau_eps = p.tau_eps;
    for (int k = 0; k < 2; ++k) {
      q.gamma_h0[k] = p.gamma_h0[k];
      q.gamma[k] = p.gamma[k];
      q.alpha[k].head(2) = p.alpha[k];
      q.alpha[k](2) = k == 0 ? 1.10 : 0.2;
    }
    return q;
  }
  return p;
}

ModelParameters constant_hazards(const ModelSpec& spec, double hp, double ht) {
  auto p = ModelParameters::zeros(spec);
  p.beta << 2.34, 0.28, 0.61, 0.95, 0.02;
  p.tau_eps = 40.0;
  p.gamma_h0[0].setConstant(std::log(hp));
  p.gamma_h0[1].setConstant(std::log(ht));
  return p;
}

PatientRecord patient(int delta, double tm, double tu) {
  PatientRecord p;
  p.patient_id = "x";
  p.covariates = {64.0, 0.15};
  p.event = {delta, tm, tu};
  for (double t = 0.0; t <= std::min(tu, 6.0); t += 0.5)
    p.longitudinal.push_back({"x", t, OutcomeKind::PSA, 5.0 + 0.4 * t + 0.3 * std::sin(3 * t), std::nullopt});
  return p;
}

Eigen::VectorXd some_u(int n) {
  Eigen::VectorXd u(n);
  for (int i = 0; i < n; ++i) u(i) = 0.1 * std::cos(1.0 + i);
  return u;
}

double trapezoid(const std::function<double(double)>& f, double a, double b, int n) {
  const double h = (b - a) / n;
  double s = 0.5 * (f(a) + f(b));
  for (int i = 1; i < n; ++i) s += f(a + i * h);
  return s * h;
}

}  // namespace

TEST(MeanPsa, BaselineAndAgeEffect) {
  const auto spec = test_spec();
  const auto p = reference_params(spec);
  const Eigen::VectorXd u0 = Eigen::VectorXd::Zero(4);
  const auto c = ncs_design(0.0, spec.ncs_knots);
  const double want = 2.34 + 0.28 * c[0] + 0.61 * c[1] + 0.95 * c[2];
  EXPECT_DOUBLE_EQ(mean_psa(0.0, p.beta, u0, 62.0, spec), want);
  EXPECT_NEAR(mean_psa(2.5, p.beta, u0, 63.0, spec) - mean_psa(2.5, p.beta, u0, 62.0, spec), 0.02, 1e-14);
  Eigen::VectorXd u = -p.beta.head(4);
  EXPECT_NEAR(mean_psa(4.2, p.beta, u, 62.0, spec), 0.0, 1e-14);
}

TEST(MeanCr, QuadraticLogit) {
  const auto spec = test_spec(Variant::ICJM2);
  const auto p = reference_params(spec);
  Eigen::VectorXd u = Eigen::VectorXd::Zero(7);
  EXPECT_NEAR(mean_cr_logit(5.0, p.beta, u, spec), -2.09, 1e-12);
  u(4) = 0.3;
  EXPECT_DOUBLE_EQ(mean_cr_logit(0.0, p.beta, u, spec), -2.09 + 0.3);
  u.setZero();
  const double vertex = 0.20 / (2 * 0.04);
  EXPECT_NEAR(mean_cr_logit(vertex - 1.3, p.beta, u, spec), mean_cr_logit(vertex + 1.3, p.beta, u, spec), 1e-12);
  EXPECT_THROW(mean_cr_logit(1.0, p.beta, u, test_spec()), InvalidArgument);
}

TEST(PsaObservation, StudentTDensity) {
  auto direct = [](double r, double tau) {
    const double nu = 3.0, s = 1.0 / std::sqrt(tau);
    return std::tgamma((nu + 1) / 2) / (std::tgamma(nu / 2) * std::sqrt(nu * std::numbers::pi) * s) *
           std::pow(1 + (r / s) * (r / s) / nu, -(nu + 1) / 2);
  };
  LongitudinalObservation o{"x", 1.0, OutcomeKind::PSA, 3.0, std::nullopt};
  const double y = std::log2(4.0);
  EXPECT_NEAR(loglik_psa_obs(o, y, 47.4), std::log(direct(0.0, 47.4)), 1e-12);
  EXPECT_NEAR(loglik_psa_obs(o, y - 0.5, 47.4), std::log(direct(0.5, 47.4)), 1e-12);
  const double area = trapezoid([](double r) { return std::exp(log_student_t3(r, 47.4)); }, -400.0, 400.0, 2000000);
  EXPECT_NEAR(area, 1.0, 1e-4);
  EXPECT_THROW(loglik_psa_obs(o, y, 0.0), InvalidArgument);
}

TEST(CoreRatioObservation, Binomial) {
  LongitudinalObservation o{"x", 1.0, OutcomeKind::CoreRatio, 3.0, 12};
  const double p = 0.25;
  const double want = std::log(220.0) + 3 * std::log(0.25) + 9 * std::log(0.75);
  EXPECT_NEAR(loglik_cr_obs(o, std::log(p / (1 - p))), want, 1e-12);
  double total = 0.0;
  for (int k = 0; k <= 12; ++k) total += std::exp(log_binomial_logit(k, 12, std::log(0.3 / 0.7)));
  EXPECT_NEAR(total, 1.0, 1e-13);
  EXPECT_NEAR(log_binomial_logit(0, 12, -60.0), 0.0, 1e-12);
  EXPECT_EQ(log_binomial_logit(0, 12, -INFINITY), 0.0);
  o.value = 13;
  EXPECT_THROW(loglik_cr_obs(o, 0.0), InvalidArgument);
}

TEST(LogHazard, ZeroAssociationIsBaseline) {
  const auto spec = test_spec();
  auto p = reference_params(spec);
  p.alpha[0].setZero();
  p.gamma[0] = 0.0;
  const BaselineCovariates cov{70.0, 0.3};
  for (double t : {0.0, 0.4, 2.2, 7.9}) {
    const auto g = bspline_design(t, spec.h0_knots, 3);
    double want = 0.0;
    for (int a = 0; a < 12; ++a) want += g[static_cast<std::size_t>(a)] * p.gamma_h0[0](a);
    EXPECT_NEAR(log_hazard(Cause::Progression, t, p, some_u(4), cov, spec), want, 1e-13);
  }
}

TEST(LogHazard, TermByTermRecomputation) {
  for (auto variant : {Variant::ICJM1, Variant::ICJM2}) {
    const auto spec = test_spec(variant);
    const auto p = reference_params(spec);
    const auto u = some_u(spec.n_u());
    const BaselineCovariates cov{58.0, 0.09};
    for (int k = 0; k < 2; ++k) {
      for (double t : {0.3, 0.99, 1.7, 5.0}) {
        const auto g = bspline_design(t, spec.h0_knots, 3);
        double h0 = 0.0;
        for (int a = 0; a < 12; ++a) h0 += g[static_cast<std::size_t>(a)] * p.gamma_h0[k](a);
        const double m = mean_psa(t, p.beta, u, cov.age, spec);
        const double m_lag = mean_psa(t - 1.0, p.beta, u, cov.age, spec);
        double want = h0 + p.gamma[k] * std::log(cov.psa_density) + p.alpha[k](0) * m + p.alpha[k](1) * (m - m_lag);
        if (variant == Variant::ICJM2) want += p.alpha[k](2) * mean_cr_logit(t, p.beta, u, spec);
        EXPECT_NEAR(log_hazard(static_cast<Cause>(k), t, p, u, cov, spec), want, 1e-12);
      }
    }
  }
}

TEST(LogHazard, LinearInMeanShift) {
  const auto spec = test_spec();
  const auto p = reference_params(spec);
  auto u = some_u(4);
  const BaselineCovariates cov{62.0, 0.12};
  const double a = log_hazard(Cause::Treatment, 2.0, p, u, cov, spec);
  u(0) += 0.7;
  const double b = log_hazard(Cause::Treatment, 2.0, p, u, cov, spec);
  EXPECT_NEAR(b - a, p.alpha[1](0) * 0.7, 1e-12);
}

TEST(LogHazard, MonotoneInAlpha1) {
  const auto spec = test_spec();
  auto p = reference_params(spec);
  const BaselineCovariates cov{62.0, 0.12};
  const auto u = some_u(4);
  for (double t : {0.5, 3.0, 8.0}) {
    ASSERT_GT(mean_psa(t, p.beta, u, cov.age, spec), 0.0);
    const double a = log_hazard(Cause::Progression, t, p, u, cov, spec);
    p.alpha[0](0) += 0.05;
    EXPECT_GT(log_hazard(Cause::Progression, t, p, u, cov, spec), a);
    p.alpha[0](0) -= 0.05;
  }
}

TEST(CumulativeHazard, EdgeCasesAndConstant) {
  const auto spec = test_spec();
  const auto p = constant_hazards(spec, 0.3, 0.1);
  const auto u = Eigen::VectorXd::Zero(4);
  const BaselineCovariates cov{62.0, 0.12};
  EXPECT_EQ(cumulative_hazard(Cause::Progression, 1.5, 1.5, p, u, cov, spec), 0.0);
  EXPECT_NEAR(cumulative_hazard(Cause::Progression, 0.0, 2.0, p, u, cov, spec), 0.6, 1e-10);
  EXPECT_NEAR(cumulative_hazard(Cause::Treatment, 0.5, 9.7, p, u, cov, spec), 0.1 * 9.2, 1e-10);
  EXPECT_THROW(cumulative_hazard(Cause::Progression, 2.0, 1.0, p, u, cov, spec), InvalidArgument);
}

TEST(CumulativeHazard, MatchesFineTrapezoid) {
  const auto spec = test_spec();
  const auto p = reference_params(spec);
  const auto u = some_u(4);
  const BaselineCovariates cov{66.0, 0.2};
  const ModelBasis basis(spec);
  for (int k = 0; k < 2; ++k) {
    const auto cause = static_cast<Cause>(k);
    const int n = 100000;
    std::vector<double> grid(n + 1);
    for (int i = 0; i <= n; ++i) grid[static_cast<std::size_t>(i)] = 4.0 * i / n;
    const Eigen::VectorXd h = log_hazard_rows(cause, basis.design(grid), p, u, cov, spec).array().exp();
    const double trap = (h.sum() - 0.5 * (h(0) + h(n))) * 4.0 / n;
    const double gk = cumulative_hazard(cause, 0.0, 4.0, p, u, cov, spec);
    EXPECT_LT(std::abs(gk - trap) / trap, 1e-6);
  }
}

TEST(SurvivalLikelihood, ZeroHazardsGiveZero) {
  const auto spec = test_spec();
  auto p = constant_hazards(spec, 1.0, 1.0);
  p.gamma_h0[0].setConstant(-800.0);
  p.gamma_h0[1].setConstant(-800.0);
  EXPECT_NEAR(loglik_survival(patient(0, 4.0, 8.0), p, Eigen::VectorXd::Zero(4), spec), 0.0, 1e-300);
}

TEST(SurvivalLikelihood, ConstantHazardClosedForms) {
  const auto spec = test_spec();
  const double hp = 0.3, ht = 0.1;
  const auto p = constant_hazards(spec, hp, ht);
  const auto u = some_u(4);
  {
    const double a = 2.0, b = 4.1;
    const double want = std::log(std::exp(-hp * a) - std::exp(-hp * b)) - ht * b;
    EXPECT_NEAR(loglik_survival(patient(1, a, b), p, u, spec), want, 1e-8);
  }
  {
    const double want = -hp * 4.0 - ht * 8.5;
    EXPECT_NEAR(loglik_survival(patient(0, 4.0, 8.5), p, u, spec), want, 1e-10);
  }
  {
    const double t = 3.0;
    const double want = std::log(ht) - hp * t - ht * t;
    EXPECT_NEAR(loglik_survival(patient(2, t, t), p, u, spec), want, 1e-10);
  }
}

TEST(SurvivalLikelihood, TreatmentAtLastBiopsy) {
  const auto spec = test_spec();
  const auto p = reference_params(spec);
  const auto u = some_u(4);
  const auto pr = patient(2, 4.0, 4.0);
  const double want = log_hazard(Cause::Treatment, 4.0, p, u, pr.covariates, spec) -
                      cumulative_hazard(Cause::Progression, 0.0, 4.0, p, u, pr.covariates, spec) -
                      cumulative_hazard(Cause::Treatment, 0.0, 4.0, p, u, pr.covariates, spec);
  EXPECT_NEAR(loglik_survival(pr, p, u, spec), want, 1e-12);
}

TEST(SurvivalLikelihood, SurvivalProbabilitiesBounded) {
  const auto spec = test_spec();
  const auto p = reference_params(spec);
  const ModelBasis basis(spec);
  for (int delta : {0, 1}) {
    const PatientModel pm(patient(delta, 2.0, 4.0), basis);
    for (int i = 0; i < 5; ++i) {
      const auto u = some_u(4) * (i - 2);
      const double s = std::exp(pm.loglik_survival(p, u));
      EXPECT_GT(s, 0.0);
      EXPECT_LE(s, 1.0);
    }
  }
}

TEST(JointLikelihood, ComponentwiseAndAdditive) {
  const auto spec = test_spec(Variant::ICJM2);
  const auto p = reference_params(spec);
  const auto u = some_u(7);
  auto pr = patient(1, 2.0, 4.0);
  pr.longitudinal.push_back({"x", 2.0, OutcomeKind::CoreRatio, 2.0, 12});
  double pieces = 0.0;
  for (const auto& o : pr.longitudinal) {
    if (o.kind == OutcomeKind::PSA)
      pieces += loglik_psa_obs(o, mean_psa(o.time, p.beta, u, pr.covariates.age, spec), p.tau_eps);
    else
      pieces += loglik_cr_obs(o, mean_cr_logit(o.time, p.beta, u, spec));
  }
  pieces += loglik_survival(pr, p, u, spec) + log_mvn_pdf(u, p.omega);
  const double full = loglik_joint(pr, p, u, spec);
  EXPECT_NEAR(full, pieces, 1e-12 * std::abs(full));

  auto fewer = pr;
  const auto removed = fewer.longitudinal[3];
  fewer.longitudinal.erase(fewer.longitudinal.begin() + 3);
  const double diff = full - loglik_joint(fewer, p, u, spec);
  EXPECT_NEAR(diff, loglik_psa_obs(removed, mean_psa(removed.time, p.beta, u, pr.covariates.age, spec), p.tau_eps),
              1e-10);

  auto empty = pr;
  empty.longitudinal.clear();
  EXPECT_NEAR(loglik_joint(empty, p, u, spec), loglik_survival(empty, p, u, spec) + log_mvn_pdf(u, p.omega), 1e-12);
}

TEST(JointLikelihood, InvariantToObservationOrder) {
  const auto spec = test_spec();
  const auto p = reference_params(spec);
  auto pr = patient(0, 4.0, 7.0);
  const double a = loglik_joint(pr, p, some_u(4), spec);
  std::reverse(pr.longitudinal.begin(), pr.longitudinal.end());
  EXPECT_NEAR(loglik_joint(pr, p, some_u(4), spec), a, 1e-10);
}

TEST(JointLikelihood, SmoothInParameters) {
  // central differences at h and h/2 agree to the Richardson order
  const auto spec = test_spec();
  const auto base = reference_params(spec);
  const ModelBasis basis(spec);
  const PatientModel pm(patient(1, 2.0, 4.0), basis);
  const auto u = some_u(4);
  auto flat = base.flatten();
  for (std::size_t i : {0ul, 3ul, 5ul, flat.size() - 1, flat.size() - 2, flat.size() - 8}) {
    auto f = [&](double x) {
      auto v = flat;
      v[i] = x;
      return pm.loglik_joint(ModelParameters::unflatten(spec, v), u);
    };
    const double x = flat[i], h = 1e-3;
    const double d1 = (f(x + h) - f(x - h)) / (2 * h);
    const double d2 = (f(x + h / 2) - f(x - h / 2)) / h;
    EXPECT_NEAR(d1, d2, 1e-4 * std::max(1.0, std::abs(d2))) << i;
  }
}

TEST(Prior, NormalAdditivity) {
  const auto spec = test_spec();
  auto p = reference_params(spec);
  const double a = log_prior(p, spec);
  ASSERT_TRUE(std::isfinite(a));
  p.beta(2) += 0.8;
  EXPECT_NEAR(log_prior(p, spec) - a, log_normal_pdf(0.61 + 0.8, 0, 100) - log_normal_pdf(0.61, 0, 100), 1e-12);
}

TEST(Prior, PSplineConstantCoefficients) {
  const auto spec = test_spec();
  const Eigen::VectorXd g = Eigen::VectorXd::Constant(12, 1.7);
  const double a = log_pspline_prior(g, 2.0, spec.penalty);
  const double b = log_pspline_prior(g, 5.0, spec.penalty);
  // only the ridge contributes to the quadratic form
  const double ridge = 0.5 * 1e-6 * g.squaredNorm();
  EXPECT_NEAR(b - a, 0.5 * spec.penalty.rank * std::log(5.0 / 2.0) - (5.0 - 2.0) * ridge, 1e-12);
}

TEST(Prior, InverseWishartDensityOracle) {
  const auto spec = test_spec();
  auto p = reference_params(spec);
  p.tau_u = 0.7;
  const int dim = 4;
  const double nu = spec.omega_df();
  const Eigen::MatrixXd psi = (4.0 / p.tau_u) * Eigen::MatrixXd::Identity(dim, dim);
  // the IW mode Psi/(nu + p + 1); the mean Psi/(nu - p - 1) is undefined for nu = p + 1
  const Eigen::MatrixXd omega = psi / (nu + dim + 1);
  double lmg = dim * (dim - 1) / 4.0 * std::log(std::numbers::pi);
  for (int j = 0; j < dim; ++j) lmg += std::lgamma(nu / 2 - j / 2.0);
  const double direct = nu / 2 * std::log(psi.determinant()) - nu * dim / 2 * std::log(2.0) - lmg -
                        (nu + dim + 1) / 2 * std::log(omega.determinant()) -
                        0.5 * (psi * omega.inverse()).trace();
  EXPECT_NEAR(log_inverse_wishart_pdf(omega, nu, psi), direct, 1e-10);

  p.omega = omega;
  const double with = log_prior(p, spec);
  p.omega = 1.1 * omega;
  EXPECT_NEAR(log_prior(p, spec) - with,
              log_inverse_wishart_pdf(1.1 * omega, nu, psi) - log_inverse_wishart_pdf(omega, nu, psi), 1e-10);
}

TEST(Prior, OutOfSupportIsMinusInfinity) {
  const auto spec = test_spec();
  auto p = reference_params(spec);
  p.tau_eps = -1.0;
  EXPECT_EQ(log_prior(p, spec), -INFINITY);
  p = reference_params(spec);
  p.omega(0, 0) = -1.0;
  EXPECT_EQ(log_prior(p, spec), -INFINITY);
}
