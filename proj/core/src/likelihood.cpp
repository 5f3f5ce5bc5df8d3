#include "icjm/likelihood.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "icjm/error.hpp"
#include "icjm/random.hpp"

namespace icjm {

ModelBasis::ModelBasis(const ModelSpec& spec)
    : spec_(std::make_shared<const ModelSpec>(spec)), ncs_(spec.ncs_knots) {
  spec.validate();
}

Eigen::RowVector3d ModelBasis::ncs_row(double t) const {
  Eigen::RowVector3d r;
  ncs_.evaluate(t, std::span<double>(r.data(), 3));
  return r;
}

Eigen::RowVectorXd ModelBasis::h0_row(double t) const {
  const auto g = bspline_design(t, spec_->h0_knots, spec_->h0_degree);
  return Eigen::Map<const Eigen::RowVectorXd>(g.data(), static_cast<Eigen::Index>(g.size()));
}

TimeDesign ModelBasis::design(std::span<const double> times) const {
  const auto n = static_cast<Eigen::Index>(times.size());
  TimeDesign d;
  d.t.resize(n);
  d.G.resize(n, spec_->n_h0());
  d.C.resize(n, 3);
  d.dC.resize(n, 3);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double t = times[static_cast<std::size_t>(i)];
    d.t(i) = t;
    d.G.row(i) = h0_row(t);
    const auto c = ncs_row(t);
    d.C.row(i) = c;
    d.dC.row(i) = c - ncs_row(t - 1.0);
  }
  return d;
}

double transform_psa(double psa) { return std::log2(psa + 1.0); }

double mean_psa(double t, const Eigen::VectorXd& beta, const Eigen::VectorXd& u, double age, const ModelSpec& spec) {
  const auto c = ncs_design(t, spec.ncs_knots);
  double m = beta(0) + u(0) + beta(4) * (age - kAgeCentre);
  for (int p = 0; p < 3; ++p) m += (beta(p + 1) + u(p + 1)) * c[static_cast<std::size_t>(p)];
  return m;
}

double mean_cr_logit(double t, const Eigen::VectorXd& beta, const Eigen::VectorXd& u, const ModelSpec& spec) {
  if (spec.variant != Variant::ICJM2) throw InvalidArgument("mean_cr_logit: the core-ratio submodel needs ICJM2");
  return beta(5) + u(4) + (beta(6) + u(5)) * t + (beta(7) + u(6)) * t * t;
}

double log_student_t3(double r, double tau) {
  // Gamma(2) / (Gamma(3/2) sqrt(3 pi)) = 2 / (sqrt(pi) sqrt(3 pi))
  static const double log_norm = std::log(2.0 / (std::numbers::pi * std::sqrt(3.0)));
  return log_norm + 0.5 * std::log(tau) - 2.0 * std::log1p(tau * r * r / 3.0);
}

double loglik_psa_obs(const LongitudinalObservation& obs, double m, double tau_eps) {
  if (!(tau_eps > 0.0)) throw InvalidArgument("loglik_psa_obs: tau_eps must be positive");
  if (obs.kind != OutcomeKind::PSA) throw InvalidArgument("loglik_psa_obs: not a PSA observation");
  return log_student_t3(transform_psa(obs.value) - m, tau_eps);
}

namespace {

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double log_choose(int n, int k) {
  return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}

}  // namespace

double log_binomial_logit(int k, int n, double logit_p) {
  if (n < 0 || k < 0 || k > n) throw InvalidArgument("binomial: require 0 <= positives <= trials");
  // k log p + (n-k) log(1-p) = k eta - n softplus(eta)
  double kernel;
  if (std::isinf(logit_p)) {
    if ((logit_p < 0 && k == 0) || (logit_p > 0 && k == n)) return 0.0;
    return -INFINITY;
  }
  kernel = k * logit_p - n * softplus(logit_p);
  return log_choose(n, k) + kernel;
}

double loglik_cr_obs(const LongitudinalObservation& obs, double logit_p) {
  if (obs.kind != OutcomeKind::CoreRatio || !obs.trials) throw InvalidArgument("loglik_cr_obs: not a core-ratio observation");
  const double k = obs.value;
  if (k != std::floor(k)) throw InvalidArgument("loglik_cr_obs: positives must be an integer");
  return log_binomial_logit(static_cast<int>(k), *obs.trials, logit_p);
}

Eigen::VectorXd log_hazard_rows(Cause k, const TimeDesign& d, const ModelParameters& params, const Eigen::VectorXd& u,
                                const BaselineCovariates& cov, const ModelSpec& spec) {
  const int c = static_cast<int>(k);
  if (c < 0 || c >= kNumCauses) throw InvalidArgument("log_hazard: unknown cause");
  const auto& beta = params.beta;
  const auto& alpha = params.alpha[static_cast<std::size_t>(c)];
  const Eigen::Vector3d slope = beta.segment<3>(1) + u.segment<3>(1);
  const double level = beta(0) + u(0) + beta(4) * (cov.age - kAgeCentre);

  Eigen::VectorXd lh = d.G * params.gamma_h0[static_cast<std::size_t>(c)];
  lh.array() += params.gamma[static_cast<std::size_t>(c)] * std::log(cov.psa_density) + alpha(0) * level;
  lh.noalias() += d.C * (alpha(0) * slope);
  lh.noalias() += d.dC * (alpha(1) * slope);
  if (spec.variant == Variant::ICJM2) {
    const double a = alpha(2);
    lh.array() += a * ((beta(5) + u(4)) + (beta(6) + u(5)) * d.t.array() + (beta(7) + u(6)) * d.t.array().square());
  }
  return lh;
}

double log_hazard(Cause k, double t, const ModelParameters& params, const Eigen::VectorXd& u,
                  const BaselineCovariates& cov, const ModelSpec& spec) {
  const ModelBasis basis(spec);
  const double times[] = {t};
  return log_hazard_rows(k, basis.design(times), params, u, cov, spec)(0);
}

QuadratureRule cumulative_rule(double a, double b) {
  if (!(a <= b)) throw InvalidArgument("cumulative hazard: require a <= b");
  if (a == b) return {};
  const auto edges = hazard_panels(a, b);
  return composite_gk15(edges);
}

double cumulative_hazard(Cause k, double a, double b, const ModelParameters& params, const Eigen::VectorXd& u,
                         const BaselineCovariates& cov, const ModelSpec& spec) {
  if (!(a >= 0.0)) throw InvalidArgument("cumulative hazard: require a >= 0");
  const auto rule = cumulative_rule(a, b);
  if (rule.nodes.empty()) return 0.0;
  const ModelBasis basis(spec);
  const auto lh = log_hazard_rows(k, basis.design(rule.nodes), params, u, cov, spec);
  const Eigen::Map<const Eigen::VectorXd> w(rule.weights.data(), static_cast<Eigen::Index>(rule.weights.size()));
  return w.dot(lh.array().exp().matrix());
}

namespace {

Eigen::VectorXd to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

double integrate_hazard(const TimeDesign& d, const Eigen::VectorXd& w, Cause k, const ModelParameters& params,
                        const Eigen::VectorXd& u, const BaselineCovariates& cov, const ModelSpec& spec) {
  if (d.rows() == 0) return 0.0;
  return w.dot(log_hazard_rows(k, d, params, u, cov, spec).array().exp().matrix());
}

}  // namespace

PatientModel::PatientModel(const PatientRecord& patient, const ModelBasis& basis)
    : record_(std::make_shared<const PatientRecord>(patient)), spec_(basis.spec_ptr()) {
  validate_patient(patient);
  const auto& spec = *spec_;
  log_density_ = std::log(patient.covariates.psa_density);

  std::vector<double> psa_t, psa_v;
  std::vector<double> cr_t, cr_k, cr_n;
  for (const auto& o : patient.longitudinal) {
    if (o.kind == OutcomeKind::PSA) {
      psa_t.push_back(o.time);
      psa_v.push_back(transform_psa(o.value));
    } else if (spec.variant == Variant::ICJM2) {
      cr_t.push_back(o.time);
      cr_k.push_back(o.value);
      cr_n.push_back(*o.trials);
    }
  }
  psa_y_ = to_vector(psa_v);
  psa_z_.resize(static_cast<Eigen::Index>(psa_t.size()), 4);
  for (std::size_t i = 0; i < psa_t.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    psa_z_(r, 0) = 1.0;
    psa_z_.block<1, 3>(r, 1) = basis.ncs_row(psa_t[i]);
  }
  cr_t_ = to_vector(cr_t);
  cr_k_ = to_vector(cr_k);
  cr_n_ = to_vector(cr_n);
  cr_lchoose_.resize(cr_t_.size());
  for (Eigen::Index i = 0; i < cr_t_.size(); ++i)
    cr_lchoose_(i) = log_choose(static_cast<int>(cr_n_(i)), static_cast<int>(cr_k_(i)));

  const auto& ev = patient.event;
  const auto before = cumulative_rule(0.0, ev.t_prg_minus);
  before_ = basis.design(before.nodes);
  before_w_ = to_vector(before.weights);
  const auto after = cumulative_rule(ev.t_prg_minus, ev.t_upper);
  after_ = basis.design(after.nodes);
  after_w_ = to_vector(after.weights);

  if (ev.delta == 1) {
    const auto s = GaussKronrod15::nodes(ev.t_prg_minus, ev.t_upper);
    const auto w = GaussKronrod15::scaled_weights(ev.t_prg_minus, ev.t_upper);
    outer_ = basis.design(s);
    outer_w_ = Eigen::Map<const Eigen::VectorXd>(w.data(), 15);
    std::vector<double> in_nodes, in_w;
    for (double sj : s) {
      const auto x = GaussKronrod15::nodes(ev.t_prg_minus, sj);
      const auto v = GaussKronrod15::scaled_weights(ev.t_prg_minus, sj);
      in_nodes.insert(in_nodes.end(), x.begin(), x.end());
      in_w.insert(in_w.end(), v.begin(), v.end());
    }
    inner_ = basis.design(in_nodes);
    inner_w_ = to_vector(in_w);
  } else if (ev.delta == 2) {
    const double t[] = {ev.t_upper};
    event_ = basis.design(t);
  }
}

Eigen::MatrixXd PatientModel::u_information(const ModelParameters& params) const {
  const int nu = spec_->n_u();
  Eigen::MatrixXd info = Eigen::MatrixXd::Zero(nu, nu);
  // t3 with precision tau has Fisher information (nu + 1) / (nu + 3) tau = 2 tau / 3
  if (psa_z_.rows() > 0) info.topLeftCorner<4, 4>() = (2.0 * params.tau_eps / 3.0) * (psa_z_.transpose() * psa_z_);
  if (spec_->variant == Variant::ICJM2) {
    const auto& beta = params.beta;
    for (Eigen::Index i = 0; i < cr_t_.size(); ++i) {
      const double t = cr_t_(i);
      const Eigen::Vector3d z(1.0, t, t * t);
      const double p = 1.0 / (1.0 + std::exp(-(beta(5) + beta(6) * t + beta(7) * t * t)));
      info.bottomRightCorner<3, 3>() += cr_n_(i) * std::max(p * (1.0 - p), 1e-3) * (z * z.transpose());
    }
  }
  return info;
}

Eigen::MatrixXd PatientModel::psa_x() const {
  Eigen::MatrixXd x(psa_z_.rows(), 5);
  x.leftCols(4) = psa_z_;
  x.col(4).setConstant(record_->covariates.age - kAgeCentre);
  return x;
}

double PatientModel::loglik_longitudinal(const ModelParameters& params, const Eigen::VectorXd& u) const {
  const auto& beta = params.beta;
  double ll = 0.0;
  if (psa_y_.size() > 0) {
    const Eigen::Vector4d b(beta(0) + u(0), beta(1) + u(1), beta(2) + u(2), beta(3) + u(3));
    const double age_term = beta(4) * (record_->covariates.age - kAgeCentre);
    const Eigen::ArrayXd r = psa_y_.array() - (psa_z_ * b).array() - age_term;
    const double tau = params.tau_eps;
    static const double log_norm = std::log(2.0 / (std::numbers::pi * std::sqrt(3.0)));
    ll += static_cast<double>(r.size()) * (log_norm + 0.5 * std::log(tau)) -
          2.0 * (tau * r.square() / 3.0).log1p().sum();
  }
  if (spec_->variant == Variant::ICJM2 && cr_t_.size() > 0) {
    for (Eigen::Index i = 0; i < cr_t_.size(); ++i) {
      const double t = cr_t_(i);
      const double eta = beta(5) + u(4) + (beta(6) + u(5)) * t + (beta(7) + u(6)) * t * t;
      ll += cr_lchoose_(i) + cr_k_(i) * eta - cr_n_(i) * softplus(eta);
    }
  }
  return ll;
}

double PatientModel::loglik_survival_prg(const ModelParameters& params, const Eigen::VectorXd& u) const {
  const auto& cov = record_->covariates;
  const double h_before = integrate_hazard(before_, before_w_, Cause::Progression, params, u, cov, *spec_);
  if (record_->event.delta != 1) return -h_before;

  const Eigen::VectorXd lh_outer = log_hazard_rows(Cause::Progression, outer_, params, u, cov, *spec_);
  const Eigen::VectorXd h_inner = log_hazard_rows(Cause::Progression, inner_, params, u, cov, *spec_).array().exp();
  Eigen::Matrix<double, 15, 1> terms;
  for (int j = 0; j < 15; ++j) {
    const double H = inner_w_.segment<15>(15 * j).dot(h_inner.segment<15>(15 * j));
    terms(j) = std::log(outer_w_(j)) + lh_outer(j) - H;
  }
  const double mx = terms.maxCoeff();
  return -h_before + mx + std::log((terms.array() - mx).exp().sum());
}

double PatientModel::loglik_survival_trt(const ModelParameters& params, const Eigen::VectorXd& u) const {
  const auto& cov = record_->covariates;
  double ll = -integrate_hazard(before_, before_w_, Cause::Treatment, params, u, cov, *spec_) -
              integrate_hazard(after_, after_w_, Cause::Treatment, params, u, cov, *spec_);
  if (record_->event.delta == 2) ll += log_hazard_rows(Cause::Treatment, event_, params, u, cov, *spec_)(0);
  return ll;
}

double PatientModel::loglik_survival(const ModelParameters& params, const Eigen::VectorXd& u) const {
  return loglik_survival_prg(params, u) + loglik_survival_trt(params, u);
}

double PatientModel::loglik_joint(const ModelParameters& params, const Eigen::VectorXd& u) const {
  return loglik_longitudinal(params, u) + loglik_survival(params, u) + log_mvn_pdf(u, params.omega);
}

double loglik_survival(const PatientRecord& patient, const ModelParameters& params, const Eigen::VectorXd& u,
                       const ModelSpec& spec) {
  return PatientModel(patient, ModelBasis(spec)).loglik_survival(params, u);
}

double loglik_longitudinal(const PatientRecord& patient, const ModelParameters& params, const Eigen::VectorXd& u,
                           const ModelSpec& spec) {
  return PatientModel(patient, ModelBasis(spec)).loglik_longitudinal(params, u);
}

double loglik_joint(const PatientRecord& patient, const ModelParameters& params, const Eigen::VectorXd& u,
                    const ModelSpec& spec) {
  return PatientModel(patient, ModelBasis(spec)).loglik_joint(params, u);
}

double log_pspline_prior(const Eigen::VectorXd& g, double tau, const PenaltyMatrix& penalty) {
  if (!(tau > 0.0)) return -INFINITY;
  Eigen::LLT<Eigen::MatrixXd> llt(penalty.matrix);
  const Eigen::MatrixXd L = llt.matrixL();
  const double logdet = 2.0 * L.diagonal().array().log().sum();
  const double rho = penalty.rank;
  return 0.5 * rho * std::log(tau) + 0.5 * logdet - 0.5 * rho * std::log(2.0 * std::numbers::pi) -
         0.5 * tau * g.dot(penalty.matrix * g);
}

Eigen::MatrixXd omega_prior_scale(double tau_u, const ModelSpec& spec) {
  return (spec.priors.omega_scale / tau_u) * Eigen::MatrixXd::Identity(spec.n_u(), spec.n_u());
}

double log_prior(const ModelParameters& params, const ModelSpec& spec) {
  if (!params.satisfies_invariants(spec)) return -INFINITY;
  const auto& pr = spec.priors;
  const double v = pr.normal_variance;
  double lp = 0.0;
  for (Eigen::Index i = 0; i < params.beta.size(); ++i) lp += log_normal_pdf(params.beta(i), 0.0, v);
  lp += log_gamma_pdf(params.tau_eps, pr.tau_eps_shape, pr.tau_eps_rate);
  for (int k = 0; k < kNumCauses; ++k) {
    const auto c = static_cast<std::size_t>(k);
    lp += log_normal_pdf(params.gamma[c], 0.0, v);
    for (Eigen::Index i = 0; i < params.alpha[c].size(); ++i) lp += log_normal_pdf(params.alpha[c](i), 0.0, v);
    lp += log_gamma_pdf(params.tau_h0[c], pr.tau_h0_shape, pr.tau_h0_rate);
    lp += log_pspline_prior(params.gamma_h0[c], params.tau_h0[c], spec.penalty);
  }
  lp += log_inverse_wishart_pdf(params.omega, spec.omega_df(), omega_prior_scale(params.tau_u, spec));
  lp += log_gamma_pdf(params.tau_u, pr.tau_u_shape, pr.tau_u_rate);
  return lp;
}

}  // namespace icjm
