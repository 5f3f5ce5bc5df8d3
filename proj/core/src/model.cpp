#include "icjm/model.hpp"

#include <cmath>

#include "icjm/error.hpp"

namespace icjm {

std::string to_string(Variant v) { return v == Variant::ICJM1 ? "icjm1" : "icjm2"; }

Variant parse_variant(const std::string& s) {
  if (s == "icjm1" || s == "ICJM1" || s == "1") return Variant::ICJM1;
  if (s == "icjm2" || s == "ICJM2" || s == "2") return Variant::ICJM2;
  throw InvalidArgument("unknown model variant '" + s + "' (expected icjm1 or icjm2)");
}

std::string to_string(Cause k) { return k == Cause::Progression ? "prg" : "trt"; }

ModelSpec ModelSpec::make(Variant variant, KnotVector ncs_knots, KnotVector h0_knots, int penalty_order) {
  ModelSpec s;
  s.variant = variant;
  s.ncs_knots = std::move(ncs_knots);
  s.h0_knots = std::move(h0_knots);
  s.penalty = difference_penalty(s.n_h0(), penalty_order);
  s.validate();
  return s;
}

void ModelSpec::validate() const {
  ncs_knots.validate();
  h0_knots.validate();
  if (ncs_knots.interior.size() != 2)
    throw InvalidArgument("model spec: the natural spline needs exactly 2 interior knots (3 df)");
  if (penalty.dim != n_h0() || penalty.matrix.rows() != n_h0())
    throw InvalidArgument("model spec: penalty dimension does not match the baseline-hazard basis");
}

ModelParameters ModelParameters::zeros(const ModelSpec& spec) {
  ModelParameters p;
  p.beta = Eigen::VectorXd::Zero(spec.n_beta());
  p.omega = Eigen::MatrixXd::Identity(spec.n_u(), spec.n_u());
  for (int k = 0; k < kNumCauses; ++k) {
    p.gamma_h0[k] = Eigen::VectorXd::Zero(spec.n_h0());
    p.alpha[k] = Eigen::VectorXd::Zero(spec.n_alpha());
  }
  return p;
}

namespace {

bool all_finite(const Eigen::MatrixXd& m) { return m.allFinite(); }

std::string check(const ModelParameters& p, const ModelSpec& spec) {
  if (p.beta.size() != spec.n_beta()) return "beta has wrong length";
  if (p.omega.rows() != spec.n_u() || p.omega.cols() != spec.n_u()) return "Omega has wrong dimension";
  for (int k = 0; k < kNumCauses; ++k) {
    if (p.gamma_h0[k].size() != spec.n_h0()) return "gamma_h0 has wrong length";
    if (p.alpha[k].size() != spec.n_alpha()) return "alpha has wrong length";
    if (!all_finite(p.gamma_h0[k]) || !all_finite(p.alpha[k]) || !std::isfinite(p.gamma[k]))
      return "non-finite hazard coefficient";
    if (!(p.tau_h0[k] > 0.0) || !std::isfinite(p.tau_h0[k])) return "tau_h0 must be positive";
  }
  if (!all_finite(p.beta) || !all_finite(p.omega)) return "non-finite beta or Omega";
  if (!(p.tau_eps > 0.0) || !std::isfinite(p.tau_eps)) return "tau_eps must be positive";
  if (!(p.tau_u > 0.0) || !std::isfinite(p.tau_u)) return "tau_u must be positive";
  if ((p.omega - p.omega.transpose()).cwiseAbs().maxCoeff() > 1e-10 * (1.0 + p.omega.cwiseAbs().maxCoeff()))
    return "Omega must be symmetric";
  Eigen::LLT<Eigen::MatrixXd> llt(p.omega);
  if (llt.info() != Eigen::Success) return "Omega must be positive definite";
  return {};
}

}  // namespace

void ModelParameters::validate(const ModelSpec& spec) const {
  const auto msg = check(*this, spec);
  if (!msg.empty()) throw InvalidArgument("model parameters: " + msg);
}

bool ModelParameters::satisfies_invariants(const ModelSpec& spec) const { return check(*this, spec).empty(); }

std::vector<double> ModelParameters::flatten() const {
  std::vector<double> out(beta.data(), beta.data() + beta.size());
  out.push_back(tau_eps);
  for (Eigen::Index i = 0; i < omega.rows(); ++i)
    for (Eigen::Index j = i; j < omega.cols(); ++j) out.push_back(omega(i, j));
  out.push_back(tau_u);
  for (int k = 0; k < kNumCauses; ++k) {
    out.insert(out.end(), gamma_h0[k].data(), gamma_h0[k].data() + gamma_h0[k].size());
    out.push_back(tau_h0[k]);
    out.push_back(gamma[k]);
    out.insert(out.end(), alpha[k].data(), alpha[k].data() + alpha[k].size());
  }
  return out;
}

ModelParameters ModelParameters::unflatten(const ModelSpec& spec, const std::vector<double>& flat) {
  ModelParameters p = zeros(spec);
  std::size_t pos = 0;
  auto next = [&]() {
    if (pos >= flat.size()) throw InvalidArgument("parameter vector too short");
    return flat[pos++];
  };
  for (Eigen::Index i = 0; i < p.beta.size(); ++i) p.beta(i) = next();
  p.tau_eps = next();
  for (Eigen::Index i = 0; i < p.omega.rows(); ++i)
    for (Eigen::Index j = i; j < p.omega.cols(); ++j) p.omega(i, j) = p.omega(j, i) = next();
  p.tau_u = next();
  for (int k = 0; k < kNumCauses; ++k) {
    for (Eigen::Index i = 0; i < p.gamma_h0[k].size(); ++i) p.gamma_h0[k](i) = next();
    p.tau_h0[k] = next();
    p.gamma[k] = next();
    for (Eigen::Index i = 0; i < p.alpha[k].size(); ++i) p.alpha[k](i) = next();
  }
  if (pos != flat.size()) throw InvalidArgument("parameter vector too long");
  return p;
}

std::vector<std::string> parameter_names(const ModelSpec& spec) {
  std::vector<std::string> n;
  for (int i = 0; i < spec.n_beta(); ++i) n.push_back("beta" + std::to_string(i));
  n.push_back("tau_eps");
  for (int i = 0; i < spec.n_u(); ++i)
    for (int j = i; j < spec.n_u(); ++j) n.push_back("Omega" + std::to_string(i) + std::to_string(j));
  n.push_back("tau_u");
  static const char* alpha_names[] = {"alpha1_psa", "alpha2_psa", "alpha1_cr"};
  for (int k = 0; k < kNumCauses; ++k) {
    const auto c = to_string(static_cast<Cause>(k));
    for (int a = 0; a < spec.n_h0(); ++a) n.push_back("gamma_h0_" + c + "_" + std::to_string(a));
    n.push_back("tau_h0_" + c);
    n.push_back("gamma_" + c);
    for (int a = 0; a < spec.n_alpha(); ++a) n.push_back(std::string(alpha_names[a]) + "_" + c);
  }
  return n;
}

ModelParameters simulation_preset_parameters() {
  ModelParameters p;
  p.beta.resize(5);
  p.beta << 2.34, 0.28, 0.61, 0.95, 0.02;
  p.tau_eps = 47.40;
  p.omega.resize(4, 4);
  p.omega << 0.48, -0.04, -0.07, 0.02,
             -0.04, 0.77, 0.46, -0.04,
             -0.07, 0.46, 1.37, 1.36,
             0.02, -0.04, 1.36, 2.54;
  p.tau_u = 1.0;
  p.gamma_h0[0].resize(12);
  p.gamma_h0[0] << -6.78, -4.72, -2.84, -1.65, -1.54, -1.79, -1.85, -1.75, -1.85, -2.04, -2.18, -2.32;
  p.gamma_h0[1].resize(12);
  p.gamma_h0[1] << -5.76, -4.99, -4.43, -4.26, -4.36, -4.47, -4.60, -4.69, -4.78, -4.92, -5.08, -5.21;
  p.tau_h0 = {10.0, 10.0};
  p.gamma = {0.50, 0.23};
  p.alpha[0].resize(2);
  p.alpha[0] << 0.13, 3.01;
  p.alpha[1].resize(2);
  p.alpha[1] << 0.42, 2.62;
  return p;
}

KnotVector simulation_preset_ncs_knots() { return KnotVector{0.0, 9.6, {1.75, 4.0}}; }

KnotVector simulation_preset_h0_knots() {
  return KnotVector{0.0, 10.0, {1.1, 2.2, 3.3, 4.4, 5.6, 6.7, 7.8, 8.9}};
}

ModelSpec simulation_preset_spec() {
  return ModelSpec::make(Variant::ICJM1, simulation_preset_ncs_knots(), simulation_preset_h0_knots());
}

}  // namespace icjm
