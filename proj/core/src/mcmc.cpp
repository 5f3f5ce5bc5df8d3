#include "icjm/mcmc.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <mutex>
#include <nlohmann/json.hpp>
#include <numeric>
#include <thread>

#include "icjm/adaptive.hpp"
#include "icjm/error.hpp"
#include "icjm/likelihood.hpp"
#include "icjm/serialize.hpp"
#include "icjm/spline.hpp"

namespace icjm {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

double sum_log_normal(const VectorXd& x, double var) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) s += log_normal_pdf(x(i), 0.0, var);
  return s;
}

bool mh_accept(Rng& rng, double log_ratio) {
  if (std::isnan(log_ratio)) return false;
  return log_ratio >= 0.0 || std::log(uniform01(rng)) < log_ratio;
}

// Hazard block of cause k: [gamma_h0; gamma; alpha].
VectorXd pack_hazard(const ModelParameters& p, int k) {
  const auto c = static_cast<std::size_t>(k);
  VectorXd x(p.gamma_h0[c].size() + 1 + p.alpha[c].size());
  x << p.gamma_h0[c], p.gamma[c], p.alpha[c];
  return x;
}

void unpack_hazard(ModelParameters& p, int k, const VectorXd& x) {
  const auto c = static_cast<std::size_t>(k);
  const Eigen::Index a = p.gamma_h0[c].size();
  p.gamma_h0[c] = x.head(a);
  p.gamma[c] = x(a);
  p.alpha[c] = x.tail(p.alpha[c].size());
}

// beta positions that pair with u(j) in the longitudinal means
std::vector<int> shift_beta_index(const ModelSpec& spec) {
  if (spec.variant == Variant::ICJM1) return {0, 1, 2, 3};
  return {0, 1, 2, 3, 5, 6, 7};
}

struct Initial {
  ModelParameters params;
  std::vector<VectorXd> u;
};

Initial initial_state(const std::vector<PatientModel>& pm, const ModelSpec& spec) {
  Initial init;
  auto& p = init.params;
  p = ModelParameters::zeros(spec);

  // pooled least squares of transformed PSA on [1, C(t), age - 62]
  Eigen::Index n_obs = 0;
  for (const auto& m : pm) n_obs += m.psa_y().size();
  if (n_obs < 5) throw DataError("fit: at least five PSA observations are required");
  MatrixXd X(n_obs, 5);
  VectorXd y(n_obs);
  Eigen::Index r = 0;
  for (const auto& m : pm) {
    const auto n = m.psa_y().size();
    X.middleRows(r, n) = m.psa_x();
    y.segment(r, n) = m.psa_y();
    r += n;
  }
  const VectorXd b = X.colPivHouseholderQr().solve(y);
  p.beta.head(5) = b;
  const double rss = (y - X * b).squaredNorm();
  p.tau_eps = static_cast<double>(n_obs) / std::max(rss, 1e-8);

  if (spec.variant == Variant::ICJM2) {
    std::vector<std::array<double, 3>> rows;
    std::vector<double> logits;
    for (const auto& m : pm)
      for (const auto& o : m.record().longitudinal)
        if (o.kind == OutcomeKind::CoreRatio) {
          rows.push_back({1.0, o.time, o.time * o.time});
          logits.push_back(std::log((o.value + 0.5) / (*o.trials - o.value + 0.5)));
        }
    if (rows.size() >= 3) {
      MatrixXd Xc(static_cast<Eigen::Index>(rows.size()), 3);
      VectorXd yc(static_cast<Eigen::Index>(rows.size()));
      for (std::size_t i = 0; i < rows.size(); ++i) {
        for (int j = 0; j < 3; ++j) Xc(static_cast<Eigen::Index>(i), j) = rows[i][static_cast<std::size_t>(j)];
        yc(static_cast<Eigen::Index>(i)) = logits[i];
      }
      p.beta.tail(3) = Xc.colPivHouseholderQr().solve(yc);
    }
  }

  // constant baseline hazards at the crude cause-specific rates
  double exposure = 0.0;
  std::array<double, kNumCauses> events{0.5, 0.5};
  for (const auto& m : pm) {
    const auto& ev = m.record().event;
    exposure += ev.delta == 1 ? 0.5 * (ev.t_prg_minus + ev.t_upper) : ev.t_upper;
    if (ev.delta == 1) events[0] += 1.0;
    if (ev.delta == 2) events[1] += 1.0;
  }
  for (int k = 0; k < kNumCauses; ++k) {
    const auto c = static_cast<std::size_t>(k);
    p.gamma_h0[c].setConstant(std::log(events[c] / std::max(exposure, 1e-8)));
    p.tau_h0[c] = spec.priors.tau_h0_shape / spec.priors.tau_h0_rate;
  }
  p.omega = MatrixXd::Identity(spec.n_u(), spec.n_u());
  p.tau_u = 1.0;
  init.u.assign(pm.size(), VectorXd::Zero(spec.n_u()));
  return init;
}

class Chain {
 public:
  Chain(const std::vector<PatientModel>& pm, const ModelSpec& spec, const MCMCConfig& cfg, int id,
        const Initial& init)
      : pm_(pm),
        spec_(spec),
        cfg_(cfg),
        id_(id),
        rng_(make_rng(cfg.seed, {static_cast<std::uint64_t>(id), 0})),
        params_(init.params),
        u_(init.u) {
    const auto n = pm_.size();
    for (std::size_t i = 0; i < n; ++i) u_rng_.push_back(make_rng(cfg.seed, {static_cast<std::uint64_t>(id), 1, i}));
    jitter();
    long_.resize(n);
    for (auto& s : surv_) s.resize(n);
    for (std::size_t i = 0; i < n; ++i) refresh_patient(i, params_, u_[i]);
    const double lp = total_log_posterior();
    if (!std::isfinite(lp))
      throw NumericalError("fit: non-finite log-posterior at the initial values of chain " + std::to_string(id));
    init_blocks();
  }

  void run(std::vector<ModelParameters>& out, std::vector<BlockAcceptance>& acc, const ProgressFn& progress) {
    int last_global_accept = 0;
    for (int it = 0; it < cfg_.n_iterations; ++it) {
      const bool adapt = it < cfg_.n_burnin;
      bool any = false;
      for (int s = 0; s < cfg_.beta_steps; ++s) any |= update_beta(adapt);
      for (int k = 0; k < kNumCauses; ++k)
        for (int s = 0; s < cfg_.hazard_steps; ++s) any |= update_hazard(k, adapt);
      any |= update_tau_eps(adapt);
      update_u(adapt);
      shift_move();
      for (int k = 0; k < kNumCauses; ++k) {
        const auto c = static_cast<std::size_t>(k);
        params_.tau_h0[c] = gibbs_tau_h0(rng_, params_.gamma_h0[c], spec_.penalty, spec_.priors);
      }
      params_.omega = gibbs_omega(rng_, u_, params_.tau_u, spec_);
      params_.tau_u = gibbs_tau_u(rng_, params_.omega, spec_);

      if (any) last_global_accept = it;
      if (it - last_global_accept >= cfg_.divergence_window)
        throw NumericalError("fit: chain " + std::to_string(id_) + " diverged (no proposal accepted in " +
                             std::to_string(cfg_.divergence_window) + " sweeps)");

      if (adapt) adapt_shapes(it);
      if (it + 1 == cfg_.n_burnin) reset_counts();
      if (it >= cfg_.n_burnin && (it - cfg_.n_burnin + 1) % cfg_.thinning == 0) out.push_back(params_);
      if (progress) progress(id_, it);
    }
    auto add = [&](const std::string& name, double rate, double target) {
      acc.push_back({name, id_, rate, target});
    };
    add("beta", beta_.acceptance_rate(), beta_.target());
    add("hazard_prg", hazard_[0].acceptance_rate(), hazard_[0].target());
    add("hazard_trt", hazard_[1].acceptance_rate(), hazard_[1].target());
    add("tau_eps", tau_eps_.acceptance_rate(), tau_eps_.target());
    add("u", u_proposed_ > 0 ? static_cast<double>(u_accepted_) / static_cast<double>(u_proposed_) : 0.0,
        cfg_.target_vector);
  }

 private:
  void jitter() {
    if (cfg_.init_jitter <= 0.0) return;
    auto rng = make_rng(cfg_.seed, {static_cast<std::uint64_t>(id_), 2});
    const double s = cfg_.init_jitter;
    for (Eigen::Index j = 0; j < params_.beta.size(); ++j) params_.beta(j) += s * std_normal(rng);
    for (int k = 0; k < kNumCauses; ++k) {
      const auto c = static_cast<std::size_t>(k);
      params_.gamma_h0[c].array() += s * std_normal(rng);
      params_.gamma[c] += s * std_normal(rng);
      for (Eigen::Index j = 0; j < params_.alpha[c].size(); ++j) params_.alpha[c](j) += s * std_normal(rng);
    }
  }

  void refresh_patient(std::size_t i, const ModelParameters& p, const VectorXd& u) {
    long_[i] = pm_[i].loglik_longitudinal(p, u);
    surv_[0][i] = pm_[i].loglik_survival_prg(p, u);
    surv_[1][i] = pm_[i].loglik_survival_trt(p, u);
  }

  double total_log_posterior() const {
    double lp = log_prior(params_, spec_);
    for (std::size_t i = 0; i < pm_.size(); ++i)
      lp += long_[i] + surv_[0][i] + surv_[1][i] + log_mvn_pdf(u_[i], params_.omega);
    return lp;
  }

  double beta_target(const VectorXd& beta) const {
    ModelParameters p = params_;
    p.beta = beta;
    double lp = sum_log_normal(beta, spec_.priors.normal_variance);
    for (std::size_t i = 0; i < pm_.size(); ++i)
      lp += pm_[i].loglik_longitudinal(p, u_[i]) + pm_[i].loglik_survival(p, u_[i]);
    return lp;
  }

  double hazard_prior(int k, const ModelParameters& p) const {
    const auto c = static_cast<std::size_t>(k);
    const double v = spec_.priors.normal_variance;
    return log_pspline_prior(p.gamma_h0[c], p.tau_h0[c], spec_.penalty) + log_normal_pdf(p.gamma[c], 0.0, v) +
           sum_log_normal(p.alpha[c], v);
  }

  double survival_k(int k, std::size_t i, const ModelParameters& p) const {
    return k == 0 ? pm_[i].loglik_survival_prg(p, u_[i]) : pm_[i].loglik_survival_trt(p, u_[i]);
  }

  double hazard_target(int k, const VectorXd& x) const {
    ModelParameters p = params_;
    unpack_hazard(p, k, x);
    double lp = hazard_prior(k, p);
    for (std::size_t i = 0; i < pm_.size(); ++i) lp += survival_k(k, i, p);
    return lp;
  }

  double tau_eps_target(double log_tau) const {
    ModelParameters p = params_;
    p.tau_eps = std::exp(log_tau);
    double lp = log_gamma_pdf(p.tau_eps, spec_.priors.tau_eps_shape, spec_.priors.tau_eps_rate) + log_tau;
    for (std::size_t i = 0; i < pm_.size(); ++i) lp += pm_[i].loglik_longitudinal(p, u_[i]);
    return lp;
  }

  void init_blocks() {
    const VectorXd b0 = params_.beta;
    beta_ = RandomWalkBlock(covariance_from_hessian(numeric_hessian([&](const VectorXd& b) { return beta_target(b); }, b0)),
                            cfg_.target_vector);
    for (int k = 0; k < kNumCauses; ++k) {
      const VectorXd x0 = pack_hazard(params_, k);
      hazard_[static_cast<std::size_t>(k)] = RandomWalkBlock(
          covariance_from_hessian(numeric_hessian([&](const VectorXd& x) { return hazard_target(k, x); }, x0)),
          cfg_.target_vector);
    }
    const VectorXd t0 = VectorXd::Constant(1, std::log(params_.tau_eps));
    tau_eps_ = RandomWalkBlock(
        covariance_from_hessian(numeric_hessian([&](const VectorXd& t) { return tau_eps_target(t(0)); }, t0)),
        cfg_.target_scalar);
    for (auto* b : all_blocks()) configure(*b);

    for (int k = 0; k < kNumCauses; ++k)
      hazard_moments_[static_cast<std::size_t>(k)] = RunningMoments(static_cast<int>(pack_hazard(params_, k).size()));

    u_scale_.assign(pm_.size(), AdaptiveScale{});
    for (auto& s : u_scale_) {
      s.dim = spec_.n_u();
      s.log_sd = std::log(2.38 / std::sqrt(static_cast<double>(s.dim)));
      s.decay = cfg_.rm_decay;
      s.offset = cfg_.rm_offset;
    }
  }

  std::array<RandomWalkBlock*, 4> all_blocks() { return {&beta_, &hazard_[0], &hazard_[1], &tau_eps_}; }

  void configure(RandomWalkBlock& b) const {
    AdaptiveScale s = b.scale();
    s.decay = cfg_.rm_decay;
    s.offset = cfg_.rm_offset;
    b.set_scale(s);
  }

  bool update_beta(bool adapt) {
    const VectorXd prop = beta_.propose(params_.beta, rng_);
    ModelParameters p = params_;
    p.beta = prop;
    const auto n = pm_.size();
    std::vector<double> nl(n), np(n), nt(n);
    double diff = sum_log_normal(prop, spec_.priors.normal_variance) -
                  sum_log_normal(params_.beta, spec_.priors.normal_variance);
    for (std::size_t i = 0; i < n; ++i) {
      nl[i] = pm_[i].loglik_longitudinal(p, u_[i]);
      np[i] = pm_[i].loglik_survival_prg(p, u_[i]);
      nt[i] = pm_[i].loglik_survival_trt(p, u_[i]);
      diff += (nl[i] - long_[i]) + (np[i] - surv_[0][i]) + (nt[i] - surv_[1][i]);
    }
    const bool ok = mh_accept(rng_, diff);
    if (ok) {
      params_.beta = prop;
      long_ = std::move(nl);
      surv_[0] = std::move(np);
      surv_[1] = std::move(nt);
    }
    beta_.record(ok, adapt);
    return ok;
  }

  bool update_hazard(int k, bool adapt) {
    const auto c = static_cast<std::size_t>(k);
    auto& block = hazard_[c];
    const VectorXd prop = block.propose(pack_hazard(params_, k), rng_);
    ModelParameters p = params_;
    unpack_hazard(p, k, prop);
    const auto n = pm_.size();
    std::vector<double> ns(n);
    double diff = hazard_prior(k, p) - hazard_prior(k, params_);
    for (std::size_t i = 0; i < n; ++i) {
      ns[i] = survival_k(k, i, p);
      diff += ns[i] - surv_[c][i];
    }
    const bool ok = mh_accept(rng_, diff);
    if (ok) {
      unpack_hazard(params_, k, prop);
      surv_[c] = std::move(ns);
    }
    block.record(ok, adapt);
    return ok;
  }

  bool update_tau_eps(bool adapt) {
    const double cur = std::log(params_.tau_eps);
    const double prop = tau_eps_.propose(VectorXd::Constant(1, cur), rng_)(0);
    ModelParameters p = params_;
    p.tau_eps = std::exp(prop);
    const auto n = pm_.size();
    std::vector<double> nl(n);
    const auto& pr = spec_.priors;
    double diff = log_gamma_pdf(p.tau_eps, pr.tau_eps_shape, pr.tau_eps_rate) + prop -
                  log_gamma_pdf(params_.tau_eps, pr.tau_eps_shape, pr.tau_eps_rate) - cur;
    for (std::size_t i = 0; i < n; ++i) {
      nl[i] = pm_[i].loglik_longitudinal(p, u_[i]);
      diff += nl[i] - long_[i];
    }
    const bool ok = mh_accept(rng_, diff);
    if (ok) {
      params_.tau_eps = p.tau_eps;
      long_ = std::move(nl);
    }
    tau_eps_.record(ok, adapt);
    return ok;
  }

  void update_u(bool adapt) {
    Eigen::LLT<MatrixXd> omega_llt(params_.omega);
    const MatrixXd omega_inv = omega_llt.solve(MatrixXd::Identity(spec_.n_u(), spec_.n_u()));
    for (std::size_t i = 0; i < pm_.size(); ++i) {
      auto& rng = u_rng_[i];
      const MatrixXd prec = pm_[i].u_information(params_) + omega_inv;
      Eigen::LLT<MatrixXd> llt(prec);
      VectorXd z(spec_.n_u());
      for (Eigen::Index j = 0; j < z.size(); ++j) z(j) = std_normal(rng);
      // L L' = prec, so L'^-1 z has covariance prec^-1
      const VectorXd step = llt.matrixU().solve(z);
      const VectorXd prop = u_[i] + u_scale_[i].sd() * step;
      const double l = pm_[i].loglik_longitudinal(params_, prop);
      const double sp = pm_[i].loglik_survival_prg(params_, prop);
      const double st = pm_[i].loglik_survival_trt(params_, prop);
      const double diff = (l - long_[i]) + (sp - surv_[0][i]) + (st - surv_[1][i]) -
                          0.5 * prop.dot(omega_inv * prop) + 0.5 * u_[i].dot(omega_inv * u_[i]);
      const bool ok = mh_accept(rng, diff);
      if (ok) {
        u_[i] = prop;
        long_[i] = l;
        surv_[0][i] = sp;
        surv_[1][i] = st;
      }
      ++u_proposed_;
      if (ok) ++u_accepted_;
      if (adapt) u_scale_[i] = rm_adapt(u_scale_[i], ok, cfg_.target_vector);
    }
  }

  // Translate the random-effect mean into beta: beta_b += d, u_i -= d leaves
  // every likelihood term unchanged, so d is drawn from its Gaussian conditional.
  void shift_move() {
    const auto idx = shift_beta_index(spec_);
    const int q = spec_.n_u();
    const double n = static_cast<double>(u_.size());
    const double v = spec_.priors.normal_variance;
    Eigen::LLT<MatrixXd> omega_llt(params_.omega);
    const MatrixXd omega_inv = omega_llt.solve(MatrixXd::Identity(q, q));
    VectorXd usum = VectorXd::Zero(q);
    for (const auto& u : u_) usum += u;
    VectorXd bsub(q);
    for (int j = 0; j < q; ++j) bsub(j) = params_.beta(idx[static_cast<std::size_t>(j)]);
    const MatrixXd prec = n * omega_inv + MatrixXd::Identity(q, q) / v;
    Eigen::LLT<MatrixXd> llt(prec);
    const VectorXd mean = llt.solve(omega_inv * usum - bsub / v);
    VectorXd z(q);
    for (int j = 0; j < q; ++j) z(j) = std_normal(rng_);
    const VectorXd d = mean + llt.matrixU().solve(z);
    for (int j = 0; j < q; ++j) params_.beta(idx[static_cast<std::size_t>(j)]) += d(j);
    for (auto& u : u_) u -= d;

    // same for the age slope: beta4 += e, u_i0 -= e (age_i - 62)
    double prec_a = 1.0 / v;
    double lin_a = -params_.beta(4) / v;
    for (std::size_t i = 0; i < u_.size(); ++i) {
      const double a = pm_[i].record().covariates.age - kAgeCentre;
      prec_a += a * a * omega_inv(0, 0);
      lin_a += a * omega_inv.row(0).dot(u_[i]);
    }
    const double e = lin_a / prec_a + std_normal(rng_) / std::sqrt(prec_a);
    params_.beta(4) += e;
    for (std::size_t i = 0; i < u_.size(); ++i) u_[i](0) -= e * (pm_[i].record().covariates.age - kAgeCentre);
  }

  void adapt_shapes(int it) {
    if (it >= cfg_.covariance_start / 2) {
      for (int k = 0; k < kNumCauses; ++k)
        hazard_moments_[static_cast<std::size_t>(k)].add(pack_hazard(params_, k));
    }
    // forget the transient once half of the burn-in has passed
    if (it == cfg_.n_burnin / 2 && it > cfg_.covariance_start) {
      for (int k = 0; k < kNumCauses; ++k)
        hazard_moments_[static_cast<std::size_t>(k)] =
            RunningMoments(static_cast<int>(pack_hazard(params_, k).size()));
    }
    if (it < cfg_.covariance_start || (it - cfg_.covariance_start) % cfg_.covariance_every != 0) return;
    auto refresh = [&](RandomWalkBlock& b, const RunningMoments& m) {
      if (m.count() < 2L * b.dim() + 20) return;
      const MatrixXd c = regularised_covariance(m.covariance(), 1e-6);
      Eigen::LLT<MatrixXd> llt(c);
      if (llt.info() != Eigen::Success) return;
      b.set_shape(c);
      if (!shaped_) b.set_log_sd(std::log(2.38 / std::sqrt(static_cast<double>(b.dim()))));
    };
    // beta moves with the random-effect mean through shift_move, so its
    // marginal spread says little about the conditional; use local curvature
    const MatrixXd bc = covariance_from_hessian(
        numeric_hessian([&](const VectorXd& b) { return beta_target(b); }, params_.beta));
    beta_.set_shape(regularised_covariance(bc, 1e-9));
    refresh(hazard_[0], hazard_moments_[0]);
    refresh(hazard_[1], hazard_moments_[1]);
    const MatrixXd tc = covariance_from_hessian(numeric_hessian(
        [&](const VectorXd& t) { return tau_eps_target(t(0)); }, VectorXd::Constant(1, std::log(params_.tau_eps))));
    tau_eps_.set_shape(tc);
    shaped_ = true;
  }

  void reset_counts() {
    for (auto* b : all_blocks()) b->reset_counts();
    u_accepted_ = 0;
    u_proposed_ = 0;
  }

  const std::vector<PatientModel>& pm_;
  const ModelSpec& spec_;
  const MCMCConfig& cfg_;
  int id_;
  Rng rng_;
  std::vector<Rng> u_rng_;
  ModelParameters params_;
  std::vector<VectorXd> u_;
  std::vector<double> long_;
  std::array<std::vector<double>, kNumCauses> surv_;

  RandomWalkBlock beta_;
  std::array<RandomWalkBlock, kNumCauses> hazard_;
  RandomWalkBlock tau_eps_;
  std::array<RunningMoments, kNumCauses> hazard_moments_;
  bool shaped_ = false;
  std::vector<AdaptiveScale> u_scale_;
  long u_accepted_ = 0;
  long u_proposed_ = 0;
};

}  // namespace

void MCMCConfig::validate() const {
  if (n_chains < 1) throw InvalidArgument("mcmc: chains must be at least 1");
  if (thinning < 1) throw InvalidArgument("mcmc: thinning must be at least 1");
  if (n_burnin < 0 || n_iterations <= n_burnin) throw InvalidArgument("mcmc: iterations must exceed burn-in");
  if (!(target_scalar > 0 && target_scalar < 1) || !(target_vector > 0 && target_vector < 1))
    throw InvalidArgument("mcmc: target acceptance rates must lie in (0, 1)");
  if (hazard_steps < 1 || beta_steps < 1) throw InvalidArgument("mcmc: block step counts must be positive");
  if (covariance_every < 1 || divergence_window < 1) throw InvalidArgument("mcmc: adaptation windows must be positive");
  if (threads < 0) throw InvalidArgument("mcmc: thread count must be non-negative");
}

MCMCConfig MCMCConfig::long_run() {
  MCMCConfig c;
  c.n_iterations = 10000;
  c.n_burnin = 5000;
  c.thinning = 10;
  c.n_chains = 3;
  return c;
}

int PosteriorSamples::n_chains() const {
  return chain.empty() ? 0 : *std::max_element(chain.begin(), chain.end()) + 1;
}

Eigen::MatrixXd PosteriorSamples::matrix() const {
  const auto n = static_cast<Eigen::Index>(parameter_names(spec).size());
  Eigen::MatrixXd m(static_cast<Eigen::Index>(draws.size()), n);
  for (std::size_t i = 0; i < draws.size(); ++i) {
    const auto f = draws[i].flatten();
    m.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::RowVectorXd>(f.data(), n);
  }
  return m;
}

Eigen::MatrixXd PosteriorSamples::chain_matrix(int c) const {
  const Eigen::MatrixXd all = matrix();
  std::vector<Eigen::Index> rows;
  for (std::size_t i = 0; i < chain.size(); ++i)
    if (chain[i] == c) rows.push_back(static_cast<Eigen::Index>(i));
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), all.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = all.row(rows[i]);
  return m;
}

ModelParameters PosteriorSamples::mean() const {
  if (draws.empty()) throw InvalidArgument("posterior: no draws");
  const Eigen::VectorXd m = matrix().colwise().mean().transpose();
  return ModelParameters::unflatten(spec, std::vector<double>(m.data(), m.data() + m.size()));
}

double PosteriorSamples::quantile(const std::string& name, double q) const {
  const auto names = parameter_names(spec);
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw InvalidArgument("posterior: unknown parameter '" + name + "'");
  const auto j = static_cast<std::size_t>(it - names.begin());
  std::vector<double> v;
  v.reserve(draws.size());
  for (const auto& d : draws) v.push_back(d.flatten()[j]);
  std::sort(v.begin(), v.end());
  return quantile_sorted(v, q);
}

std::vector<std::size_t> PosteriorSamples::even_subset(std::size_t n) const {
  std::vector<std::size_t> idx;
  if (n >= draws.size()) {
    idx.resize(draws.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return idx;
  }
  for (std::size_t i = 0; i < n; ++i) idx.push_back(i * draws.size() / n);
  return idx;
}

ModelSpec default_spec(const Dataset& ds, Variant variant) {
  if (ds.patients.empty()) throw InvalidArgument("default_spec: empty dataset");
  std::vector<double> pooled, events;
  double max_fu = 0.0;
  for (const auto& p : ds.patients) {
    for (const auto& o : p.longitudinal) pooled.push_back(o.time);
    const auto& ev = p.event;
    pooled.push_back(ev.t_upper);
    max_fu = std::max(max_fu, ev.t_upper);
    if (ev.delta == 1) events.push_back(0.5 * (ev.t_prg_minus + ev.t_upper));
    if (ev.delta == 2) events.push_back(ev.t_upper);
  }
  const auto ncs = natural_spline_knots(pooled);
  KnotVector h0;
  if (events.size() >= 12) {
    h0 = hazard_knots(events, max_fu);
  } else {
    // too few events for quantiles: evenly spaced knots
    h0.lower = 0.0;
    h0.upper = max_fu;
    for (int i = 1; i <= 8; ++i) h0.interior.push_back(max_fu * i / 9.0);
    h0.validate();
  }
  return ModelSpec::make(variant, ncs, h0);
}

PosteriorSamples fit(const Dataset& ds, const ModelSpec& spec, const MCMCConfig& cfg, const ProgressFn& progress) {
  cfg.validate();
  spec.validate();
  if (ds.patients.empty()) throw InvalidArgument("fit: empty dataset");
  validate_dataset(ds);
  const ModelBasis basis(spec);
  std::vector<PatientModel> pm;
  pm.reserve(ds.patients.size());
  for (const auto& p : ds.patients) pm.emplace_back(p, basis);
  const Initial init = initial_state(pm, spec);

  const auto n_chains = static_cast<std::size_t>(cfg.n_chains);
  std::vector<std::vector<ModelParameters>> draws(n_chains);
  std::vector<std::vector<BlockAcceptance>> acc(n_chains);
  std::vector<std::exception_ptr> errors(n_chains);
  std::atomic<std::size_t> next{0};
  std::mutex progress_mutex;
  ProgressFn locked;
  if (progress)
    locked = [&](int c, int it) {
      std::lock_guard<std::mutex> lock(progress_mutex);
      progress(c, it);
    };
  auto worker = [&]() {
    for (std::size_t c = next++; c < n_chains; c = next++) {
      try {
        Chain chain(pm, spec, cfg, static_cast<int>(c), init);
        chain.run(draws[c], acc[c], locked);
      } catch (...) {
        errors[c] = std::current_exception();
      }
    }
  };
  const std::size_t n_threads =
      std::min(n_chains, cfg.threads > 0 ? static_cast<std::size_t>(cfg.threads) : n_chains);
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  PosteriorSamples post;
  post.spec = spec;
  post.config = cfg;
  post.data_provenance = ds.provenance;
  for (std::size_t c = 0; c < n_chains; ++c) {
    for (auto& d : draws[c]) {
      post.draws.push_back(std::move(d));
      post.chain.push_back(static_cast<int>(c));
    }
    post.acceptance.insert(post.acceptance.end(), acc[c].begin(), acc[c].end());
  }
  if (n_chains >= 2 && post.draws.size() / n_chains >= 4) {
    std::vector<Eigen::MatrixXd> per_chain;
    for (int c = 0; c < cfg.n_chains; ++c) per_chain.push_back(post.chain_matrix(c));
    const auto r = gelman_rubin(per_chain);
    const auto names = parameter_names(spec);
    for (std::size_t j = 0; j < names.size(); ++j) post.rhat[names[j]] = r[j];
  }
  return post;
}

double gibbs_tau_h0(Rng& rng, const Eigen::VectorXd& gamma_h0, const PenaltyMatrix& penalty,
                    const PriorConstants& pr) {
  const double q = gamma_h0.dot(penalty.matrix * gamma_h0);
  return gamma_draw(rng, pr.tau_h0_shape + 0.5 * penalty.rank, pr.tau_h0_rate + 0.5 * q);
}

Eigen::MatrixXd gibbs_omega(Rng& rng, const std::vector<Eigen::VectorXd>& u, double tau_u, const ModelSpec& spec) {
  if (u.empty()) throw InvalidArgument("gibbs_omega: no random effects");
  Eigen::MatrixXd scale = omega_prior_scale(tau_u, spec);
  for (const auto& v : u) scale.noalias() += v * v.transpose();
  return inverse_wishart_draw(rng, spec.omega_df() + static_cast<double>(u.size()), scale);
}

double gibbs_tau_u(Rng& rng, const Eigen::MatrixXd& omega, const ModelSpec& spec) {
  const auto& pr = spec.priors;
  const int p = static_cast<int>(omega.rows());
  Eigen::LLT<Eigen::MatrixXd> llt(omega);
  if (llt.info() != Eigen::Success) throw NumericalError("gibbs_tau_u: Omega is not positive definite");
  const double tr = llt.solve(Eigen::MatrixXd::Identity(p, p)).trace();
  const double lambda = pr.tau_u_shape - 0.5 * p * spec.omega_df();
  return gig_draw(rng, lambda, pr.omega_scale * tr, 2.0 * pr.tau_u_rate);
}

double gelman_rubin(const std::vector<std::vector<double>>& chains) {
  if (chains.size() < 2) throw InvalidArgument("gelman_rubin: at least two chains are required");
  const std::size_t n = chains.front().size();
  for (const auto& c : chains)
    if (c.size() != n) throw InvalidArgument("gelman_rubin: chains must have equal length");
  if (n < 4) throw InvalidArgument("gelman_rubin: chains must hold at least four draws");
  const std::size_t half = n / 2;
  std::vector<std::pair<const double*, std::size_t>> parts;
  for (const auto& c : chains) {
    parts.emplace_back(c.data(), half);
    parts.emplace_back(c.data() + (n - half), half);
  }
  const double m = static_cast<double>(parts.size());
  const double h = static_cast<double>(half);
  std::vector<double> means, vars;
  for (const auto& [p, len] : parts) {
    double mu = 0.0;
    for (std::size_t i = 0; i < len; ++i) mu += p[i];
    mu /= h;
    double s = 0.0;
    for (std::size_t i = 0; i < len; ++i) s += (p[i] - mu) * (p[i] - mu);
    means.push_back(mu);
    vars.push_back(s / (h - 1.0));
  }
  const double grand = std::accumulate(means.begin(), means.end(), 0.0) / m;
  double b = 0.0;
  for (double mu : means) b += (mu - grand) * (mu - grand);
  b *= h / (m - 1.0);
  const double w = std::accumulate(vars.begin(), vars.end(), 0.0) / m;
  if (w == 0.0) return b == 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
  const double var_plus = (h - 1.0) / h * w + b / h;
  return std::sqrt(var_plus / w);
}

std::vector<double> gelman_rubin(const std::vector<Eigen::MatrixXd>& chains) {
  if (chains.size() < 2) throw InvalidArgument("gelman_rubin: at least two chains are required");
  const auto cols = chains.front().cols();
  std::vector<double> out;
  for (Eigen::Index j = 0; j < cols; ++j) {
    std::vector<std::vector<double>> v;
    for (const auto& c : chains) {
      if (c.cols() != cols) throw InvalidArgument("gelman_rubin: chains must have equal width");
      v.emplace_back(c.col(j).data(), c.col(j).data() + c.rows());
    }
    out.push_back(gelman_rubin(v));
  }
  return out;
}

namespace {

nlohmann::json config_json(const MCMCConfig& c) {
  return {{"n_iterations", c.n_iterations}, {"n_burnin", c.n_burnin},       {"thinning", c.thinning},
          {"n_chains", c.n_chains},         {"seed", c.seed},               {"target_scalar", c.target_scalar},
          {"target_vector", c.target_vector}, {"rm_decay", c.rm_decay},     {"rm_offset", c.rm_offset},
          {"hazard_steps", c.hazard_steps}, {"beta_steps", c.beta_steps},   {"covariance_start", c.covariance_start},
          {"covariance_every", c.covariance_every}, {"divergence_window", c.divergence_window},
          {"init_jitter", c.init_jitter}};
}

MCMCConfig config_from_json(const nlohmann::json& j) {
  MCMCConfig c;
  c.n_iterations = j.at("n_iterations").get<int>();
  c.n_burnin = j.at("n_burnin").get<int>();
  c.thinning = j.at("thinning").get<int>();
  c.n_chains = j.at("n_chains").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.target_scalar = j.value("target_scalar", c.target_scalar);
  c.target_vector = j.value("target_vector", c.target_vector);
  c.rm_decay = j.value("rm_decay", c.rm_decay);
  c.rm_offset = j.value("rm_offset", c.rm_offset);
  c.hazard_steps = j.value("hazard_steps", c.hazard_steps);
  c.beta_steps = j.value("beta_steps", c.beta_steps);
  c.covariance_start = j.value("covariance_start", c.covariance_start);
  c.covariance_every = j.value("covariance_every", c.covariance_every);
  c.divergence_window = j.value("divergence_window", c.divergence_window);
  c.init_jitter = j.value("init_jitter", c.init_jitter);
  return c;
}

bool binary_archive(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  return ext == ".bin" || ext == ".cbor";
}

}  // namespace

void write_posterior(const PosteriorSamples& post, const std::filesystem::path& path) {
  nlohmann::json j;
  j["format"] = "icjm-posterior";
  j["version"] = kPosteriorFormatVersion;
  j["spec"] = to_json(post.spec);
  j["config"] = config_json(post.config);
  j["data_provenance"] = post.data_provenance;
  j["parameter_names"] = parameter_names(post.spec);
  j["chain"] = post.chain;
  auto& d = j["draws"] = nlohmann::json::array();
  for (const auto& p : post.draws) d.push_back(p.flatten());
  auto& a = j["acceptance"] = nlohmann::json::array();
  for (const auto& b : post.acceptance)
    a.push_back({{"block", b.block}, {"chain", b.chain}, {"rate", b.rate}, {"target", b.target}});
  auto& r = j["rhat"] = nlohmann::json::object();
  for (const auto& [k, v] : post.rhat) r[k] = std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (binary_archive(path)) {
    const auto bytes = nlohmann::json::to_cbor(j);
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("cannot write posterior archive " + path.string());
  } else {
    std::ofstream out(path);
    out << j.dump() << '\n';
    if (!out) throw DataError("cannot write posterior archive " + path.string());
  }
}

PosteriorSamples read_posterior(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open posterior archive " + path.string());
  nlohmann::json j;
  try {
    if (binary_archive(path)) {
      const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
      j = nlohmann::json::from_cbor(bytes);
    } else {
      j = nlohmann::json::parse(in);
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": not a posterior archive (" + e.what() + ")");
  }
  if (j.value("format", "") != "icjm-posterior") throw DataError(path.string() + ": not a posterior archive");
  const int version = j.value("version", 0);
  if (version != kPosteriorFormatVersion)
    throw DataError(path.string() + ": unsupported posterior archive version " + std::to_string(version));
  try {
    PosteriorSamples post;
    post.spec = spec_from_json(j.at("spec"));
    post.config = config_from_json(j.at("config"));
    post.data_provenance = j.value("data_provenance", "");
    const auto names = j.at("parameter_names").get<std::vector<std::string>>();
    if (names != parameter_names(post.spec)) throw DataError("parameter names do not match the stored spec");
    post.chain = j.at("chain").get<std::vector<int>>();
    for (const auto& row : j.at("draws")) post.draws.push_back(ModelParameters::unflatten(post.spec, row.get<std::vector<double>>()));
    if (post.chain.size() != post.draws.size()) throw DataError("chain labels do not match the draws");
    for (const auto& a : j.at("acceptance"))
      post.acceptance.push_back({a.at("block").get<std::string>(), a.at("chain").get<int>(),
                                 a.at("rate").get<double>(), a.at("target").get<double>()});
    for (const auto& [k, v] : j.at("rhat").items())
      post.rhat[k] = v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
    return post;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": malformed posterior archive (" + e.what() + ")");
  }
}

}  // namespace icjm
