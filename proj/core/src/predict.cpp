#include "icjm/predict.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <sstream>

#include "icjm/adaptive.hpp"
#include "icjm/error.hpp"
#include "icjm/quadrature.hpp"
#include "icjm/spline.hpp"

namespace icjm {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

constexpr double kMaxPanel = 0.5;

VectorXd to_vector(const std::vector<double>& v) { return Eigen::Map<const VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())); }

PatientRecord context_record(const PredictionContext& ctx) {
  PatientRecord r;
  r.patient_id = ctx.patient_id.empty() ? "subject" : ctx.patient_id;
  r.covariates = ctx.covariates;
  double last = std::max({ctx.t_y, ctx.t_v, ctx.t_b});
  for (auto o : ctx.history) {
    o.patient_id = r.patient_id;
    last = std::max(last, o.time);
    r.longitudinal.push_back(std::move(o));
  }
  r.event = {0, 0.0, last};
  return r;
}

double integrate(const TimeDesign& d, const VectorXd& w, Cause k, const ModelParameters& p, const VectorXd& u,
                 const BaselineCovariates& cov, const ModelSpec& spec) {
  if (d.rows() == 0) return 0.0;
  return w.dot(log_hazard_rows(k, d, p, u, cov, spec).array().exp().matrix());
}

double percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  return quantile_sorted(v, q);
}

void check_order(const PredictionContext& ctx, double t_p) {
  if (!(t_p >= ctx.t_b)) throw InvalidArgument("risk: t_p must not precede the last biopsy t_b");
}

}  // namespace

std::string to_string(RiskKind k) {
  switch (k) {
    case RiskKind::NoTreatment: return "no_treatment";
    case RiskKind::Full: return "full";
    case RiskKind::AtVisitBiopsy: return "at_visit_biopsy";
  }
  return "?";
}

RiskKind parse_risk_kind(const std::string& s) {
  if (s == "no_treatment") return RiskKind::NoTreatment;
  if (s == "full") return RiskKind::Full;
  if (s == "at_visit_biopsy") return RiskKind::AtVisitBiopsy;
  throw InvalidArgument("unknown risk kind '" + s + "' (expected no_treatment, full or at_visit_biopsy)");
}

void PredictionContext::validate() const {
  if (!(t_b >= 0.0) || !std::isfinite(t_b)) throw InvalidArgument("prediction context: t_b must be ≥ 0");
  if (!(t_b <= t_v) || !std::isfinite(t_v)) throw InvalidArgument("prediction context: requires t_b ≤ t_v");
  if (!std::isfinite(t_y) || t_y < 0.0) throw InvalidArgument("prediction context: t_y must be ≥ 0");
  for (const auto& o : history)
    if (o.time > t_y + 1e-12) throw InvalidArgument("prediction context: history extends beyond t_y");
  if (auto r = covariate_rule_violation(covariates); !r.empty())
    throw InvalidArgument("prediction context: rule violated: " + r);
}

PredictionContext PredictionContext::from_record(const PatientRecord& rec, double t_b, double t_v, double t_y) {
  PredictionContext ctx;
  ctx.patient_id = rec.patient_id;
  ctx.t_b = t_b;
  ctx.t_v = t_v;
  ctx.t_y = t_y;
  ctx.covariates = rec.covariates;
  for (const auto& o : rec.longitudinal)
    if (o.time <= t_y) ctx.history.push_back(o);
  ctx.validate();
  return ctx;
}

void PredictConfig::validate() const {
  if (n_draws < 1) throw InvalidArgument("predict: at least one posterior draw is required");
  if (n_mh < 1 || warmup < 0 || warmup > n_mh) throw InvalidArgument("predict: need 0 ≤ warmup ≤ n_mh and n_mh ≥ 1");
  if (!(visit_step > 0.0)) throw InvalidArgument("predict: visit step must be positive");
  if (!std::isfinite(horizon)) throw InvalidArgument("predict: horizon must be finite");
}

// ---- random effects ----

SubjectPosterior::SubjectPosterior(const PredictionContext& ctx, const ModelSpec& spec)
    : spec_(std::make_shared<const ModelSpec>(spec)),
      model_(context_record(ctx), ModelBasis(spec)),
      cov_(ctx.covariates) {
  ctx.validate();
  const ModelBasis basis(spec);
  const auto rp = cumulative_rule(0.0, ctx.t_b);
  prg_ = basis.design(rp.nodes);
  prg_w_ = to_vector(rp.weights);
  const auto rt = cumulative_rule(0.0, ctx.t_v);
  trt_ = basis.design(rt.nodes);
  trt_w_ = to_vector(rt.weights);
}

double SubjectPosterior::log_target(const ModelParameters& params, const VectorXd& u, bool condition_on_tv) const {
  double lp = model_.loglik_longitudinal(params, u) + log_mvn_pdf(u, params.omega);
  lp -= integrate(prg_, prg_w_, Cause::Progression, params, u, cov_, *spec_);
  if (condition_on_tv) lp -= integrate(trt_, trt_w_, Cause::Treatment, params, u, cov_, *spec_);
  return lp;
}

VectorXd SubjectPosterior::start(const ModelParameters& params) const {
  const int q = spec_->n_u();
  const MatrixXd omega_inv = params.omega.llt().solve(MatrixXd::Identity(q, q));
  const MatrixXd prec = model_.u_information(params) + omega_inv;
  VectorXd rhs = VectorXd::Zero(q);
  if (model_.psa_y().size() > 0) {
    const VectorXd fixed = model_.psa_x() * params.beta.head(5);
    rhs.head(4) = (2.0 * params.tau_eps / 3.0) * model_.psa_z().transpose() * (model_.psa_y() - fixed);
  }
  return prec.llt().solve(rhs);
}

VectorXd SubjectPosterior::sample(const ModelParameters& params, bool condition_on_tv, int n_mh, int warmup,
                                  Rng& rng) const {
  const int q = spec_->n_u();
  const MatrixXd omega_inv = params.omega.llt().solve(MatrixXd::Identity(q, q));
  const MatrixXd prec = model_.u_information(params) + omega_inv;
  RandomWalkBlock block(prec.llt().solve(MatrixXd::Identity(q, q)), 0.234);
  VectorXd u = start(params);
  double lp = log_target(params, u, condition_on_tv);
  if (!std::isfinite(lp)) {
    u.setZero();
    lp = log_target(params, u, condition_on_tv);
  }
  if (!std::isfinite(lp)) throw NumericalError("sample_subject_effects: non-finite target at the starting value");
  for (int s = 0; s < n_mh; ++s) {
    const VectorXd prop = block.propose(u, rng);
    const double lq = log_target(params, prop, condition_on_tv);
    const double diff = lq - lp;
    const bool ok = !std::isnan(diff) && (diff >= 0.0 || std::log(uniform01(rng)) < diff);
    if (ok) {
      u = prop;
      lp = lq;
    }
    block.record(ok, s < warmup);
  }
  return u;
}

VectorXd sample_subject_effects(const PredictionContext& ctx, const ModelParameters& draw, const ModelSpec& spec,
                                bool condition_on_tv, int n_mh, std::uint64_t seed, int warmup) {
  auto rng = make_rng(seed);
  return SubjectPosterior(ctx, spec).sample(draw, condition_on_tv, n_mh, warmup, rng);
}

// ---- risk engine ----

RiskEngine::RiskEngine(const ModelBasis& basis, const BaselineCovariates& cov, double t_b, double t_v,
                       std::vector<double> grid, bool nested)
    : spec_(basis.spec_ptr()), cov_(cov), t_b_(t_b), t_v_(t_v), grid_(std::move(grid)), nested_(nested) {
  if (grid_.empty() || grid_.front() != t_b) throw InvalidArgument("risk grid must start at t_b");
  for (std::size_t i = 1; i < grid_.size(); ++i)
    if (!(grid_[i] > grid_[i - 1])) throw InvalidArgument("risk grid must be strictly increasing");
  if (t_v < t_b) throw InvalidArgument("risk: requires t_b ≤ t_v");

  std::vector<double> cuts = grid_;
  if (t_v > grid_.front() && t_v < grid_.back()) cuts.push_back(t_v);
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
  edges_.push_back(cuts.front());
  for (std::size_t i = 1; i < cuts.size(); ++i) {
    const double a = cuts[i - 1], b = cuts[i];
    const int n = std::max(1, static_cast<int>(std::ceil((b - a) / kMaxPanel - 1e-9)));
    for (int j = 1; j < n; ++j) edges_.push_back(a + (b - a) * j / n);
    edges_.push_back(b);
  }
  for (double g : grid_)
    grid_edge_.push_back(static_cast<std::size_t>(std::lower_bound(edges_.begin(), edges_.end(), g) - edges_.begin()));

  std::vector<double> x, w, ix, iw;
  for (std::size_t p = 0; p + 1 < edges_.size(); ++p) {
    const double a = edges_[p], b = edges_[p + 1];
    const auto nx = GaussKronrod15::nodes(a, b);
    const auto nw = GaussKronrod15::scaled_weights(a, b);
    x.insert(x.end(), nx.begin(), nx.end());
    w.insert(w.end(), nw.begin(), nw.end());
    if (nested_) {
      for (double s : nx) {
        const auto jx = GaussKronrod15::nodes(a, s);
        const auto jw = GaussKronrod15::scaled_weights(a, s);
        ix.insert(ix.end(), jx.begin(), jx.end());
        iw.insert(iw.end(), jw.begin(), jw.end());
      }
    }
  }
  nodes_ = basis.design(x);
  w_ = to_vector(w);
  if (nested_) {
    inner_ = basis.design(ix);
    inner_w_ = to_vector(iw);
  }
}

VectorXd RiskEngine::evaluate(RiskKind kind, const ModelParameters& params, const VectorXd& u) const {
  const auto& spec = *spec_;
  const std::size_t n_panels = edges_.size() - 1;
  const VectorXd hp = log_hazard_rows(Cause::Progression, nodes_, params, u, cov_, spec).array().exp();
  VectorXd at_edge(static_cast<Eigen::Index>(edges_.size()));
  at_edge(0) = 0.0;

  if (kind == RiskKind::NoTreatment) {
    double H = 0.0;
    for (std::size_t p = 0; p < n_panels; ++p) {
      const auto o = static_cast<Eigen::Index>(15 * p);
      H += w_.segment<15>(o).dot(hp.segment<15>(o));
      at_edge(static_cast<Eigen::Index>(p + 1)) = -std::expm1(-H);
    }
  } else {
    if (!nested_) throw InvalidArgument("risk engine built without nested nodes");
    const double t_v = kind == RiskKind::AtVisitBiopsy ? t_b_ : t_v_;
    const VectorXd ht = log_hazard_rows(Cause::Treatment, nodes_, params, u, cov_, spec).array().exp();
    const VectorXd ip = log_hazard_rows(Cause::Progression, inner_, params, u, cov_, spec).array().exp();
    const VectorXd it = log_hazard_rows(Cause::Treatment, inner_, params, u, cov_, spec).array().exp();
    double Hp = 0.0, Ht = 0.0, N = 0.0;
    for (std::size_t p = 0; p < n_panels; ++p) {
      const auto o = static_cast<Eigen::Index>(15 * p);
      const double dHp = w_.segment<15>(o).dot(hp.segment<15>(o));
      if (edges_[p + 1] <= t_v) {
        // no competing exposure yet: closed form of int h exp(-H)
        N += std::exp(-Hp) - std::exp(-(Hp + dHp));
      } else {
        double inc = 0.0;
        for (int j = 0; j < 15; ++j) {
          const auto io = static_cast<Eigen::Index>(225 * p + 15 * static_cast<std::size_t>(j));
          const double hp_in = inner_w_.segment<15>(io).dot(ip.segment<15>(io));
          const double ht_in = inner_w_.segment<15>(io).dot(it.segment<15>(io));
          inc += w_(o + j) * hp(o + j) * std::exp(-(Hp + hp_in) - (Ht + ht_in));
        }
        N += inc;
        Ht += w_.segment<15>(o).dot(ht.segment<15>(o));
      }
      Hp += dHp;
      at_edge(static_cast<Eigen::Index>(p + 1)) = std::clamp(N, 0.0, 1.0);
    }
  }
  VectorXd out(static_cast<Eigen::Index>(grid_.size()));
  for (std::size_t g = 0; g < grid_.size(); ++g)
    out(static_cast<Eigen::Index>(g)) = at_edge(static_cast<Eigen::Index>(grid_edge_[g]));
  return out;
}

VectorXd risk_path(RiskKind kind, const ModelParameters& params, const VectorXd& u, const BaselineCovariates& cov,
                   const ModelSpec& spec, double t_b, double t_v, const std::vector<double>& grid) {
  if (kind == RiskKind::AtVisitBiopsy && t_v != t_b) throw InvalidArgument("risk_at_visit_biopsy requires t_v = t_b");
  const RiskEngine engine(ModelBasis(spec), cov, t_b, t_v, grid, kind != RiskKind::NoTreatment);
  return engine.evaluate(kind, params, u);
}

std::vector<double> risk_knots(double t_b, double t_v, double horizon, double visit_step) {
  if (!(visit_step > 0.0)) throw InvalidArgument("risk grid: visit step must be positive");
  const double end = std::max(horizon, t_b);
  std::vector<double> k{t_b};
  for (double m = std::floor(t_b / visit_step + 1e-9) + 1.0; m * visit_step < end - 1e-9; m += 1.0)
    k.push_back(m * visit_step);
  if (t_v > t_b + 1e-9 && t_v < end - 1e-9) k.push_back(t_v);
  if (end > t_b) k.push_back(end);
  std::sort(k.begin(), k.end());
  std::vector<double> out{k.front()};
  for (double x : k)
    if (x - out.back() > 1e-9) out.push_back(x);
  return out;
}

std::vector<double> risk_grid(const std::vector<double>& knots) {
  if (knots.empty()) throw InvalidArgument("risk grid: no knots");
  std::vector<double> g{knots.front()};
  for (std::size_t i = 1; i < knots.size(); ++i) {
    if (!(knots[i] > knots[i - 1])) throw InvalidArgument("risk grid: knots must increase");
    const auto nodes = GaussKronrod15::nodes(knots[i - 1], knots[i]);
    g.insert(g.end(), nodes.begin(), nodes.end());
    g.push_back(knots[i]);
  }
  return g;
}

// ---- posterior-averaged predictions ----

namespace {

RiskCurve curve_on_grid(RiskKind kind, const PredictionContext& ctx, const PosteriorSamples& post,
                        const PredictConfig& cfg, std::vector<double> knots) {
  std::vector<double> grid = risk_grid(knots);
  ctx.validate();
  cfg.validate();
  if (post.draws.empty()) throw InvalidArgument("predict: the posterior holds no draws");
  if (kind == RiskKind::AtVisitBiopsy && ctx.t_v != ctx.t_b)
    throw InvalidArgument("risk_at_visit_biopsy requires t_v = t_b");
  const ModelSpec& spec = post.spec;
  const ModelBasis basis(spec);
  const SubjectPosterior subject(ctx, spec);
  const RiskEngine engine(basis, ctx.covariates, ctx.t_b, ctx.t_v, grid, kind != RiskKind::NoTreatment);
  const bool condition_on_tv = kind != RiskKind::NoTreatment;

  const auto idx = post.even_subset(static_cast<std::size_t>(cfg.n_draws));
  RiskCurve curve;
  curve.kind = kind;
  curve.grid = std::move(grid);
  curve.knots = std::move(knots);
  curve.t_b = ctx.t_b;
  if (kind != RiskKind::NoTreatment) curve.t_v = ctx.t_v;
  curve.t_y = ctx.t_y;
  curve.per_draw.resize(static_cast<Eigen::Index>(idx.size()), static_cast<Eigen::Index>(curve.grid.size()));
  for (std::size_t d = 0; d < idx.size(); ++d) {
    auto rng = make_rng(cfg.seed, {static_cast<std::uint64_t>(idx[d])});
    const auto& theta = post.draws[idx[d]];
    const VectorXd u = subject.sample(theta, condition_on_tv, cfg.n_mh, cfg.warmup, rng);
    curve.per_draw.row(static_cast<Eigen::Index>(d)) = engine.evaluate(kind, theta, u).transpose();
    curve.draw_index.push_back(idx[d]);
    curve.effects.push_back(u);
  }
  for (Eigen::Index g = 0; g < curve.per_draw.cols(); ++g) {
    const VectorXd col = curve.per_draw.col(g);
    std::vector<double> v(col.data(), col.data() + col.size());
    curve.mean.push_back(col.mean());
    curve.lower.push_back(percentile(v, 0.025));
    curve.upper.push_back(percentile(v, 0.975));
  }
  return curve;
}

RiskPoint point(RiskKind kind, const PredictionContext& ctx, double t_p, const PosteriorSamples& post,
                const PredictConfig& cfg) {
  check_order(ctx, t_p);
  if (kind == RiskKind::Full && t_p < ctx.t_v) throw InvalidArgument("risk_full: requires t_v ≤ t_p");
  RiskPoint p;
  if (t_p == ctx.t_b) {
    p.per_draw = VectorXd::Zero(static_cast<Eigen::Index>(post.even_subset(static_cast<std::size_t>(cfg.n_draws)).size()));
    return p;
  }
  const auto curve = curve_on_grid(kind, ctx, post, cfg, {ctx.t_b, t_p});
  p.per_draw = curve.per_draw.col(curve.per_draw.cols() - 1);
  p.mean = curve.mean.back();
  p.lower = curve.lower.back();
  p.upper = curve.upper.back();
  return p;
}

double interp(const std::vector<double>& x, const double* y, Eigen::Index stride, double t) {
  if (t < x.front() - 1e-12 || t > x.back() + 1e-12) throw InvalidArgument("risk curve grid does not span the requested time");
  const auto it = std::upper_bound(x.begin(), x.end(), t);
  if (it == x.end()) return y[static_cast<Eigen::Index>(x.size() - 1) * stride];
  const auto j = static_cast<std::size_t>(it - x.begin());
  if (j == 0) return y[0];
  const double a = x[j - 1], b = x[j];
  const double ya = y[static_cast<Eigen::Index>(j - 1) * stride], yb = y[static_cast<Eigen::Index>(j) * stride];
  return ya + (yb - ya) * (t - a) / (b - a);
}

}  // namespace

double RiskCurve::mean_at(double t) const { return interp(grid, mean.data(), 1, t); }

VectorXd RiskCurve::draws_at(double t) const {
  VectorXd out(per_draw.rows());
  for (Eigen::Index d = 0; d < per_draw.rows(); ++d) {
    const Eigen::RowVectorXd row = per_draw.row(d);
    out(d) = interp(grid, row.data(), 1, t);
  }
  return out;
}

RiskCurve predict_risk_curve(RiskKind kind, const PredictionContext& ctx, const PosteriorSamples& posterior,
                             const PredictConfig& cfg) {
  cfg.validate();
  return curve_on_grid(kind, ctx, posterior, cfg, risk_knots(ctx.t_b, ctx.t_v, cfg.horizon, cfg.visit_step));
}

RiskCurve predict_risk_curve(RiskKind kind, const PredictionContext& ctx, const PosteriorSamples& posterior,
                             const PredictConfig& cfg, std::vector<double> knots) {
  if (knots.empty() || knots.front() != ctx.t_b) throw InvalidArgument("risk curve knots must start at t_b");
  return curve_on_grid(kind, ctx, posterior, cfg, std::move(knots));
}

RiskPoint risk_full(const PredictionContext& ctx, double t_p, const PosteriorSamples& posterior,
                    const PredictConfig& cfg) {
  return point(RiskKind::Full, ctx, t_p, posterior, cfg);
}

RiskPoint risk_no_treatment(const PredictionContext& ctx, double t_p, const PosteriorSamples& posterior,
                            const PredictConfig& cfg) {
  return point(RiskKind::NoTreatment, ctx, t_p, posterior, cfg);
}

RiskPoint risk_at_visit_biopsy(const PredictionContext& ctx, double t_p, const PosteriorSamples& posterior,
                               const PredictConfig& cfg) {
  if (ctx.t_v != ctx.t_b) throw InvalidArgument("risk_at_visit_biopsy requires t_v = t_b");
  return point(RiskKind::AtVisitBiopsy, ctx, t_p, posterior, cfg);
}

double conditional_risk_from_curve(const RiskCurve& curve, double t_tilde_b, double t_e) {
  if (!(t_tilde_b >= curve.t_b)) throw InvalidArgument("conditional risk: requires t_b ≤ t_tilde_b");
  if (!(t_e >= t_tilde_b)) throw InvalidArgument("conditional risk: requires t_tilde_b ≤ t_e");
  if (t_e > curve.grid.back() + 1e-12) throw InvalidArgument("conditional risk: the curve grid does not span t_e");
  if (t_e == t_tilde_b) return 0.0;
  const VectorXd pe = curve.draws_at(t_e);
  const VectorXd pb = curve.draws_at(t_tilde_b);
  double s = 0.0;
  for (Eigen::Index d = 0; d < pe.size(); ++d) {
    const double surv = 1.0 - pb(d);
    const double r = surv > 0.0 ? (pe(d) - pb(d)) / surv : 1.0;
    s += std::clamp(r, 0.0, 1.0);
  }
  return s / static_cast<double>(pe.size());
}

std::string risk_curve_csv(const RiskCurve& curve) {
  std::ostringstream os;
  os << "t_p,mean,lower,upper\n";
  for (std::size_t g = 0; g < curve.grid.size(); ++g)
    os << format_number(curve.grid[g]) << ',' << format_number(curve.mean[g]) << ',' << format_number(curve.lower[g])
       << ',' << format_number(curve.upper[g]) << '\n';
  return os.str();
}

std::string risk_curve_json(const RiskCurve& curve, const std::string& patient_id) {
  nlohmann::json j;
  j["patient_id"] = patient_id;
  j["kind"] = to_string(curve.kind);
  j["t_b"] = curve.t_b;
  j["t_v"] = curve.t_v ? nlohmann::json(*curve.t_v) : nlohmann::json(nullptr);
  j["t_y"] = curve.t_y;
  j["n_draws"] = curve.per_draw.rows();
  j["grid"] = curve.grid;
  j["mean"] = curve.mean;
  j["lower"] = curve.lower;
  j["upper"] = curve.upper;
  return j.dump(2) + "\n";
}

}  // namespace icjm
