#include "icjm/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <nlohmann/json.hpp>

#include "icjm/error.hpp"
#include "icjm/quadrature.hpp"

namespace icjm {

namespace {

constexpr double kTimeTol = 1e-9;

bool same_time(double a, double b) { return std::abs(a - b) <= kTimeTol; }

void check_span(const BiopsySchedule& s, const RiskCurve& curve) {
  if (s.planned_times.empty()) throw InvalidArgument("schedule metrics: empty schedule");
  if (s.planned_times.front() <= curve.t_b - kTimeTol || s.planned_times.back() > curve.grid.back() + kTimeTol)
    throw InvalidArgument("schedule metrics: planned times fall outside the risk curve");
}

// interval probabilities Pr{t_{g-1} < T <= t_g | T <= t_N}
std::vector<double> interval_mass(const BiopsySchedule& s, const RiskCurve& curve) {
  check_span(s, curve);
  const double total = curve.mean_at(s.planned_times.back());
  if (!(total > 0.0)) throw NumericalError("schedule metrics undefined: zero progression risk by the horizon");
  std::vector<double> p;
  double prev = 0.0;
  for (double t : s.planned_times) {
    const double cur = curve.mean_at(t);
    p.push_back(std::max(cur - prev, 0.0) / total);
    prev = cur;
  }
  return p;
}

}  // namespace

bool VisitGrid::contains(double t) const {
  return std::any_of(times.begin(), times.end(), [t](double v) { return same_time(v, t); });
}

void VisitGrid::validate() const {
  if (times.empty()) throw InvalidArgument("visit grid: no visits");
  if (!(times.front() >= 0.0)) throw InvalidArgument("visit grid: visit times must be ≥ 0");
  for (std::size_t i = 1; i < times.size(); ++i)
    if (!(times[i] > times[i - 1])) throw InvalidArgument("visit grid: visit times must increase");
  if (!(horizon() > 0.0)) throw InvalidArgument("visit grid: horizon must be positive");
}

VisitGrid VisitGrid::regular(double step, double horizon) {
  if (!(step > 0.0) || !(horizon >= step)) throw InvalidArgument("visit grid: need 0 < step ≤ horizon");
  VisitGrid g;
  const auto n = static_cast<int>(std::floor(horizon / step + 1e-9));
  for (int k = 1; k <= n; ++k) g.times.push_back(k * step);
  if (!same_time(g.times.back(), horizon)) g.times.push_back(horizon);
  g.times.back() = horizon;
  return g;
}

Decision decide_current_visit(double risk, double phi) {
  if (!(risk >= 0.0 && risk <= 1.0) || !(phi >= 0.0 && phi <= 1.0))
    throw InvalidArgument("decide_current_visit: risk and threshold must lie in [0, 1]");
  return risk >= phi ? Decision::Biopsy : Decision::Defer;
}

BiopsySchedule plan_schedule(const RiskCurve& curve, const VisitGrid& grid, double t_v, double phi) {
  grid.validate();
  if (!(phi >= 0.0 && phi <= 1.0)) throw InvalidArgument("plan_schedule: threshold must lie in [0, 1]");
  if (!grid.contains(t_v)) throw InvalidArgument("plan_schedule: the current visit is not on the visit grid");
  if (curve.grid.back() < grid.horizon() - kTimeTol)
    throw InvalidArgument("plan_schedule: the risk curve stops before the horizon");
  if (t_v < curve.t_b - kTimeTol) throw InvalidArgument("plan_schedule: current visit precedes the last biopsy");

  BiopsySchedule s;
  s.threshold = phi;
  double tentative = curve.t_b;
  for (double t_e : grid.times) {
    if (t_e < t_v - kTimeTol || t_e <= tentative + kTimeTol) continue;
    if (same_time(t_e, grid.horizon())) break;
    const double risk = conditional_risk_from_curve(curve, tentative, t_e);
    const bool biopsy = decide_current_visit(risk, phi) == Decision::Biopsy;
    s.trace.push_back({t_e, risk, biopsy});
    if (biopsy) {
      s.planned_times.push_back(t_e);
      tentative = t_e;
    }
  }
  s.planned_times.push_back(grid.horizon());
  return s;
}

std::vector<double> schedule_knots(double t_b, const VisitGrid& grid) {
  std::vector<double> k{t_b};
  for (double t : grid.times)
    if (t > t_b + kTimeTol) k.push_back(t);
  return k;
}

BiopsySchedule generate_schedule(const PredictionContext& ctx, const VisitGrid& grid, double phi,
                                 const PosteriorSamples& posterior, const PredictConfig& cfg) {
  const auto curve = predict_risk_curve(RiskKind::NoTreatment, ctx, posterior, cfg, schedule_knots(ctx.t_b, grid));
  return plan_schedule(curve, grid, ctx.t_v, phi);
}

double expected_progression_time(const RiskCurve& curve, double a, double b) {
  if (!(a < b) || a < curve.grid.front() - kTimeTol || b > curve.grid.back() + kTimeTol)
    throw InvalidArgument("expected_progression_time: interval outside the risk curve");
  const double pb = curve.mean_at(b);
  const double mass = pb - curve.mean_at(a);
  if (!(mass > 0.0)) throw NumericalError("expected_progression_time: no risk mass in the interval");

  // split at the curve knots so the rule reuses the nodes the curve was evaluated on
  std::vector<double> cuts{a};
  for (double k : curve.knots)
    if (k > a + kTimeTol && k < b - kTimeTol) cuts.push_back(k);
  cuts.push_back(b);
  double tail = 0.0;
  for (std::size_t i = 1; i < cuts.size(); ++i) {
    const auto x = GaussKronrod15::nodes(cuts[i - 1], cuts[i]);
    const auto w = GaussKronrod15::scaled_weights(cuts[i - 1], cuts[i]);
    for (std::size_t j = 0; j < x.size(); ++j) tail += w[j] * (pb - curve.mean_at(x[j]));
  }
  return a + std::clamp(tail / mass, 0.0, b - a);
}

double expected_nb(const BiopsySchedule& schedule, const RiskCurve& curve) {
  const auto p = interval_mass(schedule, curve);
  double e = 0.0;
  for (std::size_t g = 0; g < p.size(); ++g) e += static_cast<double>(g + 1) * p[g];
  return e;
}

double expected_dd(const BiopsySchedule& schedule, const RiskCurve& curve) {
  const auto p = interval_mass(schedule, curve);
  double e = 0.0, prev = curve.t_b;
  for (std::size_t g = 0; g < p.size(); ++g) {
    const double t = schedule.planned_times[g];
    if (p[g] > 0.0 && t > prev) e += (t - expected_progression_time(curve, prev, t)) * p[g];
    prev = t;
  }
  return e;
}

double schedule_loss(double nb, double dd) { return std::hypot(nb - 1.0, dd); }

ScheduleMetrics schedule_metrics(const BiopsySchedule& schedule, const RiskCurve& curve) {
  ScheduleMetrics m;
  m.expected_nb = expected_nb(schedule, curve);
  m.expected_dd = expected_dd(schedule, curve);
  m.loss = schedule_loss(m.expected_nb, m.expected_dd);
  return m;
}

std::vector<double> default_threshold_grid() {
  std::vector<double> g;
  for (int k = 1; k <= 25; ++k) g.push_back(0.02 * k);
  return g;
}

ThresholdChoice optimal_threshold(const RiskCurve& curve, const VisitGrid& grid, double t_v,
                                  const std::vector<double>& phi_grid, double max_dd) {
  if (phi_grid.empty()) throw InvalidArgument("optimal_threshold: empty threshold grid");
  std::vector<double> phis = phi_grid;
  std::sort(phis.begin(), phis.end());
  ThresholdChoice out;
  for (double phi : phis) {
    ThresholdCandidate c;
    c.phi = phi;
    c.schedule = plan_schedule(curve, grid, t_v, phi);
    c.metrics = schedule_metrics(c.schedule, curve);
    out.candidates.push_back(std::move(c));
  }
  const ThresholdCandidate* best = nullptr;
  for (const auto& c : out.candidates)
    if (c.metrics.expected_dd <= max_dd && (!best || c.metrics.loss < best->metrics.loss)) best = &c;
  if (!best) {
    out.constraint_relaxed = true;
    for (const auto& c : out.candidates)
      if (!best || c.metrics.expected_dd < best->metrics.expected_dd) best = &c;
  }
  out.phi = best->phi;
  out.schedule = best->schedule;
  out.metrics = best->metrics;
  return out;
}

ThresholdChoice optimal_threshold(const PredictionContext& ctx, const VisitGrid& grid,
                                  const PosteriorSamples& posterior, const PredictConfig& cfg,
                                  const std::vector<double>& phi_grid, double max_dd) {
  const auto curve = predict_risk_curve(RiskKind::NoTreatment, ctx, posterior, cfg, schedule_knots(ctx.t_b, grid));
  return optimal_threshold(curve, grid, ctx.t_v, phi_grid, max_dd);
}

std::string schedule_json(const ThresholdChoice& choice, const std::string& patient_id) {
  nlohmann::json j;
  j["patient_id"] = patient_id;
  j["phi"] = choice.phi;
  j["planned_times"] = choice.schedule.planned_times;
  j["expected_nb"] = choice.metrics.expected_nb;
  j["expected_dd"] = choice.metrics.expected_dd;
  j["loss"] = choice.metrics.loss;
  j["constraint_relaxed"] = choice.constraint_relaxed;
  auto& trace = j["decisions"] = nlohmann::json::array();
  for (const auto& d : choice.schedule.trace)
    trace.push_back({{"time", d.time}, {"risk", d.risk}, {"biopsy", d.biopsy}});
  auto& cands = j["candidates"] = nlohmann::json::array();
  for (const auto& c : choice.candidates)
    cands.push_back({{"phi", c.phi},
                     {"planned_times", c.schedule.planned_times},
                     {"expected_nb", c.metrics.expected_nb},
                     {"expected_dd", c.metrics.expected_dd},
                     {"loss", c.metrics.loss}});
  return j.dump(2) + "\n";
}

std::string schedule_csv_header() { return "patient_id,phi,planned_times,expected_nb,expected_dd,loss,constraint_relaxed\n"; }

std::string schedule_csv_row(const ThresholdChoice& choice, const std::string& patient_id) {
  std::string times;
  for (double t : choice.schedule.planned_times) times += (times.empty() ? "" : " ") + format_number(t);
  return patient_id + ',' + format_number(choice.phi) + ',' + times + ',' + format_number(choice.metrics.expected_nb) +
         ',' + format_number(choice.metrics.expected_dd) + ',' + format_number(choice.metrics.loss) + ',' +
         (choice.constraint_relaxed ? "1" : "0") + '\n';
}

}  // namespace icjm
