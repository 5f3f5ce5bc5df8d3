#include "icjm/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "icjm/error.hpp"
#include "icjm/likelihood.hpp"

namespace icjm {

namespace {

constexpr double kTol = 1e-9;

bool same_visit(double a, double b) { return std::abs(a - b) <= kTol; }

double median_of(std::vector<double> v) {
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  return quantile_sorted(v, 0.5);
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::nan("");
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

std::string opt_number(const std::optional<double>& x) { return x ? format_number(*x) : std::string(); }

}  // namespace

// ---- Aalen-Johansen ----

double CIFEstimate::at(int cause, double t) const {
  if (cause != 1 && cause != 2) throw InvalidArgument("CIF cause must be 1 or 2");
  const auto it = std::upper_bound(times.begin(), times.end(), t);
  if (it == times.begin()) return 0.0;
  return cif[static_cast<std::size_t>(cause - 1)][static_cast<std::size_t>(it - times.begin() - 1)];
}

CIFEstimate aalen_johansen(const std::vector<CompetingEvent>& events) {
  if (events.empty()) throw InvalidArgument("aalen_johansen: no observations");
  for (const auto& e : events)
    if (!(e.time >= 0.0) || !std::isfinite(e.time) || e.cause < 0 || e.cause > 2)
      throw InvalidArgument("aalen_johansen: times must be finite and ≥ 0 with cause in {0, 1, 2}");
  auto sorted = events;
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.time < b.time; });

  CIFEstimate est;
  double surv = 1.0, c1 = 0.0, c2 = 0.0;
  std::size_t at_risk = sorted.size();
  for (std::size_t i = 0; i < sorted.size();) {
    const double t = sorted[i].time;
    std::size_t d1 = 0, d2 = 0, n_here = 0;
    for (; i < sorted.size() && sorted[i].time == t; ++i, ++n_here) {
      d1 += sorted[i].cause == 1;
      d2 += sorted[i].cause == 2;
    }
    if (d1 + d2 > 0) {
      const double n = static_cast<double>(at_risk);
      c1 += surv * static_cast<double>(d1) / n;
      c2 += surv * static_cast<double>(d2) / n;
      surv *= 1.0 - static_cast<double>(d1 + d2) / n;
      est.times.push_back(t);
      est.cif[0].push_back(c1);
      est.cif[1].push_back(c2);
      est.survival.push_back(surv);
    }
    at_risk -= n_here;
  }
  return est;
}

std::vector<CompetingEvent> competing_events(const Dataset& ds) {
  std::vector<CompetingEvent> out;
  for (const auto& p : ds.patients) {
    const auto& e = p.event;
    if (e.delta == 1)
      out.push_back({0.5 * (e.t_prg_minus + e.t_upper), 1});
    else
      out.push_back({e.t_upper, e.delta});
  }
  return out;
}

std::string cif_csv(const CIFEstimate& est) {
  std::string s = "time,cif_progression,cif_treatment,survival\n";
  for (std::size_t i = 0; i < est.times.size(); ++i)
    s += format_number(est.times[i]) + ',' + format_number(est.cif[0][i]) + ',' + format_number(est.cif[1][i]) + ',' +
         format_number(est.survival[i]) + '\n';
  return s;
}

// ---- prediction error ----

std::vector<PredictionErrorRow> prediction_error_study(const PosteriorSamples& posterior, const SimulatedDataset& test,
                                                       const PredictionErrorConfig& cfg) {
  if (test.truth.size() != test.data.patients.size())
    throw DataError("prediction error study: ground truth missing for the test patients");
  if (!(cfg.window > 0.0)) throw InvalidArgument("prediction error study: window must be positive");
  const auto& gen = test.config;
  std::vector<PredictionErrorRow> rows;
  for (double s : cfg.starts) {
    PredictionErrorRow row;
    row.start = s;
    for (std::size_t i = 0; i < test.data.patients.size(); ++i) {
      const auto& rec = test.data.patients[i];
      const auto& truth = test.truth_for(rec.patient_id);
      if (std::min(truth.events.t_prg, truth.events.t_trt) <= s || truth.censoring_time <= s) continue;
      const auto ctx = PredictionContext::from_record(rec, s, s, s);
      const double predicted = risk_at_visit_biopsy(ctx, s + cfg.window, posterior, cfg.predict).mean;
      const auto path = risk_path(RiskKind::AtVisitBiopsy, gen.params, truth.u, rec.covariates, gen.spec, s, s,
                                  {s, s + cfg.window});
      row.patient_ids.push_back(rec.patient_id);
      row.predicted.push_back(predicted);
      row.truth.push_back(path(path.size() - 1));
    }
    if (row.patient_ids.empty())
      throw DataError("prediction error study: no patients at risk at start time " + format_number(s));
    row.n_at_risk = row.patient_ids.size();
    std::vector<double> err;
    for (std::size_t k = 0; k < row.n_at_risk; ++k) err.push_back(row.predicted[k] - row.truth[k]);
    row.mean_error = mean_of(err);
    double ss = 0.0;
    for (double e : err) ss += (e - row.mean_error) * (e - row.mean_error);
    row.sd_error = err.size() > 1 ? std::sqrt(ss / static_cast<double>(err.size() - 1)) : 0.0;
    std::sort(err.begin(), err.end());
    row.lower = quantile_sorted(err, 0.025);
    row.upper = quantile_sorted(err, 0.975);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string prediction_error_csv(const std::vector<PredictionErrorRow>& rows) {
  std::string s = "start,n_at_risk,mean_error,sd_error,lower,upper\n";
  for (const auto& r : rows)
    s += format_number(r.start) + ',' + std::to_string(r.n_at_risk) + ',' + format_number(r.mean_error) + ',' +
         format_number(r.sd_error) + ',' + format_number(r.lower) + ',' + format_number(r.upper) + '\n';
  return s;
}

// ---- schedule comparison ----

std::string to_string(Policy p) {
  switch (p) {
    case Policy::Annual: return "annual";
    case Policy::PASS: return "pass";
    case Policy::Personalized: return "personalized";
  }
  return "?";
}

Policy parse_policy(const std::string& s) {
  if (s == "annual") return Policy::Annual;
  if (s == "pass") return Policy::PASS;
  if (s == "personalized") return Policy::Personalized;
  throw InvalidArgument("unknown policy '" + s + "' (expected annual, pass or personalized)");
}

std::vector<double> fixed_policy_times(Policy p, double horizon) {
  std::vector<double> t;
  switch (p) {
    case Policy::Annual:
      for (int k = 1; k <= horizon + kTol; ++k) t.push_back(k);
      break;
    case Policy::PASS:
      // 12 and 24 months, then every two years
      for (double x = 1.0; x <= horizon + kTol; x = x < 2.0 ? x + 1.0 : x + 2.0) t.push_back(x);
      break;
    case Policy::Personalized: throw InvalidArgument("the personalized policy has no fixed biopsy times");
  }
  if (t.empty() || t.back() < horizon - kTol) t.push_back(horizon);
  return t;
}

ScheduleComparisonRow replay_fixed_policy(const std::string& id, Policy p, double true_t_prg, double horizon) {
  ScheduleComparisonRow row;
  row.patient_id = id;
  row.policy = p;
  row.progressed = true_t_prg <= horizon;
  row.n_biopsies = 1;
  row.biopsy_times.push_back(0.0);
  for (double t : fixed_policy_times(p, horizon)) {
    ++row.n_biopsies;
    row.biopsy_times.push_back(t);
    if (true_t_prg <= t) {
      row.delay = t - true_t_prg;
      break;
    }
  }
  return row;
}

namespace {

ScheduleComparisonRow replay_personalized(const PosteriorSamples& posterior, const PatientRecord& rec,
                                          const GroundTruth& truth, const ComparisonConfig& cfg) {
  const double horizon = cfg.grid.horizon();
  const double t_true = truth.events.latent_t_prg;
  ScheduleComparisonRow row;
  row.patient_id = rec.patient_id;
  row.policy = Policy::Personalized;
  row.progressed = t_true <= horizon;
  row.n_biopsies = 1;
  row.biopsy_times.push_back(0.0);
  double t_b = 0.0;
  for (double v : cfg.grid.times) {
    bool biopsy = same_visit(v, horizon);
    if (!biopsy) {
      PredictionContext ctx;
      ctx.patient_id = rec.patient_id;
      ctx.covariates = rec.covariates;
      ctx.t_b = t_b;
      ctx.t_v = v;
      ctx.t_y = v;
      for (const auto& o : truth.trajectory)
        if (o.time <= v) ctx.history.push_back(o);
      auto pcfg = cfg.predict;
      pcfg.seed = derive_seed(cfg.predict.seed, {static_cast<std::uint64_t>(std::llround(v * 1000.0))});
      const auto choice = optimal_threshold(ctx, cfg.grid, posterior, pcfg, cfg.phi_grid, cfg.max_dd);
      biopsy = same_visit(choice.schedule.planned_times.front(), v);
    }
    if (!biopsy) continue;
    ++row.n_biopsies;
    row.biopsy_times.push_back(v);
    if (t_true <= v) {
      row.delay = v - t_true;
      break;
    }
    t_b = v;
  }
  return row;
}

}  // namespace

ScheduleComparison run_schedule_comparison(const PosteriorSamples& posterior, const SimulatedDataset& test,
                                           const ComparisonConfig& cfg) {
  cfg.grid.validate();
  if (test.truth.size() != test.data.patients.size())
    throw DataError("schedule comparison: ground truth missing for the test patients");
  ScheduleComparison out;
  for (const auto& rec : test.data.patients) {
    const auto& truth = test.truth_for(rec.patient_id);
    for (Policy p : cfg.policies) {
      if (p == Policy::Personalized)
        out.rows.push_back(replay_personalized(posterior, rec, truth, cfg));
      else
        out.rows.push_back(replay_fixed_policy(rec.patient_id, p, truth.events.latent_t_prg, cfg.grid.horizon()));
    }
  }
  out.summary = summarise(out.rows);
  return out;
}

std::vector<PolicySummary> summarise(const std::vector<ScheduleComparisonRow>& rows) {
  std::map<std::pair<int, bool>, std::pair<std::vector<double>, std::vector<double>>> groups;
  for (const auto& r : rows) {
    auto& g = groups[{static_cast<int>(r.policy), r.progressed}];
    g.first.push_back(r.n_biopsies);
    if (r.delay) g.second.push_back(*r.delay);
  }
  std::vector<PolicySummary> out;
  for (const auto& [key, g] : groups) {
    PolicySummary s;
    s.policy = static_cast<Policy>(key.first);
    s.progressed = key.second;
    s.n = g.first.size();
    s.mean_nb = mean_of(g.first);
    s.median_nb = median_of(g.first);
    s.mean_delay = mean_of(g.second);
    s.median_delay = median_of(g.second);
    out.push_back(s);
  }
  return out;
}

SimulatedDataset select_strata(const SimulatedDataset& sim, std::size_t n_progressed, std::size_t n_free,
                               double horizon) {
  SimulatedDataset out;
  out.config = sim.config;
  out.data.provenance = sim.data.provenance;
  std::size_t a = 0, b = 0;
  for (std::size_t i = 0; i < sim.data.patients.size(); ++i) {
    const auto& truth = sim.truth_for(sim.data.patients[i].patient_id);
    const bool prg = truth.events.latent_t_prg <= horizon;
    if (prg ? a >= n_progressed : b >= n_free) continue;
    (prg ? a : b)++;
    out.data.patients.push_back(sim.data.patients[i]);
    out.truth.push_back(truth);
  }
  if (a < n_progressed || b < n_free) throw DataError("select_strata: too few patients in one stratum");
  out.proportions = event_proportions(out.data);
  return out;
}

std::string comparison_csv(const ScheduleComparison& cmp) {
  std::string s = "patient_id,policy,progressed,n_biopsies,delay,biopsy_times\n";
  for (const auto& r : cmp.rows) {
    std::string times;
    for (double t : r.biopsy_times) times += (times.empty() ? "" : " ") + format_number(t);
    s += r.patient_id + ',' + to_string(r.policy) + ',' + (r.progressed ? "1" : "0") + ',' +
         std::to_string(r.n_biopsies) + ',' + opt_number(r.delay) + ',' + times + '\n';
  }
  return s;
}

std::string comparison_summary_csv(const ScheduleComparison& cmp) {
  std::string s = "policy,progressed,n,mean_nb,median_nb,mean_delay,median_delay\n";
  for (const auto& r : cmp.summary)
    s += to_string(r.policy) + ',' + (r.progressed ? "1" : "0") + ',' + std::to_string(r.n) + ',' +
         format_number(r.mean_nb) + ',' + format_number(r.median_nb) + ',' + format_number(r.mean_delay) + ',' +
         format_number(r.median_delay) + '\n';
  return s;
}

// ---- hazard-ratio effects ----

double contrast_delta(const Contrast& c) {
  switch (c.kind) {
    case ContrastKind::PsaValue:
      if (c.value < 0.0 || c.reference < 0.0) throw InvalidArgument("PSA contrast values must be ≥ 0");
      return transform_psa(c.value) - transform_psa(c.reference);
    case ContrastKind::PsaSlope: return c.value - c.reference;
    case ContrastKind::CoreRatio: {
      const auto logit = [](double p) {
        if (!(p > 0.0 && p < 1.0)) throw InvalidArgument("core-ratio contrast values must lie in (0, 1)");
        return std::log(p / (1.0 - p));
      };
      return logit(c.value) - logit(c.reference);
    }
  }
  return 0.0;
}

std::vector<EffectRow> effect_curves(const PosteriorSamples& posterior, const std::vector<Contrast>& contrasts) {
  if (posterior.draws.empty()) throw InvalidArgument("effect_curves: the posterior holds no draws");
  std::vector<EffectRow> out;
  for (const auto& c : contrasts) {
    const int idx = c.kind == ContrastKind::PsaValue ? 0 : c.kind == ContrastKind::PsaSlope ? 1 : 2;
    if (idx >= posterior.spec.n_alpha()) throw InvalidArgument("core-ratio contrasts need an ICJM2 posterior");
    const double delta = contrast_delta(c);
    std::vector<double> hr;
    for (const auto& d : posterior.draws) hr.push_back(std::exp(d.alpha[static_cast<std::size_t>(c.cause)](idx) * delta));
    EffectRow row{c.name, c.cause, c.value, c.reference, mean_of(hr), 0.0, 0.0};
    std::sort(hr.begin(), hr.end());
    row.lower = quantile_sorted(hr, 0.025);
    row.upper = quantile_sorted(hr, 0.975);
    out.push_back(row);
  }
  return out;
}

std::vector<Contrast> contrast_sweep(const std::string& name, Cause cause, ContrastKind kind, double reference,
                                     const std::vector<double>& values) {
  std::vector<Contrast> out;
  for (double v : values) out.push_back({name, cause, kind, v, reference});
  return out;
}

std::string effect_csv(const std::vector<EffectRow>& rows) {
  std::string s = "contrast,cause,value,reference,hr_mean,hr_lower,hr_upper\n";
  for (const auto& r : rows)
    s += r.name + ',' + to_string(r.cause) + ',' + format_number(r.value) + ',' + format_number(r.reference) + ',' +
         format_number(r.mean) + ',' + format_number(r.lower) + ',' + format_number(r.upper) + '\n';
  return s;
}

}  // namespace icjm
