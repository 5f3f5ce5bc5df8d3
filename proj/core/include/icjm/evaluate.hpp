#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "icjm/schedule.hpp"
#include "icjm/simulate.hpp"

namespace icjm {

// ---- Aalen-Johansen ----

struct CompetingEvent {
  double time = 0.0;
  int cause = 0;  // 0 censored, 1 progression, 2 treatment
};

struct CIFEstimate {
  std::vector<double> times;                  // distinct event times
  std::array<std::vector<double>, 2> cif;     // causes 1 and 2, right-continuous steps at times
  std::vector<double> survival;               // all-cause survival after each time

  /// Step-function value of cause (1 or 2) at t.
  double at(int cause, double t) const;
};

CIFEstimate aalen_johansen(const std::vector<CompetingEvent>& events);
/// Observed events with interval-censored progressions at their interval midpoint.
std::vector<CompetingEvent> competing_events(const Dataset& ds);
std::string cif_csv(const CIFEstimate& est);

// ---- prediction error ----

struct PredictionErrorRow {
  double start = 0.0;
  std::size_t n_at_risk = 0;
  double mean_error = 0.0;  // predicted - true
  double sd_error = 0.0;
  double lower = 0.0, upper = 0.0;  // 2.5% and 97.5% of the errors
  std::vector<std::string> patient_ids;
  std::vector<double> predicted, truth;
};

struct PredictionErrorConfig {
  std::vector<double> starts{0.0, 1.0, 2.0, 3.0, 4.0, 6.0};
  double window = 2.0;
  PredictConfig predict;
};

/// Window risk after a clean biopsy at each start, posterior prediction versus
/// the same risk at the generating parameters and true random effects. At risk
/// at s: no event and no censoring by s.
std::vector<PredictionErrorRow> prediction_error_study(const PosteriorSamples& posterior, const SimulatedDataset& test,
                                                       const PredictionErrorConfig& cfg);
std::string prediction_error_csv(const std::vector<PredictionErrorRow>& rows);

// ---- schedule comparison ----

enum class Policy { Annual, PASS, Personalized };
std::string to_string(Policy p);
Policy parse_policy(const std::string& s);

/// Fixed biopsy times of a policy up to the horizon (initial biopsy at 0 excluded).
std::vector<double> fixed_policy_times(Policy p, double horizon);

struct ScheduleComparisonRow {
  std::string patient_id;
  Policy policy = Policy::Annual;
  int n_biopsies = 0;  // including the initial biopsy at 0
  std::optional<double> delay;
  bool progressed = false;
  std::vector<double> biopsy_times;
};

struct PolicySummary {
  Policy policy = Policy::Annual;
  bool progressed = false;
  std::size_t n = 0;
  double mean_nb = 0.0, median_nb = 0.0;
  double mean_delay = 0.0, median_delay = 0.0;  // progressors only
};

struct ComparisonConfig {
  std::vector<Policy> policies{Policy::Annual, Policy::PASS, Policy::Personalized};
  VisitGrid grid = VisitGrid::regular(0.5, 10.0);
  std::vector<double> phi_grid = default_threshold_grid();
  double max_dd = 1.5;
  PredictConfig predict;
};

struct ScheduleComparison {
  std::vector<ScheduleComparisonRow> rows;
  std::vector<PolicySummary> summary;
};

/// Replays a fixed policy against a known progression time.
ScheduleComparisonRow replay_fixed_policy(const std::string& id, Policy p, double true_t_prg, double horizon);

/// Replays every test patient under each policy without early treatment or
/// dropout; the personalized policy re-plans at each visit on data seen so far.
ScheduleComparison run_schedule_comparison(const PosteriorSamples& posterior, const SimulatedDataset& test,
                                           const ComparisonConfig& cfg);
std::vector<PolicySummary> summarise(const std::vector<ScheduleComparisonRow>& rows);

/// First n_progressed patients whose latent progression precedes the horizon and
/// first n_free whose does not, in dataset order.
SimulatedDataset select_strata(const SimulatedDataset& sim, std::size_t n_progressed, std::size_t n_free,
                               double horizon = 10.0);

std::string comparison_csv(const ScheduleComparison& cmp);
std::string comparison_summary_csv(const ScheduleComparison& cmp);

// ---- hazard-ratio effects ----

enum class ContrastKind { PsaValue, PsaSlope, CoreRatio };

struct Contrast {
  std::string name;
  Cause cause = Cause::Progression;
  ContrastKind kind = ContrastKind::PsaValue;
  double value = 0.0;      // ng/ml, transformed units per year, or a ratio in (0, 1)
  double reference = 0.0;
};

struct EffectRow {
  std::string name;
  Cause cause = Cause::Progression;
  double value = 0.0, reference = 0.0;
  double mean = 0.0, lower = 0.0, upper = 0.0;
};

/// Change of the contrast on the scale the association parameter multiplies.
double contrast_delta(const Contrast& c);
/// HR = exp(alpha * delta) per draw; mean and 95% band.
std::vector<EffectRow> effect_curves(const PosteriorSamples& posterior, const std::vector<Contrast>& contrasts);
/// One contrast per value against a common reference, for plotting.
std::vector<Contrast> contrast_sweep(const std::string& name, Cause cause, ContrastKind kind, double reference,
                                     const std::vector<double>& values);
std::string effect_csv(const std::vector<EffectRow>& rows);

}  // namespace icjm
