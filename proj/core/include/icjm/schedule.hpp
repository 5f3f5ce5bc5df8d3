#pragma once

#include <string>
#include <vector>

#include "icjm/predict.hpp"

namespace icjm {

struct VisitGrid {
  std::vector<double> times;  // increasing; the last one is the horizon

  double horizon() const { return times.back(); }
  bool contains(double t) const;
  void validate() const;
  /// step, 2 step, ..., horizon.
  static VisitGrid regular(double step = 0.5, double horizon = 10.0);
};

enum class Decision { Defer, Biopsy };

/// Biopsy iff risk >= phi.
Decision decide_current_visit(double risk, double phi);

struct VisitDecision {
  double time = 0.0;
  double risk = 0.0;  // conditional on the tentative last biopsy at that point
  bool biopsy = false;
};

struct BiopsySchedule {
  double threshold = 0.0;
  std::vector<double> planned_times;  // ends with the horizon
  std::vector<VisitDecision> trace;
};

struct ScheduleMetrics {
  double expected_nb = 0.0;
  double expected_dd = 0.0;
  double loss = 0.0;
};

/// Walks the visits from t_v onward on a no-treatment curve, moving the
/// tentative last biopsy to every visit whose conditional risk reaches phi.
BiopsySchedule plan_schedule(const RiskCurve& curve, const VisitGrid& grid, double t_v, double phi);

/// Knots for a scheduling curve: t_b and every visit after it.
std::vector<double> schedule_knots(double t_b, const VisitGrid& grid);

/// Builds the no-treatment curve for ctx and plans on it.
BiopsySchedule generate_schedule(const PredictionContext& ctx, const VisitGrid& grid, double phi,
                                 const PosteriorSamples& posterior, const PredictConfig& cfg);

/// E[T | a < T <= b] from the pooled mean curve.
double expected_progression_time(const RiskCurve& curve, double a, double b);
double expected_nb(const BiopsySchedule& schedule, const RiskCurve& curve);
double expected_dd(const BiopsySchedule& schedule, const RiskCurve& curve);
ScheduleMetrics schedule_metrics(const BiopsySchedule& schedule, const RiskCurve& curve);
/// sqrt((E[Nb] - 1)^2 + E[Dd]^2).
double schedule_loss(double expected_nb, double expected_dd);

/// 0.02, 0.04, ..., 0.50.
std::vector<double> default_threshold_grid();

struct ThresholdCandidate {
  double phi = 0.0;
  BiopsySchedule schedule;
  ScheduleMetrics metrics;
};

struct ThresholdChoice {
  double phi = 0.0;
  BiopsySchedule schedule;
  ScheduleMetrics metrics;
  bool constraint_relaxed = false;  // no candidate met max_dd; the smallest E[Dd] was taken
  std::vector<ThresholdCandidate> candidates;
};

ThresholdChoice optimal_threshold(const RiskCurve& curve, const VisitGrid& grid, double t_v,
                                  const std::vector<double>& phi_grid, double max_dd);
ThresholdChoice optimal_threshold(const PredictionContext& ctx, const VisitGrid& grid,
                                  const PosteriorSamples& posterior, const PredictConfig& cfg,
                                  const std::vector<double>& phi_grid, double max_dd);

std::string schedule_json(const ThresholdChoice& choice, const std::string& patient_id);
std::string schedule_csv_header();
std::string schedule_csv_row(const ThresholdChoice& choice, const std::string& patient_id);

}  // namespace icjm
