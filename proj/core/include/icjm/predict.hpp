#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "icjm/data.hpp"
#include "icjm/likelihood.hpp"
#include "icjm/mcmc.hpp"

namespace icjm {

/// What is known about a subject at prediction time.
struct PredictionContext {
  std::string patient_id;
  std::vector<LongitudinalObservation> history;
  double t_b = 0.0;  // last negative biopsy
  double t_v = 0.0;  // current visit; the subject is untreated up to t_v
  double t_y = 0.0;  // latest longitudinal measurement time
  BaselineCovariates covariates;

  void validate() const;
  /// History restricted to observations at or before t_y.
  static PredictionContext from_record(const PatientRecord& rec, double t_b, double t_v, double t_y);
};

enum class RiskKind {
  NoTreatment,    // progression risk ignoring the competing treatment hazard (scheduling risk)
  Full,           // cumulative incidence given survival of both causes to t_v
  AtVisitBiopsy,  // Full with t_v = t_b
};

std::string to_string(RiskKind k);
RiskKind parse_risk_kind(const std::string& s);

struct PredictConfig {
  int n_draws = 400;  // L posterior draws, evenly spaced through the archive
  int n_mh = 250;     // random-effects MH steps per draw
  int warmup = 50;    // of which adaptive
  std::uint64_t seed = 1;
  double horizon = 10.0;
  double visit_step = 0.5;

  void validate() const;
};

struct RiskCurve {
  RiskKind kind = RiskKind::NoTreatment;
  std::vector<double> grid;
  std::vector<double> knots;  // segment ends; grid adds the GK15 nodes of each segment
  std::vector<double> mean, lower, upper;
  Eigen::MatrixXd per_draw;  // draws x grid
  std::vector<std::size_t> draw_index;  // posterior positions behind each row
  std::vector<Eigen::VectorXd> effects;  // random effects sampled for each row
  double t_b = 0.0;
  std::optional<double> t_v;
  double t_y = 0.0;

  /// Linear interpolation of the mean curve.
  double mean_at(double t) const;
  /// Linear interpolation of every draw's curve at t.
  Eigen::VectorXd draws_at(double t) const;
};

struct RiskPoint {
  double mean = 0.0, lower = 0.0, upper = 0.0;
  Eigen::VectorXd per_draw;
};

/// Random-effects posterior of one subject given a parameter draw.
class SubjectPosterior {
 public:
  SubjectPosterior(const PredictionContext& ctx, const ModelSpec& spec);

  /// Longitudinal terms + N(u; 0, Omega) - H_prg(0, t_b) [- H_trt(0, t_v)].
  double log_target(const ModelParameters& params, const Eigen::VectorXd& u, bool condition_on_tv) const;
  /// Gaussian approximation to the longitudinal posterior mode; MH start.
  Eigen::VectorXd start(const ModelParameters& params) const;
  /// Final state of an n_mh-step adaptive MH chain.
  Eigen::VectorXd sample(const ModelParameters& params, bool condition_on_tv, int n_mh, int warmup, Rng& rng) const;

 private:
  std::shared_ptr<const ModelSpec> spec_;
  PatientModel model_;
  TimeDesign prg_;  // nodes on [0, t_b]
  Eigen::VectorXd prg_w_;
  TimeDesign trt_;  // nodes on [0, t_v]
  Eigen::VectorXd trt_w_;
  BaselineCovariates cov_;
};

Eigen::VectorXd sample_subject_effects(const PredictionContext& ctx, const ModelParameters& draw,
                                       const ModelSpec& spec, bool condition_on_tv, int n_mh, std::uint64_t seed,
                                       int warmup = 50);

/// Risk curves for one (params, u) on a grid starting at t_b; spline rows
/// are precomputed so repeated evaluation is cheap.
class RiskEngine {
 public:
  RiskEngine(const ModelBasis& basis, const BaselineCovariates& cov, double t_b, double t_v,
             std::vector<double> grid, bool nested);

  const std::vector<double>& grid() const { return grid_; }
  Eigen::VectorXd evaluate(RiskKind kind, const ModelParameters& params, const Eigen::VectorXd& u) const;

 private:
  std::shared_ptr<const ModelSpec> spec_;
  BaselineCovariates cov_;
  double t_b_, t_v_;
  std::vector<double> grid_;
  std::vector<double> edges_;
  std::vector<std::size_t> grid_edge_;
  TimeDesign nodes_;
  Eigen::VectorXd w_;
  bool nested_;
  TimeDesign inner_;
  Eigen::VectorXd inner_w_;
};

/// Per-draw risk path for fixed parameters and random effects.
Eigen::VectorXd risk_path(RiskKind kind, const ModelParameters& params, const Eigen::VectorXd& u,
                          const BaselineCovariates& cov, const ModelSpec& spec, double t_b, double t_v,
                          const std::vector<double>& grid);

/// t_b, the visit-step multiples after it, t_v (when inside) and the horizon.
std::vector<double> risk_knots(double t_b, double t_v, double horizon, double visit_step);
/// The knots together with the GK15 nodes of every knot interval.
std::vector<double> risk_grid(const std::vector<double>& knots);

RiskCurve predict_risk_curve(RiskKind kind, const PredictionContext& ctx, const PosteriorSamples& posterior,
                             const PredictConfig& cfg);
/// Same, on explicit knots (first knot must be t_b).
RiskCurve predict_risk_curve(RiskKind kind, const PredictionContext& ctx, const PosteriorSamples& posterior,
                             const PredictConfig& cfg, std::vector<double> knots);

RiskPoint risk_full(const PredictionContext& ctx, double t_p, const PosteriorSamples& posterior,
                    const PredictConfig& cfg);
RiskPoint risk_no_treatment(const PredictionContext& ctx, double t_p, const PosteriorSamples& posterior,
                            const PredictConfig& cfg);
RiskPoint risk_at_visit_biopsy(const PredictionContext& ctx, double t_p, const PosteriorSamples& posterior,
                               const PredictConfig& cfg);

/// [Pi(t_e) - Pi(t_tilde_b)] / [1 - Pi(t_tilde_b)] per draw, then averaged.
double conditional_risk_from_curve(const RiskCurve& curve, double t_tilde_b, double t_e);

std::string risk_curve_csv(const RiskCurve& curve);
std::string risk_curve_json(const RiskCurve& curve, const std::string& patient_id);

}  // namespace icjm
