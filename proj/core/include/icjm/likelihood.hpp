#pragma once

#include <Eigen/Dense>
#include <memory>
#include <span>

#include "icjm/data.hpp"
#include "icjm/model.hpp"
#include "icjm/quadrature.hpp"

namespace icjm {

/// Spline rows needed to evaluate hazards at a fixed set of times.
struct TimeDesign {
  Eigen::VectorXd t;
  Eigen::MatrixXd G;   // baseline-hazard B-spline rows
  Eigen::MatrixXd C;   // natural spline rows at t
  Eigen::MatrixXd dC;  // C(t) - C(t - 1)

  Eigen::Index rows() const { return t.size(); }
};

/// Spline evaluators for one ModelSpec; cheap to copy.
class ModelBasis {
 public:
  explicit ModelBasis(const ModelSpec& spec);

  const ModelSpec& spec() const { return *spec_; }
  const std::shared_ptr<const ModelSpec>& spec_ptr() const { return spec_; }
  const NaturalCubicSpline& ncs() const { return ncs_; }
  Eigen::RowVector3d ncs_row(double t) const;
  Eigen::RowVectorXd h0_row(double t) const;
  TimeDesign design(std::span<const double> times) const;

 private:
  std::shared_ptr<const ModelSpec> spec_;
  NaturalCubicSpline ncs_;
};

// ---- longitudinal submodels ----

double mean_psa(double t, const Eigen::VectorXd& beta, const Eigen::VectorXd& u, double age, const ModelSpec& spec);
double mean_cr_logit(double t, const Eigen::VectorXd& beta, const Eigen::VectorXd& u, const ModelSpec& spec);

/// log2(PSA + 1), the modelled PSA scale.
double transform_psa(double psa);

/// Log density of a location-0 Student t with 3 df and precision tau at r.
double log_student_t3(double r, double tau);
double loglik_psa_obs(const LongitudinalObservation& obs, double m, double tau_eps);
double loglik_cr_obs(const LongitudinalObservation& obs, double logit_p);
/// Binomial log-pmf with success probability inverse-logit(logit_p).
double log_binomial_logit(int k, int n, double logit_p);

// ---- hazards ----

/// Log hazard of cause k at each row of a time design.
Eigen::VectorXd log_hazard_rows(Cause k, const TimeDesign& d, const ModelParameters& params, const Eigen::VectorXd& u,
                                const BaselineCovariates& cov, const ModelSpec& spec);

double log_hazard(Cause k, double t, const ModelParameters& params, const Eigen::VectorXd& u,
                  const BaselineCovariates& cov, const ModelSpec& spec);

/// GK15 nodes and weights on hazard_panels(a, b); empty when a == b.
QuadratureRule cumulative_rule(double a, double b);

/// Integral of the cause-k hazard over [a, b] by GK15 on hazard_panels(a, b).
double cumulative_hazard(Cause k, double a, double b, const ModelParameters& params, const Eigen::VectorXd& u,
                         const BaselineCovariates& cov, const ModelSpec& spec);

// ---- per-patient likelihood ----

/// Precomputed designs for one patient; evaluation is then a handful of
/// matrix-vector products.
class PatientModel {
 public:
  PatientModel(const PatientRecord& patient, const ModelBasis& basis);

  const PatientRecord& record() const { return *record_; }

  double loglik_longitudinal(const ModelParameters& params, const Eigen::VectorXd& u) const;
  /// Survival terms involving only the progression (resp. treatment) hazard;
  /// they sum to loglik_survival.
  double loglik_survival_prg(const ModelParameters& params, const Eigen::VectorXd& u) const;
  double loglik_survival_trt(const ModelParameters& params, const Eigen::VectorXd& u) const;
  double loglik_survival(const ModelParameters& params, const Eigen::VectorXd& u) const;
  double loglik_joint(const ModelParameters& params, const Eigen::VectorXd& u) const;

  /// Random-effects design of the PSA observations (rows [1, C(t)]) and the
  /// transformed responses; used to shape random-effects proposals.
  const Eigen::MatrixXd& psa_z() const { return psa_z_; }
  const Eigen::VectorXd& psa_y() const { return psa_y_; }
  /// PSA fixed-effects design rows [1, C(t), age - 62].
  Eigen::MatrixXd psa_x() const;
  Eigen::Index n_cr() const { return cr_t_.size(); }
  /// Approximate longitudinal Fisher information for u at u = 0.
  Eigen::MatrixXd u_information(const ModelParameters& params) const;

 private:
  std::shared_ptr<const PatientRecord> record_;
  std::shared_ptr<const ModelSpec> spec_;
  double log_density_;
  Eigen::VectorXd psa_y_;
  Eigen::MatrixXd psa_z_;
  Eigen::VectorXd cr_t_, cr_k_, cr_n_, cr_lchoose_;
  TimeDesign before_;  // nodes on [0, t_prg_minus]
  Eigen::VectorXd before_w_;
  TimeDesign after_;  // nodes on [t_prg_minus, t_upper]
  Eigen::VectorXd after_w_;
  TimeDesign outer_;  // delta = 1: nodes s_j on the censoring interval
  Eigen::VectorXd outer_w_;
  TimeDesign inner_;  // delta = 1: 15 nodes on [t_prg_minus, s_j] for each j
  Eigen::VectorXd inner_w_;
  TimeDesign event_;  // delta = 2: the treatment time
};

double loglik_survival(const PatientRecord& patient, const ModelParameters& params, const Eigen::VectorXd& u,
                       const ModelSpec& spec);
double loglik_longitudinal(const PatientRecord& patient, const ModelParameters& params, const Eigen::VectorXd& u,
                           const ModelSpec& spec);
/// Longitudinal + survival + log N(u; 0, Omega).
double loglik_joint(const PatientRecord& patient, const ModelParameters& params, const Eigen::VectorXd& u,
                    const ModelSpec& spec);

// ---- priors ----

/// tau^(rank/2) exp(-tau/2 g'Mg) prior with its Gaussian normalising constant.
double log_pspline_prior(const Eigen::VectorXd& g, double tau, const PenaltyMatrix& penalty);
/// Sum of all prior terms; -inf outside the support.
double log_prior(const ModelParameters& params, const ModelSpec& spec);
/// IW scale (omega_scale / tau_u) I.
Eigen::MatrixXd omega_prior_scale(double tau_u, const ModelSpec& spec);

}  // namespace icjm
