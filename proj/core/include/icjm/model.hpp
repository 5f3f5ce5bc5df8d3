#pragma once

#include <Eigen/Dense>
#include <array>
#include <string>
#include <vector>

#include "icjm/spline.hpp"

namespace icjm {

enum class Variant { ICJM1, ICJM2 };
enum class Cause { Progression = 0, Treatment = 1 };

inline constexpr int kNumCauses = 2;
inline constexpr double kAgeCentre = 62.0;

std::string to_string(Variant v);
Variant parse_variant(const std::string& s);
std::string to_string(Cause k);

/// Prior hyperconstants. Gamma distributions use the shape/rate convention.
struct PriorConstants {
  double normal_variance = 100.0;
  double tau_eps_shape = 0.01;
  double tau_eps_rate = 0.01;
  double tau_h0_shape = 5.0;
  double tau_h0_rate = 0.5;
  double tau_u_shape = 0.5;
  double tau_u_rate = 0.01;
  double omega_scale = 4.0;  // IW scale matrix is (omega_scale / tau_u) I
  bool operator==(const PriorConstants&) const = default;
};

struct ModelSpec {
  Variant variant = Variant::ICJM1;
  KnotVector ncs_knots;
  KnotVector h0_knots;
  int h0_degree = 3;
  PenaltyMatrix penalty;
  PriorConstants priors;

  static ModelSpec make(Variant variant, KnotVector ncs_knots, KnotVector h0_knots,
                        int penalty_order = 2);

  int n_beta() const { return variant == Variant::ICJM1 ? 5 : 8; }
  int n_u() const { return variant == Variant::ICJM1 ? 4 : 7; }
  int n_alpha() const { return variant == Variant::ICJM1 ? 2 : 3; }
  int n_h0() const { return static_cast<int>(h0_knots.interior.size()) + h0_degree + 1; }
  /// IW degrees of freedom n_u + 1.
  double omega_df() const { return n_u() + 1.0; }

  void validate() const;
};

/// Population-level parameters theta.
struct ModelParameters {
  Eigen::VectorXd beta;   // PSA: b0..b4 (b4 multiplies age - 62); ICJM2 adds b5..b7 for the core ratio
  double tau_eps = 1.0;
  Eigen::MatrixXd omega;
  double tau_u = 1.0;
  std::array<Eigen::VectorXd, kNumCauses> gamma_h0;
  std::array<double, kNumCauses> tau_h0{1.0, 1.0};
  std::array<double, kNumCauses> gamma{0.0, 0.0};
  // per cause: alpha_1 (PSA value), alpha_2 (PSA yearly change), [alpha_1,CR]
  std::array<Eigen::VectorXd, kNumCauses> alpha;

  static ModelParameters zeros(const ModelSpec& spec);

  /// Throws InvalidArgument on dimension mismatch, non-finite values, non-PD
  /// Omega or non-positive precisions.
  void validate(const ModelSpec& spec) const;
  bool satisfies_invariants(const ModelSpec& spec) const;

  /// Flat vector in the order of parameter_names(); Omega contributes its upper triangle.
  std::vector<double> flatten() const;
  static ModelParameters unflatten(const ModelSpec& spec, const std::vector<double>& flat);
};

std::vector<std::string> parameter_names(const ModelSpec& spec);

/// Population means used to generate the simulation study cohorts (ICJM 1).
ModelParameters simulation_preset_parameters();

/// Knots paired with simulation_preset_parameters() when generating data.
KnotVector simulation_preset_ncs_knots();
KnotVector simulation_preset_h0_knots();
ModelSpec simulation_preset_spec();

}  // namespace icjm
