#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "icjm/data.hpp"
#include "icjm/model.hpp"
#include "icjm/random.hpp"

namespace icjm {

struct MCMCConfig {
  int n_iterations = 4000;
  int n_burnin = 2000;
  int thinning = 2;
  int n_chains = 3;
  std::uint64_t seed = 1;
  int threads = 0;  // 0: one per chain

  double target_scalar = 0.44;
  double target_vector = 0.234;
  double rm_decay = 1.0;
  double rm_offset = 10.0;

  int hazard_steps = 3;        // MH steps per cause-specific hazard block and sweep
  int beta_steps = 2;
  int covariance_start = 200;  // sweeps before empirical proposal covariances are used
  int covariance_every = 50;
  int divergence_window = 500;
  double init_jitter = 0.1;    // per-chain perturbation of the starting values

  void validate() const;
  /// 3 chains x 10000 iterations, burn-in 5000, thinning 10.
  static MCMCConfig long_run();
};

struct BlockAcceptance {
  std::string block;
  int chain = 0;
  double rate = 0.0;
  double target = 0.0;
};

struct PosteriorSamples {
  ModelSpec spec;
  MCMCConfig config;
  std::vector<ModelParameters> draws;  // chains concatenated
  std::vector<int> chain;              // chain label per draw
  std::vector<BlockAcceptance> acceptance;
  std::map<std::string, double> rhat;
  std::string data_provenance;

  std::size_t size() const { return draws.size(); }
  int n_chains() const;
  /// Draws x flattened parameters, in parameter_names(spec) order.
  Eigen::MatrixXd matrix() const;
  Eigen::MatrixXd chain_matrix(int c) const;
  std::vector<std::string> names() const { return parameter_names(spec); }
  /// Posterior mean of each flattened parameter.
  ModelParameters mean() const;
  double quantile(const std::string& name, double q) const;
  /// Every `stride`-th draw position for an evenly spaced subset of size n.
  std::vector<std::size_t> even_subset(std::size_t n) const;
};

/// Knots of the NCS (pooled measurement and event times) and baseline hazard
/// (event times, interval-censored progressions at their midpoints).
ModelSpec default_spec(const Dataset& ds, Variant variant);

/// Callback receiving (chain, iteration) after each sweep; may be empty.
using ProgressFn = std::function<void(int, int)>;

PosteriorSamples fit(const Dataset& ds, const ModelSpec& spec, const MCMCConfig& cfg, const ProgressFn& progress = {});

// full conditionals
double gibbs_tau_h0(Rng& rng, const Eigen::VectorXd& gamma_h0, const PenaltyMatrix& penalty, const PriorConstants& pr);
Eigen::MatrixXd gibbs_omega(Rng& rng, const std::vector<Eigen::VectorXd>& u, double tau_u, const ModelSpec& spec);
/// tau_u given Omega: GIG(a - p nu / 2, omega_scale tr(Omega^-1), 2 b) for the
/// Gamma(a, b) prior and the IW(nu, (omega_scale / tau_u) I) density of Omega.
double gibbs_tau_u(Rng& rng, const Eigen::MatrixXd& omega, const ModelSpec& spec);

/// Split R-hat of one scalar across chains of equal length.
double gelman_rubin(const std::vector<std::vector<double>>& chains);
/// Split R-hat per column; each matrix holds one chain (rows = draws).
std::vector<double> gelman_rubin(const std::vector<Eigen::MatrixXd>& chains);

/// JSON archive, or CBOR when the extension is .bin / .cbor.
void write_posterior(const PosteriorSamples& post, const std::filesystem::path& path);
PosteriorSamples read_posterior(const std::filesystem::path& path);

inline constexpr int kPosteriorFormatVersion = 1;

}  // namespace icjm
