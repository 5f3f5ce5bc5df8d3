#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "icjm/data.hpp"
#include "icjm/model.hpp"
#include "icjm/random.hpp"

namespace icjm {

struct SimulationConfig {
  ModelParameters params = simulation_preset_parameters();
  ModelSpec spec = simulation_preset_spec();

  double age_mean = 62.0;
  double age_sd = 7.0;
  double age_min = 45.0;
  double age_max = 85.0;
  double density_mean = 0.12;  // log-normal matched on mean and sd
  double density_sd = 0.10;

  double psa_interval = 0.25;
  double psa_jitter = 14.0 / 365.25;   // uniform +- two weeks
  std::vector<double> biopsy_times{1.0, 2.0, 4.0, 6.0, 8.0, 10.0, 12.0};
  double biopsy_jitter = 1.0 / 12.0;   // uniform +- one month
  double censor_min = 1.5;             // censoring ~ U(censor_min, censor_max)
  double censor_max = 10.0;
  double horizon = 12.0;               // events after the horizon are never observed
  bool noise = true;
};

/// Competing event times on the simulation horizon; +inf when beyond it.
struct EventTimes {
  double t_prg = std::numeric_limits<double>::infinity();
  double t_trt = std::numeric_limits<double>::infinity();
  int cause = 0;  // 0 none before the horizon, 1 progression, 2 treatment
  /// Progression time had treatment not intervened (equals t_prg for cause 1).
  double latent_t_prg = std::numeric_limits<double>::infinity();
  double residual = 0.0;  // |H_total(T) - E| at the solved event time
};

struct GroundTruth {
  std::string patient_id;
  Eigen::VectorXd u;
  EventTimes events;
  double censoring_time = 0.0;
  std::vector<double> biopsy_schedule;  // jittered planned biopsies (initial biopsy at 0 excluded)
  /// Quarterly PSA over the full horizon, including times after the observed follow-up.
  std::vector<LongitudinalObservation> trajectory;
};

struct SimulatedPatient {
  PatientRecord record;
  GroundTruth truth;
};

struct EventProportions {
  double progression = 0.0;
  double treatment = 0.0;
  double censored = 0.0;
};

struct SimulatedDataset {
  Dataset data;
  std::vector<GroundTruth> truth;
  EventProportions proportions;
  SimulationConfig config;

  const GroundTruth& truth_for(const std::string& id) const;
};

/// Draw E ~ Exp(1) and solve H_prg(0,T) + H_trt(0,T) = E; the cause is
/// progression with probability h_prg(T) / (h_prg(T) + h_trt(T)).
EventTimes simulate_event_times(const SimulationConfig& cfg, const Eigen::VectorXd& u, const BaselineCovariates& cov,
                                Rng& rng);
EventTimes simulate_event_times(const SimulationConfig& cfg, const Eigen::VectorXd& u, const BaselineCovariates& cov,
                                std::uint64_t seed);
/// count independent draws sharing one hazard grid.
std::vector<EventTimes> simulate_event_times(const SimulationConfig& cfg, const Eigen::VectorXd& u,
                                             const BaselineCovariates& cov, Rng& rng, std::size_t count);

SimulatedPatient simulate_patient(const SimulationConfig& cfg, const std::string& id, std::uint64_t seed);
SimulatedDataset simulate_dataset(const SimulationConfig& cfg, int n, std::uint64_t seed);

EventProportions event_proportions(const Dataset& ds);

/// Writes longitudinal.csv, events.csv, ground_truth.csv, true_effects.csv,
/// trajectories.csv and model_spec.json into dir.
void write_simulation(const SimulatedDataset& sim, const std::filesystem::path& dir);
/// Reads the ground-truth files written by write_simulation (dataset excluded).
std::vector<GroundTruth> read_ground_truth(const std::filesystem::path& dir);
/// Dataset, ground truth and generating spec/parameters of a write_simulation directory.
SimulatedDataset read_simulation(const std::filesystem::path& dir);
/// Generating spec stored in model_spec.json (the file itself or its directory).
ModelSpec read_generating_spec(const std::filesystem::path& path);

}  // namespace icjm
