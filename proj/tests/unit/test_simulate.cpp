#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "icjm/error.hpp"
#include "icjm/likelihood.hpp"
#include "icjm/simulate.hpp"

using namespace icjm;

namespace {

SimulationConfig constant_hazard_config(double hp, double ht, double horizon = 40.0) {
  SimulationConfig cfg;
  auto& p = cfg.params;
  for (int k = 0; k < kNumCauses; ++k) {
    const double h = k == 0 ? hp : ht;
    p.gamma_h0[k].setConstant(h > 0 ? std::log(h) : -800.0);
    p.gamma[k] = 0.0;
    p.alpha[k].setZero();
  }
  cfg.horizon = horizon;
  return cfg;
}

// Kolmogorov statistic sqrt(n) * sup |F_n - F| against Exp(rate)
double ks_statistic(std::vector<double> x, double rate) {
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double f = -std::expm1(-rate * x[i]);
    d = std::max({d, std::abs(f - static_cast<double>(i) / n), std::abs(static_cast<double>(i + 1) / n - f)});
  }
  return std::sqrt(n) * d;
}

}  // namespace

TEST(SimulateEvents, CompetingExponentials) {
  const auto cfg = constant_hazard_config(0.3, 0.1);
  const Eigen::VectorXd u = Eigen::VectorXd::Zero(4);
  auto rng = make_rng(20240601);
  const auto draws = simulate_event_times(cfg, u, BaselineCovariates{62.0, 0.12}, rng, 100000);
  std::vector<double> times;
  std::size_t n_prg = 0;
  for (const auto& ev : draws) {
    ASSERT_NE(ev.cause, 0);
    if (ev.cause == 1) ++n_prg;
    times.push_back(ev.cause == 1 ? ev.t_prg : ev.t_trt);
    ASSERT_LT(ev.residual, 1e-8);
  }
  EXPECT_NEAR(static_cast<double>(n_prg) / 1e5, 0.75, 0.005);
  // 0.1% critical value of the Kolmogorov distribution
  EXPECT_LT(ks_statistic(times, 0.4), 1.95);
}

TEST(SimulateEvents, LatentProgressionAfterTreatmentIsExponential) {
  const auto cfg = constant_hazard_config(0.3, 0.1);
  auto rng = make_rng(7);
  const auto draws = simulate_event_times(cfg, Eigen::VectorXd::Zero(4), BaselineCovariates{62.0, 0.12}, rng, 40000);
  std::vector<double> latent;
  for (const auto& ev : draws) {
    if (ev.cause == 1) EXPECT_EQ(ev.latent_t_prg, ev.t_prg);
    latent.push_back(ev.latent_t_prg);
  }
  // without treatment the progression time is Exp(0.3) whatever the competing cause did
  EXPECT_LT(ks_statistic(latent, 0.3), 1.95);
}

TEST(SimulateEvents, ZeroTreatmentHazardAlwaysProgression) {
  const auto cfg = constant_hazard_config(0.3, 0.0);
  auto rng = make_rng(3);
  for (const auto& ev : simulate_event_times(cfg, Eigen::VectorXd::Zero(4), BaselineCovariates{62.0, 0.12}, rng, 2000))
    EXPECT_EQ(ev.cause, 1);
}

TEST(SimulateEvents, DoublingHazardsHalvesMedian) {
  auto median_time = [](const SimulationConfig& cfg) {
    auto rng = make_rng(11);
    const auto draws = simulate_event_times(cfg, Eigen::VectorXd::Zero(4), BaselineCovariates{62.0, 0.12}, rng, 20001);
    std::vector<double> t;
    for (const auto& ev : draws) t.push_back(std::min(ev.t_prg, ev.t_trt));
    std::nth_element(t.begin(), t.begin() + 10000, t.end());
    return t[10000];
  };
  // identical uniforms under both configurations make the scaling exact up to root-finder error
  const double m1 = median_time(constant_hazard_config(0.3, 0.1));
  const double m2 = median_time(constant_hazard_config(0.6, 0.2));
  EXPECT_NEAR(m2, 0.5 * m1, 1e-8);
  EXPECT_NEAR(m1, std::log(2.0) / 0.4, 0.02);
}

TEST(SimulateEvents, BeyondHorizonIsInfinite) {
  const auto cfg = constant_hazard_config(1e-6, 1e-6, 5.0);
  auto rng = make_rng(5);
  for (const auto& ev : simulate_event_times(cfg, Eigen::VectorXd::Zero(4), BaselineCovariates{62.0, 0.12}, rng, 200)) {
    EXPECT_EQ(ev.cause, 0);
    EXPECT_TRUE(std::isinf(ev.t_prg));
    EXPECT_TRUE(std::isinf(ev.t_trt));
  }
}

TEST(SimulatePatient, NoiseFreeInversion) {
  SimulationConfig cfg;
  cfg.noise = false;
  cfg.params.omega = 1e-16 * Eigen::MatrixXd::Identity(4, 4);
  cfg.age_mean = 62.0;
  cfg.age_sd = 1e-9;
  const auto sp = simulate_patient(cfg, "p1", 99);
  EXPECT_NEAR(sp.record.covariates.age, 62.0, 1e-6);
  ASSERT_FALSE(sp.record.longitudinal.empty());
  for (const auto& o : sp.record.longitudinal) {
    const double m = mean_psa(o.time, cfg.params.beta, sp.truth.u, sp.record.covariates.age, cfg.spec);
    EXPECT_NEAR(std::log2(o.value + 1.0), m, 1e-12);
  }
}

TEST(SimulatePatient, NoiseFreeInversionWithRandomEffects) {
  SimulationConfig cfg;
  cfg.noise = false;
  const auto sp = simulate_patient(cfg, "p1", 123);
  for (const auto& o : sp.truth.trajectory) {
    const double m = mean_psa(o.time, cfg.params.beta, sp.truth.u, sp.record.covariates.age, cfg.spec);
    if (m > 0) EXPECT_NEAR(std::log2(o.value + 1.0), m, 1e-12);
  }
}

TEST(SimulatePatient, Deterministic) {
  const SimulationConfig cfg;
  const auto a = simulate_patient(cfg, "x", 2718);
  const auto b = simulate_patient(cfg, "x", 2718);
  EXPECT_EQ(a.record.covariates.age, b.record.covariates.age);
  EXPECT_EQ(a.truth.u, b.truth.u);
  EXPECT_EQ(a.record.event.delta, b.record.event.delta);
  EXPECT_EQ(a.record.event.t_upper, b.record.event.t_upper);
  ASSERT_EQ(a.record.longitudinal.size(), b.record.longitudinal.size());
  for (std::size_t i = 0; i < a.record.longitudinal.size(); ++i)
    EXPECT_EQ(a.record.longitudinal[i].value, b.record.longitudinal[i].value);
  const auto c = simulate_patient(cfg, "x", 2719);
  EXPECT_NE(a.truth.u, c.truth.u);
}

TEST(SimulatePatient, IntervalBookkeeping) {
  // hunt for a patient progressing at 2 < T <= 4 on the unjittered grid
  SimulationConfig cfg;
  cfg.biopsy_jitter = 0.0;
  cfg.censor_min = 11.0;
  cfg.censor_max = 11.5;
  bool found = false;
  for (std::uint64_t s = 0; s < 5000 && !found; ++s) {
    const auto sp = simulate_patient(cfg, "p", s);
    const auto& ev = sp.truth.events;
    if (ev.cause == 1 && ev.t_prg > 2.0 && ev.t_prg <= 4.0) {
      found = true;
      EXPECT_EQ(sp.record.event.delta, 1);
      EXPECT_DOUBLE_EQ(sp.record.event.t_prg_minus, 2.0);
      EXPECT_DOUBLE_EQ(sp.record.event.t_upper, 4.0);
    }
  }
  EXPECT_TRUE(found);
}

TEST(SimulateDataset, RecordInvariants) {
  const auto sim = simulate_dataset(SimulationConfig{}, 600, 8);
  ASSERT_EQ(sim.data.size(), 600u);
  validate_dataset(sim.data);
  for (std::size_t i = 0; i < sim.data.patients.size(); ++i) {
    const auto& r = sim.data.patients[i];
    const auto& t = sim.truth[i];
    EXPECT_EQ(r.patient_id, t.patient_id);
    if (t.events.cause != 0) EXPECT_LT(t.events.residual, 1e-8);
    if (r.event.delta == 1) {
      EXPECT_LT(r.event.t_prg_minus, t.events.t_prg);
      EXPECT_LE(t.events.t_prg, r.event.t_upper);
    } else if (r.event.delta == 2) {
      EXPECT_EQ(t.events.t_trt, r.event.t_upper);
    } else {
      EXPECT_EQ(r.event.t_upper, t.censoring_time);
    }
    for (const auto& o : r.longitudinal) EXPECT_LE(o.time, r.event.t_upper);
  }
}

TEST(SimulateDataset, CalibratedProportions) {
  const auto sim = simulate_dataset(SimulationConfig{}, 2000, 42);
  EXPECT_NEAR(100.0 * sim.proportions.progression, 28.29, 5.0);
  EXPECT_NEAR(100.0 * sim.proportions.treatment, 7.92, 5.0);
  EXPECT_NEAR(100.0 * sim.proportions.censored, 63.79, 5.0);
}

TEST(SimulateDataset, SinglePatient) {
  const auto sim = simulate_dataset(SimulationConfig{}, 1, 1);
  ASSERT_EQ(sim.data.size(), 1u);
  EXPECT_EQ(sim.data.patients[0].patient_id, "p1");
  validate_dataset(sim.data);
  EXPECT_THROW(simulate_dataset(SimulationConfig{}, 0, 1), InvalidArgument);
}

TEST(SimulateDataset, GroundTruthRoundTrip) {
  const auto sim = simulate_dataset(SimulationConfig{}, 25, 77);
  const auto dir = std::filesystem::temp_directory_path() / "icjm_sim_roundtrip";
  std::filesystem::remove_all(dir);
  write_simulation(sim, dir);
  const auto ds = load_dataset(dir);
  ASSERT_EQ(ds.size(), 25u);
  for (std::size_t i = 0; i < ds.patients.size(); ++i) {
    EXPECT_EQ(ds.patients[i].event.delta, sim.data.patients[i].event.delta);
    EXPECT_EQ(ds.patients[i].event.t_upper, sim.data.patients[i].event.t_upper);
    EXPECT_EQ(ds.patients[i].longitudinal.size(), sim.data.patients[i].longitudinal.size());
  }
  const auto truth = read_ground_truth(dir);
  ASSERT_EQ(truth.size(), 25u);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    EXPECT_EQ(truth[i].u, sim.truth[i].u);
    EXPECT_EQ(truth[i].events.cause, sim.truth[i].events.cause);
    EXPECT_EQ(truth[i].events.latent_t_prg, sim.truth[i].events.latent_t_prg);
    EXPECT_EQ(truth[i].biopsy_schedule, sim.truth[i].biopsy_schedule);
    EXPECT_EQ(truth[i].trajectory.size(), sim.truth[i].trajectory.size());
  }
  std::filesystem::remove_all(dir);
}
