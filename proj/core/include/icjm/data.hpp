#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace icjm {

enum class OutcomeKind { PSA, CoreRatio };

struct LongitudinalObservation {
  std::string patient_id;
  double time = 0.0;
  OutcomeKind kind = OutcomeKind::PSA;
  double value = 0.0;              // PSA in ng/ml, or number of positive cores
  std::optional<int> trials;       // cores sampled; core ratio only
  bool operator==(const LongitudinalObservation&) const = default;
};

struct EventRecord {
  int delta = 0;  // 0 censored, 1 progression (interval censored), 2 treatment
  double t_prg_minus = 0.0;
  double t_upper = 0.0;
  bool operator==(const EventRecord&) const = default;
};

struct BaselineCovariates {
  double age = 62.0;
  double psa_density = 0.12;
  bool operator==(const BaselineCovariates&) const = default;
};

struct PatientRecord {
  std::string patient_id;
  BaselineCovariates covariates;
  std::vector<LongitudinalObservation> longitudinal;
  EventRecord event;
  bool operator==(const PatientRecord&) const = default;
};

struct Dataset {
  std::vector<PatientRecord> patients;
  std::string provenance;

  const PatientRecord& find(const std::string& id) const;
  std::size_t size() const { return patients.size(); }
};

/// Per-observation checks (time >= 0, PSA value >= 0, 0 <= positives <= trials, ...).
/// Returns the violated rule or an empty string.
std::string observation_rule_violation(const LongitudinalObservation& obs);
std::string event_rule_violation(const EventRecord& ev);
std::string covariate_rule_violation(const BaselineCovariates& cov);

/// Throws DataError naming the patient and rule.
void validate_patient(const PatientRecord& p);
void validate_dataset(const Dataset& ds);

/// A dataset path is either a directory holding longitudinal.csv and
/// events.csv, or a .json file with "longitudinal" and "events" arrays.
Dataset load_dataset(const std::filesystem::path& path);
Dataset load_dataset_csv(const std::filesystem::path& longitudinal_csv,
                         const std::filesystem::path& events_csv);
Dataset load_dataset_json(const std::filesystem::path& json_file);

void write_dataset(const Dataset& ds, const std::filesystem::path& path);
std::string longitudinal_csv(const Dataset& ds);
std::string events_csv(const Dataset& ds);
std::string dataset_json(const Dataset& ds);

/// Disjoint (train, test) split; the test set takes exactly n_test_progressed
/// patients with delta = 1 and n_test_other with delta != 1.
std::pair<Dataset, Dataset> split_train_test(const Dataset& ds, std::size_t n_train,
                                             std::size_t n_test_progressed, std::size_t n_test_other,
                                             std::uint64_t seed);

/// Shortest round-trip decimal representation.
std::string format_number(double x);

}  // namespace icjm
