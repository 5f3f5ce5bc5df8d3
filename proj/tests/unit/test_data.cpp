#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "icjm/data.hpp"
#include "icjm/error.hpp"

using namespace icjm;
namespace fs = std::filesystem;

namespace {

const fs::path kData = ICJM_TEST_DATA_DIR;

fs::path scratch_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("icjm_test_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

void write(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

std::string load_error(const fs::path& dir) {
  try {
    load_dataset(dir);
  } catch (const DataError& e) {
    return e.what();
  }
  return {};
}

Dataset synthetic(int n_progressed, int n_other) {
  Dataset ds;
  for (int i = 0; i < n_progressed + n_other; ++i) {
    PatientRecord p;
    p.patient_id = "s" + std::to_string(i);
    p.event = i < n_progressed ? EventRecord{1, 1.0, 2.0} : EventRecord{i % 2 ? 0 : 2, 1.0, 5.0};
    ds.patients.push_back(p);
  }
  return ds;
}

}  // namespace

TEST(LoadDataset, CsvFixture) {
  const auto ds = load_dataset(kData / "three_patients");
  ASSERT_EQ(ds.size(), 3u);
  const auto& p2 = ds.find("p2");
  EXPECT_EQ(p2.event.delta, 1);
  EXPECT_DOUBLE_EQ(p2.event.t_upper, 4.1);
  EXPECT_DOUBLE_EQ(p2.covariates.age, 66.5);
  ASSERT_EQ(p2.longitudinal.size(), 3u);
  EXPECT_EQ(p2.longitudinal[2].kind, OutcomeKind::CoreRatio);
  EXPECT_EQ(p2.longitudinal[2].trials, 12);
  EXPECT_FALSE(p2.longitudinal[0].trials.has_value());
}

TEST(LoadDataset, JsonMirrorMatchesCsv) {
  const auto a = load_dataset(kData / "three_patients");
  const auto b = load_dataset(kData / "three_patients.json");
  EXPECT_EQ(a.patients, b.patients);
}

TEST(LoadDataset, RoundTrip) {
  const auto a = load_dataset(kData / "three_patients");
  const auto dir = scratch_dir("roundtrip");
  write_dataset(a, dir / "copy");
  EXPECT_EQ(load_dataset(dir / "copy").patients, a.patients);
  write_dataset(a, dir / "copy.json");
  EXPECT_EQ(load_dataset(dir / "copy.json").patients, a.patients);
  // writing a loaded copy again reproduces the bytes
  EXPECT_EQ(longitudinal_csv(load_dataset(dir / "copy")), longitudinal_csv(a));
  EXPECT_EQ(events_csv(load_dataset(dir / "copy")), events_csv(a));
}

TEST(LoadDataset, NegativePsaNamesRule) {
  const auto dir = scratch_dir("negpsa");
  fs::copy_file(kData / "three_patients/events.csv", dir / "events.csv");
  write(dir / "longitudinal.csv", "patient_id,time,kind,value,trials\np1,0,psa,1.0,\np1,0.25,psa,-0.5,\n");
  const auto msg = load_error(dir);
  EXPECT_NE(msg.find("PSA value ≥ 0"), std::string::npos) << msg;
  EXPECT_NE(msg.find("row 2"), std::string::npos) << msg;
}

TEST(LoadDataset, ProgressionIntervalMustBeStrict) {
  const auto dir = scratch_dir("strict");
  write(dir / "events.csv", "patient_id,delta,t_prg_minus,t_upper,age,psa_density\np1,1,3,3,60,0.1\n");
  write(dir / "longitudinal.csv", "patient_id,time,kind,value,trials\n");
  const auto msg = load_error(dir);
  EXPECT_NE(msg.find("t_prg_minus < t_upper"), std::string::npos) << msg;
}

TEST(LoadDataset, StructuredErrors) {
  const auto dir = scratch_dir("errors");
  write(dir / "events.csv", "patient_id,delta,t_prg_minus,t_upper,age,psa_density\np1,0,1,5,60,0.1\n");
  write(dir / "longitudinal.csv", "patient_id,time,kind,value,trials\np1,0,cr,13,12\n");
  EXPECT_NE(load_error(dir).find("0 ≤ positive cores ≤ trials"), std::string::npos);
  write(dir / "longitudinal.csv", "patient_id,time,kind,value,trials\np1,0,psa,1,12\n");
  EXPECT_NE(load_error(dir).find("trials present iff"), std::string::npos);
  write(dir / "longitudinal.csv", "patient_id,time,kind,value,trials\np9,0,psa,1,\n");
  EXPECT_NE(load_error(dir).find("no events row"), std::string::npos);
  write(dir / "longitudinal.csv", "patient_id,time,kind,value,trials\np1,6,psa,1,\n");
  EXPECT_NE(load_error(dir).find("observation times ≤ t_upper"), std::string::npos);
  write(dir / "longitudinal.csv", "patient_id,time,kind,value\np1,0,psa,1\n");
  EXPECT_NE(load_error(dir).find("header"), std::string::npos);
  write(dir / "longitudinal.csv", "patient_id,time,kind,value,trials\np1,x,psa,1,\n");
  EXPECT_NE(load_error(dir).find("not a number"), std::string::npos);
  write(dir / "events.csv", "patient_id,delta,t_prg_minus,t_upper,age,psa_density\np1,0,1,5,60,0.1\np1,0,1,5,60,0.1\n");
  write(dir / "longitudinal.csv", "patient_id,time,kind,value,trials\n");
  EXPECT_NE(load_error(dir).find("duplicate"), std::string::npos);
  write(dir / "events.csv", "patient_id,delta,t_prg_minus,t_upper,age,psa_density\n");
  EXPECT_NE(load_error(dir).find("empty"), std::string::npos);
  EXPECT_THROW(load_dataset(dir / "missing.json"), DataError);
}

TEST(SplitTrainTest, StratifiedSizes) {
  const auto ds = synthetic(180, 320);
  const auto [train, test] = split_train_test(ds, 300, 100, 100, 11);
  EXPECT_EQ(train.size(), 300u);
  EXPECT_EQ(test.size(), 200u);
  int progressed = 0;
  for (const auto& p : test.patients) progressed += p.event.delta == 1;
  EXPECT_EQ(progressed, 100);
  for (const auto& a : train.patients)
    for (const auto& b : test.patients) EXPECT_NE(a.patient_id, b.patient_id);
}

TEST(SplitTrainTest, DeterministicForSeed) {
  const auto ds = synthetic(180, 320);
  const auto a = split_train_test(ds, 300, 100, 100, 5);
  const auto b = split_train_test(ds, 300, 100, 100, 5);
  EXPECT_EQ(a.first.patients, b.first.patients);
  EXPECT_EQ(a.second.patients, b.second.patients);
}

TEST(SplitTrainTest, StratumShortage) {
  const auto ds = synthetic(150, 350);
  EXPECT_THROW(split_train_test(ds, 10, 400, 10, 1), DataError);
  EXPECT_THROW(split_train_test(ds, 480, 50, 50, 1), DataError);
}
