#include "icjm/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <random>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "icjm/error.hpp"

namespace icjm {

namespace fs = std::filesystem;
using nlohmann::json;

const PatientRecord& Dataset::find(const std::string& id) const {
  for (const auto& p : patients)
    if (p.patient_id == id) return p;
  throw DataError("unknown patient id '" + id + "'");
}

std::string format_number(double x) {
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  if (std::isnan(x)) return "nan";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

std::string observation_rule_violation(const LongitudinalObservation& obs) {
  if (obs.patient_id.empty()) return "patient_id must be nonempty";
  if (!std::isfinite(obs.time) || obs.time < 0.0) return "observation time ≥ 0";
  if (!std::isfinite(obs.value)) return "value must be finite";
  if (obs.kind == OutcomeKind::PSA) {
    if (obs.value < 0.0) return "PSA value ≥ 0";
    if (obs.trials) return "trials present iff kind = cr";
  } else {
    if (!obs.trials) return "trials present iff kind = cr";
    if (*obs.trials <= 0) return "trials > 0";
    if (obs.value < 0.0 || obs.value > *obs.trials) return "0 ≤ positive cores ≤ trials";
    if (obs.value != std::floor(obs.value)) return "positive cores must be an integer count";
  }
  return {};
}

std::string event_rule_violation(const EventRecord& ev) {
  if (ev.delta < 0 || ev.delta > 2) return "delta ∈ {0, 1, 2}";
  if (!std::isfinite(ev.t_prg_minus) || ev.t_prg_minus < 0.0) return "t_prg_minus ≥ 0";
  if (!std::isfinite(ev.t_upper)) return "t_upper must be finite";
  if (ev.delta == 1 && !(ev.t_prg_minus < ev.t_upper)) return "delta = 1 requires t_prg_minus < t_upper (strict)";
  if (ev.delta != 1 && !(ev.t_prg_minus <= ev.t_upper)) return "delta ∈ {0, 2} requires t_prg_minus ≤ t_upper";
  return {};
}

std::string covariate_rule_violation(const BaselineCovariates& cov) {
  if (!std::isfinite(cov.age) || !(cov.age > 0.0)) return "age > 0";
  if (!std::isfinite(cov.psa_density) || !(cov.psa_density > 0.0)) return "psa_density > 0";
  return {};
}

void validate_patient(const PatientRecord& p) {
  auto fail = [&](const std::string& rule) {
    throw DataError("patient '" + p.patient_id + "': rule violated: " + rule);
  };
  if (p.patient_id.empty()) fail("patient_id must be nonempty");
  if (auto r = covariate_rule_violation(p.covariates); !r.empty()) fail(r);
  if (auto r = event_rule_violation(p.event); !r.empty()) fail(r);
  for (const auto& o : p.longitudinal) {
    if (auto r = observation_rule_violation(o); !r.empty()) fail(r);
    if (o.patient_id != p.patient_id) fail("observation patient_id matches its patient");
    if (o.time > p.event.t_upper + 1e-9) fail("observation times ≤ t_upper");
  }
}

void validate_dataset(const Dataset& ds) {
  if (ds.patients.empty()) throw DataError("dataset is empty");
  std::unordered_set<std::string> seen;
  for (const auto& p : ds.patients) {
    if (!seen.insert(p.patient_id).second) throw DataError("duplicate patient id '" + p.patient_id + "'");
    validate_patient(p);
  }
}

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(trim(std::string_view(line).substr(start, comma == std::string::npos ? std::string::npos : comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;
};

CsvTable parse_csv(const std::string& text, const std::string& name,
                   const std::vector<std::string>& expected_header) {
  CsvTable t;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto fields = split_line(line);
    if (t.header.empty()) {
      t.header = fields;
      if (t.header != expected_header) {
        std::string want;
        for (const auto& h : expected_header) want += (want.empty() ? "" : ",") + h;
        throw DataError(name + " line " + std::to_string(line_no) + ": header must be '" + want + "'");
      }
      continue;
    }
    if (fields.size() != t.header.size())
      throw DataError(name + " line " + std::to_string(line_no) + ": expected " +
                      std::to_string(t.header.size()) + " fields, found " + std::to_string(fields.size()));
    t.rows.push_back(std::move(fields));
    t.line_numbers.push_back(line_no);
  }
  if (t.header.empty()) throw DataError(name + ": missing header");
  return t;
}

double parse_double(const std::string& s, const std::string& where) {
  if (s == "inf") return INFINITY;
  double v = 0.0;
  const char* b = s.data();
  const char* e = s.data() + s.size();
  if (!s.empty() && *b == '+') ++b;
  auto res = std::from_chars(b, e, v);
  if (s.empty() || res.ec != std::errc() || res.ptr != e)
    throw DataError(where + ": '" + s + "' is not a number");
  return v;
}

int parse_int(const std::string& s, const std::string& where) {
  int v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw DataError(where + ": '" + s + "' is not an integer");
  return v;
}

OutcomeKind parse_kind(const std::string& s, const std::string& where) {
  if (s == "psa") return OutcomeKind::PSA;
  if (s == "cr") return OutcomeKind::CoreRatio;
  throw DataError(where + ": kind must be psa or cr, found '" + s + "'");
}

const char* kind_name(OutcomeKind k) { return k == OutcomeKind::PSA ? "psa" : "cr"; }

struct RawEvent {
  std::string id;
  EventRecord ev;
  BaselineCovariates cov;
  std::string where;
};

struct RawObs {
  LongitudinalObservation obs;
  std::string where;
};

Dataset assemble(std::vector<RawEvent> events, std::vector<RawObs> observations, std::string provenance) {
  Dataset ds;
  ds.provenance = std::move(provenance);
  std::unordered_map<std::string, std::size_t> index;
  for (auto& e : events) {
    if (auto r = event_rule_violation(e.ev); !r.empty()) throw DataError(e.where + ": rule violated: " + r);
    if (auto r = covariate_rule_violation(e.cov); !r.empty()) throw DataError(e.where + ": rule violated: " + r);
    if (e.id.empty()) throw DataError(e.where + ": rule violated: patient_id must be nonempty");
    if (!index.emplace(e.id, ds.patients.size()).second)
      throw DataError(e.where + ": duplicate patient id '" + e.id + "'");
    PatientRecord p;
    p.patient_id = e.id;
    p.event = e.ev;
    p.covariates = e.cov;
    ds.patients.push_back(std::move(p));
  }
  for (auto& o : observations) {
    if (auto r = observation_rule_violation(o.obs); !r.empty()) throw DataError(o.where + ": rule violated: " + r);
    auto it = index.find(o.obs.patient_id);
    if (it == index.end())
      throw DataError(o.where + ": patient '" + o.obs.patient_id + "' has no events row");
    auto& p = ds.patients[it->second];
    if (o.obs.time > p.event.t_upper + 1e-9)
      throw DataError(o.where + ": rule violated: observation times ≤ t_upper");
    p.longitudinal.push_back(std::move(o.obs));
  }
  validate_dataset(ds);
  return ds;
}

const std::vector<std::string> kLongHeader = {"patient_id", "time", "kind", "value", "trials"};
const std::vector<std::string> kEventHeader = {"patient_id", "delta", "t_prg_minus", "t_upper", "age", "psa_density"};

}  // namespace

Dataset load_dataset_csv(const fs::path& longitudinal_path, const fs::path& events_path) {
  const auto lname = longitudinal_path.filename().string();
  const auto ename = events_path.filename().string();
  const auto lt = parse_csv(read_file(longitudinal_path), lname, kLongHeader);
  const auto et = parse_csv(read_file(events_path), ename, kEventHeader);

  std::vector<RawEvent> events;
  for (std::size_t r = 0; r < et.rows.size(); ++r) {
    const auto& f = et.rows[r];
    const auto where = ename + " row " + std::to_string(r + 1) + " (line " + std::to_string(et.line_numbers[r]) + ")";
    RawEvent e;
    e.id = f[0];
    e.ev.delta = parse_int(f[1], where + " delta");
    e.ev.t_prg_minus = parse_double(f[2], where + " t_prg_minus");
    e.ev.t_upper = parse_double(f[3], where + " t_upper");
    e.cov.age = parse_double(f[4], where + " age");
    e.cov.psa_density = parse_double(f[5], where + " psa_density");
    e.where = where;
    events.push_back(std::move(e));
  }
  std::vector<RawObs> obs;
  for (std::size_t r = 0; r < lt.rows.size(); ++r) {
    const auto& f = lt.rows[r];
    const auto where = lname + " row " + std::to_string(r + 1) + " (line " + std::to_string(lt.line_numbers[r]) + ")";
    RawObs o;
    o.obs.patient_id = f[0];
    o.obs.time = parse_double(f[1], where + " time");
    o.obs.kind = parse_kind(f[2], where);
    o.obs.value = parse_double(f[3], where + " value");
    if (!f[4].empty()) o.obs.trials = parse_int(f[4], where + " trials");
    o.where = where;
    obs.push_back(std::move(o));
  }
  return assemble(std::move(events), std::move(obs), longitudinal_path.parent_path().string());
}

Dataset load_dataset_json(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw DataError(path.filename().string() + ": invalid JSON: " + e.what());
  }
  const auto name = path.filename().string();
  if (!j.is_object() || !j.contains("events") || !j.contains("longitudinal") || !j["events"].is_array() ||
      !j["longitudinal"].is_array())
    throw DataError(name + ": expected an object with 'longitudinal' and 'events' arrays");

  auto num = [](const json& row, const char* key, const std::string& where) {
    if (!row.contains(key)) throw DataError(where + ": missing field '" + key + "'");
    const auto& v = row.at(key);
    if (v.is_string() && v.get<std::string>() == "inf") return static_cast<double>(INFINITY);
    if (!v.is_number()) throw DataError(where + ": field '" + key + "' must be a number");
    return v.get<double>();
  };
  auto str = [](const json& row, const char* key, const std::string& where) {
    if (!row.contains(key) || !row.at(key).is_string())
      throw DataError(where + ": field '" + key + "' must be a string");
    return row.at(key).get<std::string>();
  };

  std::vector<RawEvent> events;
  std::size_t r = 0;
  for (const auto& row : j["events"]) {
    const auto where = name + " events[" + std::to_string(r++) + "]";
    if (!row.is_object()) throw DataError(where + ": expected an object");
    RawEvent e;
    e.id = str(row, "patient_id", where);
    if (!row.contains("delta") || !row["delta"].is_number_integer())
      throw DataError(where + ": field 'delta' must be an integer");
    e.ev.delta = row["delta"].get<int>();
    e.ev.t_prg_minus = num(row, "t_prg_minus", where);
    e.ev.t_upper = num(row, "t_upper", where);
    e.cov.age = num(row, "age", where);
    e.cov.psa_density = num(row, "psa_density", where);
    e.where = where;
    events.push_back(std::move(e));
  }
  std::vector<RawObs> obs;
  r = 0;
  for (const auto& row : j["longitudinal"]) {
    const auto where = name + " longitudinal[" + std::to_string(r++) + "]";
    if (!row.is_object()) throw DataError(where + ": expected an object");
    RawObs o;
    o.obs.patient_id = str(row, "patient_id", where);
    o.obs.time = num(row, "time", where);
    o.obs.kind = parse_kind(str(row, "kind", where), where);
    o.obs.value = num(row, "value", where);
    if (row.contains("trials") && !row["trials"].is_null()) {
      if (!row["trials"].is_number_integer()) throw DataError(where + ": field 'trials' must be an integer");
      o.obs.trials = row["trials"].get<int>();
    }
    o.where = where;
    obs.push_back(std::move(o));
  }
  return assemble(std::move(events), std::move(obs), path.string());
}

Dataset load_dataset(const fs::path& path) {
  if (fs::is_directory(path)) {
    const auto l = path / "longitudinal.csv";
    const auto e = path / "events.csv";
    if (!fs::exists(l) || !fs::exists(e))
      throw DataError("dataset directory '" + path.string() + "' must contain longitudinal.csv and events.csv");
    return load_dataset_csv(l, e);
  }
  if (!fs::exists(path)) throw DataError("dataset '" + path.string() + "' does not exist");
  if (path.extension() == ".json") return load_dataset_json(path);
  throw DataError("dataset '" + path.string() + "': expected a directory of CSV files or a .json file");
}

std::string longitudinal_csv(const Dataset& ds) {
  std::string out = "patient_id,time,kind,value,trials\n";
  for (const auto& p : ds.patients)
    for (const auto& o : p.longitudinal) {
      out += o.patient_id + ',' + format_number(o.time) + ',' + kind_name(o.kind) + ',' + format_number(o.value) + ',';
      if (o.trials) out += std::to_string(*o.trials);
      out += '\n';
    }
  return out;
}

std::string events_csv(const Dataset& ds) {
  std::string out = "patient_id,delta,t_prg_minus,t_upper,age,psa_density\n";
  for (const auto& p : ds.patients)
    out += p.patient_id + ',' + std::to_string(p.event.delta) + ',' + format_number(p.event.t_prg_minus) + ',' +
           format_number(p.event.t_upper) + ',' + format_number(p.covariates.age) + ',' +
           format_number(p.covariates.psa_density) + '\n';
  return out;
}

std::string dataset_json(const Dataset& ds) {
  json j;
  j["longitudinal"] = json::array();
  j["events"] = json::array();
  for (const auto& p : ds.patients) {
    for (const auto& o : p.longitudinal) {
      json row = {{"patient_id", o.patient_id}, {"time", o.time}, {"kind", kind_name(o.kind)}, {"value", o.value}};
      row["trials"] = o.trials ? json(*o.trials) : json(nullptr);
      j["longitudinal"].push_back(std::move(row));
    }
    j["events"].push_back({{"patient_id", p.patient_id},
                           {"delta", p.event.delta},
                           {"t_prg_minus", p.event.t_prg_minus},
                           {"t_upper", p.event.t_upper},
                           {"age", p.covariates.age},
                           {"psa_density", p.covariates.psa_density}});
  }
  return j.dump(1) + "\n";
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw DataError("write failed for '" + path.string() + "'");
}

}  // namespace

void write_dataset(const Dataset& ds, const fs::path& path) {
  if (path.extension() == ".json") {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    write_text(path, dataset_json(ds));
    return;
  }
  fs::create_directories(path);
  write_text(path / "longitudinal.csv", longitudinal_csv(ds));
  write_text(path / "events.csv", events_csv(ds));
}

std::pair<Dataset, Dataset> split_train_test(const Dataset& ds, std::size_t n_train, std::size_t n_test_progressed,
                                             std::size_t n_test_other, std::uint64_t seed) {
  std::vector<std::size_t> progressed, other;
  for (std::size_t i = 0; i < ds.patients.size(); ++i)
    (ds.patients[i].event.delta == 1 ? progressed : other).push_back(i);
  if (progressed.size() < n_test_progressed)
    throw DataError("split: requested " + std::to_string(n_test_progressed) + " progressed test patients but only " +
                    std::to_string(progressed.size()) + " are available");
  if (other.size() < n_test_other)
    throw DataError("split: requested " + std::to_string(n_test_other) + " non-progressed test patients but only " +
                    std::to_string(other.size()) + " are available");

  std::mt19937_64 rng(seed);
  std::shuffle(progressed.begin(), progressed.end(), rng);
  std::shuffle(other.begin(), other.end(), rng);
  std::vector<std::size_t> test(progressed.begin(), progressed.begin() + static_cast<std::ptrdiff_t>(n_test_progressed));
  test.insert(test.end(), other.begin(), other.begin() + static_cast<std::ptrdiff_t>(n_test_other));

  std::vector<std::size_t> rest(progressed.begin() + static_cast<std::ptrdiff_t>(n_test_progressed), progressed.end());
  rest.insert(rest.end(), other.begin() + static_cast<std::ptrdiff_t>(n_test_other), other.end());
  if (rest.size() < n_train)
    throw DataError("split: requested " + std::to_string(n_train) + " training patients but only " +
                    std::to_string(rest.size()) + " remain after the test selection");
  std::shuffle(rest.begin(), rest.end(), rng);
  std::vector<std::size_t> train(rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(n_train));

  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  Dataset a, b;
  a.provenance = ds.provenance + " [train]";
  b.provenance = ds.provenance + " [test]";
  for (auto i : train) a.patients.push_back(ds.patients[i]);
  for (auto i : test) b.patients.push_back(ds.patients[i]);
  return {std::move(a), std::move(b)};
}

}  // namespace icjm
