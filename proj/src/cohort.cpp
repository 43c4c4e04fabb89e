#include "form/cohort.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace form::cohort {

RfGroup parse_rf_group(const std::string& name) {
  std::string s;
  for (char c : name) s += static_cast<char>(std::tolower(c));
  if (s == "base") return RfGroup::Base;
  if (s == "multiple") return RfGroup::Multiple;
  if (s == "abmd") return RfGroup::Abmd;
  if (s == "frax") return RfGroup::Frax;
  if (s == "tbs") return RfGroup::Tbs;
  throw ValidationError("unknown risk-factor group: " + name);
}

std::string rf_group_name(RfGroup g) {
  switch (g) {
    case RfGroup::Base: return "base";
    case RfGroup::Multiple: return "multiple";
    case RfGroup::Abmd: return "abmd";
    case RfGroup::Frax: return "frax";
    case RfGroup::Tbs: return "tbs";
  }
  return "?";
}

bool RfEntry::in_group(RfGroup g) const {
  return std::find(groups.begin(), groups.end(), g) != groups.end();
}

void RiskFactorSchema::validate() const {
  std::set<std::string> seen;
  for (const auto& e : entries) {
    if (!seen.insert(e.name).second)
      throw ValidationError("duplicate risk-factor name: " + e.name);
    if (e.kind == RfKind::Categorical && e.levels < 2)
      throw ValidationError("categorical rf needs >= 2 levels: " + e.name);
    // Base extends into Multiple
    if (e.in_group(RfGroup::Base) && !e.in_group(RfGroup::Multiple))
      throw ValidationError("Base entry must also be in Multiple: " + e.name);
  }
}

int RiskFactorSchema::encoded_width(RfGroup g) const {
  int k = 0;
  for (const auto& e : entries) {
    if (!e.in_group(g)) continue;
    k += (e.kind == RfKind::Continuous) ? 1 : e.levels;
  }
  return k;
}

std::vector<const RfEntry*> RiskFactorSchema::group_entries(RfGroup g) const {
  std::vector<const RfEntry*> out;
  for (const auto& e : entries)
    if (e.in_group(g)) out.push_back(&e);
  return out;
}

OutcomeLabel label_fracture(const PatientRecord& record, double horizon_years) {
  if (horizon_years <= 0.0)
    throw ValidationError("label_fracture: horizon must be > 0");
  if (record.followup_years < 0.0)
    throw ValidationError("label_fracture: negative followup for " +
                          record.patient_id);
  if (record.event_observed && !record.event_time_years)
    throw ValidationError("label_fracture: observed event without time for " +
                          record.patient_id);
  if (record.event_time_years && *record.event_time_years < 0.0)
    throw ValidationError("label_fracture: negative event time for " +
                          record.patient_id);

  OutcomeLabel out;
  out.horizon_years = horizon_years;
  if (record.event_observed && *record.event_time_years <= horizon_years) {
    out.status = OutcomeStatus::Positive;
  } else if (record.followup_years >= horizon_years) {
    // fracture-free through the horizon (an event after the horizon counts
    // as negative for this horizon)
    out.status = OutcomeStatus::Negative;
  } else {
    out.status = OutcomeStatus::Censored;
  }
  return out;
}

std::vector<double> encode_risk_factors(const PatientRecord& record,
                                        const RiskFactorSchema& schema,
                                        RfGroup group) {
  std::vector<double> out;
  for (const auto& e : schema.entries) {
    if (!e.in_group(group)) continue;
    auto it = record.rf_values.find(e.name);
    if (it == record.rf_values.end() || std::isnan(it->second))
      throw MissingRfError(record.patient_id, e.name);
    if (e.kind == RfKind::Continuous) {
      if (!e.mean || !e.stddev)
        throw ValidationError("normalization stats not fitted for " + e.name);
      if (*e.stddev == 0.0)
        throw ValidationError("zero std for risk factor " + e.name);
      out.push_back((it->second - *e.mean) / *e.stddev);
    } else {
      int level = static_cast<int>(std::llround(it->second));
      if (level < 0 || level >= e.levels)
        throw ValidationError("level out of range for " + e.name +
                              " in patient " + record.patient_id);
      for (int l = 0; l < e.levels; ++l)
        out.push_back(l == level ? 1.0 : 0.0);
    }
  }
  return out;
}

RiskFactorSchema fit_normalization(const std::vector<PatientRecord>& records,
                                   const RiskFactorSchema& schema) {
  if (records.empty())
    throw ValidationError("fit_normalization: empty training set");
  RiskFactorSchema fitted = schema;
  for (auto& e : fitted.entries) {
    if (e.kind != RfKind::Continuous) continue;
    std::vector<double> vals;
    for (const auto& r : records) {
      auto it = r.rf_values.find(e.name);
      if (it != r.rf_values.end() && !std::isnan(it->second))
        vals.push_back(it->second);
    }
    if (vals.size() < 2)
      throw ValidationError("fit_normalization: need >= 2 values for " +
                            e.name);
    double m = 0.0;
    for (double v : vals) m += v;
    m /= static_cast<double>(vals.size());
    double ss = 0.0;
    for (double v : vals) ss += (v - m) * (v - m);
    double sd = std::sqrt(ss / static_cast<double>(vals.size() - 1));
    if (sd == 0.0)
      throw ValidationError("fit_normalization: constant column " + e.name);
    e.mean = m;
    e.stddev = sd;
  }
  return fitted;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

void write_manifest(const std::string& path,
                    const std::vector<PatientRecord>& records,
                    const RiskFactorSchema& schema) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for write: " + path);
  os << "patient_id,event_observed,event_time_years,followup_years";
  for (const auto& e : schema.entries) os << "," << e.name;
  os << "\n";
  os.precision(17);
  for (const auto& r : records) {
    os << r.patient_id << "," << (r.event_observed ? 1 : 0) << ",";
    if (r.event_time_years) os << *r.event_time_years;
    os << "," << r.followup_years;
    for (const auto& e : schema.entries) {
      os << ",";
      auto it = r.rf_values.find(e.name);
      if (it != r.rf_values.end() && !std::isnan(it->second)) os << it->second;
    }
    os << "\n";
  }
  if (!os) throw IoError("manifest write failed: " + path);
}

std::vector<PatientRecord> read_manifest(const std::string& path,
                                         const RiskFactorSchema& schema) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open: " + path);
  std::string line;
  if (!std::getline(is, line)) throw IoError("empty manifest: " + path);
  auto header = split_csv_line(line);
  if (header.size() < 4 || header[0] != "patient_id")
    throw ValidationError("manifest: unexpected header in " + path);

  std::vector<PatientRecord> records;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != header.size())
      throw ValidationError("manifest: ragged row in " + path);
    PatientRecord r;
    r.patient_id = cells[0];
    r.event_observed = cells[1] == "1";
    if (!cells[2].empty()) r.event_time_years = std::stod(cells[2]);
    r.followup_years = std::stod(cells[3]);
    for (std::size_t i = 4; i < header.size(); ++i) {
      if (!cells[i].empty()) r.rf_values[header[i]] = std::stod(cells[i]);
    }
    records.push_back(std::move(r));
  }
  // unknown columns are tolerated at read; schema membership is checked here
  for (const auto& r : records) {
    for (const auto& [name, _] : r.rf_values) {
      bool known = std::any_of(schema.entries.begin(), schema.entries.end(),
                               [&](const RfEntry& e) { return e.name == name; });
      if (!known)
        throw ValidationError("manifest: rf column not in schema: " + name);
    }
  }
  return records;
}

void write_schema(const std::string& path, const RiskFactorSchema& schema) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& e : schema.entries) {
    nlohmann::json j;
    j["name"] = e.name;
    j["kind"] = e.kind == RfKind::Continuous ? "continuous" : "categorical";
    if (e.kind == RfKind::Categorical) j["levels"] = e.levels;
    auto groups = nlohmann::json::array();
    for (auto g : e.groups) groups.push_back(rf_group_name(g));
    j["groups"] = groups;
    arr.push_back(j);
  }
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for write: " + path);
  os << arr.dump(2) << "\n";
}

RiskFactorSchema read_schema(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open: " + path);
  nlohmann::json arr;
  try {
    is >> arr;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("schema parse error in " + path + ": " + e.what());
  }
  RiskFactorSchema schema;
  for (const auto& j : arr) {
    RfEntry e;
    e.name = j.at("name").get<std::string>();
    std::string kind = j.at("kind").get<std::string>();
    if (kind == "continuous") {
      e.kind = RfKind::Continuous;
    } else if (kind == "categorical") {
      e.kind = RfKind::Categorical;
      e.levels = j.at("levels").get<int>();
    } else {
      throw ValidationError("schema: unknown kind " + kind);
    }
    for (const auto& g : j.at("groups"))
      e.groups.push_back(parse_rf_group(g.get<std::string>()));
    schema.entries.push_back(std::move(e));
  }
  schema.validate();
  return schema;
}

}  // namespace form::cohort
