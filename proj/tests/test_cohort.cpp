#include <cstdio>
#include <filesystem>

#include "doctest.h"
#include "form/cohort.hpp"

using namespace form;
using namespace form::cohort;

namespace {

RiskFactorSchema demo_schema() {
  RiskFactorSchema s;
  RfEntry age{"age", RfKind::Continuous, 0, {RfGroup::Base, RfGroup::Multiple}};
  RfEntry bmi{"bmi", RfKind::Continuous, 0, {RfGroup::Base, RfGroup::Multiple}};
  RfEntry smoking{"smoking", RfKind::Categorical, 2, {RfGroup::Multiple}};
  s.entries = {age, bmi, smoking};
  return s;
}

PatientRecord rec(std::string id, bool event, double etime, double followup) {
  PatientRecord r;
  r.patient_id = std::move(id);
  r.event_observed = event;
  if (event) r.event_time_years = etime;
  r.followup_years = followup;
  return r;
}

}  // namespace

TEST_CASE("label_fracture spec examples") {
  CHECK(label_fracture(rec("a", true, 3.0, 3.0), 10.0).status ==
        OutcomeStatus::Positive);
  CHECK(label_fracture(rec("b", false, 0, 4.0), 10.0).status ==
        OutcomeStatus::Censored);
  CHECK(label_fracture(rec("c", false, 0, 12.0), 10.0).status ==
        OutcomeStatus::Negative);
}

TEST_CASE("label_fracture event after horizon with long followup is negative") {
  CHECK(label_fracture(rec("d", true, 12.0, 12.0), 10.0).status ==
        OutcomeStatus::Negative);
}

TEST_CASE("label_fracture rejects malformed records") {
  auto r = rec("e", true, -1.0, 5.0);
  CHECK_THROWS_AS(label_fracture(r, 10.0), ValidationError);
  auto r2 = rec("f", false, 0, -2.0);
  CHECK_THROWS_AS(label_fracture(r2, 10.0), ValidationError);
  CHECK_THROWS_AS(label_fracture(rec("g", false, 0, 5.0), 0.0),
                  ValidationError);
}

TEST_CASE("label monotonicity in the horizon") {
  auto pos = rec("p", true, 4.0, 4.0);
  for (double h : {4.0, 5.0, 8.0, 20.0})
    CHECK(label_fracture(pos, h).status == OutcomeStatus::Positive);
  auto neg = rec("n", false, 0, 9.0);
  for (double h : {9.0, 5.0, 1.0})
    CHECK(label_fracture(neg, h).status == OutcomeStatus::Negative);
  CHECK(label_fracture(neg, 9.5).status == OutcomeStatus::Censored);
}

TEST_CASE("encode_risk_factors widths and one-hot blocks") {
  auto schema = demo_schema();
  CHECK(schema.encoded_width(RfGroup::Base) == 2);
  CHECK(schema.encoded_width(RfGroup::Multiple) == 4);

  PatientRecord r = rec("x", false, 0, 12.0);
  r.rf_values = {{"age", 74.0}, {"bmi", 27.0}, {"smoking", 1.0}};

  std::vector<PatientRecord> train = {r, r, r};
  train[1].rf_values["age"] = 70.0;
  train[1].rf_values["bmi"] = 25.0;
  train[2].rf_values["age"] = 78.0;
  train[2].rf_values["bmi"] = 29.0;
  auto fitted = fit_normalization(train, schema);

  auto base = encode_risk_factors(r, fitted, RfGroup::Base);
  REQUIRE(base.size() == 2);
  // age/bmi equal their training means -> centered to zero
  CHECK(base[0] == doctest::Approx(0.0));
  CHECK(base[1] == doctest::Approx(0.0));

  auto multi = encode_risk_factors(r, fitted, RfGroup::Multiple);
  REQUIRE(multi.size() == 4);
  CHECK(multi[2] == 0.0);  // one-hot [0,1] for level 1
  CHECK(multi[3] == 1.0);
  CHECK(multi[2] + multi[3] == doctest::Approx(1.0));
}

TEST_CASE("fit_normalization sample statistics and degenerate cases") {
  RiskFactorSchema s;
  s.entries = {{"v", RfKind::Continuous, 0, {RfGroup::Base, RfGroup::Multiple}}};
  std::vector<PatientRecord> train;
  for (double v : {1.0, 2.0, 3.0}) {
    auto r = rec("p" + std::to_string(v), false, 0, 12.0);
    r.rf_values["v"] = v;
    train.push_back(r);
  }
  auto fitted = fit_normalization(train, s);
  CHECK(*fitted.entries[0].mean == doctest::Approx(2.0));
  CHECK(*fitted.entries[0].stddev == doctest::Approx(1.0));

  for (auto& r : train) r.rf_values["v"] = 5.0;
  CHECK_THROWS_AS(fit_normalization(train, s), ValidationError);
  CHECK_THROWS_AS(fit_normalization({}, s), ValidationError);
}

TEST_CASE("missing risk factor raises exclusion signal") {
  auto schema = demo_schema();
  PatientRecord r = rec("x", false, 0, 12.0);
  r.rf_values = {{"age", 74.0}, {"bmi", 27.0}};  // smoking missing
  std::vector<PatientRecord> train = {r, r};
  train[1].rf_values["age"] = 70.0;
  train[1].rf_values["bmi"] = 25.0;
  auto fitted = fit_normalization(train, schema);
  CHECK_THROWS_AS(encode_risk_factors(r, fitted, RfGroup::Multiple),
                  MissingRfError);
  // Base group does not need smoking
  CHECK_NOTHROW(encode_risk_factors(r, fitted, RfGroup::Base));
}

TEST_CASE("schema validation") {
  RiskFactorSchema s;
  s.entries = {{"a", RfKind::Continuous, 0, {RfGroup::Base, RfGroup::Multiple}},
               {"a", RfKind::Continuous, 0, {RfGroup::Multiple}}};
  CHECK_THROWS_AS(s.validate(), ValidationError);

  RiskFactorSchema s2;
  s2.entries = {{"c", RfKind::Categorical, 1, {RfGroup::Multiple}}};
  CHECK_THROWS_AS(s2.validate(), ValidationError);

  // Base membership must imply Multiple
  RiskFactorSchema s3;
  s3.entries = {{"b", RfKind::Continuous, 0, {RfGroup::Base}}};
  CHECK_THROWS_AS(s3.validate(), ValidationError);
}

TEST_CASE("manifest and schema round trip") {
  namespace fs = std::filesystem;
  auto dir = fs::temp_directory_path() / "form_cohort_test";
  fs::create_directories(dir);
  auto schema = demo_schema();

  std::vector<PatientRecord> records;
  auto r1 = rec("p1", true, 3.25, 3.25);
  r1.rf_values = {{"age", 74.5}, {"bmi", 27.125}, {"smoking", 0.0}};
  auto r2 = rec("p2", false, 0, 11.0);
  r2.rf_values = {{"age", 69.0}, {"bmi", 31.0}, {"smoking", 1.0}};
  records = {r1, r2};

  auto manifest = (dir / "cohort.csv").string();
  auto schema_path = (dir / "schema.json").string();
  write_manifest(manifest, records, schema);
  write_schema(schema_path, schema);

  auto schema2 = read_schema(schema_path);
  auto back = read_manifest(manifest, schema2);
  REQUIRE(back.size() == 2);
  CHECK(back[0].patient_id == "p1");
  CHECK(back[0].event_observed);
  CHECK(*back[0].event_time_years == doctest::Approx(3.25));
  CHECK(back[0].rf_values.at("bmi") == doctest::Approx(27.125));
  CHECK_FALSE(back[1].event_observed);
  CHECK_FALSE(back[1].event_time_years.has_value());
  CHECK(back[1].rf_values.at("smoking") == doctest::Approx(1.0));
  fs::remove_all(dir);
}
