#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "form/errors.hpp"

namespace form::cohort {

struct PatientRecord {
  std::string patient_id;
  // continuous values as-is; categorical values as 0-based level index
  std::map<std::string, double> rf_values;
  std::optional<double> event_time_years;  // present iff event_observed
  bool event_observed = false;
  double followup_years = 0.0;
};

enum class RfKind { Continuous, Categorical };

enum class RfGroup { Base, Multiple, Abmd, Frax, Tbs };

RfGroup parse_rf_group(const std::string& name);
std::string rf_group_name(RfGroup g);

struct RfEntry {
  std::string name;
  RfKind kind = RfKind::Continuous;
  int levels = 0;  // categorical only, >= 2
  std::vector<RfGroup> groups;
  // normalization stats, fitted on the training split only
  std::optional<double> mean;
  std::optional<double> stddev;

  bool in_group(RfGroup g) const;
};

struct RiskFactorSchema {
  std::vector<RfEntry> entries;

  void validate() const;
  /// Encoded vector length for one group.
  int encoded_width(RfGroup g) const;
  std::vector<const RfEntry*> group_entries(RfGroup g) const;
};

enum class OutcomeStatus { Positive, Negative, Censored };

struct OutcomeLabel {
  OutcomeStatus status = OutcomeStatus::Censored;
  double horizon_years = 0.0;
};

/// Binary fracture-by-horizon label with censoring semantics. Patients whose
/// observation ends fracture-free before the horizon are Censored.
OutcomeLabel label_fracture(const PatientRecord& record, double horizon_years);

/// Signals a record that must be excluded because a risk-factor value is
/// missing (no imputation).
class MissingRfError : public ValidationError {
 public:
  MissingRfError(const std::string& patient_id, const std::string& rf_name)
      : ValidationError("missing risk factor '" + rf_name + "' for patient " +
                        patient_id),
        patient_id(patient_id),
        rf_name(rf_name) {}
  std::string patient_id;
  std::string rf_name;
};

/// One-hot categorical blocks plus z-normalized continuous entries, in schema
/// order, restricted to `group`. Throws MissingRfError when a value is absent
/// (the record is to be excluded, not imputed).
std::vector<double> encode_risk_factors(const PatientRecord& record,
                                        const RiskFactorSchema& schema,
                                        RfGroup group);

/// Fit per-entry mean/std (sample, n-1) on the training records.
RiskFactorSchema fit_normalization(const std::vector<PatientRecord>& records,
                                   const RiskFactorSchema& schema);

// Manifest CSV: header patient_id,event_observed,event_time_years,
// followup_years,<rf...>; event_time_years empty when absent.
void write_manifest(const std::string& path,
                    const std::vector<PatientRecord>& records,
                    const RiskFactorSchema& schema);
std::vector<PatientRecord> read_manifest(const std::string& path,
                                         const RiskFactorSchema& schema);

// Schema config: JSON array of {name, kind, levels?, groups}.
void write_schema(const std::string& path, const RiskFactorSchema& schema);
RiskFactorSchema read_schema(const std::string& path);

}  // namespace form::cohort
