#pragma once

#include <array>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "snoop/partitioner.hpp"

namespace snoop {

enum class SnoopCategory { test, temporal, selective };

enum class SnoopSubcategory {
  preparatory_work,
  kfold_cv,
  normalization,
  embeddings,
  time_dependency,
  aging_dataset,
  cherry_picking,
  survivorship_bias,
};

enum class Severity { violation, warning, info };

inline std::string_view to_string(SnoopCategory c) {
  switch (c) {
    case SnoopCategory::test: return "test";
    case SnoopCategory::temporal: return "temporal";
    case SnoopCategory::selective: return "selective";
  }
  return "";
}

inline std::string_view to_string(SnoopSubcategory s) {
  switch (s) {
    case SnoopSubcategory::preparatory_work: return "preparatory_work";
    case SnoopSubcategory::kfold_cv: return "kfold_cv";
    case SnoopSubcategory::normalization: return "normalization";
    case SnoopSubcategory::embeddings: return "embeddings";
    case SnoopSubcategory::time_dependency: return "time_dependency";
    case SnoopSubcategory::aging_dataset: return "aging_dataset";
    case SnoopSubcategory::cherry_picking: return "cherry_picking";
    case SnoopSubcategory::survivorship_bias: return "survivorship_bias";
  }
  return "";
}

inline std::string_view to_string(Severity s) {
  switch (s) {
    case Severity::violation: return "violation";
    case Severity::warning: return "warning";
    case Severity::info: return "info";
  }
  return "";
}

// Taxonomy: four test-snooping, two temporal and two selective subcategories.
inline constexpr SnoopCategory category_of(SnoopSubcategory s) {
  switch (s) {
    case SnoopSubcategory::preparatory_work:
    case SnoopSubcategory::kfold_cv:
    case SnoopSubcategory::normalization:
    case SnoopSubcategory::embeddings:
      return SnoopCategory::test;
    case SnoopSubcategory::time_dependency:
    case SnoopSubcategory::aging_dataset:
      return SnoopCategory::temporal;
    case SnoopSubcategory::cherry_picking:
    case SnoopSubcategory::survivorship_bias:
      return SnoopCategory::selective;
  }
  return SnoopCategory::test;
}

struct AuditFinding {
  std::string rule_id;
  SnoopCategory category;
  SnoopSubcategory subcategory;
  Severity severity;
  nlohmann::json evidence;

  friend bool operator==(const AuditFinding&, const AuditFinding&) = default;
};

inline constexpr std::string_view kRuleTableVersion = "snoop-rules/1";

struct RuleEntry {
  std::string_view rule_id;
  SnoopSubcategory subcategory;
  Severity severity;
  std::string_view trigger;
};

// Severity policy. Time dependency and cherry picking are surfaced from
// declarations only; they are never inferred from data.
inline constexpr std::array<RuleEntry, 8> kRuleTable{{
    {"T-EMB", SnoopSubcategory::embeddings, Severity::violation,
     "embedding_train_ids intersects classifier train/validation ids"},
    {"T-PREP", SnoopSubcategory::preparatory_work, Severity::violation,
     "feature_selection_scope == all_samples"},
    {"T-KFOLD", SnoopSubcategory::kfold_cv, Severity::violation, "used_kfold_for_tuning == true"},
    {"T-NORM", SnoopSubcategory::normalization, Severity::violation,
     "normalization_scope == pre_split_global"},
    {"M-AGE", SnoopSubcategory::aging_dataset, Severity::warning,
     "dataset_age_years > max_dataset_age_years"},
    {"M-TIME", SnoopSubcategory::time_dependency, Severity::warning,
     "time_dependent_samples == true and temporal_split != true"},
    {"S-CHERRY", SnoopSubcategory::cherry_picking, Severity::warning,
     "a filter rule uses information unavailable at prediction time"},
    {"S-SURV", SnoopSubcategory::survivorship_bias, Severity::info, "one finding per filter rule"},
}};

inline const RuleEntry& rule(std::string_view id) {
  for (const auto& r : kRuleTable)
    if (r.rule_id == id) return r;
  throw error(errc::lookup, "no audit rule " + std::string(id));
}

inline AuditFinding make_finding(std::string_view rule_id, nlohmann::json evidence) {
  const auto& r = rule(rule_id);
  return {std::string(r.rule_id), category_of(r.subcategory), r.subcategory, r.severity, std::move(evidence)};
}

struct AuditOptions {
  double max_dataset_age_years = 10.0;
  std::size_t evidence_sample = 10;
};

inline std::optional<AuditFinding> audit_embedding_overlap(const DatasetManifest& m,
                                                           const AuditOptions& opts = {}) {
  std::size_t overlap = 0;
  std::vector<std::string> sample;
  for (const IdSet* s : {&m.classifier_train_ids, &m.classifier_val_ids}) {
    for (const auto& id : *s) {
      if (!m.embedding_train_ids.count(id)) continue;
      ++overlap;
      if (sample.size() < opts.evidence_sample) sample.push_back(id);
    }
  }
  if (overlap == 0) return std::nullopt;
  return make_finding("T-EMB", {{"overlap_count", overlap},
                                {"classifier_size", m.classifier_train_ids.size() + m.classifier_val_ids.size()},
                                {"sample_ids", sample},
                                {"declared_mode", to_string(m.snooping_mode)}});
}

inline std::vector<AuditFinding> audit_declared_steps(const DatasetManifest& m, const AuditOptions& opts = {}) {
  const DeclaredSteps& d = m.declared_steps;
  std::vector<AuditFinding> out;
  if (d.feature_selection_scope == "all_samples")
    out.push_back(make_finding("T-PREP", {{"feature_selection_scope", d.feature_selection_scope}}));
  if (d.used_kfold_for_tuning) out.push_back(make_finding("T-KFOLD", {{"used_kfold_for_tuning", true}}));
  if (d.normalization_scope == "pre_split_global")
    out.push_back(make_finding("T-NORM", {{"normalization_scope", d.normalization_scope}}));
  if (d.dataset_age_years && *d.dataset_age_years > opts.max_dataset_age_years)
    out.push_back(make_finding("M-AGE", {{"dataset_age_years", *d.dataset_age_years},
                                         {"threshold_years", opts.max_dataset_age_years}}));
  if (d.time_dependent_samples.value_or(false) && !d.temporal_split.value_or(false))
    out.push_back(make_finding("M-TIME", {{"time_dependent_samples", true},
                                          {"temporal_split", d.temporal_split.value_or(false)}}));
  for (const auto& r : d.filter_rules)
    if (r.uses_unavailable_information)
      out.push_back(make_finding("S-CHERRY", {{"filter_rule", r.name}, {"description", r.description}}));
  for (const auto& r : d.filter_rules)
    out.push_back(make_finding("S-SURV", {{"filter_rule", r.name}, {"description", r.description}}));
  return out;
}

inline std::vector<AuditFinding> audit_manifest(const DatasetManifest& m, const AuditOptions& opts = {}) {
  std::vector<AuditFinding> out;
  if (auto f = audit_embedding_overlap(m, opts)) out.push_back(std::move(*f));
  for (auto& f : audit_declared_steps(m, opts)) out.push_back(std::move(f));
  return out;
}

inline bool any_violation(const std::vector<AuditFinding>& findings) {
  for (const auto& f : findings)
    if (f.severity == Severity::violation) return true;
  return false;
}

inline nlohmann::json to_json(const AuditFinding& f) {
  return {{"rule_id", f.rule_id},
          {"category", to_string(f.category)},
          {"subcategory", to_string(f.subcategory)},
          {"severity", to_string(f.severity)},
          {"evidence", f.evidence}};
}

inline nlohmann::json findings_to_json(const std::vector<AuditFinding>& findings) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& f : findings) arr.push_back(to_json(f));
  return arr;
}

inline std::string render_findings_text(const std::vector<AuditFinding>& findings) {
  std::ostringstream os;
  if (findings.empty()) {
    os << "no findings (" << kRuleTableVersion << ")\n";
    return os.str();
  }
  std::size_t violations = 0;
  for (const auto& f : findings) {
    violations += f.severity == Severity::violation;
    os << '[' << to_string(f.severity) << "] " << to_string(f.category) << '/' << to_string(f.subcategory)
       << " (" << f.rule_id << ") " << f.evidence.dump() << '\n';
  }
  os << findings.size() << " finding(s), " << violations << " violation(s) (" << kRuleTableVersion << ")\n";
  return os.str();
}

}  // namespace snoop
