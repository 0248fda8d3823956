#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "snoop/error.hpp"
#include "snoop/ir_corpus.hpp"
#include "snoop/rng.hpp"

namespace snoop {

enum class SnoopingMode { none, embedding_test_snooping };

inline std::string_view to_string(SnoopingMode m) {
  return m == SnoopingMode::none ? "none" : "embedding_test_snooping";
}

inline SnoopingMode parse_snooping_mode(std::string_view s) {
  if (s == "none") return SnoopingMode::none;
  if (s == "embedding_test_snooping" || s == "snoop") return SnoopingMode::embedding_test_snooping;
  throw error(errc::format, "unknown snooping mode '" + std::string(s) + "'");
}

using IdSet = std::set<std::string>;

struct FilterRule {
  std::string name;
  std::string description;
  // True when the rule consults information unavailable at prediction time
  // (labels, validation outcomes, ...).
  bool uses_unavailable_information = false;

  friend bool operator==(const FilterRule&, const FilterRule&) = default;
};

// Declared pipeline metadata that the auditor checks but cannot observe.
struct DeclaredSteps {
  std::string feature_selection_scope = "preprocessing_only";  // | train_only | all_samples
  bool used_kfold_for_tuning = false;
  std::string normalization_scope = "none";  // | per_sample | train_only | pre_split_global
  std::vector<FilterRule> filter_rules;
  std::optional<double> dataset_age_years;
  std::optional<bool> time_dependent_samples;
  std::optional<bool> temporal_split;

  friend bool operator==(const DeclaredSteps&, const DeclaredSteps&) = default;
};

// The declarations of the reference pipeline: preprocessing-only features, no
// k-fold tuning, no extra normalization and one token-length filter.
inline DeclaredSteps baseline_declarations(std::size_t max_tokens = 2048) {
  DeclaredSteps d;
  d.filter_rules.push_back({"max_tokens_" + std::to_string(max_tokens),
                            "functions with more than " + std::to_string(max_tokens) +
                                " tokens removed before partitioning",
                            false});
  return d;
}

struct ManifestCounts {
  std::size_t embedding_pool = 0;
  std::size_t dropped = 0;
  std::size_t post_drop = 0;
  std::size_t embedding_final = 0;
  std::size_t classifier_total = 0;
  std::size_t classifier_vulnerable = 0;
  std::size_t classifier_clean = 0;
  std::size_t classifier_train = 0;
  std::size_t classifier_val = 0;

  friend bool operator==(const ManifestCounts&, const ManifestCounts&) = default;
};

struct DatasetManifest {
  IdSet embedding_train_ids;
  IdSet classifier_train_ids;
  IdSet classifier_val_ids;
  IdSet dropped_ids;
  std::uint64_t seed = 0;
  std::string rng = std::string(kRngAlgorithm);
  SnoopingMode snooping_mode = SnoopingMode::none;
  std::string target_cwe;
  DeclaredSteps declared_steps;
  ManifestCounts counts;

  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

struct ClassifierSplit {
  Corpus classifier_set;
  Corpus embedding_pool;
};

// Classifier set: labeled functions carrying the target CWE. Pool: the rest.
inline ClassifierSplit split_by_cwe(const Corpus& corpus, std::string_view cwe) {
  ClassifierSplit out;
  out.classifier_set.provenance = corpus.provenance + " [classifier " + std::string(cwe) + "]";
  out.embedding_pool.provenance = corpus.provenance + " [embedding pool]";
  for (const auto& f : corpus.functions) {
    const bool target = f.label != Label::unlabeled && f.cwe && *f.cwe == cwe;
    (target ? out.classifier_set : out.embedding_pool).functions.push_back(f);
  }
  if (out.classifier_set.empty())
    throw error(errc::empty_classifier_set, "no labeled samples for " + std::string(cwe));
  return out;
}

struct InjectionResult {
  Corpus embedding_train;
  IdSet dropped_ids;
  std::size_t post_drop = 0;
};

// Drops |classifier_set| pool samples uniformly at random, then appends the
// whole classifier set, so the embedding dataset keeps its size.
inline InjectionResult inject_embedding_snooping(const Corpus& embedding_pool,
                                                 const Corpus& classifier_set, std::uint64_t seed) {
  const std::size_t k = classifier_set.size();
  if (k > embedding_pool.size())
    throw error(errc::insufficient_pool, "pool of " + std::to_string(embedding_pool.size()) +
                                             " cannot absorb " + std::to_string(k) + " samples");
  std::vector<std::size_t> order(embedding_pool.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  // Partial Fisher-Yates: the first k slots become the dropped sample.
  for (std::size_t i = 0; i < k; ++i) std::swap(order[i], order[i + rng.below(order.size() - i)]);
  std::vector<bool> drop(embedding_pool.size(), false);
  for (std::size_t i = 0; i < k; ++i) drop[order[i]] = true;

  InjectionResult out;
  out.embedding_train.provenance = embedding_pool.provenance + " [snooped]";
  out.embedding_train.functions.reserve(embedding_pool.size());
  for (std::size_t i = 0; i < embedding_pool.size(); ++i) {
    if (drop[i]) out.dropped_ids.insert(embedding_pool.functions[i].id);
    else out.embedding_train.functions.push_back(embedding_pool.functions[i]);
  }
  out.post_drop = out.embedding_train.size();
  for (const auto& f : classifier_set.functions) out.embedding_train.functions.push_back(f);
  return out;
}

inline std::size_t train_count(std::size_t n, double train_fraction) {
  return static_cast<std::size_t>(std::floor(static_cast<double>(n) * train_fraction + 1e-9));
}

struct TrainValSplit {
  Corpus train;
  Corpus val;
};

// Seeded shuffle, then the first floor(fraction * n) samples go to training.
inline TrainValSplit train_val_split(const Corpus& classifier_set, double train_fraction,
                                     std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw error(errc::config, "train_fraction must lie in (0, 1)");
  const std::size_t n = classifier_set.size();
  const std::size_t n_train = train_count(n, train_fraction);
  if (n < 2 || n_train == 0 || n_train == n)
    throw error(errc::split_too_small, std::to_string(n) + " samples cannot fill both sides");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  TrainValSplit out;
  out.train.provenance = classifier_set.provenance + " [train]";
  out.val.provenance = classifier_set.provenance + " [val]";
  for (std::size_t i = 0; i < n; ++i)
    (i < n_train ? out.train : out.val).functions.push_back(classifier_set.functions[order[i]]);
  return out;
}

inline IdSet ids_of(const Corpus& c) {
  IdSet s;
  for (const auto& f : c.functions) s.insert(f.id);
  return s;
}

inline std::size_t intersection_size(const IdSet& a, const IdSet& b) {
  const IdSet& small = a.size() <= b.size() ? a : b;
  const IdSet& large = a.size() <= b.size() ? b : a;
  std::size_t n = 0;
  for (const auto& id : small) n += large.count(id);
  return n;
}

struct PartitionConfig {
  std::string cwe = "CWE-121";
  double train_fraction = 0.80;
  std::uint64_t seed = 0;
  SnoopingMode mode = SnoopingMode::none;
  DeclaredSteps declared_steps = baseline_declarations();
};

struct Partition {
  Corpus embedding_train;
  Corpus classifier_train;
  Corpus classifier_val;
  DatasetManifest manifest;
};

// Full partitioning. The train/validation split and the snooping drop use
// independent seed streams, so both modes share classifier membership.
inline Partition partition_corpus(const Corpus& corpus, const PartitionConfig& cfg) {
  auto split = split_by_cwe(corpus, cfg.cwe);
  auto tv = train_val_split(split.classifier_set, cfg.train_fraction, derive_seed(cfg.seed, "split"));

  Partition p;
  DatasetManifest& m = p.manifest;
  m.seed = cfg.seed;
  m.snooping_mode = cfg.mode;
  m.target_cwe = cfg.cwe;
  m.declared_steps = cfg.declared_steps;
  m.counts.embedding_pool = split.embedding_pool.size();
  m.counts.classifier_total = split.classifier_set.size();
  for (const auto& f : split.classifier_set.functions)
    (f.label == Label::vulnerable ? m.counts.classifier_vulnerable : m.counts.classifier_clean)++;

  if (cfg.mode == SnoopingMode::embedding_test_snooping) {
    auto inj = inject_embedding_snooping(split.embedding_pool, split.classifier_set,
                                         derive_seed(cfg.seed, "drop"));
    m.counts.dropped = inj.dropped_ids.size();
    m.counts.post_drop = inj.post_drop;
    m.dropped_ids = std::move(inj.dropped_ids);
    p.embedding_train = std::move(inj.embedding_train);
  } else {
    m.counts.post_drop = split.embedding_pool.size();
    p.embedding_train = std::move(split.embedding_pool);
  }
  m.counts.embedding_final = p.embedding_train.size();
  m.embedding_train_ids = ids_of(p.embedding_train);
  m.classifier_train_ids = ids_of(tv.train);
  m.classifier_val_ids = ids_of(tv.val);
  m.counts.classifier_train = tv.train.size();
  m.counts.classifier_val = tv.val.size();
  p.classifier_train = std::move(tv.train);
  p.classifier_val = std::move(tv.val);
  return p;
}

// Resolves manifest id sets against a corpus, preserving corpus order.
inline Corpus select_ids(const Corpus& corpus, const IdSet& ids, std::string provenance = {}) {
  Corpus out;
  out.provenance = std::move(provenance);
  for (const auto& f : corpus.functions)
    if (ids.count(f.id)) out.functions.push_back(f);
  if (out.size() != ids.size())
    throw error(errc::resolution, std::to_string(ids.size() - out.size()) +
                                      " manifest ids are not present in the corpus");
  return out;
}

enum class ManifestCheck { structural, full };

// Throws manifest-invalid naming the first violated invariant.
inline void validate_manifest(const DatasetManifest& m, ManifestCheck level = ManifestCheck::full) {
  auto check_ids = [](const IdSet& s, const char* field) {
    for (const auto& id : s)
      if (!is_hex_digest(id))
        throw error(errc::manifest_invalid, std::string(field) + " contains malformed id '" + id + "'");
  };
  check_ids(m.embedding_train_ids, "embedding_train_ids");
  check_ids(m.classifier_train_ids, "classifier_train_ids");
  check_ids(m.classifier_val_ids, "classifier_val_ids");
  check_ids(m.dropped_ids, "dropped_ids");
  if (intersection_size(m.classifier_train_ids, m.classifier_val_ids) != 0)
    throw error(errc::manifest_invalid, "classifier_train_ids and classifier_val_ids overlap");
  if (level == ManifestCheck::structural) return;

  const std::size_t overlap = intersection_size(m.embedding_train_ids, m.classifier_train_ids) +
                              intersection_size(m.embedding_train_ids, m.classifier_val_ids);
  if (m.snooping_mode == SnoopingMode::none && overlap != 0)
    throw error(errc::manifest_invalid, "snooping_mode=none but " + std::to_string(overlap) +
                                            " classifier ids appear in embedding_train_ids");
  if (m.snooping_mode == SnoopingMode::embedding_test_snooping &&
      overlap != m.classifier_train_ids.size() + m.classifier_val_ids.size())
    throw error(errc::manifest_invalid,
                "snooping_mode=embedding_test_snooping but classifier ids are not a subset of "
                "embedding_train_ids");
}

inline nlohmann::json to_json(const DeclaredSteps& d) {
  nlohmann::json j;
  j["feature_selection_scope"] = d.feature_selection_scope;
  j["used_kfold_for_tuning"] = d.used_kfold_for_tuning;
  j["normalization_scope"] = d.normalization_scope;
  j["filter_rules"] = nlohmann::json::array();
  for (const auto& r : d.filter_rules)
    j["filter_rules"].push_back({{"name", r.name},
                                 {"description", r.description},
                                 {"uses_unavailable_information", r.uses_unavailable_information}});
  j["dataset_age_years"] = d.dataset_age_years ? nlohmann::json(*d.dataset_age_years) : nlohmann::json();
  j["time_dependent_samples"] =
      d.time_dependent_samples ? nlohmann::json(*d.time_dependent_samples) : nlohmann::json();
  j["temporal_split"] = d.temporal_split ? nlohmann::json(*d.temporal_split) : nlohmann::json();
  return j;
}

inline DeclaredSteps declared_steps_from_json(const nlohmann::json& j) {
  DeclaredSteps d;
  d.feature_selection_scope = j.value("feature_selection_scope", d.feature_selection_scope);
  d.used_kfold_for_tuning = j.value("used_kfold_for_tuning", false);
  d.normalization_scope = j.value("normalization_scope", d.normalization_scope);
  if (j.contains("filter_rules"))
    for (const auto& r : j.at("filter_rules"))
      d.filter_rules.push_back({r.at("name").get<std::string>(), r.value("description", std::string{}),
                                r.value("uses_unavailable_information", false)});
  if (j.contains("dataset_age_years") && !j["dataset_age_years"].is_null())
    d.dataset_age_years = j["dataset_age_years"].get<double>();
  if (j.contains("time_dependent_samples") && !j["time_dependent_samples"].is_null())
    d.time_dependent_samples = j["time_dependent_samples"].get<bool>();
  if (j.contains("temporal_split") && !j["temporal_split"].is_null())
    d.temporal_split = j["temporal_split"].get<bool>();
  return d;
}

inline nlohmann::json to_json(const DatasetManifest& m) {
  nlohmann::json j;
  j["format"] = "snoop-manifest/1";
  j["embedding_train_ids"] = m.embedding_train_ids;
  j["classifier_train_ids"] = m.classifier_train_ids;
  j["classifier_val_ids"] = m.classifier_val_ids;
  j["dropped_ids"] = m.dropped_ids;
  j["seed"] = m.seed;
  j["rng"] = m.rng;
  j["snooping_mode"] = to_string(m.snooping_mode);
  j["target_cwe"] = m.target_cwe;
  j["declared_steps"] = to_json(m.declared_steps);
  const auto& c = m.counts;
  j["counts"] = {{"embedding_pool", c.embedding_pool},
                 {"dropped", c.dropped},
                 {"post_drop", c.post_drop},
                 {"embedding_final", c.embedding_final},
                 {"classifier_total", c.classifier_total},
                 {"classifier_vulnerable", c.classifier_vulnerable},
                 {"classifier_clean", c.classifier_clean},
                 {"classifier_train", c.classifier_train},
                 {"classifier_val", c.classifier_val}};
  return j;
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
  DatasetManifest m;
  try {
    m.embedding_train_ids = j.at("embedding_train_ids").get<IdSet>();
    m.classifier_train_ids = j.at("classifier_train_ids").get<IdSet>();
    m.classifier_val_ids = j.at("classifier_val_ids").get<IdSet>();
    m.dropped_ids = j.value("dropped_ids", IdSet{});
    m.seed = j.at("seed").get<std::uint64_t>();
    m.rng = j.value("rng", std::string(kRngAlgorithm));
    m.snooping_mode = parse_snooping_mode(j.at("snooping_mode").get<std::string>());
    m.target_cwe = j.value("target_cwe", std::string{});
    m.declared_steps = declared_steps_from_json(j.value("declared_steps", nlohmann::json::object()));
    if (j.contains("counts")) {
      const auto& c = j["counts"];
      auto& o = m.counts;
      o.embedding_pool = c.value("embedding_pool", std::size_t{0});
      o.dropped = c.value("dropped", std::size_t{0});
      o.post_drop = c.value("post_drop", std::size_t{0});
      o.embedding_final = c.value("embedding_final", std::size_t{0});
      o.classifier_total = c.value("classifier_total", std::size_t{0});
      o.classifier_vulnerable = c.value("classifier_vulnerable", std::size_t{0});
      o.classifier_clean = c.value("classifier_clean", std::size_t{0});
      o.classifier_train = c.value("classifier_train", std::size_t{0});
      o.classifier_val = c.value("classifier_val", std::size_t{0});
    }
  } catch (const nlohmann::json::exception& e) {
    throw error(errc::manifest_invalid, std::string("malformed manifest: ") + e.what());
  }
  return m;
}

// Canonical form: sorted keys, sorted id arrays, two-space indentation.
inline std::string serialize_manifest(const DatasetManifest& m) { return to_json(m).dump(2) + "\n"; }

inline void write_manifest(const std::filesystem::path& p, const DatasetManifest& m) {
  write_file(p, serialize_manifest(m));
}

inline DatasetManifest parse_manifest(std::string_view text, ManifestCheck level = ManifestCheck::full) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw error(errc::manifest_invalid, std::string("not JSON: ") + e.what());
  }
  auto m = manifest_from_json(j);
  validate_manifest(m, level);
  return m;
}

inline DatasetManifest read_manifest(const std::filesystem::path& p,
                                     ManifestCheck level = ManifestCheck::full) {
  return parse_manifest(read_file(p), level);
}

}  // namespace snoop
