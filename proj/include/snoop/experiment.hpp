#pragma once

#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "snoop/classifier.hpp"
#include "snoop/embeddings.hpp"
#include "snoop/partitioner.hpp"
#include "snoop/tokenizer.hpp"

#ifndef SNOOP_VERSION
#define SNOOP_VERSION "0.0.0"
#endif

namespace snoop {

inline constexpr std::string_view kReportSchemaVersion = "snoop-report/1";
inline constexpr std::string_view kToolVersion = SNOOP_VERSION;

struct ExperimentConfig {
  std::vector<EmbeddingKind> embedding_kinds{EmbeddingKind::skipgram};
  std::vector<OptimizerConfig> optimizers = reference_optimizer_grid();
  std::vector<SnoopingMode> modes{SnoopingMode::none, SnoopingMode::embedding_test_snooping};
  std::uint64_t master_seed = 0;
  std::string target_cwe = "CWE-121";
  double train_fraction = 0.80;
  DeclaredSteps declared_steps = baseline_declarations();
  Word2VecConfig word2vec;                 // kind and seed are set per cell
  ClassifierConfig classifier;             // optimizer and seed are set per cell
  std::uint64_t vocab_min_count = 1;
  // External embeddings, one file per mode (a single entry serves both).
  std::map<SnoopingMode, std::filesystem::path> external_paths;
  std::size_t jobs = 1;
  // Run directory; empty disables artifact output.
  std::filesystem::path out_dir;
};

// Per-purpose seeds expanded from the master seed.
struct DerivedSeeds {
  std::uint64_t partition, embedding, classifier;

  static DerivedSeeds from(std::uint64_t master) {
    return {derive_seed(master, "partition"), derive_seed(master, "embedding"), derive_seed(master, "classifier")};
  }
};

struct MetricDeltas {
  int epoch = 0;
  double loss = 0, accuracy = 0, precision = 0, recall = 0, f1 = 0;

  friend bool operator==(const MetricDeltas&, const MetricDeltas&) = default;
};

inline MetricDeltas compute_deltas(const MetricsRecord& baseline, const MetricsRecord& snooped) {
  return {snooped.epoch - baseline.epoch,         snooped.loss - baseline.loss,
          snooped.accuracy - baseline.accuracy,   snooped.precision - baseline.precision,
          snooped.recall - baseline.recall,       snooped.f1 - baseline.f1};
}

struct ReportRow {
  EmbeddingKind embedding_kind = EmbeddingKind::skipgram;
  OptimizerConfig optimizer;
  std::optional<MetricsRecord> baseline;
  std::optional<MetricsRecord> snooped;

  std::optional<MetricDeltas> deltas() const {
    if (!baseline || !snooped) return std::nullopt;
    return compute_deltas(*baseline, *snooped);
  }

  friend bool operator==(const ReportRow&, const ReportRow&) = default;
};

struct BestModels {
  EmbeddingKind embedding_kind = EmbeddingKind::skipgram;
  std::optional<std::size_t> baseline_row;
  std::optional<std::size_t> snooped_row;

  friend bool operator==(const BestModels&, const BestModels&) = default;
};

struct ComparisonReport {
  nlohmann::json environment = nlohmann::json::object();
  std::vector<ReportRow> rows;
  std::vector<BestModels> best_models;

  friend bool operator==(const ComparisonReport&, const ComparisonReport&) = default;
};

// Best baseline and best snooped row for every embedding kind present.
inline std::vector<BestModels> select_best_models(const std::vector<ReportRow>& rows) {
  std::vector<BestModels> out;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto it = std::find_if(out.begin(), out.end(),
                           [&](const BestModels& b) { return b.embedding_kind == rows[i].embedding_kind; });
    if (it == out.end()) {
      out.push_back({rows[i].embedding_kind, std::nullopt, std::nullopt});
      it = out.end() - 1;
    }
    if (rows[i].baseline && (!it->baseline_row || better_record(*rows[i].baseline, *rows[*it->baseline_row].baseline)))
      it->baseline_row = i;
    if (rows[i].snooped && (!it->snooped_row || better_record(*rows[i].snooped, *rows[*it->snooped_row].snooped)))
      it->snooped_row = i;
  }
  return out;
}

inline nlohmann::json to_json(const MetricDeltas& d) {
  return {{"epoch", d.epoch}, {"loss", d.loss},     {"accuracy", d.accuracy},
          {"precision", d.precision}, {"recall", d.recall}, {"f1", d.f1}};
}

inline nlohmann::json to_json(const ComparisonReport& r) {
  nlohmann::json j;
  j["schema_version"] = kReportSchemaVersion;
  j["environment"] = r.environment;
  j["rows"] = nlohmann::json::array();
  for (const auto& row : r.rows) {
    const auto d = row.deltas();
    j["rows"].push_back({{"embedding_kind", to_string(row.embedding_kind)},
                         {"optimizer", to_json(row.optimizer)},
                         {"baseline", row.baseline ? to_json(*row.baseline) : nlohmann::json()},
                         {"snooped", row.snooped ? to_json(*row.snooped) : nlohmann::json()},
                         {"deltas", d ? to_json(*d) : nlohmann::json()}});
  }
  j["best_models"] = nlohmann::json::array();
  auto entry = [&](std::optional<std::size_t> row, bool snooped) -> nlohmann::json {
    if (!row) return nullptr;
    const auto& rec = snooped ? *r.rows[*row].snooped : *r.rows[*row].baseline;
    return {{"row", *row}, {"optimizer", r.rows[*row].optimizer.name()}, {"accuracy", rec.accuracy}, {"f1", rec.f1}};
  };
  for (const auto& b : r.best_models)
    j["best_models"].push_back({{"embedding_kind", to_string(b.embedding_kind)},
                                {"baseline", entry(b.baseline_row, false)},
                                {"snooped", entry(b.snooped_row, true)}});
  return j;
}

// Structural checks the schema cannot express: deltas recompute from the
// stored records and best-model entries point at existing rows.
inline void check_report_invariants(const nlohmann::json& j) {
  auto fail = [](const std::string& what) { throw error(errc::format, "report: " + what); };
  if (j.value("schema_version", "") != kReportSchemaVersion) fail("unknown schema_version");
  const auto& rows = j.at("rows");
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& row = rows[i];
    if (row.at("baseline").is_null() || row.at("snooped").is_null()) {
      if (!row.at("deltas").is_null()) fail("row " + std::to_string(i) + " has deltas without both records");
      continue;
    }
    const auto d = compute_deltas(record_from_json(row.at("baseline")), record_from_json(row.at("snooped")));
    const auto& s = row.at("deltas");
    if (s.at("epoch").get<int>() != d.epoch || s.at("loss").get<double>() != d.loss ||
        s.at("accuracy").get<double>() != d.accuracy || s.at("precision").get<double>() != d.precision ||
        s.at("recall").get<double>() != d.recall || s.at("f1").get<double>() != d.f1)
      fail("row " + std::to_string(i) + " deltas differ from snooped - baseline");
  }
  for (const auto& b : j.at("best_models")) {
    for (const char* side : {"baseline", "snooped"}) {
      if (b.at(side).is_null()) continue;
      const auto row = b.at(side).at("row").get<std::size_t>();
      if (row >= rows.size()) fail(std::string("best_models ") + side + " row out of range");
      if (rows[row].at("embedding_kind") != b.at("embedding_kind")) fail("best_models row has another embedding kind");
      if (rows[row].at(side).is_null()) fail("best_models points at a row without that record");
    }
  }
}

inline ComparisonReport report_from_json(const nlohmann::json& j) {
  check_report_invariants(j);
  ComparisonReport r;
  r.environment = j.at("environment");
  for (const auto& row : j.at("rows")) {
    ReportRow out;
    out.embedding_kind = parse_embedding_kind(row.at("embedding_kind").get<std::string>());
    out.optimizer = optimizer_from_json(row.at("optimizer"));
    if (!row.at("baseline").is_null()) out.baseline = record_from_json(row.at("baseline"));
    if (!row.at("snooped").is_null()) out.snooped = record_from_json(row.at("snooped"));
    r.rows.push_back(std::move(out));
  }
  for (const auto& b : j.at("best_models")) {
    BestModels out;
    out.embedding_kind = parse_embedding_kind(b.at("embedding_kind").get<std::string>());
    if (!b.at("baseline").is_null()) out.baseline_row = b.at("baseline").at("row").get<std::size_t>();
    if (!b.at("snooped").is_null()) out.snooped_row = b.at("snooped").at("row").get<std::size_t>();
    r.best_models.push_back(out);
  }
  return r;
}

inline std::string render_json(const ComparisonReport& r) { return to_json(r).dump(2) + "\n"; }

// Markdown cell formats: percentages to one decimal, losses to four, signed
// deltas in parentheses, "±0" when the rounded delta is zero.
namespace fmt_detail {

inline std::string fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  std::string s = buf;
  if (s.find_first_not_of("-0.") == std::string::npos && s[0] == '-') s.erase(0, 1);
  return s;
}

inline std::string signed_delta(double v, int decimals, const std::string& unit) {
  const std::string mag = fixed(std::abs(v), decimals);
  if (mag.find_first_not_of("0.") == std::string::npos) return "±0" + unit;
  return (v > 0 ? "+" : "-") + mag + unit;
}

}  // namespace fmt_detail

inline std::string format_percent(double fraction) { return fmt_detail::fixed(fraction * 100.0, 1) + "%"; }

inline std::string format_percent_delta(double fraction_delta) {
  return "(" + fmt_detail::signed_delta(fraction_delta * 100.0, 1, "%") + ")";
}

inline std::string format_loss(double loss) { return fmt_detail::fixed(loss, 4); }

inline std::string format_loss_delta(double delta) { return "(" + fmt_detail::signed_delta(delta, 4, "") + ")"; }

inline std::string format_epoch_delta(int delta) {
  if (delta == 0) return "(±0)";
  return "(" + std::string(delta > 0 ? "+" : "-") + std::to_string(std::abs(delta)) + ")";
}

inline std::string render_cells(const MetricsRecord& rec, const std::optional<MetricDeltas>& d) {
  std::string out = "| " + std::to_string(rec.epoch) + (d ? format_epoch_delta(d->epoch) : "");
  out += " | " + format_loss(rec.loss) + (d ? " " + format_loss_delta(d->loss) : "");
  const double values[] = {rec.accuracy, rec.precision, rec.recall, rec.f1};
  const double deltas[] = {d ? d->accuracy : 0, d ? d->precision : 0, d ? d->recall : 0, d ? d->f1 : 0};
  for (int i = 0; i < 4; ++i) out += " | " + format_percent(values[i]) + (d ? " " + format_percent_delta(deltas[i]) : "");
  return out + " |";
}

inline std::string render_markdown(const ComparisonReport& r) {
  std::ostringstream os;
  os << "# Snooping comparison\n\n";
  const auto& env = r.environment;
  if (env.contains("master_seed")) os << "Master seed: " << env["master_seed"].dump() << "  \n";
  if (env.contains("corpus_hash")) os << "Corpus: `" << env["corpus_hash"].get<std::string>() << "`  \n";
  if (env.contains("batch_size")) os << "Batch size: " << env["batch_size"].dump() << "  \n";
  if (env.contains("threshold")) os << "Threshold: " << env["threshold"].dump() << "  \n";
  os << "Report schema: " << kReportSchemaVersion << "\n";
  if (r.rows.empty()) {
    os << "\nNo configurations were run.\n";
    return os.str();
  }
  const char* head = "| Optimizer | Epoch | Loss | Accuracy | Precision | Recall | F1 |\n|---|---|---|---|---|---|---|\n";
  std::vector<EmbeddingKind> kinds;
  for (const auto& row : r.rows)
    if (std::find(kinds.begin(), kinds.end(), row.embedding_kind) == kinds.end()) kinds.push_back(row.embedding_kind);
  for (auto kind : kinds) {
    os << "\n## " << to_string(kind) << "\n\n### Without snooping\n\n" << head;
    for (const auto& row : r.rows)
      if (row.embedding_kind == kind && row.baseline)
        os << "| " << row.optimizer.name() << " " << render_cells(*row.baseline, std::nullopt) << "\n";
    os << "\n### With embedding snooping (delta vs. without)\n\n" << head;
    for (const auto& row : r.rows)
      if (row.embedding_kind == kind && row.snooped)
        os << "| " << row.optimizer.name() << " " << render_cells(*row.snooped, row.deltas()) << "\n";
  }
  os << "\n## Best models\n\n| Embedding | Snooping | Optimizer | Accuracy | F1 |\n|---|---|---|---|---|\n";
  for (const auto& b : r.best_models) {
    if (b.baseline_row) {
      const auto& row = r.rows[*b.baseline_row];
      os << "| " << to_string(b.embedding_kind) << " | no | " << row.optimizer.name() << " | "
         << format_percent(row.baseline->accuracy) << " | " << format_percent(row.baseline->f1) << " |\n";
    }
    if (b.snooped_row) {
      const auto& row = r.rows[*b.snooped_row];
      os << "| " << to_string(b.embedding_kind) << " | yes | " << row.optimizer.name() << " | "
         << format_percent(row.snooped->accuracy) << " | " << format_percent(row.snooped->f1) << " |\n";
    }
  }
  return os.str();
}

// Runs fn(0..n-1) on up to `jobs` threads. The first exception is rethrown
// after all workers stop.
template <class Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn&& fn) {
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex mu;
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < n;) {
      {
        std::lock_guard lock(mu);
        if (failure) return;
      }
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < std::min(jobs, n); ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

inline std::string mode_slug(SnoopingMode m) { return std::string(to_string(m)); }

inline std::string cell_slug(EmbeddingKind k, const OptimizerConfig& o, SnoopingMode m) {
  return std::string(to_string(k)) + "_" + o.name() + "_" + mode_slug(m);
}

struct ModeData {
  SnoopingMode mode;
  Partition partition;
};

struct EmbeddingData {
  SnoopingMode mode;
  EmbeddingKind kind;
  std::shared_ptr<Vocabulary> vocab;  // null for contextual
  std::shared_ptr<EmbeddingModel> model;
  std::vector<Sample> train, val;
};

inline nlohmann::json class_balance(const Corpus& c) {
  std::size_t vuln = 0;
  for (const auto& f : c.functions) vuln += f.label == Label::vulnerable;
  return {{"total", c.size()}, {"vulnerable", vuln}, {"clean", c.size() - vuln}};
}

inline nlohmann::json environment_echo(const ExperimentConfig& cfg, const Corpus& corpus) {
  const auto seeds = DerivedSeeds::from(cfg.master_seed);
  nlohmann::json kinds = nlohmann::json::array(), modes = nlohmann::json::array(), opts = nlohmann::json::array();
  for (auto k : cfg.embedding_kinds) kinds.push_back(to_string(k));
  for (auto m : cfg.modes) modes.push_back(to_string(m));
  for (const auto& o : cfg.optimizers) opts.push_back(o.name());
  nlohmann::json external = nlohmann::json::object();
  for (const auto& [m, p] : cfg.external_paths) external[std::string(to_string(m))] = sha256_hex(read_file(p));
  return {{"tool_version", kToolVersion},
          {"rng", kRngAlgorithm},
          {"master_seed", cfg.master_seed},
          {"derived_seeds",
           {{"partition", seeds.partition}, {"embedding", seeds.embedding}, {"classifier", seeds.classifier}}},
          {"corpus_hash", corpus_hash(corpus)},
          {"corpus_size", corpus.size()},
          {"target_cwe", cfg.target_cwe},
          {"train_fraction", cfg.train_fraction},
          {"embedding_kinds", kinds},
          {"modes", modes},
          {"optimizers", opts},
          {"batch_size", cfg.classifier.batch_size},
          {"threshold", cfg.classifier.threshold},
          {"epochs", cfg.classifier.epochs},
          {"hidden_size", cfg.classifier.hidden_size},
          {"num_lstm_layers", cfg.classifier.num_lstm_layers},
          {"dropout_rate", cfg.classifier.dropout_rate},
          {"embedding_trainable", cfg.classifier.embedding_trainable},
          {"word2vec",
           {{"dim", cfg.word2vec.dim},
            {"window", cfg.word2vec.window},
            {"negatives", cfg.word2vec.negatives},
            {"epochs", cfg.word2vec.epochs},
            {"initial_rate", cfg.word2vec.initial_rate}}},
          {"vocab_min_count", cfg.vocab_min_count},
          {"external_embedding_hashes", external}};
}

namespace experiment_detail {

inline std::filesystem::path external_path(const ExperimentConfig& cfg, SnoopingMode m) {
  auto it = cfg.external_paths.find(m);
  if (it != cfg.external_paths.end()) return it->second;
  if (cfg.external_paths.size() == 1) return cfg.external_paths.begin()->second;
  throw error(errc::config, "no external embedding file for mode " + std::string(to_string(m)));
}

inline EmbeddingData prepare_embedding(const ExperimentConfig& cfg, const ModeData& md, EmbeddingKind kind) {
  EmbeddingData ed;
  ed.mode = md.mode;
  ed.kind = kind;
  const auto& part = md.partition;
  const auto seeds = DerivedSeeds::from(cfg.master_seed);
  if (kind == EmbeddingKind::cbow || kind == EmbeddingKind::skipgram) {
    std::vector<std::string_view> texts;
    for (const auto& f : part.embedding_train.functions) texts.push_back(f.normalized_text);
    ed.vocab = std::make_shared<Vocabulary>(build_vocab_from_texts(texts, cfg.vocab_min_count));
    Word2VecConfig wc = cfg.word2vec;
    wc.kind = kind;
    wc.seed = seeds.embedding;
    ed.model = std::make_shared<EmbeddingModel>(train_word2vec(encode_corpus(part.embedding_train, *ed.vocab), *ed.vocab, wc));
  } else {
    ed.model = std::make_shared<EmbeddingModel>(import_external(external_path(cfg, md.mode), kind));
    if (kind == EmbeddingKind::external_static) {
      std::map<std::string, std::uint64_t> counts;
      for (const auto& t : ed.model->tokens) counts[t] = 1;
      ed.vocab = std::make_shared<Vocabulary>(Vocabulary::from_counts(counts, 1));
    }
  }
  if (ed.vocab) {
    ed.train = make_samples(part.classifier_train, *ed.vocab);
    ed.val = make_samples(part.classifier_val, *ed.vocab);
  } else {
    for (const auto& f : part.classifier_train.functions) ed.train.push_back({f.id, {}, f.label == Label::vulnerable});
    for (const auto& f : part.classifier_val.functions) ed.val.push_back({f.id, {}, f.label == Label::vulnerable});
  }
  return ed;
}

}  // namespace experiment_detail

// Paired grid: every optimizer x mode x embedding kind. Both modes share the
// classifier split, embedding seed and classifier initialization seed.
inline ComparisonReport run_grid(const Corpus& corpus, const ExperimentConfig& cfg) {
  const auto seeds = DerivedSeeds::from(cfg.master_seed);
  const auto& out = cfg.out_dir;
  ComparisonReport report;
  report.environment = environment_echo(cfg, corpus);
  if (!out.empty()) write_file(out / "env.json", report.environment.dump(2) + "\n");

  std::vector<ModeData> modes;
  for (auto m : cfg.modes) {
    PartitionConfig pc;
    pc.cwe = cfg.target_cwe;
    pc.train_fraction = cfg.train_fraction;
    pc.seed = seeds.partition;
    pc.mode = m;
    pc.declared_steps = cfg.declared_steps;
    modes.push_back({m, partition_corpus(corpus, pc)});
    const auto text = serialize_manifest(modes.back().partition.manifest);
    report.environment["manifest_hashes"][mode_slug(m)] = sha256_hex(text);
    report.environment["class_balance"][mode_slug(m)] = {
        {"train", class_balance(modes.back().partition.classifier_train)},
        {"val", class_balance(modes.back().partition.classifier_val)}};
    if (!out.empty()) write_file(out / "manifests" / (mode_slug(m) + ".json"), text);
  }
  if (modes.size() == 2 && (modes[0].partition.manifest.classifier_train_ids != modes[1].partition.manifest.classifier_train_ids ||
                            modes[0].partition.manifest.classifier_val_ids != modes[1].partition.manifest.classifier_val_ids))
    throw error(errc::manifest_invalid, "paired modes do not share classifier membership");
  if (cfg.optimizers.empty() || cfg.embedding_kinds.empty()) return report;

  if (!out.empty())
    for (const char* sub : {"embeddings", "metrics", "models"}) std::filesystem::create_directories(out / sub);

  // Embeddings per (mode, kind).
  std::vector<EmbeddingData> embeddings(modes.size() * cfg.embedding_kinds.size());
  parallel_for(embeddings.size(), cfg.jobs, [&](std::size_t i) {
    const auto& md = modes[i / cfg.embedding_kinds.size()];
    const auto kind = cfg.embedding_kinds[i % cfg.embedding_kinds.size()];
    try {
      embeddings[i] = experiment_detail::prepare_embedding(cfg, md, kind);
    } catch (const error& e) {
      throw error(e.code(), "[embedding=" + std::string(to_string(kind)) + " mode=" + mode_slug(md.mode) + "] " + e.what());
    }
    if (!out.empty()) {
      const auto stem = out / "embeddings" / (mode_slug(md.mode) + "_" + std::string(to_string(kind)));
      if (embeddings[i].vocab) write_file(stem.string() + ".vocab", embeddings[i].vocab->serialize());
      if (!embeddings[i].model->is_contextual()) {
        write_file(stem.string() + ".vec", serialize_static_vectors(*embeddings[i].model));
        write_file(stem.string() + ".log.json", training_log_json(*embeddings[i].model).dump(2) + "\n");
      }
    }
  });

  // Classifier cells, ordered (kind, optimizer, mode).
  const std::size_t n_modes = modes.size(), n_opts = cfg.optimizers.size();
  std::vector<std::optional<MetricsRecord>> best(cfg.embedding_kinds.size() * n_opts * n_modes);
  parallel_for(best.size(), cfg.jobs, [&](std::size_t cell) {
    const std::size_t k = cell / (n_opts * n_modes), o = (cell / n_modes) % n_opts, mi = cell % n_modes;
    const auto kind = cfg.embedding_kinds[k];
    const auto& opt = cfg.optimizers[o];
    const auto& ed = embeddings[mi * cfg.embedding_kinds.size() + k];
    const auto slug = cell_slug(kind, opt, modes[mi].mode);
    try {
      ClassifierConfig cc = cfg.classifier;
      cc.optimizer = opt;
      cc.seed = seeds.classifier;
      if (kind == EmbeddingKind::external_contextual) cc.embedding_trainable = false;
      auto model = LstmClassifier<float>::build(*ed.model, ed.vocab.get(), cc);
      std::string metrics;
      auto result = train(model, ed.train, ed.val,
                          [&](const MetricsRecord& r) { metrics += to_json(r).dump() + "\n"; });
      best[cell] = result.history[result.best];
      if (!out.empty()) {
        write_file(out / "metrics" / (slug + ".jsonl"), metrics);
        model.tensors() = result.best_weights;
        write_file(out / "models" / (slug + ".bin"),
                   serialize_model(model, {{"best_epoch", best[cell]->epoch},
                                           {"mode", mode_slug(modes[mi].mode)},
                                           {"embedding_kind", to_string(kind)}}));
      }
    } catch (const error& e) {
      throw error(e.code(), "[embedding=" + std::string(to_string(kind)) + " optimizer=" + opt.name() +
                                " mode=" + mode_slug(modes[mi].mode) + "] " + e.what());
    }
  });

  for (std::size_t k = 0; k < cfg.embedding_kinds.size(); ++k)
    for (std::size_t o = 0; o < n_opts; ++o) {
      ReportRow row;
      row.embedding_kind = cfg.embedding_kinds[k];
      row.optimizer = cfg.optimizers[o];
      for (std::size_t mi = 0; mi < n_modes; ++mi) {
        const auto& rec = best[(k * n_opts + o) * n_modes + mi];
        (modes[mi].mode == SnoopingMode::none ? row.baseline : row.snooped) = rec;
      }
      report.rows.push_back(std::move(row));
    }
  report.best_models = select_best_models(report.rows);
  return report;
}

// Writes report.json and report.md into the run directory.
inline void write_report(const std::filesystem::path& dir, const ComparisonReport& r) {
  write_file(dir / "report.json", render_json(r));
  write_file(dir / "report.md", render_markdown(r));
}

}  // namespace snoop
