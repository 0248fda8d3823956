// snoopctl: command-line driver for the snoop pipeline.
//
// Exit status: 0 success, 1 domain error, 2 usage error, 3 audit violation.

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "snoop/audit.hpp"
#include "snoop/classifier.hpp"
#include "snoop/embeddings.hpp"
#include "snoop/experiment.hpp"
#include "snoop/ir_corpus.hpp"
#include "snoop/partitioner.hpp"
#include "snoop/report_schema.hpp"
#include "snoop/synth.hpp"

namespace fs = std::filesystem;
using namespace snoop;

namespace {

constexpr int kExitDomain = 1;
constexpr int kExitUsage = 2;
constexpr int kExitViolation = 3;

std::string hash_input(const fs::path& p) {
  if (!fs::is_directory(p)) return sha256_hex(read_file(p));
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(p))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  Sha256 h;
  for (const auto& f : files) h.update(f.filename().string()).update("\n").update(sha256_hex(read_file(f))).update("\n");
  return h.hex();
}

// Environment echo written before any other output of a run.
void write_env(const fs::path& out, const std::string& command, const std::vector<fs::path>& inputs,
               nlohmann::json settings) {
  nlohmann::json hashes = nlohmann::json::object();
  for (const auto& in : inputs)
    if (!in.empty()) hashes[in.string()] = hash_input(in);
  write_file(out / "env.json", nlohmann::json{{"tool_version", kToolVersion},
                                              {"rng", kRngAlgorithm},
                                              {"command", command},
                                              {"settings", std::move(settings)},
                                              {"input_hashes", std::move(hashes)}}
                                       .dump(2) + "\n");
}

SnoopingMode mode_from_flag(const std::string& s) {
  if (s == "snoop") return SnoopingMode::embedding_test_snooping;
  return parse_snooping_mode(s);
}

std::vector<SnoopingMode> modes_from_flag(const std::string& s) {
  if (s == "both") return {SnoopingMode::none, SnoopingMode::embedding_test_snooping};
  return {mode_from_flag(s)};
}

// "external" resolves to the static or contextual kind by file content.
EmbeddingKind external_kind_of(const fs::path& file) {
  const auto text = read_file(file);
  const auto first = text.find_first_not_of(" \t\r\n");
  return first != std::string::npos && text[first] == '{' ? EmbeddingKind::external_contextual
                                                          : EmbeddingKind::external_static;
}

std::vector<OptimizerConfig> configs_from_flag(const std::string& s) {
  if (s == "paper7") return reference_optimizer_grid();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(s));
  } catch (const nlohmann::json::exception& e) {
    throw error(errc::config, s + ": " + e.what());
  }
  if (!j.is_array()) throw error(errc::config, s + ": expected a JSON array of optimizer objects");
  std::vector<OptimizerConfig> out;
  for (const auto& o : j) out.push_back(optimizer_from_json(o));
  return out;
}

OptimizerConfig optimizer_from_name(const std::string& name) {
  for (const auto& o : reference_optimizer_grid())
    if (o.name() == name) return o;
  OptimizerConfig o;
  double lr = 0, mom = 0;
  char tail = 0;
  if (std::sscanf(name.c_str(), "adam-lr%lf%c", &lr, &tail) == 1) {
    o.kind = OptimizerKind::adam;
  } else if (std::sscanf(name.c_str(), "sgd-lr%lf-mom%lf%c", &lr, &mom, &tail) == 2) {
    o.kind = OptimizerKind::sgd;
    o.momentum = mom;
  } else {
    throw error(errc::config, "optimizer '" + name + "' is not adam-lrX or sgd-lrX-momY");
  }
  if (!(lr > 0)) throw error(errc::config, "learning rate must be positive");
  o.learning_rate = lr;
  return o;
}

struct ClassifierFlags {
  std::size_t hidden = 128, layers = 2, epochs = 50, batch = 32;
  double dropout = 0.2, threshold = 0.5;
  bool freeze = false;

  void add(CLI::App* app) {
    app->add_option("--hidden", hidden, "LSTM hidden size")->capture_default_str();
    app->add_option("--layers", layers, "Stacked LSTM layers")->capture_default_str();
    app->add_option("--epochs", epochs, "Classifier epochs")->capture_default_str();
    app->add_option("--batch-size", batch, "Mini-batch size")->capture_default_str();
    app->add_option("--dropout", dropout, "Dropout rate")->capture_default_str();
    app->add_option("--threshold", threshold, "Decision threshold")->capture_default_str();
    app->add_flag("--freeze-embedding", freeze, "Keep the embedding layer fixed");
  }

  ClassifierConfig config() const {
    ClassifierConfig c;
    c.hidden_size = hidden;
    c.num_lstm_layers = layers;
    c.epochs = epochs;
    c.batch_size = batch;
    c.dropout_rate = dropout;
    c.threshold = threshold;
    c.embedding_trainable = !freeze;
    return c;
  }
};

struct Word2VecFlags {
  std::size_t dim = 100, window = 5, negatives = 5, epochs = 5, min_count = 1;
  double rate = 0.025;

  void add(CLI::App* app) {
    app->add_option("--dim", dim, "Embedding dimension")->capture_default_str();
    app->add_option("--window", window, "Context window")->capture_default_str();
    app->add_option("--negatives", negatives, "Negative samples per pair")->capture_default_str();
    app->add_option("--w2v-epochs", epochs, "Embedding training epochs")->capture_default_str();
    app->add_option("--w2v-rate", rate, "Initial embedding learning rate")->capture_default_str();
    app->add_option("--min-count", min_count, "Vocabulary minimum count")->capture_default_str();
  }

  Word2VecConfig config() const {
    Word2VecConfig c;
    c.dim = dim;
    c.window = window;
    c.negatives = negatives;
    c.epochs = epochs;
    c.initial_rate = rate;
    return c;
  }

  nlohmann::json echo() const {
    return {{"dim", dim}, {"window", window}, {"negatives", negatives}, {"epochs", epochs}, {"rate", rate},
            {"min_count", min_count}};
  }
};

const std::vector<std::string> kModeChoices{"none", "snoop", "embedding_test_snooping"};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Detect and reproduce embedding test snooping in vulnerability-detection pipelines", "snoopctl"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.require_subcommand(1);

  // ingest
  fs::path ingest_in, ingest_out;
  std::size_t ingest_max = 2048;
  auto* ingest = app.add_subcommand("ingest", "Extract, normalize and label functions from .ll files");
  ingest->add_option("--input", ingest_in, "Directory of .ll modules")->required()->check(CLI::ExistingDirectory);
  ingest->add_option("--out", ingest_out, "Run directory")->required();
  ingest->add_option("--max-tokens", ingest_max, "Drop functions longer than this")->capture_default_str();

  // synth
  SynthSpec synth_spec;
  synth_spec.n_pool = 2000;
  synth_spec.n_pairs = 200;
  fs::path synth_out;
  std::size_t synth_max = 2048;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic labeled corpus");
  synth->add_option("--out", synth_out, "Run directory")->required();
  synth->add_option("--seed", synth_spec.seed, "Generator seed")->capture_default_str();
  synth->add_option("--pool", synth_spec.n_pool, "Unlabeled pool functions")->capture_default_str();
  synth->add_option("--pairs", synth_spec.n_pairs, "Vulnerable/clean pairs")->capture_default_str();
  synth->add_option("--extra-clean", synth_spec.n_extra_clean, "Unpaired clean samples")->capture_default_str();
  synth->add_option("--signal", synth_spec.signal_strength, "Signal strength in [0,1]")->capture_default_str();
  synth->add_option("--pattern", synth_spec.vuln_pattern, "Template")
      ->check(CLI::IsMember({"stack_memcpy", "stack_strncpy"}))
      ->capture_default_str();
  synth->add_option("--functions-per-file", synth_spec.functions_per_file, "Functions per .ll file")
      ->capture_default_str();
  synth->add_option("--max-tokens", synth_max, "Drop functions longer than this")->capture_default_str();

  // partition
  fs::path part_in, part_out;
  std::uint64_t part_seed = 0;
  std::string part_mode = "none", part_cwe = "CWE-121";
  double part_fraction = 0.8;
  auto* partition = app.add_subcommand("partition", "Split a corpus into embedding/train/validation sets");
  partition->add_option("--input", part_in, "Corpus JSONL")->required()->check(CLI::ExistingFile);
  partition->add_option("--out", part_out, "Run directory")->required();
  partition->add_option("--seed", part_seed, "Master seed")->capture_default_str();
  partition->add_option("--mode", part_mode, "Snooping mode")->check(CLI::IsMember(kModeChoices))->capture_default_str();
  partition->add_option("--cwe", part_cwe, "Target CWE")->capture_default_str();
  partition->add_option("--train-fraction", part_fraction, "Classifier train fraction")->capture_default_str();

  // audit
  fs::path audit_in, audit_out;
  std::string audit_format = "json";
  double audit_age = 10.0;
  auto* audit = app.add_subcommand("audit", "Check a manifest for data snooping");
  audit->add_option("--input", audit_in, "Manifest JSON")->required()->check(CLI::ExistingFile);
  audit->add_option("--out", audit_out, "Optional run directory for env.json and findings.json");
  audit->add_option("--format", audit_format, "Output format")->check(CLI::IsMember({"json", "md"}))->capture_default_str();
  audit->add_option("--max-age", audit_age, "Dataset age threshold in years")->capture_default_str();

  // embed
  fs::path embed_in, embed_manifest, embed_out, embed_external;
  std::string embed_kind = "skipgram";
  std::uint64_t embed_seed = 0;
  Word2VecFlags embed_w2v;
  auto* embed = app.add_subcommand("embed", "Train or import token embeddings on a manifest's embedding set");
  embed->add_option("--input", embed_in, "Corpus JSONL")->required()->check(CLI::ExistingFile);
  embed->add_option("--manifest", embed_manifest, "Manifest JSON")->required()->check(CLI::ExistingFile);
  embed->add_option("--out", embed_out, "Run directory")->required();
  embed->add_option("--embedding", embed_kind, "Embedding kind")
      ->check(CLI::IsMember({"cbow", "skipgram", "external"}))
      ->capture_default_str();
  embed->add_option("--external", embed_external, "External vectors file")->check(CLI::ExistingFile);
  embed->add_option("--seed", embed_seed, "Master seed")->capture_default_str();
  embed_w2v.add(embed);

  // train
  fs::path train_in, train_manifest, train_vectors, train_vocab, train_out;
  std::string train_opt = "adam-lr0.001";
  std::uint64_t train_seed = 0;
  ClassifierFlags train_cls;
  auto* train_cmd = app.add_subcommand("train", "Train the LSTM classifier on a manifest's classifier split");
  train_cmd->add_option("--input", train_in, "Corpus JSONL")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--manifest", train_manifest, "Manifest JSON")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--vectors", train_vectors, "Static vectors or contextual JSONL")
      ->required()
      ->check(CLI::ExistingFile);
  train_cmd->add_option("--vocab", train_vocab, "Vocabulary file (defaults to the vector tokens)")
      ->check(CLI::ExistingFile);
  train_cmd->add_option("--out", train_out, "Run directory")->required();
  train_cmd->add_option("--optimizer", train_opt, "adam-lrX or sgd-lrX-momY")->capture_default_str();
  train_cmd->add_option("--seed", train_seed, "Master seed")->capture_default_str();
  train_cls.add(train_cmd);

  // experiment
  fs::path exp_in, exp_out, exp_external, exp_external_snoop;
  std::string exp_configs = "paper7", exp_modes = "both", exp_kind = "skipgram", exp_cwe = "CWE-121";
  std::uint64_t exp_seed = 0;
  std::size_t exp_jobs = 1;
  double exp_fraction = 0.8;
  ClassifierFlags exp_cls;
  Word2VecFlags exp_w2v;
  auto* experiment = app.add_subcommand("experiment", "Run the paired snooping/no-snooping grid");
  experiment->add_option("--input", exp_in, "Corpus JSONL")->required()->check(CLI::ExistingFile);
  experiment->add_option("--out", exp_out, "Run directory")->required();
  experiment->add_option("--seed", exp_seed, "Master seed")->capture_default_str();
  experiment->add_option("--configs", exp_configs, "paper7 or a JSON file of optimizers")->capture_default_str();
  experiment->add_option("--modes", exp_modes, "Modes to run")
      ->check(CLI::IsMember({"both", "none", "snoop", "embedding_test_snooping"}))
      ->capture_default_str();
  experiment->add_option("--embedding", exp_kind, "Embedding kind")
      ->check(CLI::IsMember({"cbow", "skipgram", "external"}))
      ->capture_default_str();
  experiment->add_option("--external", exp_external, "External embedding file")->check(CLI::ExistingFile);
  experiment->add_option("--external-snoop", exp_external_snoop, "External embedding for the snooping mode")
      ->check(CLI::ExistingFile);
  experiment->add_option("--jobs", exp_jobs, "Concurrent grid cells")->check(CLI::PositiveNumber)->capture_default_str();
  experiment->add_option("--cwe", exp_cwe, "Target CWE")->capture_default_str();
  experiment->add_option("--train-fraction", exp_fraction, "Classifier train fraction")->capture_default_str();
  exp_cls.add(experiment);
  exp_w2v.add(experiment);

  // report
  fs::path report_in, report_out;
  std::string report_format = "md";
  auto* report = app.add_subcommand("report", "Validate and render a report.json");
  report->add_option("--input", report_in, "report.json")->required()->check(CLI::ExistingFile);
  report->add_option("--out", report_out, "Output file (stdout when omitted)");
  report->add_option("--format", report_format, "Output format")->check(CLI::IsMember({"json", "md"}))->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*ingest) {
      IngestOptions opts;
      opts.max_tokens = ingest_max;
      write_env(ingest_out, "ingest", {ingest_in}, {{"max_tokens", ingest_max}});
      const auto corpus = ingest_directory(ingest_in, opts);
      write_corpus(ingest_out / "corpus.jsonl", corpus);
      std::cout << corpus.size() << " functions, corpus " << corpus_hash(corpus) << "\n";
    } else if (*synth) {
      synth_spec.validate();
      auto settings = to_json(synth_spec);
      settings["functions_per_file"] = synth_spec.functions_per_file;
      settings["max_tokens"] = synth_max;
      write_env(synth_out, "synth", {}, settings);
      const auto modules = generate_modules(synth_spec);
      write_modules(synth_out / "ir", modules);
      IngestOptions opts;
      opts.max_tokens = synth_max;
      const auto corpus = build_corpus(modules, opts, "synth:" + to_json(synth_spec).dump());
      write_corpus(synth_out / "corpus.jsonl", corpus);
      std::cout << corpus.size() << " functions, corpus " << corpus_hash(corpus) << "\n";
    } else if (*partition) {
      PartitionConfig pc;
      pc.cwe = part_cwe;
      pc.train_fraction = part_fraction;
      pc.seed = derive_seed(part_seed, "partition");
      pc.mode = mode_from_flag(part_mode);
      write_env(part_out, "partition", {part_in},
                {{"seed", part_seed}, {"mode", to_string(pc.mode)}, {"cwe", part_cwe}, {"train_fraction", part_fraction}});
      const auto p = partition_corpus(read_corpus(part_in), pc);
      write_manifest(part_out / "manifest.json", p.manifest);
      std::cout << "embedding " << p.embedding_train.size() << ", train " << p.classifier_train.size() << ", val "
                << p.classifier_val.size() << ", dropped " << p.manifest.dropped_ids.size() << "\n";
    } else if (*audit) {
      if (!audit_out.empty()) write_env(audit_out, "audit", {audit_in}, {{"max_age", audit_age}});
      const auto m = read_manifest(audit_in, ManifestCheck::structural);
      AuditOptions opts;
      opts.max_dataset_age_years = audit_age;
      const auto findings = audit_manifest(m, opts);
      if (!audit_out.empty()) write_file(audit_out / "findings.json", findings_to_json(findings).dump(2) + "\n");
      if (audit_format == "json") std::cout << findings_to_json(findings).dump(2) << "\n";
      else std::cout << render_findings_text(findings);
      return any_violation(findings) ? kExitViolation : 0;
    } else if (*embed) {
      if (embed_kind == "external" && embed_external.empty())
        throw error(errc::config, "--embedding external needs --external FILE");
      const auto kind = embed_kind == "external" ? external_kind_of(embed_external) : parse_embedding_kind(embed_kind);
      auto settings = embed_w2v.echo();
      settings["kind"] = to_string(kind);
      settings["seed"] = embed_seed;
      write_env(embed_out, "embed", {embed_in, embed_manifest, embed_external}, settings);
      const auto manifest = read_manifest(embed_manifest);
      const auto corpus = read_corpus(embed_in);
      const auto pool = select_ids(corpus, manifest.embedding_train_ids);
      if (kind == EmbeddingKind::cbow || kind == EmbeddingKind::skipgram) {
        std::vector<std::string_view> texts;
        for (const auto& f : pool.functions) texts.push_back(f.normalized_text);
        const auto vocab = build_vocab_from_texts(texts, embed_w2v.min_count);
        auto wc = embed_w2v.config();
        wc.kind = kind;
        wc.seed = DerivedSeeds::from(embed_seed).embedding;
        const auto model = train_word2vec(encode_corpus(pool, vocab), vocab, wc);
        write_file(embed_out / "vocab.txt", vocab.serialize());
        write_file(embed_out / "vectors.vec", serialize_static_vectors(model));
        write_file(embed_out / "training_log.json", training_log_json(model).dump(2) + "\n");
        std::cout << vocab.size() << " tokens, dim " << model.dim << "\n";
      } else {
        const auto model = import_external(embed_external, kind);
        const auto out = embed_out / (model.is_contextual() ? "vectors.jsonl" : "vectors.vec");
        export_embedding(out, model);
        std::cout << "imported " << to_string(kind) << ", dim " << model.dim << "\n";
      }
    } else if (*train_cmd) {
      auto cc = train_cls.config();
      cc.optimizer = optimizer_from_name(train_opt);
      cc.seed = DerivedSeeds::from(train_seed).classifier;
      write_env(train_out, "train", {train_in, train_manifest, train_vectors, train_vocab}, to_json(cc));
      const auto manifest = read_manifest(train_manifest);
      const auto corpus = read_corpus(train_in);
      const auto tr = select_ids(corpus, manifest.classifier_train_ids);
      const auto va = select_ids(corpus, manifest.classifier_val_ids);
      const auto kind = external_kind_of(train_vectors);
      const auto model_in = import_external(train_vectors, kind);
      std::optional<Vocabulary> vocab;
      std::vector<Sample> train_set, val_set;
      if (!model_in.is_contextual()) {
        if (!train_vocab.empty()) {
          vocab = Vocabulary::parse(read_file(train_vocab));
        } else {
          std::map<std::string, std::uint64_t> counts;
          for (const auto& t : model_in.tokens) counts[t] = 1;
          vocab = Vocabulary::from_counts(counts, 1);
        }
        train_set = make_samples(tr, *vocab);
        val_set = make_samples(va, *vocab);
      } else {
        cc.embedding_trainable = false;
        for (const auto& f : tr.functions) train_set.push_back({f.id, {}, f.label == Label::vulnerable});
        for (const auto& f : va.functions) val_set.push_back({f.id, {}, f.label == Label::vulnerable});
      }
      auto model = LstmClassifier<float>::build(model_in, vocab ? &*vocab : nullptr, cc);
      std::string metrics;
      const auto result = train(model, train_set, val_set, [&](const MetricsRecord& r) {
        metrics += to_json(r).dump() + "\n";
      });
      write_file(train_out / "metrics.jsonl", metrics);
      model.tensors() = result.best_weights;
      const auto& best = result.history[result.best];
      write_file(train_out / "model.bin", serialize_model(model, {{"best_epoch", best.epoch}}));
      std::cout << "best epoch " << best.epoch << ": loss " << format_loss(best.loss) << ", accuracy "
                << format_percent(best.accuracy) << ", F1 " << format_percent(best.f1) << "\n";
    } else if (*experiment) {
      ExperimentConfig cfg;
      cfg.master_seed = exp_seed;
      cfg.optimizers = configs_from_flag(exp_configs);
      cfg.modes = modes_from_flag(exp_modes);
      cfg.target_cwe = exp_cwe;
      cfg.train_fraction = exp_fraction;
      cfg.classifier = exp_cls.config();
      cfg.word2vec = exp_w2v.config();
      cfg.vocab_min_count = exp_w2v.min_count;
      cfg.jobs = exp_jobs;
      cfg.out_dir = exp_out;
      if (exp_kind == "external") {
        if (exp_external.empty()) throw error(errc::config, "--embedding external needs --external FILE");
        cfg.embedding_kinds = {external_kind_of(exp_external)};
        cfg.external_paths[SnoopingMode::none] = exp_external;
        cfg.external_paths[SnoopingMode::embedding_test_snooping] =
            exp_external_snoop.empty() ? exp_external : exp_external_snoop;
      } else {
        cfg.embedding_kinds = {parse_embedding_kind(exp_kind)};
      }
      const auto corpus = read_corpus(exp_in);
      const auto r = run_grid(corpus, cfg);
      write_report(exp_out, r);
      std::cout << r.rows.size() << " rows written to " << (exp_out / "report.json").string() << "\n";
    } else if (*report) {
      const auto r = validate_report(read_file(report_in));
      const auto doc = report_format == "json" ? render_json(r) : render_markdown(r);
      if (report_out.empty()) std::cout << doc;
      else write_file(report_out, doc);
    }
  } catch (const snoop::error& e) {
    std::cerr << "snoopctl: " << e.what() << "\n";
    return kExitDomain;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "snoopctl: malformed JSON input: " << e.what() << "\n";
    return kExitDomain;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "snoopctl: " << e.what() << "\n";
    return kExitDomain;
  }
  return 0;
}
