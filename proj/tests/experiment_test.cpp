#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "snoop/report_schema.hpp"
#include "snoop/synth.hpp"

using namespace snoop;

namespace {

namespace fs = std::filesystem;

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("snoop_experiment_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  return p;
}

Corpus small_corpus(std::uint64_t seed = 3) {
  SynthSpec s;
  s.n_pool = 60;
  s.n_pairs = 12;
  s.n_extra_clean = 4;
  s.seed = seed;
  return generate(s);
}

ExperimentConfig tiny_config() {
  ExperimentConfig cfg;
  cfg.master_seed = 11;
  cfg.word2vec.dim = 6;
  cfg.word2vec.epochs = 1;
  cfg.classifier.hidden_size = 4;
  cfg.classifier.num_lstm_layers = 1;
  cfg.classifier.epochs = 2;
  cfg.classifier.batch_size = 8;
  return cfg;
}

MetricsRecord random_record(Rng& rng) {
  Confusion c{rng.below(50), rng.below(50), rng.below(50), rng.below(50) + 1};
  return make_record(static_cast<int>(1 + rng.below(50)), rng.uniform(0.0, 2.0), c);
}

ComparisonReport random_report(std::uint64_t seed) {
  Rng rng(seed);
  ComparisonReport r;
  r.environment = {{"tool_version", "x"}, {"rng", std::string(kRngAlgorithm)}, {"master_seed", seed},
                   {"corpus_hash", sha256_hex(std::to_string(seed))}};
  const auto grid = reference_optimizer_grid();
  for (auto kind : {EmbeddingKind::cbow, EmbeddingKind::skipgram})
    for (const auto& o : grid) {
      ReportRow row{kind, o, random_record(rng), random_record(rng)};
      if (rng.below(8) == 0) row.snooped.reset();
      r.rows.push_back(row);
    }
  r.best_models = select_best_models(r.rows);
  return r;
}

}  // namespace

TEST(ReportFormat, ExactTieRendersPlusMinusZero) {
  EXPECT_EQ(format_percent_delta(0.0), "(±0%)");
  EXPECT_EQ(format_percent(0.809) + " " + format_percent_delta(0.809 - 0.809), "80.9% (±0%)");
  EXPECT_EQ(format_loss_delta(0.0), "(±0)");
  EXPECT_EQ(format_epoch_delta(0), "(±0)");
}

TEST(ReportFormat, AccuracyDropFromBaseline) {
  MetricsRecord base, snoop;
  base.accuracy = 0.920;
  snoop.accuracy = 0.905;
  const auto d = compute_deltas(base, snoop);
  EXPECT_EQ(format_percent(snoop.accuracy) + " " + format_percent_delta(d.accuracy), "90.5% (-1.5%)");
}

TEST(ReportFormat, LossAndEpochCells) {
  EXPECT_EQ(format_loss(0.3037) + " " + format_loss_delta(-0.1090), "0.3037 (-0.1090)");
  EXPECT_EQ(std::to_string(46) + format_epoch_delta(11), "46(+11)");
  EXPECT_EQ(std::to_string(36) + format_epoch_delta(-9), "36(-9)");
  EXPECT_EQ(format_percent_delta(0.079), "(+7.9%)");
}

TEST(ReportFormat, DeltaRoundingToZeroIsATie) {
  EXPECT_EQ(format_percent_delta(0.0004), "(±0%)");
  EXPECT_EQ(format_percent_delta(-0.0004), "(±0%)");
  EXPECT_EQ(format_loss_delta(-0.00004), "(±0)");
}

TEST(ReportJson, RandomReportsRoundTrip) {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const auto r = random_report(seed);
    const auto text = render_json(r);
    EXPECT_EQ(report_schema_errors(text), "") << seed;
    const auto back = validate_report(text);
    EXPECT_EQ(back, r) << seed;
    EXPECT_EQ(render_json(back), text) << seed;
  }
}

TEST(ReportJson, KeysAreSorted) {
  const auto text = render_json(random_report(1));
  const auto a = text.find("\"best_models\""), b = text.find("\"environment\""), c = text.find("\"rows\""),
             d = text.find("\"schema_version\"");
  EXPECT_LT(a, b);
  EXPECT_LT(b, c);
  EXPECT_LT(c, d);
}

TEST(ReportInvariants, DeltasAreAntisymmetric) {
  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    const auto a = random_record(rng), b = random_record(rng);
    const auto d = compute_deltas(a, b), e = compute_deltas(b, a);
    EXPECT_EQ(d.epoch, -e.epoch);
    EXPECT_EQ(d.loss, -e.loss);
    EXPECT_EQ(d.accuracy, -e.accuracy);
    EXPECT_EQ(d.precision, -e.precision);
    EXPECT_EQ(d.recall, -e.recall);
    EXPECT_EQ(d.f1, -e.f1);
  }
}

TEST(ReportInvariants, TamperedDeltaIsRejected) {
  auto j = to_json(random_report(2));
  auto& row = *std::find_if(j["rows"].begin(), j["rows"].end(), [](const auto& r) { return !r["deltas"].is_null(); });
  row["deltas"]["f1"] = row["deltas"]["f1"].get<double>() + 1e-12;
  EXPECT_EQ(report_schema_errors(j.dump()), "");
  EXPECT_THROW(validate_report(j.dump()), error);
}

TEST(ReportInvariants, DanglingBestModelIsRejected) {
  auto j = to_json(random_report(3));
  j["best_models"][0]["baseline"]["row"] = j["rows"].size();
  EXPECT_THROW(validate_report(j.dump()), error);
}

TEST(ReportInvariants, SchemaRejectsMalformedDocuments) {
  auto j = to_json(random_report(4));
  j["rows"][0]["baseline"]["accuracy"] = 1.5;
  EXPECT_NE(report_schema_errors(j.dump()), "");
  auto k = to_json(random_report(4));
  k.erase("environment");
  EXPECT_NE(report_schema_errors(k.dump()), "");
  EXPECT_NE(report_schema_errors("{not json"), "");
}

TEST(ReportMarkdown, CellsRecomputeFromStoredRecords) {
  const auto r = random_report(9);
  const auto md = render_markdown(r);
  for (const auto& row : r.rows) {
    if (!row.baseline || !row.snooped) continue;
    const auto d = compute_deltas(*row.baseline, *row.snooped);
    const std::string expected = "| " + row.optimizer.name() + " | " + std::to_string(row.snooped->epoch) +
                                 format_epoch_delta(d.epoch) + " | " + format_loss(row.snooped->loss) + " " +
                                 format_loss_delta(d.loss) + " | " + format_percent(row.snooped->accuracy) + " " +
                                 format_percent_delta(d.accuracy);
    EXPECT_NE(md.find(expected), std::string::npos) << expected;
  }
}

TEST(RunGrid, EmptyConfigListGivesEmptyValidReport) {
  auto cfg = tiny_config();
  cfg.optimizers.clear();
  const auto r = run_grid(small_corpus(), cfg);
  EXPECT_TRUE(r.rows.empty());
  EXPECT_TRUE(r.best_models.empty());
  EXPECT_NO_THROW(validate_report(render_json(r)));
  EXPECT_NE(render_markdown(r).find("No configurations"), std::string::npos);
}

TEST(RunGrid, SevenConfigsGiveSevenPairedRows) {
  auto cfg = tiny_config();
  cfg.classifier.epochs = 1;
  cfg.jobs = 2;
  const auto r = run_grid(small_corpus(), cfg);
  ASSERT_EQ(r.rows.size(), 7u);
  for (std::size_t i = 0; i < r.rows.size(); ++i) {
    EXPECT_TRUE(r.rows[i].baseline && r.rows[i].snooped);
    EXPECT_EQ(r.rows[i].optimizer, reference_optimizer_grid()[i]);
  }
  ASSERT_EQ(r.best_models.size(), 1u);
  EXPECT_NO_THROW(validate_report(render_json(r)));
}

TEST(RunGrid, RenderedDeltasMatchRecomputation) {
  auto cfg = tiny_config();
  cfg.optimizers = {reference_optimizer_grid()[0], reference_optimizer_grid()[6]};
  const auto r = run_grid(small_corpus(), cfg);
  const auto j = nlohmann::json::parse(render_json(r));
  const auto md = render_markdown(r);
  for (const auto& row : j["rows"]) {
    const auto base = record_from_json(row["baseline"]);
    const auto snoop = record_from_json(row["snooped"]);
    const std::string cell = format_percent(snoop.f1) + " " + format_percent_delta(snoop.f1 - base.f1) + " |\n";
    const std::string line_start = "| " + row["optimizer"]["name"].get<std::string>() + " | " +
                                   std::to_string(snoop.epoch) + format_epoch_delta(snoop.epoch - base.epoch);
    const auto at = md.find(line_start);
    ASSERT_NE(at, std::string::npos) << line_start;
    EXPECT_EQ(md.substr(md.find('\n', at) + 1 - cell.size(), cell.size()), cell);
  }
}

TEST(RunGrid, ModesSharePairedMembership) {
  const auto dir = scratch("pairing");
  auto cfg = tiny_config();
  cfg.optimizers = {reference_optimizer_grid()[0]};
  cfg.out_dir = dir;
  run_grid(small_corpus(), cfg);
  const auto none = read_manifest(dir / "manifests" / "none.json");
  const auto snooped = read_manifest(dir / "manifests" / "embedding_test_snooping.json");
  EXPECT_EQ(none.classifier_train_ids, snooped.classifier_train_ids);
  EXPECT_EQ(none.classifier_val_ids, snooped.classifier_val_ids);
  EXPECT_NE(none.embedding_train_ids, snooped.embedding_train_ids);
  fs::remove_all(dir);
}

TEST(RunGrid, RunDirectoryLayout) {
  const auto dir = scratch("layout");
  auto cfg = tiny_config();
  cfg.optimizers = {reference_optimizer_grid()[4]};
  cfg.out_dir = dir;
  const auto r = run_grid(small_corpus(), cfg);
  write_report(dir, r);
  for (const char* p : {"env.json", "report.json", "report.md", "manifests/none.json",
                        "metrics/skipgram_adam-lr0.01_none.jsonl", "models/skipgram_adam-lr0.01_embedding_test_snooping.bin",
                        "embeddings/none_skipgram.vec", "embeddings/none_skipgram.vocab"})
    EXPECT_TRUE(fs::exists(dir / p)) << p;
  std::ifstream metrics(dir / "metrics/skipgram_adam-lr0.01_none.jsonl");
  std::string line;
  int lines = 0;
  while (std::getline(metrics, line)) ++lines;
  EXPECT_EQ(lines, 2);
  fs::remove_all(dir);
}

TEST(RunGrid, SameSeedGivesByteIdenticalReportAcrossWidths) {
  auto cfg = tiny_config();
  cfg.optimizers = {reference_optimizer_grid()[0], reference_optimizer_grid()[3]};
  const auto corpus = small_corpus();
  const auto a = render_json(run_grid(corpus, cfg));
  cfg.jobs = 3;
  const auto b = render_json(run_grid(corpus, cfg));
  EXPECT_EQ(a, b);
  cfg.master_seed = 12;
  EXPECT_NE(render_json(run_grid(corpus, cfg)), a);
}

TEST(RunGrid, ErrorsCarryGridCoordinates) {
  auto cfg = tiny_config();
  cfg.embedding_kinds = {EmbeddingKind::external_static};
  try {
    run_grid(small_corpus(), cfg);
    FAIL() << "expected an error";
  } catch (const error& e) {
    EXPECT_NE(std::string(e.what()).find("[embedding=external_static mode=none]"), std::string::npos) << e.what();
  }
}

TEST(RunGrid, ExternalStaticEmbeddingIsUsedForBothModes) {
  const auto dir = scratch("external");
  const auto corpus = small_corpus();
  std::vector<std::string_view> texts;
  for (const auto& f : corpus.functions) texts.push_back(f.normalized_text);
  const auto vocab = build_vocab_from_texts(texts);
  EmbeddingModel e;
  e.kind = EmbeddingKind::external_static;
  e.dim = 3;
  e.tokens = vocab.tokens();
  e.input_vectors = RowMatrix::Constant(static_cast<Eigen::Index>(vocab.size()), 3, 0.25);
  fs::create_directories(dir);
  export_embedding(dir / "ext.vec", e);
  auto cfg = tiny_config();
  cfg.optimizers = {reference_optimizer_grid()[0]};
  cfg.embedding_kinds = {EmbeddingKind::external_static};
  cfg.external_paths[SnoopingMode::none] = dir / "ext.vec";
  const auto r = run_grid(corpus, cfg);
  ASSERT_EQ(r.rows.size(), 1u);
  EXPECT_TRUE(r.rows[0].baseline && r.rows[0].snooped);
  EXPECT_EQ(r.environment["external_embedding_hashes"].size(), 1u);
  fs::remove_all(dir);
}
