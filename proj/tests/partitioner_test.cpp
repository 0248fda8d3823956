#include "snoop/partitioner.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "test_support.hpp"

namespace snoop {
namespace {

using testing::stub_corpus;
using testing::stub_function;

TEST(SplitByCwe, TableTwoClassifierSize) {
  const auto c = stub_corpus(2386, 1416, 500);
  const auto s = split_by_cwe(c, "CWE-121");
  EXPECT_EQ(s.classifier_set.size(), 3802u);
  EXPECT_EQ(s.embedding_pool.size(), 500u);
  EXPECT_EQ(intersection_size(ids_of(s.classifier_set), ids_of(s.embedding_pool)), 0u);
}

TEST(SplitByCwe, NoTargetSamplesIsAnError) {
  const auto c = stub_corpus(0, 0, 20);
  try {
    split_by_cwe(c, "CWE-121");
    FAIL();
  } catch (const error& e) {
    EXPECT_EQ(e.code(), errc::empty_classifier_set);
  }
}

TEST(SplitByCwe, TenSampleBruteForce) {
  Corpus c;
  c.functions = {stub_function("a", Label::vulnerable, "CWE-121"), stub_function("b"),
                 stub_function("c", Label::clean, "CWE-121"),      stub_function("d", Label::clean, "CWE-122"),
                 stub_function("e"),                               stub_function("f", Label::unlabeled, "CWE-121"),
                 stub_function("g", Label::vulnerable, "CWE-121"), stub_function("h"),
                 stub_function("i"),                               stub_function("j")};
  const auto s = split_by_cwe(c, "CWE-121");
  EXPECT_EQ(s.classifier_set.size(), 3u);
  EXPECT_EQ(s.embedding_pool.size(), 7u);
  for (const auto& f : c.functions) {
    const bool expected = (f.source_name == "a" || f.source_name == "c" || f.source_name == "g");
    EXPECT_EQ(ids_of(s.classifier_set).count(f.id), expected ? 1u : 0u) << f.source_name;
    EXPECT_EQ(ids_of(s.embedding_pool).count(f.id), expected ? 0u : 1u) << f.source_name;
  }
}

TEST(Inject, TableTwoSizes) {
  const auto pool = stub_corpus(0, 0, 48157);
  const auto cls = stub_corpus(2386, 1416, 0);
  const auto r = inject_embedding_snooping(pool, cls, 42);
  EXPECT_EQ(r.post_drop, 44355u);
  EXPECT_EQ(r.dropped_ids.size(), 3802u);
  EXPECT_EQ(r.embedding_train.size(), 48157u);
}

TEST(Inject, EmptyClassifierLeavesPoolUnchanged) {
  const auto pool = stub_corpus(0, 0, 12);
  const auto r = inject_embedding_snooping(pool, Corpus{}, 1);
  EXPECT_EQ(ids_of(r.embedding_train), ids_of(pool));
  EXPECT_TRUE(r.dropped_ids.empty());
}

TEST(Inject, PoolOfTenClassifierOfThree) {
  const auto pool = stub_corpus(0, 0, 10);
  const auto cls = stub_corpus(2, 1, 0);
  const auto r = inject_embedding_snooping(pool, cls, 99);
  const auto out = ids_of(r.embedding_train);
  EXPECT_EQ(r.embedding_train.size(), 10u);
  EXPECT_EQ(out.size(), 10u);
  for (const auto& id : ids_of(cls)) EXPECT_EQ(out.count(id), 1u);
  std::size_t survivors = 0;
  for (const auto& id : ids_of(pool)) {
    const bool kept = out.count(id) != 0;
    const bool dropped = r.dropped_ids.count(id) != 0;
    EXPECT_NE(kept, dropped);
    survivors += kept;
  }
  EXPECT_EQ(survivors, 7u);
}

TEST(Inject, InsufficientPool) {
  try {
    inject_embedding_snooping(stub_corpus(0, 0, 2), stub_corpus(3, 0, 0), 1);
    FAIL();
  } catch (const error& e) {
    EXPECT_EQ(e.code(), errc::insufficient_pool);
  }
}

TEST(TrainValSplit, FullScaleCounts) {
  const auto s = train_val_split(stub_corpus(2386, 1416, 0), 0.8, 5);
  EXPECT_EQ(s.train.size(), 3041u);
  EXPECT_EQ(s.val.size(), 761u);
}

TEST(TrainValSplit, TenSamples) {
  const auto s = train_val_split(stub_corpus(5, 5, 0), 0.8, 5);
  EXPECT_EQ(s.train.size(), 8u);
  EXPECT_EQ(s.val.size(), 2u);
}

TEST(TrainValSplit, DeterministicReplayDisjointAndCovering) {
  const auto c = stub_corpus(30, 20, 0);
  const auto a = train_val_split(c, 0.8, 123);
  const auto b = train_val_split(c, 0.8, 123);
  EXPECT_EQ(ids_of(a.train), ids_of(b.train));
  EXPECT_EQ(ids_of(a.val), ids_of(b.val));
  EXPECT_EQ(intersection_size(ids_of(a.train), ids_of(a.val)), 0u);
  auto all = ids_of(a.train);
  for (const auto& id : ids_of(a.val)) all.insert(id);
  EXPECT_EQ(all, ids_of(c));
  const auto other = train_val_split(c, 0.8, 124);
  EXPECT_NE(ids_of(a.train), ids_of(other.train));
}

TEST(TrainValSplit, TooSmall) {
  EXPECT_THROW(train_val_split(stub_corpus(1, 0, 0), 0.8, 1), error);
  try {
    train_val_split(stub_corpus(2, 0, 0), 0.8, 1);  // floor(1.6) = 1 per side is fine
  } catch (...) {
    FAIL();
  }
  try {
    train_val_split(stub_corpus(1, 1, 0), 0.4, 1);
    FAIL();
  } catch (const error& e) {
    EXPECT_EQ(e.code(), errc::split_too_small);
  }
}

PartitionConfig config(SnoopingMode mode, std::uint64_t seed = 7) {
  PartitionConfig cfg;
  cfg.mode = mode;
  cfg.seed = seed;
  return cfg;
}

TEST(Partition, ExactOverlapDichotomy) {
  const auto c = stub_corpus(60, 40, 300);
  for (auto mode : {SnoopingMode::none, SnoopingMode::embedding_test_snooping}) {
    const auto p = partition_corpus(c, config(mode));
    const auto& m = p.manifest;
    const std::size_t overlap = intersection_size(m.embedding_train_ids, m.classifier_train_ids) +
                                intersection_size(m.embedding_train_ids, m.classifier_val_ids);
    if (mode == SnoopingMode::none) EXPECT_EQ(overlap, 0u);
    else EXPECT_EQ(overlap, 100u);
    EXPECT_EQ(m.embedding_train_ids.size(), 300u);
    EXPECT_NO_THROW(validate_manifest(m));
  }
}

TEST(Partition, ModesShareClassifierMembership) {
  const auto c = stub_corpus(60, 40, 300);
  const auto a = partition_corpus(c, config(SnoopingMode::none)).manifest;
  const auto b = partition_corpus(c, config(SnoopingMode::embedding_test_snooping)).manifest;
  EXPECT_EQ(a.classifier_train_ids, b.classifier_train_ids);
  EXPECT_EQ(a.classifier_val_ids, b.classifier_val_ids);
}

TEST(Partition, ByteIdenticalManifestsForSameInputs) {
  const auto c = stub_corpus(30, 30, 100);
  for (auto mode : {SnoopingMode::none, SnoopingMode::embedding_test_snooping})
    EXPECT_EQ(serialize_manifest(partition_corpus(c, config(mode)).manifest),
              serialize_manifest(partition_corpus(c, config(mode)).manifest));
}

TEST(Manifest, RoundTrip) {
  const auto m = partition_corpus(stub_corpus(30, 30, 100), config(SnoopingMode::embedding_test_snooping)).manifest;
  const auto text = serialize_manifest(m);
  EXPECT_EQ(parse_manifest(text), m);
  const auto path = std::filesystem::temp_directory_path() / "snoop_manifest_test.json";
  write_manifest(path, m);
  EXPECT_EQ(read_manifest(path), m);
  std::filesystem::remove(path);
}

TEST(Manifest, SharedIdInModeNoneFails) {
  auto m = partition_corpus(stub_corpus(30, 30, 100), config(SnoopingMode::none)).manifest;
  m.embedding_train_ids.insert(*m.classifier_val_ids.begin());
  try {
    parse_manifest(serialize_manifest(m));
    FAIL();
  } catch (const error& e) {
    EXPECT_EQ(e.code(), errc::manifest_invalid);
    EXPECT_NE(std::string(e.what()).find("snooping_mode=none"), std::string::npos);
  }
}

TEST(Manifest, OverlappingTrainValFails) {
  auto m = partition_corpus(stub_corpus(30, 30, 100), config(SnoopingMode::none)).manifest;
  m.classifier_val_ids.insert(*m.classifier_train_ids.begin());
  try {
    parse_manifest(serialize_manifest(m), ManifestCheck::structural);
    FAIL();
  } catch (const error& e) {
    EXPECT_NE(std::string(e.what()).find("overlap"), std::string::npos);
  }
}

TEST(Manifest, FiftyRandomManifestsRoundTrip) {
  std::mt19937_64 gen(2024);
  for (int i = 0; i < 50; ++i) {
    const std::size_t clean = 1 + gen() % 20, vuln = 1 + gen() % 20;
    const std::size_t pool = clean + vuln + gen() % 50;
    PartitionConfig cfg = config(gen() % 2 ? SnoopingMode::none : SnoopingMode::embedding_test_snooping, gen());
    cfg.declared_steps.used_kfold_for_tuning = gen() % 2;
    if (gen() % 2) cfg.declared_steps.dataset_age_years = static_cast<double>(gen() % 30);
    if (gen() % 2) cfg.declared_steps.time_dependent_samples = gen() % 2;
    const auto m = partition_corpus(stub_corpus(clean, vuln, pool), cfg).manifest;
    const auto text = serialize_manifest(m);
    const auto back = parse_manifest(text);
    EXPECT_EQ(back, m);
    EXPECT_EQ(serialize_manifest(back), text);
  }
}

TEST(Manifest, IdArraysAreSorted) {
  const auto m = partition_corpus(stub_corpus(10, 10, 40), config(SnoopingMode::none)).manifest;
  const auto j = nlohmann::json::parse(serialize_manifest(m));
  for (const char* key : {"embedding_train_ids", "classifier_train_ids", "classifier_val_ids"}) {
    const auto ids = j.at(key).get<std::vector<std::string>>();
    EXPECT_TRUE(std::is_sorted(ids.begin(), ids.end())) << key;
  }
  EXPECT_EQ(j.at("rng"), std::string(kRngAlgorithm));
}

}  // namespace
}  // namespace snoop
