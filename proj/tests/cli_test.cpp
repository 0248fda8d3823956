#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <string>

#include "snoop/report_schema.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
  int status;
  std::string out;
};

Run snoopctl(const std::string& args) {
  const std::string cmd = std::string(SNOOPCTL_PATH) + " " + args + " 2>&1";
  FILE* p = popen(cmd.c_str(), "r");
  std::string out;
  std::array<char, 4096> buf;
  for (std::size_t n; (n = std::fread(buf.data(), 1, buf.size(), p)) > 0;) out.append(buf.data(), n);
  const int raw = pclose(p);
  return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, out};
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / ("snoopctl_test_" + std::to_string(::getpid()));
    fs::remove_all(dir_);
    const auto r = snoopctl("synth --out " + (dir_ / "synth").string() + " --pool 60 --pairs 12 --seed 5");
    ASSERT_EQ(r.status, 0) << r.out;
  }
  static void TearDownTestSuite() { fs::remove_all(dir_); }

  static fs::path corpus() { return dir_ / "synth" / "corpus.jsonl"; }
  static std::string d(const std::string& sub) { return (dir_ / sub).string(); }

  static inline fs::path dir_;
};

}  // namespace

TEST_F(Cli, AuditOfSnoopedManifestExitsThree) {
  ASSERT_EQ(snoopctl("partition --input " + corpus().string() + " --out " + d("snooped") + " --mode snoop").status, 0);
  const auto r = snoopctl("audit --input " + d("snooped") + "/manifest.json");
  EXPECT_EQ(r.status, 3);
  EXPECT_NE(r.out.find("\"rule_id\": \"T-EMB\""), std::string::npos) << r.out;
}

TEST_F(Cli, AuditOfCleanManifestExitsZero) {
  ASSERT_EQ(snoopctl("partition --input " + corpus().string() + " --out " + d("clean")).status, 0);
  const auto r = snoopctl("audit --format md --input " + d("clean") + "/manifest.json");
  EXPECT_EQ(r.status, 0) << r.out;
  EXPECT_NE(r.out.find("0 violation(s)"), std::string::npos) << r.out;
}

TEST_F(Cli, PartitionReplayIsByteIdentical) {
  ASSERT_EQ(snoopctl("partition --seed 42 --input " + corpus().string() + " --out " + d("p42a")).status, 0);
  ASSERT_EQ(snoopctl("partition --seed 42 --input " + corpus().string() + " --out " + d("p42b")).status, 0);
  EXPECT_EQ(snoop::read_file(d("p42a") + "/manifest.json"), snoop::read_file(d("p42b") + "/manifest.json"));
}

TEST_F(Cli, ExperimentWritesBothReports) {
  const auto before = snoop::read_file(corpus());
  const auto r = snoopctl("experiment --configs paper7 --modes both --input " + corpus().string() + " --out " +
                          d("exp") + " --dim 6 --w2v-epochs 1 --hidden 4 --layers 1 --epochs 1 --jobs 2");
  ASSERT_EQ(r.status, 0) << r.out;
  EXPECT_TRUE(fs::exists(d("exp") + "/report.md"));
  const auto report = snoop::validate_report(snoop::read_file(d("exp") + "/report.json"));
  EXPECT_EQ(report.rows.size(), 7u);
  EXPECT_EQ(snoop::read_file(corpus()), before);
  const auto md = snoopctl("report --format md --input " + d("exp") + "/report.json");
  EXPECT_EQ(md.status, 0);
  EXPECT_EQ(md.out, snoop::read_file(d("exp") + "/report.md"));
}

TEST_F(Cli, EnvironmentEchoComesFirst) {
  ASSERT_EQ(snoopctl("partition --seed 3 --input " + corpus().string() + " --out " + d("env")).status, 0);
  const auto env = nlohmann::json::parse(snoop::read_file(d("env") + "/env.json"));
  EXPECT_EQ(env["settings"]["seed"], 3);
  EXPECT_EQ(env["input_hashes"][corpus().string()], snoop::sha256_hex(snoop::read_file(corpus())));
  EXPECT_LE(fs::last_write_time(d("env") + "/env.json"), fs::last_write_time(d("env") + "/manifest.json"));
}

TEST_F(Cli, UnknownFlagIsAUsageError) {
  const auto r = snoopctl("partition --input " + corpus().string() + " --out " + d("x") + " --frobnicate 1");
  EXPECT_EQ(r.status, 2);
  EXPECT_NE(r.out.find("--frobnicate"), std::string::npos) << r.out;
  EXPECT_EQ(snoopctl("").status, 2);
  EXPECT_EQ(snoopctl("partition --mode sideways --input " + corpus().string() + " --out " + d("x")).status, 2);
}

TEST_F(Cli, DomainErrorsExitOne) {
  snoop::write_file(dir_ / "bad.json", "{\"rows\": []}");
  EXPECT_EQ(snoopctl("report --input " + d("bad.json")).status, 1);
  snoop::write_file(dir_ / "bad.jsonl", "not json\n");
  EXPECT_EQ(snoopctl("partition --input " + d("bad.jsonl") + " --out " + d("y")).status, 1);
}

TEST_F(Cli, HelpListsOutputAffectingFlags) {
  const std::pair<const char*, std::vector<const char*>> expected[] = {
      {"ingest", {"--input", "--out", "--max-tokens"}},
      {"synth", {"--out", "--seed", "--pool", "--pairs", "--extra-clean", "--signal", "--pattern"}},
      {"partition", {"--input", "--out", "--seed", "--mode", "--cwe", "--train-fraction"}},
      {"audit", {"--input", "--out", "--format", "--max-age"}},
      {"embed", {"--input", "--manifest", "--out", "--embedding", "--external", "--seed", "--dim", "--window"}},
      {"train", {"--input", "--manifest", "--vectors", "--vocab", "--optimizer", "--seed", "--epochs", "--hidden"}},
      {"experiment", {"--input", "--out", "--seed", "--configs", "--modes", "--embedding", "--jobs", "--epochs"}},
      {"report", {"--input", "--out", "--format"}},
  };
  for (const auto& [cmd, flags] : expected) {
    const auto r = snoopctl(std::string(cmd) + " --help");
    EXPECT_EQ(r.status, 0) << cmd;
    for (const char* f : flags) EXPECT_NE(r.out.find(f), std::string::npos) << cmd << " " << f;
  }
}

TEST_F(Cli, EmbedThenTrain) {
  ASSERT_EQ(snoopctl("partition --input " + corpus().string() + " --out " + d("pt")).status, 0);
  const auto m = d("pt") + "/manifest.json";
  auto r = snoopctl("embed --embedding cbow --dim 6 --w2v-epochs 1 --input " + corpus().string() + " --manifest " + m +
                    " --out " + d("emb"));
  ASSERT_EQ(r.status, 0) << r.out;
  r = snoopctl("train --optimizer sgd-lr0.01-mom0.01 --hidden 3 --layers 1 --epochs 2 --input " + corpus().string() +
               " --manifest " + m + " --vectors " + d("emb") + "/vectors.vec --vocab " + d("emb") + "/vocab.txt --out " +
               d("tr"));
  ASSERT_EQ(r.status, 0) << r.out;
  EXPECT_TRUE(fs::exists(d("tr") + "/model.bin"));
  EXPECT_NO_THROW(snoop::parse_model(snoop::read_file(d("tr") + "/model.bin")));
  r = snoopctl("train --optimizer rmsprop --input " + corpus().string() + " --manifest " + m + " --vectors " +
               d("emb") + "/vectors.vec --out " + d("tr2"));
  EXPECT_EQ(r.status, 1);
}
