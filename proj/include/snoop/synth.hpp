#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "snoop/error.hpp"
#include "snoop/ir_corpus.hpp"
#include "snoop/rng.hpp"

namespace snoop {

struct SynthSpec {
  std::size_t n_pool = 0;
  std::size_t n_pairs = 0;
  // Clean samples without a vulnerable partner (guarded copies).
  std::size_t n_extra_clean = 0;
  std::string vuln_pattern = "stack_memcpy";
  double signal_strength = 1.0;
  std::uint64_t seed = 0;
  // Functions per emitted .ll file.
  std::size_t functions_per_file = 1000;

  void validate() const {
    if (vuln_pattern != "stack_memcpy" && vuln_pattern != "stack_strncpy")
      throw error(errc::config, "unknown vuln_pattern '" + vuln_pattern + "'");
    if (!(signal_strength >= 0.0 && signal_strength <= 1.0))
      throw error(errc::config, "signal_strength must lie in [0, 1]");
    if (functions_per_file == 0) throw error(errc::config, "functions_per_file must be positive");
  }
};

inline nlohmann::json to_json(const SynthSpec& s) {
  return {{"n_pool", s.n_pool},
          {"n_pairs", s.n_pairs},
          {"n_extra_clean", s.n_extra_clean},
          {"vuln_pattern", s.vuln_pattern},
          {"signal_strength", s.signal_strength},
          {"seed", s.seed}};
}

namespace synth_detail {

inline std::string five(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%05zu", i);
  return buf;
}

inline const char* copy_callee(const SynthSpec& s) {
  return s.vuln_pattern == "stack_strncpy" ? "strncpy" : "memcpy";
}

// Label-independent body lines. Every function gets a distinct literal in
// its first line so that no two generated functions normalize alike.
inline std::string filler(Rng& rng, std::uint64_t uid) {
  std::string out = "  store i32 " + std::to_string(uid) + ", i32* @gseq\n";
  const std::size_t lines = rng.below(3);
  for (std::size_t k = 0; k < lines; ++k) {
    const auto lit = std::to_string(1 + rng.below(64));
    const auto t = "%t" + std::to_string(k);
    switch (rng.below(5)) {
      case 0: out += "  " + t + " = load i32, i32* @gcount\n"; break;
      case 1: out += "  store i32 " + lit + ", i32* @gcount\n"; break;
      case 2: out += "  call void @printLine(i8* %src)\n"; break;
      case 3: out += "  " + t + " = getelementptr i8, i8* %src, i64 " + lit + "\n"; break;
      default: out += "  call void @printIntLine(i32 " + lit + ")\n"; break;
    }
  }
  return out;
}

// A guarded variable-length copy, present in either class.
inline std::string decoy(const SynthSpec& s, Rng& rng) {
  const auto bound = std::to_string(8 + rng.below(120));
  return std::string("  %d = icmp ult i64 %n, ") + bound + "\n" +
         "  br i1 %d, label %dcopy, label %dskip\n"
         "dcopy:\n"
         "  call void @" + copy_callee(s) + "(i8* %buf, i8* %src, i64 %n)\n"
         "  br label %dskip\n"
         "dskip:\n";
}

inline std::string header(const std::string& name, std::size_t buf_size) {
  return "define void @" + name + "(i64 %n, i8* %src) {\nentry:\n  %buf = alloca [" + std::to_string(buf_size) +
         " x i8]\n";
}

enum class Variant { vulnerable, clean_g2b, clean_b2g };

// Copy template. Vulnerable copies the caller-supplied length; the G2B
// remediation copies the buffer size; B2G clamps the length first.
inline std::string template_region(const SynthSpec& s, Variant v, std::size_t buf_size) {
  const std::string callee = copy_callee(s);
  switch (v) {
    case Variant::vulnerable:
      return "  call void @" + callee + "(i8* %buf, i8* %src, i64 %n)\n";
    case Variant::clean_g2b:
      return "  call void @" + callee + "(i8* %buf, i8* %src, i64 " + std::to_string(buf_size) + ")\n";
    case Variant::clean_b2g:
      return "  %ok = icmp ult i64 %n, " + std::to_string(buf_size) + "\n  %m = select i1 %ok, i64 %n, i64 " +
             std::to_string(buf_size - 1) + "\n  call void @" + callee + "(i8* %buf, i8* %src, i64 %m)\n";
  }
  return {};
}

inline std::string footer() { return "  ret void\n}\n"; }

inline std::string module_prelude(const SynthSpec& s) {
  return std::string("@gseq = global i32 0\n@gcount = global i32 0\n\n") + "declare void @" + copy_callee(s) +
         "(i8*, i8*, i64)\ndeclare void @printLine(i8*)\ndeclare void @printIntLine(i32)\n\n";
}

struct Shared {
  std::size_t buf_size;
  std::string body;
};

inline Shared shared_part(const SynthSpec& s, Rng& rng, std::uint64_t uid) {
  Shared sh;
  sh.buf_size = 10 * (1 + rng.below(10));
  sh.body = filler(rng, uid);
  if (!rng.bernoulli(s.signal_strength)) sh.body += decoy(s, rng);
  return sh;
}

}  // namespace synth_detail

struct SynthFunction {
  std::string source_name;
  std::string text;
};

// Functions in generation order: pairs (bad then goodG2B), extra clean
// samples, then the unlabeled pool.
inline std::vector<SynthFunction> generate_functions(const SynthSpec& spec) {
  using namespace synth_detail;
  spec.validate();
  std::vector<SynthFunction> out;
  out.reserve(2 * spec.n_pairs + spec.n_extra_clean + spec.n_pool);
  std::uint64_t uid = 0;
  for (std::size_t i = 0; i < spec.n_pairs; ++i) {
    Rng rng(derive_seed(spec.seed, "synth-pair", i));
    const auto sh = shared_part(spec, rng, ++uid);
    const std::string stem = "CWE121_synth_" + five(i);
    out.push_back({stem + "_bad", header(stem + "_bad", sh.buf_size) + sh.body +
                                      template_region(spec, Variant::vulnerable, sh.buf_size) + footer()});
    out.push_back({stem + "_goodG2B", header(stem + "_goodG2B", sh.buf_size) + sh.body +
                                          template_region(spec, Variant::clean_g2b, sh.buf_size) + footer()});
  }
  for (std::size_t i = 0; i < spec.n_extra_clean; ++i) {
    Rng rng(derive_seed(spec.seed, "synth-extra", i));
    const auto sh = shared_part(spec, rng, ++uid);
    const std::string name = "CWE121_synth_" + five(spec.n_pairs + i) + "_goodB2G";
    out.push_back({name, header(name, sh.buf_size) + sh.body +
                             template_region(spec, Variant::clean_b2g, sh.buf_size) + footer()});
  }
  for (std::size_t i = 0; i < spec.n_pool; ++i) {
    Rng rng(derive_seed(spec.seed, "synth-pool", i));
    const std::string name = "pool_fn_" + five(i);
    const std::size_t buf_size = 10 * (1 + rng.below(10));
    std::string text = header(name, buf_size) + filler(rng, ++uid);
    switch (rng.below(4)) {
      case 0: text += template_region(spec, Variant::vulnerable, buf_size); break;
      case 1: text += template_region(spec, Variant::clean_g2b, buf_size); break;
      case 2: text += template_region(spec, Variant::clean_b2g, buf_size); break;
      default: text += decoy(spec, rng); break;
    }
    out.push_back({name, text + footer()});
  }
  return out;
}

// (file name, module text) pairs. Labeled samples go to cwe121_*.ll files,
// the pool to pool_*.ll, so file-name order matches generation order.
inline std::vector<std::pair<std::string, std::string>> generate_modules(const SynthSpec& spec) {
  const auto fns = generate_functions(spec);
  const std::size_t labeled = 2 * spec.n_pairs + spec.n_extra_clean;
  std::vector<std::pair<std::string, std::string>> modules;
  auto emit = [&](const std::string& prefix, std::size_t begin, std::size_t end) {
    for (std::size_t start = begin, part = 0; start < end; start += spec.functions_per_file, ++part) {
      std::string text = "; ModuleID = '" + prefix + "'\n" + synth_detail::module_prelude(spec);
      for (std::size_t i = start; i < std::min(end, start + spec.functions_per_file); ++i) text += fns[i].text + "\n";
      char name[64];
      std::snprintf(name, sizeof name, "%s_%04zu.ll", prefix.c_str(), part);
      modules.emplace_back(name, std::move(text));
    }
  };
  emit("cwe121", 0, labeled);
  emit("pool", labeled, fns.size());
  return modules;
}

inline Corpus generate(const SynthSpec& spec, const IngestOptions& opts = {}) {
  return build_corpus(generate_modules(spec), opts, "synth:" + to_json(spec).dump());
}

inline void write_modules(const std::filesystem::path& dir,
                          const std::vector<std::pair<std::string, std::string>>& modules) {
  std::filesystem::create_directories(dir);
  for (const auto& [name, text] : modules) write_file(dir / name, text);
}

}  // namespace snoop
