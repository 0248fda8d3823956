#pragma once

#include <map>
#include <random>
#include <regex>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "snoop/audit.hpp"
#include "snoop/ir_corpus.hpp"

namespace snoop::testing {

// Hand-written IR functions shared by the normalization tests.
inline const std::vector<std::string>& ir_fixtures() {
  static const std::vector<std::string> f = {
      "define void @f() {\n  ret void\n}",
      "define i32 @Unique_Function_Name(i32 %n) {\n  %r = call i32 @helper(i32 %n)\n  ret i32 %r\n}",
      "define void @copy(i8* %dst, i64 %len) #1 {\nentry:\n  %buf = alloca [16 x i8], align 16 ; stack\n"
      "  %p = getelementptr inbounds [16 x i8], [16 x i8]* %buf, i64 0, i64 0\n"
      "  call void @llvm.memcpy.p0i8.p0i8.i64(i8* %p, i8* %dst, i64 %len, i1 false)\n"
      "  %c = icmp ult i64 %len, 16\n  br i1 %c, label %ok, label %bad\n\n"
      "ok:\n  %q = call i8* @memcpy(i8* %p, i8* @gbuf, i64 %len)\n  br label %bad\n"
      "bad:                                  ; preds = %ok\n  %t = load %struct.S*, %struct.S** @gptr\n  ret void\n}",
      "define internal fastcc void @\"quoted.name\"(%union.U* %0) {\n  %2 = bitcast %union.U* %0 to i8*\n"
      "  call void @printLine(i8* %2)\n  ret void\n}",
      "define i32 @alpha(i32 %x) {\nstart:\n  %y = call i32 @beta(i32 %x)\n  br label %done\n"
      "done:\n  %z = load i32, i32* @gx\n  ret i32 %y\n}",
      "define void @CWE121_loop_01_bad(i32 %n) {\nentry:\n  %arr = alloca [10 x i32]\n  br label %head\n"
      "head:\n  %i = phi i32 [ 0, %entry ], [ %next, %body ]\n  %cmp = icmp sle i32 %i, %n\n"
      "  br i1 %cmp, label %body, label %out\nbody:\n"
      "  %slot = getelementptr [10 x i32], [10 x i32]* %arr, i32 0, i32 %i\n  store i32 %i, i32* %slot\n"
      "  %next = add i32 %i, 1\n  br label %head\nout:\n  call void @printIntLine(i32 %n)\n  ret void\n}",
  };
  return f;
}

// Consistently renames every non-preserved name of a normalized function to
// fresh random spellings. Normalizing the result must give back the input.
inline std::string alpha_rename(const std::string& normalized, std::uint64_t seed) {
  static const std::regex name(R"(([%@])(func|glob|loc|lbl)_(\d+)|^(lbl_\d+):)", std::regex::multiline);
  std::mt19937_64 gen(seed);
  std::map<std::string, std::string> fresh;
  auto spelling = [&](const std::string& key) {
    auto it = fresh.find(key);
    if (it != fresh.end()) return it->second;
    std::string s = "n";
    for (int i = 0; i < 6; ++i) s.push_back(static_cast<char>('a' + gen() % 26));
    s += std::to_string(fresh.size());
    return fresh[key] = s;
  };
  std::string out;
  std::size_t last = 0;
  for (auto it = std::sregex_iterator(normalized.begin(), normalized.end(), name); it != std::sregex_iterator(); ++it) {
    const auto& m = *it;
    out += normalized.substr(last, m.position() - last);
    if (m[4].matched) {
      out += spelling("%" + m[4].str()) + ":";
    } else {
      const std::string key = m[1].str() + m[2].str() + "_" + m[3].str();
      out += m[1].str() + spelling(key);
    }
    last = m.position() + m.length();
  }
  return out + normalized.substr(last);
}

// Independent evaluator: each rule written out as a predicate over the declarations.
inline std::multiset<std::pair<std::string, std::string>> oracle_findings(const DeclaredSteps& d, double max_age) {
  std::multiset<std::pair<std::string, std::string>> out;
  if (d.used_kfold_for_tuning) out.insert({"kfold_cv", "violation"});
  if (d.feature_selection_scope == "all_samples") out.insert({"preparatory_work", "violation"});
  if (d.normalization_scope == "pre_split_global") out.insert({"normalization", "violation"});
  if (d.dataset_age_years.has_value() && d.dataset_age_years.value() > max_age)
    out.insert({"aging_dataset", "warning"});
  if (d.time_dependent_samples == true && d.temporal_split != true) out.insert({"time_dependency", "warning"});
  for (const auto& r : d.filter_rules) {
    out.insert({"survivorship_bias", "info"});
    if (r.uses_unavailable_information) out.insert({"cherry_picking", "warning"});
  }
  return out;
}

inline DeclaredSteps fuzz_declarations(std::mt19937_64& gen) {
  static const std::vector<std::string> fs = {"preprocessing_only", "train_only", "all_samples"};
  static const std::vector<std::string> ns = {"none", "per_sample", "train_only", "pre_split_global"};
  DeclaredSteps d;
  d.feature_selection_scope = fs[gen() % fs.size()];
  d.normalization_scope = ns[gen() % ns.size()];
  d.used_kfold_for_tuning = gen() % 2;
  if (gen() % 2) d.dataset_age_years = static_cast<double>(gen() % 200) / 10.0;
  if (gen() % 2) d.time_dependent_samples = gen() % 2;
  if (gen() % 2) d.temporal_split = gen() % 2;
  for (std::size_t k = gen() % 4; k > 0; --k)
    d.filter_rules.push_back({"rule" + std::to_string(k), "", static_cast<bool>(gen() % 2)});
  return d;
}

inline std::multiset<std::pair<std::string, std::string>> observed_findings(const DatasetManifest& m,
                                                                             double max_age) {
  std::multiset<std::pair<std::string, std::string>> got;
  for (const auto& f : audit_declared_steps(m, {max_age, 10}))
    got.insert({std::string(to_string(f.subcategory)), std::string(to_string(f.severity))});
  return got;
}

struct CountedMetrics {
  double accuracy, precision, recall, f1;
};

// Per-sample counting with the zero-denominator conventions spelled out.
inline CountedMetrics count_metrics(const std::vector<double>& p, const std::vector<int>& y, double threshold = 0.5) {
  int tp = 0, fp = 0, fn = 0, tn = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const bool pred = !(p[i] < threshold);
    if (pred && y[i]) ++tp;
    if (pred && !y[i]) ++fp;
    if (!pred && y[i]) ++fn;
    if (!pred && !y[i]) ++tn;
  }
  const double acc = double(tp + tn) / double(p.size());
  const double prec = tp + fp ? double(tp) / double(tp + fp) : 0.0;
  const double rec = tp + fn ? double(tp) / double(tp + fn) : 0.0;
  const double f1 = prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
  return {acc, prec, rec, f1};
}

// Random prediction/label set; every tenth trial has no positives.
inline std::pair<std::vector<double>, std::vector<int>> random_predictions(std::mt19937_64& gen, int trial) {
  const std::size_t n = 1 + gen() % 40;
  std::vector<double> p(n);
  std::vector<int> y(n);
  const bool all_negative = trial % 10 == 0;
  for (std::size_t i = 0; i < n; ++i) {
    p[i] = static_cast<double>(gen() % 1001) / 1000.0;
    y[i] = all_negative ? 0 : static_cast<int>(gen() % 2);
  }
  return {p, y};
}

}  // namespace snoop::testing
