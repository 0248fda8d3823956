#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "snoop/error.hpp"
#include "snoop/hash.hpp"
#include "snoop/tokenizer.hpp"

namespace snoop {

enum class Label { vulnerable, clean, unlabeled };

inline std::string_view to_string(Label l) {
  switch (l) {
    case Label::vulnerable: return "vulnerable";
    case Label::clean: return "clean";
    case Label::unlabeled: return "unlabeled";
  }
  return "unlabeled";
}

inline Label parse_label(std::string_view s) {
  if (s == "vulnerable") return Label::vulnerable;
  if (s == "clean") return Label::clean;
  if (s == "unlabeled") return Label::unlabeled;
  throw error(errc::format, "unknown label '" + std::string(s) + "'");
}

struct IrFunction {
  std::string id;
  std::string source_name;
  std::string raw_text;
  std::string normalized_text;
  std::size_t token_count = 0;
  Label label = Label::unlabeled;
  std::optional<std::string> cwe;
};

struct Corpus {
  std::vector<IrFunction> functions;
  std::string provenance;
  std::size_t dropped_overlength = 0;

  std::size_t size() const { return functions.size(); }
  bool empty() const { return functions.empty(); }
};

struct ExtractedFunction {
  std::string source_name;
  std::string raw_text;
};

namespace detail {

inline bool is_ident_char(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' ||
         c == '$' || c == '.' || c == '_';
}

// Length of the identifier body that starts at text[i] (just past a sigil):
// either a run of identifier characters or a quoted name.
inline std::size_t ident_length(std::string_view text, std::size_t i) {
  if (i < text.size() && text[i] == '"') {
    const auto close = text.find('"', i + 1);
    return close == std::string_view::npos ? 0 : close - i + 1;
  }
  std::size_t j = i;
  while (j < text.size() && is_ident_char(text[j])) ++j;
  return j - i;
}

inline bool starts_line(std::string_view text, std::size_t pos) {
  while (pos > 0) {
    const char c = text[pos - 1];
    if (c == '\n') return true;
    if (c != ' ' && c != '\t') return false;
    --pos;
  }
  return true;
}

inline std::string function_name_of(std::string_view def) {
  const auto open = def.find('(');
  const auto head = def.substr(0, open);
  const auto at = head.rfind('@');
  if (at == std::string_view::npos) return {};
  const auto len = ident_length(def, at + 1);
  std::string name(def.substr(at + 1, len));
  if (name.size() >= 2 && name.front() == '"') name = name.substr(1, name.size() - 2);
  return name;
}

}  // namespace detail

// Returns every `define` block verbatim in file order. Braces inside string
// literals and comments do not count towards nesting.
inline std::vector<ExtractedFunction> extract_functions(std::string_view module_text) {
  std::vector<ExtractedFunction> out;
  const std::size_t n = module_text.size();
  std::size_t depth = 0;
  std::size_t outer_open = 0;
  std::optional<std::size_t> define_start;
  bool in_string = false;

  for (std::size_t i = 0; i < n; ++i) {
    const char c = module_text[i];
    if (in_string) {
      if (c == '"') in_string = false;
      continue;
    }
    switch (c) {
      case '"':
        in_string = true;
        break;
      case ';':
        while (i + 1 < n && module_text[i + 1] != '\n') ++i;
        break;
      case '{':
        if (depth == 0) outer_open = i;
        ++depth;
        break;
      case '}':
        if (depth == 0)
          throw error(errc::malformed_module, "unbalanced '}' at byte offset " + std::to_string(i));
        --depth;
        if (depth == 0 && define_start) {
          const auto text = module_text.substr(*define_start, i + 1 - *define_start);
          out.push_back({detail::function_name_of(text), std::string(text)});
          define_start.reset();
        }
        break;
      case 'd':
        if (depth == 0 && !define_start && module_text.compare(i, 6, "define") == 0 &&
            i + 6 < n && is_space(module_text[i + 6]) && detail::starts_line(module_text, i))
          define_start = i;
        break;
      default:
        break;
    }
  }
  if (in_string)
    throw error(errc::malformed_module, "unterminated string literal at end of input (byte offset " +
                                            std::to_string(n) + ")");
  if (depth != 0)
    throw error(errc::malformed_module,
                "unbalanced '{' opened at byte offset " + std::to_string(outer_open));
  if (define_start)
    throw error(errc::malformed_module,
                "function body missing for define at byte offset " + std::to_string(*define_start));
  return out;
}

struct NormalizeOptions {
  // Callee and global names that are never renamed. Names starting with
  // "llvm." (intrinsics) are always preserved as well.
  std::set<std::string, std::less<>> preserved_names = default_preserved_names();

  static std::set<std::string, std::less<>> default_preserved_names() {
    return {"memcpy",    "memmove",  "memset",   "memcmp",   "strcpy",   "strncpy",
            "strcat",    "strncat",  "strlen",   "strcmp",   "strncmp",  "strchr",
            "strrchr",   "strstr",   "strdup",   "sprintf",  "snprintf", "vsprintf",
            "vsnprintf", "printf",   "fprintf",  "puts",     "putchar",  "fputs",
            "fgets",     "gets",     "getchar",  "scanf",    "sscanf",   "fscanf",
            "malloc",    "calloc",   "realloc",  "free",     "alloca",   "wcscpy",
            "wcsncpy",   "wcslen",   "wcscat",   "wcsncat",  "wmemset",  "wmemcpy",
            "wmemmove",  "wprintf",  "fopen",    "fclose",   "fread",    "fwrite",
            "atoi",      "atol",     "strtol",   "strtoul",  "rand",     "srand",
            "time",      "exit",     "abort",    "__stack_chk_fail", "__memcpy_chk",
            "__strcpy_chk", "__strcat_chk", "__sprintf_chk", "__isoc99_scanf",
            "__isoc99_sscanf", "__isoc99_fscanf", "_Znwm", "_Znam", "_ZdlPv", "_ZdaPv"};
  }

  bool preserved(std::string_view name) const {
    return name.starts_with("llvm.") || preserved_names.count(name) != 0;
  }
};

// Drops comments and attribute-group references (`#N`), trims trailing
// whitespace and removes lines left empty.
inline std::string strip_function_text(std::string_view raw) {
  std::string cleaned;
  cleaned.reserve(raw.size());
  bool in_string = false;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const char c = raw[i];
    if (in_string) {
      cleaned.push_back(c);
      if (c == '"') in_string = false;
      continue;
    }
    if (c == '"') {
      in_string = true;
      cleaned.push_back(c);
    } else if (c == ';') {
      while (i + 1 < raw.size() && raw[i + 1] != '\n') ++i;
    } else if (c == '#' && i + 1 < raw.size() && raw[i + 1] >= '0' && raw[i + 1] <= '9' &&
               (i == 0 || !detail::is_ident_char(raw[i - 1]))) {
      while (i + 1 < raw.size() && raw[i + 1] >= '0' && raw[i + 1] <= '9') ++i;
      while (!cleaned.empty() && (cleaned.back() == ' ' || cleaned.back() == '\t')) cleaned.pop_back();
    } else if (c == '\r') {
      // dropped
    } else {
      cleaned.push_back(c);
    }
  }

  std::string out;
  out.reserve(cleaned.size());
  std::size_t start = 0;
  while (start <= cleaned.size()) {
    auto end = cleaned.find('\n', start);
    if (end == std::string::npos) end = cleaned.size();
    std::string_view line(cleaned.data() + start, end - start);
    while (!line.empty() && (line.back() == ' ' || line.back() == '\t')) line.remove_suffix(1);
    bool blank = std::all_of(line.begin(), line.end(), [](char ch) { return ch == ' ' || ch == '\t'; });
    if (!blank) {
      if (!out.empty()) out.push_back('\n');
      out.append(line);
    }
    start = end + 1;
  }
  return out;
}

namespace detail {

enum class RenameClass { func, glob, loc, lbl };

struct Renamer {
  std::unordered_map<std::string, std::string> map[4];
  std::size_t next[4] = {1, 1, 1, 1};

  const std::string& rename(RenameClass cls, const std::string& name) {
    auto& m = map[static_cast<int>(cls)];
    auto it = m.find(name);
    if (it != m.end()) return it->second;
    static constexpr const char* kPrefix[] = {"func_", "glob_", "loc_", "lbl_"};
    auto& slot = next[static_cast<int>(cls)];
    return m.emplace(name, kPrefix[static_cast<int>(cls)] + std::to_string(slot++)).first->second;
  }
};

inline bool is_type_name(std::string_view name) {
  return name.starts_with("struct.") || name.starts_with("union.") || name.starts_with("class.");
}

// Label definitions: a line whose first token is `name:`.
inline std::unordered_set<std::string> collect_labels(std::string_view text) {
  std::unordered_set<std::string> labels;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::size_t i = pos;
    while (i < end && (text[i] == ' ' || text[i] == '\t')) ++i;
    const std::size_t len = ident_length(text, i);
    if (len > 0 && i + len < end && text[i + len] == ':') labels.emplace(text.substr(i, len));
    pos = end + 1;
  }
  return labels;
}

// Global names used as callees or definitions: `@name` followed by `(`.
inline std::unordered_set<std::string> collect_functions(std::string_view text) {
  std::unordered_set<std::string> funcs;
  bool in_string = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (in_string) {
      if (c == '"') in_string = false;
      continue;
    }
    if (c == '"') {
      in_string = true;
    } else if (c == '@') {
      const std::size_t len = ident_length(text, i + 1);
      std::size_t j = i + 1 + len;
      while (j < text.size() && (text[j] == ' ' || text[j] == '\t')) ++j;
      if (len > 0 && j < text.size() && text[j] == '(') funcs.emplace(text.substr(i + 1, len));
      i += len;
    }
  }
  return funcs;
}

}  // namespace detail

// Renames sample-unique identifiers to func_N / glob_N / loc_N / lbl_N,
// numbered by first occurrence inside this one function.
inline std::string normalize_function(std::string_view raw_text, const NormalizeOptions& opts = {}) {
  using detail::RenameClass;
  const std::string text = strip_function_text(raw_text);
  const auto labels = detail::collect_labels(text);
  const auto funcs = detail::collect_functions(text);
  detail::Renamer renamer;

  auto unquoted = [](std::string_view name) {
    if (name.size() >= 2 && name.front() == '"') name = name.substr(1, name.size() - 2);
    return std::string(name);
  };

  std::string out;
  out.reserve(text.size());
  bool in_string = false;
  bool line_start = true;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (in_string) {
      out.push_back(c);
      if (c == '"') in_string = false;
      if (c == '\n') line_start = true;
      continue;
    }
    if (c == '\n') {
      out.push_back(c);
      line_start = true;
      continue;
    }
    if (line_start && c != ' ' && c != '\t') {
      line_start = false;
      const std::size_t len = detail::ident_length(text, i);
      if (len > 0 && i + len < text.size() && text[i + len] == ':') {
        const std::string name(text.substr(i, len));
        out += renamer.rename(RenameClass::lbl, name);
        i += len - 1;
        continue;
      }
    }
    if (c == '"') {
      in_string = true;
      out.push_back(c);
    } else if (c == '@' || c == '%') {
      const std::size_t len = detail::ident_length(text, i + 1);
      if (len == 0) {
        out.push_back(c);
        continue;
      }
      const std::string name(text.substr(i + 1, len));
      const std::string bare = unquoted(name);
      out.push_back(c);
      if (c == '@') {
        if (opts.preserved(bare)) out += name;
        else out += renamer.rename(funcs.count(name) ? RenameClass::func : RenameClass::glob, name);
      } else {
        if (detail::is_type_name(bare)) out += name;
        else out += renamer.rename(labels.count(name) ? RenameClass::lbl : RenameClass::loc, name);
      }
      i += len;
    } else {
      out.push_back(c);
    }
  }
  return out;
}

struct LabelRules {
  std::string vulnerable_marker = "bad";
  std::string clean_marker = "good";
  std::regex cwe_pattern{"^CWE(\\d+)"};
};

struct LabelResult {
  Label label = Label::unlabeled;
  std::optional<std::string> cwe;

  friend bool operator==(const LabelResult&, const LabelResult&) = default;
};

// A label is only assigned when a CWE tag is present as well.
inline LabelResult label_function(std::string_view source_name, const LabelRules& rules = {}) {
  const std::string name(source_name);
  std::smatch m;
  if (!std::regex_search(name, m, rules.cwe_pattern)) return {};
  std::string cwe = "CWE-" + std::to_string(std::stoul(m[1].str()));
  if (name.find(rules.vulnerable_marker) != std::string::npos) return {Label::vulnerable, cwe};
  if (name.find(rules.clean_marker) != std::string::npos) return {Label::clean, cwe};
  return {};
}

inline IrFunction make_function(std::string source_name, std::string raw_text,
                                const NormalizeOptions& opts = {}, const LabelRules& rules = {}) {
  IrFunction f;
  f.normalized_text = normalize_function(raw_text, opts);
  f.id = sha256_hex(f.normalized_text);
  f.token_count = count_tokens(f.normalized_text);
  auto lr = label_function(source_name, rules);
  f.label = lr.label;
  f.cwe = std::move(lr.cwe);
  f.source_name = std::move(source_name);
  f.raw_text = std::move(raw_text);
  return f;
}

// Appends functions, skipping any whose id is already present.
class CorpusBuilder {
 public:
  explicit CorpusBuilder(std::string provenance = {}) { corpus_.provenance = std::move(provenance); }

  bool add(IrFunction f) {
    if (!seen_.insert(f.id).second) {
      ++duplicates_;
      return false;
    }
    corpus_.functions.push_back(std::move(f));
    return true;
  }

  std::size_t duplicates() const { return duplicates_; }
  Corpus finish() && { return std::move(corpus_); }

 private:
  Corpus corpus_;
  std::unordered_set<std::string> seen_;
  std::size_t duplicates_ = 0;
};

inline Corpus filter_overlength(Corpus corpus, std::size_t max_tokens = 2048) {
  if (max_tokens == 0) throw error(errc::config, "max_tokens must be positive");
  Corpus out;
  out.provenance = std::move(corpus.provenance);
  out.dropped_overlength = corpus.dropped_overlength;
  out.functions.reserve(corpus.functions.size());
  for (auto& f : corpus.functions) {
    if (f.token_count > max_tokens) ++out.dropped_overlength;
    else out.functions.push_back(std::move(f));
  }
  return out;
}

struct IngestOptions {
  NormalizeOptions normalize;
  LabelRules labels;
  std::size_t max_tokens = 2048;
};

// Builds a corpus from (file name, module text) pairs, processed in file-name
// order. Duplicates by normalized content are dropped, first occurrence wins.
inline Corpus build_corpus(std::vector<std::pair<std::string, std::string>> modules,
                           const IngestOptions& opts = {}, std::string provenance = {}) {
  std::stable_sort(modules.begin(), modules.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  CorpusBuilder builder(std::move(provenance));
  for (const auto& [file, text] : modules) {
    try {
      for (auto& ex : extract_functions(text))
        builder.add(make_function(std::move(ex.source_name), std::move(ex.raw_text), opts.normalize,
                                  opts.labels));
    } catch (const error& e) {
      throw error(e.code(), file + ": " + e.what());
    }
  }
  return filter_overlength(std::move(builder).finish(), opts.max_tokens);
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw error(errc::io, "cannot read " + p.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& p, std::string_view data) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream os(p, std::ios::binary);
  if (!os) throw error(errc::io, "cannot write " + p.string());
  os.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!os) throw error(errc::io, "short write to " + p.string());
}

inline Corpus ingest_directory(const std::filesystem::path& dir, const IngestOptions& opts = {}) {
  if (!std::filesystem::is_directory(dir)) throw error(errc::io, dir.string() + " is not a directory");
  std::vector<std::pair<std::string, std::string>> modules;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".ll") continue;
    modules.emplace_back(entry.path().filename().string(), read_file(entry.path()));
  }
  return build_corpus(std::move(modules), opts, "ingest:" + dir.string());
}

inline nlohmann::json to_json(const IrFunction& f) {
  nlohmann::json j;
  j["id"] = f.id;
  j["source_name"] = f.source_name;
  j["normalized_text"] = f.normalized_text;
  j["token_count"] = f.token_count;
  j["label"] = to_string(f.label);
  j["cwe"] = f.cwe ? nlohmann::json(*f.cwe) : nlohmann::json(nullptr);
  return j;
}

// Checks the record invariants: id re-hashes, token count re-counts, labels carry a CWE.
inline IrFunction function_from_json(const nlohmann::json& j) {
  IrFunction f;
  try {
    f.id = j.at("id").get<std::string>();
    f.source_name = j.at("source_name").get<std::string>();
    f.normalized_text = j.at("normalized_text").get<std::string>();
    f.token_count = j.at("token_count").get<std::size_t>();
    f.label = parse_label(j.at("label").get<std::string>());
    if (!j.at("cwe").is_null()) f.cwe = j.at("cwe").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw error(errc::format, std::string("corpus record: ") + e.what());
  }
  if (f.id != sha256_hex(f.normalized_text))
    throw error(errc::format, "corpus record " + f.source_name + ": id does not match content");
  if (f.token_count != count_tokens(f.normalized_text))
    throw error(errc::format, "corpus record " + f.source_name + ": token_count mismatch");
  if (f.label != Label::unlabeled && !f.cwe)
    throw error(errc::format, "corpus record " + f.source_name + ": labeled without cwe");
  return f;
}

inline std::string serialize_corpus(const Corpus& c) {
  std::string out;
  for (const auto& f : c.functions) {
    out += to_json(f).dump();
    out.push_back('\n');
  }
  return out;
}

inline Corpus parse_corpus(std::string_view text, std::string provenance = {}) {
  CorpusBuilder builder(std::move(provenance));
  std::size_t pos = 0, line_no = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    ++line_no;
    const auto line = text.substr(pos, end - pos);
    pos = end + 1;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw error(errc::format, "corpus line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!builder.add(function_from_json(j)))
      throw error(errc::format, "corpus line " + std::to_string(line_no) + ": duplicate id");
  }
  return std::move(builder).finish();
}

inline void write_corpus(const std::filesystem::path& p, const Corpus& c) { write_file(p, serialize_corpus(c)); }

inline Corpus read_corpus(const std::filesystem::path& p) { return parse_corpus(read_file(p), p.string()); }

// Content hash of a whole corpus, used in environment echoes.
inline std::string corpus_hash(const Corpus& c) {
  Sha256 h;
  for (const auto& f : c.functions) h.update(f.id).update("\n");
  return h.hex();
}

}  // namespace snoop
