#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "snoop/error.hpp"
#include "snoop/hash.hpp"

namespace snoop {

using TokenId = std::int32_t;

inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kUnknownId = 1;
inline constexpr TokenId kReservedIds = 2;

inline constexpr bool is_punctuation(char c) {
  switch (c) {
    case '(': case ')': case '[': case ']': case '{': case '}':
    case ',': case '=': case '*': case '<': case '>': case '!':
      return true;
    default:
      return false;
  }
}

inline constexpr bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
}

// Whitespace split, then every punctuation character becomes its own token.
template <class Sink>
void for_each_token(std::string_view text, Sink&& sink) {
  std::size_t i = 0;
  const std::size_t n = text.size();
  while (i < n) {
    const char c = text[i];
    if (is_space(c)) {
      ++i;
    } else if (is_punctuation(c)) {
      sink(text.substr(i, 1));
      ++i;
    } else {
      std::size_t j = i;
      while (j < n && !is_space(text[j]) && !is_punctuation(text[j])) ++j;
      sink(text.substr(i, j - i));
      i = j;
    }
  }
}

inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  for_each_token(text, [&](std::string_view t) { out.emplace_back(t); });
  return out;
}

inline std::size_t count_tokens(std::string_view text) {
  std::size_t n = 0;
  for_each_token(text, [&](std::string_view) { ++n; });
  return n;
}

class Vocabulary {
 public:
  Vocabulary() = default;

  // Builds from raw counts; keeps tokens with count >= min_count, ordered by
  // descending count then lexicographically.
  static Vocabulary from_counts(const std::map<std::string, std::uint64_t>& counts,
                                std::uint64_t min_count) {
    std::vector<std::pair<std::string, std::uint64_t>> kept;
    for (const auto& [tok, c] : counts)
      if (c >= min_count) kept.emplace_back(tok, c);
    std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });
    Vocabulary v;
    for (auto& [tok, c] : kept) v.push_back(std::move(tok), c);
    return v;
  }

  std::size_t size() const { return tokens_.size(); }
  // Number of ids including the reserved padding and unknown ids.
  std::size_t id_count() const { return tokens_.size() + kReservedIds; }

  const std::vector<std::string>& tokens() const { return tokens_; }
  std::uint64_t count(TokenId id) const { return counts_.at(id - kReservedIds); }

  TokenId id_of(std::string_view token) const {
    auto it = index_.find(std::string(token));
    return it == index_.end() ? kUnknownId : it->second;
  }

  bool contains(std::string_view token) const { return index_.count(std::string(token)) != 0; }

  const std::string& token(TokenId id) const { return tokens_.at(id - kReservedIds); }

  std::string serialize() const {
    std::ostringstream os;
    os << tokens_.size() << ' ' << kReservedIds << '\n';
    for (std::size_t i = 0; i < tokens_.size(); ++i) os << tokens_[i] << '\t' << counts_[i] << '\n';
    return os.str();
  }

  static Vocabulary parse(std::string_view text) {
    std::istringstream is{std::string(text)};
    std::string line;
    if (!std::getline(is, line)) throw error(errc::format, "vocabulary: missing header");
    std::istringstream hs(line);
    std::size_t n = 0;
    int reserved = 0;
    if (!(hs >> n >> reserved) || reserved != kReservedIds)
      throw error(errc::format, "vocabulary: bad header '" + line + "'");
    Vocabulary v;
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::getline(is, line)) throw error(errc::format, "vocabulary: truncated");
      const auto tab = line.find('\t');
      if (tab == std::string::npos || tab == 0)
        throw error(errc::format, "vocabulary: line " + std::to_string(i + 2));
      std::uint64_t c = std::stoull(line.substr(tab + 1));
      std::string tok = line.substr(0, tab);
      if (v.contains(tok)) throw error(errc::format, "vocabulary: duplicate token " + tok);
      v.push_back(std::move(tok), c);
    }
    return v;
  }

  std::string identity_hash() const { return sha256_hex(serialize()); }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.tokens_ == b.tokens_ && a.counts_ == b.counts_;
  }

 private:
  void push_back(std::string tok, std::uint64_t c) {
    index_.emplace(tok, static_cast<TokenId>(tokens_.size()) + kReservedIds);
    tokens_.push_back(std::move(tok));
    counts_.push_back(c);
  }

  std::vector<std::string> tokens_;
  std::vector<std::uint64_t> counts_;
  std::unordered_map<std::string, TokenId> index_;
};

template <class TextRange>
Vocabulary build_vocab_from_texts(const TextRange& texts, std::uint64_t min_count = 1) {
  if (min_count == 0) throw error(errc::config, "min_count must be positive");
  std::map<std::string, std::uint64_t> counts;
  std::size_t docs = 0;
  for (const auto& text : texts) {
    ++docs;
    for_each_token(std::string_view(text), [&](std::string_view t) { ++counts[std::string(t)]; });
  }
  if (docs == 0) throw error(errc::empty_input, "cannot build a vocabulary from an empty corpus");
  return Vocabulary::from_counts(counts, min_count);
}

inline std::vector<TokenId> encode(const std::vector<std::string>& tokens, const Vocabulary& vocab) {
  std::vector<TokenId> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(vocab.id_of(t));
  return ids;
}

inline std::vector<TokenId> encode_text(std::string_view text, const Vocabulary& vocab) {
  std::vector<TokenId> ids;
  for_each_token(text, [&](std::string_view t) { ids.push_back(vocab.id_of(t)); });
  return ids;
}

inline std::vector<std::string> decode(const std::vector<TokenId>& ids, const Vocabulary& vocab) {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (TokenId id : ids) {
    if (id == kPadId) out.emplace_back("<pad>");
    else if (id == kUnknownId) out.emplace_back("<unk>");
    else out.push_back(vocab.token(id));
  }
  return out;
}

inline void write_vocab(const std::string& path, const Vocabulary& v) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw error(errc::io, "cannot write " + path);
  os << v.serialize();
}

inline Vocabulary read_vocab(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw error(errc::io, "cannot read " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return Vocabulary::parse(ss.str());
}

}  // namespace snoop
