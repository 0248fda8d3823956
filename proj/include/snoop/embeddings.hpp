#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "snoop/error.hpp"
#include "snoop/ir_corpus.hpp"
#include "snoop/rng.hpp"
#include "snoop/tokenizer.hpp"

namespace snoop {

enum class EmbeddingKind { cbow, skipgram, external_static, external_contextual };

inline std::string_view to_string(EmbeddingKind k) {
  switch (k) {
    case EmbeddingKind::cbow: return "cbow";
    case EmbeddingKind::skipgram: return "skipgram";
    case EmbeddingKind::external_static: return "external_static";
    case EmbeddingKind::external_contextual: return "external_contextual";
  }
  return "";
}

inline EmbeddingKind parse_embedding_kind(std::string_view s) {
  if (s == "cbow") return EmbeddingKind::cbow;
  if (s == "skipgram") return EmbeddingKind::skipgram;
  if (s == "external_static" || s == "external") return EmbeddingKind::external_static;
  if (s == "external_contextual") return EmbeddingKind::external_contextual;
  throw error(errc::config, "unknown embedding kind '" + std::string(s) + "'");
}

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct LossPoint {
  std::uint64_t step = 0;
  double train_loss = 0.0;
  std::optional<double> validation_loss;
};

struct EmbeddingModel {
  EmbeddingKind kind = EmbeddingKind::skipgram;
  std::size_t dim = 0;
  // Static kinds: row i of the matrices belongs to tokens[i].
  std::vector<std::string> tokens;
  RowMatrix input_vectors;
  RowMatrix output_vectors;
  std::string vocab_ref;
  std::vector<LossPoint> training_log;
  bool deterministic = true;
  // Contextual kind: one T x dim matrix per sample id, in file order.
  std::vector<std::string> sample_ids;
  std::vector<RowMatrix> sample_rows;

  bool is_contextual() const { return kind == EmbeddingKind::external_contextual; }

  std::optional<std::size_t> row_of(std::string_view token) const {
    if (row_index_.size() != tokens.size()) rebuild_index();
    auto it = row_index_.find(std::string(token));
    if (it == row_index_.end()) return std::nullopt;
    return it->second;
  }

  const RowMatrix& sequence_for(std::string_view sample_id) const {
    if (sample_index_.size() != sample_ids.size()) rebuild_index();
    auto it = sample_index_.find(std::string(sample_id));
    if (it == sample_index_.end())
      throw error(errc::resolution, "no contextual embedding for sample " + std::string(sample_id));
    return sample_rows[it->second];
  }

  bool has_sample(std::string_view sample_id) const {
    if (sample_index_.size() != sample_ids.size()) rebuild_index();
    return sample_index_.count(std::string(sample_id)) != 0;
  }

 private:
  void rebuild_index() const {
    row_index_.clear();
    for (std::size_t i = 0; i < tokens.size(); ++i) row_index_.emplace(tokens[i], i);
    sample_index_.clear();
    for (std::size_t i = 0; i < sample_ids.size(); ++i) sample_index_.emplace(sample_ids[i], i);
  }

  mutable std::unordered_map<std::string, std::size_t> row_index_;
  mutable std::unordered_map<std::string, std::size_t> sample_index_;
};

inline double log_sigmoid(double x) {
  return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Negative-sampling loss for one hidden vector `h` (the center input vector
// for Skip-Gram, the mean context vector for CBOW) against output rows
// `targets`, where targets[0] is the positive and the rest are negatives:
//   -log s(u_0 . h) - sum_k log s(-u_k . h)
// When requested, writes dL/dh and dL/du_k (one row per target).
template <class HVec>
double negative_sampling_loss(const HVec& h, std::span<const std::size_t> targets, const RowMatrix& output,
                              Eigen::VectorXd* grad_h = nullptr, RowMatrix* grad_targets = nullptr) {
  double loss = 0.0;
  if (grad_h) grad_h->setZero(h.size());
  if (grad_targets) grad_targets->setZero(static_cast<Eigen::Index>(targets.size()), h.size());
  for (std::size_t k = 0; k < targets.size(); ++k) {
    const auto u = output.row(static_cast<Eigen::Index>(targets[k]));
    const double score = u.dot(h);
    const double label = k == 0 ? 1.0 : 0.0;
    loss -= k == 0 ? log_sigmoid(score) : log_sigmoid(-score);
    const double g = sigmoid(score) - label;
    if (grad_h) *grad_h += g * u.transpose();
    if (grad_targets) grad_targets->row(static_cast<Eigen::Index>(k)) = g * h.transpose();
  }
  return loss;
}

struct Word2VecConfig {
  EmbeddingKind kind = EmbeddingKind::skipgram;
  std::size_t dim = 100;
  std::size_t window = 5;
  std::size_t negatives = 5;
  std::size_t epochs = 5;
  double initial_rate = 0.025;
  std::uint64_t seed = 0;
  std::uint64_t log_every = 1000;
  double holdout_fraction = 0.02;
  std::size_t max_holdout_examples = 1000;
};

namespace detail {

// Draws ids from unigram counts raised to 0.75.
class NegativeSampler {
 public:
  explicit NegativeSampler(const std::vector<std::uint64_t>& counts) {
    cumulative_.reserve(counts.size());
    double acc = 0.0;
    for (auto c : counts) {
      acc += std::pow(static_cast<double>(c), 0.75);
      cumulative_.push_back(acc);
    }
  }

  std::size_t draw(Rng& rng) const {
    const double r = rng.uniform() * cumulative_.back();
    auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), r);
    if (it == cumulative_.end()) --it;
    return static_cast<std::size_t>(it - cumulative_.begin());
  }

  bool empty() const { return cumulative_.empty() || cumulative_.back() <= 0.0; }

 private:
  std::vector<double> cumulative_;
};

struct HeldOut {
  std::vector<std::size_t> context;  // Skip-Gram: the single center row
  std::vector<std::size_t> targets;  // positive first, then pre-drawn negatives
};

}  // namespace detail

// Trains CBOW or Skip-Gram with negative sampling on encoded sequences.
// Reserved ids (padding, unknown) are skipped; row i of the result belongs
// to vocabulary id i + 2.
inline EmbeddingModel train_word2vec(const std::vector<std::vector<TokenId>>& sequences, const Vocabulary& vocab,
                                     const Word2VecConfig& cfg) {
  if (cfg.kind != EmbeddingKind::cbow && cfg.kind != EmbeddingKind::skipgram)
    throw error(errc::config, "word2vec kind must be cbow or skipgram");
  if (cfg.dim == 0) throw error(errc::config, "dim must be positive");
  if (cfg.window == 0) throw error(errc::config, "window must be positive");
  if (cfg.epochs == 0) throw error(errc::config, "epochs must be positive");
  if (!(cfg.initial_rate > 0)) throw error(errc::config, "initial_rate must be positive");
  if (sequences.empty() || vocab.size() == 0) throw error(errc::config, "empty corpus");

  const std::size_t rows = vocab.size();
  std::vector<std::vector<std::size_t>> seqs;
  seqs.reserve(sequences.size());
  std::vector<std::uint64_t> freq(rows, 0);
  for (const auto& s : sequences) {
    std::vector<std::size_t> r;
    r.reserve(s.size());
    for (TokenId id : s) {
      if (id < kReservedIds) continue;
      const auto row = static_cast<std::size_t>(id - kReservedIds);
      if (row >= rows) throw error(errc::config, "token id outside vocabulary");
      r.push_back(row);
      ++freq[row];
    }
    seqs.push_back(std::move(r));
  }

  const bool sg = cfg.kind == EmbeddingKind::skipgram;
  const auto W = static_cast<std::ptrdiff_t>(cfg.window);

  // Held-out membership is a pure function of (seed, sequence, position[, context]).
  const std::uint64_t hold_seed = derive_seed(cfg.seed, "w2v-holdout");
  auto held_out = [&](std::size_t s, std::size_t i, std::size_t j) {
    const std::uint64_t h = splitmix64(hold_seed ^ splitmix64((s << 20) ^ (i << 8) ^ j));
    return static_cast<double>(h >> 11) * 0x1.0p-53 < cfg.holdout_fraction;
  };

  std::uint64_t examples_per_epoch = 0;
  for (std::size_t s = 0; s < seqs.size(); ++s) {
    const auto n = static_cast<std::ptrdiff_t>(seqs[s].size());
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      const auto lo = std::max<std::ptrdiff_t>(0, i - W), hi = std::min<std::ptrdiff_t>(n - 1, i + W);
      const auto ctx = static_cast<std::uint64_t>(hi - lo);
      examples_per_epoch += sg ? ctx : (ctx > 0 ? 1 : 0);
    }
  }
  if (examples_per_epoch == 0)
    throw error(errc::config, "corpus yields no (center, context) pairs");

  EmbeddingModel model;
  model.kind = cfg.kind;
  model.dim = cfg.dim;
  model.tokens = vocab.tokens();
  model.vocab_ref = vocab.identity_hash();
  const auto D = static_cast<Eigen::Index>(cfg.dim);
  model.input_vectors.resize(static_cast<Eigen::Index>(rows), D);
  model.output_vectors = RowMatrix::Zero(static_cast<Eigen::Index>(rows), D);
  Rng init_rng(derive_seed(cfg.seed, "w2v-init"));
  const double scale = 0.5 / static_cast<double>(cfg.dim);
  for (Eigen::Index r = 0; r < model.input_vectors.rows(); ++r)
    for (Eigen::Index c = 0; c < D; ++c) model.input_vectors(r, c) = init_rng.uniform(-scale, scale);

  detail::NegativeSampler sampler(freq);
  Rng rng(derive_seed(cfg.seed, "w2v-train"));

  std::vector<std::size_t> targets;
  std::vector<std::size_t> context;
  auto draw_targets = [&](std::size_t positive, Rng& r) {
    targets.clear();
    targets.push_back(positive);
    for (std::size_t k = 0; k < cfg.negatives; ++k) {
      const std::size_t neg = sampler.draw(r);
      if (neg != positive) targets.push_back(neg);
    }
  };

  // Collect the held-out set once, with negatives fixed at collection time.
  std::vector<detail::HeldOut> holdout;
  {
    Rng hold_rng(derive_seed(cfg.seed, "w2v-holdout-negatives"));
    for (std::size_t s = 0; s < seqs.size() && holdout.size() < cfg.max_holdout_examples; ++s) {
      const auto& q = seqs[s];
      const auto n = static_cast<std::ptrdiff_t>(q.size());
      for (std::ptrdiff_t i = 0; i < n && holdout.size() < cfg.max_holdout_examples; ++i) {
        const auto lo = std::max<std::ptrdiff_t>(0, i - W), hi = std::min<std::ptrdiff_t>(n - 1, i + W);
        if (sg) {
          for (auto j = lo; j <= hi && holdout.size() < cfg.max_holdout_examples; ++j) {
            if (j == i || !held_out(s, static_cast<std::size_t>(i), static_cast<std::size_t>(j))) continue;
            draw_targets(q[static_cast<std::size_t>(j)], hold_rng);
            holdout.push_back({{q[static_cast<std::size_t>(i)]}, targets});
          }
        } else if (hi > lo && held_out(s, static_cast<std::size_t>(i), 0)) {
          detail::HeldOut h;
          for (auto j = lo; j <= hi; ++j)
            if (j != i) h.context.push_back(q[static_cast<std::size_t>(j)]);
          draw_targets(q[static_cast<std::size_t>(i)], hold_rng);
          h.targets = targets;
          holdout.push_back(std::move(h));
        }
      }
    }
  }

  Eigen::VectorXd hidden(D), grad_h(D);
  RowMatrix grad_rows;
  auto holdout_loss = [&]() -> std::optional<double> {
    if (holdout.empty()) return std::nullopt;
    double total = 0.0;
    for (const auto& h : holdout) {
      hidden.setZero();
      for (auto c : h.context) hidden += model.input_vectors.row(static_cast<Eigen::Index>(c)).transpose();
      hidden /= static_cast<double>(h.context.size());
      total += negative_sampling_loss(hidden, std::span<const std::size_t>(h.targets), model.output_vectors);
    }
    return total / static_cast<double>(holdout.size());
  };

  const double total_updates = static_cast<double>(examples_per_epoch * cfg.epochs);
  const double min_rate = cfg.initial_rate * 1e-4;
  std::uint64_t step = 0;
  double window_loss = 0.0;
  std::uint64_t window_count = 0;

  auto train_one = [&](std::span<const std::size_t> ctx_rows, std::size_t positive) {
    const double rate =
        std::max(min_rate, cfg.initial_rate * (1.0 - static_cast<double>(step) / total_updates));
    draw_targets(positive, rng);
    hidden.setZero();
    for (auto c : ctx_rows) hidden += model.input_vectors.row(static_cast<Eigen::Index>(c)).transpose();
    hidden /= static_cast<double>(ctx_rows.size());
    const double loss = negative_sampling_loss(hidden, std::span<const std::size_t>(targets),
                                               model.output_vectors, &grad_h, &grad_rows);
    for (std::size_t k = 0; k < targets.size(); ++k)
      model.output_vectors.row(static_cast<Eigen::Index>(targets[k])) -=
          rate * grad_rows.row(static_cast<Eigen::Index>(k));
    const double share = rate / static_cast<double>(ctx_rows.size());
    for (auto c : ctx_rows) model.input_vectors.row(static_cast<Eigen::Index>(c)) -= share * grad_h.transpose();
    ++step;
    window_loss += loss;
    ++window_count;
    if (cfg.log_every > 0 && step % cfg.log_every == 0) {
      model.training_log.push_back({step, window_loss / static_cast<double>(window_count), holdout_loss()});
      window_loss = 0.0;
      window_count = 0;
    }
  };

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t s = 0; s < seqs.size(); ++s) {
      const auto& q = seqs[s];
      const auto n = static_cast<std::ptrdiff_t>(q.size());
      for (std::ptrdiff_t i = 0; i < n; ++i) {
        const auto lo = std::max<std::ptrdiff_t>(0, i - W), hi = std::min<std::ptrdiff_t>(n - 1, i + W);
        if (sg) {
          const std::size_t center = q[static_cast<std::size_t>(i)];
          for (auto j = lo; j <= hi; ++j) {
            if (j == i || held_out(s, static_cast<std::size_t>(i), static_cast<std::size_t>(j))) continue;
            train_one(std::span<const std::size_t>(&center, 1), q[static_cast<std::size_t>(j)]);
          }
        } else {
          if (hi == lo || held_out(s, static_cast<std::size_t>(i), 0)) continue;
          context.clear();
          for (auto j = lo; j <= hi; ++j)
            if (j != i) context.push_back(q[static_cast<std::size_t>(j)]);
          train_one(context, q[static_cast<std::size_t>(i)]);
        }
      }
    }
  }
  if (window_count > 0)
    model.training_log.push_back({step, window_loss / static_cast<double>(window_count), holdout_loss()});
  if (!model.input_vectors.allFinite() || !model.output_vectors.allFinite())
    throw error(errc::divergence, "word2vec produced non-finite vectors");
  return model;
}

struct Word2VecGradCheck {
  double max_rel_error_context = 0.0;
  double max_rel_error_output = 0.0;
  double max_rel_error() const { return std::max(max_rel_error_context, max_rel_error_output); }
};

// Central finite differences of the negative-sampling loss against the
// analytic gradient, for every context input vector and every target output
// row, on random matrices over a vocabulary of `rows` tokens.
inline Word2VecGradCheck word2vec_gradient_check(EmbeddingKind kind, std::size_t rows, std::size_t dim,
                                                 std::size_t negatives, std::uint64_t seed, double step = 1e-5,
                                                 double floor = 1e-6) {
  if (rows < negatives + 3) throw error(errc::config, "vocabulary too small for the requested negatives");
  Rng rng(seed);
  const auto R = static_cast<Eigen::Index>(rows), D = static_cast<Eigen::Index>(dim);
  RowMatrix input(R, D), output(R, D);
  for (Eigen::Index r = 0; r < R; ++r)
    for (Eigen::Index c = 0; c < D; ++c) {
      input(r, c) = rng.uniform(-1.0, 1.0);
      output(r, c) = rng.uniform(-1.0, 1.0);
    }
  std::vector<std::size_t> context;
  const std::size_t n_ctx = kind == EmbeddingKind::cbow ? 4 : 1;
  while (context.size() < n_ctx) context.push_back(rng.below(rows));
  std::vector<std::size_t> targets;
  while (targets.size() < negatives + 1) {
    const auto t = rng.below(rows);
    if (std::find(targets.begin(), targets.end(), t) == targets.end()) targets.push_back(t);
  }

  auto loss_at = [&](const RowMatrix& in, const RowMatrix& out, Eigen::VectorXd* gh, RowMatrix* gt) {
    Eigen::VectorXd h = Eigen::VectorXd::Zero(D);
    for (auto c : context) h += in.row(static_cast<Eigen::Index>(c)).transpose();
    h /= static_cast<double>(context.size());
    return negative_sampling_loss(h, std::span<const std::size_t>(targets), out, gh, gt);
  };
  auto rel = [&](double a, double n) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor}); };

  Eigen::VectorXd gh;
  RowMatrix gt;
  loss_at(input, output, &gh, &gt);
  Word2VecGradCheck res;
  // Each context row receives grad_h / |context|, summed over repeats.
  std::vector<std::size_t> distinct = context;
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  for (auto c : distinct) {
    const double share = static_cast<double>(std::count(context.begin(), context.end(), c)) /
                         static_cast<double>(context.size());
    for (Eigen::Index d = 0; d < D; ++d) {
      RowMatrix plus = input, minus = input;
      plus(static_cast<Eigen::Index>(c), d) += step;
      minus(static_cast<Eigen::Index>(c), d) -= step;
      const double num = (loss_at(plus, output, nullptr, nullptr) - loss_at(minus, output, nullptr, nullptr)) / (2 * step);
      res.max_rel_error_context = std::max(res.max_rel_error_context, rel(share * gh(d), num));
    }
  }
  for (std::size_t k = 0; k < targets.size(); ++k)
    for (Eigen::Index d = 0; d < D; ++d) {
      RowMatrix plus = output, minus = output;
      plus(static_cast<Eigen::Index>(targets[k]), d) += step;
      minus(static_cast<Eigen::Index>(targets[k]), d) -= step;
      const double num = (loss_at(input, plus, nullptr, nullptr) - loss_at(input, minus, nullptr, nullptr)) / (2 * step);
      res.max_rel_error_output = std::max(res.max_rel_error_output, rel(gt(static_cast<Eigen::Index>(k), d), num));
    }
  return res;
}

inline std::vector<std::vector<TokenId>> encode_corpus(const Corpus& corpus, const Vocabulary& vocab) {
  std::vector<std::vector<TokenId>> out;
  out.reserve(corpus.size());
  for (const auto& f : corpus.functions) out.push_back(encode_text(f.normalized_text, vocab));
  return out;
}

struct Neighbor {
  std::string token;
  double cosine = 0.0;
};

// k most cosine-similar tokens, ties broken by row order, query excluded.
inline std::vector<Neighbor> nearest(const EmbeddingModel& model, std::string_view token, std::size_t k) {
  if (model.is_contextual()) throw error(errc::lookup, "contextual models have no token vectors");
  const auto q = model.row_of(token);
  if (!q) throw error(errc::lookup, "token '" + std::string(token) + "' not in vocabulary");
  if (k == 0) return {};
  const auto qv = model.input_vectors.row(static_cast<Eigen::Index>(*q));
  const double qn = qv.norm();
  std::vector<std::pair<double, std::size_t>> scored;
  for (std::size_t r = 0; r < model.tokens.size(); ++r) {
    if (r == *q) continue;
    const auto v = model.input_vectors.row(static_cast<Eigen::Index>(r));
    const double denom = qn * v.norm();
    scored.emplace_back(denom == 0.0 ? 0.0 : qv.dot(v) / denom, r);
  }
  const std::size_t take = std::min(k, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take), scored.end(),
                    [](const auto& a, const auto& b) {
                      if (a.first != b.first) return a.first > b.first;
                      return a.second < b.second;
                    });
  std::vector<Neighbor> out;
  for (std::size_t i = 0; i < take; ++i) out.push_back({model.tokens[scored[i].second], scored[i].first});
  return out;
}

inline double cosine(const EmbeddingModel& m, std::string_view a, std::string_view b) {
  const auto ra = m.row_of(a), rb = m.row_of(b);
  if (!ra || !rb) throw error(errc::lookup, "token not in vocabulary");
  const auto va = m.input_vectors.row(static_cast<Eigen::Index>(*ra));
  const auto vb = m.input_vectors.row(static_cast<Eigen::Index>(*rb));
  const double d = va.norm() * vb.norm();
  return d == 0.0 ? 0.0 : va.dot(vb) / d;
}

namespace detail {

inline void append_double(std::string& out, double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  out.append(buf, res.ptr);
}

inline double parse_double(std::string_view s, std::size_t line) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw error(errc::format, "line " + std::to_string(line) + ": bad number '" + std::string(s) + "'");
  return v;
}

}  // namespace detail

// Static vectors: "|V| dim" header, then "token v1 ... vdim" per line.
inline std::string serialize_static_vectors(const EmbeddingModel& m) {
  if (m.is_contextual()) throw error(errc::format, "contextual model has no static vectors");
  std::string out = std::to_string(m.tokens.size()) + " " + std::to_string(m.dim) + "\n";
  for (std::size_t r = 0; r < m.tokens.size(); ++r) {
    out += m.tokens[r];
    for (Eigen::Index c = 0; c < m.input_vectors.cols(); ++c) {
      out.push_back(' ');
      detail::append_double(out, m.input_vectors(static_cast<Eigen::Index>(r), c));
    }
    out.push_back('\n');
  }
  return out;
}

inline EmbeddingModel parse_static_vectors(std::string_view text, EmbeddingKind kind = EmbeddingKind::external_static) {
  std::vector<std::string_view> lines;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!line.empty()) lines.push_back(line);
    pos = end + 1;
  }
  if (lines.empty()) throw error(errc::format, "static vectors: missing header");
  auto fields = [](std::string_view line) {
    std::vector<std::string_view> f;
    for (std::size_t i = 0; i < line.size();) {
      while (i < line.size() && is_space(line[i])) ++i;
      std::size_t j = i;
      while (j < line.size() && !is_space(line[j])) ++j;
      if (j > i) f.push_back(line.substr(i, j - i));
      i = j;
    }
    return f;
  };
  const auto header = fields(lines[0]);
  if (header.size() != 2) throw error(errc::format, "static vectors: header must be '|V| dim'");
  const auto n = static_cast<std::size_t>(detail::parse_double(header[0], 1));
  const auto dim = static_cast<std::size_t>(detail::parse_double(header[1], 1));
  if (dim == 0) throw error(errc::format, "static vectors: dim must be positive");
  if (lines.size() - 1 != n)
    throw error(errc::format, "static vectors: header declares " + std::to_string(n) + " rows, found " +
                                  std::to_string(lines.size() - 1));
  EmbeddingModel m;
  m.kind = kind;
  m.dim = dim;
  m.input_vectors.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
  for (std::size_t r = 0; r < n; ++r) {
    const auto f = fields(lines[r + 1]);
    if (f.size() != dim + 1)
      throw error(errc::format, "static vectors: line " + std::to_string(r + 2) + " has " +
                                    std::to_string(f.empty() ? 0 : f.size() - 1) + " values, expected " +
                                    std::to_string(dim));
    m.tokens.emplace_back(f[0]);
    for (std::size_t c = 0; c < dim; ++c)
      m.input_vectors(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
          detail::parse_double(f[c + 1], r + 2);
  }
  if (!m.input_vectors.allFinite()) throw error(errc::format, "static vectors: non-finite value");
  std::unordered_map<std::string, int> seen;
  for (const auto& t : m.tokens)
    if (seen[t]++) throw error(errc::format, "static vectors: duplicate token " + t);
  return m;
}

// Contextual sequences: one JSON object {sample_id, rows} per line.
inline std::string serialize_contextual(const EmbeddingModel& m) {
  std::string out;
  for (std::size_t i = 0; i < m.sample_ids.size(); ++i) {
    nlohmann::json rows = nlohmann::json::array();
    const auto& mat = m.sample_rows[i];
    for (Eigen::Index r = 0; r < mat.rows(); ++r) {
      nlohmann::json row = nlohmann::json::array();
      for (Eigen::Index c = 0; c < mat.cols(); ++c) row.push_back(mat(r, c));
      rows.push_back(std::move(row));
    }
    out += nlohmann::json{{"sample_id", m.sample_ids[i]}, {"rows", std::move(rows)}}.dump();
    out.push_back('\n');
  }
  return out;
}

inline EmbeddingModel parse_contextual(std::string_view text) {
  EmbeddingModel m;
  m.kind = EmbeddingKind::external_contextual;
  std::size_t pos = 0, line_no = 0;
  std::unordered_map<std::string, int> seen;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const auto line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw error(errc::format, "contextual line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!j.contains("sample_id") || !j.contains("rows") || !j["rows"].is_array())
      throw error(errc::format, "contextual line " + std::to_string(line_no) + ": needs sample_id and rows");
    const auto id = j["sample_id"].get<std::string>();
    if (seen[id]++) throw error(errc::format, "contextual: duplicate sample " + id);
    const auto& rows = j["rows"];
    if (rows.empty()) throw error(errc::format, "contextual: sample " + id + " has no rows");
    const std::size_t width = m.dim == 0 ? rows[0].size() : m.dim;
    RowMatrix mat(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(width));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (width == 0 || !rows[r].is_array() || rows[r].size() != width)
        throw error(errc::format, "contextual line " + std::to_string(line_no) + ": dimension mismatch");
      for (std::size_t c = 0; c < width; ++c)
        mat(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c].get<double>();
    }
    if (m.dim == 0) m.dim = static_cast<std::size_t>(mat.cols());
    m.sample_ids.push_back(id);
    m.sample_rows.push_back(std::move(mat));
  }
  if (m.sample_ids.empty()) throw error(errc::format, "contextual file holds no samples");
  return m;
}

inline EmbeddingModel import_external(const std::filesystem::path& path, EmbeddingKind kind) {
  const std::string text = read_file(path);
  if (kind == EmbeddingKind::external_contextual) return parse_contextual(text);
  if (kind == EmbeddingKind::external_static) return parse_static_vectors(text);
  throw error(errc::config, "import_external expects external_static or external_contextual");
}

inline void export_embedding(const std::filesystem::path& path, const EmbeddingModel& m) {
  write_file(path, m.is_contextual() ? serialize_contextual(m) : serialize_static_vectors(m));
}

inline nlohmann::json training_log_json(const EmbeddingModel& m) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& p : m.training_log)
    arr.push_back({{"step", p.step},
                   {"train_loss", p.train_loss},
                   {"validation_loss", p.validation_loss ? nlohmann::json(*p.validation_loss) : nlohmann::json()}});
  return {{"kind", to_string(m.kind)},
          {"dim", m.dim},
          {"deterministic", m.deterministic},
          {"vocab_ref", m.vocab_ref},
          {"log", std::move(arr)}};
}

}  // namespace snoop
