#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <type_traits>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "snoop/embeddings.hpp"
#include "snoop/error.hpp"
#include "snoop/ir_corpus.hpp"
#include "snoop/metrics.hpp"
#include "snoop/rng.hpp"
#include "snoop/tokenizer.hpp"

namespace snoop {

enum class OptimizerKind { sgd, adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 0.001;
  double momentum = 0.0;  // sgd only

  std::string name() const {
    auto fmt = [](double v) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%g", v);
      return std::string(buf);
    };
    if (kind == OptimizerKind::adam) return "adam-lr" + fmt(learning_rate);
    return "sgd-lr" + fmt(learning_rate) + "-mom" + fmt(momentum);
  }

  friend bool operator==(const OptimizerConfig&, const OptimizerConfig&) = default;
};

// The seven optimizer settings of the reference grid.
inline std::vector<OptimizerConfig> reference_optimizer_grid() {
  return {
      {OptimizerKind::sgd, 0.01, 0.01},    {OptimizerKind::sgd, 0.0001, 0.01},
      {OptimizerKind::sgd, 0.0001, 0.001}, {OptimizerKind::sgd, 0.0001, 0.0001},
      {OptimizerKind::adam, 0.01, 0.0},    {OptimizerKind::adam, 0.001, 0.0},
      {OptimizerKind::adam, 0.0001, 0.0},
  };
}

struct ClassifierConfig {
  std::size_t hidden_size = 128;
  std::size_t num_lstm_layers = 2;
  double dropout_rate = 0.20;
  std::size_t epochs = 50;
  OptimizerConfig optimizer;
  std::size_t batch_size = 32;
  std::size_t max_seq_len = 2048;
  bool embedding_trainable = true;
  double threshold = 0.5;
  std::uint64_t seed = 0;

  void validate() const {
    if (hidden_size == 0) throw error(errc::config, "hidden_size must be positive");
    if (num_lstm_layers == 0) throw error(errc::config, "num_lstm_layers must be positive");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw error(errc::config, "dropout_rate must lie in [0, 1)");
    if (!(optimizer.learning_rate >= 0.0)) throw error(errc::config, "learning rate must be non-negative");
    if (optimizer.momentum < 0.0) throw error(errc::config, "momentum must be non-negative");
    if (batch_size == 0) throw error(errc::config, "batch_size must be positive");
    if (max_seq_len == 0) throw error(errc::config, "max_seq_len must be positive");
  }
};

inline nlohmann::json to_json(const OptimizerConfig& o) {
  nlohmann::json j{{"kind", o.kind == OptimizerKind::adam ? "adam" : "sgd"},
                   {"learning_rate", o.learning_rate},
                   {"name", o.name()}};
  if (o.kind == OptimizerKind::sgd) j["momentum"] = o.momentum;
  return j;
}

inline OptimizerConfig optimizer_from_json(const nlohmann::json& j) {
  OptimizerConfig o;
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "adam") o.kind = OptimizerKind::adam;
  else if (kind == "sgd") o.kind = OptimizerKind::sgd;
  else throw error(errc::config, "unknown optimizer '" + kind + "'");
  o.learning_rate = j.at("learning_rate").get<double>();
  o.momentum = j.value("momentum", 0.0);
  if (!(o.learning_rate > 0.0)) throw error(errc::config, "learning rate must be positive");
  return o;
}

inline nlohmann::json to_json(const ClassifierConfig& c) {
  return {{"hidden_size", c.hidden_size},   {"num_lstm_layers", c.num_lstm_layers},
          {"dropout_rate", c.dropout_rate}, {"epochs", c.epochs},
          {"optimizer", to_json(c.optimizer)}, {"batch_size", c.batch_size},
          {"max_seq_len", c.max_seq_len},   {"embedding_trainable", c.embedding_trainable},
          {"threshold", c.threshold},       {"seed", c.seed}};
}

inline ClassifierConfig classifier_config_from_json(const nlohmann::json& j) {
  ClassifierConfig c;
  c.hidden_size = j.at("hidden_size").get<std::size_t>();
  c.num_lstm_layers = j.at("num_lstm_layers").get<std::size_t>();
  c.dropout_rate = j.at("dropout_rate").get<double>();
  c.epochs = j.at("epochs").get<std::size_t>();
  c.optimizer = optimizer_from_json(j.at("optimizer"));
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.max_seq_len = j.at("max_seq_len").get<std::size_t>();
  c.embedding_trainable = j.at("embedding_trainable").get<bool>();
  c.threshold = j.at("threshold").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

// One classifier input. Token ids for static embeddings; contextual models
// look the sample up by id. Trailing padding ids do not count as content.
struct Sample {
  std::string id;
  std::vector<TokenId> tokens;
  int label = 0;
};

inline std::vector<Sample> make_samples(const Corpus& corpus, const Vocabulary& vocab) {
  std::vector<Sample> out;
  out.reserve(corpus.size());
  for (const auto& f : corpus.functions)
    out.push_back({f.id, encode_text(f.normalized_text, vocab), f.label == Label::vulnerable ? 1 : 0});
  return out;
}

inline std::size_t content_length(const Sample& s) {
  std::size_t n = s.tokens.size();
  while (n > 0 && s.tokens[n - 1] == kPadId) --n;
  return n;
}

inline double clamp_probability(double p) { return std::clamp(p, 1e-7, 1.0 - 1e-7); }

inline double binary_cross_entropy(double p, int y) {
  const double q = clamp_probability(p);
  return -(y ? std::log(q) : std::log(1.0 - q));
}

struct LoadedModel {
  ClassifierConfig config;
  std::string vocab_hash;
  std::size_t input_dim = 0;
  bool contextual = false;
  nlohmann::json extra;
  std::vector<Eigen::MatrixXd> tensors;
};

struct BackwardOptions {
  // Test hook: negates the output-gate gradient to corrupt the backward pass.
  bool flip_output_gate_sign = false;
};

template <class Scalar>
class LstmClassifier {
 public:
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  // Tensor layout: [embedding (dim x ids), then per layer Wx (4H x in),
  // Wh (4H x H), b (4H x 1), then head weight (1 x H), head bias (1 x 1)].
  // Gate blocks within 4H rows: input, forget, candidate, output.
  static LstmClassifier build(const EmbeddingModel& embedding, const Vocabulary* vocab, const ClassifierConfig& cfg) {
    cfg.validate();
    LstmClassifier m;
    m.config_ = cfg;
    m.input_dim_ = embedding.dim;
    if (m.input_dim_ == 0) throw error(errc::construction, "embedding dimension is zero");
    const auto H = static_cast<Eigen::Index>(cfg.hidden_size);
    const auto D = static_cast<Eigen::Index>(embedding.dim);

    if (embedding.is_contextual()) {
      if (cfg.embedding_trainable)
        throw error(errc::construction, "contextual embeddings are frozen; embedding_trainable must be false");
      m.contextual_ = std::make_shared<EmbeddingModel>(embedding);
      m.tensors_.emplace_back(Mat(D, 0));
    } else {
      if (!vocab) throw error(errc::construction, "static embeddings need the corpus vocabulary");
      if (embedding.input_vectors.cols() != D)
        throw error(errc::construction, "embedding matrix width does not match dim");
      Mat table = Mat::Zero(D, static_cast<Eigen::Index>(vocab->id_count()));
      for (std::size_t i = 0; i < vocab->size(); ++i) {
        const auto row = embedding.row_of(vocab->tokens()[i]);
        if (!row)
          throw error(errc::construction, "embedding has no vector for vocabulary token '" + vocab->tokens()[i] + "'");
        table.col(static_cast<Eigen::Index>(i) + kReservedIds) =
            embedding.input_vectors.row(static_cast<Eigen::Index>(*row)).transpose().template cast<Scalar>();
      }
      m.tensors_.push_back(std::move(table));
      m.vocab_hash_ = vocab->identity_hash();
    }

    Rng rng(derive_seed(cfg.seed, "classifier-init"));
    const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.hidden_size));
    auto uniform = [&](Eigen::Index r, Eigen::Index c) {
      Mat w(r, c);
      for (Eigen::Index j = 0; j < c; ++j)
        for (Eigen::Index i = 0; i < r; ++i) w(i, j) = static_cast<Scalar>(rng.uniform(-bound, bound));
      return w;
    };
    Eigen::Index in = D;
    for (std::size_t l = 0; l < cfg.num_lstm_layers; ++l) {
      m.tensors_.push_back(uniform(4 * H, in));
      m.tensors_.push_back(uniform(4 * H, H));
      Mat b = Mat::Zero(4 * H, 1);
      b.block(H, 0, H, 1).setOnes();
      m.tensors_.push_back(std::move(b));
      in = H;
    }
    m.tensors_.push_back(uniform(1, H));
    m.tensors_.push_back(Mat::Zero(1, 1));
    m.dropout_rng_ = Rng(derive_seed(cfg.seed, "dropout"));
    return m;
  }

  const ClassifierConfig& config() const { return config_; }
  ClassifierConfig& mutable_config() { return config_; }
  std::size_t input_dim() const { return input_dim_; }
  const std::string& vocab_hash() const { return vocab_hash_; }
  bool contextual() const { return contextual_ != nullptr; }

  std::vector<Mat>& tensors() { return tensors_; }
  const std::vector<Mat>& tensors() const { return tensors_; }

  std::vector<std::string> tensor_names() const {
    std::vector<std::string> names{"embedding"};
    for (std::size_t l = 0; l < config_.num_lstm_layers; ++l) {
      names.push_back("lstm" + std::to_string(l) + ".w_input");
      names.push_back("lstm" + std::to_string(l) + ".w_hidden");
      names.push_back("lstm" + std::to_string(l) + ".bias");
    }
    names.push_back("head.weight");
    names.push_back("head.bias");
    return names;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += static_cast<std::size_t>(t.size());
    return n;
  }

  // Whether the optimizer updates tensor i.
  bool trainable(std::size_t i) const { return i != 0 || (config_.embedding_trainable && !contextual()); }

  template <class Other>
  LstmClassifier<Other> cast() const {
    LstmClassifier<Other> o;
    o.config_ = config_;
    o.input_dim_ = input_dim_;
    o.vocab_hash_ = vocab_hash_;
    o.contextual_ = contextual_;
    for (const auto& t : tensors_) o.tensors_.push_back(t.template cast<Other>());
    o.dropout_rng_ = Rng(derive_seed(config_.seed, "dropout"));
    return o;
  }

  struct LayerCache {
    Mat input;  // in x (T*B)
    Mat gates;  // 4H x (T*B), activated
    Mat cell;   // H x ((T+1)*B), block 0 is the zero initial state
    Mat hidden; // H x ((T+1)*B)
    Mat drop;   // H x (T*B) dropout scale applied to this layer's outputs (empty when off)
  };

  struct Cache {
    Eigen::Index T = 0, B = 0;
    std::vector<std::size_t> lengths;
    std::vector<TokenId> ids;  // T*B, column-major like the layer inputs
    std::vector<LayerCache> layers;
    Mat final_hidden;  // H x B after dropout
    Mat final_drop;    // H x B (empty when off)
    Vec logits;
  };

  // Forward pass over a batch. Dropout is applied only when `train` is set.
  Vec forward(std::span<const Sample* const> batch, bool train, Cache* cache = nullptr) {
    Cache local;
    Cache& c = cache ? *cache : local;
    assemble(batch, c);
    const Eigen::Index T = c.T, B = c.B;
    const auto H = static_cast<Eigen::Index>(config_.hidden_size);
    const double keep = 1.0 - config_.dropout_rate;
    const bool use_dropout = train && config_.dropout_rate > 0.0;
    c.layers.assign(config_.num_lstm_layers, LayerCache{});

    gather_inputs(batch, c, c.layers[0].input);
    for (std::size_t l = 0; l < config_.num_lstm_layers; ++l) {
      LayerCache& L = c.layers[l];
      const Mat& Wx = tensors_[1 + 3 * l];
      const Mat& Wh = tensors_[2 + 3 * l];
      const Mat& bias = tensors_[3 + 3 * l];
      L.gates.resize(4 * H, T * B);
      L.cell = Mat::Zero(H, (T + 1) * B);
      L.hidden = Mat::Zero(H, (T + 1) * B);
      Mat z(4 * H, B);
      for (Eigen::Index t = 0; t < T; ++t) {
        z.noalias() = Wx * L.input.middleCols(t * B, B);
        z.noalias() += Wh * L.hidden.middleCols(t * B, B);
        z.colwise() += bias.col(0);
        auto g = L.gates.middleCols(t * B, B);
        g.topRows(2 * H) = z.topRows(2 * H).unaryExpr([](Scalar v) { return logistic(v); });
        g.middleRows(2 * H, H) = z.middleRows(2 * H, H).array().tanh().matrix();
        g.bottomRows(H) = z.bottomRows(H).unaryExpr([](Scalar v) { return logistic(v); });
        auto c_prev = L.cell.middleCols(t * B, B);
        auto h_prev = L.hidden.middleCols(t * B, B);
        auto c_next = L.cell.middleCols((t + 1) * B, B);
        auto h_next = L.hidden.middleCols((t + 1) * B, B);
        c_next = g.topRows(H).cwiseProduct(g.middleRows(2 * H, H)) + g.middleRows(H, H).cwiseProduct(c_prev);
        h_next = g.bottomRows(H).cwiseProduct(c_next.array().tanh().matrix());
        for (Eigen::Index b = 0; b < B; ++b) {
          if (static_cast<std::size_t>(t) < c.lengths[static_cast<std::size_t>(b)]) continue;
          c_next.col(b) = c_prev.col(b);
          h_next.col(b) = h_prev.col(b);
        }
      }
      L.drop.resize(0, 0);
      if (l + 1 < config_.num_lstm_layers) {
        auto& next = c.layers[l + 1].input;
        next = L.hidden.rightCols(T * B);
        if (use_dropout) {
          L.drop = dropout_mask(H, T * B, keep);
          next = next.cwiseProduct(L.drop);
        }
      }
    }
    const LayerCache& top = c.layers.back();
    c.final_hidden = top.hidden.rightCols(B);
    if (use_dropout) {
      c.final_drop = dropout_mask(H, B, keep);
      c.final_hidden = c.final_hidden.cwiseProduct(c.final_drop);
    } else {
      c.final_drop.resize(0, 0);
    }
    const Mat& head_w = tensors_[tensors_.size() - 2];
    const Scalar head_b = tensors_.back()(0, 0);
    c.logits = (head_w * c.final_hidden).transpose();
    c.logits.array() += head_b;
    return c.logits;
  }

  // Mean binary cross-entropy of the batch and its gradient w.r.t. the logits.
  static double loss_and_grad(const Vec& logits, std::span<const Sample* const> batch, Vec* dlogits) {
    const auto B = logits.size();
    double loss = 0.0;
    if (dlogits) dlogits->resize(B);
    for (Eigen::Index b = 0; b < B; ++b) {
      const double p = sigmoid(static_cast<double>(logits(b)));
      const int y = batch[static_cast<std::size_t>(b)]->label;
      loss += binary_cross_entropy(p, y);
      if (dlogits) {
        const bool clamped = p < 1e-7 || p > 1.0 - 1e-7;
        (*dlogits)(b) = clamped ? Scalar(0) : static_cast<Scalar>((p - y) / static_cast<double>(B));
      }
    }
    return loss / static_cast<double>(B);
  }

  // Backpropagation through time. `grads` receives one tensor per parameter.
  void backward(const Cache& c, const Vec& dlogits, std::vector<Mat>& grads, const BackwardOptions& opts = {}) const {
    const Eigen::Index T = c.T, B = c.B;
    const auto H = static_cast<Eigen::Index>(config_.hidden_size);
    grads.resize(tensors_.size());
    for (std::size_t i = 0; i < tensors_.size(); ++i) grads[i] = Mat::Zero(tensors_[i].rows(), tensors_[i].cols());

    const Mat& head_w = tensors_[tensors_.size() - 2];
    grads[tensors_.size() - 2] = dlogits.transpose() * c.final_hidden.transpose();
    grads.back()(0, 0) = dlogits.sum();
    Mat d_final = head_w.transpose() * dlogits.transpose();  // H x B
    if (c.final_drop.size()) d_final = d_final.cwiseProduct(c.final_drop);

    // Gradient w.r.t. each layer's hidden outputs over all steps.
    Mat d_out = Mat::Zero(H, T * B);
    d_out.middleCols((T - 1) * B, B) = d_final;

    for (std::size_t li = config_.num_lstm_layers; li-- > 0;) {
      const LayerCache& L = c.layers[li];
      const Mat& Wx = tensors_[1 + 3 * li];
      const Mat& Wh = tensors_[2 + 3 * li];
      Mat dz_all(4 * H, T * B);
      Mat dh = Mat::Zero(H, B), dc = Mat::Zero(H, B);
      Mat dh_prev(H, B), dc_prev(H, B);
      Mat dz(4 * H, B);
      for (Eigen::Index t = T; t-- > 0;) {
        dh += d_out.middleCols(t * B, B);
        const auto g = L.gates.middleCols(t * B, B);
        const auto gi = g.topRows(H), gf = g.middleRows(H, H), gg = g.middleRows(2 * H, H), go = g.bottomRows(H);
        const auto c_prev = L.cell.middleCols(t * B, B);
        const Mat tc = L.cell.middleCols((t + 1) * B, B).array().tanh().matrix();
        const Mat dct = dc + dh.cwiseProduct(go).cwiseProduct((Scalar(1) - tc.array().square()).matrix());
        dz.middleRows(3 * H, H) = dh.cwiseProduct(tc).cwiseProduct(go.cwiseProduct((Scalar(1) - go.array()).matrix()));
        if (opts.flip_output_gate_sign) dz.middleRows(3 * H, H) = -dz.middleRows(3 * H, H);
        dz.topRows(H) = dct.cwiseProduct(gg).cwiseProduct(gi.cwiseProduct((Scalar(1) - gi.array()).matrix()));
        dz.middleRows(H, H) = dct.cwiseProduct(c_prev).cwiseProduct(gf.cwiseProduct((Scalar(1) - gf.array()).matrix()));
        dz.middleRows(2 * H, H) = dct.cwiseProduct(gi).cwiseProduct((Scalar(1) - gg.array().square()).matrix());
        dc_prev = dct.cwiseProduct(gf);
        for (Eigen::Index b = 0; b < B; ++b) {
          if (static_cast<std::size_t>(t) < c.lengths[static_cast<std::size_t>(b)]) continue;
          dz.col(b).setZero();
          dc_prev.col(b) = dc.col(b);
        }
        dh_prev.noalias() = Wh.transpose() * dz;
        for (Eigen::Index b = 0; b < B; ++b)
          if (static_cast<std::size_t>(t) >= c.lengths[static_cast<std::size_t>(b)]) dh_prev.col(b) += dh.col(b);
        dz_all.middleCols(t * B, B) = dz;
        dh.swap(dh_prev);
        dc.swap(dc_prev);
      }
      grads[1 + 3 * li].noalias() = dz_all * L.input.transpose();
      grads[2 + 3 * li].noalias() = dz_all * L.hidden.leftCols(T * B).transpose();
      grads[3 + 3 * li] = dz_all.rowwise().sum();

      Mat d_in = Wx.transpose() * dz_all;
      if (li > 0) {
        const LayerCache& below = c.layers[li - 1];
        d_out = below.drop.size() ? Mat(d_in.cwiseProduct(below.drop)) : d_in;
      } else if (!contextual()) {
        Mat& d_emb = grads[0];
        for (Eigen::Index col = 0; col < T * B; ++col) {
          const TokenId id = c.ids[static_cast<std::size_t>(col)];
          if (id == kPadId) continue;
          d_emb.col(id) += d_in.col(col);
        }
      }
    }
  }

  // Probabilities for every sample, in order, processed in batches.
  std::vector<double> predict(std::span<const Sample> samples) {
    std::vector<double> out;
    out.reserve(samples.size());
    std::vector<const Sample*> batch;
    for (std::size_t start = 0; start < samples.size(); start += config_.batch_size) {
      batch.clear();
      for (std::size_t i = start; i < std::min(samples.size(), start + config_.batch_size); ++i)
        batch.push_back(&samples[i]);
      const Vec logits = forward(batch, false);
      for (Eigen::Index b = 0; b < logits.size(); ++b) out.push_back(sigmoid(static_cast<double>(logits(b))));
    }
    return out;
  }

  double logit(const Sample& s) {
    const Sample* p = &s;
    return static_cast<double>(forward(std::span<const Sample* const>(&p, 1), false)(0));
  }

  // Rebuilds a classifier from a loaded container. Contextual models need the
  // same external embedding they were trained with.
  static LstmClassifier restore(const LoadedModel& loaded, std::shared_ptr<const EmbeddingModel> contextual = nullptr) {
    if (loaded.contextual && !contextual)
      throw error(errc::construction, "model was trained on contextual embeddings; supply them");
    LstmClassifier m;
    m.config_ = loaded.config;
    m.input_dim_ = loaded.input_dim;
    m.vocab_hash_ = loaded.vocab_hash;
    if (loaded.contextual) m.contextual_ = std::move(contextual);
    for (const auto& t : loaded.tensors) m.tensors_.push_back(t.template cast<Scalar>());
    m.dropout_rng_ = Rng(derive_seed(loaded.config.seed, "dropout"));
    return m;
  }

  template <class> friend class LstmClassifier;

 private:
  static Scalar logistic(Scalar v) {
    if (v >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-v));
    const Scalar e = std::exp(v);
    return e / (Scalar(1) + e);
  }

  Mat dropout_mask(Eigen::Index rows, Eigen::Index cols, double keep) {
    Mat m(rows, cols);
    const auto scale = static_cast<Scalar>(1.0 / keep);
    for (Eigen::Index j = 0; j < cols; ++j)
      for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = dropout_rng_.uniform() < keep ? scale : Scalar(0);
    return m;
  }

  void assemble(std::span<const Sample* const> batch, Cache& c) const {
    if (batch.empty()) throw error(errc::empty_input, "empty batch");
    c.B = static_cast<Eigen::Index>(batch.size());
    c.lengths.clear();
    std::size_t longest = 0;
    for (const Sample* s : batch) {
      const std::size_t n = contextual() ? static_cast<std::size_t>(contextual_->sequence_for(s->id).rows())
                                         : content_length(*s);
      if (n == 0) throw error(errc::construction, "sample " + s->id + " has zero length");
      if (n > config_.max_seq_len)
        throw error(errc::construction, "sample " + s->id + " has " + std::to_string(n) +
                                            " tokens, more than max_seq_len " + std::to_string(config_.max_seq_len));
      if (contextual() && static_cast<std::size_t>(contextual_->sequence_for(s->id).cols()) != input_dim_)
        throw error(errc::construction, "contextual sample " + s->id + " has the wrong dimension");
      c.lengths.push_back(n);
      longest = std::max(longest, n);
    }
    c.T = static_cast<Eigen::Index>(longest);
  }

  void gather_inputs(std::span<const Sample* const> batch, Cache& c, Mat& x) const {
    const Eigen::Index T = c.T, B = c.B;
    x = Mat::Zero(static_cast<Eigen::Index>(input_dim_), T * B);
    c.ids.assign(static_cast<std::size_t>(T * B), kPadId);
    const Mat& table = tensors_[0];
    for (Eigen::Index b = 0; b < B; ++b) {
      const Sample& s = *batch[static_cast<std::size_t>(b)];
      const auto len = static_cast<Eigen::Index>(c.lengths[static_cast<std::size_t>(b)]);
      if (contextual()) {
        const auto& rows = contextual_->sequence_for(s.id);
        for (Eigen::Index t = 0; t < len; ++t) x.col(t * B + b) = rows.row(t).transpose().template cast<Scalar>();
      } else {
        for (Eigen::Index t = 0; t < len; ++t) {
          TokenId id = s.tokens[static_cast<std::size_t>(t)];
          if (id < 0 || id >= table.cols()) id = kUnknownId;
          c.ids[static_cast<std::size_t>(t * B + b)] = id;
          x.col(t * B + b) = table.col(id);
        }
      }
    }
  }

  ClassifierConfig config_;
  std::size_t input_dim_ = 0;
  std::string vocab_hash_;
  std::shared_ptr<const EmbeddingModel> contextual_;
  std::vector<Mat> tensors_;
  Rng dropout_rng_{0};
};

// Optimizer state lives alongside the model's tensors.
template <class Scalar>
class Optimizer {
 public:
  using Mat = typename LstmClassifier<Scalar>::Mat;

  explicit Optimizer(const OptimizerConfig& cfg) : cfg_(cfg) {}

  void step(LstmClassifier<Scalar>& model, const std::vector<Mat>& grads) {
    auto& params = model.tensors();
    if (first_.empty()) {
      for (const auto& p : params) {
        first_.push_back(Mat::Zero(p.rows(), p.cols()));
        if (cfg_.kind == OptimizerKind::adam) second_.push_back(Mat::Zero(p.rows(), p.cols()));
      }
    }
    ++t_;
    const auto lr = static_cast<Scalar>(cfg_.learning_rate);
    if (cfg_.kind == OptimizerKind::sgd) {
      const auto mu = static_cast<Scalar>(cfg_.momentum);
      for (std::size_t i = 0; i < params.size(); ++i) {
        if (!model.trainable(i)) continue;
        first_[i] = mu * first_[i] + grads[i];
        params[i] -= lr * first_[i];
      }
      return;
    }
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (!model.trainable(i)) continue;
      first_[i] = Scalar(beta1) * first_[i] + Scalar(1 - beta1) * grads[i];
      second_[i] = Scalar(beta2) * second_[i] + Scalar(1 - beta2) * grads[i].cwiseAbs2();
      params[i].array() -= lr * (first_[i].array() / Scalar(c1)) /
                           ((second_[i].array() / Scalar(c2)).sqrt() + Scalar(eps));
    }
  }

 private:
  OptimizerConfig cfg_;
  std::vector<Mat> first_, second_;
  std::uint64_t t_ = 0;
};

template <class Scalar>
MetricsRecord evaluate(LstmClassifier<Scalar>& model, std::span<const Sample> dataset, int epoch = 0) {
  if (dataset.empty()) throw error(errc::empty_input, "cannot evaluate an empty dataset");
  const auto probs = model.predict(dataset);
  std::vector<int> labels;
  labels.reserve(dataset.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    labels.push_back(dataset[i].label);
    loss += binary_cross_entropy(probs[i], dataset[i].label);
  }
  return score_predictions(probs, labels, loss / static_cast<double>(dataset.size()), epoch,
                           model.config().threshold);
}

template <class Scalar>
struct TrainResult {
  std::vector<MetricsRecord> history;  // one validation record per epoch
  std::size_t best = 0;                // index into history
  std::vector<typename LstmClassifier<Scalar>::Mat> best_weights;
};

using EpochCallback = std::function<void(const MetricsRecord&)>;

template <class Scalar>
TrainResult<Scalar> train(LstmClassifier<Scalar>& model, std::span<const Sample> train_set,
                          std::span<const Sample> val_set, const EpochCallback& on_epoch = {}) {
  const ClassifierConfig& cfg = model.config();
  if (train_set.empty()) throw error(errc::empty_input, "empty training set");
  if (val_set.empty()) throw error(errc::empty_input, "empty validation set");
  {
    std::unordered_set<std::string> ids;
    for (const auto& s : train_set) ids.insert(s.id);
    for (const auto& s : val_set)
      if (ids.count(s.id)) throw error(errc::manifest_invalid, "sample " + s.id + " is in both train and validation");
  }
  Optimizer<Scalar> opt(cfg.optimizer);
  Rng shuffle_rng(derive_seed(cfg.seed, "shuffle"));
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  TrainResult<Scalar> result;
  typename LstmClassifier<Scalar>::Cache cache;
  typename LstmClassifier<Scalar>::Vec dlogits;
  std::vector<typename LstmClassifier<Scalar>::Mat> grads;
  std::vector<const Sample*> batch;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    std::size_t batch_no = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_no) {
      batch.clear();
      for (std::size_t i = start; i < std::min(order.size(), start + cfg.batch_size); ++i)
        batch.push_back(&train_set[order[i]]);
      const auto logits = model.forward(batch, true, &cache);
      const double loss = LstmClassifier<Scalar>::loss_and_grad(logits, batch, &dlogits);
      if (!std::isfinite(loss) || !logits.allFinite())
        throw error(errc::divergence, "non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                          std::to_string(batch_no + 1));
      model.backward(cache, dlogits, grads);
      opt.step(model, grads);
    }
    MetricsRecord rec = evaluate(model, val_set, static_cast<int>(epoch));
    if (!std::isfinite(rec.loss))
      throw error(errc::divergence, "non-finite validation loss at epoch " + std::to_string(epoch));
    result.history.push_back(rec);
    if (result.history.size() == 1 || better_record(rec, result.history[result.best])) {
      result.best = result.history.size() - 1;
      result.best_weights = model.tensors();
    }
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

struct GradCheckOptions {
  double step = 1e-5;
  // Relative error denominator floor, so that gradients that are zero up to
  // rounding do not produce spurious failures.
  double floor = 1e-6;
  BackwardOptions backward;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_tensor;
  std::size_t checked = 0;
};

// Compares analytic gradients of the batch loss against central finite
// differences for every parameter. Dropout is disabled throughout.
inline GradCheckResult gradient_check(LstmClassifier<double>& model, std::span<const Sample> samples,
                                      const GradCheckOptions& opts = {}) {
  std::vector<const Sample*> batch;
  for (const auto& s : samples) batch.push_back(&s);
  LstmClassifier<double>::Cache cache;
  LstmClassifier<double>::Vec dlogits;
  std::vector<LstmClassifier<double>::Mat> grads;
  const auto logits = model.forward(batch, false, &cache);
  LstmClassifier<double>::loss_and_grad(logits, batch, &dlogits);
  model.backward(cache, dlogits, grads, opts.backward);

  auto loss_at = [&]() { return LstmClassifier<double>::loss_and_grad(model.forward(batch, false), batch, nullptr); };
  GradCheckResult res;
  const auto names = model.tensor_names();
  for (std::size_t ti = 0; ti < model.tensors().size(); ++ti) {
    auto& w = model.tensors()[ti];
    for (Eigen::Index k = 0; k < w.size(); ++k) {
      const double orig = w.data()[k];
      w.data()[k] = orig + opts.step;
      const double up = loss_at();
      w.data()[k] = orig - opts.step;
      const double down = loss_at();
      w.data()[k] = orig;
      const double numeric = (up - down) / (2 * opts.step);
      const double analytic = grads[ti].data()[k];
      const double denom = std::max({std::abs(numeric), std::abs(analytic), opts.floor});
      const double rel = std::abs(numeric - analytic) / denom;
      ++res.checked;
      if (rel > res.max_relative_error) {
        res.max_relative_error = rel;
        res.worst_tensor = names[ti];
      }
    }
  }
  return res;
}

// Trained-model container: magic, format version, JSON header (config echo,
// vocabulary hash, tensor shapes), then little-endian float64 tensor data.
inline constexpr char kModelMagic[8] = {'S', 'N', 'P', 'L', 'S', 'T', 'M', '\0'};
inline constexpr std::uint32_t kModelFormatVersion = 1;

template <class Scalar>
std::string serialize_model(const LstmClassifier<Scalar>& model, const nlohmann::json& extra = {}) {
  nlohmann::json header;
  header["config"] = to_json(model.config());
  header["vocab_hash"] = model.vocab_hash();
  header["input_dim"] = model.input_dim();
  header["contextual"] = model.contextual();
  header["extra"] = extra;
  header["tensors"] = nlohmann::json::array();
  const auto names = model.tensor_names();
  for (std::size_t i = 0; i < model.tensors().size(); ++i)
    header["tensors"].push_back({{"name", names[i]}, {"rows", model.tensors()[i].rows()}, {"cols", model.tensors()[i].cols()}});
  const std::string h = header.dump();
  std::string out(kModelMagic, sizeof kModelMagic);
  auto put_u32 = [&](std::uint32_t v) { for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff)); };
  auto put_u64 = [&](std::uint64_t v) { for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff)); };
  put_u32(kModelFormatVersion);
  put_u64(h.size());
  out += h;
  for (const auto& t : model.tensors())
    for (Eigen::Index k = 0; k < t.size(); ++k) {
      std::uint64_t bits;
      const double v = static_cast<double>(t.data()[k]);
      std::memcpy(&bits, &v, sizeof bits);
      put_u64(bits);
    }
  return out;
}


inline LoadedModel parse_model(std::string_view data) {
  std::size_t pos = 0;
  auto need = [&](std::size_t n) {
    if (data.size() - pos < n) throw error(errc::format, "model file truncated");
  };
  auto get_u = [&](int bytes) {
    need(static_cast<std::size_t>(bytes));
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data[pos + i])) << (8 * i);
    pos += static_cast<std::size_t>(bytes);
    return v;
  };
  need(sizeof kModelMagic);
  if (std::memcmp(data.data(), kModelMagic, sizeof kModelMagic) != 0) throw error(errc::format, "not a model file");
  pos += sizeof kModelMagic;
  if (get_u(4) != kModelFormatVersion) throw error(errc::format, "unsupported model format version");
  const auto hlen = static_cast<std::size_t>(get_u(8));
  need(hlen);
  const auto header = nlohmann::json::parse(data.substr(pos, hlen));
  pos += hlen;
  LoadedModel m;
  m.config = classifier_config_from_json(header.at("config"));
  m.vocab_hash = header.at("vocab_hash").get<std::string>();
  m.input_dim = header.at("input_dim").get<std::size_t>();
  m.contextual = header.at("contextual").get<bool>();
  m.extra = header.value("extra", nlohmann::json{});
  const auto H = static_cast<Eigen::Index>(m.config.hidden_size);
  const auto& shapes = header.at("tensors");
  if (shapes.size() != 3 * m.config.num_lstm_layers + 3)
    throw error(errc::format, "tensor count does not match num_lstm_layers");
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const auto rows = shapes[i].at("rows").get<Eigen::Index>(), cols = shapes[i].at("cols").get<Eigen::Index>();
    Eigen::Index want_r = -1, want_c = -1;
    if (i == 0) {
      want_r = static_cast<Eigen::Index>(m.input_dim);
      want_c = cols;
    } else if (i < shapes.size() - 2) {
      const std::size_t l = (i - 1) / 3, which = (i - 1) % 3;
      const Eigen::Index in = l == 0 ? static_cast<Eigen::Index>(m.input_dim) : H;
      want_r = 4 * H;
      want_c = which == 0 ? in : which == 1 ? H : 1;
    } else if (i == shapes.size() - 2) {
      want_r = 1;
      want_c = H;
    } else {
      want_r = 1;
      want_c = 1;
    }
    if (rows != want_r || cols != want_c)
      throw error(errc::format, "tensor " + shapes[i].value("name", std::string("?")) + " has shape " +
                                    std::to_string(rows) + "x" + std::to_string(cols) + ", config implies " +
                                    std::to_string(want_r) + "x" + std::to_string(want_c));
    Eigen::MatrixXd t(rows, cols);
    for (Eigen::Index k = 0; k < t.size(); ++k) {
      const std::uint64_t bits = get_u(8);
      std::memcpy(t.data() + k, &bits, sizeof bits);
    }
    m.tensors.push_back(std::move(t));
  }
  if (pos != data.size()) throw error(errc::format, "trailing bytes after model tensors");
  return m;
}

}  // namespace snoop
