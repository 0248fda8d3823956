#pragma once

#include <string>

#include "snoop/classifier.hpp"
#include "snoop/ir_corpus.hpp"

namespace snoop::testing {

inline IrFunction stub_function(const std::string& key, Label label = Label::unlabeled,
                                std::optional<std::string> cwe = std::nullopt) {
  IrFunction f;
  f.normalized_text = "define void @func_1() {\n  ; " + key + "\n}";
  f.id = sha256_hex(key);
  f.source_name = key;
  f.token_count = 7;
  f.label = label;
  f.cwe = std::move(cwe);
  return f;
}

// clean + vulnerable CWE-121 samples followed by an unlabeled pool.
inline Corpus stub_corpus(std::size_t clean, std::size_t vulnerable, std::size_t pool) {
  Corpus c;
  for (std::size_t i = 0; i < clean; ++i)
    c.functions.push_back(stub_function("clean" + std::to_string(i), Label::clean, "CWE-121"));
  for (std::size_t i = 0; i < vulnerable; ++i)
    c.functions.push_back(stub_function("vuln" + std::to_string(i), Label::vulnerable, "CWE-121"));
  for (std::size_t i = 0; i < pool; ++i) c.functions.push_back(stub_function("pool" + std::to_string(i)));
  return c;
}

// Random static embedding over the vocabulary tokens.
inline EmbeddingModel random_embedding(const Vocabulary& vocab, std::size_t dim, std::uint64_t seed) {
  EmbeddingModel e;
  e.kind = EmbeddingKind::external_static;
  e.dim = dim;
  e.tokens = vocab.tokens();
  e.input_vectors.resize(static_cast<Eigen::Index>(vocab.size()), static_cast<Eigen::Index>(dim));
  Rng rng(seed);
  for (Eigen::Index i = 0; i < e.input_vectors.size(); ++i) e.input_vectors.data()[i] = rng.uniform(-1.0, 1.0);
  return e;
}

// Toy task: label 1 iff the sequence contains "hot". 16 samples, balanced.
inline std::vector<Sample> toy_samples(const Vocabulary& vocab, std::uint64_t seed, std::size_t n = 16) {
  Rng rng(seed);
  std::vector<Sample> out;
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % 2);
    std::vector<std::string> toks;
    const std::size_t len = 4 + rng.below(6);
    for (std::size_t t = 0; t < len; ++t) toks.push_back("w" + std::to_string(rng.below(6)));
    if (label) toks[rng.below(len)] = "hot";
    out.push_back({"toy" + std::to_string(seed) + "_" + std::to_string(i), encode(toks, vocab), label});
  }
  return out;
}

inline Vocabulary toy_vocab() {
  return build_vocab_from_texts(std::vector<std::string>{"w0 w1 w2 w3 w4 w5 hot"});
}

// Trains on `samples` and reports the first epoch whose train accuracy is 1,
// or 0 when it never gets there.
template <class Scalar>
int epochs_to_fit(LstmClassifier<Scalar>& model, std::span<const Sample> samples, int max_epochs) {
  Optimizer<Scalar> opt(model.config().optimizer);
  typename LstmClassifier<Scalar>::Cache cache;
  typename LstmClassifier<Scalar>::Vec dl;
  std::vector<typename LstmClassifier<Scalar>::Mat> grads;
  std::vector<const Sample*> batch;
  for (const auto& s : samples) batch.push_back(&s);
  for (int e = 1; e <= max_epochs; ++e) {
    const auto logits = model.forward(batch, true, &cache);
    LstmClassifier<Scalar>::loss_and_grad(logits, batch, &dl);
    model.backward(cache, dl, grads);
    opt.step(model, grads);
    if (evaluate(model, samples, e).accuracy == 1.0) return e;
  }
  return 0;
}

}  // namespace snoop::testing
