#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "snoop/error.hpp"

namespace snoop {

struct Confusion {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::uint64_t tn = 0;

  std::uint64_t total() const { return tp + fp + fn + tn; }

  void add(bool predicted, bool actual) {
    if (predicted) (actual ? tp : fp)++;
    else (actual ? fn : tn)++;
  }

  friend bool operator==(const Confusion&, const Confusion&) = default;
};

// Zero denominators yield 0, including F1 when precision + recall = 0.
inline double accuracy(const Confusion& c) {
  return c.total() == 0 ? 0.0 : static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
}
inline double precision(const Confusion& c) {
  return c.tp + c.fp == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
}
inline double recall(const Confusion& c) {
  return c.tp + c.fn == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
}
inline double f1_score(const Confusion& c) {
  const double p = precision(c), r = recall(c);
  return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}

struct MetricsRecord {
  int epoch = 0;
  double loss = 0.0;
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  Confusion confusion;

  friend bool operator==(const MetricsRecord&, const MetricsRecord&) = default;
};

inline MetricsRecord make_record(int epoch, double loss, const Confusion& c) {
  return {epoch, loss, accuracy(c), precision(c), recall(c), f1_score(c), c};
}

// Metrics from probabilities; predicted positive iff p >= threshold.
inline MetricsRecord score_predictions(std::span<const double> probabilities, std::span<const int> labels,
                                       double loss, int epoch = 0, double threshold = 0.5) {
  if (probabilities.size() != labels.size())
    throw error(errc::config, "prediction/label length mismatch");
  if (probabilities.empty()) throw error(errc::empty_input, "cannot score an empty dataset");
  Confusion c;
  for (std::size_t i = 0; i < labels.size(); ++i) c.add(probabilities[i] >= threshold, labels[i] != 0);
  return make_record(epoch, loss, c);
}

// Best epoch: highest F1, then lowest loss, then earliest epoch.
inline bool better_record(const MetricsRecord& a, const MetricsRecord& b) {
  if (a.f1 != b.f1) return a.f1 > b.f1;
  if (a.loss != b.loss) return a.loss < b.loss;
  return a.epoch < b.epoch;
}

inline std::optional<std::size_t> best_index(std::span<const MetricsRecord> history) {
  if (history.empty()) return std::nullopt;
  std::size_t best = 0;
  for (std::size_t i = 1; i < history.size(); ++i)
    if (better_record(history[i], history[best])) best = i;
  return best;
}

inline nlohmann::json to_json(const MetricsRecord& r) {
  return {{"epoch", r.epoch},
          {"loss", r.loss},
          {"accuracy", r.accuracy},
          {"precision", r.precision},
          {"recall", r.recall},
          {"f1", r.f1},
          {"confusion", {{"tp", r.confusion.tp}, {"fp", r.confusion.fp}, {"fn", r.confusion.fn}, {"tn", r.confusion.tn}}}};
}

inline MetricsRecord record_from_json(const nlohmann::json& j) {
  MetricsRecord r;
  r.epoch = j.at("epoch").get<int>();
  r.loss = j.at("loss").get<double>();
  r.accuracy = j.at("accuracy").get<double>();
  r.precision = j.at("precision").get<double>();
  r.recall = j.at("recall").get<double>();
  r.f1 = j.at("f1").get<double>();
  const auto& c = j.at("confusion");
  r.confusion = {c.at("tp").get<std::uint64_t>(), c.at("fp").get<std::uint64_t>(),
                 c.at("fn").get<std::uint64_t>(), c.at("tn").get<std::uint64_t>()};
  return r;
}

}  // namespace snoop
