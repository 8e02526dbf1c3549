#pragma once

#include <algorithm>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "emoji/data_ingest.hpp"
#include "emoji/errors.hpp"

namespace emoji {

/// counts(g, p): records with gold class g predicted as p.
class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::size_t num_classes) : c_(num_classes), counts_(num_classes * num_classes, 0) {}

  std::size_t num_classes() const { return c_; }
  std::size_t operator()(std::size_t gold, std::size_t pred) const { return counts_.at(gold * c_ + pred); }
  void add(std::size_t gold, std::size_t pred) { ++counts_.at(gold * c_ + pred); }

  std::size_t total() const {
    std::size_t t = 0;
    for (auto v : counts_) t += v;
    return t;
  }
  std::size_t trace() const {
    std::size_t t = 0;
    for (std::size_t i = 0; i < c_; ++i) t += (*this)(i, i);
    return t;
  }
  std::size_t row_sum(std::size_t g) const {
    std::size_t t = 0;
    for (std::size_t p = 0; p < c_; ++p) t += (*this)(g, p);
    return t;
  }
  std::size_t col_sum(std::size_t p) const {
    std::size_t t = 0;
    for (std::size_t g = 0; g < c_; ++g) t += (*this)(g, p);
    return t;
  }

  bool operator==(const ConfusionMatrix&) const = default;

  nlohmann::json to_json() const {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t g = 0; g < c_; ++g) {
      nlohmann::json r = nlohmann::json::array();
      for (std::size_t p = 0; p < c_; ++p) r.push_back((*this)(g, p));
      rows.push_back(r);
    }
    return rows;
  }

 private:
  std::size_t c_ = 0;
  std::vector<std::size_t> counts_;
};

inline ConfusionMatrix confusion(std::span<const std::size_t> preds, std::span<const std::size_t> golds,
                                 std::size_t num_classes) {
  if (preds.size() != golds.size())
    throw DataError("confusion: " + std::to_string(preds.size()) + " predictions for " + std::to_string(golds.size()) +
                    " gold labels");
  ConfusionMatrix m(num_classes);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] >= num_classes || golds[i] >= num_classes)
      throw DataError("confusion: label outside 0.." + std::to_string(num_classes - 1));
    m.add(golds[i], preds[i]);
  }
  return m;
}

/// Harmonic mean 2PR/(P+R), defined as 0 when P+R = 0.
inline double f1_from_pr(double precision, double recall) {
  const double s = precision + recall;
  return s > 0.0 ? 2.0 * precision * recall / s : 0.0;
}

inline double safe_ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

struct ClassMetrics {
  double precision = 0, recall = 0, f1 = 0;
  std::size_t support = 0;
};

struct AveragedMetrics {
  double precision = 0, recall = 0, f1 = 0;
  nlohmann::json to_json() const { return {{"precision", precision}, {"recall", recall}, {"f1", f1}}; }
};

struct MetricsReport {
  ConfusionMatrix matrix;
  std::vector<ClassMetrics> per_class;
  AveragedMetrics macro;  // unweighted mean of per-class values
  AveragedMetrics micro;  // from globally summed TP/FP/FN
  double accuracy = 0;
  std::size_t total = 0;

  /// F1 of the macro-averaged precision and recall, the other common way a
  /// single "F1" is quoted next to averaged P and R.
  double f1_of_macro_pr() const { return f1_from_pr(macro.precision, macro.recall); }

  nlohmann::json to_json(const LabelMapping* mapping = nullptr) const {
    nlohmann::json classes = nlohmann::json::array();
    for (std::size_t c = 0; c < per_class.size(); ++c) {
      const auto& m = per_class[c];
      classes.push_back({{"label", c},
                         {"emoji", mapping && c < mapping->size() ? mapping->emoji(c) : ""},
                         {"precision", m.precision},
                         {"recall", m.recall},
                         {"f1", m.f1},
                         {"support", m.support}});
    }
    return {{"accuracy", accuracy},       {"macro", macro.to_json()},
            {"micro", micro.to_json()},   {"f1_of_macro_pr", f1_of_macro_pr()},
            {"per_class", classes},       {"total", total},
            {"confusion", matrix.to_json()}};
  }
};

inline MetricsReport report(const ConfusionMatrix& m) {
  const std::size_t C = m.num_classes();
  MetricsReport r;
  r.matrix = m;
  r.total = m.total();
  if (r.total == 0) throw DataError("metrics report over an empty confusion matrix");
  std::size_t tp_sum = 0, fp_sum = 0, fn_sum = 0;
  for (std::size_t c = 0; c < C; ++c) {
    const std::size_t tp = m(c, c), col = m.col_sum(c), row = m.row_sum(c);
    ClassMetrics cm;
    cm.precision = safe_ratio(tp, col);
    cm.recall = safe_ratio(tp, row);
    cm.f1 = f1_from_pr(cm.precision, cm.recall);
    cm.support = row;
    r.per_class.push_back(cm);
    r.macro.precision += cm.precision / static_cast<double>(C);
    r.macro.recall += cm.recall / static_cast<double>(C);
    r.macro.f1 += cm.f1 / static_cast<double>(C);
    tp_sum += tp;
    fp_sum += col - tp;
    fn_sum += row - tp;
  }
  r.micro.precision = safe_ratio(tp_sum, tp_sum + fp_sum);
  r.micro.recall = safe_ratio(tp_sum, tp_sum + fn_sum);
  r.micro.f1 = f1_from_pr(r.micro.precision, r.micro.recall);
  r.accuracy = safe_ratio(m.trace(), r.total);
  return r;
}

inline MetricsReport report(std::span<const std::size_t> preds, std::span<const std::size_t> golds,
                            std::size_t num_classes) {
  return report(confusion(preds, golds, num_classes));
}

/// Most frequent label (smallest index on ties).
inline std::size_t majority_class(std::span<const std::size_t> labels, std::size_t num_classes) {
  if (labels.empty()) throw DataError("majority class of an empty label set");
  std::vector<std::size_t> counts(num_classes, 0);
  for (auto l : labels) ++counts.at(l);
  return static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

}  // namespace emoji
