#pragma once

#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "emoji/data_ingest.hpp"
#include "emoji/errors.hpp"
#include "emoji/hashing.hpp"
#include "emoji/metrics.hpp"
#include "emoji/numeric/adam.hpp"
#include "emoji/numeric/ops.hpp"
#include "emoji/numeric/rng.hpp"
#include "emoji/tokenizer.hpp"
#include "emoji/utf8.hpp"

namespace emoji {

/// Bag-of-words rows over the non-special vocabulary: column t holds token
/// id t + 5.
struct BowFeatures {
  numeric::CsrMatrix<double> matrix;
  std::vector<std::size_t> labels;

  std::size_t rows() const { return matrix.rows; }
  std::size_t cols() const { return matrix.cols; }
};

inline BowFeatures featurize(const std::vector<RawTweetRecord>& records, const Vocabulary& vocab, bool binary = false) {
  BowFeatures f;
  f.matrix.cols = vocab.size() - Vocabulary::kNumSpecials;
  for (const auto& r : records) {
    std::map<std::size_t, double> counts;
    for (const auto& t : utf8::split_whitespace(r.text)) {
      const auto id = vocab.id(t);
      if (Vocabulary::is_special(id)) continue;
      auto& c = counts[id - Vocabulary::kNumSpecials];
      c = binary ? 1.0 : c + 1.0;
    }
    f.matrix.push_row({counts.begin(), counts.end()});
    f.labels.push_back(r.label);
  }
  return f;
}

struct LogRegConfig {
  std::size_t epochs = 300;
  double learning_rate = 0.05;
  double l2 = 1e-4;
  std::uint64_t seed = 42;

  nlohmann::json to_json() const {
    return {{"epochs", epochs}, {"learning_rate", learning_rate}, {"l2", l2}, {"seed", seed}};
  }
};

struct LogRegModel {
  numeric::Tensor<double> weights;  // [F x C]
  numeric::Tensor<double> bias;     // [C]
  std::vector<double> loss_history;  // full-batch objective before each step

  std::size_t num_classes() const { return bias.size(); }

  std::vector<double> logits(const BowFeatures& f, std::size_t row) const {
    std::vector<double> z(bias.values().begin(), bias.values().end());
    const auto& m = f.matrix;
    for (std::size_t k = m.row_ptr[row]; k < m.row_ptr[row + 1]; ++k)
      for (std::size_t c = 0; c < z.size(); ++c) z[c] += m.values[k] * weights(m.col_idx[k], c);
    return z;
  }

  std::vector<std::size_t> predict(const BowFeatures& f) const {
    if (f.cols() != weights.rows()) throw DataError("baseline: feature width differs from the trained weights");
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < f.rows(); ++i) {
      const auto z = logits(f, i);
      out.push_back(static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin()));
    }
    return out;
  }
};

/// Multinomial logistic regression, full-batch Adam on
/// mean cross-entropy + (l2 / 2) * |W|^2. The bias is not penalized.
inline LogRegModel train_logreg(const BowFeatures& f, std::size_t num_classes, const LogRegConfig& cfg) {
  using namespace numeric;
  if (num_classes < 2) throw InputError("baseline needs at least two classes");
  if (f.rows() < num_classes)
    throw DataError("baseline: " + std::to_string(f.rows()) + " records for " + std::to_string(num_classes) + " classes");
  if (f.cols() == 0) throw DataError("baseline: empty feature space");
  if (cfg.epochs < 1 || !(cfg.learning_rate > 0) || cfg.l2 < 0) throw InputError("baseline: invalid optimizer settings");
  std::vector<std::size_t> seen(num_classes, 0);
  for (auto l : f.labels) {
    if (l >= num_classes) throw DataError("baseline: label " + std::to_string(l) + " out of range");
    ++seen[l];
  }
  if (std::count_if(seen.begin(), seen.end(), [](auto n) { return n > 0; }) < 2)
    throw DataError("baseline: training labels contain a single class");

  Rng rng = Rng(cfg.seed).stream("baseline-init");
  Parameter<double> w("baseline.weight", Tensor<double>({f.cols(), num_classes}));
  for (auto& v : w.value.storage()) v = rng.normal() * 0.01;
  Parameter<double> b("baseline.bias", Tensor<double>({num_classes}));
  std::vector<Parameter<double>*> params{&w, &b};
  AdamState<double> adam(AdamConfig{cfg.learning_rate});

  LogRegModel model;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Tape<double> tape;
    auto wv = tape.parameter(w);
    auto logits = add_row(sparse_matmul(f.matrix, wv), tape.parameter(b));
    auto loss = add(cross_entropy(logits, std::span<const std::size_t>(f.labels)), scale(sum(mul(wv, wv)), cfg.l2 / 2));
    model.loss_history.push_back(loss.item());
    tape.backward(loss);
    adam_step(params, adam);
  }
  model.weights = std::move(w.value);
  model.bias = std::move(b.value);
  return model;
}

/// Hash of a record split (row order, ids, texts and labels), so reports
/// can show they were computed on identical data.
inline std::string split_sha256(const std::vector<RawTweetRecord>& records) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : records) j.push_back({r.id ? nlohmann::json(*r.id) : nlohmann::json(nullptr), r.text, r.label});
  return sha256_hex(j.dump());
}

struct BaselineReport {
  MetricsReport logreg;
  MetricsReport majority;
  std::size_t majority_class = 0;
  std::string split_sha256;

  nlohmann::json to_json(const LabelMapping* mapping = nullptr) const {
    return {{"split_sha256", split_sha256},
            {"majority_class", majority_class},
            {"majority", majority.to_json(mapping)},
            {"logreg", logreg.to_json(mapping)}};
  }
};

/// Scores the model on `test` next to a constant predictor of the training
/// majority class.
inline BaselineReport eval_baseline(const LogRegModel& model, const std::vector<RawTweetRecord>& test,
                                    const Vocabulary& vocab, std::size_t train_majority) {
  const auto f = featurize(test, vocab);
  const std::size_t C = model.num_classes();
  BaselineReport r;
  r.logreg = report(model.predict(f), f.labels, C);
  r.majority_class = train_majority;
  r.majority = report(std::vector<std::size_t>(f.rows(), train_majority), f.labels, C);
  r.split_sha256 = split_sha256(test);
  return r;
}

}  // namespace emoji
