#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "emoji/csv.hpp"
#include "emoji/errors.hpp"
#include "emoji/io.hpp"
#include "emoji/metrics.hpp"
#include "emoji/model.hpp"
#include "emoji/numeric/adam.hpp"
#include "emoji/tokenizer.hpp"

namespace emoji {

struct MlmConfig {
  double mask_prob = 0.15;
  double replace_mask_frac = 0.8;
  double replace_random_frac = 0.1;
  double keep_frac = 0.1;

  nlohmann::json to_json() const {
    return {{"mask_prob", mask_prob}, {"replace_mask_frac", replace_mask_frac},
            {"replace_random_frac", replace_random_frac}, {"keep_frac", keep_frac}};
  }
};

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  std::uint64_t seed = 42;
  std::optional<std::size_t> early_stop_patience;
  MlmConfig mlm;

  void validate() const {
    if (epochs < 1) throw InputError("epochs must be >= 1");
    if (batch_size < 1) throw InputError("batch_size must be >= 1");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw InputError("learning rate must be positive");
    const double s = mlm.replace_mask_frac + mlm.replace_random_frac + mlm.keep_frac;
    if (std::abs(s - 1.0) > 1e-9) throw InputError("MLM corruption fractions must sum to 1");
    if (mlm.replace_mask_frac < 0 || mlm.replace_random_frac < 0 || mlm.keep_frac < 0)
      throw InputError("MLM corruption fractions must be non-negative");
    if (!(mlm.mask_prob >= 0.0 && mlm.mask_prob <= 1.0)) throw InputError("mask_prob must be in [0,1]");
  }

  nlohmann::json to_json() const {
    nlohmann::json j{{"epochs", epochs}, {"batch_size", batch_size}, {"learning_rate", learning_rate},
                     {"seed", seed},     {"mlm", mlm.to_json()}};
    j["early_stop_patience"] = early_stop_patience ? nlohmann::json(*early_stop_patience) : nlohmann::json(nullptr);
    return j;
  }
};

struct CurveRow {
  std::size_t epoch = 0;
  double train_loss = 0;
  double val_loss = 0;
  double val_accuracy = 0;
  double wall_seconds = 0;
};

struct TrainingCurve {
  std::vector<CurveRow> rows;

  bool empty() const { return rows.empty(); }
  std::size_t size() const { return rows.size(); }
};

/// Curve equality ignoring wall-clock time.
inline bool same_values(const TrainingCurve& a, const TrainingCurve& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto &x = a.rows[i], &y = b.rows[i];
    if (x.epoch != y.epoch || x.train_loss != y.train_loss || x.val_loss != y.val_loss ||
        x.val_accuracy != y.val_accuracy)
      return false;
  }
  return true;
}

inline constexpr const char* kCurveHeader = "epoch,train_loss,val_loss,val_accuracy,wall_seconds";

inline std::string format_g9(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

inline std::string curve_csv(const TrainingCurve& curve) {
  if (curve.empty()) throw InputError("cannot export an empty training curve");
  std::string out = std::string(kCurveHeader) + "\n";
  for (const auto& r : curve.rows)
    out += std::to_string(r.epoch) + "," + format_g9(r.train_loss) + "," + format_g9(r.val_loss) + "," +
           format_g9(r.val_accuracy) + "," + format_g9(r.wall_seconds) + "\n";
  return out;
}

inline void export_curve(const TrainingCurve& curve, const std::string& path) { write_file_atomic(path, curve_csv(curve)); }

inline TrainingCurve parse_curve(std::string_view text, const std::string& origin = "curve") {
  const auto rows = csv::parse(text);
  if (rows.empty()) throw DataError(origin + ": empty curve file");
  std::string header;
  for (std::size_t i = 0; i < rows[0].size(); ++i) header += (i ? "," : "") + rows[0][i];
  if (header != kCurveHeader) throw DataError(origin + ": unexpected header '" + header + "'");
  TrainingCurve curve;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() != 5) throw DataError(origin + ": row " + std::to_string(r + 1) + " does not have 5 fields");
    CurveRow row;
    try {
      row.epoch = std::stoul(rows[r][0]);
      row.train_loss = std::stod(rows[r][1]);
      row.val_loss = std::stod(rows[r][2]);
      row.val_accuracy = std::stod(rows[r][3]);
      row.wall_seconds = std::stod(rows[r][4]);
    } catch (const std::exception&) {
      throw DataError(origin + ": unparsable number in row " + std::to_string(r + 1));
    }
    if (row.epoch != r) throw DataError(origin + ": epoch indices must be contiguous from 1");
    if (!std::isfinite(row.train_loss) || !std::isfinite(row.val_loss))
      throw DataError(origin + ": non-finite loss at epoch " + std::to_string(row.epoch));
    curve.rows.push_back(row);
  }
  if (curve.empty()) throw DataError(origin + ": curve has no rows");
  return curve;
}

inline TrainingCurve load_curve(const std::string& path) { return parse_curve(csv::read_file(path), path); }

/// Trailing moving average with the given window (shorter at the start).
inline std::vector<double> moving_average(const std::vector<double>& v, std::size_t window) {
  std::vector<double> out(v.size());
  double run = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    run += v[i];
    if (i >= window) run -= v[i - window];
    out[i] = run / static_cast<double>(std::min(i + 1, window));
  }
  return out;
}

/// True when the smoothed train loss never rises by more than `tol` between
/// consecutive epochs of the final half of the curve.
inline bool final_half_non_increasing(const TrainingCurve& curve, std::size_t window, double tol) {
  std::vector<double> loss;
  for (const auto& r : curve.rows) loss.push_back(r.train_loss);
  const auto s = moving_average(loss, window);
  for (std::size_t i = s.size() / 2 + 1; i < s.size(); ++i)
    if (s[i] > s[i - 1] + tol) return false;
  return true;
}

struct Example {
  TokenSequence seq;
  std::size_t label = 0;
};

using Clock = std::chrono::steady_clock;

inline double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct EvalResult {
  double loss = 0;
  double accuracy = 0;
  std::vector<std::size_t> predictions;
};

/// Eval-mode mean cross-entropy, accuracy and argmax predictions.
inline EvalResult evaluate_examples(Model<float>& model, const std::vector<Example>& examples) {
  EvalResult r;
  if (examples.empty()) return r;
  double loss = 0;
  std::size_t correct = 0;
  for (const auto& ex : examples) {
    const auto logits = predict_logits(model, ex.seq);
    const auto probs = softmax_probabilities<float>(logits);
    if (ex.label >= probs.size()) throw DataError("label " + std::to_string(ex.label) + " outside the head's classes");
    loss += -std::log(std::max(probs[ex.label], std::numeric_limits<double>::min()));
    const std::size_t pred = argmax(probs);
    correct += pred == ex.label;
    r.predictions.push_back(pred);
  }
  r.loss = loss / static_cast<double>(examples.size());
  r.accuracy = static_cast<double>(correct) / static_cast<double>(examples.size());
  return r;
}

inline void progress_line(std::ostream* log, const CurveRow& row) {
  if (!log) return;
  *log << "epoch=" << row.epoch << " train_loss=" << format_g9(row.train_loss) << " val_loss=" << format_g9(row.val_loss)
       << " val_acc=" << format_g9(row.val_accuracy) << "\n";
  log->flush();
}

struct FinetuneResult {
  TrainingCurve curve;
  std::size_t best_epoch = 0;
  double best_val_loss = 0;
  bool stopped_early = false;
};

/// Supervised training of encoder and head. Batches come from a seeded
/// shuffle; each batch is one Adam step on the mean cross-entropy. The
/// weights with the lowest validation loss are restored at the end (the
/// training set stands in for validation when none is given).
inline FinetuneResult finetune(Model<float>& model, const std::vector<Example>& train,
                               const std::vector<Example>& validation, const TrainConfig& config,
                               std::ostream* log = nullptr) {
  config.validate();
  if (train.empty()) throw DataError("finetune: empty training set");
  const std::size_t C = model.config().num_classes;
  for (const auto* set : {&train, &validation})
    for (const auto& ex : *set)
      if (ex.label >= C)
        throw DataError("finetune: label " + std::to_string(ex.label) + " but the head has " + std::to_string(C) + " classes");
  const auto& val = validation.empty() ? train : validation;

  numeric::Rng root(config.seed);
  numeric::Rng shuffle_rng = root.stream("shuffling");
  numeric::Rng dropout_rng = root.stream("dropout");
  numeric::AdamState<float> adam(numeric::AdamConfig{config.learning_rate});
  auto params = model.parameters();
  model.zero_grad();

  FinetuneResult result;
  result.best_val_loss = std::numeric_limits<double>::infinity();
  Model<float> best = model;
  std::size_t since_best = 0;
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto t0 = Clock::now();
    shuffle_rng.shuffle(order.begin(), order.end());
    double epoch_loss = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      numeric::Tape<float> tape;
      auto bound = bind(tape, model);
      const auto mode = ForwardMode::training(dropout_rng, model.config().dropout);
      std::optional<numeric::Var<float>> total;
      for (std::size_t k = start; k < end; ++k) {
        const auto& ex = train[order[k]];
        const std::size_t label = ex.label;
        auto loss = numeric::cross_entropy(sequence_logits(bound, ex.seq, mode), std::span<const std::size_t>(&label, 1));
        epoch_loss += static_cast<double>(loss.item());
        total = total ? numeric::add(*total, loss) : loss;
      }
      tape.backward(numeric::scale(*total, 1.0f / static_cast<float>(end - start)));
      numeric::adam_step(params, adam);
    }
    const auto ev = evaluate_examples(model, val);
    CurveRow row{epoch, epoch_loss / static_cast<double>(train.size()), ev.loss, ev.accuracy, seconds_since(t0)};
    if (!std::isfinite(row.train_loss) || !std::isfinite(row.val_loss))
      throw NumericError("non-finite loss at epoch " + std::to_string(epoch));
    result.curve.rows.push_back(row);
    progress_line(log, row);
    if (row.val_loss < result.best_val_loss) {
      result.best_val_loss = row.val_loss;
      result.best_epoch = epoch;
      best = model;
      since_best = 0;
    } else if (config.early_stop_patience && ++since_best >= *config.early_stop_patience) {
      result.stopped_early = true;
      break;
    }
  }
  model = std::move(best);
  model.zero_grad();
  return result;
}

/// One corrupted MLM input: `ids` is the model input, `positions` the
/// selected slots and `targets` their original tokens.
struct MaskedSequence {
  std::vector<std::uint32_t> ids;
  std::vector<std::size_t> positions;
  std::vector<std::size_t> targets;
  std::size_t maskable = 0;  // non-special tokens seen
};

/// Selects each non-special token with probability mask_prob; selected
/// tokens become MASK, a random ordinary token, or stay, per the fractions.
inline MaskedSequence mask_tokens(const TokenSequence& seq, std::size_t vocab_size, const MlmConfig& cfg,
                                  numeric::Rng& rng) {
  MaskedSequence out;
  out.ids.assign(seq.ids.begin(), seq.ids.begin() + static_cast<std::ptrdiff_t>(seq.true_length));
  const std::size_t ordinary = vocab_size - Vocabulary::kNumSpecials;
  for (std::size_t i = 0; i < out.ids.size(); ++i) {
    if (Vocabulary::is_special(out.ids[i])) continue;
    ++out.maskable;
    if (!rng.bernoulli(cfg.mask_prob)) continue;
    out.positions.push_back(i);
    out.targets.push_back(out.ids[i]);
    const double u = rng.uniform();
    if (u < cfg.replace_mask_frac) {
      out.ids[i] = Vocabulary::kMask;
    } else if (u < cfg.replace_mask_frac + cfg.replace_random_frac && ordinary > 0) {
      out.ids[i] = static_cast<std::uint32_t>(Vocabulary::kNumSpecials + rng.below(ordinary));
    }
  }
  return out;
}

/// Per-position MLM losses (eval mode) for a corrupted input.
inline std::vector<double> mlm_position_losses(Model<float>& model, const MaskedSequence& ms) {
  numeric::Tape<float> tape(false);
  auto bound = bind(tape, model);
  const std::vector<std::uint8_t> mask(ms.ids.size(), 1);
  auto hidden = encoder_hidden(bound, std::span<const std::uint32_t>(ms.ids), std::span<const std::uint8_t>(mask),
                               ForwardMode::eval());
  const auto& logits = mlm_logits(bound, hidden, ms.positions).value();
  std::vector<double> out;
  for (std::size_t k = 0; k < ms.positions.size(); ++k) {
    const auto probs = softmax_probabilities<float>(logits.row(k));
    out.push_back(-std::log(std::max(probs[ms.targets[k]], std::numeric_limits<double>::min())));
  }
  return out;
}

struct MlmEval {
  double loss = 0;
  double recovery = 0;  // top-1 accuracy at selected positions
  std::size_t positions = 0;
};

/// Masked-token loss and top-1 recovery with masks drawn from a fixed seed,
/// so repeated calls see identical corruptions.
inline MlmEval evaluate_mlm(Model<float>& model, const std::vector<TokenSequence>& corpus, const MlmConfig& cfg,
                            std::uint64_t seed) {
  numeric::Rng rng = numeric::Rng(seed).stream("mlm-eval");
  MlmEval r;
  std::size_t correct = 0;
  double loss = 0;
  for (const auto& seq : corpus) {
    const auto ms = mask_tokens(seq, model.config().vocab_size, cfg, rng);
    if (ms.positions.empty()) continue;
    numeric::Tape<float> tape(false);
    auto bound = bind(tape, model);
    const std::vector<std::uint8_t> mask(ms.ids.size(), 1);
    auto hidden = encoder_hidden(bound, std::span<const std::uint32_t>(ms.ids), std::span<const std::uint8_t>(mask),
                                 ForwardMode::eval());
    const auto& logits = mlm_logits(bound, hidden, ms.positions).value();
    for (std::size_t k = 0; k < ms.positions.size(); ++k) {
      const auto probs = softmax_probabilities<float>(logits.row(k));
      loss += -std::log(std::max(probs[ms.targets[k]], std::numeric_limits<double>::min()));
      correct += argmax(probs) == ms.targets[k];
      ++r.positions;
    }
  }
  if (r.positions > 0) {
    r.loss = loss / static_cast<double>(r.positions);
    r.recovery = static_cast<double>(correct) / static_cast<double>(r.positions);
  }
  return r;
}

struct PretrainResult {
  TrainingCurve curve;
};

/// Masked-language-model pretraining of the encoder (the head is untouched).
/// Each batch is one Adam step on the mean cross-entropy over all selected
/// positions in the batch; sequences with no selection contribute nothing.
/// Curve validation columns report masked-token loss and recovery on
/// `validation` (or the corpus itself) under fixed masks.
inline PretrainResult pretrain_mlm(Model<float>& model, const std::vector<TokenSequence>& corpus,
                                   const TrainConfig& config, const std::vector<TokenSequence>& validation = {},
                                   std::ostream* log = nullptr) {
  config.validate();
  if (corpus.empty()) throw DataError("pretrain: empty corpus");
  std::size_t maskable = 0;
  for (const auto& s : corpus)
    for (std::size_t i = 0; i < s.true_length; ++i) maskable += !Vocabulary::is_special(s.ids[i]);
  if (maskable == 0 || config.mlm.mask_prob <= 0.0)
    throw DataError("pretrain: no maskable positions (mask_prob is 0 or the corpus has only special tokens)");

  numeric::Rng root(config.seed);
  numeric::Rng shuffle_rng = root.stream("shuffling");
  numeric::Rng dropout_rng = root.stream("dropout");
  numeric::Rng mask_rng = root.stream("masking");
  numeric::AdamState<float> adam(numeric::AdamConfig{config.learning_rate});
  auto& enc = model.encoder();
  std::vector<numeric::Parameter<float>*> params{&enc.token_embedding, &enc.position_embedding, &enc.segment_embedding};
  for (auto& l : enc.layers)
    for (auto* q : {&l.query, &l.key, &l.value, &l.output, &l.ff_in, &l.ff_out, &l.ln1_gain, &l.ln1_bias, &l.ln2_gain,
                    &l.ln2_bias})
      params.push_back(q);
  params.push_back(&enc.mlm_bias);
  model.zero_grad();

  const auto& val = validation.empty() ? corpus : validation;
  const std::uint64_t eval_seed = root.stream("mlm-validation").next();
  PretrainResult result;
  std::vector<std::size_t> order(corpus.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto t0 = Clock::now();
    shuffle_rng.shuffle(order.begin(), order.end());
    double epoch_loss = 0;
    std::size_t epoch_positions = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      numeric::Tape<float> tape;
      auto bound = bind(tape, model);
      const auto mode = ForwardMode::training(dropout_rng, model.config().dropout);
      std::optional<numeric::Var<float>> total;
      std::size_t batch_positions = 0;
      for (std::size_t k = start; k < end; ++k) {
        const auto ms = mask_tokens(corpus[order[k]], model.config().vocab_size, config.mlm, mask_rng);
        if (ms.positions.empty()) continue;
        const std::vector<std::uint8_t> mask(ms.ids.size(), 1);
        auto hidden = encoder_hidden(bound, std::span<const std::uint32_t>(ms.ids), std::span<const std::uint8_t>(mask), mode);
        auto ce = numeric::cross_entropy(mlm_logits(bound, hidden, ms.positions), std::span<const std::size_t>(ms.targets));
        const auto n = static_cast<float>(ms.positions.size());
        auto summed = numeric::scale(ce, n);
        epoch_loss += static_cast<double>(ce.item()) * n;
        batch_positions += ms.positions.size();
        total = total ? numeric::add(*total, summed) : summed;
      }
      if (!total) continue;
      epoch_positions += batch_positions;
      tape.backward(numeric::scale(*total, 1.0f / static_cast<float>(batch_positions)));
      numeric::adam_step(params, adam);
    }
    const auto ev = evaluate_mlm(model, val, config.mlm, eval_seed);
    CurveRow row{epoch, epoch_positions ? epoch_loss / static_cast<double>(epoch_positions) : 0.0, ev.loss, ev.recovery,
                 seconds_since(t0)};
    if (!std::isfinite(row.train_loss) || !std::isfinite(row.val_loss))
      throw NumericError("non-finite MLM loss at epoch " + std::to_string(epoch));
    result.curve.rows.push_back(row);
    progress_line(log, row);
  }
  model.zero_grad();
  return result;
}

}  // namespace emoji
