#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "emoji/training.hpp"
#include "test_support.hpp"

using namespace emoji;

namespace {

ModelConfig small_config(std::size_t V, std::size_t C, std::size_t max_len = 12) {
  ModelConfig c;
  c.num_layers = 1;
  c.hidden_size = 16;
  c.num_heads = 2;
  c.ff_size = 32;
  c.max_len = max_len;
  c.vocab_size = V;
  c.num_classes = C;
  c.dropout = 0.0;
  return c;
}

struct Corpus {
  Vocabulary vocab;
  std::vector<Example> examples;
};

Corpus make_corpus(const std::vector<std::pair<std::string, std::size_t>>& rows, std::size_t max_len = 12) {
  std::vector<std::string> texts;
  for (const auto& r : rows) texts.push_back(r.first);
  Corpus c{build_vocab(texts, 1, 1000), {}};
  for (const auto& [text, label] : rows) c.examples.push_back({encode(text, c.vocab, max_len), label});
  return c;
}

TrainConfig quick(std::size_t epochs, double lr = 1e-2, std::size_t batch = 4) {
  TrainConfig t;
  t.epochs = epochs;
  t.batch_size = batch;
  t.learning_rate = lr;
  t.seed = 7;
  return t;
}

const std::vector<std::pair<std::string, std::size_t>> kEightRows = {
    {"i love you so much", 0},  {"love you forever my dear", 0}, {"lets play baseball today", 1},
    {"great game at the ballpark", 1}, {"that is so funny haha", 2}, {"haha what a joke", 2},
    {"i feel so sad today", 3},   {"this is a terrible loss", 3}};

}  // namespace

TEST(Finetune, OverfitsOneSentence) {
  auto c = make_corpus({{"i love you", 0}});
  auto model = Model<float>::initialized(small_config(c.vocab.size(), 5), 1);
  const auto res = finetune(model, c.examples, {}, quick(60));
  EXPECT_LT(res.curve.rows.back().train_loss, 0.05);
  const auto probs = softmax_probabilities<float>(predict_logits(model, c.examples[0].seq));
  EXPECT_EQ(argmax(probs), 0u);
  EXPECT_EQ(dataset1_mapping().emoji(argmax(probs)), "❤️");
}

TEST(Finetune, FitsEightExamplesAcrossFourClasses) {
  auto c = make_corpus(kEightRows);
  auto model = Model<float>::initialized(small_config(c.vocab.size(), 4), 3);
  const auto res = finetune(model, c.examples, {}, quick(300, 3e-3, 8));
  const auto ev = evaluate_examples(model, c.examples);
  EXPECT_EQ(ev.accuracy, 1.0);
  EXPECT_TRUE(final_half_non_increasing(res.curve, 5, 1e-3));
}

TEST(Finetune, ValidationPassIsRepeatable) {
  auto c = make_corpus(kEightRows);
  auto cfg = small_config(c.vocab.size(), 4);
  cfg.dropout = 0.5;
  auto model = Model<float>::initialized(cfg, 3);
  const auto a = evaluate_examples(model, c.examples);
  const auto b = evaluate_examples(model, c.examples);
  EXPECT_EQ(a.loss, b.loss);
  EXPECT_EQ(a.predictions, b.predictions);
}

TEST(Finetune, SameSeedSameCurveAndWeights) {
  auto c = make_corpus(kEightRows);
  auto cfg = small_config(c.vocab.size(), 4);
  cfg.dropout = 0.1;
  auto a = Model<float>::initialized(cfg, 11);
  auto b = Model<float>::initialized(cfg, 11);
  const auto ra = finetune(a, c.examples, c.examples, quick(5));
  const auto rb = finetune(b, c.examples, c.examples, quick(5));
  EXPECT_TRUE(same_values(ra.curve, rb.curve));
  const auto pa = a.parameters(), pb = b.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i]->value.storage(), pb[i]->value.storage()) << pa[i]->name;

  auto d = Model<float>::initialized(cfg, 11);
  auto other = quick(5);
  other.seed = 8;
  const auto rd = finetune(d, c.examples, c.examples, other);
  EXPECT_FALSE(same_values(ra.curve, rd.curve));
}

TEST(Finetune, CurveHasOneRowPerEpochAndRoundTrips) {
  auto c = make_corpus(kEightRows);
  auto model = Model<float>::initialized(small_config(c.vocab.size(), 4), 5);
  std::ostringstream log;
  const auto res = finetune(model, c.examples, c.examples, quick(10), &log);
  ASSERT_EQ(res.curve.size(), 10u);
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(res.curve.rows[i].epoch, i + 1);
  EXPECT_NE(log.str().find("epoch=10 train_loss="), std::string::npos);

  test_support::TempDir dir;
  export_curve(res.curve, dir.file("curve.csv"));
  const auto text = test_support::slurp(dir.file("curve.csv"));
  EXPECT_EQ(text.substr(0, text.find('\n')), kCurveHeader);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 11);
  const auto back = load_curve(dir.file("curve.csv"));
  ASSERT_EQ(back.size(), res.curve.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    const auto &x = back.rows[i], &y = res.curve.rows[i];
    EXPECT_EQ(x.epoch, y.epoch);
    for (auto [got, want] : {std::pair{x.train_loss, y.train_loss}, {x.val_loss, y.val_loss},
                             {x.val_accuracy, y.val_accuracy}, {x.wall_seconds, y.wall_seconds}})
      EXPECT_EQ(format_g9(got), format_g9(want));
  }
  EXPECT_THROW(export_curve(TrainingCurve{}, dir.file("empty.csv")), InputError);
}

TEST(Finetune, RestoresBestValidationWeights) {
  auto c = make_corpus(kEightRows);
  auto model = Model<float>::initialized(small_config(c.vocab.size(), 4), 5);
  // Validation labels disagree with training, so validation loss rises.
  std::vector<Example> val = c.examples;
  for (auto& e : val) e.label = (e.label + 1) % 4;
  const auto res = finetune(model, c.examples, val, quick(12));
  double best = 1e300;
  for (const auto& r : res.curve.rows) best = std::min(best, r.val_loss);
  EXPECT_DOUBLE_EQ(res.best_val_loss, best);
  EXPECT_NEAR(evaluate_examples(model, val).loss, best, 1e-9);
}

TEST(Finetune, EarlyStoppingHonoursPatience) {
  auto c = make_corpus(kEightRows);
  std::vector<Example> val = c.examples;
  for (auto& e : val) e.label = (e.label + 1) % 4;
  auto model = Model<float>::initialized(small_config(c.vocab.size(), 4), 5);
  auto cfg = quick(50);
  cfg.early_stop_patience = 2;
  const auto res = finetune(model, c.examples, val, cfg);
  EXPECT_TRUE(res.stopped_early);
  EXPECT_EQ(res.curve.size(), res.best_epoch + 2);
}

TEST(Finetune, RejectsBadInputs) {
  auto c = make_corpus(kEightRows);
  auto model = Model<float>::initialized(small_config(c.vocab.size(), 4), 5);
  EXPECT_THROW(finetune(model, {}, {}, quick(1)), DataError);
  auto bad = c.examples;
  bad[0].label = 4;
  EXPECT_THROW(finetune(model, bad, {}, quick(1)), DataError);
  auto cfg = quick(1);
  cfg.batch_size = 0;
  EXPECT_THROW(finetune(model, c.examples, {}, cfg), InputError);
}

TEST(Mlm, SelectionRateAndCorruptionSplit) {
  const std::size_t V = 60, L = 50;
  numeric::Rng rng(123);
  MlmConfig cfg;
  std::size_t tokens = 0, selected = 0, to_mask = 0, kept = 0, random_ok = 0;
  for (std::size_t s = 0; s < 200; ++s) {
    TokenSequence seq;
    seq.ids.push_back(Vocabulary::kCls);
    for (std::size_t i = 0; i < L; ++i) seq.ids.push_back(static_cast<std::uint32_t>(5 + rng.below(V - 5)));
    seq.ids.push_back(Vocabulary::kSep);
    seq.true_length = seq.ids.size();
    seq.attention_mask.assign(seq.ids.size(), 1);
    const auto ms = mask_tokens(seq, V, cfg, rng);
    tokens += ms.maskable;
    EXPECT_EQ(ms.ids.front(), Vocabulary::kCls);
    EXPECT_EQ(ms.ids.back(), Vocabulary::kSep);
    for (std::size_t k = 0; k < ms.positions.size(); ++k) {
      const auto now = ms.ids[ms.positions[k]];
      EXPECT_EQ(ms.targets[k], seq.ids[ms.positions[k]]);
      if (now == Vocabulary::kMask) ++to_mask;
      else if (now == ms.targets[k]) ++kept;
      if (now == Vocabulary::kMask || now >= Vocabulary::kNumSpecials) ++random_ok;
    }
    selected += ms.positions.size();
  }
  ASSERT_EQ(tokens, 10000u);
  const double rate = static_cast<double>(selected) / static_cast<double>(tokens);
  EXPECT_NEAR(rate, 0.15, 0.02);
  EXPECT_EQ(random_ok, selected);
  EXPECT_NEAR(static_cast<double>(to_mask) / static_cast<double>(selected), 0.8, 0.05);
  // Kept includes random draws that happen to hit the original token.
  EXPECT_NEAR(static_cast<double>(kept) / static_cast<double>(selected), 0.1, 0.04);
}

TEST(Mlm, PretrainingLearnsToRecoverTokens) {
  std::vector<std::string> texts;
  for (int i = 0; i < 12; ++i) {
    texts.push_back("the cat sat on the mat");
    texts.push_back("a dog ran in the park");
  }
  const auto vocab = build_vocab(texts, 1, 100);
  std::vector<TokenSequence> corpus;
  for (const auto& t : texts) corpus.push_back(encode(t, vocab, 10));
  auto model = Model<float>::initialized(small_config(vocab.size(), 2, 10), 9);
  auto cfg = quick(40, 1e-2, 8);
  cfg.mlm.mask_prob = 0.3;
  const auto before = evaluate_mlm(model, corpus, cfg.mlm, 99);
  const auto head_before = model.head().dense1_weight.value.storage();
  const auto res = pretrain_mlm(model, corpus, cfg);
  const auto after = evaluate_mlm(model, corpus, cfg.mlm, 99);
  EXPECT_EQ(res.curve.size(), 40u);
  EXPECT_LT(after.loss, before.loss);
  EXPECT_GT(after.recovery, 0.5);
  EXPECT_EQ(model.head().dense1_weight.value.storage(), head_before);
  EXPECT_EQ(evaluate_mlm(model, corpus, cfg.mlm, 99).loss, after.loss);
}

TEST(Mlm, LossOnlyCountsSelectedPositions) {
  const auto vocab = build_vocab(std::vector<std::string>{"one two three four five six"}, 1, 100);
  auto model = Model<float>::initialized(small_config(vocab.size(), 2), 4);
  MaskedSequence full;
  full.ids = encode("one two three four five six", vocab, 12).ids;
  full.ids.resize(8);
  full.ids[2] = Vocabulary::kMask;
  full.ids[5] = Vocabulary::kMask;
  full.positions = {2, 4, 5};
  full.targets = {vocab.id("two"), vocab.id("four"), vocab.id("five")};
  MaskedSequence paired = full;
  paired.positions = {2, 5};
  paired.targets = {full.targets[0], full.targets[2]};
  const auto a = mlm_position_losses(model, full);
  const auto b = mlm_position_losses(model, paired);
  ASSERT_EQ(a.size(), 3u);
  ASSERT_EQ(b.size(), 2u);
  EXPECT_EQ(a[0], b[0]);
  EXPECT_EQ(a[2], b[1]);
}

TEST(Mlm, ToyCorpusRecoveryBeatsChanceTenfold) {
  const std::vector<std::string> subjects{"the cat", "a dog", "my bird", "our fish", "the cow"};
  const std::vector<std::string> verbs{"eats", "sees", "likes", "finds", "wants"};
  const std::vector<std::string> objects{"green grass", "red apples", "cold water", "warm bread"};
  std::vector<std::string> texts;
  for (std::size_t i = 0; texts.size() < 50; ++i)
    texts.push_back(subjects[i % 5] + " " + verbs[(i / 5) % 5] + " " + objects[(i / 2) % 4]);
  const auto vocab = build_vocab(texts, 1, 100);
  std::vector<TokenSequence> corpus;
  for (const auto& t : texts) corpus.push_back(encode(t, vocab, 10));
  auto model = Model<float>::initialized(small_config(vocab.size(), 2, 10), 21);
  auto cfg = quick(200, 3e-3, 16);
  pretrain_mlm(model, corpus, cfg);
  const auto ev = evaluate_mlm(model, corpus, cfg.mlm, 5);
  EXPECT_GE(ev.recovery, 10.0 / static_cast<double>(vocab.size())) << "V=" << vocab.size();
}

TEST(Mlm, RejectsCorpusWithoutMaskablePositions) {
  const auto vocab = build_vocab(std::vector<std::string>{"a b c"}, 1, 100);
  auto model = Model<float>::initialized(small_config(vocab.size(), 2), 1);
  std::vector<TokenSequence> corpus{encode("a b c", vocab, 8)};
  auto cfg = quick(1);
  cfg.mlm.mask_prob = 0.0;
  EXPECT_THROW(pretrain_mlm(model, corpus, cfg), DataError);
  std::vector<TokenSequence> specials_only{encode("", vocab, 8)};
  EXPECT_THROW(pretrain_mlm(model, specials_only, quick(1)), DataError);
}

TEST(Curve, MovingAverageAndFinalHalfCheck) {
  EXPECT_EQ(moving_average({1, 2, 3, 4}, 2), (std::vector<double>{1, 1.5, 2.5, 3.5}));
  TrainingCurve down, bump;
  for (std::size_t e = 1; e <= 10; ++e) {
    down.rows.push_back({e, 10.0 / static_cast<double>(e), 0, 0, 0});
    bump.rows.push_back({e, e == 9 ? 5.0 : 1.0 / static_cast<double>(e), 0, 0, 0});
  }
  EXPECT_TRUE(final_half_non_increasing(down, 1, 0.0));
  EXPECT_FALSE(final_half_non_increasing(bump, 1, 0.0));
  EXPECT_THROW(parse_curve("epoch,loss\n1,2\n"), DataError);
}
