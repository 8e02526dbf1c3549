#include <gtest/gtest.h>

#include <cmath>
#include <string>
#include <vector>

#include "emoji/checkpoint.hpp"
#include "emoji/model.hpp"
#include "emoji/numeric/grad_check.hpp"
#include "test_support.hpp"

using namespace emoji;
using namespace emoji::numeric;

namespace {

ModelConfig tiny_config(std::size_t V = 12, std::size_t C = 3) {
  ModelConfig c;
  c.num_layers = 1;
  c.hidden_size = 8;
  c.num_heads = 2;
  c.ff_size = 16;
  c.max_len = 8;
  c.vocab_size = V;
  c.num_classes = C;
  c.dropout = 0.0;
  return c;
}

TokenSequence make_seq(std::vector<std::uint32_t> body, std::size_t max_len) {
  TokenSequence s;
  s.ids.assign(max_len, Vocabulary::kPad);
  s.attention_mask.assign(max_len, 0);
  s.ids[0] = Vocabulary::kCls;
  std::size_t n = 1;
  for (auto id : body) s.ids[n++] = id;
  s.ids[n++] = Vocabulary::kSep;
  s.true_length = n;
  for (std::size_t i = 0; i < n; ++i) s.attention_mask[i] = 1;
  return s;
}

template <typename T>
Tensor<T> random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.storage()) v = static_cast<T>(rng.normal() * scale);
  return t;
}

// Randomizes every parameter (larger than the 0.02 init) so gradients are
// well away from zero everywhere.
template <typename T>
void scramble(Model<T>& m, std::uint64_t seed, double scale = 0.5) {
  Rng rng(seed);
  for (auto* p : m.parameters()) {
    for (auto& v : p->value.storage()) v = static_cast<T>(rng.normal() * scale);
    if (p->name.ends_with("_gain"))
      for (auto& v : p->value.storage()) v = static_cast<T>(1.0 + 0.3 * rng.normal());
  }
}

}  // namespace

TEST(ModelConfig, Validation) {
  EXPECT_NO_THROW(tiny_config().validate());
  auto c = tiny_config();
  c.num_heads = 3;
  EXPECT_THROW(c.validate(), InputError);
  c = tiny_config();
  c.ff_size = 4;
  EXPECT_THROW(c.validate(), InputError);
  c = tiny_config();
  c.max_len = 2;
  EXPECT_THROW(c.validate(), InputError);
  c = tiny_config();
  c.num_classes = 0;
  EXPECT_THROW(c.validate(), InputError);
  EXPECT_EQ(ModelConfig::from_json(tiny_config().to_json()), tiny_config());
}

TEST(Model, ParameterCountMatchesClosedForm) {
  ModelConfig c;  // defaults: L=2, H=128, A=4, F=512, max_len=64
  c.vocab_size = 1000;
  c.num_classes = 5;
  const Model<float> m(c);
  const std::size_t V = 1000, H = 128, F = 512, L = 2, C = 5, h2 = 64, max_len = 64;
  const std::size_t formula = V * H + max_len * H + H + L * (4 * H * H + 2 * H * F + 4 * H) + V + (H * H + H) +
                              (H * h2 + h2) + (h2 * C + C);
  EXPECT_EQ(m.parameter_count(), formula);
  EXPECT_EQ(expected_parameter_count(c), formula);
  EXPECT_EQ(formula, 128000u + 8192u + 128u + 2u * (65536u + 131072u + 512u) + 1000u + 16512u + 8256u + 325u);
  auto odd = tiny_config();
  odd.hidden_size = 6;
  odd.num_heads = 3;
  EXPECT_EQ(Model<float>(odd).parameter_count(), expected_parameter_count(odd));
  EXPECT_EQ(Model<float>(odd).head().dense2_weight.value.shape(), (Shape{6, 3}));
}

TEST(Model, InitializationIsTruncatedAndSeeded) {
  const auto a = Model<float>::initialized(tiny_config(), 1);
  const auto b = Model<float>::initialized(tiny_config(), 1);
  const auto c = Model<float>::initialized(tiny_config(), 2);
  auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  bool differs = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i]->value, pb[i]->value);
    differs = differs || !(pa[i]->value == pc[i]->value);
    for (float v : pa[i]->value.storage()) {
      if (pa[i]->name.ends_with("_gain")) {
        EXPECT_EQ(v, 1.0f);
      } else {
        EXPECT_LE(std::abs(v), 0.04f + 1e-7f);
      }
    }
  }
  EXPECT_TRUE(differs);
  EXPECT_EQ(a.head().dense3_bias.value, Tensor<float>({3}));
}

TEST(Attention, MaskedKeysGetExactlyZeroWeight) {
  auto m = Model<double>::initialized(tiny_config(), 3);
  scramble(m, 4);
  Tape<double> tape(false);
  auto bound = bind(tape, m);
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 8, open = 1 + rng.below(n);
    std::vector<std::uint8_t> mask(n, 0);
    for (std::size_t i = 0; i < open; ++i) mask[i] = 1;
    auto x = tape.constant(random_tensor<double>({n, 8}, rng));
    std::vector<Tensor<double>> weights;
    multi_head_attention<double>(x, mask, bound.layers[0], 2, &weights);
    ASSERT_EQ(weights.size(), 2u);
    for (const auto& w : weights)
      for (std::size_t i = 0; i < n; ++i) {
        double row = 0;
        for (std::size_t j = 0; j < n; ++j) {
          if (!mask[j]) {
            EXPECT_LE(std::abs(w(i, j)), 1e-7);
          }
          row += w(i, j);
        }
        EXPECT_NEAR(row, 1.0, 1e-12);
      }
  }
}

TEST(Attention, SingleHeadMatchesDirectComputation) {
  auto c = tiny_config();
  c.num_heads = 1;
  auto m = Model<double>::initialized(c, 6);
  scramble(m, 7);
  Tape<double> tape(false);
  auto bound = bind(tape, m);
  Rng rng(8);
  const std::size_t n = 5, H = 8;
  const std::vector<std::uint8_t> mask{1, 1, 1, 0, 0};
  const auto xt = random_tensor<double>({n, H}, rng);
  const auto out = multi_head_attention<double>(tape.constant(xt), mask, bound.layers[0], 1).value();

  const auto& L = m.encoder().layers[0];
  auto mm = [&](const Tensor<double>& a, const Tensor<double>& b) {
    Tensor<double> r({a.rows(), b.cols()});
    for (std::size_t i = 0; i < a.rows(); ++i)
      for (std::size_t j = 0; j < b.cols(); ++j)
        for (std::size_t k = 0; k < a.cols(); ++k) r(i, j) += a(i, k) * b(k, j);
    return r;
  };
  const auto q = mm(xt, L.query.value), k = mm(xt, L.key.value), v = mm(xt, L.value.value);
  Tensor<double> ctx({n, H});
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> s(n, 0.0);
    double mx = -1e300, total = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (!mask[j]) continue;
      for (std::size_t d = 0; d < H; ++d) s[j] += q(i, d) * k(j, d);
      s[j] /= std::sqrt(static_cast<double>(H));
      mx = std::max(mx, s[j]);
    }
    for (std::size_t j = 0; j < n; ++j) total += mask[j] ? std::exp(s[j] - mx) : 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double w = mask[j] ? std::exp(s[j] - mx) / total : 0.0;
      for (std::size_t d = 0; d < H; ++d) ctx(i, d) += w * v(j, d);
    }
  }
  const auto expected = mm(ctx, L.output.value);
  for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_NEAR(out[i], expected[i], 1e-12);
}

TEST(Attention, UniformScoresGiveUniformWeights) {
  auto m = Model<double>::initialized(tiny_config(), 9);
  m.encoder().layers[0].query.value.fill(0.0);
  Tape<double> tape(false);
  auto bound = bind(tape, m);
  Rng rng(10);
  std::vector<Tensor<double>> weights;
  const std::vector<std::uint8_t> mask{1, 1, 1, 1, 0, 0};
  multi_head_attention<double>(tape.constant(random_tensor<double>({6, 8}, rng)), mask, bound.layers[0], 2, &weights);
  for (const auto& w : weights)
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t j = 0; j < 6; ++j) EXPECT_NEAR(w(i, j), j < 4 ? 0.25 : 0.0, 1e-15);
}

TEST(Attention, HandSizedIdentityProjections) {
  auto c = tiny_config();
  c.hidden_size = 2;
  c.num_heads = 1;
  c.ff_size = 2;
  auto m = Model<double>(c);
  auto& L = m.encoder().layers[0];
  for (auto* p : {&L.query, &L.key, &L.value, &L.output}) p->value = Tensor<double>::matrix(2, 2, {1, 0, 0, 1});
  Tape<double> tape(false);
  auto bound = bind(tape, m);
  const auto x = Tensor<double>::matrix(2, 2, {1, 0, 1, 1});
  std::vector<Tensor<double>> weights;
  const std::vector<std::uint8_t> mask{1, 1};
  const auto out = multi_head_attention<double>(tape.constant(x), mask, bound.layers[0], 1, &weights).value();
  // x x^T = [[1,1],[1,2]], scaled by 1/sqrt(2)
  const double s = 1.0 / std::sqrt(2.0);
  const double w01 = 0.5;
  const double w11 = std::exp(2 * s) / (std::exp(s) + std::exp(2 * s));
  EXPECT_NEAR(weights[0](0, 0), w01, 1e-15);
  EXPECT_NEAR(weights[0](0, 1), w01, 1e-15);
  EXPECT_NEAR(weights[0](1, 1), w11, 1e-15);
  EXPECT_NEAR(weights[0](1, 0), 1 - w11, 1e-15);
  EXPECT_NEAR(out(1, 0), 1.0, 1e-15);
  EXPECT_NEAR(out(1, 1), w11, 1e-15);
}

TEST(Encoder, PaddingDoesNotChangeRealRows) {
  auto c = tiny_config(20);
  c.max_len = 16;
  auto m = Model<float>::initialized(c, 11);
  scramble(m, 12, 0.3);
  Rng rng(13);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<std::uint32_t> body(1 + rng.below(5));
    for (auto& id : body) id = static_cast<std::uint32_t>(5 + rng.below(15));
    const auto short_seq = make_seq(body, body.size() + 3);
    const auto long_seq = make_seq(body, 16);
    Tape<float> t1(false), t2(false);
    auto b1 = bind(t1, m);
    auto b2 = bind(t2, m);
    const auto h1 = encoder_forward(b1, short_seq, ForwardMode::eval()).value();
    const auto h2 = encoder_forward(b2, long_seq, ForwardMode::eval()).value();
    EXPECT_EQ(h2.shape(), (Shape{16, 8}));
    for (std::size_t i = 0; i < short_seq.true_length; ++i)
      for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(h1(i, j), h2(i, j), 1e-5);
    const auto l1 = predict_logits(m, short_seq, false);
    const auto l2 = predict_logits(m, long_seq, false);
    const auto l3 = predict_logits(m, long_seq, true);
    for (std::size_t k = 0; k < l1.size(); ++k) {
      EXPECT_NEAR(l1[k], l2[k], 1e-5);
      EXPECT_NEAR(l2[k], l3[k], 1e-5);
    }
  }
}

TEST(Encoder, RejectsOutOfRangeIdsAndIsDeterministicInEval) {
  auto m = Model<float>::initialized(tiny_config(), 14);
  auto bad = make_seq({99}, 8);
  EXPECT_THROW(predict_logits(m, bad), DataError);
  const auto seq = make_seq({5, 6, 7}, 8);
  EXPECT_EQ(predict_logits(m, seq), predict_logits(m, seq));
}

TEST(Pool, MeanAndCls) {
  Tape<double> tape(false);
  auto h = tape.constant(Tensor<double>::matrix(3, 2, {1, 0, 0, 1, 7, 7}));
  const std::vector<std::uint8_t> two{1, 1, 0}, one{1, 0, 0}, none{0, 0, 0};
  auto mean = pool(h, two, Pooling::mean).value();
  EXPECT_DOUBLE_EQ(mean[0], 0.5);
  EXPECT_DOUBLE_EQ(mean[1], 0.5);
  EXPECT_EQ(pool(h, one, Pooling::mean).value(), pool(h, one, Pooling::cls).value());
  auto same = tape.constant(Tensor<double>::matrix(2, 2, {3, 4, 3, 4}));
  const std::vector<std::uint8_t> both{1, 1};
  EXPECT_EQ(pool(same, both, Pooling::mean).value().storage(), (std::vector<double>{3, 4}));
  EXPECT_THROW(pool(h, none, Pooling::mean), DataError);
}

TEST(Classify, ZeroWeightsGiveZeroLogits) {
  Model<double> m(tiny_config());
  Tape<double> tape(false);
  auto bound = bind(tape, m);
  Rng rng(15);
  auto logits = classify(tape.constant(random_tensor<double>({1, 8}, rng)), bound).value();
  for (double v : logits.storage()) EXPECT_EQ(v, 0.0);
}

TEST(Classify, HandExampleTwoClasses) {
  auto c = tiny_config(12, 2);
  c.hidden_size = 2;
  c.num_heads = 1;
  c.ff_size = 2;
  Model<double> m(c);
  auto& h = m.head();
  h.dense1_weight.value = Tensor<double>::matrix(2, 2, {1, 0, 0, 1});
  h.dense1_bias.value = Tensor<double>({2}, std::vector<double>{0.0, 1.0});
  h.dense2_weight.value = Tensor<double>::matrix(2, 1, {1, 1});
  h.dense3_weight.value = Tensor<double>::matrix(1, 2, {1, -1});
  h.dense3_bias.value = Tensor<double>({2}, std::vector<double>{0.5, 0.0});
  Tape<double> tape(false);
  auto bound = bind(tape, m);
  auto gelu_ref = [](double x) {
    return 0.5 * x * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (x + 0.044715 * x * x * x)));
  };
  const double a = gelu_ref(1.0), b = gelu_ref(-1.0 + 1.0);
  const double z = gelu_ref(a + b);
  auto logits = classify(tape.constant(Tensor<double>::matrix(1, 2, {1.0, -1.0})), bound).value();
  EXPECT_NEAR(logits[0], z + 0.5, 1e-15);
  EXPECT_NEAR(logits[1], -z, 1e-15);
}

TEST(Predict, SingleClassHeadIsCertain) {
  auto m = Model<float>::initialized(tiny_config(12, 1), 16);
  const auto logits = predict_logits(m, make_seq({5}, 8));
  const auto probs = softmax_probabilities<float>(logits);
  ASSERT_EQ(probs.size(), 1u);
  EXPECT_EQ(argmax(probs), 0u);
  EXPECT_DOUBLE_EQ(probs[0], 1.0);
}

namespace {

// Classification loss on two sequences plus an MLM loss, so every tensor
// (including the MLM bias) receives gradient.
Var<double> tiny_loss(Tape<double>& tape, Model<double>& m) {
  auto bound = bind(tape, m);
  const auto s1 = make_seq({5, 6, 7, 8}, 8);
  const auto s2 = make_seq({9, 10}, 8);
  auto l1 = sequence_logits(bound, s1, ForwardMode::eval(), false);
  auto l2 = sequence_logits(bound, s2, ForwardMode::eval(), false);
  const std::vector<std::size_t> y1{2}, y2{0};
  auto loss = add(cross_entropy(l1, y1), cross_entropy(l2, y2));
  auto hidden = encoder_forward(bound, s1, ForwardMode::eval());
  const std::vector<std::size_t> targets{6, 11};
  return add(loss, cross_entropy(mlm_logits(bound, hidden, {2, 4}), targets));
}

}  // namespace

TEST(GradCheck, TinyEncoderEndToEnd) {
  auto m = Model<double>::initialized(tiny_config(), 17);
  scramble(m, 18);
  GradCheckOptions opts;
  opts.coords_per_tensor = 20;
  const auto report = grad_check([&](Tape<double>& t) { return tiny_loss(t, m); }, m.parameters(), opts);
  for (const auto& [name, err] : report.per_parameter) EXPECT_LT(err, 1e-3) << name;
  EXPECT_LT(report.max_rel_error, 1e-3);
  EXPECT_GE(report.coords_checked, 20u * 10u);
}

TEST(GradCheck, DetectsCorruptionInEveryTensor) {
  auto m = Model<double>::initialized(tiny_config(), 19);
  scramble(m, 20);
  for (auto* target : m.parameters()) {
    const auto report = grad_check([&](Tape<double>& t) { return tiny_loss(t, m); }, m.parameters(), {},
                                   [&] {
                                     for (auto& g : target->grad.storage()) g *= 1.1;
                                   });
    double err = 0;
    for (const auto& [name, e] : report.per_parameter)
      if (name == target->name) err = e;
    EXPECT_GT(err, 5e-2) << target->name;
  }
}

TEST(Checkpoint, RoundTripIsBitExact) {
  test_support::TempDir dir;
  auto m = Model<float>::initialized(tiny_config(), 21);
  scramble(m, 22);
  const auto path = dir.file("m.ckpt");
  const nlohmann::json extra{{"clean", {{"lowercase", true}}}, {"mapping", {"a", "b", "c"}}};
  save_checkpoint(path, m, "abc123", extra);
  const auto loaded = load_checkpoint(path);
  EXPECT_EQ(loaded.model.config(), m.config());
  EXPECT_EQ(loaded.vocab_sha256, "abc123");
  EXPECT_EQ(loaded.extra.at("mapping"), extra.at("mapping"));
  auto pa = m.parameters();
  auto pb = loaded.model.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    ASSERT_EQ(pa[i]->value.size(), pb[i]->value.size());
    EXPECT_EQ(std::memcmp(pa[i]->value.data(), pb[i]->value.data(), 4 * pa[i]->value.size()), 0) << pa[i]->name;
  }
  EXPECT_EQ(serialize_checkpoint(loaded.model, loaded.vocab_sha256, loaded.extra), test_support::slurp(path));
  auto copy = loaded.model;
  const auto seq = make_seq({5, 6}, 8);
  EXPECT_EQ(predict_logits(m, seq), predict_logits(copy, seq));
}

TEST(Checkpoint, LayoutOnDisk) {
  auto m = Model<float>::initialized(tiny_config(), 23);
  const auto bytes = serialize_checkpoint(m, "h");
  EXPECT_EQ(bytes.substr(0, 4), "EMJB");
  EXPECT_EQ(bytes[4], '\x01');
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= std::uint64_t(static_cast<unsigned char>(bytes[5 + i])) << (8 * i);
  const auto header = nlohmann::json::parse(bytes.substr(13, len));
  EXPECT_EQ(header.at("vocab_sha256"), "h");
  const auto& first = header.at("tensors").at(0);
  EXPECT_EQ(first.at("name"), "encoder.token_embedding");
  EXPECT_EQ(first.at("dtype"), "float32");
  EXPECT_EQ(first.at("byte_offset"), 0);
  EXPECT_EQ(first.at("byte_len"), 4 * 12 * 8);
  EXPECT_EQ(bytes.size(), 13 + len + 4 * m.parameter_count());
  float v0;
  std::memcpy(&v0, bytes.data() + 13 + len, 4);  // host is little-endian here
  EXPECT_EQ(v0, m.encoder().token_embedding.value[0]);
}

TEST(Checkpoint, RejectsCorruptFiles) {
  auto m = Model<float>::initialized(tiny_config(), 24);
  const auto good = serialize_checkpoint(m, "h");
  EXPECT_NO_THROW(parse_checkpoint(good));
  EXPECT_THROW(parse_checkpoint(good.substr(0, good.size() - 1)), DataError);
  EXPECT_THROW(parse_checkpoint(good.substr(0, 10)), DataError);
  EXPECT_THROW(parse_checkpoint(good + "x"), DataError);
  auto bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_THROW(parse_checkpoint(bad_magic), DataError);
  auto bad_version = good;
  bad_version[4] = '\x02';
  EXPECT_THROW(parse_checkpoint(bad_version), DataError);
  auto bad_len = good;
  bad_len[12] = '\x7F';
  EXPECT_THROW(parse_checkpoint(bad_len), DataError);

  // shift one manifest offset: same byte count, inconsistent layout
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= std::uint64_t(static_cast<unsigned char>(good[5 + i])) << (8 * i);
  auto header = nlohmann::json::parse(good.substr(13, len));
  header["tensors"][1]["byte_offset"] = header["tensors"][1]["byte_offset"].get<std::uint64_t>() + 4;
  const auto text = header.dump();
  std::string rebuilt = good.substr(0, 5);
  for (int i = 0; i < 8; ++i) rebuilt += static_cast<char>((text.size() >> (8 * i)) & 0xFF);
  rebuilt += text + good.substr(13 + len);
  EXPECT_THROW(parse_checkpoint(rebuilt), DataError);
}

TEST(Checkpoint, VocabularyHashMismatchIsRefused) {
  const auto vocab = build_vocab(std::vector<std::string>{"a b c d e f g"}, 1, 100);
  auto c = tiny_config(vocab.size());
  auto m = Model<float>::initialized(c, 25);
  const auto loaded = parse_checkpoint(serialize_checkpoint(m, vocab.sha256()));
  EXPECT_NO_THROW(loaded.require_vocab(vocab));
  const auto other = build_vocab(std::vector<std::string>{"a b c d e f h"}, 1, 100);
  EXPECT_THROW(loaded.require_vocab(other), DataError);
  EXPECT_THROW(load_checkpoint("/nonexistent/m.ckpt"), InputError);
}
