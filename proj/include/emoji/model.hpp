#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "emoji/errors.hpp"
#include "emoji/numeric/ops.hpp"
#include "emoji/tokenizer.hpp"

namespace emoji {

enum class Pooling { mean, cls };

inline std::string to_string(Pooling p) { return p == Pooling::mean ? "mean" : "cls"; }

inline Pooling parse_pooling(std::string_view s) {
  if (s == "mean") return Pooling::mean;
  if (s == "cls") return Pooling::cls;
  throw InputError("unknown pooling mode '" + std::string(s) + "' (expected mean or cls)");
}

struct ModelConfig {
  std::size_t num_layers = 2;
  std::size_t hidden_size = 128;
  std::size_t num_heads = 4;
  std::size_t ff_size = 512;
  std::size_t max_len = 64;
  std::size_t vocab_size = 0;
  std::size_t num_classes = 0;
  double dropout = 0.1;
  Pooling pooling = Pooling::mean;

  std::size_t head_dim() const { return hidden_size / num_heads; }
  std::size_t head_hidden() const { return (hidden_size + 1) / 2; }

  void validate() const {
    auto fail = [](const std::string& m) { throw InputError("invalid model config: " + m); };
    if (num_layers < 1) fail("num_layers must be >= 1");
    if (hidden_size < 1 || num_heads < 1) fail("hidden_size and num_heads must be >= 1");
    if (hidden_size % num_heads != 0) fail("hidden_size must be divisible by num_heads");
    if (ff_size < hidden_size) fail("ff_size must be >= hidden_size");
    if (max_len < 3) fail("max_len must be >= 3");
    if (vocab_size < Vocabulary::kNumSpecials) fail("vocab_size must cover the special tokens");
    if (num_classes < 1) fail("num_classes must be >= 1");
    if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must be in [0,1)");
  }

  bool operator==(const ModelConfig&) const = default;

  nlohmann::json to_json() const {
    return {{"num_layers", num_layers}, {"hidden_size", hidden_size}, {"num_heads", num_heads},
            {"ff_size", ff_size},       {"max_len", max_len},         {"vocab_size", vocab_size},
            {"num_classes", num_classes}, {"dropout", dropout},       {"pooling", to_string(pooling)}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.num_layers = j.at("num_layers").get<std::size_t>();
    c.hidden_size = j.at("hidden_size").get<std::size_t>();
    c.num_heads = j.at("num_heads").get<std::size_t>();
    c.ff_size = j.at("ff_size").get<std::size_t>();
    c.max_len = j.at("max_len").get<std::size_t>();
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.num_classes = j.at("num_classes").get<std::size_t>();
    c.dropout = j.at("dropout").get<double>();
    c.pooling = parse_pooling(j.at("pooling").get<std::string>());
    return c;
  }
};

/// Closed-form parameter count implied by the tensor shapes below.
inline std::size_t expected_parameter_count(const ModelConfig& c) {
  const std::size_t V = c.vocab_size, H = c.hidden_size, F = c.ff_size, L = c.num_layers, C = c.num_classes;
  const std::size_t h2 = c.head_hidden();
  const std::size_t embeddings = V * H + c.max_len * H + H;
  const std::size_t per_layer = 4 * H * H + 2 * H * F + 4 * H;
  const std::size_t mlm = V;
  const std::size_t head = (H * H + H) + (H * h2 + h2) + (h2 * C + C);
  return embeddings + L * per_layer + mlm + head;
}

template <typename T>
using Param = numeric::Parameter<T>;

template <typename T>
struct EncoderLayer {
  Param<T> query, key, value, output;  // [H x H]
  Param<T> ff_in;                      // [H x F]
  Param<T> ff_out;                     // [F x H]
  Param<T> ln1_gain, ln1_bias, ln2_gain, ln2_bias;  // [H]
};

template <typename T>
struct EncoderParams {
  Param<T> token_embedding;     // [V x H], also the tied MLM projection
  Param<T> position_embedding;  // [max_len x H]
  Param<T> segment_embedding;   // [1 x H]
  std::vector<EncoderLayer<T>> layers;
  Param<T> mlm_bias;            // [V]
};

template <typename T>
struct ClassifierHead {
  Param<T> dense1_weight, dense1_bias;  // [H x H], [H]
  Param<T> dense2_weight, dense2_bias;  // [H x ceil(H/2)], [ceil(H/2)]
  Param<T> dense3_weight, dense3_bias;  // [ceil(H/2) x C], [C]
};

/// Encoder plus classification head. Parameters live in stable storage, so
/// pointers from parameters() remain valid for the model's lifetime.
template <typename T>
class Model {
 public:
  Model() = default;

  /// Zero-filled parameters with the shapes implied by `config`; LN gains are 1.
  explicit Model(const ModelConfig& config) : config_(config) {
    config_.validate();
    const std::size_t V = config.vocab_size, H = config.hidden_size, F = config.ff_size;
    const std::size_t h2 = config.head_hidden(), C = config.num_classes;
    auto p = [](std::string name, numeric::Shape shape, T fill = T{0}) {
      return Param<T>(std::move(name), numeric::Tensor<T>(std::move(shape), fill));
    };
    enc_.token_embedding = p("encoder.token_embedding", {V, H});
    enc_.position_embedding = p("encoder.position_embedding", {config.max_len, H});
    enc_.segment_embedding = p("encoder.segment_embedding", {1, H});
    for (std::size_t l = 0; l < config.num_layers; ++l) {
      const std::string pre = "encoder.layers." + std::to_string(l) + ".";
      enc_.layers.push_back({p(pre + "query", {H, H}), p(pre + "key", {H, H}), p(pre + "value", {H, H}),
                             p(pre + "output", {H, H}), p(pre + "ff_in", {H, F}), p(pre + "ff_out", {F, H}),
                             p(pre + "ln1_gain", {H}, T{1}), p(pre + "ln1_bias", {H}), p(pre + "ln2_gain", {H}, T{1}),
                             p(pre + "ln2_bias", {H})});
    }
    enc_.mlm_bias = p("encoder.mlm_bias", {V});
    head_.dense1_weight = p("head.dense1.weight", {H, H});
    head_.dense1_bias = p("head.dense1.bias", {H});
    head_.dense2_weight = p("head.dense2.weight", {H, h2});
    head_.dense2_bias = p("head.dense2.bias", {h2});
    head_.dense3_weight = p("head.dense3.weight", {h2, C});
    head_.dense3_bias = p("head.dense3.bias", {C});
  }

  /// Truncated-normal (sigma 0.02, cut at 2 sigma) weights from the "init"
  /// sub-stream of `seed`; biases zero, layer-norm gains one.
  static Model initialized(const ModelConfig& config, std::uint64_t seed) {
    Model m(config);
    m.initialize(seed);
    return m;
  }

  void initialize(std::uint64_t seed) {
    numeric::Rng rng = numeric::Rng(seed).stream("init");
    for (auto* p : parameters()) {
      if (is_weight(*p)) {
        for (auto& v : p->value.storage()) v = static_cast<T>(rng.truncated_normal(0.02));
      } else {
        p->value.fill(is_gain(*p) ? T{1} : T{0});
      }
      p->zero_grad();
    }
  }

  const ModelConfig& config() const { return config_; }
  EncoderParams<T>& encoder() { return enc_; }
  const EncoderParams<T>& encoder() const { return enc_; }
  ClassifierHead<T>& head() { return head_; }
  const ClassifierHead<T>& head() const { return head_; }

  /// Every parameter in canonical (checkpoint) order.
  std::vector<Param<T>*> parameters() {
    std::vector<Param<T>*> out{&enc_.token_embedding, &enc_.position_embedding, &enc_.segment_embedding};
    for (auto& l : enc_.layers)
      for (auto* q : {&l.query, &l.key, &l.value, &l.output, &l.ff_in, &l.ff_out, &l.ln1_gain, &l.ln1_bias,
                      &l.ln2_gain, &l.ln2_bias})
        out.push_back(q);
    out.push_back(&enc_.mlm_bias);
    for (auto* q : {&head_.dense1_weight, &head_.dense1_bias, &head_.dense2_weight, &head_.dense2_bias,
                    &head_.dense3_weight, &head_.dense3_bias})
      out.push_back(q);
    return out;
  }

  std::vector<const Param<T>*> parameters() const {
    auto ps = const_cast<Model*>(this)->parameters();
    return {ps.begin(), ps.end()};
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto* p : parameters()) n += p->value.size();
    return n;
  }

  /// Fresh classification head for `num_classes`, keeping the encoder.
  void reset_head(std::size_t num_classes, std::uint64_t seed) {
    Model fresh = Model::initialized([&] {
      ModelConfig c = config_;
      c.num_classes = num_classes;
      return c;
    }(), seed);
    config_.num_classes = num_classes;
    head_ = std::move(fresh.head_);
  }

  void zero_grad() {
    for (auto* p : parameters()) p->zero_grad();
  }

  template <typename U>
  Model<U> cast() const {
    Model<U> out(config_);
    auto src = parameters();
    auto dst = out.parameters();
    for (std::size_t i = 0; i < src.size(); ++i) *dst[i] = src[i]->template cast<U>();
    return out;
  }

 private:
  static bool is_gain(const Param<T>& p) { return p.name.ends_with("_gain"); }
  static bool is_weight(const Param<T>& p) {
    return p.value.shape().size() == 2;
  }

  ModelConfig config_;
  EncoderParams<T> enc_;
  ClassifierHead<T> head_;
};

/// Parameter leaves of one model on one tape.
template <typename T>
struct BoundModel {
  using V = numeric::Var<T>;
  struct Layer {
    V query, key, value, output, ff_in, ff_out, ln1_gain, ln1_bias, ln2_gain, ln2_bias;
  };
  numeric::Tape<T>* tape;
  const ModelConfig* config;
  V token_embedding, position_embedding, segment_embedding, mlm_bias;
  std::vector<Layer> layers;
  V d1w, d1b, d2w, d2b, d3w, d3b;
};

template <typename T>
BoundModel<T> bind(numeric::Tape<T>& tape, Model<T>& m) {
  auto& e = m.encoder();
  auto& h = m.head();
  BoundModel<T> b{&tape, &m.config(), tape.parameter(e.token_embedding), tape.parameter(e.position_embedding),
                  tape.parameter(e.segment_embedding), tape.parameter(e.mlm_bias), {}, {}, {}, {}, {}, {}, {}};
  for (auto& l : e.layers)
    b.layers.push_back({tape.parameter(l.query), tape.parameter(l.key), tape.parameter(l.value),
                        tape.parameter(l.output), tape.parameter(l.ff_in), tape.parameter(l.ff_out),
                        tape.parameter(l.ln1_gain), tape.parameter(l.ln1_bias), tape.parameter(l.ln2_gain),
                        tape.parameter(l.ln2_bias)});
  b.d1w = tape.parameter(h.dense1_weight);
  b.d1b = tape.parameter(h.dense1_bias);
  b.d2w = tape.parameter(h.dense2_weight);
  b.d2b = tape.parameter(h.dense2_bias);
  b.d3w = tape.parameter(h.dense3_weight);
  b.d3b = tape.parameter(h.dense3_bias);
  return b;
}

/// Dropout is applied only when `rng` is non-null and the rate is positive.
struct ForwardMode {
  bool train = false;
  numeric::Rng* rng = nullptr;
  double dropout = 0.0;

  static ForwardMode eval() { return {}; }
  static ForwardMode training(numeric::Rng& r, double rate) { return {true, &r, rate}; }
};

template <typename T>
numeric::Var<T> maybe_dropout(numeric::Var<T> x, const ForwardMode& mode) {
  if (!mode.train || !mode.rng || mode.dropout <= 0.0) return x;
  return numeric::dropout(x, mode.dropout, *mode.rng);
}

/// Multi-head self-attention over the rows of x [n x H]. Keys whose mask
/// entry is 0 receive an additive -inf score, hence exactly zero weight.
/// When `weights_out` is given, each head's attention matrix is appended.
template <typename T>
numeric::Var<T> multi_head_attention(numeric::Var<T> x, std::span<const std::uint8_t> key_mask,
                                     const typename BoundModel<T>::Layer& layer, std::size_t num_heads,
                                     std::vector<numeric::Tensor<T>>* weights_out = nullptr) {
  using namespace numeric;
  const std::size_t H = x.value().cols();
  if (num_heads == 0 || H % num_heads != 0) throw InputError("hidden size must be divisible by the head count");
  const std::size_t d = H / num_heads;
  const T scale_factor = T{1} / static_cast<T>(std::sqrt(static_cast<double>(d)));
  auto q = matmul(x, layer.query);
  auto k = matmul(x, layer.key);
  auto v = matmul(x, layer.value);
  std::vector<Var<T>> heads;
  heads.reserve(num_heads);
  for (std::size_t h = 0; h < num_heads; ++h) {
    auto qh = num_heads == 1 ? q : slice_cols(q, h * d, d);
    auto kh = num_heads == 1 ? k : slice_cols(k, h * d, d);
    auto vh = num_heads == 1 ? v : slice_cols(v, h * d, d);
    auto weights = masked_softmax_rows(scale(matmul_nt(qh, kh), scale_factor), key_mask);
    if (weights_out) weights_out->push_back(weights.value());
    heads.push_back(matmul(weights, vh));
  }
  auto merged = num_heads == 1 ? heads.front() : concat_cols(heads);
  return matmul(merged, layer.output);
}

/// Hidden states [n x H] for the first n = ids.size() positions. Every
/// position is computed; masked positions are excluded only as keys.
template <typename T>
numeric::Var<T> encoder_hidden(const BoundModel<T>& m, std::span<const std::uint32_t> ids,
                               std::span<const std::uint8_t> mask, const ForwardMode& mode) {
  using namespace numeric;
  const ModelConfig& c = *m.config;
  const std::size_t n = ids.size();
  if (n == 0 || n > c.max_len) throw InputError("sequence length " + std::to_string(n) + " outside 1.." + std::to_string(c.max_len));
  if (mask.size() != n) throw InputError("attention mask length differs from sequence length");
  std::vector<std::size_t> rows(n), positions(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (ids[i] >= c.vocab_size)
      throw DataError("token id " + std::to_string(ids[i]) + " outside vocabulary of size " + std::to_string(c.vocab_size));
    rows[i] = ids[i];
    positions[i] = i;
  }
  auto x = add(gather_rows(m.token_embedding, std::move(rows)), gather_rows(m.position_embedding, std::move(positions)));
  x = maybe_dropout(add_row(x, m.segment_embedding), mode);
  for (const auto& layer : m.layers) {
    auto attn = maybe_dropout(multi_head_attention<T>(x, mask, layer, c.num_heads), mode);
    x = layer_norm(add(x, attn), layer.ln1_gain, layer.ln1_bias);
    auto ff = matmul(gelu(matmul(x, layer.ff_in)), layer.ff_out);
    x = layer_norm(add(x, maybe_dropout(ff, mode)), layer.ln2_gain, layer.ln2_bias);
  }
  return x;
}

/// Full padded forward: hidden states [max_len x H] for an encoded sequence.
template <typename T>
numeric::Var<T> encoder_forward(const BoundModel<T>& m, const TokenSequence& seq, const ForwardMode& mode) {
  return encoder_hidden(m, std::span<const std::uint32_t>(seq.ids), std::span<const std::uint8_t>(seq.attention_mask), mode);
}

/// Sentence vector [1 x H]: mean over unmasked rows, or row 0.
template <typename T>
numeric::Var<T> pool(numeric::Var<T> hidden, std::span<const std::uint8_t> mask, Pooling mode) {
  if (mask.size() != hidden.value().rows()) throw InputError("pool: mask length differs from row count");
  if (std::find(mask.begin(), mask.end(), std::uint8_t{1}) == mask.end()) throw DataError("pool: every position is masked");
  if (mode == Pooling::mean) return numeric::masked_mean_rows(hidden, mask);
  return numeric::gather_rows(hidden, {0});
}

/// dense1 -> GELU -> dense2 -> GELU -> dense3, giving logits [1 x C].
template <typename T>
numeric::Var<T> classify(numeric::Var<T> pooled, const BoundModel<T>& m) {
  using namespace numeric;
  auto h = gelu(add_row(matmul(pooled, m.d1w), m.d1b));
  h = gelu(add_row(matmul(h, m.d2w), m.d2b));
  return add_row(matmul(h, m.d3w), m.d3b);
}

/// Classification logits [1 x C] for one encoded sequence. With `trim`,
/// trailing padding is not fed through the encoder at all; the masked path
/// gives the same logits up to rounding.
template <typename T>
numeric::Var<T> sequence_logits(const BoundModel<T>& m, const TokenSequence& seq, const ForwardMode& mode,
                                bool trim = true) {
  const std::size_t n = trim ? seq.true_length : seq.ids.size();
  std::span<const std::uint32_t> ids(seq.ids.data(), n);
  std::span<const std::uint8_t> mask(seq.attention_mask.data(), n);
  auto hidden = encoder_hidden(m, ids, mask, mode);
  return classify(pool(hidden, mask, m.config->pooling), m);
}

/// MLM logits [k x V] at the given positions, through the tied embedding.
template <typename T>
numeric::Var<T> mlm_logits(const BoundModel<T>& m, numeric::Var<T> hidden, std::vector<std::size_t> positions) {
  using namespace numeric;
  return add_row(matmul_nt(gather_rows(hidden, std::move(positions)), m.token_embedding), m.mlm_bias);
}

/// Softmax of a logits row in double precision.
template <typename T>
std::vector<double> softmax_probabilities(std::span<const T> logits) {
  std::vector<double> p(logits.size());
  if (p.empty()) return p;
  double mx = static_cast<double>(logits[0]);
  for (auto v : logits) mx = std::max(mx, static_cast<double>(v));
  double total = 0;
  for (std::size_t i = 0; i < p.size(); ++i) total += (p[i] = std::exp(static_cast<double>(logits[i]) - mx));
  for (auto& v : p) v /= total;
  return p;
}

inline std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

/// Eval-mode logits for one sequence.
template <typename T>
std::vector<T> predict_logits(Model<T>& model, const TokenSequence& seq, bool trim = true) {
  numeric::Tape<T> tape(false);
  auto bound = bind(tape, model);
  const auto& v = sequence_logits(bound, seq, ForwardMode::eval(), trim).value();
  return {v.storage().begin(), v.storage().end()};
}

}  // namespace emoji
