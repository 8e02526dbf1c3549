#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "emoji/csv.hpp"
#include "emoji/errors.hpp"
#include "emoji/hashing.hpp"
#include "emoji/utf8.hpp"

namespace emoji {

/// Word-level vocabulary. Ids 0..4 are the reserved specials.
class Vocabulary {
 public:
  static constexpr std::uint32_t kPad = 0;
  static constexpr std::uint32_t kUnk = 1;
  static constexpr std::uint32_t kCls = 2;
  static constexpr std::uint32_t kSep = 3;
  static constexpr std::uint32_t kMask = 4;
  static constexpr std::size_t kNumSpecials = 5;
  static constexpr std::array<std::string_view, kNumSpecials> kSpecialNames{"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};

  static bool is_special_name(std::string_view token) {
    return std::find(kSpecialNames.begin(), kSpecialNames.end(), token) != kSpecialNames.end();
  }

  Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

  /// Builds from the ordinary (non-special) tokens in id order.
  explicit Vocabulary(const std::vector<std::string>& words) {
    for (auto name : kSpecialNames) add(std::string(name));
    for (const auto& w : words) {
      if (w.empty() || is_special_name(w)) throw DataError("invalid vocabulary token '" + w + "'");
      for (char c : w)
        if (c == '\n' || c == '\r') throw DataError("vocabulary token contains a line break");
      if (!add(w)) throw DataError("duplicate vocabulary token '" + w + "'");
    }
  }

  std::size_t size() const { return id_to_token_.size(); }

  /// Id of `token`; unknown words and literal special names map to UNK.
  std::uint32_t id(std::string_view token) const {
    if (is_special_name(token)) return kUnk;
    auto it = token_to_id_.find(std::string(token));
    return it == token_to_id_.end() ? kUnk : it->second;
  }

  bool contains(std::string_view token) const {
    return !is_special_name(token) && token_to_id_.count(std::string(token)) > 0;
  }

  const std::string& token(std::uint32_t id) const {
    if (id >= size()) throw DataError("token id " + std::to_string(id) + " outside vocabulary of size " + std::to_string(size()));
    return id_to_token_[id];
  }

  static bool is_special(std::uint32_t id) { return id < kNumSpecials; }

  const std::vector<std::string>& tokens() const { return id_to_token_; }

  /// File form: one token per line, line number = id.
  std::string serialize() const {
    std::string out;
    for (const auto& t : id_to_token_) {
      out += t;
      out += '\n';
    }
    return out;
  }

  std::string sha256() const { return sha256_hex(serialize()); }

  static Vocabulary parse(std::string_view text) {
    std::vector<std::string> lines;
    std::size_t start = 0;
    while (start < text.size()) {
      const std::size_t nl = text.find('\n', start);
      if (nl == std::string_view::npos) throw DataError("vocabulary file does not end with a newline");
      lines.emplace_back(text.substr(start, nl - start));
      start = nl + 1;
    }
    if (lines.size() < kNumSpecials) throw DataError("vocabulary file has fewer than 5 lines");
    for (std::size_t i = 0; i < kNumSpecials; ++i)
      if (lines[i] != kSpecialNames[i])
        throw DataError("vocabulary line " + std::to_string(i) + " must be " + std::string(kSpecialNames[i]));
    return Vocabulary(std::vector<std::string>(lines.begin() + kNumSpecials, lines.end()));
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write vocabulary: " + path);
    out << serialize();
    if (!out) throw InputError("failed writing vocabulary: " + path);
  }

  static Vocabulary load(const std::string& path) { return parse(csv::read_file(path)); }

  bool operator==(const Vocabulary& other) const { return id_to_token_ == other.id_to_token_; }

 private:
  bool add(std::string token) {
    if (!token_to_id_.emplace(token, static_cast<std::uint32_t>(id_to_token_.size())).second) return false;
    id_to_token_.push_back(std::move(token));
    return true;
  }

  std::unordered_map<std::string, std::uint32_t> token_to_id_;
  std::vector<std::string> id_to_token_;
};

/// Ranks whitespace tokens by (frequency desc, token asc). Tokens rarer than
/// `min_freq` are dropped and the total size is capped at `max_size`.
inline Vocabulary build_vocab(std::span<const std::string> corpus, std::size_t min_freq, std::size_t max_size) {
  if (corpus.empty()) throw DataError("cannot build a vocabulary from an empty corpus");
  if (min_freq < 1) throw InputError("min_freq must be at least 1");
  if (max_size < Vocabulary::kNumSpecials + 1)
    throw InputError("max_size must be at least " + std::to_string(Vocabulary::kNumSpecials + 1));
  std::map<std::string, std::size_t> freq;
  for (const auto& text : corpus)
    for (auto& t : utf8::split_whitespace(text))
      if (!Vocabulary::is_special_name(t)) ++freq[t];
  std::vector<std::pair<std::string, std::size_t>> ranked(freq.begin(), freq.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> words;
  for (auto& [tok, n] : ranked) {
    if (n < min_freq) continue;
    if (words.size() + Vocabulary::kNumSpecials >= max_size) break;
    words.push_back(tok);
  }
  return Vocabulary(words);
}

inline Vocabulary build_vocab(const std::vector<std::string>& corpus, std::size_t min_freq, std::size_t max_size) {
  return build_vocab(std::span<const std::string>(corpus), min_freq, max_size);
}

struct TokenSequence {
  std::vector<std::uint32_t> ids;
  std::vector<std::uint8_t> attention_mask;
  std::size_t true_length = 0;

  std::size_t max_len() const { return ids.size(); }
  bool operator==(const TokenSequence&) const = default;
};

/// CLS + tokens + SEP, head-truncated to max_len, PAD-filled.
inline TokenSequence encode(std::string_view text, const Vocabulary& vocab, std::size_t max_len) {
  if (max_len < 3) throw InputError("max_len must be at least 3");
  TokenSequence seq;
  seq.ids.assign(max_len, Vocabulary::kPad);
  seq.attention_mask.assign(max_len, 0);
  std::size_t n = 0;
  seq.ids[n++] = Vocabulary::kCls;
  for (const auto& t : utf8::split_whitespace(text)) {
    if (n + 1 >= max_len) break;
    seq.ids[n++] = vocab.id(t);
  }
  seq.ids[n++] = Vocabulary::kSep;
  seq.true_length = n;
  std::fill(seq.attention_mask.begin(), seq.attention_mask.begin() + static_cast<std::ptrdiff_t>(n), 1);
  return seq;
}

inline std::vector<std::string> decode(std::span<const std::uint32_t> ids, const Vocabulary& vocab) {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (auto id : ids) out.push_back(vocab.token(id));
  return out;
}

}  // namespace emoji
