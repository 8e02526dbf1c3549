#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "emoji/data_ingest.hpp"
#include "emoji/porter.hpp"
#include "emoji/utf8.hpp"

namespace emoji {

/// Every switch is explicit; the CLI owns the defaults.
struct CleanConfig {
  bool lowercase;
  bool strip_punctuation;
  bool keep_hashtags;
  bool keep_mentions;
  bool enable_stemming;
  bool collapse_whitespace;

  static CleanConfig all_on() { return {true, true, true, true, true, true}; }
  static CleanConfig identity() { return {false, false, true, true, false, false}; }

  bool operator==(const CleanConfig&) const = default;

  nlohmann::json to_json() const {
    return {{"lowercase", lowercase},           {"strip_punctuation", strip_punctuation},
            {"keep_hashtags", keep_hashtags},   {"keep_mentions", keep_mentions},
            {"enable_stemming", enable_stemming}, {"collapse_whitespace", collapse_whitespace}};
  }

  static CleanConfig from_json(const nlohmann::json& j) {
    return {j.at("lowercase").get<bool>(),     j.at("strip_punctuation").get<bool>(),
            j.at("keep_hashtags").get<bool>(), j.at("keep_mentions").get<bool>(),
            j.at("enable_stemming").get<bool>(), j.at("collapse_whitespace").get<bool>()};
  }
};

inline constexpr std::string_view kUrlToken = "<url>";

namespace detail {

inline bool starts_with_ci(std::string_view s, std::string_view prefix) {
  if (s.size() < prefix.size()) return false;
  for (std::size_t i = 0; i < prefix.size(); ++i) {
    char c = s[i];
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c + 32);
    if (c != prefix[i]) return false;
  }
  return true;
}

inline bool is_url(std::string_view token) {
  return token == kUrlToken || starts_with_ci(token, "http://") || starts_with_ci(token, "https://") ||
         starts_with_ci(token, "www.");
}

inline bool is_word_char(char32_t c) {
  if (c < 0x80) return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z');
  return !utf8::is_punct(c) && !utf8::is_space(c) && !utf8::is_emoji(c);
}

inline std::string clean_token(std::string_view token, const CleanConfig& cfg) {
  if (is_url(token)) return std::string(kUrlToken);
  const auto cps = utf8::decode(token);
  std::string out;
  if (!cfg.strip_punctuation) {
    std::size_t i = 0;
    while (i < cps.size() && ((!cfg.keep_hashtags && cps[i].value == '#') || (!cfg.keep_mentions && cps[i].value == '@')))
      ++i;
    if (i > 0 && i < cps.size() && is_url(token.substr(cps[i].begin))) return std::string(kUrlToken);
    for (; i < cps.size(); ++i) {
      if (cfg.lowercase && utf8::is_upper(cps[i].value)) {
        utf8::append(out, utf8::to_lower(cps[i].value));
      } else {
        out.append(token.substr(cps[i].begin, cps[i].length));
      }
    }
    return out;
  }
  for (std::size_t i = 0; i < cps.size(); ++i) {
    const char32_t c = cps[i].value;
    if (utf8::is_apostrophe(c)) continue;
    if (c == '#' || c == '@') {
      const bool keep = c == '#' ? cfg.keep_hashtags : cfg.keep_mentions;
      const bool word_initial = out.empty() || out.back() == ' ';
      const bool followed = i + 1 < cps.size() && is_word_char(cps[i + 1].value);
      if (keep && word_initial && followed) {
        out += static_cast<char>(c);
      } else {
        out += ' ';
      }
      continue;
    }
    if (utf8::is_punct(c)) {
      out += ' ';
      continue;
    }
    if (cfg.lowercase && utf8::is_upper(c)) {
      utf8::append(out, utf8::to_lower(c));
    } else {
      out.append(token.substr(cps[i].begin, cps[i].length));
    }
  }
  return out;
}

}  // namespace detail

/// Tweet normalization. Emoji glyphs become spaces (they are labels, not
/// features), URLs collapse to "<url>", then each token is lowercased and
/// punctuation-stripped as configured. '#' and '@' survive stripping only as
/// word-initial markers. Stemming is not applied here (see preprocess_corpus),
/// which keeps clean_text idempotent for every configuration.
inline std::string clean_text(std::string_view text, const CleanConfig& cfg) {
  std::string no_emoji;
  no_emoji.reserve(text.size());
  for (std::size_t pos = 0; pos < text.size();) {
    const auto cp = utf8::decode_at(text, pos);
    if (utf8::is_emoji(cp.value)) {
      no_emoji += ' ';
    } else {
      no_emoji.append(text.substr(cp.begin, cp.length));
    }
    pos += cp.length;
  }

  // Alternate whitespace runs and tokens so whitespace can be kept verbatim.
  std::string joined;
  std::string token;
  auto flush = [&] {
    if (!token.empty()) joined += detail::clean_token(token, cfg);
    token.clear();
  };
  for (std::size_t pos = 0; pos < no_emoji.size();) {
    const auto cp = utf8::decode_at(no_emoji, pos);
    if (utf8::is_space(cp.value)) {
      flush();
      joined.append(no_emoji, cp.begin, cp.length);
    } else {
      token.append(no_emoji, cp.begin, cp.length);
    }
    pos += cp.length;
  }
  flush();

  if (cfg.collapse_whitespace) {
    std::string out;
    for (const auto& t : utf8::split_whitespace(joined)) {
      if (!out.empty()) out += ' ';
      out += t;
    }
    return out;
  }
  return detail::trim(joined);
}

inline bool is_lower_ascii_word(std::string_view w) {
  if (w.empty()) return false;
  for (char c : w)
    if (c < 'a' || c > 'z') return false;
  return true;
}

/// Porter-stems every lowercase ASCII word; other tokens (hashtags, mentions,
/// "<url>", non-ASCII words) pass through. Tokens are re-joined with spaces.
inline std::string stem_text(std::string_view text) {
  std::string out;
  for (const auto& t : utf8::split_whitespace(text)) {
    if (!out.empty()) out += ' ';
    out += is_lower_ascii_word(t) ? porter_stem(t) : t;
  }
  return out;
}

/// clean_text followed by optional stemming (order: lowercase, strip, stem).
inline std::string preprocess_text(std::string_view text, const CleanConfig& cfg) {
  std::string cleaned = clean_text(text, cfg);
  return cfg.enable_stemming ? stem_text(cleaned) : cleaned;
}

struct PreprocessResult {
  std::vector<RawTweetRecord> records;
  std::size_t dropped = 0;
};

/// Cleans every record; records whose text becomes empty are dropped and
/// counted. Labels and order are untouched.
inline PreprocessResult preprocess_corpus(const std::vector<RawTweetRecord>& records, const CleanConfig& cfg) {
  PreprocessResult result;
  result.records.reserve(records.size());
  for (const auto& r : records) {
    RawTweetRecord out = r;
    out.text = preprocess_text(r.text, cfg);
    if (out.text.empty()) {
      ++result.dropped;
      continue;
    }
    result.records.push_back(std::move(out));
  }
  return result;
}

}  // namespace emoji
