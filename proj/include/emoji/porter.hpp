#pragma once

#include <array>
#include <string>
#include <string_view>

namespace emoji {

/// The original (1980) Porter suffix-stripping algorithm for lowercase ASCII
/// words. Within each step the first rule whose suffix matches decides the
/// outcome, even when its measure condition then fails.
class PorterStemmer {
 public:
  static std::string stem(std::string_view input) {
    std::string w(input);
    if (w.empty()) return w;
    step1a(w);
    step1b(w);
    step1c(w);
    step2(w);
    step3(w);
    step4(w);
    step5a(w);
    step5b(w);
    return w;
  }

 private:
  struct Rule {
    std::string_view suffix;
    std::string_view replacement;
  };

  static bool consonant(std::string_view w, std::size_t i) {
    switch (w[i]) {
      case 'a': case 'e': case 'i': case 'o': case 'u':
        return false;
      case 'y':
        return i == 0 || !consonant(w, i - 1);
      default:
        return true;
    }
  }

  // m in [C](VC)^m[V]
  static int measure(std::string_view w) {
    int m = 0;
    std::size_t i = 0;
    const std::size_t n = w.size();
    while (i < n && consonant(w, i)) ++i;
    while (i < n) {
      while (i < n && !consonant(w, i)) ++i;
      if (i >= n) break;
      while (i < n && consonant(w, i)) ++i;
      ++m;
    }
    return m;
  }

  static bool has_vowel(std::string_view w) {
    for (std::size_t i = 0; i < w.size(); ++i)
      if (!consonant(w, i)) return true;
    return false;
  }

  static bool ends_double_consonant(std::string_view w) {
    const std::size_t n = w.size();
    return n >= 2 && w[n - 1] == w[n - 2] && consonant(w, n - 1);
  }

  // *o: cvc where the final c is not w, x or y
  static bool ends_cvc(std::string_view w) {
    const std::size_t n = w.size();
    if (n < 3) return false;
    if (!consonant(w, n - 3) || consonant(w, n - 2) || !consonant(w, n - 1)) return false;
    const char c = w[n - 1];
    return c != 'w' && c != 'x' && c != 'y';
  }

  static bool ends_with(std::string_view w, std::string_view s) {
    return w.size() >= s.size() && w.substr(w.size() - s.size()) == s;
  }

  static std::string_view stem_of(std::string_view w, std::string_view suffix) {
    return w.substr(0, w.size() - suffix.size());
  }

  template <std::size_t N, typename Cond>
  static void apply_first(std::string& w, const std::array<Rule, N>& rules, Cond cond) {
    for (const auto& r : rules) {
      if (!ends_with(w, r.suffix)) continue;
      const std::string_view base = stem_of(w, r.suffix);
      if (cond(base)) w = std::string(base) + std::string(r.replacement);
      return;
    }
  }

  static void step1a(std::string& w) {
    static constexpr std::array<Rule, 4> rules{{{"sses", "ss"}, {"ies", "i"}, {"ss", "ss"}, {"s", ""}}};
    apply_first(w, rules, [](std::string_view) { return true; });
  }

  static void step1b(std::string& w) {
    if (ends_with(w, "eed")) {
      if (measure(stem_of(w, "eed")) > 0) w.pop_back();
      return;
    }
    std::string base;
    if (ends_with(w, "ed") && has_vowel(stem_of(w, "ed"))) {
      base = stem_of(w, "ed");
    } else if (ends_with(w, "ing") && has_vowel(stem_of(w, "ing"))) {
      base = stem_of(w, "ing");
    } else {
      return;
    }
    if (ends_with(base, "at") || ends_with(base, "bl") || ends_with(base, "iz")) {
      base += 'e';
    } else if (ends_double_consonant(base)) {
      const char c = base.back();
      if (c != 'l' && c != 's' && c != 'z') base.pop_back();
    } else if (measure(base) == 1 && ends_cvc(base)) {
      base += 'e';
    }
    w = std::move(base);
  }

  static void step1c(std::string& w) {
    if (ends_with(w, "y") && has_vowel(stem_of(w, "y"))) w.back() = 'i';
  }

  static void step2(std::string& w) {
    static constexpr std::array<Rule, 20> rules{{
        {"ational", "ate"}, {"tional", "tion"}, {"enci", "ence"},   {"anci", "ance"},   {"izer", "ize"},
        {"abli", "able"},   {"alli", "al"},     {"entli", "ent"},   {"eli", "e"},       {"ousli", "ous"},
        {"ization", "ize"}, {"ation", "ate"},   {"ator", "ate"},    {"alism", "al"},    {"iveness", "ive"},
        {"fulness", "ful"}, {"ousness", "ous"}, {"aliti", "al"},    {"iviti", "ive"},   {"biliti", "ble"},
    }};
    apply_first(w, rules, [](std::string_view s) { return measure(s) > 0; });
  }

  static void step3(std::string& w) {
    static constexpr std::array<Rule, 7> rules{{
        {"icate", "ic"}, {"ative", ""}, {"alize", "al"}, {"iciti", "ic"}, {"ical", "ic"}, {"ful", ""}, {"ness", ""},
    }};
    apply_first(w, rules, [](std::string_view s) { return measure(s) > 0; });
  }

  static void step4(std::string& w) {
    static constexpr std::array<Rule, 19> rules{{
        {"al", ""},   {"ance", ""}, {"ence", ""}, {"er", ""},  {"ic", ""},  {"able", ""}, {"ible", ""},
        {"ant", ""},  {"ement", ""}, {"ment", ""}, {"ent", ""}, {"ion", ""}, {"ou", ""},   {"ism", ""},
        {"ate", ""},  {"iti", ""},  {"ous", ""},  {"ive", ""}, {"ize", ""},
    }};
    for (const auto& r : rules) {
      if (!ends_with(w, r.suffix)) continue;
      const std::string_view base = stem_of(w, r.suffix);
      bool ok = measure(base) > 1;
      if (ok && r.suffix == "ion") ok = !base.empty() && (base.back() == 's' || base.back() == 't');
      if (ok) w.resize(base.size());
      return;
    }
  }

  static void step5a(std::string& w) {
    if (!ends_with(w, "e")) return;
    const std::string_view base = stem_of(w, "e");
    const int m = measure(base);
    if (m > 1 || (m == 1 && !ends_cvc(base))) w.pop_back();
  }

  static void step5b(std::string& w) {
    if (measure(w) > 1 && ends_double_consonant(w) && w.back() == 'l') w.pop_back();
  }
};

/// Stems a lowercase ASCII word with the original Porter algorithm.
inline std::string porter_stem(std::string_view word) { return PorterStemmer::stem(word); }

}  // namespace emoji
