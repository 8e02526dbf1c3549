#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "emoji/csv.hpp"
#include "emoji/errors.hpp"
#include "emoji/numeric/rng.hpp"
#include "emoji/utf8.hpp"

namespace emoji {

/// One labeled tweet. `source` and `row` (1-based data row) form the record
/// identity used for split disjointness checks.
struct RawTweetRecord {
  std::optional<std::string> id;
  std::string text;
  std::size_t label = 0;
  std::string source;
  std::size_t row = 0;

  bool operator==(const RawTweetRecord&) const = default;
};

/// Column layout of a tweet CSV. Positional mode (no column names) reads the
/// text and label by index from a headerless file; named mode requires a
/// header row and looks the columns up by name.
struct CsvSchema {
  bool has_header = false;
  std::size_t text_index = 0;
  std::size_t label_index = 1;
  std::optional<std::size_t> id_index;
  std::string text_column;
  std::string label_column;
  std::string id_column;
  std::optional<std::size_t> num_classes;

  static CsvSchema positional() { return {}; }

  static CsvSchema named(std::string text, std::string label, std::string id = {}) {
    CsvSchema s;
    s.has_header = true;
    s.text_column = std::move(text);
    s.label_column = std::move(label);
    s.id_column = std::move(id);
    return s;
  }
};

struct DropReport {
  std::size_t rows_read = 0;
  std::size_t rows_kept = 0;
  std::size_t rows_dropped = 0;
  std::map<std::string, std::size_t> reasons;

  void drop(const std::string& reason) {
    ++rows_dropped;
    ++reasons[reason];
  }

  nlohmann::json to_json() const {
    return {{"rows_read", rows_read}, {"rows_kept", rows_kept}, {"rows_dropped", rows_dropped}, {"reasons", reasons}};
  }
};

struct LoadResult {
  std::vector<RawTweetRecord> records;
  DropReport report;
};

namespace detail {

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e) {
    const auto cp = utf8::decode_at(s, b);
    if (!utf8::is_space(cp.value)) break;
    b += cp.length;
  }
  while (e > b) {
    std::size_t p = e - 1;
    while (p > b && (static_cast<unsigned char>(s[p]) & 0xC0) == 0x80) --p;
    if (!utf8::is_space(utf8::decode_at(s, p).value)) break;
    e = p;
  }
  return std::string(s.substr(b, e - b));
}

inline std::optional<long long> parse_int(std::string_view s) {
  const std::string t = trim(s);
  if (t.empty()) return std::nullopt;
  long long v = 0;
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc{} || ptr != t.data() + t.size()) return std::nullopt;
  return v;
}

inline std::size_t column_index(const csv::Row& header, const std::string& name, const std::string& path) {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (trim(header[i]) == name) return i;
  throw DataError("column '" + name + "' not found in header of " + path);
}

}  // namespace detail

/// Reads a labeled tweet CSV. Rows with empty text, a missing field or an
/// unparsable label are dropped and counted; a label outside 0..C-1 (when C
/// is declared) is an error.
inline LoadResult load_dataset_csv(const std::string& path, const CsvSchema& schema) {
  const auto rows = csv::read(path);
  LoadResult result;
  std::size_t text_i = schema.text_index, label_i = schema.label_index;
  std::optional<std::size_t> id_i = schema.id_index;
  std::size_t first = 0;
  const bool named = !schema.text_column.empty();
  if (schema.has_header || named) {
    if (rows.empty()) throw DataError("missing header row in " + path);
    first = 1;
    if (named) {
      text_i = detail::column_index(rows[0], schema.text_column, path);
      label_i = detail::column_index(rows[0], schema.label_column, path);
      if (!schema.id_column.empty()) id_i = detail::column_index(rows[0], schema.id_column, path);
    }
  }
  for (std::size_t r = first; r < rows.size(); ++r) {
    const auto& row = rows[r];
    ++result.report.rows_read;
    const std::size_t need = std::max({text_i, label_i, id_i.value_or(0)}) + 1;
    if (row.size() < need) {
      result.report.drop("short_row");
      continue;
    }
    std::string text = detail::trim(row[text_i]);
    if (text.empty()) {
      result.report.drop("empty_text");
      continue;
    }
    const auto label = detail::parse_int(row[label_i]);
    if (!label || *label < 0) {
      result.report.drop("bad_label");
      continue;
    }
    if (schema.num_classes && static_cast<std::size_t>(*label) >= *schema.num_classes) {
      throw DataError(path + ": row " + std::to_string(r + 1) + " has label " + std::to_string(*label) +
                      " outside 0.." + std::to_string(*schema.num_classes - 1));
    }
    RawTweetRecord rec;
    if (id_i) rec.id = detail::trim(row[*id_i]);
    rec.text = std::move(text);
    rec.label = static_cast<std::size_t>(*label);
    rec.source = path;
    rec.row = r + 1 - first;
    result.records.push_back(std::move(rec));
  }
  result.report.rows_kept = result.records.size();
  return result;
}

/// An input tweet without a gold label (prediction inputs).
struct TextRecord {
  std::optional<std::string> id;
  std::string text;
};

/// Reads tweets for inference: a headered CSV with a named text column and an
/// optional id column. Empty-text rows are kept (they still get a prediction).
inline std::vector<TextRecord> load_text_csv(const std::string& path, const std::string& text_column,
                                             const std::string& id_column = {}) {
  const auto rows = csv::read(path);
  if (rows.empty()) throw DataError("missing header row in " + path);
  const std::size_t text_i = detail::column_index(rows[0], text_column, path);
  std::optional<std::size_t> id_i;
  if (!id_column.empty()) id_i = detail::column_index(rows[0], id_column, path);
  std::vector<TextRecord> out;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    TextRecord t;
    if (text_i < rows[r].size()) t.text = rows[r][text_i];
    if (id_i && *id_i < rows[r].size()) t.id = detail::trim(rows[r][*id_i]);
    out.push_back(std::move(t));
  }
  return out;
}

/// Dense class index -> emoji glyph table.
class LabelMapping {
 public:
  LabelMapping() = default;

  static LabelMapping from_entries(std::vector<std::pair<long long, std::string>> entries) {
    std::sort(entries.begin(), entries.end());
    std::set<std::string> seen;
    LabelMapping m;
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const auto& [idx, glyph] = entries[i];
      if (idx < 0) throw DataError("negative label index " + std::to_string(idx) + " in mapping");
      if (i > 0 && entries[i - 1].first == idx) throw DataError("duplicate index " + std::to_string(idx) + " in mapping");
      if (static_cast<std::size_t>(idx) != i) throw DataError("gap in indices: expected " + std::to_string(i) + ", found " + std::to_string(idx));
      if (glyph.empty()) throw DataError("empty emoji for index " + std::to_string(idx));
      if (!seen.insert(glyph).second) throw DataError("duplicate emoji '" + glyph + "' in mapping");
      m.emojis_.push_back(glyph);
    }
    return m;
  }

  std::size_t size() const { return emojis_.size(); }
  bool empty() const { return emojis_.empty(); }
  const std::string& emoji(std::size_t label) const { return emojis_.at(label); }
  const std::vector<std::string>& emojis() const { return emojis_; }

  bool operator==(const LabelMapping&) const = default;

 private:
  std::vector<std::string> emojis_;
};

/// Column names for the mapping file. Empty means auto-detect: a header is
/// assumed when the first index field is not an integer, and the columns are
/// then looked up among common names before falling back to (0, 1).
struct MappingSchema {
  std::string index_column;
  std::string emoji_column;
};

inline LabelMapping load_mapping(const std::string& path, const MappingSchema& schema = {}) {
  const auto rows = csv::read(path);
  if (rows.empty()) throw DataError("empty mapping file: " + path);
  std::size_t index_i = 0, emoji_i = 1, first = 0;
  const bool header = !schema.index_column.empty() || rows[0].empty() || !detail::parse_int(rows[0][0]);
  if (header) {
    first = 1;
    auto find = [&](const std::string& configured, std::initializer_list<const char*> candidates,
                    std::size_t fallback) -> std::size_t {
      if (!configured.empty()) return detail::column_index(rows[0], configured, path);
      for (const char* c : candidates)
        for (std::size_t i = 0; i < rows[0].size(); ++i)
          if (detail::trim(rows[0][i]) == c) return i;
      return fallback;
    };
    index_i = find(schema.index_column, {"number", "index", "label", "id"}, 0);
    emoji_i = find(schema.emoji_column, {"emoticons", "emoji", "emojis", "emoticon"}, 1);
  }
  std::vector<std::pair<long long, std::string>> entries;
  for (std::size_t r = first; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() <= std::max(index_i, emoji_i)) throw DataError(path + ": mapping row " + std::to_string(r + 1) + " is short");
    const auto idx = detail::parse_int(row[index_i]);
    if (!idx) throw DataError(path + ": unparsable index '" + row[index_i] + "'");
    entries.emplace_back(*idx, detail::trim(row[emoji_i]));
  }
  return LabelMapping::from_entries(std::move(entries));
}

inline void save_mapping(const std::string& path, const LabelMapping& mapping) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write mapping: " + path);
  out << "index,emoji\n";
  for (std::size_t i = 0; i < mapping.size(); ++i) out << i << ',' << csv::quote(mapping.emoji(i)) << '\n';
}

/// The five-class label table that accompanies the small tweet dataset
/// (heart, baseball, smile, disappointed, fork and knife).
inline LabelMapping dataset1_mapping() {
  return LabelMapping::from_entries({{0, "❤️"}, {1, "⚾"}, {2, "\U0001F604"}, {3, "\U0001F61E"}, {4, "\U0001F374"}});
}

struct ClassStats {
  std::map<std::size_t, std::size_t> histogram;
  std::size_t total = 0;

  nlohmann::json to_json() const {
    nlohmann::json h = nlohmann::json::object();
    for (auto [k, v] : histogram) h[std::to_string(k)] = v;
    return {{"total", total}, {"histogram", h}};
  }
};

inline ClassStats dataset_stats(const std::vector<RawTweetRecord>& records) {
  ClassStats s;
  for (const auto& r : records) ++s.histogram[r.label];
  s.total = records.size();
  return s;
}

struct TrainValSplit {
  std::vector<RawTweetRecord> train;
  std::vector<RawTweetRecord> validation;
};

/// Number of validation records a class of `count` contributes.
inline std::size_t stratified_take(std::size_t count, double fraction) {
  return static_cast<std::size_t>(std::floor(static_cast<double>(count) * fraction + 1e-9));
}

/// Stratified split: every class contributes floor(count * val_fraction)
/// records, chosen by a seeded shuffle. If that yields nothing, one record of
/// the largest class is moved so both sides stay non-empty. Input order is
/// preserved on both sides.
inline TrainValSplit split_train_val(const std::vector<RawTweetRecord>& records, double val_fraction,
                                     std::uint64_t seed) {
  const std::size_t n = records.size();
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw DataError("degenerate fraction: val_fraction must be in (0,1)");
  if (n < 2) throw DataError("degenerate fraction: need at least 2 records to split");
  const std::size_t global = stratified_take(n, val_fraction);
  if (global < 1 || global > n - 1) throw DataError("degenerate fraction: split leaves an empty side");

  std::map<std::size_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < n; ++i) by_class[records[i].label].push_back(i);
  numeric::Rng rng = numeric::Rng(seed).stream("split");
  std::vector<char> in_val(n, 0);
  std::size_t taken = 0;
  std::vector<std::size_t> largest_members;
  for (auto& [label, members] : by_class) {
    (void)label;
    rng.shuffle(members.begin(), members.end());
    const std::size_t k = stratified_take(members.size(), val_fraction);
    for (std::size_t j = 0; j < k; ++j) in_val[members[j]] = 1;
    taken += k;
    if (members.size() > largest_members.size()) largest_members = members;
  }
  if (taken == 0) in_val[largest_members.front()] = 1;

  TrainValSplit split;
  for (std::size_t i = 0; i < n; ++i) (in_val[i] ? split.validation : split.train).push_back(records[i]);
  return split;
}

/// Class-proportional subsample of exactly `target` records (largest
/// remainders get the leftover slots). Input order is preserved.
inline std::vector<RawTweetRecord> stratified_subsample(const std::vector<RawTweetRecord>& records, std::size_t target,
                                                        std::uint64_t seed) {
  if (target >= records.size()) return records;
  std::map<std::size_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < records.size(); ++i) by_class[records[i].label].push_back(i);
  const double ratio = static_cast<double>(target) / static_cast<double>(records.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  std::map<std::size_t, std::size_t> quota;
  std::size_t assigned = 0;
  for (const auto& [label, members] : by_class) {
    const double exact = static_cast<double>(members.size()) * ratio;
    quota[label] = static_cast<std::size_t>(std::floor(exact));
    assigned += quota[label];
    remainders.emplace_back(-(exact - std::floor(exact)), label);
  }
  std::sort(remainders.begin(), remainders.end());
  for (std::size_t i = 0; assigned < target && i < remainders.size(); ++i, ++assigned) ++quota[remainders[i].second];
  numeric::Rng rng = numeric::Rng(seed).stream("subsample");
  std::vector<char> keep(records.size(), 0);
  for (auto& [label, members] : by_class) {
    rng.shuffle(members.begin(), members.end());
    for (std::size_t j = 0; j < quota[label] && j < members.size(); ++j) keep[members[j]] = 1;
  }
  std::vector<RawTweetRecord> out;
  for (std::size_t i = 0; i < records.size(); ++i)
    if (keep[i]) out.push_back(records[i]);
  return out;
}

struct DatasetBundle {
  std::vector<RawTweetRecord> train;
  std::vector<RawTweetRecord> validation;
  std::vector<RawTweetRecord> test;
  LabelMapping mapping;
  std::size_t num_classes = 0;
};

/// Carves the validation split out of `train_all` and checks that every
/// label is covered by the mapping and that no record appears twice.
inline DatasetBundle assemble_bundle(const std::vector<RawTweetRecord>& train_all, std::vector<RawTweetRecord> test,
                                     LabelMapping mapping, double val_fraction, std::uint64_t seed) {
  if (mapping.empty()) throw DataError("label mapping is empty");
  auto check_labels = [&](const std::vector<RawTweetRecord>& rs, const char* what) {
    for (const auto& r : rs)
      if (r.label >= mapping.size())
        throw DataError(std::string(what) + " label " + std::to_string(r.label) + " is not in the mapping (C=" +
                        std::to_string(mapping.size()) + ")");
  };
  check_labels(train_all, "train");
  check_labels(test, "test");
  auto split = split_train_val(train_all, val_fraction, seed);
  std::set<std::pair<std::string, std::size_t>> seen;
  for (const auto* part : {&split.train, &split.validation, &test})
    for (const auto& r : *part)
      if (!seen.emplace(r.source, r.row).second)
        throw DataError("record " + r.source + "#" + std::to_string(r.row) + " appears in more than one split");
  DatasetBundle b;
  b.train = std::move(split.train);
  b.validation = std::move(split.validation);
  b.test = std::move(test);
  b.num_classes = mapping.size();
  b.mapping = std::move(mapping);
  return b;
}

}  // namespace emoji
