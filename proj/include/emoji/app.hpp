#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "emoji/baseline.hpp"
#include "emoji/checkpoint.hpp"
#include "emoji/data_ingest.hpp"
#include "emoji/hashing.hpp"
#include "emoji/io.hpp"
#include "emoji/metrics.hpp"
#include "emoji/model.hpp"
#include "emoji/preprocess.hpp"
#include "emoji/tokenizer.hpp"
#include "emoji/training.hpp"

// Command implementations behind tools/emoji_cli. Every command takes a
// resolved JSON config, writes its artifacts and a manifest, and returns a
// JSON summary; the executable only parses flags and maps errors to exit codes.
namespace emoji::app {

using nlohmann::json;

inline constexpr const char* kToolVersion = "1.0.0";

inline json default_config(const std::string& kind) {
  if (kind != "dataset1" && kind != "dataset2")
    throw InputError("unknown dataset kind '" + kind + "' (expected dataset1 or dataset2)");
  const bool d2 = kind == "dataset2";
  json clean = CleanConfig::all_on().to_json();
  return {
      {"seed", 42},
      {"dataset",
       {{"kind", kind},
        {"train", ""},
        {"test", ""},
        {"mapping", ""},
        {"text_column", d2 ? "TEXT" : ""},
        {"label_column", d2 ? "Label" : ""},
        {"id_column", ""},
        {"num_classes", nullptr},
        {"val_fraction", 0.1},
        {"test_fraction", d2 ? 0.3 : 0.0},
        {"subsample", d2 ? 5000 : 0}}},
      {"clean", clean},
      {"vocab", {{"min_freq", d2 ? 2 : 1}, {"max_size", 20000}}},
      {"model",
       {{"num_layers", 2}, {"hidden_size", 128}, {"num_heads", 4}, {"ff_size", 512}, {"max_len", 64},
        {"dropout", 0.1}, {"pooling", "mean"}}},
      {"train",
       {{"epochs", d2 ? 50 : 10},
        {"batch_size", d2 ? 64 : 16},
        {"learning_rate", 1e-3},
        {"early_stop_patience", nullptr}}},
      {"pretrain",
       {{"enabled", false},
        {"epochs", 20},
        {"batch_size", d2 ? 64 : 16},
        {"learning_rate", 1e-3},
        {"mlm", MlmConfig{}.to_json()}}},
      {"baseline", {{"epochs", 300}, {"learning_rate", 0.05}, {"l2", 1e-4}, {"binary", false}}},
  };
}

namespace detail {

/// Rejects keys absent from the defaults so typos fail loudly.
inline void check_known_keys(const json& defaults, const json& given, const std::string& where) {
  if (!given.is_object()) throw InputError("config: " + (where.empty() ? std::string("top level") : where) + " must be an object");
  for (auto it = given.begin(); it != given.end(); ++it) {
    const std::string key = where.empty() ? it.key() : where + "." + it.key();
    if (!defaults.contains(it.key())) throw InputError("config: unknown key '" + key + "'");
    if (defaults[it.key()].is_object()) check_known_keys(defaults[it.key()], it.value(), key);
  }
}

inline json read_json_file(const std::string& path) {
  try {
    return json::parse(csv::read_file(path));
  } catch (const json::parse_error& e) {
    throw InputError("config " + path + ": " + e.what());
  }
}

}  // namespace detail

/// defaults(kind) <- file <- flags. `flags` is a patch with the same shape as
/// the config. A run manifest is accepted as a config file (its "config").
inline json resolve_config(const std::optional<std::string>& file, const json& flags = json::object()) {
  json from_file = json::object();
  if (file) {
    from_file = detail::read_json_file(*file);
    if (from_file.is_object() && from_file.contains("command") && from_file.contains("config"))
      from_file = from_file["config"];
  }
  std::string kind = "dataset1";
  for (const json* src : std::initializer_list<const json*>{&from_file, &flags})
    if (src->contains("dataset") && (*src)["dataset"].contains("kind")) kind = (*src)["dataset"]["kind"].get<std::string>();
  json cfg = default_config(kind);
  detail::check_known_keys(cfg, from_file, "");
  detail::check_known_keys(cfg, flags, "");
  cfg.merge_patch(from_file);
  cfg.merge_patch(flags);
  // merge_patch deletes keys set to null; restore optional slots.
  if (!cfg["dataset"].contains("num_classes")) cfg["dataset"]["num_classes"] = nullptr;
  if (!cfg["train"].contains("early_stop_patience")) cfg["train"]["early_stop_patience"] = nullptr;
  return cfg;
}

inline json::json_pointer ptr(const std::string& path) { return json::json_pointer(path); }

/// Typed config access; wrong JSON types become input errors.
template <typename T>
T get(const json& cfg, const json::json_pointer& ptr) {
  try {
    return cfg.at(ptr).get<T>();
  } catch (const json::exception& e) {
    throw InputError("config " + ptr.to_string() + ": " + e.what());
  }
}

inline std::uint64_t config_seed(const json& cfg) { return get<std::uint64_t>(cfg, ptr("/seed")); }

inline CleanConfig clean_config(const json& cfg) {
  try {
    return CleanConfig::from_json(cfg.at("clean"));
  } catch (const json::exception& e) {
    throw InputError(std::string("config /clean: ") + e.what());
  }
}

inline CsvSchema dataset_schema(const json& ds) {
  const auto text = get<std::string>(ds, ptr("/text_column"));
  CsvSchema s = text.empty() ? CsvSchema::positional()
                             : CsvSchema::named(text, get<std::string>(ds, ptr("/label_column")),
                                                get<std::string>(ds, ptr("/id_column")));
  if (!ds.at("num_classes").is_null()) s.num_classes = get<std::size_t>(ds, ptr("/num_classes"));
  return s;
}

inline ModelConfig model_config(const json& cfg, std::size_t vocab_size, std::size_t num_classes) {
  json m = cfg.at("model");
  m["vocab_size"] = vocab_size;
  m["num_classes"] = num_classes;
  try {
    ModelConfig c = ModelConfig::from_json(m);
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw InputError(std::string("config /model: ") + e.what());
  }
}

inline TrainConfig train_config(const json& cfg, const std::string& section = "train") {
  const json& t = cfg.at(section);
  TrainConfig c;
  try {
    c.epochs = t.at("epochs").get<std::size_t>();
    c.batch_size = t.at("batch_size").get<std::size_t>();
    c.learning_rate = t.at("learning_rate").get<double>();
    if (t.contains("early_stop_patience") && !t["early_stop_patience"].is_null())
      c.early_stop_patience = t["early_stop_patience"].get<std::size_t>();
    const json& mlm = cfg.at("pretrain").at("mlm");
    c.mlm.mask_prob = mlm.at("mask_prob").get<double>();
    c.mlm.replace_mask_frac = mlm.at("replace_mask_frac").get<double>();
    c.mlm.replace_random_frac = mlm.at("replace_random_frac").get<double>();
    c.mlm.keep_frac = mlm.at("keep_frac").get<double>();
  } catch (const json::exception& e) {
    throw InputError("config /" + section + ": " + e.what());
  }
  c.seed = config_seed(cfg);
  c.validate();
  return c;
}

/// Per-stage seed derived from the run seed by stream name.
inline std::uint64_t stage_seed(std::uint64_t seed, std::string_view stage) { return numeric::Rng(seed).stream(stage).next(); }

class RunManifest {
 public:
  RunManifest(std::string command, std::vector<std::string> argv, json config)
      : start_(Clock::now()), j_{{"command", std::move(command)}, {"argv", std::move(argv)}, {"config", std::move(config)}} {
    j_["inputs"] = json::object();
    j_["artifacts"] = json::object();
    if (j_["config"].is_object() && j_["config"].contains("seed")) {
      const auto seed = j_["config"]["seed"].get<std::uint64_t>();
      j_["seed"] = seed;
      json stages = json::object();
      for (const char* s : {"split", "test-split", "subsample", "init", "pretrain", "baseline"}) stages[s] = stage_seed(seed, s);
      j_["stage_seeds"] = stages;
    }
  }

  void input_file(const std::string& role, const std::string& path) {
    j_["inputs"][role] = {{"path", path}, {"sha256", sha256_file(path)}};
  }
  void input_bytes(const std::string& role, const std::string& label, std::string_view bytes) {
    j_["inputs"][role] = {{"path", label}, {"sha256", sha256_hex(bytes)}};
  }
  void artifact(const std::string& role, const std::string& path) {
    j_["artifacts"][role] = {{"path", path}, {"sha256", sha256_file(path)}};
  }
  void note(const std::string& key, json value) { j_[key] = std::move(value); }

  const json& data() const { return j_; }

  void write(const std::string& path) {
    j_["tool_version"] = kToolVersion;
    j_["wall_seconds"] = seconds_since(start_);
    write_file_atomic(path, j_.dump(2) + "\n");
  }

 private:
  Clock::time_point start_;
  json j_;
};

inline void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) throw InputError("cannot create output directory: " + dir);
}

inline std::string join(const std::string& dir, const std::string& name) { return (std::filesystem::path(dir) / name).string(); }

/// Everything downstream of ingest: cleaned splits, mapping and vocabulary.
struct PreparedData {
  DatasetBundle bundle;
  Vocabulary vocab;
  CleanConfig clean;
  json report;  // drop reports, class histograms, split sizes
};

inline LoadResult load_split(const std::string& path, const CsvSchema& schema, const std::string& role) {
  if (path.empty()) throw InputError("no " + role + " file given");
  return load_dataset_csv(path, schema);
}

inline PreparedData prepare_data(const json& cfg, RunManifest* manifest, std::ostream* log) {
  const json& ds = cfg.at("dataset");
  const auto seed = config_seed(cfg);
  const auto kind = get<std::string>(ds, ptr("/kind"));
  const auto schema = dataset_schema(ds);
  const auto train_path = get<std::string>(ds, ptr("/train"));
  const auto test_path = get<std::string>(ds, ptr("/test"));
  const auto mapping_path = get<std::string>(ds, ptr("/mapping"));
  const auto test_fraction = get<double>(ds, ptr("/test_fraction"));

  json report;
  auto train = load_split(train_path, schema, "training");
  if (manifest) manifest->input_file("train", train_path);
  report["train_load"] = train.report.to_json();

  LabelMapping mapping;
  if (!mapping_path.empty()) {
    mapping = load_mapping(mapping_path);
    if (manifest) manifest->input_file("mapping", mapping_path);
  } else if (kind == "dataset1") {
    mapping = dataset1_mapping();
  } else {
    throw InputError("dataset2 needs a mapping file (--mapping)");
  }

  std::vector<RawTweetRecord> train_records = std::move(train.records);
  const auto subsample = get<std::size_t>(ds, ptr("/subsample"));
  if (subsample > 0 && subsample < train_records.size()) {
    train_records = stratified_subsample(train_records, subsample, stage_seed(seed, "subsample"));
    report["subsample"] = subsample;
  }

  std::vector<RawTweetRecord> test_records;
  if (!test_path.empty()) {
    auto test = load_split(test_path, schema, "test");
    if (manifest) manifest->input_file("test", test_path);
    report["test_load"] = test.report.to_json();
    test_records = std::move(test.records);
  } else if (test_fraction > 0.0) {
    auto split = split_train_val(train_records, test_fraction, stage_seed(seed, "test-split"));
    train_records = std::move(split.train);
    test_records = std::move(split.validation);
    report["test_carved_from_train"] = test_fraction;
  } else {
    throw InputError("no test file given (set --test or dataset.test_fraction)");
  }

  const CleanConfig clean = clean_config(cfg);
  auto cleaned_train = preprocess_corpus(train_records, clean);
  auto cleaned_test = preprocess_corpus(test_records, clean);
  report["dropped_after_cleaning"] = {{"train", cleaned_train.dropped}, {"test", cleaned_test.dropped}};

  auto bundle = assemble_bundle(cleaned_train.records, std::move(cleaned_test.records), std::move(mapping),
                                get<double>(ds, ptr("/val_fraction")), stage_seed(seed, "split"));
  std::vector<std::string> texts;
  for (const auto& r : bundle.train) texts.push_back(r.text);
  auto vocab = build_vocab(texts, get<std::size_t>(cfg, ptr("/vocab/min_freq")),
                           get<std::size_t>(cfg, ptr("/vocab/max_size")));
  report["sizes"] = {{"train", bundle.train.size()},
                     {"validation", bundle.validation.size()},
                     {"test", bundle.test.size()},
                     {"num_classes", bundle.num_classes},
                     {"vocab_size", vocab.size()}};
  report["train_stats"] = dataset_stats(bundle.train).to_json();
  report["test_stats"] = dataset_stats(bundle.test).to_json();
  report["test_split_sha256"] = split_sha256(bundle.test);
  if (log)
    *log << "data: train=" << bundle.train.size() << " validation=" << bundle.validation.size()
         << " test=" << bundle.test.size() << " classes=" << bundle.num_classes << " vocab=" << vocab.size() << "\n";
  return {std::move(bundle), std::move(vocab), clean, std::move(report)};
}

inline std::vector<Example> to_examples(const std::vector<RawTweetRecord>& records, const Vocabulary& vocab,
                                        std::size_t max_len) {
  std::vector<Example> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back({encode(r.text, vocab, max_len), r.label});
  return out;
}

inline std::vector<TokenSequence> to_sequences(const std::vector<RawTweetRecord>& records, const Vocabulary& vocab,
                                               std::size_t max_len) {
  std::vector<TokenSequence> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(encode(r.text, vocab, max_len));
  return out;
}

inline json mapping_to_json(const LabelMapping& m) {
  json arr = json::array();
  for (std::size_t i = 0; i < m.size(); ++i) arr.push_back({i, m.emoji(i)});
  return arr;
}

inline LabelMapping mapping_from_json(const json& arr) {
  std::vector<std::pair<long long, std::string>> entries;
  for (const auto& e : arr) entries.emplace_back(e.at(0).get<long long>(), e.at(1).get<std::string>());
  return LabelMapping::from_entries(std::move(entries));
}

/// Pipeline settings stored in the checkpoint so inference needs no config.
inline json checkpoint_extra(const PreparedData& data, const json& cfg) {
  const json& ds = cfg.at("dataset");
  return {{"clean", data.clean.to_json()},
          {"mapping", mapping_to_json(data.bundle.mapping)},
          {"dataset",
           {{"kind", ds.at("kind")},
            {"text_column", ds.at("text_column")},
            {"label_column", ds.at("label_column")},
            {"id_column", ds.at("id_column")}}}};
}

/// A trained model together with what is needed to run it on raw text.
struct Predictor {
  Model<float> model;
  Vocabulary vocab;
  CleanConfig clean;
  LabelMapping mapping;
  json extra;

  static Predictor load(const std::string& checkpoint_path, const std::string& vocab_path) {
    auto ckpt = load_checkpoint(checkpoint_path);
    auto vocab = Vocabulary::load(vocab_path);
    ckpt.require_vocab(vocab);
    try {
      return {std::move(ckpt.model), std::move(vocab), CleanConfig::from_json(ckpt.extra.at("clean")),
              mapping_from_json(ckpt.extra.at("mapping")), ckpt.extra};
    } catch (const json::exception& e) {
      throw DataError(checkpoint_path + ": missing pipeline settings in header: " + e.what());
    }
  }

  std::vector<double> probabilities(std::string_view raw_text) {
    const auto seq = encode(preprocess_text(raw_text, clean), vocab, model.config().max_len);
    return softmax_probabilities<float>(predict_logits(model, seq));
  }
};

/// Full-pipeline predictions on labeled records: clean, encode, argmax.
inline std::vector<std::size_t> predict_records(Model<float>& model, const Vocabulary& vocab, const CleanConfig& clean,
                                                const std::vector<RawTweetRecord>& records, bool already_clean) {
  std::vector<std::size_t> preds;
  preds.reserve(records.size());
  for (const auto& r : records) {
    const auto text = already_clean ? r.text : preprocess_text(r.text, clean);
    const auto seq = encode(text, vocab, model.config().max_len);
    preds.push_back(argmax(softmax_probabilities<float>(predict_logits(model, seq))));
  }
  return preds;
}

inline MetricsReport evaluate(Model<float>& model, const Vocabulary& vocab, const CleanConfig& clean,
                              const std::vector<RawTweetRecord>& records, bool already_clean = false) {
  const auto preds = predict_records(model, vocab, clean, records, already_clean);
  std::vector<std::size_t> golds;
  for (const auto& r : records) golds.push_back(r.label);
  return report(preds, golds, model.config().num_classes);
}

/// Metrics JSON shared by train and evaluate: the model's report next to the
/// constant majority-class predictor.
inline json metrics_json(const MetricsReport& model_report, const std::vector<RawTweetRecord>& test,
                         std::size_t majority, const LabelMapping& mapping) {
  std::vector<std::size_t> golds;
  for (const auto& r : test) golds.push_back(r.label);
  const auto maj = report(std::vector<std::size_t>(golds.size(), majority), golds, mapping.size());
  return {{"split_sha256", split_sha256(test)},
          {"transformer", model_report.to_json(&mapping)},
          {"majority_class", majority},
          {"majority", maj.to_json(&mapping)}};
}

inline std::size_t train_majority(const std::vector<RawTweetRecord>& train, std::size_t num_classes) {
  std::vector<std::size_t> labels;
  for (const auto& r : train) labels.push_back(r.label);
  return majority_class(labels, num_classes);
}

inline void require_same_architecture(const ModelConfig& have, const ModelConfig& want) {
  ModelConfig a = have, b = want;
  a.num_classes = b.num_classes = 0;
  a.dropout = b.dropout = 0;
  if (!(a == b))
    throw DataError("initial checkpoint architecture " + have.to_json().dump() + " differs from the configured " +
                    want.to_json().dump());
}

struct TrainOptions {
  std::string out_dir;
  std::optional<std::string> init_checkpoint;
};

/// preprocess -> vocab -> (pretrain) -> finetune -> evaluate.
inline json run_train(const json& cfg, const TrainOptions& opt, RunManifest& manifest, std::ostream* log) {
  ensure_dir(opt.out_dir);
  auto data = prepare_data(cfg, &manifest, log);
  const auto seed = config_seed(cfg);
  const auto mcfg = model_config(cfg, data.vocab.size(), data.bundle.num_classes);

  Model<float> model = Model<float>::initialized(mcfg, stage_seed(seed, "init"));
  if (opt.init_checkpoint) {
    auto ckpt = load_checkpoint(*opt.init_checkpoint);
    manifest.input_file("init_checkpoint", *opt.init_checkpoint);
    ckpt.require_vocab(data.vocab);
    require_same_architecture(ckpt.model.config(), mcfg);
    model = std::move(ckpt.model);
    model.reset_head(mcfg.num_classes, stage_seed(seed, "init"));
  }

  const auto max_len = mcfg.max_len;
  const auto train = to_examples(data.bundle.train, data.vocab, max_len);
  const auto val = to_examples(data.bundle.validation, data.vocab, max_len);
  json summary;

  if (get<bool>(cfg, ptr("/pretrain/enabled"))) {
    auto pcfg = train_config(cfg, "pretrain");
    pcfg.seed = stage_seed(seed, "pretrain");
    if (log) *log << "pretrain: " << pcfg.epochs << " epochs\n";
    const auto pre = pretrain_mlm(model, to_sequences(data.bundle.train, data.vocab, max_len), pcfg,
                                  to_sequences(data.bundle.validation, data.vocab, max_len), log);
    export_curve(pre.curve, join(opt.out_dir, "pretrain_curve.csv"));
    manifest.artifact("pretrain_curve", join(opt.out_dir, "pretrain_curve.csv"));
  }

  const auto tcfg = train_config(cfg);
  const auto fit = finetune(model, train, val, tcfg, log);
  const auto rep = evaluate(model, data.vocab, data.clean, data.bundle.test, true);
  const auto majority = train_majority(data.bundle.train, data.bundle.num_classes);
  json metrics = metrics_json(rep, data.bundle.test, majority, data.bundle.mapping);
  metrics["best_epoch"] = fit.best_epoch;
  metrics["best_val_loss"] = fit.best_val_loss;

  const auto ckpt_path = join(opt.out_dir, "model.ckpt"), vocab_path = join(opt.out_dir, "vocab.txt");
  const auto curve_path = join(opt.out_dir, "curve.csv"), metrics_path = join(opt.out_dir, "metrics.json");
  const auto mapping_path = join(opt.out_dir, "mapping.csv"), data_path = join(opt.out_dir, "data_report.json");
  data.vocab.save(vocab_path);
  save_checkpoint(ckpt_path, model, data.vocab.sha256(), checkpoint_extra(data, cfg));
  export_curve(fit.curve, curve_path);
  write_file_atomic(metrics_path, metrics.dump(2) + "\n");
  save_mapping(mapping_path, data.bundle.mapping);
  write_file_atomic(data_path, data.report.dump(2) + "\n");
  for (const auto& [role, path] : std::vector<std::pair<std::string, std::string>>{
           {"checkpoint", ckpt_path}, {"vocab", vocab_path}, {"curve", curve_path},
           {"metrics", metrics_path}, {"mapping", mapping_path}, {"data_report", data_path}})
    manifest.artifact(role, path);

  summary["test_accuracy"] = rep.accuracy;
  summary["test_macro_f1"] = rep.macro.f1;
  summary["majority_accuracy"] = metrics["majority"]["accuracy"];
  summary["epochs_run"] = fit.curve.size();
  summary["out_dir"] = opt.out_dir;
  return summary;
}

/// MLM pretraining only; the checkpoint carries an untrained head.
inline json run_pretrain(const json& cfg, const std::string& out_dir, RunManifest& manifest, std::ostream* log) {
  ensure_dir(out_dir);
  auto data = prepare_data(cfg, &manifest, log);
  const auto seed = config_seed(cfg);
  const auto mcfg = model_config(cfg, data.vocab.size(), data.bundle.num_classes);
  Model<float> model = Model<float>::initialized(mcfg, stage_seed(seed, "init"));
  auto pcfg = train_config(cfg, "pretrain");
  pcfg.seed = stage_seed(seed, "pretrain");
  const auto max_len = mcfg.max_len;
  const auto res = pretrain_mlm(model, to_sequences(data.bundle.train, data.vocab, max_len), pcfg,
                                to_sequences(data.bundle.validation, data.vocab, max_len), log);
  const auto ckpt_path = join(out_dir, "pretrained.ckpt"), vocab_path = join(out_dir, "vocab.txt");
  const auto curve_path = join(out_dir, "pretrain_curve.csv");
  data.vocab.save(vocab_path);
  save_checkpoint(ckpt_path, model, data.vocab.sha256(), checkpoint_extra(data, cfg));
  export_curve(res.curve, curve_path);
  manifest.artifact("checkpoint", ckpt_path);
  manifest.artifact("vocab", vocab_path);
  manifest.artifact("pretrain_curve", curve_path);
  const auto& last = res.curve.rows.back();
  return {{"epochs_run", res.curve.size()}, {"final_mlm_loss", last.train_loss}, {"masked_recovery", last.val_accuracy}};
}

/// Bag-of-words logistic regression on the same splits as `train`; when a
/// training run directory is given its metrics join the table.
inline json run_baseline(const json& cfg, const std::string& out_dir, const std::optional<std::string>& run_dir,
                         RunManifest& manifest, std::ostream* log) {
  ensure_dir(out_dir);
  auto data = prepare_data(cfg, &manifest, log);
  const json& b = cfg.at("baseline");
  LogRegConfig lcfg;
  bool binary = false;
  try {
    lcfg.epochs = b.at("epochs").get<std::size_t>();
    lcfg.learning_rate = b.at("learning_rate").get<double>();
    lcfg.l2 = b.at("l2").get<double>();
    binary = b.at("binary").get<bool>();
  } catch (const json::exception& e) {
    throw InputError(std::string("config /baseline: ") + e.what());
  }
  lcfg.seed = stage_seed(config_seed(cfg), "baseline");
  const auto features = featurize(data.bundle.train, data.vocab, binary);
  const auto model = train_logreg(features, data.bundle.num_classes, lcfg);
  const auto majority = train_majority(data.bundle.train, data.bundle.num_classes);
  const auto rep = eval_baseline(model, data.bundle.test, data.vocab, majority);
  json out = rep.to_json(&data.bundle.mapping);
  out["final_train_loss"] = model.loss_history.back();

  json table = json::array();
  auto row = [](const std::string& name, const json& r) {
    return json{{"model", name}, {"accuracy", r["accuracy"]}, {"macro_f1", r["macro"]["f1"]},
                {"macro_precision", r["macro"]["precision"]}, {"macro_recall", r["macro"]["recall"]}};
  };
  table.push_back(row("majority", out["majority"]));
  table.push_back(row("bow_logreg", out["logreg"]));
  if (run_dir) {
    const auto path = join(*run_dir, "metrics.json");
    const json m = detail::read_json_file(path);
    manifest.input_file("transformer_metrics", path);
    if (m.at("split_sha256") != out["split_sha256"])
      throw DataError("test split of " + path + " differs from the baseline's (split hashes disagree)");
    table.push_back(row("transformer", m.at("transformer")));
  }
  out["table"] = table;
  const auto path = join(out_dir, "baseline.json");
  write_file_atomic(path, out.dump(2) + "\n");
  manifest.artifact("baseline_report", path);
  if (log)
    for (const auto& r : table) *log << "baseline: " << r["model"].get<std::string>() << " accuracy=" << r["accuracy"] << "\n";
  return out;
}

/// Labeled-file evaluation of a trained checkpoint. Column layout defaults to
/// the one recorded at training time.
inline json run_evaluate(const std::string& checkpoint, const std::string& vocab_path, const std::string& test_path,
                         const json& schema_overrides, RunManifest& manifest) {
  auto pred = Predictor::load(checkpoint, vocab_path);
  manifest.input_file("checkpoint", checkpoint);
  manifest.input_file("vocab", vocab_path);
  json ds = pred.extra.at("dataset");
  ds["num_classes"] = pred.model.config().num_classes;
  ds.merge_patch(schema_overrides);
  auto test = load_dataset_csv(test_path, dataset_schema(ds));
  manifest.input_file("test", test_path);
  auto cleaned = preprocess_corpus(test.records, pred.clean);
  if (cleaned.records.empty()) throw DataError(test_path + ": no evaluable records");
  const auto rep = evaluate(pred.model, pred.vocab, pred.clean, cleaned.records, true);
  json out{{"split_sha256", split_sha256(cleaned.records)},
           {"transformer", rep.to_json(&pred.mapping)},
           {"load", test.report.to_json()},
           {"dropped_after_cleaning", cleaned.dropped}};
  return out;
}

inline std::string tsv_field(std::string_view s) {
  std::string out(s);
  for (auto& c : out)
    if (c == '\t' || c == '\n' || c == '\r') c = ' ';
  return out;
}

inline std::string format_prob(double p) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", p);
  return buf;
}

/// One tweet to predict; `id` is set when the input carries identifiers.
using PredictInput = TextRecord;

/// Reads one tweet per line (blank lines skipped).
inline std::vector<PredictInput> read_lines(std::string_view bytes) {
  std::vector<PredictInput> out;
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    auto end = bytes.find('\n', pos);
    if (end == std::string_view::npos) end = bytes.size();
    std::string line(bytes.substr(pos, end - pos));
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!emoji::detail::trim(line).empty()) out.push_back({std::nullopt, line});
    pos = end + 1;
  }
  return out;
}

/// Reorders inputs to follow an id list (e.g. the dataset's output file).
inline std::vector<PredictInput> order_by_ids(const std::vector<PredictInput>& inputs, const std::vector<std::string>& ids) {
  std::map<std::string, const PredictInput*> by_id;
  for (const auto& in : inputs) {
    if (!in.id) throw DataError("input rows need ids to be ordered by an id file");
    if (!by_id.emplace(*in.id, &in).second) throw DataError("duplicate id '" + *in.id + "' in prediction input");
  }
  std::vector<PredictInput> out;
  for (const auto& id : ids) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw DataError("id '" + id + "' from the id file is not in the prediction input");
    out.push_back(*it->second);
  }
  if (out.size() != inputs.size())
    throw DataError(std::to_string(inputs.size() - out.size()) + " input rows have ids missing from the id file");
  return out;
}

/// TSV: [id,] text, label, emoji, top3 ("emoji:prob" joined by spaces).
inline std::string predict_tsv(Predictor& pred, const std::vector<PredictInput>& inputs) {
  const bool with_ids = !inputs.empty() && inputs.front().id.has_value();
  std::string out = with_ids ? "id\ttext\tlabel\temoji\ttop3\n" : "text\tlabel\temoji\ttop3\n";
  for (const auto& in : inputs) {
    const auto probs = pred.probabilities(in.text);
    std::vector<std::size_t> order(probs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return probs[a] > probs[b]; });
    std::string top;
    for (std::size_t k = 0; k < std::min<std::size_t>(3, order.size()); ++k) {
      if (k) top += ' ';
      top += pred.mapping.emoji(order[k]) + ":" + format_prob(probs[order[k]]);
    }
    if (with_ids) out += tsv_field(in.id.value_or("")) + "\t";
    out += tsv_field(in.text) + "\t" + std::to_string(order.front()) + "\t" + pred.mapping.emoji(order.front()) + "\t" + top + "\n";
  }
  return out;
}

/// Validates a run's curve CSV(s) and copies them out.
inline json run_export_curves(const std::string& run_dir, const std::string& out_path, bool pretrain, RunManifest& manifest) {
  const auto src = join(run_dir, pretrain ? "pretrain_curve.csv" : "curve.csv");
  const auto curve = load_curve(src);
  manifest.input_file("curve", src);
  export_curve(curve, out_path);
  manifest.artifact("curve", out_path);
  double last = curve.rows.back().train_loss;
  return {{"rows", curve.size()}, {"final_train_loss", last}, {"path", out_path}};
}

}  // namespace emoji::app
