// emoji_cli: train, evaluate and run tweet-to-emoji classifiers.
//
// Exit codes: 0 success, 2 usage or input error, 3 data validation error,
// 4 numeric failure.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <iterator>
#include <optional>
#include <string>
#include <vector>

#include "emoji/app.hpp"

namespace {

using emoji::app::json;

/// Flags shared by every command that ingests a dataset.
struct DataFlags {
  std::optional<std::string> config, dataset1, dataset2, train, test, mapping;
  std::optional<std::string> text_column, label_column, id_column;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs, batch_size, subsample, max_len, patience, pretrain_epochs, min_freq;
  std::optional<double> lr, val_fraction, test_fraction, dropout;
  std::optional<std::string> pooling;
  bool full_data = false, pretrain = false, no_stem = false;

  void attach(CLI::App* cmd, bool training_knobs) {
    cmd->add_option("--config", config, "JSON config file (a run manifest also works)")->check(CLI::ExistingFile);
    cmd->add_option("--dataset1", dataset1, "Train CSV in dataset-1 layout (headerless text,label)");
    cmd->add_option("--dataset2", dataset2, "Train CSV in dataset-2 layout (header with TEXT, Label)");
    cmd->add_option("--train", train, "Train CSV using the configured layout");
    cmd->add_option("--test", test, "Labeled test CSV");
    cmd->add_option("--mapping", mapping, "Label mapping CSV (index,emoji)");
    cmd->add_option("--text-column", text_column, "Text column name (empty: positional)");
    cmd->add_option("--label-column", label_column, "Label column name");
    cmd->add_option("--id-column", id_column, "Id column name");
    cmd->add_option("--seed", seed, "Run seed; per-stage seeds derive from it");
    cmd->add_option("--val-fraction", val_fraction, "Validation share of the training file");
    cmd->add_option("--test-fraction", test_fraction, "Test share carved from train when no --test is given");
    cmd->add_option("--subsample", subsample, "Stratified training subsample size (0: all)");
    cmd->add_flag("--full-data", full_data, "Disable the training subsample");
    cmd->add_option("--min-freq", min_freq, "Vocabulary minimum count");
    cmd->add_flag("--no-stem", no_stem, "Skip Porter stemming");
    if (!training_knobs) return;
    cmd->add_option("--epochs", epochs, "Fine-tuning (or pretraining) epochs");
    cmd->add_option("--batch-size", batch_size, "Minibatch size");
    cmd->add_option("--lr", lr, "Adam learning rate");
    cmd->add_option("--patience", patience, "Early-stopping patience in epochs");
    cmd->add_option("--max-len", max_len, "Sequence length including CLS and SEP");
    cmd->add_option("--dropout", dropout, "Dropout rate");
    cmd->add_option("--pooling", pooling, "mean or cls")->check(CLI::IsMember({"mean", "cls"}));
    cmd->add_flag("--pretrain", pretrain, "Run MLM pretraining before fine-tuning");
    cmd->add_option("--pretrain-epochs", pretrain_epochs, "MLM pretraining epochs");
  }

  /// Flag patch; `train_section` receives --epochs/--batch-size/--lr.
  json patch(const std::string& train_section = "train") const {
    json p = json::object();
    if (dataset1 && dataset2) throw emoji::InputError("--dataset1 and --dataset2 are mutually exclusive");
    if (dataset1) p["dataset"]["kind"] = "dataset1", p["dataset"]["train"] = *dataset1;
    if (dataset2) p["dataset"]["kind"] = "dataset2", p["dataset"]["train"] = *dataset2;
    if (train) p["dataset"]["train"] = *train;
    if (test) p["dataset"]["test"] = *test;
    if (mapping) p["dataset"]["mapping"] = *mapping;
    if (text_column) p["dataset"]["text_column"] = *text_column;
    if (label_column) p["dataset"]["label_column"] = *label_column;
    if (id_column) p["dataset"]["id_column"] = *id_column;
    if (val_fraction) p["dataset"]["val_fraction"] = *val_fraction;
    if (test_fraction) p["dataset"]["test_fraction"] = *test_fraction;
    if (subsample) p["dataset"]["subsample"] = *subsample;
    if (full_data) p["dataset"]["subsample"] = 0;
    if (seed) p["seed"] = *seed;
    if (min_freq) p["vocab"]["min_freq"] = *min_freq;
    if (no_stem) p["clean"]["enable_stemming"] = false;
    if (epochs) p[train_section]["epochs"] = *epochs;
    if (batch_size) p[train_section]["batch_size"] = *batch_size;
    if (lr) p[train_section]["learning_rate"] = *lr;
    if (patience) p["train"]["early_stop_patience"] = *patience;
    if (max_len) p["model"]["max_len"] = *max_len;
    if (dropout) p["model"]["dropout"] = *dropout;
    if (pooling) p["model"]["pooling"] = *pooling;
    if (pretrain) p["pretrain"]["enabled"] = true;
    if (pretrain_epochs) p["pretrain"]["epochs"] = *pretrain_epochs;
    return p;
  }

  json resolve(const std::string& train_section = "train") const {
    return emoji::app::resolve_config(config, patch(train_section));
  }
};

std::string read_stream(std::istream& in) { return {std::istreambuf_iterator<char>(in), {}}; }

void emit(const std::optional<std::string>& path, const std::string& bytes) {
  if (path) {
    emoji::write_file_atomic(*path, bytes);
  } else {
    std::cout << bytes;
    std::cout.flush();
  }
}

std::string parent_dir(const std::string& path) {
  const auto p = std::filesystem::path(path).parent_path();
  return p.empty() ? "." : p.string();
}

}  // namespace

int main(int argc, char** argv) {
  using namespace emoji;
  const std::vector<std::string> args(argv, argv + argc);

  CLI::App cli{"Tweet-to-emoji classification with a small bidirectional transformer encoder"};
  cli.require_subcommand(1);
  cli.set_version_flag("--version", std::string(app::kToolVersion));

  auto* train = cli.add_subcommand("train", "Preprocess, build vocabulary, (pretrain,) fine-tune and evaluate");
  DataFlags train_flags;
  train_flags.attach(train, true);
  std::string train_out = "run";
  std::optional<std::string> init_ckpt;
  train->add_option("--out", train_out, "Run directory for artifacts")->capture_default_str();
  train->add_option("--init-checkpoint", init_ckpt, "Start from a pretrained checkpoint")->check(CLI::ExistingFile);

  auto* pretrain = cli.add_subcommand("pretrain", "Masked-language-model pretraining of the encoder");
  DataFlags pre_flags;
  pre_flags.attach(pretrain, true);
  std::string pre_out = "pretrain_run";
  pretrain->add_option("--out", pre_out, "Output directory")->capture_default_str();

  auto* predict = cli.add_subcommand("predict", "Predict emojis for tweets (one per line, or a CSV column)");
  std::string p_ckpt;
  std::optional<std::string> p_vocab, p_input, p_text_col, p_id_col, p_ids, p_output, p_manifest;
  std::string p_ids_col = "id";
  predict->add_option("--checkpoint", p_ckpt, "Model checkpoint")->required();
  predict->add_option("--vocab", p_vocab, "Vocabulary file (default: next to the checkpoint)");
  predict->add_option("--input", p_input, "Input file (default: standard input)");
  predict->add_option("--text-column", p_text_col, "Read the input as CSV using this text column");
  predict->add_option("--id-column", p_id_col, "CSV id column carried into the output");
  predict->add_option("--ids", p_ids, "CSV of ids fixing the output order (e.g. the output-format file)");
  predict->add_option("--ids-column", p_ids_col, "Id column in --ids")->capture_default_str();
  predict->add_option("--output", p_output, "Write TSV here instead of standard output");
  predict->add_option("--manifest", p_manifest, "Manifest path (default: predict_manifest.json beside the checkpoint)");

  auto* evaluate = cli.add_subcommand("evaluate", "Metrics of a checkpoint on a labeled CSV");
  std::string e_ckpt, e_test;
  std::optional<std::string> e_vocab, e_text_col, e_label_col, e_output, e_manifest;
  evaluate->add_option("--checkpoint", e_ckpt, "Model checkpoint")->required();
  evaluate->add_option("--test", e_test, "Labeled CSV")->required();
  evaluate->add_option("--vocab", e_vocab, "Vocabulary file (default: next to the checkpoint)");
  evaluate->add_option("--text-column", e_text_col, "Text column override");
  evaluate->add_option("--label-column", e_label_col, "Label column override");
  evaluate->add_option("--output", e_output, "Write metrics JSON here as well");
  evaluate->add_option("--manifest", e_manifest, "Manifest path (default: evaluate_manifest.json beside the checkpoint)");

  auto* baseline = cli.add_subcommand("baseline", "Bag-of-words logistic regression and majority-class rows");
  DataFlags base_flags;
  base_flags.attach(baseline, false);
  std::string base_out = "baseline_run";
  std::optional<std::string> base_run;
  std::optional<std::size_t> base_epochs;
  std::optional<double> base_l2, base_lr;
  bool base_binary = false;
  baseline->add_option("--out", base_out, "Output directory")->capture_default_str();
  baseline->add_option("--run", base_run, "Training run directory whose metrics join the table");
  baseline->add_option("--epochs", base_epochs, "Full-batch Adam steps");
  baseline->add_option("--lr", base_lr, "Adam learning rate");
  baseline->add_option("--l2", base_l2, "L2 penalty on the weights");
  baseline->add_flag("--binary", base_binary, "Presence features instead of counts");

  auto* export_curves = cli.add_subcommand("export-curves", "Validate and copy a run's curve CSV");
  std::string x_run;
  std::optional<std::string> x_output, x_manifest;
  bool x_pretrain = false;
  export_curves->add_option("--run", x_run, "Run directory")->required();
  export_curves->add_option("--output", x_output, "Destination CSV (default: standard output)");
  export_curves->add_flag("--pretrain", x_pretrain, "Export the MLM pretraining curve");
  export_curves->add_option("--manifest", x_manifest, "Manifest path (default: export_manifest.json in the run)");

  auto* stats = cli.add_subcommand("stats", "Load, clean and split a dataset; print counts as JSON");
  DataFlags stats_flags;
  stats_flags.attach(stats, false);

  auto* preprocess = cli.add_subcommand("preprocess", "Clean the text column of a dataset into a new CSV");
  DataFlags prep_flags;
  prep_flags.attach(preprocess, false);
  std::optional<std::string> prep_output;
  preprocess->add_option("--output", prep_output, "Cleaned CSV (text,label) destination")->required();

  auto* vocab_cmd = cli.add_subcommand("vocab", "Build the vocabulary of a dataset's training split");
  DataFlags vocab_flags;
  vocab_flags.attach(vocab_cmd, false);
  std::optional<std::string> vocab_output;
  vocab_cmd->add_option("--output", vocab_output, "Vocabulary file destination")->required();

  try {
    cli.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = cli.exit(e);
    return code == 0 ? 0 : 2;
  }

  auto* log = &std::cerr;
  try {
    if (train->parsed()) {
      const auto cfg = train_flags.resolve();
      app::RunManifest manifest("train", args, cfg);
      const auto summary = app::run_train(cfg, {train_out, init_ckpt}, manifest, log);
      manifest.note("summary", summary);
      manifest.write(app::join(train_out, "manifest.json"));
      std::cout << summary.dump(2) << "\n";
    } else if (pretrain->parsed()) {
      const auto cfg = pre_flags.resolve("pretrain");
      app::RunManifest manifest("pretrain", args, cfg);
      const auto summary = app::run_pretrain(cfg, pre_out, manifest, log);
      manifest.note("summary", summary);
      manifest.write(app::join(pre_out, "manifest.json"));
      std::cout << summary.dump(2) << "\n";
    } else if (predict->parsed()) {
      const auto vocab_path = p_vocab.value_or(app::join(parent_dir(p_ckpt), "vocab.txt"));
      app::RunManifest manifest("predict", args, {{"checkpoint", p_ckpt}, {"vocab", vocab_path}});
      auto pred = app::Predictor::load(p_ckpt, vocab_path);
      manifest.input_file("checkpoint", p_ckpt);
      manifest.input_file("vocab", vocab_path);
      std::vector<app::PredictInput> inputs;
      if (p_text_col) {
        if (!p_input) throw InputError("--text-column needs --input");
        inputs = load_text_csv(*p_input, *p_text_col, p_id_col.value_or(""));
        manifest.input_file("input", *p_input);
      } else {
        const std::string bytes = p_input ? csv::read_file(*p_input) : read_stream(std::cin);
        manifest.input_bytes("input", p_input.value_or("<stdin>"), bytes);
        inputs = app::read_lines(bytes);
      }
      if (p_ids) {
        std::vector<std::string> ids;
        for (const auto& r : load_text_csv(*p_ids, p_ids_col)) ids.push_back(detail::trim(r.text));
        manifest.input_file("ids", *p_ids);
        inputs = app::order_by_ids(inputs, ids);
      }
      emit(p_output, app::predict_tsv(pred, inputs));
      if (p_output) manifest.artifact("predictions", *p_output);
      manifest.note("rows", inputs.size());
      manifest.write(p_manifest.value_or(app::join(parent_dir(p_ckpt), "predict_manifest.json")));
    } else if (evaluate->parsed()) {
      const auto vocab_path = e_vocab.value_or(app::join(parent_dir(e_ckpt), "vocab.txt"));
      json overrides = json::object();
      if (e_text_col) overrides["text_column"] = *e_text_col;
      if (e_label_col) overrides["label_column"] = *e_label_col;
      app::RunManifest manifest("evaluate", args, {{"checkpoint", e_ckpt}, {"vocab", vocab_path}, {"test", e_test},
                                                   {"columns", overrides}});
      const auto metrics = app::run_evaluate(e_ckpt, vocab_path, e_test, overrides, manifest);
      const auto bytes = metrics.dump(2) + "\n";
      std::cout << bytes;
      if (e_output) {
        write_file_atomic(*e_output, bytes);
        manifest.artifact("metrics", *e_output);
      }
      manifest.write(e_manifest.value_or(app::join(parent_dir(e_ckpt), "evaluate_manifest.json")));
    } else if (baseline->parsed()) {
      json patch = base_flags.patch();
      if (base_epochs) patch["baseline"]["epochs"] = *base_epochs;
      if (base_lr) patch["baseline"]["learning_rate"] = *base_lr;
      if (base_l2) patch["baseline"]["l2"] = *base_l2;
      if (base_binary) patch["baseline"]["binary"] = true;
      const auto cfg = app::resolve_config(base_flags.config, patch);
      app::RunManifest manifest("baseline", args, cfg);
      const auto report = app::run_baseline(cfg, base_out, base_run, manifest, log);
      manifest.write(app::join(base_out, "manifest.json"));
      std::cout << json{{"split_sha256", report["split_sha256"]}, {"table", report["table"]}}.dump(2) << "\n";
    } else if (export_curves->parsed()) {
      app::RunManifest manifest("export-curves", args, {{"run", x_run}, {"pretrain", x_pretrain}});
      const auto src = app::join(x_run, x_pretrain ? "pretrain_curve.csv" : "curve.csv");
      const auto curve = load_curve(src);
      manifest.input_file("curve", src);
      emit(x_output, curve_csv(curve));
      if (x_output) manifest.artifact("curve", *x_output);
      manifest.note("rows", curve.size());
      manifest.write(x_manifest.value_or(app::join(x_run, "export_manifest.json")));
    } else if (stats->parsed()) {
      const auto cfg = stats_flags.resolve();
      const auto data = app::prepare_data(cfg, nullptr, nullptr);
      std::cout << data.report.dump(2) << "\n";
    } else if (preprocess->parsed()) {
      const auto cfg = prep_flags.resolve();
      const auto& ds = cfg.at("dataset");
      const auto path = app::get<std::string>(ds, app::ptr("/train"));
      auto loaded = load_dataset_csv(path, app::dataset_schema(ds));
      const auto cleaned = preprocess_corpus(loaded.records, app::clean_config(cfg));
      std::string out = "text,label\n";
      for (const auto& r : cleaned.records) out += csv::quote(r.text) + "," + std::to_string(r.label) + "\n";
      write_file_atomic(*prep_output, out);
      std::cerr << "preprocess: kept " << cleaned.records.size() << ", dropped " << cleaned.dropped + loaded.report.rows_dropped
                << "\n";
    } else if (vocab_cmd->parsed()) {
      const auto cfg = vocab_flags.resolve();
      const auto data = app::prepare_data(cfg, nullptr, log);
      data.vocab.save(*vocab_output);
      std::cout << json{{"vocab_size", data.vocab.size()}, {"sha256", data.vocab.sha256()}}.dump(2) << "\n";
    }
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
