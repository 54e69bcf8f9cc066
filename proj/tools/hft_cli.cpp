// hft: operator surface for the hierarchical fine-tuning pipeline.
//
// Subcommands: synth (generate a synthetic corpus), prepare (encode one
// level-1 root), train (flat/hier/hft over either backbone), evaluate
// (accuracy + confusion matrices), predict (classify one title).
//
// Exit codes: 0 success, 1 usage error, 2 data/format error, 3 runtime
// error. Every artifact-producing run also writes a machine-readable run
// manifest next to its primary output.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "hft/checkpoint.hpp"
#include "hft/corpus.hpp"
#include "hft/eval.hpp"
#include "hft/synth.hpp"
#include "hft/trainer.hpp"

namespace fs = std::filesystem;

namespace {

struct PrepareArgs {
  std::string input;
  std::string format = "jsonl";
  std::string root;
  std::string tokenizer = "char";
  std::size_t max_len = 30;
  std::uint64_t split_seed = 0;
  std::size_t min_freq = 1;
  std::string out;
  std::string manifest;
};

struct SynthArgs {
  std::string spec;
  std::uint64_t seed = 0;
  std::string out;
  std::string manifest;
};

struct TrainArgs {
  std::string corpus;
  std::string regime;
  std::string backbone;
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string manifest;
};

struct EvaluateArgs {
  std::string checkpoint;
  std::string corpus;
  std::string level = "both";
  std::string report;
  std::string confusion;
  std::string manifest;
};

struct PredictArgs {
  std::string checkpoint;
  std::string text;
  std::string level = "both";
  std::string manifest;
};

void write_manifest(const fs::path& path, const std::string& subcommand,
                    const nlohmann::json& parameters, const nlohmann::json& inputs,
                    const nlohmann::json& outputs) {
  nlohmann::json j;
  j["inputs"] = inputs;
  j["outputs"] = outputs;
  j["parameters"] = parameters;
  j["subcommand"] = subcommand;
  hft::io::write_file(path, j.dump(2) + "\n");
}

std::vector<int> parse_levels(const std::string& level) {
  if (level == "2") return {2};
  if (level == "3") return {3};
  return {2, 3};
}

// Line/column of a byte offset, for synth-spec parse diagnostics.
std::pair<std::size_t, std::size_t> line_column(const std::string& text, std::size_t byte) {
  std::size_t line = 1, column = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      column = 1;
    } else {
      ++column;
    }
  }
  return {line, column};
}

int run_prepare(const PrepareArgs& args) {
  const auto records = hft::load_records(args.input, hft::record_format_from_string(args.format));
  hft::PrepareOptions opt;
  opt.root = args.root;
  opt.tokenizer = hft::tokenizer_mode_from_string(args.tokenizer);
  opt.max_len = args.max_len;
  opt.split_seed = args.split_seed;
  opt.min_freq = args.min_freq;
  const hft::EncodedCorpus corpus = hft::prepare_corpus(records, opt);
  corpus.save(args.out);

  const fs::path manifest_path = args.manifest.empty() ? fs::path(args.out + ".manifest.json")
                                                       : fs::path(args.manifest);
  write_manifest(manifest_path, "prepare",
                 {{"format", args.format},
                  {"max_len", args.max_len},
                  {"min_freq", args.min_freq},
                  {"root", args.root},
                  {"split_seed", args.split_seed},
                  {"tokenizer", args.tokenizer}},
                 {{"records", args.input}},
                 {{"corpus", args.out}, {"manifest", manifest_path.string()}});

  std::printf("prepared %zu examples (%zu train / %zu test), vocab %zu, root \"%s\"\n",
              corpus.examples.size(), corpus.indices(hft::Split::train).size(),
              corpus.indices(hft::Split::test).size(), corpus.vocab.size(), corpus.root.c_str());
  return 0;
}

int run_synth(const SynthArgs& args) {
  const std::string spec_text = hft::io::read_file(args.spec);
  nlohmann::json spec_json;
  try {
    spec_json = nlohmann::json::parse(spec_text);
  } catch (const nlohmann::json::parse_error& e) {
    const auto [line, column] = line_column(spec_text, e.byte > 0 ? e.byte - 1 : 0);
    throw hft::FormatError("spec " + args.spec + ": parse error at line " +
                           std::to_string(line) + ", column " + std::to_string(column));
  }
  const hft::SynthSpec spec = hft::SynthSpec::from_json(spec_json);
  const auto records = hft::synth_corpus(spec, args.seed);
  hft::io::write_file(args.out, hft::records_to_jsonl(records));

  const fs::path manifest_path = args.manifest.empty() ? fs::path(args.out + ".manifest.json")
                                                       : fs::path(args.manifest);
  write_manifest(manifest_path, "synth", {{"seed", args.seed}}, {{"spec", args.spec}},
                 {{"manifest", manifest_path.string()}, {"records", args.out}});
  std::printf("wrote %zu records to %s\n", records.size(), args.out.c_str());
  return 0;
}

int run_train(const TrainArgs& args) {
  const hft::EncodedCorpus corpus = hft::EncodedCorpus::load(args.corpus);
  hft::TrainConfig cfg;
  if (!args.config.empty()) {
    nlohmann::json config_json;
    try {
      config_json = nlohmann::json::parse(hft::io::read_file(args.config));
    } catch (const nlohmann::json::parse_error& e) {
      throw hft::FormatError("config " + args.config + ": " + e.what());
    }
    cfg = hft::TrainConfig::from_json(config_json);
  }
  cfg.regime = hft::regime_from_string(args.regime);
  cfg.backbone = hft::backbone_from_string(args.backbone);
  if (args.seed) cfg.seed = *args.seed;

  const hft::Checkpoint ckpt = hft::run_training(corpus, cfg);

  fs::create_directories(args.out);
  const fs::path ckpt_path = fs::path(args.out) / "checkpoint.bin";
  const fs::path history_path = fs::path(args.out) / "history.csv";
  ckpt.save(ckpt_path);

  std::string history_csv = "level,epoch,loss,accuracy\n";
  for (const auto& [level, stats] : ckpt.history) {
    for (const hft::EpochStats& s : stats) {
      char row[128];
      std::snprintf(row, sizeof(row), "%d,%zu,%.6f,%.6f\n", level, s.epoch, s.loss, s.accuracy);
      history_csv += row;
    }
  }
  hft::io::write_file(history_path, history_csv);

  const fs::path manifest_path = args.manifest.empty()
                                     ? fs::path(args.out) / "run_manifest.json"
                                     : fs::path(args.manifest);
  write_manifest(manifest_path, "train", {{"config", ckpt.config.to_json()}},
                 {{"config_file", args.config}, {"corpus", args.corpus}},
                 {{"checkpoint", ckpt_path.string()},
                  {"history", history_path.string()},
                  {"manifest", manifest_path.string()}});

  for (const auto& [level, stats] : ckpt.history) {
    if (!stats.empty())
      std::printf("level%d final train loss=%.6f accuracy=%.6f\n", level, stats.back().loss,
                  stats.back().accuracy);
  }
  std::printf("checkpoint written to %s\n", ckpt_path.string().c_str());
  return 0;
}

int run_evaluate(const EvaluateArgs& args) {
  const hft::Checkpoint ckpt = hft::Checkpoint::load(args.checkpoint);
  const hft::EncodedCorpus corpus = hft::EncodedCorpus::load(args.corpus);
  const std::vector<int> levels = parse_levels(args.level);

  hft::EvalReport report;
  report.regime = to_string(ckpt.regime);
  report.backbone = to_string(ckpt.backbone);
  report.corpus_fingerprint = hft::detail::hex64(corpus.fingerprint());
  report.checkpoint_hash = hft::detail::hex64(ckpt.param_hash());
  for (int level : levels) report.levels[level] = hft::evaluate(ckpt, corpus, level);

  hft::write_report_json(report, args.report);
  nlohmann::json outputs = {{"report", args.report}};
  if (!args.confusion.empty()) {
    for (int level : levels) {
      fs::path csv_path(args.confusion);
      if (levels.size() > 1) {
        fs::path stem = csv_path.stem();
        fs::path ext = csv_path.extension();
        csv_path = csv_path.parent_path() /
                   (stem.string() + ".level" + std::to_string(level) + ext.string());
      }
      hft::write_confusion_csv(report.levels.at(level), csv_path);
      outputs["confusion_level" + std::to_string(level)] = csv_path.string();
    }
  }

  const fs::path manifest_path = args.manifest.empty() ? fs::path(args.report + ".manifest.json")
                                                       : fs::path(args.manifest);
  outputs["manifest"] = manifest_path.string();
  write_manifest(manifest_path, "evaluate", {{"level", args.level}},
                 {{"checkpoint", args.checkpoint}, {"corpus", args.corpus}}, outputs);

  for (int level : levels)
    std::printf("level%d accuracy=%.6f\n", level, report.levels.at(level).accuracy);
  return 0;
}

int run_predict(const PredictArgs& args) {
  const hft::Checkpoint ckpt = hft::Checkpoint::load(args.checkpoint);
  const hft::Vocabulary vocab = hft::Vocabulary::from_id_to_token(ckpt.corpus.vocab);
  const hft::TokenizerMode tokenizer = hft::tokenizer_mode_from_string(ckpt.corpus.tokenizer);

  const std::string cleaned = hft::clean_text(args.text);
  if (cleaned.empty())
    throw hft::DataError("text is empty after cleaning; nothing to classify");
  const auto tokens = hft::tokenize(cleaned, tokenizer);
  const auto [ids, mask] = hft::encode(tokens, vocab, ckpt.corpus.max_len);

  std::vector<std::size_t> batch_ids(ids.begin(), ids.end());
  const std::vector<std::uint8_t> batch_mask = mask;
  const std::size_t seq_len = ids.size();

  nlohmann::json predictions = nlohmann::json::object();
  hft::Rng rng(0);
  for (int level : parse_levels(args.level)) {
    auto encoder = ckpt.encoder_for_level(level);  // shared-storage handle
    auto head = ckpt.head_for_level(level);
    hft::Tensor features =
        hft::backbone_forward(encoder, batch_ids, batch_mask, 1, seq_len, hft::Mode::eval, rng);
    hft::Tensor logits = hft::head_forward(head, features, hft::Mode::eval, rng);
    hft::Tensor probs = hft::softmax(logits);
    const std::size_t best = hft::predict(logits)[0];
    const std::string& name = ckpt.classes.at(level).at(best);
    std::printf("level%d: %s  p=%.6f\n", level, name.c_str(), probs.at(best));
    predictions[std::to_string(level)] = {{"category", name}, {"probability", probs.at(best)}};
  }

  if (!args.manifest.empty()) {
    write_manifest(args.manifest, "predict", {{"level", args.level}, {"text", args.text}},
                   {{"checkpoint", args.checkpoint}}, {{"predictions", predictions}});
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hierarchical fine-tuning text classification (transformer/CNN backbones)"};
  app.require_subcommand(1);

  PrepareArgs prepare_args;
  CLI::App* prepare = app.add_subcommand("prepare", "encode one level-1 root into a corpus container");
  prepare->add_option("--input", prepare_args.input, "records file")->required();
  prepare->add_option("--format", prepare_args.format, "input format")
      ->check(CLI::IsMember({"jsonl", "tsv"}));
  prepare->add_option("--root", prepare_args.root, "level-1 category to keep")->required();
  prepare->add_option("--tokenizer", prepare_args.tokenizer, "tokenizer mode")
      ->check(CLI::IsMember({"char", "whitespace"}));
  prepare->add_option("--max-len", prepare_args.max_len, "token budget per title")
      ->check(CLI::Range(std::size_t{1}, std::size_t{100000}));
  prepare->add_option("--split-seed", prepare_args.split_seed, "seed for the 80/20 split");
  prepare->add_option("--min-freq", prepare_args.min_freq, "vocabulary frequency threshold")
      ->check(CLI::Range(std::size_t{1}, std::size_t{1000000}));
  prepare->add_option("--out", prepare_args.out, "corpus container path")->required();
  prepare->add_option("--manifest", prepare_args.manifest, "run manifest path override");

  SynthArgs synth_args;
  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic hierarchical corpus");
  synth->add_option("--spec", synth_args.spec, "synth spec JSON")->required();
  synth->add_option("--seed", synth_args.seed, "generator seed");
  synth->add_option("--out", synth_args.out, "JSONL output path")->required();
  synth->add_option("--manifest", synth_args.manifest, "run manifest path override");

  TrainArgs train_args;
  CLI::App* train = app.add_subcommand("train", "train one regime x backbone on a corpus");
  train->add_option("--corpus", train_args.corpus, "corpus container")->required();
  train->add_option("--regime", train_args.regime, "training regime")
      ->required()
      ->check(CLI::IsMember({"flat", "hier", "hft"}));
  train->add_option("--backbone", train_args.backbone, "encoder backbone")
      ->required()
      ->check(CLI::IsMember({"transformer", "cnn"}));
  train->add_option("--config", train_args.config, "train config JSON");
  train->add_option("--seed", train_args.seed, "master seed (overrides config)");
  train->add_option("--out", train_args.out, "output directory")->required();
  train->add_option("--manifest", train_args.manifest, "run manifest path override");

  EvaluateArgs evaluate_args;
  CLI::App* evaluate = app.add_subcommand("evaluate", "accuracy and confusion matrices");
  evaluate->add_option("--checkpoint", evaluate_args.checkpoint, "checkpoint file")->required();
  evaluate->add_option("--corpus", evaluate_args.corpus, "corpus container")->required();
  evaluate->add_option("--level", evaluate_args.level, "level to evaluate")
      ->check(CLI::IsMember({"2", "3", "both"}));
  evaluate->add_option("--report", evaluate_args.report, "report JSON path")->required();
  evaluate->add_option("--confusion", evaluate_args.confusion, "confusion CSV path");
  evaluate->add_option("--manifest", evaluate_args.manifest, "run manifest path override");

  PredictArgs predict_args;
  CLI::App* predict = app.add_subcommand("predict", "classify a single title");
  predict->add_option("--checkpoint", predict_args.checkpoint, "checkpoint file")->required();
  predict->add_option("--text", predict_args.text, "title text")->required();
  predict->add_option("--level", predict_args.level, "level to predict")
      ->check(CLI::IsMember({"2", "3", "both"}));
  predict->add_option("--manifest", predict_args.manifest, "run manifest path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (prepare->parsed()) return run_prepare(prepare_args);
    if (synth->parsed()) return run_synth(synth_args);
    if (train->parsed()) return run_train(train_args);
    if (evaluate->parsed()) return run_evaluate(evaluate_args);
    if (predict->parsed()) return run_predict(predict_args);
  } catch (const hft::DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const hft::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 3;
  }
  return 1;
}
