#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "hft/checkpoint.hpp"
#include "hft/corpus.hpp"
#include "hft/errors.hpp"
#include "hft/head.hpp"
#include "hft/io.hpp"
#include "hft/trainer.hpp"

namespace hft {

struct LevelReport {
  int level = 0;
  double accuracy = 0.0;
  std::vector<std::string> classes;
  std::vector<std::vector<std::uint64_t>> confusion;  // rows: true, cols: predicted
  std::vector<std::uint64_t> support;                 // row sums
  std::vector<double> recall;                         // diagonal / support, 0 on empty rows
};

struct EvalReport {
  std::string regime;
  std::string backbone;
  std::string corpus_fingerprint;  // hex
  std::string checkpoint_hash;     // hex
  std::map<int, LevelReport> levels;
};

// Eval-mode forward over one split in deterministic order. Never mutates the
// checkpoint. Refuses corpora whose preprocessing differs from the one the
// checkpoint was trained with.
inline LevelReport evaluate(const Checkpoint& ckpt, const EncodedCorpus& corpus, int level,
                            Split split = Split::test) {
  if (corpus.fingerprint() != ckpt.corpus.fingerprint())
    throw DataError(
        "corpus/checkpoint mismatch: the checkpoint was trained on a corpus with "
        "fingerprint " +
        detail::hex64(ckpt.corpus.fingerprint()) + " but this corpus has " +
        detail::hex64(corpus.fingerprint()));
  const HeadParams& stored_head = ckpt.head_for_level(level);
  const BackboneParams& stored_encoder = ckpt.encoder_for_level(level);
  const std::vector<std::size_t> order = corpus.indices(split);
  if (order.empty()) throw ContractError("evaluate: selected split is empty");

  LevelReport report;
  report.level = level;
  report.classes = ckpt.classes.at(level);
  const std::size_t n_classes = report.classes.size();
  report.confusion.assign(n_classes, std::vector<std::uint64_t>(n_classes, 0));

  // Work on shared-storage handles; forward passes never write parameters.
  auto encoder = stored_encoder;
  auto head = stored_head;
  Rng rng(0);  // never consumed in eval mode
  const std::size_t batch_size = ckpt.config.batch_size;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t stop = std::min(order.size(), start + batch_size);
    const detail::Batch batch = detail::make_batch(corpus, order, start, stop);
    Tensor features =
        backbone_forward(encoder, batch.ids, batch.mask, batch.size, batch.seq_len, Mode::eval, rng);
    Tensor logits = head_forward(head, features, Mode::eval, rng);
    const std::vector<std::size_t> predictions = predict(logits);
    const auto& labels = level == 2 ? batch.labels2 : batch.labels3;
    for (std::size_t i = 0; i < predictions.size(); ++i)
      ++report.confusion[labels[i]][predictions[i]];
  }

  std::uint64_t total = 0, diagonal = 0;
  report.support.assign(n_classes, 0);
  report.recall.assign(n_classes, 0.0);
  for (std::size_t r = 0; r < n_classes; ++r) {
    for (std::size_t c = 0; c < n_classes; ++c) {
      report.support[r] += report.confusion[r][c];
      total += report.confusion[r][c];
    }
    diagonal += report.confusion[r][r];
    if (report.support[r] > 0)
      report.recall[r] = static_cast<double>(report.confusion[r][r]) /
                         static_cast<double>(report.support[r]);
  }
  report.accuracy = total == 0 ? 0.0 : static_cast<double>(diagonal) / static_cast<double>(total);
  return report;
}

// Divides each nonzero row by its sum; zero rows stay zero.
inline std::vector<std::vector<double>> confusion_row_normalize(
    const std::vector<std::vector<std::uint64_t>>& matrix) {
  std::vector<std::vector<double>> out(matrix.size());
  for (std::size_t r = 0; r < matrix.size(); ++r) {
    out[r].assign(matrix[r].size(), 0.0);
    std::uint64_t row_sum = 0;
    for (std::uint64_t v : matrix[r]) row_sum += v;
    if (row_sum == 0) continue;
    for (std::size_t c = 0; c < matrix[r].size(); ++c)
      out[r][c] = static_cast<double>(matrix[r][c]) / static_cast<double>(row_sum);
  }
  return out;
}

namespace detail {

inline nlohmann::json level_report_to_json(const LevelReport& report) {
  nlohmann::json j;
  j["accuracy"] = report.accuracy;
  j["classes"] = report.classes;
  j["confusion"] = report.confusion;
  j["level"] = report.level;
  j["recall"] = report.recall;
  j["support"] = report.support;
  return j;
}

inline LevelReport level_report_from_json(const nlohmann::json& j) {
  LevelReport report;
  report.level = j.at("level").get<int>();
  report.accuracy = j.at("accuracy").get<double>();
  report.classes = j.at("classes").get<std::vector<std::string>>();
  report.confusion = j.at("confusion").get<std::vector<std::vector<std::uint64_t>>>();
  report.recall = j.at("recall").get<std::vector<double>>();
  report.support = j.at("support").get<std::vector<std::uint64_t>>();
  return report;
}

inline std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  out.push_back('"');
  return out;
}

}  // namespace detail

inline nlohmann::json report_to_json(const EvalReport& report) {
  nlohmann::json j;
  j["metadata"] = {{"backbone", report.backbone},
                   {"checkpoint_hash", report.checkpoint_hash},
                   {"corpus_fingerprint", report.corpus_fingerprint},
                   {"regime", report.regime}};
  nlohmann::json levels = nlohmann::json::object();
  for (const auto& [level, lr] : report.levels)
    levels[std::to_string(level)] = detail::level_report_to_json(lr);
  j["levels"] = levels;
  return j;
}

inline EvalReport report_from_json(const nlohmann::json& j) {
  EvalReport report;
  report.regime = j.at("metadata").at("regime").get<std::string>();
  report.backbone = j.at("metadata").at("backbone").get<std::string>();
  report.corpus_fingerprint = j.at("metadata").at("corpus_fingerprint").get<std::string>();
  report.checkpoint_hash = j.at("metadata").at("checkpoint_hash").get<std::string>();
  for (const auto& [key, lj] : j.at("levels").items())
    report.levels[std::stoi(key)] = detail::level_report_from_json(lj);
  return report;
}

inline void write_report_json(const EvalReport& report, const std::filesystem::path& path) {
  io::write_file(path, report_to_json(report).dump(2) + "\n");
}

inline EvalReport read_report_json(const std::filesystem::path& path) {
  try {
    return report_from_json(nlohmann::json::parse(io::read_file(path)));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("report " + path.string() + ": " + e.what());
  }
}

// Confusion counts as CSV: header row and column carry the qualified class
// names in class-index order.
inline void write_confusion_csv(const LevelReport& report, const std::filesystem::path& path) {
  std::string out;
  out += "true\\predicted";
  for (const std::string& name : report.classes) out += "," + detail::csv_escape(name);
  out.push_back('\n');
  for (std::size_t r = 0; r < report.classes.size(); ++r) {
    out += detail::csv_escape(report.classes[r]);
    for (std::size_t c = 0; c < report.classes.size(); ++c)
      out += "," + std::to_string(report.confusion[r][c]);
    out.push_back('\n');
  }
  io::write_file(path, out);
}

}  // namespace hft
