#include <cmath>
#include <string>
#include <vector>

#include "gtest/gtest.h"
#include "hft/eval.hpp"
#include "hft/trainer.hpp"
#include "test_util.hpp"

namespace {

using hft::Checkpoint;
using hft::EvalReport;
using hft::LevelReport;
using hft::TrainConfig;

TEST(Evaluate, OracleModelScoresPerfectlyOnItsTrainSplit) {
  // Train a toy transformer until it memorizes the small corpus, then
  // evaluate on the train split: perfect accuracy, diagonal confusion.
  const hft::EncodedCorpus corpus = hft_test::small_corpus(6);
  TrainConfig cfg = hft_test::toy_transformer_config();
  cfg.epochs_per_level = 60;
  cfg.lr_max = 5e-3;
  const Checkpoint ckpt = hft::run_hft(corpus, cfg);
  const LevelReport report = hft::evaluate(ckpt, corpus, 2, hft::Split::train);
  EXPECT_DOUBLE_EQ(report.accuracy, 1.0);
  for (std::size_t r = 0; r < report.confusion.size(); ++r)
    for (std::size_t c = 0; c < report.confusion.size(); ++c)
      if (r != c) {
        EXPECT_EQ(report.confusion[r][c], 0u);
      }
}

TEST(Evaluate, UntrainedModelSitsAtChanceLevel) {
  // Balanced 4-class synthetic test set, untrained encoder: accuracy close
  // to 1/C.
  const hft::EncodedCorpus corpus = hft_test::small_corpus(200, 31, 7);
  TrainConfig cfg = hft_test::toy_transformer_config();
  cfg.epochs_per_level = 0;
  const Checkpoint ckpt = hft::run_hft(corpus, cfg);
  const LevelReport report = hft::evaluate(ckpt, corpus, 3, hft::Split::test);
  std::uint64_t total = 0;
  for (const auto s : report.support) total += s;
  ASSERT_GE(total, 100u);
  EXPECT_NEAR(report.accuracy, 0.25, 0.1);
}

TEST(Evaluate, PureWithRespectToTheCheckpoint) {
  const hft::EncodedCorpus corpus = hft_test::small_corpus();
  TrainConfig cfg = hft_test::toy_transformer_config();
  cfg.epochs_per_level = 1;
  const Checkpoint ckpt = hft::run_hft(corpus, cfg);
  const std::uint64_t before = ckpt.param_hash();
  hft::evaluate(ckpt, corpus, 2);
  hft::evaluate(ckpt, corpus, 3);
  EXPECT_EQ(ckpt.param_hash(), before);
}

TEST(Evaluate, MismatchedCorpusRejected) {
  const hft::EncodedCorpus corpus = hft_test::small_corpus();
  TrainConfig cfg = hft_test::toy_transformer_config();
  cfg.epochs_per_level = 0;
  const Checkpoint ckpt = hft::run_hft(corpus, cfg);
  hft::EncodedCorpus other = hft_test::small_corpus();
  other.max_len = corpus.max_len + 1;  // different preprocessing identity
  EXPECT_THROW(hft::evaluate(ckpt, other, 2), hft::DataError);
}

TEST(Evaluate, MissingSplitOrHeadRejected) {
  hft::EncodedCorpus corpus = hft_test::small_corpus();
  TrainConfig cfg = hft_test::toy_transformer_config();
  cfg.epochs_per_level = 0;
  const Checkpoint ckpt = hft::run_hft(corpus, cfg);
  hft::EncodedCorpus no_test = corpus;
  for (auto& e : no_test.examples) e.split = hft::Split::train;
  EXPECT_THROW(hft::evaluate(ckpt, no_test, 2, hft::Split::test), hft::ContractError);
  EXPECT_THROW(ckpt.head_for_level(5), hft::ContractError);
}

TEST(ConfusionRowNormalize, Cases) {
  const auto normalized = hft::confusion_row_normalize({{8, 2}, {0, 10}});
  EXPECT_DOUBLE_EQ(normalized[0][0], 0.8);
  EXPECT_DOUBLE_EQ(normalized[0][1], 0.2);
  EXPECT_DOUBLE_EQ(normalized[1][0], 0.0);
  EXPECT_DOUBLE_EQ(normalized[1][1], 1.0);

  const auto zeros = hft::confusion_row_normalize({{0, 0}, {0, 0}});
  for (const auto& row : zeros)
    for (double v : row) EXPECT_DOUBLE_EQ(v, 0.0);

  const auto identity = hft::confusion_row_normalize({{3, 0}, {0, 7}});
  EXPECT_DOUBLE_EQ(identity[0][0], 1.0);
  EXPECT_DOUBLE_EQ(identity[1][1], 1.0);
}

TEST(EvalIdentities, AccuracyEqualsTraceAndWeightedRecall) {
  hft::Rng rng(23);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t c = 2 + rng.uniform_index(6);
    std::vector<std::vector<std::uint64_t>> matrix(c, std::vector<std::uint64_t>(c, 0));
    std::uint64_t total = 0, diag = 0;
    for (auto& row : matrix)
      for (auto& cell : row) {
        cell = rng.uniform_index(20);
        total += cell;
      }
    if (total == 0) continue;
    double weighted_recall = 0.0;
    for (std::size_t r = 0; r < c; ++r) {
      std::uint64_t support = 0;
      for (std::uint64_t v : matrix[r]) support += v;
      diag += matrix[r][r];
      if (support > 0)
        weighted_recall += (static_cast<double>(matrix[r][r]) / static_cast<double>(support)) *
                           static_cast<double>(support);
    }
    const double accuracy = static_cast<double>(diag) / static_cast<double>(total);
    EXPECT_NEAR(accuracy, weighted_recall / static_cast<double>(total), 1e-12);
  }
}

TEST(ReportFiles, JsonRoundTripAndDeterminism) {
  hft_test::TempDir tmp("hft_report");
  const hft::EncodedCorpus corpus = hft_test::small_corpus();
  TrainConfig cfg = hft_test::toy_transformer_config();
  cfg.epochs_per_level = 1;
  const Checkpoint ckpt = hft::run_hft(corpus, cfg);

  EvalReport report;
  report.regime = to_string(ckpt.regime);
  report.backbone = to_string(ckpt.backbone);
  report.corpus_fingerprint = hft::detail::hex64(corpus.fingerprint());
  report.checkpoint_hash = hft::detail::hex64(ckpt.param_hash());
  report.levels[2] = hft::evaluate(ckpt, corpus, 2);
  report.levels[3] = hft::evaluate(ckpt, corpus, 3);

  hft::write_report_json(report, tmp / "report.json");
  const EvalReport reloaded = hft::read_report_json(tmp / "report.json");
  EXPECT_EQ(reloaded.levels.at(2).accuracy, report.levels.at(2).accuracy);
  EXPECT_EQ(reloaded.levels.at(3).confusion, report.levels.at(3).confusion);
  EXPECT_EQ(reloaded.checkpoint_hash, report.checkpoint_hash);

  hft::write_report_json(reloaded, tmp / "report2.json");
  EXPECT_EQ(hft::io::read_file(tmp / "report.json"), hft::io::read_file(tmp / "report2.json"));
}

TEST(ReportFiles, ConfusionCsvLayoutAndRowSums) {
  hft_test::TempDir tmp("hft_csv");
  LevelReport report;
  report.level = 2;
  report.classes = {"alpha", "beta"};
  report.confusion = {{8, 2}, {0, 10}};
  report.support = {10, 10};
  report.recall = {0.8, 1.0};
  report.accuracy = 0.9;
  hft::write_confusion_csv(report, tmp / "confusion.csv");
  const std::string csv = hft::io::read_file(tmp / "confusion.csv");

  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start < csv.size()) {
    const std::size_t nl = csv.find('\n', start);
    lines.push_back(csv.substr(start, nl - start));
    start = nl + 1;
  }
  ASSERT_EQ(lines.size(), 3u);  // header + 2 class rows
  EXPECT_EQ(lines[0], "true\\predicted,alpha,beta");
  EXPECT_EQ(lines[1], "alpha,8,2");
  EXPECT_EQ(lines[2], "beta,0,10");
}

TEST(ReportFiles, CsvQuotesNamesWithCommas) {
  hft_test::TempDir tmp("hft_csv_quote");
  LevelReport report;
  report.level = 2;
  report.classes = {"fast, prepared", "plain \"stuff\""};
  report.confusion = {{1, 0}, {0, 1}};
  report.support = {1, 1};
  report.recall = {1.0, 1.0};
  report.accuracy = 1.0;
  hft::write_confusion_csv(report, tmp / "confusion.csv");
  const std::string csv = hft::io::read_file(tmp / "confusion.csv");
  EXPECT_NE(csv.find("\"fast, prepared\""), std::string::npos);
  EXPECT_NE(csv.find("\"plain \"\"stuff\"\"\""), std::string::npos);
}

TEST(Evaluate, DeterministicReports) {
  const hft::EncodedCorpus corpus = hft_test::small_corpus();
  TrainConfig cfg = hft_test::toy_cnn_config();
  cfg.epochs_per_level = 1;
  const Checkpoint ckpt = hft::run_training(corpus, cfg);
  const LevelReport a = hft::evaluate(ckpt, corpus, 3);
  const LevelReport b = hft::evaluate(ckpt, corpus, 3);
  EXPECT_EQ(a.confusion, b.confusion);
  EXPECT_DOUBLE_EQ(a.accuracy, b.accuracy);
}

}  // namespace
