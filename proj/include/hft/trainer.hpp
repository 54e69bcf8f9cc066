#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hft/backbone.hpp"
#include "hft/checkpoint.hpp"
#include "hft/corpus.hpp"
#include "hft/head.hpp"
#include "hft/optimizer.hpp"
#include "hft/schedule.hpp"
#include "hft/train_config.hpp"

namespace hft {

// Fills corpus-derived dimensions (vocabulary size, position table) into the
// backbone configs and propagates the dropout rate. The result is what gets
// stored in checkpoints.
inline TrainConfig resolve_config(const TrainConfig& raw, const EncodedCorpus& corpus) {
  TrainConfig cfg = raw;
  cfg.validate();
  cfg.transformer.dropout_p = cfg.dropout_p;
  cfg.cnn.dropout_p = cfg.dropout_p;
  if (cfg.transformer.vocab_size == 0) cfg.transformer.vocab_size = corpus.vocab.size();
  if (cfg.cnn.vocab_size == 0) cfg.cnn.vocab_size = corpus.vocab.size();
  if (cfg.transformer.max_positions == 0) cfg.transformer.max_positions = corpus.max_len + 1;
  if (cfg.backbone == Backbone::transformer) {
    if (cfg.transformer.vocab_size != corpus.vocab.size())
      throw ConfigError("transformer vocab_size does not match the corpus vocabulary");
  } else if (cfg.cnn.vocab_size != corpus.vocab.size()) {
    throw ConfigError("cnn vocab_size does not match the corpus vocabulary");
  }
  return cfg;
}

namespace detail {

struct Batch {
  std::vector<std::size_t> ids;
  std::vector<std::uint8_t> mask;
  std::vector<std::size_t> labels2;
  std::vector<std::size_t> labels3;
  std::size_t size = 0;
  std::size_t seq_len = 0;
};

inline Batch make_batch(const EncodedCorpus& corpus, const std::vector<std::size_t>& order,
                        std::size_t from, std::size_t to) {
  Batch b;
  b.size = to - from;
  b.seq_len = corpus.max_len + 1;
  b.ids.reserve(b.size * b.seq_len);
  b.mask.reserve(b.size * b.seq_len);
  for (std::size_t i = from; i < to; ++i) {
    const Example& e = corpus.examples[order[i]];
    for (std::uint32_t id : e.token_ids) b.ids.push_back(id);
    b.mask.insert(b.mask.end(), e.attention_mask.begin(), e.attention_mask.end());
    b.labels2.push_back(e.label2);
    b.labels3.push_back(e.label3);
  }
  return b;
}

inline std::size_t count_correct(const std::vector<std::size_t>& predictions,
                                 const std::vector<std::size_t>& labels) {
  std::size_t correct = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) correct += predictions[i] == labels[i];
  return correct;
}

}  // namespace detail

struct LevelRunResult {
  BackboneParams encoder;
  HeadParams head;
  std::vector<std::string> classes;
  std::vector<EpochStats> history;
  std::string rng_state;
};

// Fine-tunes one level: a fresh head over (a deep copy of) the given
// encoder, trained with cross-entropy, Adam and cosine annealing restarted
// over this level's horizon. Both the encoder and the head update. With
// epochs_per_level == 0 the encoder comes back bitwise unchanged and the
// head stays at its initialization.
inline LevelRunResult train_level(const BackboneParams& encoder_start,
                                  const EncodedCorpus& corpus, int level,
                                  const TrainConfig& cfg, std::uint64_t head_seed) {
  if (level != 2 && level != 3) throw ContractError("train_level: level must be 2 or 3");
  LevelRunResult run;
  run.encoder = clone_backbone(encoder_start);
  run.classes = corpus.classes(level);

  std::vector<std::size_t> order = corpus.indices(Split::train);
  if (order.empty()) throw ContractError("train_level: empty train split");

  run.head = init_head(level, feature_dim(run.encoder), run.classes.size(), cfg.dropout_p,
                       head_seed);
  Rng rng(Rng::derive(cfg.seed, "level-run-" + std::to_string(level)));

  std::vector<Tensor> params;
  for_each_backbone_param(run.encoder,
                          [&](const std::string&, Tensor& t) { params.push_back(t); });
  run.head.for_each_param([&](const std::string&, Tensor& t) { params.push_back(t); });
  AdamOptimizer optimizer(params);

  const std::size_t n_train = order.size();
  const std::size_t n_batches = (n_train + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = cfg.epochs_per_level * n_batches;
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs_per_level; ++epoch) {
    if (cfg.shuffle) rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < n_train; start += cfg.batch_size) {
      const std::size_t stop = std::min(n_train, start + cfg.batch_size);
      const detail::Batch batch = detail::make_batch(corpus, order, start, stop);
      const auto& labels = level == 2 ? batch.labels2 : batch.labels3;

      optimizer.zero_grad();
      Tape tape;
      Tensor loss;
      Tensor logits;
      {
        TapeScope scope(tape);
        Tensor features = backbone_forward(run.encoder, batch.ids, batch.mask, batch.size,
                                           batch.seq_len, Mode::train, rng);
        logits = head_forward(run.head, features, Mode::train, rng);
        loss = cross_entropy(logits, labels);
        tape.backward(loss);
      }
      optimizer.step(lr_at(step, total_steps, cfg.lr_max, cfg.lr_min));
      ++step;

      loss_sum += loss.item() * static_cast<double>(batch.size);
      correct += detail::count_correct(predict(logits), labels);
    }
    run.history.push_back(EpochStats{epoch, loss_sum / static_cast<double>(n_train),
                                     static_cast<double>(correct) / static_cast<double>(n_train)});
  }
  run.rng_state = rng.state();
  return run;
}

// Hierarchical fine-tuning: level 2 trains from a fresh encoder, then level
// 3 starts from level 2's final encoder parameters with a fresh head. The
// checkpoint keeps the intermediate snapshots so the transfer can be
// verified bitwise.
inline Checkpoint run_hft(const EncodedCorpus& corpus, const TrainConfig& raw_cfg) {
  const TrainConfig cfg = resolve_config(raw_cfg, corpus);
  if (cfg.regime != Regime::hft) throw ContractError("run_hft: config regime is not hft");
  Checkpoint ckpt;
  ckpt.regime = cfg.regime;
  ckpt.backbone = cfg.backbone;
  ckpt.config = cfg;
  ckpt.corpus = CorpusStamp::of(corpus);

  BackboneParams initial = init_backbone(cfg, Rng::derive(cfg.seed, "encoder-init"));
  ckpt.encoders.emplace("level2_initial", clone_backbone(initial));

  LevelRunResult level2 =
      train_level(initial, corpus, 2, cfg, Rng::derive(cfg.seed, "head-level2"));
  ckpt.encoders.emplace("level3_initial", clone_backbone(level2.encoder));

  LevelRunResult level3 =
      train_level(level2.encoder, corpus, 3, cfg, Rng::derive(cfg.seed, "head-level3"));

  ckpt.encoders.emplace("level2", std::move(level2.encoder));
  ckpt.encoders.emplace("level3", std::move(level3.encoder));
  ckpt.heads.emplace(2, std::move(level2.head));
  ckpt.heads.emplace(3, std::move(level3.head));
  ckpt.classes[2] = std::move(level2.classes);
  ckpt.classes[3] = std::move(level3.classes);
  ckpt.history[2] = std::move(level2.history);
  ckpt.history[3] = std::move(level3.history);
  ckpt.rng_states["level2"] = level2.rng_state;
  ckpt.rng_states["level3"] = level3.rng_state;
  return ckpt;
}

// Independent per-level models: separate encoders from distinct derived
// seeds, no parameter flow between levels.
inline Checkpoint run_hier(const EncodedCorpus& corpus, const TrainConfig& raw_cfg) {
  const TrainConfig cfg = resolve_config(raw_cfg, corpus);
  if (cfg.regime != Regime::hier) throw ContractError("run_hier: config regime is not hier");
  Checkpoint ckpt;
  ckpt.regime = cfg.regime;
  ckpt.backbone = cfg.backbone;
  ckpt.config = cfg;
  ckpt.corpus = CorpusStamp::of(corpus);

  for (int level : {2, 3}) {
    const std::string tag = std::to_string(level);
    BackboneParams initial = init_backbone(cfg, Rng::derive(cfg.seed, "encoder-init-level" + tag));
    ckpt.encoders.emplace("level" + tag + "_initial", clone_backbone(initial));
    LevelRunResult run =
        train_level(initial, corpus, level, cfg, Rng::derive(cfg.seed, "head-level" + tag));
    ckpt.encoders.emplace("level" + tag, std::move(run.encoder));
    ckpt.heads.emplace(level, std::move(run.head));
    ckpt.classes[level] = std::move(run.classes);
    ckpt.history[level] = std::move(run.history);
    ckpt.rng_states["level" + tag] = run.rng_state;
  }
  return ckpt;
}

// Flat joint training: one shared encoder, two heads, batch loss is the sum
// of the per-level cross-entropies.
inline Checkpoint run_flat(const EncodedCorpus& corpus, const TrainConfig& raw_cfg) {
  const TrainConfig cfg = resolve_config(raw_cfg, corpus);
  if (cfg.regime != Regime::flat) throw ContractError("run_flat: config regime is not flat");
  Checkpoint ckpt;
  ckpt.regime = cfg.regime;
  ckpt.backbone = cfg.backbone;
  ckpt.config = cfg;
  ckpt.corpus = CorpusStamp::of(corpus);

  BackboneParams encoder = init_backbone(cfg, Rng::derive(cfg.seed, "encoder-init"));
  ckpt.encoders.emplace("shared_initial", clone_backbone(encoder));

  const std::vector<std::string> classes2 = corpus.classes(2);
  const std::vector<std::string> classes3 = corpus.classes(3);
  HeadParams head2 = init_head(2, feature_dim(encoder), classes2.size(), cfg.dropout_p,
                               Rng::derive(cfg.seed, "head-level2"));
  HeadParams head3 = init_head(3, feature_dim(encoder), classes3.size(), cfg.dropout_p,
                               Rng::derive(cfg.seed, "head-level3"));

  std::vector<std::size_t> order = corpus.indices(Split::train);
  if (order.empty()) throw ContractError("run_flat: empty train split");
  Rng rng(Rng::derive(cfg.seed, "level-run-shared"));

  std::vector<Tensor> params;
  for_each_backbone_param(encoder, [&](const std::string&, Tensor& t) { params.push_back(t); });
  head2.for_each_param([&](const std::string&, Tensor& t) { params.push_back(t); });
  head3.for_each_param([&](const std::string&, Tensor& t) { params.push_back(t); });
  AdamOptimizer optimizer(params);

  const std::size_t n_train = order.size();
  const std::size_t n_batches = (n_train + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = cfg.epochs_per_level * n_batches;
  std::size_t step = 0;
  std::vector<EpochStats> history2, history3;

  for (std::size_t epoch = 0; epoch < cfg.epochs_per_level; ++epoch) {
    if (cfg.shuffle) rng.shuffle(order);
    double loss2_sum = 0.0, loss3_sum = 0.0;
    std::size_t correct2 = 0, correct3 = 0;
    for (std::size_t start = 0; start < n_train; start += cfg.batch_size) {
      const std::size_t stop = std::min(n_train, start + cfg.batch_size);
      const detail::Batch batch = detail::make_batch(corpus, order, start, stop);

      optimizer.zero_grad();
      Tape tape;
      Tensor loss2, loss3;
      Tensor logits2, logits3;
      {
        TapeScope scope(tape);
        Tensor features = backbone_forward(encoder, batch.ids, batch.mask, batch.size,
                                           batch.seq_len, Mode::train, rng);
        logits2 = head_forward(head2, features, Mode::train, rng);
        logits3 = head_forward(head3, features, Mode::train, rng);
        loss2 = cross_entropy(logits2, batch.labels2);
        loss3 = cross_entropy(logits3, batch.labels3);
        tape.backward(add(loss2, loss3));
      }
      optimizer.step(lr_at(step, total_steps, cfg.lr_max, cfg.lr_min));
      ++step;

      loss2_sum += loss2.item() * static_cast<double>(batch.size);
      loss3_sum += loss3.item() * static_cast<double>(batch.size);
      correct2 += detail::count_correct(predict(logits2), batch.labels2);
      correct3 += detail::count_correct(predict(logits3), batch.labels3);
    }
    const double n = static_cast<double>(n_train);
    history2.push_back(EpochStats{epoch, loss2_sum / n, static_cast<double>(correct2) / n});
    history3.push_back(EpochStats{epoch, loss3_sum / n, static_cast<double>(correct3) / n});
  }

  ckpt.encoders.emplace("shared", std::move(encoder));
  ckpt.heads.emplace(2, std::move(head2));
  ckpt.heads.emplace(3, std::move(head3));
  ckpt.classes[2] = classes2;
  ckpt.classes[3] = classes3;
  ckpt.history[2] = std::move(history2);
  ckpt.history[3] = std::move(history3);
  ckpt.rng_states["shared"] = rng.state();
  return ckpt;
}

inline Checkpoint run_training(const EncodedCorpus& corpus, const TrainConfig& cfg) {
  switch (cfg.regime) {
    case Regime::flat: return run_flat(corpus, cfg);
    case Regime::hier: return run_hier(corpus, cfg);
    case Regime::hft: return run_hft(corpus, cfg);
  }
  throw ContractError("bad regime value");
}

}  // namespace hft
