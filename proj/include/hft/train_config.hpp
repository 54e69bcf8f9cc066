#pragma once

#include <cstdint>
#include <string>

#include "json.hpp"

#include "hft/cnn.hpp"
#include "hft/errors.hpp"
#include "hft/transformer.hpp"

namespace hft {

// Training topology over the category levels.
//   flat: one encoder, both heads trained jointly on a summed loss
//   hier: fully independent encoder + head per level
//   hft:  level 3's encoder starts from level 2's fine-tuned encoder
enum class Regime { flat, hier, hft };

enum class Backbone { transformer, cnn };

inline std::string to_string(Regime r) {
  switch (r) {
    case Regime::flat: return "flat";
    case Regime::hier: return "hier";
    case Regime::hft: return "hft";
  }
  throw ContractError("bad regime value");
}

inline std::string to_string(Backbone b) {
  return b == Backbone::transformer ? "transformer" : "cnn";
}

inline Regime regime_from_string(const std::string& s) {
  if (s == "flat") return Regime::flat;
  if (s == "hier") return Regime::hier;
  if (s == "hft") return Regime::hft;
  throw FormatError("unknown regime \"" + s + "\" (expected flat, hier or hft)");
}

inline Backbone backbone_from_string(const std::string& s) {
  if (s == "transformer") return Backbone::transformer;
  if (s == "cnn") return Backbone::cnn;
  throw FormatError("unknown backbone \"" + s + "\" (expected transformer or cnn)");
}

struct TrainConfig {
  Regime regime = Regime::hft;
  Backbone backbone = Backbone::transformer;
  std::size_t epochs_per_level = 10;
  std::size_t batch_size = 128;
  double lr_max = 1e-3;
  double lr_min = 0.0;
  double dropout_p = 0.1;  // propagated into the backbone and heads
  std::uint64_t seed = 42;
  bool shuffle = true;  // reshuffled every epoch from the seeded stream
  TransformerConfig transformer;
  CnnConfig cnn;

  void validate() const {
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (lr_min < 0.0 || lr_max < lr_min)
      throw ConfigError("need lr_max >= lr_min >= 0");
    if (dropout_p < 0.0 || dropout_p >= 1.0)
      throw ConfigError("dropout_p must lie in [0, 1)");
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["backbone"] = to_string(backbone);
    j["batch_size"] = batch_size;
    j["cnn"] = {{"embed_dim", cnn.embed_dim},
                {"filters_per_width", cnn.filters_per_width},
                {"kernel_widths", cnn.kernel_widths},
                {"vocab_size", cnn.vocab_size}};
    j["dropout_p"] = dropout_p;
    j["epochs_per_level"] = epochs_per_level;
    j["lr_max"] = lr_max;
    j["lr_min"] = lr_min;
    j["regime"] = to_string(regime);
    j["seed"] = seed;
    j["shuffle"] = shuffle;
    j["transformer"] = {{"d_ff", transformer.d_ff},
                        {"d_model", transformer.d_model},
                        {"max_positions", transformer.max_positions},
                        {"n_heads", transformer.n_heads},
                        {"n_layers", transformer.n_layers},
                        {"vocab_size", transformer.vocab_size}};
    return j;
  }

  // Accepts partial documents; absent keys keep their defaults.
  static TrainConfig from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw SchemaError("train config must be a JSON object");
    TrainConfig cfg;
    try {
      if (j.contains("regime")) cfg.regime = regime_from_string(j.at("regime").get<std::string>());
      if (j.contains("backbone"))
        cfg.backbone = backbone_from_string(j.at("backbone").get<std::string>());
      cfg.epochs_per_level = j.value("epochs_per_level", cfg.epochs_per_level);
      cfg.batch_size = j.value("batch_size", cfg.batch_size);
      cfg.lr_max = j.value("lr_max", cfg.lr_max);
      cfg.lr_min = j.value("lr_min", cfg.lr_min);
      cfg.dropout_p = j.value("dropout_p", cfg.dropout_p);
      cfg.seed = j.value("seed", cfg.seed);
      cfg.shuffle = j.value("shuffle", cfg.shuffle);
      if (j.contains("transformer")) {
        const auto& t = j.at("transformer");
        cfg.transformer.vocab_size = t.value("vocab_size", cfg.transformer.vocab_size);
        cfg.transformer.d_model = t.value("d_model", cfg.transformer.d_model);
        cfg.transformer.n_layers = t.value("n_layers", cfg.transformer.n_layers);
        cfg.transformer.n_heads = t.value("n_heads", cfg.transformer.n_heads);
        cfg.transformer.d_ff = t.value("d_ff", cfg.transformer.d_ff);
        cfg.transformer.max_positions = t.value("max_positions", cfg.transformer.max_positions);
      }
      if (j.contains("cnn")) {
        const auto& c = j.at("cnn");
        cfg.cnn.vocab_size = c.value("vocab_size", cfg.cnn.vocab_size);
        cfg.cnn.embed_dim = c.value("embed_dim", cfg.cnn.embed_dim);
        if (c.contains("kernel_widths")) {
          const auto widths = c.at("kernel_widths").get<std::vector<std::size_t>>();
          if (widths.size() != 3)
            throw SchemaError("cnn.kernel_widths must list exactly 3 widths");
          std::copy(widths.begin(), widths.end(), cfg.cnn.kernel_widths.begin());
        }
        cfg.cnn.filters_per_width = c.value("filters_per_width", cfg.cnn.filters_per_width);
      }
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError(std::string("train config: ") + e.what());
    }
    cfg.transformer.dropout_p = cfg.dropout_p;
    cfg.cnn.dropout_p = cfg.dropout_p;
    cfg.validate();
    return cfg;
  }
};

}  // namespace hft
