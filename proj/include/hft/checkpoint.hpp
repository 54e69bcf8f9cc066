#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "hft/backbone.hpp"
#include "hft/corpus.hpp"
#include "hft/errors.hpp"
#include "hft/head.hpp"
#include "hft/io.hpp"
#include "hft/train_config.hpp"

namespace hft {

struct EpochStats {
  std::size_t epoch = 0;
  double loss = 0.0;
  double accuracy = 0.0;
};

// Preprocessing identity a checkpoint inherits from its training corpus:
// enough to re-encode raw text at predict time and to refuse evaluation
// against a corpus produced under different preprocessing.
struct CorpusStamp {
  std::vector<std::string> vocab;
  nlohmann::json tree = nlohmann::json::array();
  std::string tokenizer;
  std::size_t max_len = 0;
  std::string root;

  static CorpusStamp of(const EncodedCorpus& corpus) {
    CorpusStamp stamp;
    stamp.vocab = corpus.vocab.id_to_token();
    stamp.tree = corpus.tree.to_json();
    stamp.tokenizer = to_string(corpus.tokenizer);
    stamp.max_len = corpus.max_len;
    stamp.root = corpus.root;
    return stamp;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["max_len"] = max_len;
    j["root"] = root;
    j["tokenizer"] = tokenizer;
    j["tree"] = tree;
    j["vocab"] = vocab;
    return j;
  }

  static CorpusStamp from_json(const nlohmann::json& j) {
    CorpusStamp stamp;
    stamp.max_len = j.at("max_len").get<std::size_t>();
    stamp.root = j.at("root").get<std::string>();
    stamp.tokenizer = j.at("tokenizer").get<std::string>();
    stamp.tree = j.at("tree");
    stamp.vocab = j.at("vocab").get<std::vector<std::string>>();
    return stamp;
  }

  // Matches EncodedCorpus::fingerprint() for the corpus it was taken from.
  std::uint64_t fingerprint() const { return fnv1a64(to_json().dump()); }
};

// Everything one training run produces: per-level encoders and heads, the
// hft transfer snapshots, training history and final RNG states. Encoder
// roles: "level2"/"level3" plus "level2_initial"/"level3_initial" snapshots
// for hier and hft runs, or "shared"/"shared_initial" for flat runs.
struct Checkpoint {
  static constexpr int kVersion = 1;

  Regime regime = Regime::hft;
  Backbone backbone = Backbone::transformer;
  TrainConfig config;
  CorpusStamp corpus;
  std::map<std::string, BackboneParams> encoders;
  std::map<int, HeadParams> heads;
  std::map<int, std::vector<std::string>> classes;
  std::map<int, std::vector<EpochStats>> history;
  std::map<std::string, std::string> rng_states;

  const BackboneParams& encoder_for_level(int level) const {
    const std::string role = regime == Regime::flat ? "shared" : "level" + std::to_string(level);
    const auto it = encoders.find(role);
    if (it == encoders.end())
      throw ContractError("checkpoint has no encoder \"" + role + "\"");
    return it->second;
  }

  const HeadParams& head_for_level(int level) const {
    const auto it = heads.find(level);
    if (it == heads.end())
      throw ContractError("checkpoint has no head for level " + std::to_string(level));
    return it->second;
  }

  // FNV over the serialized parameter blob; identifies the trained weights.
  std::uint64_t param_hash() const { return fnv1a64(parameter_blob()); }

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

 private:
  template <class Fn>
  void for_each_named_tensor(Fn&& fn) const {
    for (const auto& [role, params] : encoders) {
      auto& mutable_params = const_cast<BackboneParams&>(params);
      for_each_backbone_param(mutable_params, [&](const std::string& name, Tensor& t) {
        fn("encoders/" + role + "/" + name, t);
      });
    }
    for (const auto& [level, head] : heads) {
      auto& mutable_head = const_cast<HeadParams&>(head);
      mutable_head.for_each_param([&](const std::string& name, Tensor& t) {
        fn("heads/" + std::to_string(level) + "/" + name, t);
      });
    }
  }

  std::string parameter_blob() const {
    std::string blob;
    for_each_named_tensor([&](const std::string&, Tensor& t) {
      for (double v : t.values()) io::put_f64(blob, v);
    });
    return blob;
  }
};

inline void Checkpoint::save(const std::filesystem::path& path) const {
  nlohmann::json manifest;
  manifest["format"] = "hft-checkpoint";
  manifest["version"] = kVersion;
  manifest["regime"] = to_string(regime);
  manifest["backbone"] = to_string(backbone);
  manifest["config"] = config.to_json();
  manifest["corpus"] = corpus.to_json();
  manifest["corpus_fingerprint"] = detail::hex64(corpus.fingerprint());

  nlohmann::json classes_json = nlohmann::json::object();
  for (const auto& [level, names] : classes) classes_json[std::to_string(level)] = names;
  manifest["classes"] = classes_json;

  nlohmann::json history_json = nlohmann::json::object();
  for (const auto& [level, stats] : history) {
    nlohmann::json arr = nlohmann::json::array();
    for (const EpochStats& s : stats)
      arr.push_back({{"accuracy", s.accuracy}, {"epoch", s.epoch}, {"loss", s.loss}});
    history_json[std::to_string(level)] = arr;
  }
  manifest["history"] = history_json;
  manifest["rng_states"] = rng_states;

  nlohmann::json tensors = nlohmann::json::array();
  std::size_t offset = 0;  // in doubles
  for_each_named_tensor([&](const std::string& name, Tensor& t) {
    tensors.push_back({{"name", name}, {"offset", offset}, {"shape", t.shape()}});
    offset += t.size();
  });
  manifest["tensors"] = tensors;
  manifest["total_values"] = offset;

  std::string bytes = manifest.dump();
  bytes.push_back('\n');
  bytes += parameter_blob();
  io::write_file(path, bytes);
}

inline Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  const std::string bytes = io::read_file(path);
  const auto [manifest_line, payload] = io::split_container(bytes, "checkpoint");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(manifest_line);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("checkpoint manifest: ") + e.what());
  }
  if (!manifest.is_object() || manifest.value("format", "") != "hft-checkpoint")
    throw FormatError("not a checkpoint: " + path.string());
  if (manifest.value("version", 0) != kVersion)
    throw FormatError("unsupported checkpoint version " +
                      std::to_string(manifest.value("version", 0)));

  Checkpoint ckpt;
  ckpt.regime = regime_from_string(manifest.at("regime").get<std::string>());
  ckpt.backbone = backbone_from_string(manifest.at("backbone").get<std::string>());
  ckpt.config = TrainConfig::from_json(manifest.at("config"));
  ckpt.corpus = CorpusStamp::from_json(manifest.at("corpus"));
  for (const auto& [key, names] : manifest.at("classes").items())
    ckpt.classes[std::stoi(key)] = names.get<std::vector<std::string>>();
  for (const auto& [key, arr] : manifest.at("history").items()) {
    std::vector<EpochStats> stats;
    for (const auto& s : arr)
      stats.push_back(EpochStats{s.at("epoch").get<std::size_t>(), s.at("loss").get<double>(),
                                 s.at("accuracy").get<double>()});
    ckpt.history[std::stoi(key)] = std::move(stats);
  }
  if (manifest.contains("rng_states"))
    ckpt.rng_states = manifest.at("rng_states").get<std::map<std::string, std::string>>();

  const std::size_t total_values = manifest.at("total_values").get<std::size_t>();
  if (payload.size() != total_values * 8)
    throw CorruptionError("checkpoint payload is " + std::to_string(payload.size()) +
                          " bytes, expected " + std::to_string(total_values * 8));

  // Index the manifest's tensor table.
  struct Entry {
    std::size_t offset;
    Shape shape;
  };
  std::map<std::string, Entry> entries;
  for (const auto& t : manifest.at("tensors"))
    entries[t.at("name").get<std::string>()] =
        Entry{t.at("offset").get<std::size_t>(), t.at("shape").get<Shape>()};

  // Rebuild parameter structures from the stored config, then fill them.
  for (const auto& t : manifest.at("tensors")) {
    const std::string name = t.at("name").get<std::string>();
    const std::size_t slash = name.find('/');
    const std::size_t slash2 = name.find('/', slash + 1);
    if (slash == std::string::npos || slash2 == std::string::npos)
      throw CorruptionError("malformed tensor name \"" + name + "\"");
    const std::string kind = name.substr(0, slash);
    const std::string key = name.substr(slash + 1, slash2 - slash - 1);
    if (kind == "encoders") {
      if (!ckpt.encoders.count(key)) ckpt.encoders.emplace(key, backbone_shell(ckpt.config));
    } else if (kind == "heads") {
      const int level = std::stoi(key);
      if (!ckpt.heads.count(level)) {
        const auto& names = ckpt.classes.at(level);
        HeadParams shell;
        shell.level = level;
        shell.num_classes = names.size();
        shell.dropout_p = ckpt.config.dropout_p;
        const auto w_entry = entries.find("heads/" + key + "/W");
        if (w_entry == entries.end())
          throw CorruptionError("checkpoint head " + key + " is missing its weight tensor");
        if (w_entry->second.shape.size() != 2 || w_entry->second.shape[1] != names.size())
          throw ShapeError("tensor heads/" + key + "/W has shape " +
                           shape_str(w_entry->second.shape) + ", expected [in_dim x " +
                           std::to_string(names.size()) + "]");
        shell.in_dim = w_entry->second.shape[0];
        shell.w = Tensor::zeros({shell.in_dim, shell.num_classes}, true);
        shell.b = Tensor::zeros({shell.num_classes}, true);
        ckpt.heads.emplace(level, std::move(shell));
      }
    } else {
      throw CorruptionError("unknown tensor group \"" + kind + "\"");
    }
  }

  std::size_t filled = 0;
  ckpt.for_each_named_tensor([&](const std::string& name, Tensor& tensor) {
    const auto it = entries.find(name);
    if (it == entries.end())
      throw CorruptionError("checkpoint is missing tensor \"" + name + "\"");
    if (it->second.shape != tensor.shape())
      throw ShapeError("tensor " + name + " has shape " + shape_str(it->second.shape) +
                       " but the configured model expects " + shape_str(tensor.shape()));
    const std::size_t byte_offset = it->second.offset * 8;
    if (byte_offset + tensor.size() * 8 > payload.size())
      throw CorruptionError("tensor " + name + " extends past the payload");
    auto& values = tensor.values();
    for (std::size_t i = 0; i < values.size(); ++i)
      values[i] = io::get_f64(payload, byte_offset + i * 8);
    ++filled;
  });
  if (filled != entries.size())
    throw CorruptionError("checkpoint lists " + std::to_string(entries.size()) +
                          " tensors but the model consumed " + std::to_string(filled));
  return ckpt;
}

}  // namespace hft
