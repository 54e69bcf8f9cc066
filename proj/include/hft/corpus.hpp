#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "hft/errors.hpp"
#include "hft/io.hpp"
#include "hft/label_tree.hpp"
#include "hft/rng.hpp"
#include "hft/text.hpp"

namespace hft {

struct RawRecord {
  std::string title;  // for books: title and description joined by one space
  std::string cat1;
  std::string cat2;
  std::string cat3;
};

enum class RecordFormat { jsonl, tsv };

inline RecordFormat record_format_from_string(const std::string& s) {
  if (s == "jsonl") return RecordFormat::jsonl;
  if (s == "tsv") return RecordFormat::tsv;
  throw FormatError("unknown record format \"" + s + "\" (expected jsonl or tsv)");
}

namespace detail {

inline std::string json_string_field(const nlohmann::json& obj, const char* key,
                                     std::size_t line_no) {
  if (!obj.contains(key))
    throw SchemaError("line " + std::to_string(line_no) + ": missing field \"" + key + "\"");
  if (!obj.at(key).is_string())
    throw SchemaError("line " + std::to_string(line_no) + ": field \"" + key +
                      "\" must be a string");
  return obj.at(key).get<std::string>();
}

}  // namespace detail

// Reads product records, one per line, preserving file order. JSONL objects
// carry title/cat1/cat2/cat3 plus an optional description that is appended
// to the title; TSV rows are exactly title<TAB>cat1<TAB>cat2<TAB>cat3.
inline std::vector<RawRecord> load_records(const std::filesystem::path& path,
                                           RecordFormat format) {
  const std::string bytes = io::read_file(path);
  std::vector<RawRecord> records;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < bytes.size()) {
    std::size_t end = bytes.find('\n', start);
    if (end == std::string::npos) end = bytes.size();
    std::string line = bytes.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    start = end + 1;
    ++line_no;
    if (line.empty()) {
      if (start >= bytes.size()) break;  // trailing newline
      throw FormatError("line " + std::to_string(line_no) + ": empty line");
    }
    if (format == RecordFormat::jsonl) {
      nlohmann::json obj;
      try {
        obj = nlohmann::json::parse(line);
      } catch (const nlohmann::json::parse_error& e) {
        throw FormatError("line " + std::to_string(line_no) + ": " + e.what());
      }
      if (!obj.is_object())
        throw SchemaError("line " + std::to_string(line_no) + ": expected a JSON object");
      RawRecord rec;
      rec.title = detail::json_string_field(obj, "title", line_no);
      rec.cat1 = detail::json_string_field(obj, "cat1", line_no);
      rec.cat2 = detail::json_string_field(obj, "cat2", line_no);
      rec.cat3 = detail::json_string_field(obj, "cat3", line_no);
      if (obj.contains("description")) {
        if (!obj.at("description").is_string())
          throw SchemaError("line " + std::to_string(line_no) +
                            ": field \"description\" must be a string");
        rec.title += " " + obj.at("description").get<std::string>();
      }
      records.push_back(std::move(rec));
    } else {
      std::vector<std::string> fields;
      std::size_t fs = 0;
      while (true) {
        const std::size_t tab = line.find('\t', fs);
        if (tab == std::string::npos) {
          fields.push_back(line.substr(fs));
          break;
        }
        fields.push_back(line.substr(fs, tab - fs));
        fs = tab + 1;
      }
      if (fields.size() != 4)
        throw SchemaError("line " + std::to_string(line_no) + ": expected 4 TSV fields, got " +
                          std::to_string(fields.size()));
      records.push_back(RawRecord{fields[0], fields[1], fields[2], fields[3]});
    }
  }
  return records;
}

// Token-id mapping with three reserved entries. Tokenization of cleaned text
// can never produce the reserved literals ('<' and '>' are symbols and are
// removed by cleaning), so the reserved ids stay out of content positions.
class Vocabulary {
 public:
  static constexpr std::uint32_t kPad = 0;
  static constexpr std::uint32_t kUnk = 1;
  static constexpr std::uint32_t kCls = 2;

  Vocabulary() : id_to_token_{"<pad>", "<unk>", "<cls>"} { rebuild_map(); }

  static Vocabulary from_id_to_token(std::vector<std::string> id_to_token) {
    if (id_to_token.size() < 3 || id_to_token[0] != "<pad>" || id_to_token[1] != "<unk>" ||
        id_to_token[2] != "<cls>")
      throw FormatError("vocabulary must begin with <pad>, <unk>, <cls>");
    Vocabulary v;
    v.id_to_token_ = std::move(id_to_token);
    v.rebuild_map();
    if (v.token_to_id_.size() != v.id_to_token_.size())
      throw FormatError("vocabulary contains duplicate tokens");
    return v;
  }

  std::uint32_t id_of(const std::string& token) const {
    const auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? kUnk : it->second;
  }

  const std::string& token_of(std::uint32_t id) const {
    if (id >= id_to_token_.size())
      throw IndexError("token id " + std::to_string(id) + " out of range");
    return id_to_token_[id];
  }

  std::size_t size() const { return id_to_token_.size(); }
  const std::vector<std::string>& id_to_token() const { return id_to_token_; }

 private:
  void rebuild_map() {
    token_to_id_.clear();
    for (std::size_t i = 0; i < id_to_token_.size(); ++i)
      token_to_id_.emplace(id_to_token_[i], static_cast<std::uint32_t>(i));
  }

  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, std::uint32_t> token_to_id_;
};

// Builds a vocabulary from train-split token lists. Tokens with frequency
// >= min_freq are kept, ordered by descending frequency with lexicographic
// tie-break; everything else maps to <unk>.
inline Vocabulary build_vocab(const std::vector<std::vector<std::string>>& token_lists,
                              std::size_t min_freq) {
  if (min_freq < 1) throw ContractError("build_vocab: min_freq must be >= 1");
  std::map<std::string, std::size_t> freq;
  for (const auto& tokens : token_lists)
    for (const std::string& tok : tokens) {
      if (tok == "<pad>" || tok == "<unk>" || tok == "<cls>")
        throw ContractError("build_vocab: reserved token \"" + tok + "\" in input");
      ++freq[tok];
    }
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (const auto& [tok, n] : freq)
    if (n >= min_freq) kept.emplace_back(tok, n);
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::vector<std::string> id_to_token{"<pad>", "<unk>", "<cls>"};
  for (auto& [tok, n] : kept) id_to_token.push_back(std::move(tok));
  return Vocabulary::from_id_to_token(std::move(id_to_token));
}

// Fixed-length encoding: position 0 is <cls>, then the first max_len tokens,
// then <pad> up to max_len + 1. The mask is 1 exactly on non-pad positions.
inline std::pair<std::vector<std::uint32_t>, std::vector<std::uint8_t>> encode(
    const std::vector<std::string>& tokens, const Vocabulary& vocab, std::size_t max_len) {
  if (max_len < 1) throw ContractError("encode: max_len must be >= 1");
  std::vector<std::uint32_t> ids(max_len + 1, Vocabulary::kPad);
  std::vector<std::uint8_t> mask(max_len + 1, 0);
  ids[0] = Vocabulary::kCls;
  mask[0] = 1;
  const std::size_t keep = std::min(tokens.size(), max_len);
  for (std::size_t i = 0; i < keep; ++i) {
    ids[i + 1] = vocab.id_of(tokens[i]);
    mask[i + 1] = 1;
  }
  return {std::move(ids), std::move(mask)};
}

enum class Split : std::uint8_t { train = 0, test = 1 };

// Deterministic 80/20 (or any fraction) assignment: a seeded shuffle of the
// indices, with the first ceil(fraction * n) going to train. The small guard
// keeps representation noise in fraction * n from crossing an integer.
inline std::vector<Split> split_assign(std::size_t n, double train_fraction, std::uint64_t seed) {
  if (train_fraction < 0.0 || train_fraction > 1.0)
    throw ContractError("split_assign: train_fraction must lie in [0, 1]");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);
  const double raw = train_fraction * static_cast<double>(n);
  const std::size_t n_train = std::min(n, static_cast<std::size_t>(std::ceil(raw - 1e-9)));
  std::vector<Split> tags(n, Split::test);
  for (std::size_t i = 0; i < n_train; ++i) tags[order[i]] = Split::train;
  return tags;
}

struct Example {
  std::vector<std::uint32_t> token_ids;     // length max_len + 1, leading <cls>
  std::vector<std::uint8_t> attention_mask;  // 1 on cls + real tokens
  std::uint32_t label2 = 0;                  // index into the level-2 class space
  std::uint32_t label3 = 0;                  // index into the level-3 class space
  Split split = Split::train;

  std::size_t real_length() const {
    std::size_t n = 0;
    for (std::uint8_t m : attention_mask) n += m;
    return n;
  }
};

// One level-1 root's worth of cleaned, tokenized, padded records with
// per-level label ids and split tags, plus everything needed to reproduce
// the encoding: vocabulary, label tree, tokenizer mode and max_len.
struct EncodedCorpus {
  std::vector<Example> examples;
  Vocabulary vocab;
  LabelTree tree;
  std::string root;
  int root_id = -1;
  TokenizerMode tokenizer = TokenizerMode::whitespace;
  std::size_t max_len = 0;
  std::uint64_t split_seed = 0;
  std::size_t min_freq = 1;

  std::vector<std::string> classes(int level) const {
    return classes_at(tree, level, root_id);
  }

  std::vector<std::size_t> indices(Split split) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < examples.size(); ++i)
      if (examples[i].split == split) out.push_back(i);
    return out;
  }

  // Identity of the preprocessing: everything a checkpoint must agree on to
  // consume this corpus.
  nlohmann::json stamp_json() const {
    nlohmann::json j;
    j["max_len"] = max_len;
    j["root"] = root;
    j["tokenizer"] = to_string(tokenizer);
    j["tree"] = tree.to_json();
    j["vocab"] = vocab.id_to_token();
    return j;
  }

  std::uint64_t fingerprint() const { return fnv1a64(stamp_json().dump()); }

  void save(const std::filesystem::path& path) const;
  static EncodedCorpus load(const std::filesystem::path& path);
};

namespace detail {

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << v;
  return os.str();
}

}  // namespace detail

inline void EncodedCorpus::save(const std::filesystem::path& path) const {
  std::size_t n_train = 0;
  for (const Example& e : examples)
    if (e.split == Split::train) ++n_train;

  nlohmann::json manifest;
  manifest["format"] = "hft-corpus";
  manifest["version"] = 1;
  manifest["counts"] = {{"examples", examples.size()},
                        {"train", n_train},
                        {"test", examples.size() - n_train}};
  manifest["fingerprint"] = detail::hex64(fingerprint());
  manifest["max_len"] = max_len;
  manifest["min_freq"] = min_freq;
  manifest["root"] = root;
  manifest["split_seed"] = split_seed;
  manifest["tokenizer"] = to_string(tokenizer);
  manifest["tree"] = tree.to_json();
  manifest["vocab"] = vocab.id_to_token();

  std::string bytes = manifest.dump();
  bytes.push_back('\n');
  const std::size_t width = max_len + 1;
  for (const Example& e : examples) {
    for (std::size_t i = 0; i < width; ++i) io::put_u32(bytes, e.token_ids[i]);
    io::put_u32(bytes, e.label2);
    io::put_u32(bytes, e.label3);
    for (std::size_t i = 0; i < width; ++i) bytes.push_back(static_cast<char>(e.attention_mask[i]));
    bytes.push_back(static_cast<char>(e.split));
  }
  io::write_file(path, bytes);
}

inline EncodedCorpus EncodedCorpus::load(const std::filesystem::path& path) {
  const std::string bytes = io::read_file(path);
  const auto [manifest_line, payload] = io::split_container(bytes, "corpus container");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(manifest_line);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("corpus manifest: ") + e.what());
  }
  if (!manifest.is_object() || manifest.value("format", "") != "hft-corpus")
    throw FormatError("not a corpus container: " + path.string());
  if (manifest.value("version", 0) != 1)
    throw FormatError("unsupported corpus container version");

  EncodedCorpus corpus;
  corpus.max_len = manifest.at("max_len").get<std::size_t>();
  corpus.min_freq = manifest.value("min_freq", std::size_t{1});
  corpus.root = manifest.at("root").get<std::string>();
  corpus.split_seed = manifest.value("split_seed", std::uint64_t{0});
  corpus.tokenizer = tokenizer_mode_from_string(manifest.at("tokenizer").get<std::string>());
  corpus.tree = LabelTree::from_json(manifest.at("tree"));
  corpus.vocab = Vocabulary::from_id_to_token(manifest.at("vocab").get<std::vector<std::string>>());
  const auto root = corpus.tree.find_root(corpus.root);
  if (!root) throw CorruptionError("corpus root \"" + corpus.root + "\" missing from its tree");
  corpus.root_id = *root;

  const std::size_t n = manifest.at("counts").at("examples").get<std::size_t>();
  const std::size_t width = corpus.max_len + 1;
  const std::size_t record_bytes = 4 * width + 8 + width + 1;
  if (payload.size() != n * record_bytes)
    throw CorruptionError("corpus payload is " + std::to_string(payload.size()) +
                          " bytes, expected " + std::to_string(n * record_bytes));

  const std::size_t c2 = corpus.classes(2).size();
  const std::size_t c3 = corpus.classes(3).size();
  std::size_t offset = 0;
  corpus.examples.reserve(n);
  for (std::size_t r = 0; r < n; ++r) {
    Example e;
    e.token_ids.resize(width);
    for (std::size_t i = 0; i < width; ++i) {
      e.token_ids[i] = io::get_u32(payload, offset);
      offset += 4;
      if (e.token_ids[i] >= corpus.vocab.size())
        throw CorruptionError("token id out of vocabulary range in record " + std::to_string(r));
    }
    e.label2 = io::get_u32(payload, offset);
    offset += 4;
    e.label3 = io::get_u32(payload, offset);
    offset += 4;
    if (e.label2 >= c2 || e.label3 >= c3)
      throw CorruptionError("label out of class range in record " + std::to_string(r));
    e.attention_mask.resize(width);
    for (std::size_t i = 0; i < width; ++i) {
      const unsigned char m = static_cast<unsigned char>(payload[offset++]);
      if (m > 1) throw CorruptionError("bad mask byte in record " + std::to_string(r));
      e.attention_mask[i] = m;
    }
    const unsigned char s = static_cast<unsigned char>(payload[offset++]);
    if (s > 1) throw CorruptionError("bad split byte in record " + std::to_string(r));
    e.split = static_cast<Split>(s);
    corpus.examples.push_back(std::move(e));
  }
  const std::size_t n_train = corpus.indices(Split::train).size();
  if (n_train != manifest.at("counts").at("train").get<std::size_t>())
    throw CorruptionError("train count disagrees with manifest");
  return corpus;
}

struct PrepareOptions {
  std::string root;
  TokenizerMode tokenizer = TokenizerMode::chars;
  std::size_t max_len = 30;
  std::uint64_t split_seed = 0;
  std::size_t min_freq = 1;
};

// The full ingestion pipeline for one level-1 root: filter, clean, split
// 80/20, build the vocabulary on the train split only, encode and label.
inline EncodedCorpus prepare_corpus(const std::vector<RawRecord>& all_records,
                                    const PrepareOptions& opt) {
  std::set<std::string> available;
  std::vector<const RawRecord*> filtered;
  for (const RawRecord& rec : all_records) {
    const std::string cat1 = trim_copy(rec.cat1);
    available.insert(cat1);
    if (cat1 == opt.root) filtered.push_back(&rec);
  }
  if (filtered.empty()) {
    std::string roots;
    for (const std::string& r : available) roots += (roots.empty() ? "" : ", ") + r;
    throw LookupError("no records under root \"" + opt.root + "\"; available roots: " +
                      (roots.empty() ? "(none)" : roots));
  }

  std::vector<std::array<std::string, 3>> triples;
  triples.reserve(filtered.size());
  for (const RawRecord* rec : filtered) triples.push_back({rec->cat1, rec->cat2, rec->cat3});
  EncodedCorpus corpus;
  corpus.tree = build_tree(triples);
  corpus.root = opt.root;
  corpus.root_id = *corpus.tree.find_root(opt.root);
  corpus.tokenizer = opt.tokenizer;
  corpus.max_len = opt.max_len;
  corpus.split_seed = opt.split_seed;
  corpus.min_freq = opt.min_freq;

  std::vector<std::vector<std::string>> tokens(filtered.size());
  for (std::size_t i = 0; i < filtered.size(); ++i) {
    const std::string cleaned = clean_text(filtered[i]->title);
    if (cleaned.empty())
      throw FormatError("record " + std::to_string(i + 1) + " under root \"" + opt.root +
                        "\": title is empty after cleaning");
    tokens[i] = tokenize(cleaned, opt.tokenizer);
  }

  const std::vector<Split> tags = split_assign(filtered.size(), 0.8, opt.split_seed);
  std::vector<std::vector<std::string>> train_tokens;
  for (std::size_t i = 0; i < filtered.size(); ++i)
    if (tags[i] == Split::train) train_tokens.push_back(tokens[i]);
  corpus.vocab = build_vocab(train_tokens, opt.min_freq);

  const std::vector<std::string> classes2 = corpus.classes(2);
  const std::vector<std::string> classes3 = corpus.classes(3);
  std::map<std::string, std::uint32_t> index2, index3;
  for (std::size_t i = 0; i < classes2.size(); ++i)
    index2[classes2[i]] = static_cast<std::uint32_t>(i);
  for (std::size_t i = 0; i < classes3.size(); ++i)
    index3[classes3[i]] = static_cast<std::uint32_t>(i);

  corpus.examples.reserve(filtered.size());
  for (std::size_t i = 0; i < filtered.size(); ++i) {
    auto [ids, mask] = encode(tokens[i], corpus.vocab, opt.max_len);
    Example e;
    e.token_ids = std::move(ids);
    e.attention_mask = std::move(mask);
    e.label2 = index2.at(trim_copy(filtered[i]->cat2));
    e.label3 = index3.at(qualify(trim_copy(filtered[i]->cat2), trim_copy(filtered[i]->cat3)));
    e.split = tags[i];
    corpus.examples.push_back(std::move(e));
  }
  return corpus;
}

}  // namespace hft
