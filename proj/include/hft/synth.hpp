#pragma once

#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "hft/corpus.hpp"
#include "hft/errors.hpp"
#include "hft/rng.hpp"

namespace hft {

// Synthetic hierarchical corpus generator. Each level-2 class owns a parent
// token pool and each of its level-3 children owns a child pool disjoint
// from its siblings'. Titles mix parent and child tokens with probability
// parent_mix per token, so level 2 is predictable from parent tokens alone
// while level 3 needs the child tokens: features learned at the upper level
// stay reusable below it.
struct SynthChild {
  std::string name;
  std::vector<std::string> tokens;
};

struct SynthParent {
  std::string name;
  std::vector<std::string> tokens;
  std::vector<SynthChild> children;
};

struct SynthSpec {
  std::string root = "synthetic";
  std::size_t records_per_leaf = 0;
  std::size_t min_tokens = 0;  // title length range, inclusive
  std::size_t max_tokens = 0;
  double parent_mix = 0.5;  // probability a title token comes from the parent pool
  std::vector<SynthParent> parents;

  void validate() const {
    auto check_name = [](const std::string& name, const char* what) {
      if (trim_copy(name).empty()) throw FormatError(std::string(what) + " name is empty");
      if (name.find(kQualifierSeparator) != std::string::npos)
        throw FormatError(std::string(what) + " name \"" + name + "\" contains '@'");
    };
    check_name(root, "root");
    if (records_per_leaf < 1) throw FormatError("records_per_leaf must be >= 1");
    if (min_tokens < 1 || max_tokens < min_tokens)
      throw FormatError("length_range must satisfy 1 <= min <= max");
    if (parent_mix < 0.0 || parent_mix > 1.0)
      throw FormatError("parent_mix must lie in [0, 1]");
    if (parents.empty()) throw FormatError("spec needs at least one parent class");
    for (const SynthParent& p : parents) {
      check_name(p.name, "parent");
      if (p.tokens.empty()) throw FormatError("parent \"" + p.name + "\" has an empty token pool");
      if (p.children.empty()) throw FormatError("parent \"" + p.name + "\" has no children");
      std::set<std::string> seen;
      for (const SynthChild& c : p.children) {
        check_name(c.name, "child");
        if (c.tokens.empty())
          throw FormatError("child \"" + c.name + "\" has an empty token pool");
        for (const std::string& tok : c.tokens) {
          if (!seen.insert(tok).second)
            throw FormatError("child token pools under parent \"" + p.name +
                              "\" overlap on \"" + tok + "\"");
        }
      }
    }
  }

  static SynthSpec from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw SchemaError("synth spec must be a JSON object");
    SynthSpec spec;
    try {
      spec.root = j.value("root", std::string("synthetic"));
      spec.records_per_leaf = j.at("records_per_leaf").get<std::size_t>();
      const auto range = j.at("length_range");
      if (!range.is_array() || range.size() != 2)
        throw SchemaError("length_range must be [min, max]");
      spec.min_tokens = range[0].get<std::size_t>();
      spec.max_tokens = range[1].get<std::size_t>();
      spec.parent_mix = j.at("parent_mix").get<double>();
      for (const auto& pj : j.at("parents")) {
        SynthParent p;
        p.name = pj.at("name").get<std::string>();
        p.tokens = pj.at("tokens").get<std::vector<std::string>>();
        for (const auto& cj : pj.at("children")) {
          SynthChild c;
          c.name = cj.at("name").get<std::string>();
          c.tokens = cj.at("tokens").get<std::vector<std::string>>();
          p.children.push_back(std::move(c));
        }
        spec.parents.push_back(std::move(p));
      }
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError(std::string("synth spec: ") + e.what());
    }
    spec.validate();
    return spec;
  }
};

inline std::vector<RawRecord> synth_corpus(const SynthSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  std::vector<RawRecord> records;
  records.reserve(spec.parents.size() * spec.records_per_leaf);
  for (const SynthParent& parent : spec.parents) {
    for (const SynthChild& child : parent.children) {
      for (std::size_t r = 0; r < spec.records_per_leaf; ++r) {
        const std::size_t len =
            spec.min_tokens + rng.uniform_index(spec.max_tokens - spec.min_tokens + 1);
        std::string title;
        for (std::size_t k = 0; k < len; ++k) {
          const auto& pool = rng.bernoulli(spec.parent_mix) ? parent.tokens : child.tokens;
          if (k > 0) title += ' ';
          title += pool[rng.uniform_index(pool.size())];
        }
        records.push_back(RawRecord{title, spec.root, parent.name, child.name});
      }
    }
  }
  return records;
}

// JSONL emission for the prepare step.
inline std::string records_to_jsonl(const std::vector<RawRecord>& records) {
  std::string out;
  for (const RawRecord& rec : records) {
    nlohmann::json j;
    j["cat1"] = rec.cat1;
    j["cat2"] = rec.cat2;
    j["cat3"] = rec.cat3;
    j["title"] = rec.title;
    out += j.dump();
    out.push_back('\n');
  }
  return out;
}

}  // namespace hft
