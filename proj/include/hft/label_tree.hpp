#pragma once

#include <algorithm>
#include <array>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "hft/errors.hpp"

namespace hft {

// The level-3 qualifier separator: "parent level-2 name" + "@" + "level-3
// name". Raw category names therefore must not contain '@'.
inline constexpr char kQualifierSeparator = '@';

inline std::string trim_copy(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

inline std::string qualify(const std::string& parent_name, const std::string& child_name) {
  if (parent_name.find(kQualifierSeparator) != std::string::npos ||
      child_name.find(kQualifierSeparator) != std::string::npos) {
    throw FormatError("category name may not contain '@': \"" + parent_name + "\" / \"" +
                      child_name + "\"");
  }
  return parent_name + kQualifierSeparator + child_name;
}

inline std::pair<std::string, std::string> parse_qualified(const std::string& name) {
  const auto first = name.find(kQualifierSeparator);
  if (first == std::string::npos)
    throw FormatError("qualified name has no '@' separator: \"" + name + "\"");
  if (name.find(kQualifierSeparator, first + 1) != std::string::npos)
    throw FormatError("qualified name has multiple '@' separators: \"" + name + "\"");
  return {name.substr(0, first), name.substr(first + 1)};
}

struct CategoryNode {
  int id = -1;
  std::string name;
  int level = 0;  // 1, 2 or 3
  std::optional<int> parent_id;
  std::string qualified_name;  // == name for levels 1-2; "parent@name" for level 3
};

// Immutable three-level taxonomy. Node ids are dense, assigned in
// (level, qualified name) order, so identical record sets produce identical
// trees regardless of record order or duplication. Class-index spaces for
// classification are the lexicographic orderings held in level_index.
class LabelTree {
 public:
  const std::vector<CategoryNode>& nodes() const { return nodes_; }
  const CategoryNode& node(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
      throw LookupError("unknown node id " + std::to_string(id));
    return nodes_[static_cast<std::size_t>(id)];
  }
  std::size_t size() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }

  const std::vector<int>& children(int id) const {
    node(id);
    return children_[static_cast<std::size_t>(id)];
  }

  const std::vector<int>& level_index(int level) const {
    if (level < 1 || level > 3) throw ContractError("level must be 1, 2 or 3");
    return level_index_[static_cast<std::size_t>(level - 1)];
  }

  std::vector<std::string> root_names() const {
    std::vector<std::string> names;
    for (int id : level_index(1)) names.push_back(node(id).name);
    return names;
  }

  std::optional<int> find_root(const std::string& name) const {
    for (int id : level_index(1))
      if (node(id).name == name) return id;
    return std::nullopt;
  }

  // Level-1 ancestor of any node.
  int root_of(int id) const {
    int cur = id;
    while (node(cur).parent_id) cur = *node(cur).parent_id;
    return cur;
  }

  nlohmann::json to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const CategoryNode& n : nodes_) {
      nlohmann::json obj;
      obj["id"] = n.id;
      obj["name"] = n.name;
      obj["level"] = n.level;
      if (n.parent_id)
        obj["parent_id"] = *n.parent_id;
      else
        obj["parent_id"] = nullptr;
      arr.push_back(obj);
    }
    return arr;
  }

  static LabelTree from_json(const nlohmann::json& arr);

 private:
  friend LabelTree build_tree(const std::vector<std::array<std::string, 3>>& records);

  void finalize() {
    children_.assign(nodes_.size(), {});
    for (auto& idx : level_index_) idx.clear();
    for (const CategoryNode& n : nodes_) {
      if (n.parent_id) children_[static_cast<std::size_t>(*n.parent_id)].push_back(n.id);
      level_index_[static_cast<std::size_t>(n.level - 1)].push_back(n.id);
    }
    auto by_qualified = [this](int a, int b) {
      return nodes_[static_cast<std::size_t>(a)].qualified_name <
             nodes_[static_cast<std::size_t>(b)].qualified_name;
    };
    for (auto& kids : children_) std::sort(kids.begin(), kids.end(), by_qualified);
    for (auto& idx : level_index_) std::sort(idx.begin(), idx.end(), by_qualified);
  }

  std::vector<CategoryNode> nodes_;
  std::vector<std::vector<int>> children_;
  std::array<std::vector<int>, 3> level_index_;
};

// Builds the taxonomy from (level-1, level-2, level-3) name triples.
// Duplicate records collapse; identical child names under different parents
// stay distinct nodes.
inline LabelTree build_tree(const std::vector<std::array<std::string, 3>>& records) {
  struct PathLess {
    bool operator()(const std::vector<std::string>& a, const std::vector<std::string>& b) const {
      return a < b;
    }
  };
  // Distinct paths per level, keyed by the full name path from the root.
  std::map<std::vector<std::string>, int, PathLess> path_ids;
  std::vector<std::vector<std::string>> paths;

  std::size_t record_no = 0;
  for (const auto& rec : records) {
    ++record_no;
    std::vector<std::string> path;
    for (const std::string& raw : rec) {
      const std::string name = trim_copy(raw);
      if (name.empty())
        throw FormatError("record " + std::to_string(record_no) +
                          ": empty category name component");
      if (name.find(kQualifierSeparator) != std::string::npos)
        throw FormatError("record " + std::to_string(record_no) + ": category name \"" + name +
                          "\" contains reserved character '@'");
      path.push_back(name);
      if (path_ids.emplace(path, 0).second) paths.push_back(path);
    }
  }

  // Canonical id order: by level, then by qualified name.
  auto qualified_of = [](const std::vector<std::string>& path) {
    return path.size() < 3 ? path.back() : path[1] + kQualifierSeparator + path[2];
  };
  std::sort(paths.begin(), paths.end(),
            [&](const std::vector<std::string>& a, const std::vector<std::string>& b) {
              if (a.size() != b.size()) return a.size() < b.size();
              if (qualified_of(a) != qualified_of(b)) return qualified_of(a) < qualified_of(b);
              return a < b;
            });

  LabelTree tree;
  std::map<std::string, int> seen_qualified;
  for (const auto& path : paths) {
    CategoryNode n;
    n.id = static_cast<int>(tree.nodes_.size());
    n.name = path.back();
    n.level = static_cast<int>(path.size());
    n.qualified_name = qualified_of(path);
    if (path.size() > 1) {
      std::vector<std::string> parent_path(path.begin(), path.end() - 1);
      n.parent_id = path_ids.at(parent_path);
    }
    auto [it, inserted] = seen_qualified.emplace(n.qualified_name, n.id);
    if (!inserted)
      throw FormatError("qualified category name \"" + n.qualified_name +
                        "\" is not unique across the tree");
    path_ids[path] = n.id;
    tree.nodes_.push_back(std::move(n));
  }
  tree.finalize();
  return tree;
}

inline LabelTree LabelTree::from_json(const nlohmann::json& arr) {
  if (!arr.is_array()) throw FormatError("label tree document must be a JSON array");
  LabelTree tree;
  tree.nodes_.resize(arr.size());
  for (const auto& obj : arr) {
    if (!obj.is_object() || !obj.contains("id") || !obj.contains("name") ||
        !obj.contains("level") || !obj.contains("parent_id"))
      throw SchemaError("label tree node must have id, name, level, parent_id");
    CategoryNode n;
    n.id = obj.at("id").get<int>();
    n.name = obj.at("name").get<std::string>();
    n.level = obj.at("level").get<int>();
    if (!obj.at("parent_id").is_null()) n.parent_id = obj.at("parent_id").get<int>();
    if (n.id < 0 || static_cast<std::size_t>(n.id) >= tree.nodes_.size())
      throw FormatError("label tree node id " + std::to_string(n.id) + " out of range");
    if (n.level < 1 || n.level > 3)
      throw FormatError("label tree node level must be 1..3, got " + std::to_string(n.level));
    if ((n.level == 1) != !n.parent_id)
      throw FormatError("node \"" + n.name + "\": parent_id must be absent exactly at level 1");
    tree.nodes_[static_cast<std::size_t>(n.id)] = std::move(n);
  }
  for (CategoryNode& n : tree.nodes_) {
    if (n.parent_id) {
      const CategoryNode& parent = tree.node(*n.parent_id);
      if (parent.level != n.level - 1)
        throw FormatError("node \"" + n.name + "\": parent must sit one level up");
      n.qualified_name = n.level == 3 ? qualify(parent.name, n.name) : n.name;
    } else {
      n.qualified_name = n.name;
    }
  }
  std::map<std::string, int> seen;
  for (const CategoryNode& n : tree.nodes_) {
    if (!seen.emplace(n.qualified_name, n.id).second)
      throw FormatError("qualified category name \"" + n.qualified_name +
                        "\" is not unique across the tree");
  }
  tree.finalize();
  return tree;
}

// Ordered class-index space for classification at a level, optionally
// restricted to one level-1 subtree.
inline std::vector<std::string> classes_at(const LabelTree& tree, int level,
                                           std::optional<int> restricted_to_root = std::nullopt) {
  if (level != 2 && level != 3) throw ContractError("classes_at: level must be 2 or 3");
  if (restricted_to_root) {
    const CategoryNode& root = tree.node(*restricted_to_root);
    if (root.level != 1)
      throw ContractError("classes_at: node \"" + root.name + "\" is not a level-1 root");
  }
  std::vector<std::string> classes;
  for (int id : tree.level_index(level)) {
    if (restricted_to_root && tree.root_of(id) != *restricted_to_root) continue;
    classes.push_back(tree.node(id).qualified_name);
  }
  return classes;
}

}  // namespace hft
