#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "hft/errors.hpp"

namespace hft {

enum class Mode { train, eval };

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

class Tape;

// Dense row-major tensor of 64-bit floats. Copies are shallow: they share
// the value storage, so a Tensor behaves as a handle. Values are treated as
// immutable once built; the only sanctioned writers are parameter
// initialization, the optimizer, and gradient accumulation during backward
// (all single-writer by contract).
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<double>>(std::move(values))),
        requires_grad_(requires_grad) {
    for (std::size_t d : shape_) {
      if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape_));
    }
    if (shape_.empty()) throw ShapeError("tensor shape must have at least one dimension");
    if (numel(shape_) != data_->size()) {
      throw ShapeError("shape " + shape_str(shape_) + " does not match " +
                       std::to_string(data_->size()) + " values");
    }
    if (requires_grad_) {
      grad_ = std::make_shared<std::vector<double>>(data_->size(), 0.0);
    }
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    std::vector<double> v(numel(shape), 0.0);
    return Tensor(std::move(shape), std::move(v), requires_grad);
  }

  static Tensor full(Shape shape, double value, bool requires_grad = false) {
    std::vector<double> v(numel(shape), value);
    return Tensor(std::move(shape), std::move(v), requires_grad);
  }

  static Tensor scalar(double value) { return Tensor({1}, {value}); }

  static Tensor row(std::vector<double> values, bool requires_grad = false) {
    Shape s{values.size()};
    return Tensor(std::move(s), std::move(values), requires_grad);
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                       bool requires_grad = false) {
    return Tensor({rows, cols}, std::move(values), requires_grad);
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_ ? data_->size() : 0; }
  bool empty() const { return !data_; }

  const std::vector<double>& values() const { return *data_; }
  // Mutable access for the sanctioned writers listed above.
  std::vector<double>& values() { return *data_; }

  double item() const {
    if (size() != 1) throw ShapeError("item() on non-scalar tensor " + shape_str(shape_));
    return (*data_)[0];
  }

  double at(std::size_t flat_index) const { return data_->at(flat_index); }

  bool requires_grad() const { return requires_grad_; }

  const std::vector<double>& grad() const {
    if (!grad_) throw ContractError("tensor has no gradient storage");
    return *grad_;
  }

  void zero_grad() {
    if (grad_) std::fill(grad_->begin(), grad_->end(), 0.0);
  }

  // Deep copy: fresh value and gradient storage.
  Tensor clone() const {
    Tensor out(shape_, *data_, requires_grad_);
    return out;
  }

  // Stable identity of the value storage, used by tapes to key leaves.
  const void* id() const { return data_.get(); }
  std::shared_ptr<std::vector<double>> storage() const { return data_; }
  std::shared_ptr<std::vector<double>> grad_storage() const { return grad_; }

 private:
  Shape shape_;
  std::shared_ptr<std::vector<double>> data_;
  std::shared_ptr<std::vector<double>> grad_;  // allocated iff requires_grad
  bool requires_grad_ = false;

  // Linkage to the tape that produced this tensor, if any. The epoch guards
  // against a dead tape being reallocated at the same address.
  friend class Tape;
  Tape* tape_ = nullptr;
  std::uint64_t tape_epoch_ = 0;
  int node_ = -1;
};

// Ordered record of executed operations. Each recorded node holds a backward
// rule that routes its adjoint to the adjoints of its parents (or, for leaf
// nodes, into the tensor's gradient buffer). Nodes are appended in execution
// order, so a single reverse sweep is a valid topological replay that visits
// each node exactly once.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const std::vector<double>&)>;

  Tape() : epoch_(next_epoch()) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::uint64_t epoch() const { return epoch_; }
  std::size_t node_count() const { return nodes_.size(); }

  bool is_tracked(const Tensor& t) const {
    return t.tape_ == this && t.tape_epoch_ == epoch_ && t.node_ >= 0;
  }

  // Node id for an input tensor: an existing intermediate, a
  // found-or-created leaf for requires_grad tensors, or -1 for constants.
  int node_for(const Tensor& t) {
    if (is_tracked(t)) return t.node_;
    if (!t.requires_grad()) return -1;
    auto it = leaves_.find(t.id());
    if (it != leaves_.end()) return it->second;
    auto grad = t.grad_storage();
    const int id = add_node({}, t.size(), [grad](Tape&, const std::vector<double>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) (*grad)[i] += g[i];
    });
    leaves_.emplace(t.id(), id);
    return id;
  }

  int add_node(std::vector<int> parents, std::size_t out_size, BackwardFn fn) {
    nodes_.push_back(Node{std::move(parents), out_size, std::move(fn)});
    adjoints_.emplace_back();
    return static_cast<int>(nodes_.size()) - 1;
  }

  void attach(Tensor& out, int node) {
    out.tape_ = this;
    out.tape_epoch_ = epoch_;
    out.node_ = node;
  }

  std::vector<double>& adjoint(int node) { return adjoints_.at(static_cast<std::size_t>(node)); }

  void accumulate(int node, const std::vector<double>& g) {
    auto& adj = adjoints_.at(static_cast<std::size_t>(node));
    if (adj.empty()) adj.assign(nodes_[static_cast<std::size_t>(node)].out_size, 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) adj[i] += g[i];
  }

  // Reverse sweep from a scalar loss. Every requires_grad tensor that the
  // loss depends on receives (accumulates) its gradient. Nodes not on a path
  // to the loss keep an empty adjoint and are skipped, so unrelated recorded
  // subgraphs cannot leak gradient.
  void backward(const Tensor& loss) {
    if (!is_tracked(loss)) throw ContractError("backward: loss was not recorded on this tape");
    if (loss.size() != 1) throw ContractError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    if (backward_done_) throw ContractError("backward: tape already replayed");
    backward_done_ = true;
    adjoints_[static_cast<std::size_t>(loss.node_)] = {1.0};
    for (int i = loss.node_; i >= 0; --i) {
      auto& adj = adjoints_[static_cast<std::size_t>(i)];
      if (adj.empty()) continue;
      nodes_[static_cast<std::size_t>(i)].backward(*this, adj);
    }
  }

  static Tape* active() { return active_tape(); }

 private:
  struct Node {
    std::vector<int> parents;
    std::size_t out_size;
    BackwardFn backward;
  };

  static std::uint64_t next_epoch() {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1);
  }

  static Tape*& active_tape() {
    thread_local Tape* current = nullptr;
    return current;
  }

  std::vector<Node> nodes_;
  std::vector<std::vector<double>> adjoints_;
  std::unordered_map<const void*, int> leaves_;
  std::uint64_t epoch_;
  bool backward_done_ = false;

  friend class TapeScope;
};

// RAII activation of a tape for the current thread. Ops record themselves on
// the innermost active tape; with no scope in effect they are pure forward
// computations.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape) : previous_(Tape::active_tape()) {
    Tape::active_tape() = &tape;
  }
  ~TapeScope() { Tape::active_tape() = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

namespace detail {

// Per-op recording context. Inactive when no tape is in scope or no input
// participates in differentiation.
struct OpCtx {
  Tape* tape = nullptr;
  std::vector<int> parents;

  bool active() const { return tape != nullptr; }

  void attach(Tensor& out, Tape::BackwardFn fn) {
    const int node = tape->add_node(parents, out.size(), std::move(fn));
    tape->attach(out, node);
  }
};

inline OpCtx begin_op(std::initializer_list<const Tensor*> inputs) {
  OpCtx ctx;
  Tape* tape = Tape::active();
  if (!tape) return ctx;
  bool any = false;
  for (const Tensor* t : inputs) {
    if (tape->is_tracked(*t) || t->requires_grad()) {
      any = true;
      break;
    }
  }
  if (!any) return ctx;
  ctx.tape = tape;
  ctx.parents.reserve(inputs.size());
  for (const Tensor* t : inputs) ctx.parents.push_back(tape->node_for(*t));
  return ctx;
}

}  // namespace detail

}  // namespace hft
