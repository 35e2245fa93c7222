#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ufc/error.hpp"

namespace ufc {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename T>
class Tape;

/// Immutable dense n-d array with contiguous row-major storage.
///
/// An Array is either a constant or a node recorded on a Tape. Copies share
/// the buffer; nothing ever writes to a buffer after construction, so arrays
/// can be handed across threads freely. Construction rejects non-finite
/// values, which makes every operation fail fast on NaN/Inf.
template <typename T>
class Array {
 public:
  using value_type = T;

  Array() : data_(std::make_shared<const std::vector<T>>()) {}

  Array(Shape shape, std::vector<T> data) : shape_(std::move(shape)) {
    for (auto e : shape_) {
      if (e == 0) throw DimensionError("array extents must be positive, got " + to_string(shape_));
    }
    if (numel(shape_) != data.size()) {
      throw DimensionError("shape " + to_string(shape_) + " does not match " +
                           std::to_string(data.size()) + " values");
    }
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (!std::isfinite(data[i])) {
        throw NumericError("non-finite value at flat index " + std::to_string(i) + " of " +
                           to_string(shape_) + " array");
      }
    }
    data_ = std::make_shared<const std::vector<T>>(std::move(data));
  }

  static Array zeros(Shape shape) {
    const auto n = numel(shape);
    return Array(std::move(shape), std::vector<T>(n, T(0)));
  }
  static Array full(Shape shape, T value) {
    const auto n = numel(shape);
    return Array(std::move(shape), std::vector<T>(n, value));
  }
  static Array scalar(T value) { return Array({1}, {value}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_->size(); }
  bool empty() const noexcept { return data_->empty(); }

  std::span<const T> data() const noexcept { return {data_->data(), data_->size()}; }
  const T* ptr() const noexcept { return data_->data(); }
  T operator[](std::size_t i) const { return (*data_)[i]; }

  template <typename... Idx>
  T at(Idx... idx) const {
    static_assert(sizeof...(Idx) > 0);
    const std::size_t index[] = {static_cast<std::size_t>(idx)...};
    if (sizeof...(Idx) != shape_.size()) throw DimensionError("index rank mismatch for " + to_string(shape_));
    std::size_t flat = 0;
    for (std::size_t a = 0; a < shape_.size(); ++a) {
      if (index[a] >= shape_[a]) throw DimensionError("index out of range for " + to_string(shape_));
      flat = flat * shape_[a] + index[a];
    }
    return (*data_)[flat];
  }

  T item() const {
    if (size() != 1) throw ContractError("item() on non-scalar array " + to_string(shape_));
    return (*data_)[0];
  }

  std::vector<T> to_vector() const { return *data_; }

  bool tracked() const noexcept { return tape_ != nullptr; }
  Tape<T>* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }

  /// Same values, no graph membership.
  Array detached() const {
    Array out = *this;
    out.tape_ = nullptr;
    out.id_ = 0;
    return out;
  }

  /// Same buffer viewed with another shape of equal element count.
  Array with_shape(Shape shape) const {
    if (numel(shape) != size()) {
      throw DimensionError("cannot view " + to_string(shape_) + " as " + to_string(shape));
    }
    Array out = *this;
    out.shape_ = std::move(shape);
    return out;
  }

 private:
  friend class Tape<T>;

  Shape shape_;
  std::shared_ptr<const std::vector<T>> data_;
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Eager reverse-mode recorder.
///
/// Every differentiable op whose inputs live on a tape appends one node with
/// a closure that scatters the output gradient into its inputs' slots. Node
/// ids are creation order, so walking ids downward is a reverse topological
/// order. One tape belongs to one forward/backward pass.
template <typename T>
class Tape {
 public:
  using GradFn = std::function<void(Tape&, std::span<const T>)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Registers a leaf whose gradient is kept after backward().
  Array<T> variable(const Array<T>& value) {
    Array<T> out = value.detached();
    attach(out, nullptr, true);
    return out;
  }

  /// Attaches an op output computed from tracked inputs.
  Array<T> record(Array<T> value, GradFn fn) {
    attach(value, std::move(fn), false);
    return value;
  }

  /// Zero-initialized gradient slot of `a`, or nullptr when `a` is not on
  /// this tape (constants receive no gradient).
  T* grad_ptr(const Array<T>& a) {
    if (a.tape_ != this) return nullptr;
    auto& node = nodes_[a.id_];
    if (node.grad.empty()) node.grad.assign(node.numel, T(0));
    return node.grad.data();
  }

  void accumulate(const Array<T>& a, std::span<const T> g) {
    T* slot = grad_ptr(a);
    if (!slot) return;
    for (std::size_t i = 0; i < g.size(); ++i) slot[i] += g[i];
  }

  void backward(const Array<T>& loss) {
    if (loss.size() != 1) {
      throw ContractError("backward needs a scalar loss, got " + to_string(loss.shape()));
    }
    if (loss.tape_ != this) throw ContractError("loss is not recorded on this tape");
    if (ran_) throw ContractError("backward already ran on this tape");
    ran_ = true;
    grad_ptr(loss)[0] += T(1);
    for (std::size_t id = loss.id_ + 1; id-- > 0;) {
      auto& node = nodes_[id];
      if (node.grad.empty() || !node.fn) continue;
      std::vector<T> g = std::move(node.grad);
      node.fn(*this, std::span<const T>(g));
      // Intermediate gradients are not needed after propagation.
      node.grad.clear();
      node.grad.shrink_to_fit();
      node.fn = nullptr;
    }
  }

  /// Gradient of a leaf after backward(); zeros if it received none.
  std::vector<T> grad(const Array<T>& a) const {
    if (a.tape_ != this) throw ContractError("array is not recorded on this tape");
    const auto& node = nodes_[a.id_];
    if (node.grad.empty()) return std::vector<T>(node.numel, T(0));
    return node.grad;
  }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    std::size_t numel = 0;
    GradFn fn;
    std::vector<T> grad;
    bool leaf = false;
  };

  void attach(Array<T>& a, GradFn fn, bool leaf) {
    a.tape_ = this;
    a.id_ = nodes_.size();
    nodes_.push_back(Node{a.size(), std::move(fn), {}, leaf});
  }

  std::vector<Node> nodes_;
  bool ran_ = false;
};

namespace detail {

/// The tape shared by all tracked inputs, or nullptr for an all-constant call.
template <typename T>
Tape<T>* common_tape(std::initializer_list<const Array<T>*> inputs) {
  Tape<T>* tape = nullptr;
  for (const auto* a : inputs) {
    if (!a->tracked()) continue;
    if (tape && tape != a->tape()) throw ContractError("inputs are recorded on different tapes");
    tape = a->tape();
  }
  return tape;
}

}  // namespace detail

}  // namespace ufc
