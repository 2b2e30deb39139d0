#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major arrays.
//
// A Tensor is a cheap handle to a node. Operations executed while a Tape is
// active on the current thread are recorded on that tape whenever at least one
// input requires a gradient; outside a tape every op is a plain forward
// evaluation (inference mode). Tapes nest per thread and must be destroyed in
// reverse order of construction.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace iterflow::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool has_grad = false;
  bool requires_grad = false;
  bool leaf = true;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;
  const void* tape = nullptr;
  std::size_t tape_position = 0;

  void ensure_grad() {
    if (!has_grad) {
      grad.assign(value.size(), T(0));
      has_grad = true;
    }
  }
};

template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static BasicTensor constant(Shape shape, std::vector<T> data);
  static BasicTensor parameter(Shape shape, std::vector<T> data);
  static BasicTensor zeros(Shape shape, bool requires_grad = false);
  static BasicTensor scalar(T value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const T> data() const { return node_->value; }
  // Only leaves may be mutated in place; writing into a recorded node would
  // silently invalidate its consumers' backward closures.
  std::span<T> mutable_data();
  // Empty span when no gradient has reached this tensor.
  std::span<const T> grad() const;
  void zero_grad();

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->leaf; }
  const char* op_name() const { return node_->op; }
  T item() const;
  T at(std::size_t i) const { return node_->value.at(i); }
  T at(std::size_t r, std::size_t c) const;

  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

// Ordered record of primitive operations. Constructing a tape makes it the
// active recorder for this thread until it is destroyed.
template <typename T>
class BasicTape {
 public:
  BasicTape();
  ~BasicTape();
  BasicTape(const BasicTape&) = delete;
  BasicTape& operator=(const BasicTape&) = delete;

  // Fills d(root)/d(leaf) into every reachable leaf (accumulating). Root must
  // be a scalar recorded on this tape.
  void backward(const BasicTensor<T>& root);

  std::size_t size() const { return nodes_.size(); }
  void record(const std::shared_ptr<Node<T>>& node);

  static BasicTape* active();

 private:
  std::vector<std::shared_ptr<Node<T>>> nodes_;
  BasicTape* previous_ = nullptr;
};

using Tensor = BasicTensor<double>;
using Tensor32 = BasicTensor<float>;
using Tape = BasicTape<double>;
using Tape32 = BasicTape<float>;
using Index = std::int32_t;

// ---- primitives -----------------------------------------------------------
//
// Broadcasting rule for add/sub/mul: shapes equal, or the right operand is a
// row vector ([m] or [1,m]) applied to every row of an [n,m] left operand, or
// the right operand holds a single element.

template <typename T> BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> scale(const BasicTensor<T>& x, T factor);
template <typename T> BasicTensor<T> concat(const std::vector<BasicTensor<T>>& parts, std::size_t axis);
template <typename T> BasicTensor<T> sigmoid(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> tanh(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> relu(const BasicTensor<T>& x);
// Reductions over one axis of a rank-2 tensor (or axis 0 of a rank-1 tensor).
// Max/min route the gradient to the lowest-index extremum.
template <typename T> BasicTensor<T> max_over_axis(const BasicTensor<T>& x, std::size_t axis);
template <typename T> BasicTensor<T> min_over_axis(const BasicTensor<T>& x, std::size_t axis);
template <typename T> BasicTensor<T> mean_over_axis(const BasicTensor<T>& x, std::size_t axis);
template <typename T> BasicTensor<T> sum_over_axis(const BasicTensor<T>& x, std::size_t axis);
template <typename T> BasicTensor<T> sum(const BasicTensor<T>& x);
// Euclidean norm of every row; the gradient at a zero row is zero.
template <typename T> BasicTensor<T> l2_norm_rows(const BasicTensor<T>& x);
// Elementwise minimum of two same-shape tensors; ties select `a`.
template <typename T> BasicTensor<T> min_select(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> gather_rows(const BasicTensor<T>& x, std::span<const Index> rows);
// Max over consecutive row groups [offsets[s], offsets[s+1]). Empty groups
// produce a zero row with no gradient path.
template <typename T>
BasicTensor<T> segment_max(const BasicTensor<T>& x, std::span<const std::size_t> offsets);

// ---- named parameter collection --------------------------------------------

template <typename T>
class BasicParamStore {
 public:
  BasicTensor<T>& add(const std::string& name, Shape shape, std::vector<T> init);
  const BasicTensor<T>& get(std::string_view name) const;
  BasicTensor<T>& get(std::string_view name);
  bool contains(std::string_view name) const;

  std::size_t size() const { return tensors_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  const std::vector<BasicTensor<T>>& tensors() const { return tensors_; }
  std::vector<BasicTensor<T>>& tensors() { return tensors_; }
  std::size_t total_parameters() const;

  // Same names and values, new leaf nodes; gradients start empty. Used to give
  // each sample of a batch its own gradient accumulators.
  BasicParamStore fresh_leaves() const;
  template <typename U>
  BasicParamStore<U> cast() const;

  // Snapshot of every gradient in parameter order (zeros where none arrived).
  std::vector<std::vector<T>> gradients() const;
  void zero_grad();

 private:
  std::vector<std::string> names_;
  std::vector<BasicTensor<T>> tensors_;
  std::unordered_map<std::string, std::size_t> index_;
};

using ParamStore = BasicParamStore<double>;

template <typename T>
template <typename U>
BasicParamStore<U> BasicParamStore<T>::cast() const {
  BasicParamStore<U> out;
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    auto src = tensors_[i].data();
    out.add(names_[i], tensors_[i].shape(), std::vector<U>(src.begin(), src.end()));
  }
  return out;
}

// Pairwise (tree) summation of per-sample gradient sets. The result depends
// only on the order of `parts`, never on how they were produced.
std::vector<std::vector<double>> tree_reduce(std::vector<std::vector<std::vector<double>>> parts);

}  // namespace iterflow::ad
