#include "iterflow/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace iterflow::ad {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

template <typename T>
thread_local BasicTape<T>* g_active_tape = nullptr;

[[noreturn]] void shape_error(const char* op, const std::string& detail) {
  throw std::invalid_argument(std::string(op) + ": " + detail);
}

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

// Creates the output node and records it when any input needs a gradient and
// a tape is listening. The backward closure receives the output node; inputs
// are reachable through node.inputs in the order given here.
template <typename T>
BasicTensor<T> make_op(const char* name, Shape shape, std::vector<T> value,
                       std::vector<NodePtr<T>> inputs, std::function<void(Node<T>&)> backward) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = name;
  node->leaf = false;
  auto* tape = BasicTape<T>::active();
  bool needs = false;
  for (const auto& in : inputs) needs = needs || in->requires_grad;
  if (needs && tape != nullptr) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
    tape->record(node);
  }
  return BasicTensor<T>(node);
}

template <typename T>
T* grad_of(Node<T>& n) {
  if (!n.requires_grad) return nullptr;
  n.ensure_grad();
  return n.grad.data();
}

enum class Broadcast { kSame, kRow, kScalar };

template <typename T>
Broadcast broadcast_kind(const char* op, const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() == b.shape()) return Broadcast::kSame;
  if (b.size() == 1) return Broadcast::kScalar;
  if (a.rank() == 2) {
    const auto m = a.shape()[1];
    const bool row_vec = (b.rank() == 1 && b.shape()[0] == m) ||
                         (b.rank() == 2 && b.shape()[0] == 1 && b.shape()[1] == m);
    if (row_vec) return Broadcast::kRow;
  }
  shape_error(op, "incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
}

// Index into b for flat element i of a.
inline std::size_t bidx(Broadcast k, std::size_t i, std::size_t cols) {
  switch (k) {
    case Broadcast::kSame: return i;
    case Broadcast::kRow: return i % cols;
    case Broadcast::kScalar: return 0;
  }
  return 0;
}

template <typename T>
std::size_t cols_of(const BasicTensor<T>& a) {
  return a.rank() == 2 ? a.shape()[1] : 1;
}

template <typename T, typename Op>
BasicTensor<T> unary(const char* name, const BasicTensor<T>& x, Op f,
                     std::function<void(Node<T>&)> backward) {
  std::vector<T> out(x.size());
  auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  return make_op<T>(name, x.shape(), std::move(out), {x.node()}, std::move(backward));
}

template <typename T>
void require_rank2(const char* op, const BasicTensor<T>& x) {
  if (x.rank() != 2) shape_error(op, "expected a rank-2 tensor, got " + shape_str(x.shape()));
}

template <typename T, bool kMax>
BasicTensor<T> extremum_over_axis(const char* name, const BasicTensor<T>& x, std::size_t axis) {
  if (x.rank() == 1 && axis == 0) {
    if (x.size() == 0) shape_error(name, "empty input");
    auto v = x.data();
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
      if (kMax ? v[i] > v[best] : v[i] < v[best]) best = i;
    return make_op<T>(name, Shape{}, {v[best]}, {x.node()}, [best](Node<T>& out) {
      if (T* g = grad_of(*out.inputs[0])) g[best] += out.grad[0];
    });
  }
  if (x.rank() != 2 || axis > 1)
    shape_error(name, "axis " + std::to_string(axis) + " invalid for " + shape_str(x.shape()));
  const std::size_t n = x.shape()[0], m = x.shape()[1];
  const std::size_t outer = axis == 0 ? m : n;
  const std::size_t inner = axis == 0 ? n : m;
  if (inner == 0) shape_error(name, "reduction over an empty axis of " + shape_str(x.shape()));
  auto v = x.data();
  std::vector<T> out(outer);
  std::vector<std::size_t> arg(outer);
  for (std::size_t o = 0; o < outer; ++o) {
    auto at = [&](std::size_t k) { return axis == 0 ? k * m + o : o * m + k; };
    std::size_t best = at(0);
    for (std::size_t k = 1; k < inner; ++k) {
      const std::size_t idx = at(k);
      if (kMax ? v[idx] > v[best] : v[idx] < v[best]) best = idx;
    }
    out[o] = v[best];
    arg[o] = best;
  }
  return make_op<T>(name, Shape{outer}, std::move(out), {x.node()},
                    [arg = std::move(arg)](Node<T>& node) {
                      if (T* g = grad_of(*node.inputs[0]))
                        for (std::size_t o = 0; o < arg.size(); ++o) g[arg[o]] += node.grad[o];
                    });
}

template <typename T>
BasicTensor<T> sum_or_mean_over_axis(const char* name, const BasicTensor<T>& x, std::size_t axis,
                                     bool mean) {
  if (x.rank() == 1 && axis == 0) {
    const std::size_t n = x.size();
    if (mean && n == 0) shape_error(name, "mean of an empty tensor");
    T acc = 0;
    for (auto v : x.data()) acc += v;
    const T factor = mean ? T(1) / static_cast<T>(n) : T(1);
    return make_op<T>(name, Shape{}, {acc * factor}, {x.node()}, [factor](Node<T>& out) {
      if (T* g = grad_of(*out.inputs[0])) {
        const T d = out.grad[0] * factor;
        for (std::size_t i = 0; i < out.inputs[0]->value.size(); ++i) g[i] += d;
      }
    });
  }
  if (x.rank() != 2 || axis > 1)
    shape_error(name, "axis " + std::to_string(axis) + " invalid for " + shape_str(x.shape()));
  const std::size_t n = x.shape()[0], m = x.shape()[1];
  const std::size_t inner = axis == 0 ? n : m;
  if (mean && inner == 0) shape_error(name, "mean over an empty axis of " + shape_str(x.shape()));
  const T factor = mean ? T(1) / static_cast<T>(inner) : T(1);
  auto v = x.data();
  std::vector<T> out(axis == 0 ? m : n, T(0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[axis == 0 ? j : i] += v[i * m + j];
  for (auto& o : out) o *= factor;
  const std::size_t len = out.size();
  return make_op<T>(name, Shape{len}, std::move(out), {x.node()},
                    [axis, n, m, factor](Node<T>& node) {
                      if (T* g = grad_of(*node.inputs[0]))
                        for (std::size_t i = 0; i < n; ++i)
                          for (std::size_t j = 0; j < m; ++j)
                            g[i * m + j] += node.grad[axis == 0 ? j : i] * factor;
                    });
}

}  // namespace

// ---- Tensor ---------------------------------------------------------------

template <typename T>
BasicTensor<T> BasicTensor<T>::constant(Shape shape, std::vector<T> data) {
  if (numel(shape) != data.size())
    shape_error("constant", "data length " + std::to_string(data.size()) + " does not match shape " +
                                shape_str(shape));
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(data);
  return BasicTensor(node);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::parameter(Shape shape, std::vector<T> data) {
  auto t = constant(std::move(shape), std::move(data));
  t.node_->requires_grad = true;
  return t;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::zeros(Shape shape, bool requires_grad) {
  const auto n = numel(shape);
  auto t = constant(std::move(shape), std::vector<T>(n, T(0)));
  t.node_->requires_grad = requires_grad;
  return t;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::scalar(T value) {
  return constant(Shape{}, {value});
}

template <typename T>
std::size_t BasicTensor<T>::rows() const {
  return rank() == 0 ? 1 : shape()[0];
}

template <typename T>
std::size_t BasicTensor<T>::cols() const {
  return rank() == 2 ? shape()[1] : 1;
}

template <typename T>
std::span<T> BasicTensor<T>::mutable_data() {
  if (!node_->leaf) throw std::logic_error("mutable_data: tensor produced by '" + std::string(node_->op) + "' is not a leaf");
  return node_->value;
}

template <typename T>
std::span<const T> BasicTensor<T>::grad() const {
  if (!node_->has_grad) return {};
  return node_->grad;
}

template <typename T>
void BasicTensor<T>::zero_grad() {
  node_->grad.clear();
  node_->has_grad = false;
}

template <typename T>
T BasicTensor<T>::item() const {
  if (size() != 1) throw std::invalid_argument("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
  return node_->value[0];
}

template <typename T>
T BasicTensor<T>::at(std::size_t r, std::size_t c) const {
  return node_->value.at(r * cols() + c);
}

// ---- Tape -----------------------------------------------------------------

template <typename T>
BasicTape<T>::BasicTape() : previous_(g_active_tape<T>) {
  g_active_tape<T> = this;
}

template <typename T>
BasicTape<T>::~BasicTape() {
  g_active_tape<T> = previous_;
}

template <typename T>
BasicTape<T>* BasicTape<T>::active() {
  return g_active_tape<T>;
}

template <typename T>
void BasicTape<T>::record(const std::shared_ptr<Node<T>>& node) {
  node->tape = this;
  node->tape_position = nodes_.size();
  nodes_.push_back(node);
}

template <typename T>
void BasicTape<T>::backward(const BasicTensor<T>& root) {
  if (!root.defined()) throw std::invalid_argument("backward: undefined root");
  if (root.size() != 1)
    throw std::invalid_argument("backward: root must be a scalar, got shape " + shape_str(root.shape()));
  const auto& rnode = root.node();
  if (rnode->tape != this) {
    // A root that never touched a parameter has nothing to propagate.
    if (!rnode->requires_grad) return;
    throw std::invalid_argument("backward: root was not recorded on this tape");
  }
  for (auto& n : nodes_) {
    n->grad.clear();
    n->has_grad = false;
  }
  rnode->ensure_grad();
  rnode->grad[0] = T(1);
  for (std::size_t i = rnode->tape_position + 1; i-- > 0;) {
    Node<T>& n = *nodes_[i];
    if (n.has_grad && n.backward) n.backward(n);
  }
}

// ---- primitives -------------------------------------------------------------

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// copies into Eigen-owned storage so kernel paths never depend on the caller's alignment
template <typename T>
RowMat<T> aligned(const T* p, std::size_t r, std::size_t c) {
  return Eigen::Map<const RowMat<T>>(p, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

template <typename T>
void add_into(T* dst, const RowMat<T>& m) {
  const T* src = m.data();
  for (Eigen::Index i = 0; i < m.size(); ++i) dst[i] += src[i];
}

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0])
    shape_error("matmul", "shape mismatch " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const std::size_t n = a.shape()[0], k = a.shape()[1], m = b.shape()[1];
  std::vector<T> out(n * m, T(0));
  if (n && m && k) {
    const RowMat<T> c = aligned(a.data().data(), n, k) * aligned(b.data().data(), k, m);
    std::copy(c.data(), c.data() + c.size(), out.begin());
  }
  return make_op<T>("matmul", Shape{n, m}, std::move(out), {a.node(), b.node()},
                    [n, k, m](Node<T>& node) {
                      if (n == 0 || k == 0 || m == 0) return;
                      const RowMat<T> dc = aligned(node.grad.data(), n, m);
                      auto& A = *node.inputs[0];
                      auto& B = *node.inputs[1];
                      if (T* ga = grad_of(A)) add_into<T>(ga, dc * aligned(B.value.data(), k, m).transpose());
                      if (T* gb = grad_of(B)) add_into<T>(gb, aligned(A.value.data(), n, k).transpose() * dc);
                    });
}

template <typename T, int kSign>
BasicTensor<T> add_like(const char* name, const BasicTensor<T>& a, const BasicTensor<T>& b) {
  const auto kind = broadcast_kind(name, a, b);
  const std::size_t cols = cols_of(a);
  std::vector<T> out(a.size());
  auto va = a.data();
  auto vb = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] + T(kSign) * vb[bidx(kind, i, cols)];
  return make_op<T>(name, a.shape(), std::move(out), {a.node(), b.node()},
                    [kind, cols](Node<T>& node) {
                      const std::size_t n = node.grad.size();
                      if (T* ga = grad_of(*node.inputs[0]))
                        for (std::size_t i = 0; i < n; ++i) ga[i] += node.grad[i];
                      if (T* gb = grad_of(*node.inputs[1]))
                        for (std::size_t i = 0; i < n; ++i) gb[bidx(kind, i, cols)] += T(kSign) * node.grad[i];
                    });
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return add_like<T, 1>("add", a, b);
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return add_like<T, -1>("sub", a, b);
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  const auto kind = broadcast_kind("mul", a, b);
  const std::size_t cols = cols_of(a);
  std::vector<T> out(a.size());
  auto va = a.data();
  auto vb = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] * vb[bidx(kind, i, cols)];
  return make_op<T>("mul", a.shape(), std::move(out), {a.node(), b.node()},
                    [kind, cols](Node<T>& node) {
                      const std::size_t n = node.grad.size();
                      const auto& A = node.inputs[0]->value;
                      const auto& B = node.inputs[1]->value;
                      if (T* ga = grad_of(*node.inputs[0]))
                        for (std::size_t i = 0; i < n; ++i) ga[i] += node.grad[i] * B[bidx(kind, i, cols)];
                      if (T* gb = grad_of(*node.inputs[1]))
                        for (std::size_t i = 0; i < n; ++i) gb[bidx(kind, i, cols)] += node.grad[i] * A[i];
                    });
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& x, T factor) {
  return unary<T>("scale", x, [factor](T v) { return v * factor; }, [factor](Node<T>& node) {
    if (T* g = grad_of(*node.inputs[0]))
      for (std::size_t i = 0; i < node.grad.size(); ++i) g[i] += node.grad[i] * factor;
  });
}

template <typename T>
BasicTensor<T> concat(const std::vector<BasicTensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) shape_error("concat", "no inputs");
  std::vector<NodePtr<T>> inputs;
  inputs.reserve(parts.size());
  for (const auto& p : parts) inputs.push_back(p.node());

  if (axis == 0) {
    const std::size_t rank = parts[0].rank();
    std::size_t rows = 0;
    for (const auto& p : parts) {
      if (p.rank() != rank || (rank == 2 && p.shape()[1] != parts[0].shape()[1]) || rank == 0 || rank > 2)
        shape_error("concat", "axis 0 mismatch " + shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
      rows += p.shape()[0];
    }
    Shape shape = rank == 2 ? Shape{rows, parts[0].shape()[1]} : Shape{rows};
    std::vector<T> out;
    out.reserve(numel(shape));
    for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
    return make_op<T>("concat", std::move(shape), std::move(out), std::move(inputs), [](Node<T>& node) {
      std::size_t offset = 0;
      for (auto& in : node.inputs) {
        const std::size_t n = in->value.size();
        if (T* g = grad_of(*in))
          for (std::size_t i = 0; i < n; ++i) g[i] += node.grad[offset + i];
        offset += n;
      }
    });
  }
  if (axis != 1) shape_error("concat", "axis must be 0 or 1");
  const std::size_t n = parts[0].rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.shape()[0] != n)
      shape_error("concat", "axis 1 row mismatch " + shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
    widths.push_back(p.shape()[1]);
    total += p.shape()[1];
  }
  std::vector<T> out(n * total);
  std::size_t col = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    auto v = parts[p].data();
    const std::size_t w = widths[p];
    for (std::size_t i = 0; i < n; ++i) std::copy_n(v.data() + i * w, w, out.data() + i * total + col);
    col += w;
  }
  return make_op<T>("concat", Shape{n, total}, std::move(out), std::move(inputs),
                    [n, total, widths = std::move(widths)](Node<T>& node) {
                      std::size_t col = 0;
                      for (std::size_t p = 0; p < node.inputs.size(); ++p) {
                        const std::size_t w = widths[p];
                        if (T* g = grad_of(*node.inputs[p]))
                          for (std::size_t i = 0; i < n; ++i)
                            for (std::size_t j = 0; j < w; ++j) g[i * w + j] += node.grad[i * total + col + j];
                        col += w;
                      }
                    });
}

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x) {
  return unary<T>("sigmoid", x, [](T v) { return T(1) / (T(1) + std::exp(-v)); }, [](Node<T>& node) {
    if (T* g = grad_of(*node.inputs[0]))
      for (std::size_t i = 0; i < node.grad.size(); ++i) {
        const T s = node.value[i];
        g[i] += node.grad[i] * s * (T(1) - s);
      }
  });
}

template <typename T>
BasicTensor<T> tanh(const BasicTensor<T>& x) {
  return unary<T>("tanh", x, [](T v) { return std::tanh(v); }, [](Node<T>& node) {
    if (T* g = grad_of(*node.inputs[0]))
      for (std::size_t i = 0; i < node.grad.size(); ++i) {
        const T t = node.value[i];
        g[i] += node.grad[i] * (T(1) - t * t);
      }
  });
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  return unary<T>("relu", x, [](T v) { return v > T(0) ? v : T(0); }, [](Node<T>& node) {
    if (T* g = grad_of(*node.inputs[0]))
      for (std::size_t i = 0; i < node.grad.size(); ++i)
        if (node.value[i] > T(0)) g[i] += node.grad[i];
  });
}

template <typename T>
BasicTensor<T> max_over_axis(const BasicTensor<T>& x, std::size_t axis) {
  return extremum_over_axis<T, true>("max_over_axis", x, axis);
}

template <typename T>
BasicTensor<T> min_over_axis(const BasicTensor<T>& x, std::size_t axis) {
  return extremum_over_axis<T, false>("min_over_axis", x, axis);
}

template <typename T>
BasicTensor<T> mean_over_axis(const BasicTensor<T>& x, std::size_t axis) {
  return sum_or_mean_over_axis<T>("mean_over_axis", x, axis, true);
}

template <typename T>
BasicTensor<T> sum_over_axis(const BasicTensor<T>& x, std::size_t axis) {
  return sum_or_mean_over_axis<T>("sum_over_axis", x, axis, false);
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
  T acc = 0;
  for (auto v : x.data()) acc += v;
  return make_op<T>("sum", Shape{}, {acc}, {x.node()}, [](Node<T>& node) {
    if (T* g = grad_of(*node.inputs[0]))
      for (std::size_t i = 0; i < node.inputs[0]->value.size(); ++i) g[i] += node.grad[0];
  });
}

template <typename T>
BasicTensor<T> l2_norm_rows(const BasicTensor<T>& x) {
  require_rank2("l2_norm_rows", x);
  const std::size_t n = x.shape()[0], m = x.shape()[1];
  auto v = x.data();
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    T acc = 0;
    for (std::size_t j = 0; j < m; ++j) acc += v[i * m + j] * v[i * m + j];
    out[i] = std::sqrt(acc);
  }
  return make_op<T>("l2_norm_rows", Shape{n}, std::move(out), {x.node()}, [n, m](Node<T>& node) {
    if (T* g = grad_of(*node.inputs[0])) {
      const auto& xv = node.inputs[0]->value;
      for (std::size_t i = 0; i < n; ++i) {
        const T norm = node.value[i];
        if (norm == T(0)) continue;
        const T s = node.grad[i] / norm;
        for (std::size_t j = 0; j < m; ++j) g[i * m + j] += s * xv[i * m + j];
      }
    }
  });
}

template <typename T>
BasicTensor<T> min_select(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape())
    shape_error("min_select", "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  auto va = a.data();
  auto vb = b.data();
  std::vector<T> out(a.size());
  std::vector<std::uint8_t> took_b(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    took_b[i] = vb[i] < va[i];
    out[i] = took_b[i] ? vb[i] : va[i];
  }
  return make_op<T>("min_select", a.shape(), std::move(out), {a.node(), b.node()},
                    [took_b = std::move(took_b)](Node<T>& node) {
                      T* ga = grad_of(*node.inputs[0]);
                      T* gb = grad_of(*node.inputs[1]);
                      for (std::size_t i = 0; i < node.grad.size(); ++i) {
                        if (took_b[i]) {
                          if (gb) gb[i] += node.grad[i];
                        } else if (ga) {
                          ga[i] += node.grad[i];
                        }
                      }
                    });
}

template <typename T>
BasicTensor<T> gather_rows(const BasicTensor<T>& x, std::span<const Index> rows) {
  if (x.rank() != 1 && x.rank() != 2) shape_error("gather_rows", "expected rank 1 or 2, got " + shape_str(x.shape()));
  const std::size_t n = x.shape()[0];
  const std::size_t m = x.rank() == 2 ? x.shape()[1] : 1;
  auto v = x.data();
  std::vector<T> out(rows.size() * m);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto src = rows[r];
    if (src < 0 || static_cast<std::size_t>(src) >= n)
      shape_error("gather_rows", "row index " + std::to_string(src) + " out of range for " + shape_str(x.shape()));
    std::copy_n(v.data() + static_cast<std::size_t>(src) * m, m, out.data() + r * m);
  }
  Shape shape = x.rank() == 2 ? Shape{rows.size(), m} : Shape{rows.size()};
  return make_op<T>("gather_rows", std::move(shape), std::move(out), {x.node()},
                    [idx = std::vector<Index>(rows.begin(), rows.end()), m](Node<T>& node) {
                      if (T* g = grad_of(*node.inputs[0]))
                        for (std::size_t r = 0; r < idx.size(); ++r)
                          for (std::size_t j = 0; j < m; ++j)
                            g[static_cast<std::size_t>(idx[r]) * m + j] += node.grad[r * m + j];
                    });
}

template <typename T>
BasicTensor<T> segment_max(const BasicTensor<T>& x, std::span<const std::size_t> offsets) {
  require_rank2("segment_max", x);
  if (offsets.empty() || offsets.front() != 0 || offsets.back() != x.shape()[0])
    shape_error("segment_max", "offsets must start at 0 and end at the row count of " + shape_str(x.shape()));
  const std::size_t m = x.shape()[1];
  const std::size_t segments = offsets.size() - 1;
  auto v = x.data();
  std::vector<T> out(segments * m, T(0));
  // -1 marks an empty segment (no gradient path).
  std::vector<std::ptrdiff_t> arg(segments * m, -1);
  for (std::size_t s = 0; s < segments; ++s) {
    if (offsets[s + 1] < offsets[s]) shape_error("segment_max", "offsets must be non-decreasing");
    if (offsets[s + 1] == offsets[s]) continue;
    for (std::size_t j = 0; j < m; ++j) {
      std::size_t best = offsets[s] * m + j;
      for (std::size_t r = offsets[s] + 1; r < offsets[s + 1]; ++r)
        if (v[r * m + j] > v[best]) best = r * m + j;
      out[s * m + j] = v[best];
      arg[s * m + j] = static_cast<std::ptrdiff_t>(best);
    }
  }
  return make_op<T>("segment_max", Shape{segments, m}, std::move(out), {x.node()},
                    [arg = std::move(arg)](Node<T>& node) {
                      if (T* g = grad_of(*node.inputs[0]))
                        for (std::size_t o = 0; o < arg.size(); ++o)
                          if (arg[o] >= 0) g[arg[o]] += node.grad[o];
                    });
}

// ---- parameter store ----------------------------------------------------------

template <typename T>
BasicTensor<T>& BasicParamStore<T>::add(const std::string& name, Shape shape, std::vector<T> init) {
  if (index_.count(name)) throw std::invalid_argument("parameter '" + name + "' already exists");
  index_.emplace(name, tensors_.size());
  names_.push_back(name);
  tensors_.push_back(BasicTensor<T>::parameter(std::move(shape), std::move(init)));
  return tensors_.back();
}

template <typename T>
const BasicTensor<T>& BasicParamStore<T>::get(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw std::out_of_range("unknown parameter '" + std::string(name) + "'");
  return tensors_[it->second];
}

template <typename T>
BasicTensor<T>& BasicParamStore<T>::get(std::string_view name) {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw std::out_of_range("unknown parameter '" + std::string(name) + "'");
  return tensors_[it->second];
}

template <typename T>
bool BasicParamStore<T>::contains(std::string_view name) const {
  return index_.count(std::string(name)) != 0;
}

template <typename T>
std::size_t BasicParamStore<T>::total_parameters() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.size();
  return n;
}

template <typename T>
BasicParamStore<T> BasicParamStore<T>::fresh_leaves() const {
  BasicParamStore out;
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    auto v = tensors_[i].data();
    out.add(names_[i], tensors_[i].shape(), std::vector<T>(v.begin(), v.end()));
  }
  return out;
}

template <typename T>
std::vector<std::vector<T>> BasicParamStore<T>::gradients() const {
  std::vector<std::vector<T>> out;
  out.reserve(tensors_.size());
  for (const auto& t : tensors_) {
    auto g = t.grad();
    if (g.empty())
      out.emplace_back(t.size(), T(0));
    else
      out.emplace_back(g.begin(), g.end());
  }
  return out;
}

template <typename T>
void BasicParamStore<T>::zero_grad() {
  for (auto& t : tensors_) t.zero_grad();
}

std::vector<std::vector<double>> tree_reduce(std::vector<std::vector<std::vector<double>>> parts) {
  if (parts.empty()) return {};
  std::size_t stride = 1;
  while (stride < parts.size()) {
    for (std::size_t i = 0; i + stride < parts.size(); i += 2 * stride) {
      auto& dst = parts[i];
      const auto& src = parts[i + stride];
      for (std::size_t p = 0; p < dst.size(); ++p)
        for (std::size_t k = 0; k < dst[p].size(); ++k) dst[p][k] += src[p][k];
    }
    stride *= 2;
  }
  return std::move(parts[0]);
}

// ---- explicit instantiations --------------------------------------------------

#define ITERFLOW_INSTANTIATE(T)                                                                    \
  template class BasicTensor<T>;                                                                   \
  template class BasicTape<T>;                                                                     \
  template class BasicParamStore<T>;                                                               \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);                    \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                       \
  template BasicTensor<T> sub(const BasicTensor<T>&, const BasicTensor<T>&);                       \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                       \
  template BasicTensor<T> scale(const BasicTensor<T>&, T);                                         \
  template BasicTensor<T> concat(const std::vector<BasicTensor<T>>&, std::size_t);                 \
  template BasicTensor<T> sigmoid(const BasicTensor<T>&);                                          \
  template BasicTensor<T> tanh(const BasicTensor<T>&);                                             \
  template BasicTensor<T> relu(const BasicTensor<T>&);                                             \
  template BasicTensor<T> max_over_axis(const BasicTensor<T>&, std::size_t);                       \
  template BasicTensor<T> min_over_axis(const BasicTensor<T>&, std::size_t);                       \
  template BasicTensor<T> mean_over_axis(const BasicTensor<T>&, std::size_t);                      \
  template BasicTensor<T> sum_over_axis(const BasicTensor<T>&, std::size_t);                       \
  template BasicTensor<T> sum(const BasicTensor<T>&);                                              \
  template BasicTensor<T> l2_norm_rows(const BasicTensor<T>&);                                     \
  template BasicTensor<T> min_select(const BasicTensor<T>&, const BasicTensor<T>&);                \
  template BasicTensor<T> gather_rows(const BasicTensor<T>&, std::span<const Index>);              \
  template BasicTensor<T> segment_max(const BasicTensor<T>&, std::span<const std::size_t>);

ITERFLOW_INSTANTIATE(double)
ITERFLOW_INSTANTIATE(float)

#undef ITERFLOW_INSTANTIATE

}  // namespace iterflow::ad
