// Copyright 2026 The RelBert Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Dense row-major tensors with reverse-mode automatic differentiation.
//
// A tensor is a shared handle to a node. Operations record their inputs and a
// backward rule on the result node; backward() walks the graph once in
// reverse topological order. Leaves accumulate gradients across calls,
// interior nodes are reset at the start of every call.
//
// Broadcasting is limited to add_bias over the last dimension.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "relbert/error.hpp"

namespace relbert {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace detail {

template <class T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
  bool leaf = true;
  const char* op = "leaf";
  std::vector<std::shared_ptr<TensorNode>> inputs;
  // Reads this node's grad and accumulates into the inputs' grads.
  std::function<void(TensorNode&)> backward;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }
};

}  // namespace detail

template <class T>
class BasicTensor {
 public:
  using Node = detail::TensorNode<T>;
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static BasicTensor zeros(Shape shape, bool requires_grad = false) {
    auto n = std::make_shared<Node>();
    n->data.assign(shape_numel(shape), T(0));
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    return BasicTensor(std::move(n));
  }

  static BasicTensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false) {
    if (data.size() != shape_numel(shape)) {
      throw Error(ErrorCode::kShapeMismatch, "data length " + std::to_string(data.size()) +
                                                 " does not match shape " + shape_string(shape));
    }
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    n->requires_grad = requires_grad;
    return BasicTensor(std::move(n));
  }

  static BasicTensor scalar(T value, bool requires_grad = false) {
    return from_data({1}, {value}, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->data.size(); }
  // Size of the last dimension; a tensor is viewed as numel/cols rows.
  std::size_t cols() const { return node_->shape.empty() ? 1 : node_->shape.back(); }
  std::size_t rows() const { return numel() / std::max<std::size_t>(cols(), 1); }

  std::span<T> data() { return node_->data; }
  std::span<const T> data() const { return node_->data; }
  T& operator[](std::size_t i) { return node_->data[i]; }
  T operator[](std::size_t i) const { return node_->data[i]; }
  T item() const {
    if (numel() != 1) throw Error(ErrorCode::kShapeMismatch, "item() on tensor of shape " + shape_string(shape()));
    return node_->data[0];
  }

  bool has_grad() const { return node_->grad.size() == node_->data.size(); }
  std::span<T> grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  std::span<const T> grad() const {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), T(0)); }
  void clear_grad() { node_->grad.clear(); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool is_leaf() const { return node_->leaf; }
  const char* op() const { return node_->op; }

  // Deep copy of the values, cut from any graph.
  BasicTensor detach() const { return from_data(shape(), node_->data, false); }

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

using Tensor = BasicTensor<float>;

namespace detail {

template <class T>
BasicTensor<T> make_result(Shape shape, std::vector<T> data, std::initializer_list<BasicTensor<T>> inputs,
                           const char* op, std::function<void(TensorNode<T>&)> backward) {
  auto n = std::make_shared<TensorNode<T>>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  n->leaf = false;
  n->op = op;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (any) {
    n->requires_grad = true;
    for (const auto& in : inputs) n->inputs.push_back(in.node_ptr());
    n->backward = std::move(backward);
  }
  return BasicTensor<T>(std::move(n));
}

template <class T>
BasicTensor<T> make_result_n(Shape shape, std::vector<T> data, const std::vector<BasicTensor<T>>& inputs,
                             const char* op, std::function<void(TensorNode<T>&)> backward) {
  auto n = std::make_shared<TensorNode<T>>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  n->leaf = false;
  n->op = op;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (any) {
    n->requires_grad = true;
    for (const auto& in : inputs) n->inputs.push_back(in.node_ptr());
    n->backward = std::move(backward);
  }
  return BasicTensor<T>(std::move(n));
}

template <class T>
void require_same_shape(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw Error(ErrorCode::kShapeMismatch,
                std::string(op) + ": " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
}

// c[m,n] += a[m,k] * b[k,n]
template <class T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* ci = c + i * n;
    const T* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = ai[p];
      const T* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// c[m,k] += a[m,n] * b[k,n]^T
template <class T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* ai = a + i * n;
    T* ci = c + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T* bp = b + p * n;
      T acc = T(0);
      for (std::size_t j = 0; j < n; ++j) acc += ai[j] * bp[j];
      ci[p] += acc;
    }
  }
}

// c[k,n] += a[m,k]^T * b[m,n]
template <class T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* ai = a + i * k;
    const T* bi = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = ai[p];
      T* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += av * bi[j];
    }
  }
}

}  // namespace detail

// Populates gradients of every leaf that requires them and is reachable from
// `loss`. Leaves accumulate across calls.
template <class T>
void backward(const BasicTensor<T>& loss) {
  using Node = detail::TensorNode<T>;
  if (loss.numel() != 1) {
    throw Error(ErrorCode::kNonScalarLoss, "backward() needs a scalar, got shape " + shape_string(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.node(), 0}};
  seen.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (Node* n : order) {
    if (n->leaf) {
      n->ensure_grad();
    } else {
      n->grad.assign(n->data.size(), T(0));
    }
  }
  loss.node()->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if (!(*it)->leaf && (*it)->backward) (*it)->backward(**it);
  }
}

template <class T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw Error(ErrorCode::kShapeMismatch, "matmul: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(m * n, T(0));
  detail::gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
  return detail::make_result<T>({m, n}, std::move(out), {a, b}, "matmul", [m, k, n](detail::TensorNode<T>& o) {
    auto& an = *o.inputs[0];
    auto& bn = *o.inputs[1];
    if (an.requires_grad) detail::gemm_nt(o.grad.data(), bn.data.data(), an.grad.data(), m, n, k);
    if (bn.requires_grad) detail::gemm_tn(an.data.data(), o.grad.data(), bn.grad.data(), m, k, n);
  });
}

template <class T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return detail::make_result<T>(a.shape(), std::move(out), {a, b}, "add", [](detail::TensorNode<T>& o) {
    for (auto& in : o.inputs) {
      if (!in->requires_grad) continue;
      for (std::size_t i = 0; i < o.grad.size(); ++i) in->grad[i] += o.grad[i];
    }
  });
}

template <class T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return detail::make_result<T>(a.shape(), std::move(out), {a, b}, "mul", [](detail::TensorNode<T>& o) {
    auto& an = *o.inputs[0];
    auto& bn = *o.inputs[1];
    for (std::size_t i = 0; i < o.grad.size(); ++i) {
      if (an.requires_grad) an.grad[i] += o.grad[i] * bn.data[i];
      if (bn.requires_grad) bn.grad[i] += o.grad[i] * an.data[i];
    }
  });
}

// x[..., n] + bias[n]
template <class T>
BasicTensor<T> add_bias(const BasicTensor<T>& x, const BasicTensor<T>& bias) {
  const std::size_t n = x.cols();
  if (bias.numel() != n) {
    throw Error(ErrorCode::kShapeMismatch, "add_bias: " + shape_string(x.shape()) + " + " + shape_string(bias.shape()));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] += bias[j];
  }
  return detail::make_result<T>(x.shape(), std::move(out), {x, bias}, "add_bias", [n](detail::TensorNode<T>& o) {
    auto& xn = *o.inputs[0];
    auto& bn = *o.inputs[1];
    if (xn.requires_grad) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) xn.grad[i] += o.grad[i];
    }
    if (bn.requires_grad) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) bn.grad[i % n] += o.grad[i];
    }
  });
}

template <class T>
BasicTensor<T> scale(const BasicTensor<T>& x, T factor) {
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
  return detail::make_result<T>(x.shape(), std::move(out), {x}, "scale", [factor](detail::TensorNode<T>& o) {
    auto& xn = *o.inputs[0];
    for (std::size_t i = 0; i < o.grad.size(); ++i) xn.grad[i] += o.grad[i] * factor;
  });
}

template <class T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
  T acc = T(0);
  for (auto v : x.data()) acc += v;
  return detail::make_result<T>({1}, {acc}, {x}, "sum", [](detail::TensorNode<T>& o) {
    auto& xn = *o.inputs[0];
    for (auto& g : xn.grad) g += o.grad[0];
  });
}

template <class T>
BasicTensor<T> transpose(const BasicTensor<T>& x) {
  if (x.rank() != 2) throw Error(ErrorCode::kShapeMismatch, "transpose needs rank 2, got " + shape_string(x.shape()));
  const std::size_t m = x.dim(0), n = x.dim(1);
  std::vector<T> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = x[i * n + j];
  }
  return detail::make_result<T>({n, m}, std::move(out), {x}, "transpose", [m, n](detail::TensorNode<T>& o) {
    auto& xn = *o.inputs[0];
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) xn.grad[i * n + j] += o.grad[j * m + i];
    }
  });
}

template <class T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw Error(ErrorCode::kShapeMismatch, "reshape " + shape_string(x.shape()) + " -> " + shape_string(shape));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  return detail::make_result<T>(std::move(shape), std::move(out), {x}, "reshape", [](detail::TensorNode<T>& o) {
    auto& xn = *o.inputs[0];
    for (std::size_t i = 0; i < o.grad.size(); ++i) xn.grad[i] += o.grad[i];
  });
}

// Concatenation along the first dimension.
template <class T>
BasicTensor<T> concat(const std::vector<BasicTensor<T>>& parts) {
  if (parts.empty()) throw Error(ErrorCode::kShapeMismatch, "concat of nothing");
  Shape shape = parts[0].shape();
  std::size_t first = 0;
  for (const auto& p : parts) {
    if (p.rank() != shape.size() || !std::equal(shape.begin() + 1, shape.end(), p.shape().begin() + 1)) {
      throw Error(ErrorCode::kShapeMismatch,
                  "concat: " + shape_string(parts[0].shape()) + " vs " + shape_string(p.shape()));
    }
    first += p.dim(0);
  }
  shape[0] = first;
  std::vector<T> out;
  out.reserve(shape_numel(shape));
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return detail::make_result_n<T>(std::move(shape), std::move(out), parts, "concat", [](detail::TensorNode<T>& o) {
    std::size_t offset = 0;
    for (auto& in : o.inputs) {
      if (in->requires_grad) {
        for (std::size_t i = 0; i < in->data.size(); ++i) in->grad[i] += o.grad[offset + i];
      }
      offset += in->data.size();
    }
  });
}

// Softmax over the last dimension, with max subtraction.
template <class T>
BasicTensor<T> softmax_rows(const BasicTensor<T>& x) {
  const std::size_t n = x.cols();
  if (n == 0) throw Error(ErrorCode::kShapeMismatch, "softmax over empty rows");
  std::vector<T> out(x.numel());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const T* in = x.data().data() + r * n;
    T* y = out.data() + r * n;
    const T mx = *std::max_element(in, in + n);
    T z = T(0);
    for (std::size_t j = 0; j < n; ++j) z += (y[j] = std::exp(in[j] - mx));
    for (std::size_t j = 0; j < n; ++j) y[j] /= z;
  }
  return detail::make_result<T>(x.shape(), std::move(out), {x}, "softmax_rows", [n](detail::TensorNode<T>& o) {
    auto& xn = *o.inputs[0];
    for (std::size_t r = 0; r < o.data.size() / n; ++r) {
      const T* y = o.data.data() + r * n;
      const T* g = o.grad.data() + r * n;
      T dot = T(0);
      for (std::size_t j = 0; j < n; ++j) dot += y[j] * g[j];
      for (std::size_t j = 0; j < n; ++j) xn.grad[r * n + j] += y[j] * (g[j] - dot);
    }
  });
}

// Normalizes each row over the last dimension, then applies gain and bias.
template <class T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gain, const BasicTensor<T>& bias, T eps) {
  const std::size_t n = x.cols();
  if (!(eps > T(0))) throw Error(ErrorCode::kInvalidArgument, "layer_norm eps must be positive");
  if (gain.numel() != n || bias.numel() != n) {
    throw Error(ErrorCode::kShapeMismatch, "layer_norm: gain/bias size does not match " + shape_string(x.shape()));
  }
  const std::size_t rows = x.rows();
  std::vector<T> out(x.numel());
  std::vector<T> xhat(x.numel());
  std::vector<T> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = x.data().data() + r * n;
    T mean = T(0);
    for (std::size_t j = 0; j < n; ++j) mean += in[j];
    mean /= static_cast<T>(n);
    T var = T(0);
    for (std::size_t j = 0; j < n; ++j) var += (in[j] - mean) * (in[j] - mean);
    var /= static_cast<T>(n);
    rstd[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[r * n + j] = (in[j] - mean) * rstd[r];
      out[r * n + j] = xhat[r * n + j] * gain[j] + bias[j];
    }
  }
  return detail::make_result<T>(
      x.shape(), std::move(out), {x, gain, bias}, "layer_norm",
      [n, rows, xhat = std::move(xhat), rstd = std::move(rstd)](detail::TensorNode<T>& o) {
        auto& xn = *o.inputs[0];
        auto& gn = *o.inputs[1];
        auto& bn = *o.inputs[2];
        for (std::size_t r = 0; r < rows; ++r) {
          const T* g = o.grad.data() + r * n;
          const T* xh = xhat.data() + r * n;
          if (gn.requires_grad || bn.requires_grad) {
            for (std::size_t j = 0; j < n; ++j) {
              if (gn.requires_grad) gn.grad[j] += g[j] * xh[j];
              if (bn.requires_grad) bn.grad[j] += g[j];
            }
          }
          if (!xn.requires_grad) continue;
          T mean_d = T(0), mean_dx = T(0);
          for (std::size_t j = 0; j < n; ++j) {
            const T d = g[j] * gn.data[j];
            mean_d += d;
            mean_dx += d * xh[j];
          }
          mean_d /= static_cast<T>(n);
          mean_dx /= static_cast<T>(n);
          for (std::size_t j = 0; j < n; ++j) {
            const T d = g[j] * gn.data[j];
            xn.grad[r * n + j] += rstd[r] * (d - mean_d - xh[j] * mean_dx);
          }
        }
      });
}

// Exact GELU: x * Phi(x).
template <class T>
BasicTensor<T> gelu(const BasicTensor<T>& x) {
  constexpr T kInvSqrt2 = T(0.70710678118654752440);
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = T(0.5) * x[i] * (T(1) + std::erf(x[i] * kInvSqrt2));
  return detail::make_result<T>(x.shape(), std::move(out), {x}, "gelu", [](detail::TensorNode<T>& o) {
    constexpr T kInvSqrt2 = T(0.70710678118654752440);
    constexpr T kInvSqrt2Pi = T(0.39894228040143267794);
    auto& xn = *o.inputs[0];
    for (std::size_t i = 0; i < o.grad.size(); ++i) {
      const T v = xn.data[i];
      const T cdf = T(0.5) * (T(1) + std::erf(v * kInvSqrt2));
      const T pdf = kInvSqrt2Pi * std::exp(T(-0.5) * v * v);
      xn.grad[i] += o.grad[i] * (cdf + v * pdf);
    }
  });
}

template <class T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  return detail::make_result<T>(x.shape(), std::move(out), {x}, "relu", [](detail::TensorNode<T>& o) {
    auto& xn = *o.inputs[0];
    for (std::size_t i = 0; i < o.grad.size(); ++i) {
      if (xn.data[i] > T(0)) xn.grad[i] += o.grad[i];
    }
  });
}

// Rows `ids` of table[V, d]. Backward scatters into the gathered rows only.
template <class T>
BasicTensor<T> embedding_gather(const BasicTensor<T>& table, std::vector<std::size_t> ids) {
  if (table.rank() != 2) throw Error(ErrorCode::kShapeMismatch, "embedding table must be rank 2");
  const std::size_t v = table.dim(0), d = table.dim(1);
  std::vector<T> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= v) {
      throw Error(ErrorCode::kShapeMismatch,
                  "embedding id " + std::to_string(ids[i]) + " outside table of " + std::to_string(v) + " rows");
    }
    std::copy_n(table.data().data() + ids[i] * d, d, out.data() + i * d);
  }
  const std::size_t n = ids.size();
  return detail::make_result<T>({n, d}, std::move(out), {table}, "embedding_gather",
                                [d, ids = std::move(ids)](detail::TensorNode<T>& o) {
                                  auto& tn = *o.inputs[0];
                                  for (std::size_t i = 0; i < ids.size(); ++i) {
                                    for (std::size_t j = 0; j < d; ++j) tn.grad[ids[i] * d + j] += o.grad[i * d + j];
                                  }
                                });
}

struct TableRow {
  std::size_t table = 0;
  std::size_t row = 0;
};

// Row i of the result is tables[refs[i].table][refs[i].row]. All tables share
// the row width.
template <class T>
BasicTensor<T> embedding_gather_multi(const std::vector<BasicTensor<T>>& tables, std::vector<TableRow> refs) {
  if (tables.empty()) throw Error(ErrorCode::kShapeMismatch, "embedding_gather_multi without tables");
  const std::size_t d = tables[0].cols();
  for (const auto& t : tables) {
    if (t.rank() != 2 || t.dim(1) != d) throw Error(ErrorCode::kShapeMismatch, "embedding tables differ in width");
  }
  std::vector<T> out(refs.size() * d);
  for (std::size_t i = 0; i < refs.size(); ++i) {
    if (refs[i].table >= tables.size() || refs[i].row >= tables[refs[i].table].dim(0)) {
      throw Error(ErrorCode::kShapeMismatch, "embedding reference out of range");
    }
    std::copy_n(tables[refs[i].table].data().data() + refs[i].row * d, d, out.data() + i * d);
  }
  const std::size_t n = refs.size();
  return detail::make_result_n<T>({n, d}, std::move(out), tables, "embedding_gather_multi",
                                  [d, refs = std::move(refs)](detail::TensorNode<T>& o) {
                                    for (std::size_t i = 0; i < refs.size(); ++i) {
                                      auto& tn = *o.inputs[refs[i].table];
                                      if (!tn.requires_grad) continue;
                                      T* g = tn.grad.data() + refs[i].row * d;
                                      for (std::size_t j = 0; j < d; ++j) g[j] += o.grad[i * d + j];
                                    }
                                  });
}

// Selects rows (over the last dimension) of x; result is [rows.size(), cols].
template <class T>
BasicTensor<T> gather_rows(const BasicTensor<T>& x, std::vector<std::size_t> rows) {
  const std::size_t d = x.cols();
  std::vector<T> out(rows.size() * d);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= x.rows()) throw Error(ErrorCode::kShapeMismatch, "gather_rows index out of range");
    std::copy_n(x.data().data() + rows[i] * d, d, out.data() + i * d);
  }
  const std::size_t n = rows.size();
  return detail::make_result<T>({n, d}, std::move(out), {x}, "gather_rows",
                                [d, rows = std::move(rows)](detail::TensorNode<T>& o) {
                                  auto& xn = *o.inputs[0];
                                  for (std::size_t i = 0; i < rows.size(); ++i) {
                                    for (std::size_t j = 0; j < d; ++j) xn.grad[rows[i] * d + j] += o.grad[i * d + j];
                                  }
                                });
}

enum class Reduction { kMean, kSum };

// -log softmax(logits)[target] per row, reduced to a scalar.
template <class T>
BasicTensor<T> cross_entropy(const BasicTensor<T>& logits, std::vector<std::size_t> targets,
                             Reduction reduction = Reduction::kMean) {
  if (logits.rank() != 2 || logits.dim(0) != targets.size()) {
    throw Error(ErrorCode::kShapeMismatch, "cross_entropy: logits " + shape_string(logits.shape()) + " with " +
                                               std::to_string(targets.size()) + " targets");
  }
  const std::size_t b = logits.dim(0), n = logits.dim(1);
  std::vector<T> probs(b * n);
  T total = T(0);
  for (std::size_t r = 0; r < b; ++r) {
    if (targets[r] >= n) {
      throw Error(ErrorCode::kTargetOutOfRange,
                  "target " + std::to_string(targets[r]) + " not in [0, " + std::to_string(n) + ")");
    }
    const T* in = logits.data().data() + r * n;
    const T mx = *std::max_element(in, in + n);
    T z = T(0);
    for (std::size_t j = 0; j < n; ++j) z += (probs[r * n + j] = std::exp(in[j] - mx));
    for (std::size_t j = 0; j < n; ++j) probs[r * n + j] /= z;
    total += (std::log(z) + mx) - in[targets[r]];
  }
  const T factor = reduction == Reduction::kMean && b > 0 ? T(1) / static_cast<T>(b) : T(1);
  return detail::make_result<T>(
      {1}, {total * factor}, {logits}, "cross_entropy",
      [n, factor, probs = std::move(probs), targets = std::move(targets)](detail::TensorNode<T>& o) {
        auto& ln = *o.inputs[0];
        const T g = o.grad[0] * factor;
        for (std::size_t r = 0; r < targets.size(); ++r) {
          for (std::size_t j = 0; j < n; ++j) {
            ln.grad[r * n + j] += g * (probs[r * n + j] - (j == targets[r] ? T(1) : T(0)));
          }
        }
      });
}

template <class T>
struct AttentionResult {
  BasicTensor<T> output;
  std::size_t degenerate_rows = 0;  // query rows with no attendable key
};

// Multi-head scaled dot-product attention, softmax(Q K^T / sqrt(D)) V, per
// (sequence, head). q, k, v hold batch * length rows of width heads * D.
// key_mask[b * length + j] == 0 excludes key j of sequence b. A query row
// with every key excluded yields zeros and is counted as degenerate.
template <class T>
AttentionResult<T> attention(const BasicTensor<T>& q, const BasicTensor<T>& k, const BasicTensor<T>& v,
                             const std::vector<std::uint8_t>& key_mask, std::size_t batch, std::size_t length,
                             std::size_t heads) {
  detail::require_same_shape(q, k, "attention");
  detail::require_same_shape(q, v, "attention");
  const std::size_t width = q.cols();
  if (q.rows() != batch * length || key_mask.size() != batch * length || heads == 0 || width % heads != 0) {
    throw Error(ErrorCode::kShapeMismatch, "attention: " + shape_string(q.shape()) + " for batch " +
                                               std::to_string(batch) + " x length " + std::to_string(length) +
                                               " with " + std::to_string(heads) + " heads");
  }
  const std::size_t hd = width / heads;
  const T inv_scale = T(1) / std::sqrt(static_cast<T>(hd));
  std::vector<T> probs(batch * heads * length * length, T(0));
  std::vector<T> out(q.numel(), T(0));
  std::size_t degenerate = 0;
  std::vector<T> scores(length);
  const T* qd = q.data().data();
  const T* kd = k.data().data();
  const T* vd = v.data().data();
  for (std::size_t b = 0; b < batch; ++b) {
    const std::uint8_t* mask = key_mask.data() + b * length;
    const bool any_key = std::any_of(mask, mask + length, [](std::uint8_t m) { return m != 0; });
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < length; ++i) {
        if (!any_key) {
          ++degenerate;
          continue;
        }
        const T* qi = qd + (b * length + i) * width + h * hd;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < length; ++j) {
          if (!mask[j]) continue;
          const T* kj = kd + (b * length + j) * width + h * hd;
          T s = T(0);
          for (std::size_t t = 0; t < hd; ++t) s += qi[t] * kj[t];
          scores[j] = s * inv_scale;
          mx = std::max(mx, scores[j]);
        }
        T* p = probs.data() + ((b * heads + h) * length + i) * length;
        T z = T(0);
        for (std::size_t j = 0; j < length; ++j) {
          if (mask[j]) z += (p[j] = std::exp(scores[j] - mx));
        }
        T* oi = out.data() + (b * length + i) * width + h * hd;
        for (std::size_t j = 0; j < length; ++j) {
          if (!mask[j]) continue;
          p[j] /= z;
          const T* vj = vd + (b * length + j) * width + h * hd;
          for (std::size_t t = 0; t < hd; ++t) oi[t] += p[j] * vj[t];
        }
      }
    }
  }
  auto result = detail::make_result<T>(
      q.shape(), std::move(out), {q, k, v}, "attention",
      [batch, length, heads, hd, width, inv_scale, probs = std::move(probs)](detail::TensorNode<T>& o) {
        auto& qn = *o.inputs[0];
        auto& kn = *o.inputs[1];
        auto& vn = *o.inputs[2];
        std::vector<T> dp(length);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t h = 0; h < heads; ++h) {
            for (std::size_t i = 0; i < length; ++i) {
              const T* p = probs.data() + ((b * heads + h) * length + i) * length;
              const T* go = o.grad.data() + (b * length + i) * width + h * hd;
              T dot = T(0);
              for (std::size_t j = 0; j < length; ++j) {
                if (p[j] == T(0)) {
                  dp[j] = T(0);
                  continue;
                }
                const std::size_t row = (b * length + j) * width + h * hd;
                T s = T(0);
                for (std::size_t t = 0; t < hd; ++t) s += go[t] * vn.data[row + t];
                dp[j] = s;
                dot += p[j] * s;
                if (vn.requires_grad) {
                  for (std::size_t t = 0; t < hd; ++t) vn.grad[row + t] += p[j] * go[t];
                }
              }
              const std::size_t qrow = (b * length + i) * width + h * hd;
              for (std::size_t j = 0; j < length; ++j) {
                if (p[j] == T(0)) continue;
                const T ds = p[j] * (dp[j] - dot) * inv_scale;
                const std::size_t krow = (b * length + j) * width + h * hd;
                if (qn.requires_grad) {
                  for (std::size_t t = 0; t < hd; ++t) qn.grad[qrow + t] += ds * kn.data[krow + t];
                }
                if (kn.requires_grad) {
                  for (std::size_t t = 0; t < hd; ++t) kn.grad[krow + t] += ds * qn.data[qrow + t];
                }
              }
            }
          }
        }
      });
  return {std::move(result), degenerate};
}

}  // namespace relbert
