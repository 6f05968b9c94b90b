#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "salm/error.hpp"
#include "salm/kernels.hpp"
#include "salm/rng.hpp"

namespace salm {

/// Thread-local switch for graph recording; evaluation paths disable it to
/// skip tape construction entirely.
struct GradMode {
  static bool& enabled() {
    thread_local bool flag = true;
    return flag;
  }
};

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(GradMode::enabled()) { GradMode::enabled() = false; }
  ~NoGradGuard() { GradMode::enabled() = prev; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

template <typename T>
struct TensorNode {
  std::vector<int> shape;
  std::vector<T> data;
  std::vector<T> grad;  // sized lazily during backward
  bool requires_grad = false;
  bool needs_grad = false;  // requires_grad or downstream of one
  const char* op = "";
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;

  std::size_t size() const { return data.size(); }
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }
};

inline std::string shape_str(const std::vector<int>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

/// Dense row-major tensor handle with an attached reverse-mode tape. Copies
/// share the underlying node; data is owned by the node.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorNode<T>> node) : node_(std::move(node)) {}

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
    return filled(std::move(shape), T(0), requires_grad);
  }

  static Tensor filled(std::vector<int> shape, T value, bool requires_grad = false) {
    auto node = std::make_shared<TensorNode<T>>();
    std::size_t total = 1;
    for (int d : shape) {
      if (d <= 0) throw ConfigError("tensor dims must be positive, got " + shape_str(shape));
      total *= static_cast<std::size_t>(d);
    }
    node->shape = std::move(shape);
    node->data.assign(total, value);
    node->requires_grad = requires_grad;
    node->needs_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor from_data(std::vector<int> shape, std::vector<T> values,
                          bool requires_grad = false) {
    Tensor t = zeros(shape, requires_grad);
    if (values.size() != t.size()) {
      throw ConfigError("tensor data length " + std::to_string(values.size()) +
                        " does not match shape " + shape_str(shape));
    }
    t.node_->data = std::move(values);
    return t;
  }

  static Tensor randn(RngStream& rng, std::vector<int> shape, T stddev,
                      bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (auto& v : t.node_->data) v = static_cast<T>(rng.next_normal()) * stddev;
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const { return node_->shape; }
  int dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
  int ndim() const { return static_cast<int>(node_->shape.size()); }
  std::size_t size() const { return node_->size(); }
  bool requires_grad() const { return node_->requires_grad; }

  std::span<T> data() { return node_->data; }
  std::span<const T> data() const { return node_->data; }
  std::span<T> grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  std::span<const T> grad() const { return node_->grad; }

  T item() const {
    if (size() != 1) throw ConfigError("item() needs a scalar, got " + shape_str(shape()));
    return node_->data[0];
  }

  /// Leaf copy sharing nothing with the graph (used for state carry).
  Tensor detach() const {
    auto node = std::make_shared<TensorNode<T>>();
    node->shape = node_->shape;
    node->data = node_->data;
    return Tensor(std::move(node));
  }

  std::shared_ptr<TensorNode<T>>& node() { return node_; }
  const std::shared_ptr<TensorNode<T>>& node() const { return node_; }
  TensorNode<T>* raw() const { return node_.get(); }

 private:
  std::shared_ptr<TensorNode<T>> node_;
};

namespace detail {

template <typename T>
void check_finite(const TensorNode<T>& node) {
  if (!kernels::all_finite(node.data.data(), node.data.size())) {
    throw NumericError(std::string("non-finite values in output of op '") + node.op + "'");
  }
}

template <typename T>
Tensor<T> make_result(std::vector<int> shape, const char* op,
                      std::vector<std::shared_ptr<TensorNode<T>>> parents) {
  Tensor<T> out = Tensor<T>::zeros(std::move(shape));
  out.raw()->op = op;
  if (GradMode::enabled()) {
    bool needs = false;
    for (const auto& p : parents) needs |= p->needs_grad;
    if (needs) {
      out.raw()->needs_grad = true;
      out.raw()->parents = std::move(parents);
    }
  }
  return out;
}

template <typename T>
bool track(const Tensor<T>& out) {
  return out.raw()->needs_grad;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// core ops

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool trans_a = false,
                 bool trans_b = false) {
  if (a.ndim() != 2 || b.ndim() != 2) {
    throw ConfigError("matmul needs 2-d tensors, got " + shape_str(a.shape()) + " and " +
                      shape_str(b.shape()));
  }
  if (trans_a && trans_b) throw ConfigError("matmul: both operands transposed is unsupported");
  const int m = trans_a ? a.dim(1) : a.dim(0);
  const int ka = trans_a ? a.dim(0) : a.dim(1);
  const int kb = trans_b ? b.dim(1) : b.dim(0);
  const int n = trans_b ? b.dim(0) : b.dim(1);
  if (ka != kb) {
    throw ConfigError("matmul shape mismatch: " + shape_str(a.shape()) + (trans_a ? "^T" : "") +
                      " x " + shape_str(b.shape()) + (trans_b ? "^T" : ""));
  }
  Tensor<T> out = detail::make_result<T>({m, n}, "matmul", {a.node(), b.node()});
  const std::size_t mm = static_cast<std::size_t>(m), kk = static_cast<std::size_t>(ka),
                    nn = static_cast<std::size_t>(n);
  if (trans_a) {
    kernels::matmul_tn(a.data().data(), b.data().data(), out.data().data(), mm, kk, nn);
  } else if (trans_b) {
    kernels::matmul_nt(a.data().data(), b.data().data(), out.data().data(), mm, kk, nn);
  } else {
    kernels::matmul_nn(a.data().data(), b.data().data(), out.data().data(), mm, kk, nn);
  }
  detail::check_finite(*out.raw());
  if (detail::track(out)) {
    auto an = a.node();
    auto bn = b.node();
    out.raw()->backward_fn = [an, bn, trans_a, trans_b, mm, kk, nn](TensorNode<T>& self) {
      const T* g = self.grad.data();
      if (an->needs_grad) {
        an->ensure_grad();
        if (trans_a) {  // C = A^T B: dA = B dC^T -> (k,m) via nt(B, dC)
          kernels::matmul_nt(bn->data.data(), g, an->grad.data(), kk, nn, mm, true);
        } else if (trans_b) {  // C = A B^T: dA = dC B
          kernels::matmul_nn(g, bn->data.data(), an->grad.data(), mm, nn, kk, true);
        } else {  // dA = dC B^T
          kernels::matmul_nt(g, bn->data.data(), an->grad.data(), mm, nn, kk, true);
        }
      }
      if (bn->needs_grad) {
        bn->ensure_grad();
        if (trans_a) {  // dB = A dC
          kernels::matmul_nn(an->data.data(), g, bn->grad.data(), kk, mm, nn, true);
        } else if (trans_b) {  // dB = dC^T A -> (n,k)
          kernels::matmul_tn(g, an->data.data(), bn->grad.data(), nn, mm, kk, true);
        } else {  // dB = A^T dC
          kernels::matmul_tn(an->data.data(), g, bn->grad.data(), kk, mm, nn, true);
        }
      }
    };
  }
  return out;
}

namespace detail {

// Broadcast classes for binary elementwise ops: same shape, row vector
// (last-dim match), or scalar.
enum class Broadcast { same, row, scalar };

template <typename T>
Broadcast broadcast_kind(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::same;
  if (b.size() == 1) return Broadcast::scalar;
  if (b.ndim() == 1 && a.ndim() >= 1 && a.dim(a.ndim() - 1) == b.dim(0)) return Broadcast::row;
  throw ConfigError(std::string(op) + " shape mismatch: " + shape_str(a.shape()) + " vs " +
                    shape_str(b.shape()));
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  const auto kind = detail::broadcast_kind(a, b, "add");
  Tensor<T> out = detail::make_result<T>(a.shape(), "add", {a.node(), b.node()});
  const std::size_t n = a.size(), cols = kind == detail::Broadcast::row ? b.size() : 0;
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  T* po = out.data().data();
  switch (kind) {
    case detail::Broadcast::same:
      for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
      break;
    case detail::Broadcast::row:
      for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i % cols];
      break;
    case detail::Broadcast::scalar:
      for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[0];
      break;
  }
  detail::check_finite(*out.raw());
  if (detail::track(out)) {
    auto an = a.node();
    auto bn = b.node();
    out.raw()->backward_fn = [an, bn, kind, n, cols](TensorNode<T>& self) {
      const T* g = self.grad.data();
      if (an->needs_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) an->grad[i] += g[i];
      }
      if (bn->needs_grad) {
        bn->ensure_grad();
        switch (kind) {
          case detail::Broadcast::same:
            for (std::size_t i = 0; i < n; ++i) bn->grad[i] += g[i];
            break;
          case detail::Broadcast::row:
            for (std::size_t i = 0; i < n; ++i) bn->grad[i % cols] += g[i];
            break;
          case detail::Broadcast::scalar:
            for (std::size_t i = 0; i < n; ++i) bn->grad[0] += g[i];
            break;
        }
      }
    };
  }
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ConfigError("sub shape mismatch: " + shape_str(a.shape()) + " vs " +
                      shape_str(b.shape()));
  }
  Tensor<T> out = detail::make_result<T>(a.shape(), "sub", {a.node(), b.node()});
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] - b.data()[i];
  detail::check_finite(*out.raw());
  if (detail::track(out)) {
    auto an = a.node();
    auto bn = b.node();
    out.raw()->backward_fn = [an, bn, n](TensorNode<T>& self) {
      const T* g = self.grad.data();
      if (an->needs_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) an->grad[i] += g[i];
      }
      if (bn->needs_grad) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) bn->grad[i] -= g[i];
      }
    };
  }
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  const auto kind = detail::broadcast_kind(a, b, "mul");
  Tensor<T> out = detail::make_result<T>(a.shape(), "mul", {a.node(), b.node()});
  const std::size_t n = a.size(), cols = kind == detail::Broadcast::row ? b.size() : 0;
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  T* po = out.data().data();
  switch (kind) {
    case detail::Broadcast::same:
      for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
      break;
    case detail::Broadcast::row:
      for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i % cols];
      break;
    case detail::Broadcast::scalar:
      for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * pb[0];
      break;
  }
  detail::check_finite(*out.raw());
  if (detail::track(out)) {
    auto an = a.node();
    auto bn = b.node();
    out.raw()->backward_fn = [an, bn, kind, n, cols](TensorNode<T>& self) {
      const T* g = self.grad.data();
      const T* pa = an->data.data();
      const T* pb = bn->data.data();
      if (an->needs_grad) {
        an->ensure_grad();
        switch (kind) {
          case detail::Broadcast::same:
            for (std::size_t i = 0; i < n; ++i) an->grad[i] += g[i] * pb[i];
            break;
          case detail::Broadcast::row:
            for (std::size_t i = 0; i < n; ++i) an->grad[i] += g[i] * pb[i % cols];
            break;
          case detail::Broadcast::scalar:
            for (std::size_t i = 0; i < n; ++i) an->grad[i] += g[i] * pb[0];
            break;
        }
      }
      if (bn->needs_grad) {
        bn->ensure_grad();
        switch (kind) {
          case detail::Broadcast::same:
            for (std::size_t i = 0; i < n; ++i) bn->grad[i] += g[i] * pa[i];
            break;
          case detail::Broadcast::row:
            for (std::size_t i = 0; i < n; ++i) bn->grad[i % cols] += g[i] * pa[i];
            break;
          case detail::Broadcast::scalar:
            for (std::size_t i = 0; i < n; ++i) bn->grad[0] += g[i] * pa[i];
            break;
        }
      }
    };
  }
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  Tensor<T> out = detail::make_result<T>(a.shape(), "scale", {a.node()});
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * c;
  detail::check_finite(*out.raw());
  if (detail::track(out)) {
    auto an = a.node();
    out.raw()->backward_fn = [an, c, n](TensorNode<T>& self) {
      if (!an->needs_grad) return;
      an->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) an->grad[i] += self.grad[i] * c;
    };
  }
  return out;
}

namespace detail {

template <typename T, typename Fwd, typename Bwd>
Tensor<T> unary_op(const Tensor<T>& a, const char* name, Fwd fwd, Bwd bwd_from_saved) {
  Tensor<T> out = detail::make_result<T>(a.shape(), name, {a.node()});
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = fwd(a.data()[i]);
  detail::check_finite(*out.raw());
  if (detail::track(out)) {
    auto an = a.node();
    out.raw()->backward_fn = [an, n, bwd_from_saved](TensorNode<T>& self) {
      if (!an->needs_grad) return;
      an->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        an->grad[i] += self.grad[i] * bwd_from_saved(an->data[i], self.data[i]);
      }
    };
  }
  return out;
}

}  // namespace detail

template <typename T>
Tensor<T> tanh(const Tensor<T>& a) {
  return detail::unary_op(
      a, "tanh", [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return detail::unary_op(
      a, "sigmoid", [](T x) { return T(1) / (T(1) + std::exp(-x)); },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  return detail::unary_op(
      a, "relu", [](T x) { return x > T(0) ? x : T(0); },
      [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  constexpr double inv_sqrt2pi = 0.39894228040143267794;
  return detail::unary_op(
      a, "gelu",
      [&](T x) {
        return static_cast<T>(0.5 * static_cast<double>(x) *
                              (1.0 + std::erf(static_cast<double>(x) * inv_sqrt2)));
      },
      [&](T x, T) {
        const double xd = static_cast<double>(x);
        const double cdf = 0.5 * (1.0 + std::erf(xd * inv_sqrt2));
        const double pdf = inv_sqrt2pi * std::exp(-0.5 * xd * xd);
        return static_cast<T>(cdf + xd * pdf);
      });
}

/// Row-wise softmax; with `causal` set (square input), row i is restricted to
/// columns 0..i and masked entries are exactly zero.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& a, bool causal = false) {
  if (a.ndim() != 2) throw ConfigError("softmax_rows needs a 2-d tensor");
  if (causal && a.dim(0) != a.dim(1)) {
    throw ConfigError("causal softmax needs a square matrix, got " + shape_str(a.shape()));
  }
  const std::size_t rows = static_cast<std::size_t>(a.dim(0));
  const std::size_t cols = static_cast<std::size_t>(a.dim(1));
  Tensor<T> out = detail::make_result<T>(a.shape(), "softmax", {a.node()});
  kernels::softmax_rows(a.data().data(), out.data().data(), rows, cols, causal);
  detail::check_finite(*out.raw());
  if (detail::track(out)) {
    auto an = a.node();
    out.raw()->backward_fn = [an, rows, cols](TensorNode<T>& self) {
      if (!an->needs_grad) return;
      an->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        const T* y = self.data.data() + r * cols;
        const T* g = self.grad.data() + r * cols;
        T dot = T(0);
        for (std::size_t j = 0; j < cols; ++j) dot += g[j] * y[j];
        T* da = an->grad.data() + r * cols;
        for (std::size_t j = 0; j < cols; ++j) da[j] += y[j] * (g[j] - dot);
      }
    };
  }
  return out;
}

/// Row-wise layer norm with learned gain/bias over the last dimension.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                     T eps = static_cast<T>(1e-5)) {
  if (x.ndim() != 2 || gain.ndim() != 1 || bias.ndim() != 1 || gain.dim(0) != x.dim(1) ||
      bias.dim(0) != x.dim(1)) {
    throw ConfigError("layer_norm shape mismatch: x " + shape_str(x.shape()) + ", gain " +
                      shape_str(gain.shape()) + ", bias " + shape_str(bias.shape()));
  }
  const std::size_t rows = static_cast<std::size_t>(x.dim(0));
  const std::size_t cols = static_cast<std::size_t>(x.dim(1));
  Tensor<T> out = detail::make_result<T>(x.shape(), "layer_norm", {x.node(), gain.node(), bias.node()});
  auto means = std::make_shared<std::vector<T>>(rows);
  auto rstds = std::make_shared<std::vector<T>>(rows);
  kernels::layer_norm_rows(x.data().data(), out.data().data(), gain.data().data(),
                           bias.data().data(), rows, cols, eps, means->data(), rstds->data());
  detail::check_finite(*out.raw());
  if (detail::track(out)) {
    auto xn = x.node();
    auto gn = gain.node();
    auto bn = bias.node();
    out.raw()->backward_fn = [xn, gn, bn, means, rstds, rows, cols](TensorNode<T>& self) {
      for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = xn->data.data() + r * cols;
        const T* g = self.grad.data() + r * cols;
        const T mean = (*means)[r];
        const T rstd = (*rstds)[r];
        if (gn->needs_grad || bn->needs_grad) {
          gn->ensure_grad();
          bn->ensure_grad();
          for (std::size_t j = 0; j < cols; ++j) {
            const T xhat = (xr[j] - mean) * rstd;
            gn->grad[j] += g[j] * xhat;
            bn->grad[j] += g[j];
          }
        }
        if (xn->needs_grad) {
          xn->ensure_grad();
          // dx = rstd * (gg - mean(gg) - xhat * mean(gg*xhat)), gg = g*gain
          T mean_gg = T(0), mean_ggx = T(0);
          for (std::size_t j = 0; j < cols; ++j) {
            const T gg = g[j] * gn->data[j];
            const T xhat = (xr[j] - mean) * rstd;
            mean_gg += gg;
            mean_ggx += gg * xhat;
          }
          mean_gg /= static_cast<T>(cols);
          mean_ggx /= static_cast<T>(cols);
          T* dx = xn->grad.data() + r * cols;
          for (std::size_t j = 0; j < cols; ++j) {
            const T gg = g[j] * gn->data[j];
            const T xhat = (xr[j] - mean) * rstd;
            dx[j] += rstd * (gg - mean_gg - xhat * mean_ggx);
          }
        }
      }
    };
  }
  return out;
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ConfigError("concat_cols: no inputs");
  const int rows = parts[0].dim(0);
  int total_cols = 0;
  std::vector<std::shared_ptr<TensorNode<T>>> parents;
  for (const auto& p : parts) {
    if (p.ndim() != 2 || p.dim(0) != rows) {
      throw ConfigError("concat_cols: row mismatch at " + shape_str(p.shape()));
    }
    total_cols += p.dim(1);
    parents.push_back(p.node());
  }
  Tensor<T> out = detail::make_result<T>({rows, total_cols}, "concat_cols", std::move(parents));
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t pc = static_cast<std::size_t>(p.dim(1));
    for (std::size_t r = 0; r < static_cast<std::size_t>(rows); ++r) {
      std::copy_n(p.data().data() + r * pc, pc,
                  out.data().data() + r * static_cast<std::size_t>(total_cols) + offset);
    }
    offset += pc;
  }
  if (detail::track(out)) {
    std::vector<std::shared_ptr<TensorNode<T>>> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    const std::size_t rn = static_cast<std::size_t>(rows), tc = static_cast<std::size_t>(total_cols);
    out.raw()->backward_fn = [nodes, rn, tc](TensorNode<T>& self) {
      std::size_t offset = 0;
      for (const auto& node : nodes) {
        const std::size_t pc = node->data.size() / rn;
        if (node->needs_grad) {
          node->ensure_grad();
          for (std::size_t r = 0; r < rn; ++r) {
            const T* g = self.grad.data() + r * tc + offset;
            T* dst = node->grad.data() + r * pc;
            for (std::size_t j = 0; j < pc; ++j) dst[j] += g[j];
          }
        }
        offset += pc;
      }
    };
  }
  return out;
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ConfigError("concat_rows: no inputs");
  const int cols = parts[0].dim(1);
  int total_rows = 0;
  std::vector<std::shared_ptr<TensorNode<T>>> parents;
  for (const auto& p : parts) {
    if (p.ndim() != 2 || p.dim(1) != cols) {
      throw ConfigError("concat_rows: col mismatch at " + shape_str(p.shape()));
    }
    total_rows += p.dim(0);
    parents.push_back(p.node());
  }
  Tensor<T> out = detail::make_result<T>({total_rows, cols}, "concat_rows", std::move(parents));
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::copy_n(p.data().data(), p.size(), out.data().data() + offset);
    offset += p.size();
  }
  if (detail::track(out)) {
    std::vector<std::shared_ptr<TensorNode<T>>> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    out.raw()->backward_fn = [nodes](TensorNode<T>& self) {
      std::size_t offset = 0;
      for (const auto& node : nodes) {
        if (node->needs_grad) {
          node->ensure_grad();
          for (std::size_t i = 0; i < node->data.size(); ++i) {
            node->grad[i] += self.grad[offset + i];
          }
        }
        offset += node->data.size();
      }
    };
  }
  return out;
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& a, int start, int len) {
  if (a.ndim() != 2 || start < 0 || len <= 0 || start + len > a.dim(0)) {
    throw ConfigError("slice_rows [" + std::to_string(start) + "," + std::to_string(start + len) +
                      ") out of range for " + shape_str(a.shape()));
  }
  const std::size_t cols = static_cast<std::size_t>(a.dim(1));
  Tensor<T> out = detail::make_result<T>({len, a.dim(1)}, "slice_rows", {a.node()});
  std::copy_n(a.data().data() + static_cast<std::size_t>(start) * cols,
              static_cast<std::size_t>(len) * cols, out.data().data());
  if (detail::track(out)) {
    auto an = a.node();
    const std::size_t off = static_cast<std::size_t>(start) * cols;
    out.raw()->backward_fn = [an, off](TensorNode<T>& self) {
      if (!an->needs_grad) return;
      an->ensure_grad();
      for (std::size_t i = 0; i < self.data.size(); ++i) an->grad[off + i] += self.grad[i];
    };
  }
  return out;
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& a, int start, int len) {
  if (a.ndim() != 2 || start < 0 || len <= 0 || start + len > a.dim(1)) {
    throw ConfigError("slice_cols [" + std::to_string(start) + "," + std::to_string(start + len) +
                      ") out of range for " + shape_str(a.shape()));
  }
  const std::size_t rows = static_cast<std::size_t>(a.dim(0));
  const std::size_t cols = static_cast<std::size_t>(a.dim(1));
  const std::size_t ln = static_cast<std::size_t>(len);
  Tensor<T> out = detail::make_result<T>({a.dim(0), len}, "slice_cols", {a.node()});
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(a.data().data() + r * cols + start, ln, out.data().data() + r * ln);
  }
  if (detail::track(out)) {
    auto an = a.node();
    const std::size_t st = static_cast<std::size_t>(start);
    out.raw()->backward_fn = [an, st, rows, cols, ln](TensorNode<T>& self) {
      if (!an->needs_grad) return;
      an->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        const T* g = self.grad.data() + r * ln;
        T* dst = an->grad.data() + r * cols + st;
        for (std::size_t j = 0; j < ln; ++j) dst[j] += g[j];
      }
    };
  }
  return out;
}

/// Gathers rows of `table` by id; gradients scatter-add back into the table.
template <typename T>
Tensor<T> embedding_rows(const Tensor<T>& table, const std::vector<int>& ids) {
  if (table.ndim() != 2) throw ConfigError("embedding_rows needs a 2-d table");
  if (ids.empty()) throw ConfigError("embedding_rows: empty id list");
  const int v = table.dim(0);
  const std::size_t cols = static_cast<std::size_t>(table.dim(1));
  for (int id : ids) {
    if (id < 0 || id >= v) {
      throw ConfigError("embedding id " + std::to_string(id) + " out of range [0," +
                        std::to_string(v) + ")");
    }
  }
  Tensor<T> out = detail::make_result<T>({static_cast<int>(ids.size()), table.dim(1)},
                                         "embedding", {table.node()});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::copy_n(table.data().data() + static_cast<std::size_t>(ids[i]) * cols, cols,
                out.data().data() + i * cols);
  }
  if (detail::track(out)) {
    auto tn = table.node();
    auto ids_copy = std::make_shared<std::vector<int>>(ids);
    out.raw()->backward_fn = [tn, ids_copy, cols](TensorNode<T>& self) {
      if (!tn->needs_grad) return;
      tn->ensure_grad();
      for (std::size_t i = 0; i < ids_copy->size(); ++i) {
        const T* g = self.grad.data() + i * cols;
        T* dst = tn->grad.data() + static_cast<std::size_t>((*ids_copy)[i]) * cols;
        for (std::size_t j = 0; j < cols; ++j) dst[j] += g[j];
      }
    };
  }
  return out;
}

/// Same data, new shape (sizes must match). Row-major layout is preserved.
template <typename T>
Tensor<T> reshape(const Tensor<T>& a, std::vector<int> new_shape) {
  std::size_t total = 1;
  for (int d : new_shape) total *= static_cast<std::size_t>(d > 0 ? d : 0);
  if (total != a.size()) {
    throw ConfigError("reshape " + shape_str(a.shape()) + " -> " + shape_str(new_shape) +
                      " changes element count");
  }
  Tensor<T> out = detail::make_result<T>(std::move(new_shape), "reshape", {a.node()});
  std::copy_n(a.data().data(), a.size(), out.data().data());
  if (detail::track(out)) {
    auto an = a.node();
    out.raw()->backward_fn = [an](TensorNode<T>& self) {
      if (!an->needs_grad) return;
      an->ensure_grad();
      for (std::size_t i = 0; i < self.data.size(); ++i) an->grad[i] += self.grad[i];
    };
  }
  return out;
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
  Tensor<T> out = detail::make_result<T>({1}, "sum_all", {a.node()});
  T acc = T(0);
  for (T v : a.data()) acc += v;
  out.data()[0] = acc;
  detail::check_finite(*out.raw());
  if (detail::track(out)) {
    auto an = a.node();
    out.raw()->backward_fn = [an](TensorNode<T>& self) {
      if (!an->needs_grad) return;
      an->ensure_grad();
      for (auto& g : an->grad) g += self.grad[0];
    };
  }
  return out;
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& a) {
  return scale(sum_all(a), T(1) / static_cast<T>(a.size()));
}

/// Mean cross-entropy in nats over the batch: -log softmax(logits)[target].
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& targets) {
  if (logits.ndim() != 2) throw ConfigError("cross_entropy needs 2-d logits");
  const std::size_t rows = static_cast<std::size_t>(logits.dim(0));
  const std::size_t cols = static_cast<std::size_t>(logits.dim(1));
  if (targets.size() != rows) {
    throw ConfigError("cross_entropy: " + std::to_string(rows) + " rows but " +
                      std::to_string(targets.size()) + " targets");
  }
  for (int t : targets) {
    if (t < 0 || t >= static_cast<int>(cols)) {
      throw ConfigError("cross_entropy target " + std::to_string(t) + " out of range [0," +
                        std::to_string(cols) + ")");
    }
  }
  Tensor<T> out = detail::make_result<T>({1}, "cross_entropy", {logits.node()});
  auto probs = std::make_shared<std::vector<T>>(rows * cols);
  kernels::softmax_rows(logits.data().data(), probs->data(), rows, cols, false);
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = logits.data().data() + r * cols;
    T mx = row[0];
    for (std::size_t j = 1; j < cols; ++j) mx = row[j] > mx ? row[j] : mx;
    double lse = 0.0;
    for (std::size_t j = 0; j < cols; ++j) lse += std::exp(static_cast<double>(row[j] - mx));
    loss += std::log(lse) + static_cast<double>(mx) -
            static_cast<double>(row[static_cast<std::size_t>(targets[r])]);
  }
  out.data()[0] = static_cast<T>(loss / static_cast<double>(rows));
  detail::check_finite(*out.raw());
  if (detail::track(out)) {
    auto ln = logits.node();
    auto tgt = std::make_shared<std::vector<int>>(targets);
    out.raw()->backward_fn = [ln, tgt, probs, rows, cols](TensorNode<T>& self) {
      if (!ln->needs_grad) return;
      ln->ensure_grad();
      const T g = self.grad[0] / static_cast<T>(rows);
      for (std::size_t r = 0; r < rows; ++r) {
        const T* p = probs->data() + r * cols;
        T* dst = ln->grad.data() + r * cols;
        for (std::size_t j = 0; j < cols; ++j) dst[j] += g * p[j];
        dst[static_cast<std::size_t>((*tgt)[r])] -= g;
      }
    };
  }
  return out;
}

/// Inverted-dropout mask: entries are 0 or 1/keep_prob, expectation 1.
template <typename T>
Tensor<T> bernoulli_mask(RngStream& rng, std::vector<int> shape, double keep_prob) {
  if (keep_prob <= 0.0 || keep_prob > 1.0) {
    throw ConfigError("bernoulli_mask keep_prob must be in (0,1], got " +
                      std::to_string(keep_prob));
  }
  Tensor<T> mask = Tensor<T>::zeros(std::move(shape));
  const T inv = static_cast<T>(1.0 / keep_prob);
  for (auto& v : mask.data()) v = rng.next_bernoulli(keep_prob) ? inv : T(0);
  return mask;
}

/// Reverse-mode sweep from a scalar loss: reverse topological order, each
/// node visited exactly once.
template <typename T>
void backward(Tensor<T>& loss) {
  if (!loss.raw()->needs_grad) {
    throw ConfigError("backward called on a tensor with no recorded graph");
  }
  if (loss.size() != 1) throw ConfigError("backward needs a scalar loss");

  std::vector<TensorNode<T>*> order;
  std::unordered_set<TensorNode<T>*> seen;
  // Iterative post-order DFS.
  std::vector<std::pair<TensorNode<T>*, std::size_t>> stack{{loss.raw(), 0}};
  seen.insert(loss.raw());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorNode<T>* parent = node->parents[next++].get();
      if (parent->needs_grad && seen.insert(parent).second) stack.push_back({parent, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  loss.raw()->ensure_grad();
  loss.raw()->grad[0] = T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode<T>* node = *it;
    if (node->backward_fn) {
      node->ensure_grad();
      node->backward_fn(*node);
    }
  }
}

}  // namespace salm
