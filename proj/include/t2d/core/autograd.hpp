#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <unordered_set>
#include <utility>
#include <vector>

#include "t2d/core/tensor.hpp"

namespace t2d {
namespace ag {

// Thread-local grad mode so inference workers can run tape-free.
inline bool& grad_mode_flag() {
  thread_local bool on = true;
  return on;
}

struct NoGradGuard {
  NoGradGuard() : prev(grad_mode_flag()) { grad_mode_flag() = false; }
  ~NoGradGuard() { grad_mode_flag() = prev; }
  bool prev;
};

template <class T>
struct NodeT {
  TensorT<T> val;
  TensorT<T> grad;  // allocated on demand, same shape as val
  std::vector<std::shared_ptr<NodeT>> parents;
  std::function<void(NodeT&)> backward;
  bool needs_grad = false;
  bool grad_ready = false;

  TensorT<T>& grad_ref() {
    if (!grad_ready) {
      grad = TensorT<T>(val.shape());
      grad_ready = true;
    }
    return grad;
  }
};

// Handle to a node in the dynamically built graph. Cheap to copy.
template <class T>
class ValueT {
 public:
  ValueT() = default;
  explicit ValueT(std::shared_ptr<NodeT<T>> n) : n_(std::move(n)) {}

  static ValueT leaf(TensorT<T> val, bool needs_grad = false) {
    auto n = std::make_shared<NodeT<T>>();
    n->val = std::move(val);
    n->needs_grad = needs_grad && grad_mode_flag();
    return ValueT(std::move(n));
  }

  static ValueT constant(TensorT<T> val) { return leaf(std::move(val), false); }

  bool defined() const { return n_ != nullptr; }
  NodeT<T>* node() const { return n_.get(); }
  const std::shared_ptr<NodeT<T>>& ptr() const { return n_; }

  const TensorT<T>& val() const { return n_->val; }
  TensorT<T>& val() { return n_->val; }
  const TensorT<T>& grad() const { return n_->grad; }
  bool needs_grad() const { return n_ && n_->needs_grad; }

  void zero_grad() const {
    n_->grad_ready = false;
    n_->grad = TensorT<T>();
  }

  ValueT detach() const { return constant(n_->val); }

 private:
  std::shared_ptr<NodeT<T>> n_;
};

namespace detail {

template <class T>
ValueT<T> make_op(TensorT<T> out, std::vector<ValueT<T>> inputs,
                  std::function<void(NodeT<T>&)> backward) {
  auto n = std::make_shared<NodeT<T>>();
  n->val = std::move(out);
  bool need = false;
  for (const auto& in : inputs) need = need || in.needs_grad();
  n->needs_grad = need && grad_mode_flag();
  if (n->needs_grad) {
    n->parents.reserve(inputs.size());
    for (auto& in : inputs) n->parents.push_back(in.ptr());
    n->backward = std::move(backward);
  }
  return ValueT<T>(std::move(n));
}

template <class T>
void check_same_shape(const ValueT<T>& a, const ValueT<T>& b, const char* op) {
  if (!a.val().same_shape(b.val()))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                a.val().shape_str() + " vs " + b.val().shape_str());
}

}  // namespace detail

// Runs reverse accumulation from a scalar output.
template <class T>
void backward(const ValueT<T>& loss) {
  if (loss.val().numel() != 1)
    throw std::invalid_argument("backward: loss must be scalar");
  // Iterative topological order over the needs_grad subgraph.
  std::vector<NodeT<T>*> order;
  std::unordered_set<NodeT<T>*> seen;
  std::vector<std::pair<NodeT<T>*, size_t>> stack;
  stack.push_back({loss.node(), 0});
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx == 0 && seen.count(node)) {
      stack.pop_back();
      continue;
    }
    if (idx < node->parents.size()) {
      NodeT<T>* p = node->parents[idx].get();
      ++idx;
      if (p->needs_grad && !seen.count(p)) stack.push_back({p, 0});
    } else {
      seen.insert(node);
      order.push_back(node);
      stack.pop_back();
    }
  }
  loss.node()->grad_ref().fill(T(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeT<T>* n = *it;
    if (n->backward && n->grad_ready) n->backward(*n);
  }
}

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

template <class T>
ValueT<T> add(const ValueT<T>& a, const ValueT<T>& b) {
  detail::check_same_shape(a, b, "add");
  TensorT<T> out(a.val().shape());
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = a.val()[i] + b.val()[i];
  return detail::make_op<T>(std::move(out), {a, b}, [](NodeT<T>& nd) {
    const auto& g = nd.grad;
    for (int k = 0; k < 2; ++k) {
      auto& p = *nd.parents[k];
      if (!p.needs_grad) continue;
      auto& pg = p.grad_ref();
      for (int64_t i = 0; i < g.numel(); ++i) pg[i] += g[i];
    }
  });
}

template <class T>
ValueT<T> sub(const ValueT<T>& a, const ValueT<T>& b) {
  detail::check_same_shape(a, b, "sub");
  TensorT<T> out(a.val().shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = a.val()[i] - b.val()[i];
  return detail::make_op<T>(std::move(out), {a, b}, [](NodeT<T>& nd) {
    const auto& g = nd.grad;
    if (nd.parents[0]->needs_grad) {
      auto& pg = nd.parents[0]->grad_ref();
      for (int64_t i = 0; i < g.numel(); ++i) pg[i] += g[i];
    }
    if (nd.parents[1]->needs_grad) {
      auto& pg = nd.parents[1]->grad_ref();
      for (int64_t i = 0; i < g.numel(); ++i) pg[i] -= g[i];
    }
  });
}

template <class T>
ValueT<T> mul(const ValueT<T>& a, const ValueT<T>& b) {
  detail::check_same_shape(a, b, "mul");
  TensorT<T> out(a.val().shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = a.val()[i] * b.val()[i];
  return detail::make_op<T>(std::move(out), {a, b}, [](NodeT<T>& nd) {
    const auto& g = nd.grad;
    const auto& av = nd.parents[0]->val;
    const auto& bv = nd.parents[1]->val;
    if (nd.parents[0]->needs_grad) {
      auto& pg = nd.parents[0]->grad_ref();
      for (int64_t i = 0; i < g.numel(); ++i) pg[i] += g[i] * bv[i];
    }
    if (nd.parents[1]->needs_grad) {
      auto& pg = nd.parents[1]->grad_ref();
      for (int64_t i = 0; i < g.numel(); ++i) pg[i] += g[i] * av[i];
    }
  });
}

template <class T>
ValueT<T> div(const ValueT<T>& a, const ValueT<T>& b) {
  detail::check_same_shape(a, b, "div");
  TensorT<T> out(a.val().shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = a.val()[i] / b.val()[i];
  return detail::make_op<T>(std::move(out), {a, b}, [](NodeT<T>& nd) {
    const auto& g = nd.grad;
    const auto& av = nd.parents[0]->val;
    const auto& bv = nd.parents[1]->val;
    if (nd.parents[0]->needs_grad) {
      auto& pg = nd.parents[0]->grad_ref();
      for (int64_t i = 0; i < g.numel(); ++i) pg[i] += g[i] / bv[i];
    }
    if (nd.parents[1]->needs_grad) {
      auto& pg = nd.parents[1]->grad_ref();
      for (int64_t i = 0; i < g.numel(); ++i)
        pg[i] -= g[i] * av[i] / (bv[i] * bv[i]);
    }
  });
}

template <class T>
ValueT<T> add_scalar(const ValueT<T>& a, T s) {
  TensorT<T> out(a.val().shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = a.val()[i] + s;
  return detail::make_op<T>(std::move(out), {a}, [](NodeT<T>& nd) {
    if (!nd.parents[0]->needs_grad) return;
    auto& pg = nd.parents[0]->grad_ref();
    for (int64_t i = 0; i < nd.grad.numel(); ++i) pg[i] += nd.grad[i];
  });
}

template <class T>
ValueT<T> mul_scalar(const ValueT<T>& a, T s) {
  TensorT<T> out(a.val().shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = a.val()[i] * s;
  return detail::make_op<T>(std::move(out), {a}, [s](NodeT<T>& nd) {
    if (!nd.parents[0]->needs_grad) return;
    auto& pg = nd.parents[0]->grad_ref();
    for (int64_t i = 0; i < nd.grad.numel(); ++i) pg[i] += nd.grad[i] * s;
  });
}

template <class T>
ValueT<T> relu(const ValueT<T>& a) {
  TensorT<T> out(a.val().shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = a.val()[i] > T(0) ? a.val()[i] : T(0);
  return detail::make_op<T>(std::move(out), {a}, [](NodeT<T>& nd) {
    if (!nd.parents[0]->needs_grad) return;
    auto& pg = nd.parents[0]->grad_ref();
    const auto& av = nd.parents[0]->val;
    for (int64_t i = 0; i < nd.grad.numel(); ++i)
      if (av[i] > T(0)) pg[i] += nd.grad[i];
  });
}

template <class T>
ValueT<T> sigmoid(const ValueT<T>& a) {
  TensorT<T> out(a.val().shape());
  for (int64_t i = 0; i < out.numel(); ++i) {
    const T x = a.val()[i];
    out[i] = x >= T(0) ? T(1) / (T(1) + std::exp(-x))
                       : std::exp(x) / (T(1) + std::exp(x));
  }
  return detail::make_op<T>(std::move(out), {a}, [](NodeT<T>& nd) {
    if (!nd.parents[0]->needs_grad) return;
    auto& pg = nd.parents[0]->grad_ref();
    const auto& y = nd.val;
    for (int64_t i = 0; i < nd.grad.numel(); ++i)
      pg[i] += nd.grad[i] * y[i] * (T(1) - y[i]);
  });
}

template <class T>
ValueT<T> tanh_(const ValueT<T>& a) {
  TensorT<T> out(a.val().shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::tanh(a.val()[i]);
  return detail::make_op<T>(std::move(out), {a}, [](NodeT<T>& nd) {
    if (!nd.parents[0]->needs_grad) return;
    auto& pg = nd.parents[0]->grad_ref();
    const auto& y = nd.val;
    for (int64_t i = 0; i < nd.grad.numel(); ++i)
      pg[i] += nd.grad[i] * (T(1) - y[i] * y[i]);
  });
}

template <class T>
ValueT<T> exp_(const ValueT<T>& a) {
  TensorT<T> out(a.val().shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::exp(a.val()[i]);
  return detail::make_op<T>(std::move(out), {a}, [](NodeT<T>& nd) {
    if (!nd.parents[0]->needs_grad) return;
    auto& pg = nd.parents[0]->grad_ref();
    const auto& y = nd.val;
    for (int64_t i = 0; i < nd.grad.numel(); ++i) pg[i] += nd.grad[i] * y[i];
  });
}

template <class T>
ValueT<T> log_(const ValueT<T>& a) {
  TensorT<T> out(a.val().shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::log(a.val()[i]);
  return detail::make_op<T>(std::move(out), {a}, [](NodeT<T>& nd) {
    if (!nd.parents[0]->needs_grad) return;
    auto& pg = nd.parents[0]->grad_ref();
    const auto& av = nd.parents[0]->val;
    for (int64_t i = 0; i < nd.grad.numel(); ++i) pg[i] += nd.grad[i] / av[i];
  });
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

template <class T>
void matmul_acc(const T* A, const T* B, T* C, int n, int k, int m) {
  // C[n,m] += A[n,k] * B[k,m]
  for (int i = 0; i < n; ++i) {
    const T* a = A + static_cast<int64_t>(i) * k;
    T* c = C + static_cast<int64_t>(i) * m;
    for (int p = 0; p < k; ++p) {
      const T av = a[p];
      if (av == T(0)) continue;
      const T* b = B + static_cast<int64_t>(p) * m;
      for (int j = 0; j < m; ++j) c[j] += av * b[j];
    }
  }
}

template <class T>
ValueT<T> matmul(const ValueT<T>& a, const ValueT<T>& b) {
  if (a.val().rank() != 2 || b.val().rank() != 2 || a.val().dim(1) != b.val().dim(0))
    throw std::invalid_argument("matmul: bad shapes " + a.val().shape_str() + " x " +
                                b.val().shape_str());
  const int n = a.val().dim(0), k = a.val().dim(1), m = b.val().dim(1);
  TensorT<T> out({n, m});
  matmul_acc(a.val().data(), b.val().data(), out.data(), n, k, m);
  return detail::make_op<T>(std::move(out), {a, b}, [n, k, m](NodeT<T>& nd) {
    const auto& g = nd.grad;
    const auto& av = nd.parents[0]->val;
    const auto& bv = nd.parents[1]->val;
    if (nd.parents[0]->needs_grad) {
      // dA = dC * B^T
      auto& pg = nd.parents[0]->grad_ref();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) {
          const T gv = g[static_cast<int64_t>(i) * m + j];
          if (gv == T(0)) continue;
          const T* brow = bv.data();
          for (int p = 0; p < k; ++p)
            pg[static_cast<int64_t>(i) * k + p] += gv * brow[static_cast<int64_t>(p) * m + j];
        }
    }
    if (nd.parents[1]->needs_grad) {
      // dB = A^T * dC
      auto& pg = nd.parents[1]->grad_ref();
      for (int i = 0; i < n; ++i)
        for (int p = 0; p < k; ++p) {
          const T av_ip = av[static_cast<int64_t>(i) * k + p];
          if (av_ip == T(0)) continue;
          const T* grow = g.data() + static_cast<int64_t>(i) * m;
          T* prow = pg.data() + static_cast<int64_t>(p) * m;
          for (int j = 0; j < m; ++j) prow[j] += av_ip * grow[j];
        }
    }
  });
}

template <class T>
ValueT<T> transpose2d(const ValueT<T>& a) {
  if (a.val().rank() != 2) throw std::invalid_argument("transpose2d: rank != 2");
  const int n = a.val().dim(0), m = a.val().dim(1);
  TensorT<T> out({m, n});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) out.at(j, i) = a.val().at(i, j);
  return detail::make_op<T>(std::move(out), {a}, [n, m](NodeT<T>& nd) {
    if (!nd.parents[0]->needs_grad) return;
    auto& pg = nd.parents[0]->grad_ref();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) pg.at(i, j) += nd.grad.at(j, i);
  });
}

template <class T>
ValueT<T> reshape(const ValueT<T>& a, std::vector<int> shape) {
  TensorT<T> out = a.val().reshaped(shape);
  return detail::make_op<T>(std::move(out), {a}, [](NodeT<T>& nd) {
    if (!nd.parents[0]->needs_grad) return;
    auto& pg = nd.parents[0]->grad_ref();
    for (int64_t i = 0; i < nd.grad.numel(); ++i) pg[i] += nd.grad[i];
  });
}

// [N,D] + [D] broadcast over rows
template <class T>
ValueT<T> bias_add_rows(const ValueT<T>& a, const ValueT<T>& b) {
  if (a.val().rank() != 2 || b.val().rank() != 1 || a.val().dim(1) != b.val().dim(0))
    throw std::invalid_argument("bias_add_rows: bad shapes");
  const int n = a.val().dim(0), d = a.val().dim(1);
  TensorT<T> out({n, d});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) out.at(i, j) = a.val().at(i, j) + b.val()[j];
  return detail::make_op<T>(std::move(out), {a, b}, [n, d](NodeT<T>& nd) {
    if (nd.parents[0]->needs_grad) {
      auto& pg = nd.parents[0]->grad_ref();
      for (int64_t i = 0; i < nd.grad.numel(); ++i) pg[i] += nd.grad[i];
    }
    if (nd.parents[1]->needs_grad) {
      auto& pg = nd.parents[1]->grad_ref();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) pg[j] += nd.grad.at(i, j);
    }
  });
}

// [C,H,W] + [C] broadcast over space
template <class T>
ValueT<T> bias_add_chw(const ValueT<T>& a, const ValueT<T>& b) {
  if (a.val().rank() != 3 || b.val().rank() != 1 || a.val().dim(0) != b.val().dim(0))
    throw std::invalid_argument("bias_add_chw: bad shapes");
  const int c = a.val().dim(0);
  const int64_t hw = a.val().dim(1) * static_cast<int64_t>(a.val().dim(2));
  TensorT<T> out(a.val().shape());
  for (int ci = 0; ci < c; ++ci) {
    const T bv = b.val()[ci];
    const T* src = a.val().data() + ci * hw;
    T* dst = out.data() + ci * hw;
    for (int64_t i = 0; i < hw; ++i) dst[i] = src[i] + bv;
  }
  return detail::make_op<T>(std::move(out), {a, b}, [c, hw](NodeT<T>& nd) {
    if (nd.parents[0]->needs_grad) {
      auto& pg = nd.parents[0]->grad_ref();
      for (int64_t i = 0; i < nd.grad.numel(); ++i) pg[i] += nd.grad[i];
    }
    if (nd.parents[1]->needs_grad) {
      auto& pg = nd.parents[1]->grad_ref();
      for (int ci = 0; ci < c; ++ci) {
        const T* g = nd.grad.data() + ci * hw;
        T acc = T(0);
        for (int64_t i = 0; i < hw; ++i) acc += g[i];
        pg[ci] += acc;
      }
    }
  });
}

template <class T>
ValueT<T> concat_cols(const ValueT<T>& a, const ValueT<T>& b) {
  if (a.val().rank() != 2 || b.val().rank() != 2 || a.val().dim(0) != b.val().dim(0))
    throw std::invalid_argument("concat_cols: bad shapes");
  const int n = a.val().dim(0), da = a.val().dim(1), db = b.val().dim(1);
  TensorT<T> out({n, da + db});
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < da; ++j) out.at(i, j) = a.val().at(i, j);
    for (int j = 0; j < db; ++j) out.at(i, da + j) = b.val().at(i, j);
  }
  return detail::make_op<T>(std::move(out), {a, b}, [n, da, db](NodeT<T>& nd) {
    if (nd.parents[0]->needs_grad) {
      auto& pg = nd.parents[0]->grad_ref();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < da; ++j) pg.at(i, j) += nd.grad.at(i, j);
    }
    if (nd.parents[1]->needs_grad) {
      auto& pg = nd.parents[1]->grad_ref();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < db; ++j) pg.at(i, j) += nd.grad.at(i, da + j);
    }
  });
}

template <class T>
ValueT<T> slice_cols(const ValueT<T>& a, int c0, int c1) {
  if (a.val().rank() != 2 || c0 < 0 || c1 > a.val().dim(1) || c0 >= c1)
    throw std::invalid_argument("slice_cols: bad range");
  const int n = a.val().dim(0), d = c1 - c0;
  TensorT<T> out({n, d});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) out.at(i, j) = a.val().at(i, c0 + j);
  return detail::make_op<T>(std::move(out), {a}, [n, d, c0](NodeT<T>& nd) {
    if (!nd.parents[0]->needs_grad) return;
    auto& pg = nd.parents[0]->grad_ref();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j) pg.at(i, c0 + j) += nd.grad.at(i, j);
  });
}

// Select rows of a [N,M] matrix; indices may repeat.
template <class T>
ValueT<T> gather_rows(const ValueT<T>& a, const std::vector<int>& rows) {
  if (a.val().rank() != 2) throw std::invalid_argument("gather_rows: rank != 2");
  const int n = a.val().dim(0), m = a.val().dim(1);
  for (int r : rows)
    if (r < 0 || r >= n) throw std::invalid_argument("gather_rows: index out of range");
  const int k = static_cast<int>(rows.size());
  TensorT<T> out({k, m});
  for (int i = 0; i < k; ++i)
    std::copy(a.val().data() + static_cast<int64_t>(rows[i]) * m,
              a.val().data() + static_cast<int64_t>(rows[i] + 1) * m,
              out.data() + static_cast<int64_t>(i) * m);
  auto rows_sp = std::make_shared<std::vector<int>>(rows);
  return detail::make_op<T>(std::move(out), {a}, [rows_sp, m](NodeT<T>& nd) {
    if (!nd.parents[0]->needs_grad) return;
    auto& pg = nd.parents[0]->grad_ref();
    for (size_t i = 0; i < rows_sp->size(); ++i) {
      const T* g = nd.grad.data() + static_cast<int64_t>(i) * m;
      T* dst = pg.data() + static_cast<int64_t>((*rows_sp)[i]) * m;
      for (int j = 0; j < m; ++j) dst[j] += g[j];
    }
  });
}

template <class T>
ValueT<T> concat_channels(const ValueT<T>& a, const ValueT<T>& b) {
  const auto& av = a.val();
  const auto& bv = b.val();
  if (av.rank() != 3 || bv.rank() != 3 || av.dim(1) != bv.dim(1) || av.dim(2) != bv.dim(2))
    throw std::invalid_argument("concat_channels: bad shapes " + av.shape_str() + " vs " +
                                bv.shape_str());
  const int ca = av.dim(0), cb = bv.dim(0), h = av.dim(1), w = av.dim(2);
  TensorT<T> out({ca + cb, h, w});
  std::copy(av.data(), av.data() + av.numel(), out.data());
  std::copy(bv.data(), bv.data() + bv.numel(), out.data() + av.numel());
  return detail::make_op<T>(std::move(out), {a, b}, [ca, cb, h, w](NodeT<T>& nd) {
    const int64_t na = static_cast<int64_t>(ca) * h * w;
    const int64_t nb = static_cast<int64_t>(cb) * h * w;
    if (nd.parents[0]->needs_grad) {
      auto& pg = nd.parents[0]->grad_ref();
      for (int64_t i = 0; i < na; ++i) pg[i] += nd.grad[i];
    }
    if (nd.parents[1]->needs_grad) {
      auto& pg = nd.parents[1]->grad_ref();
      for (int64_t i = 0; i < nb; ++i) pg[i] += nd.grad[na + i];
    }
  });
}

// [C,H,W] -> [H*W, C]
template <class T>
ValueT<T> chw_to_rows(const ValueT<T>& a) {
  if (a.val().rank() != 3) throw std::invalid_argument("chw_to_rows: rank != 3");
  const int c = a.val().dim(0), h = a.val().dim(1), w = a.val().dim(2);
  const int hw = h * w;
  TensorT<T> out({hw, c});
  for (int ci = 0; ci < c; ++ci) {
    const T* src = a.val().data() + static_cast<int64_t>(ci) * hw;
    for (int p = 0; p < hw; ++p) out[static_cast<int64_t>(p) * c + ci] = src[p];
  }
  return detail::make_op<T>(std::move(out), {a}, [c, hw](NodeT<T>& nd) {
    if (!nd.parents[0]->needs_grad) return;
    auto& pg = nd.parents[0]->grad_ref();
    for (int ci = 0; ci < c; ++ci) {
      T* dst = pg.data() + static_cast<int64_t>(ci) * hw;
      for (int p = 0; p < hw; ++p) dst[p] += nd.grad[static_cast<int64_t>(p) * c + ci];
    }
  });
}

// [H*W, C] -> [C,H,W]
template <class T>
ValueT<T> rows_to_chw(const ValueT<T>& a, int h, int w) {
  if (a.val().rank() != 2 || a.val().dim(0) != h * w)
    throw std::invalid_argument("rows_to_chw: bad shapes");
  const int c = a.val().dim(1);
  const int hw = h * w;
  TensorT<T> out({c, h, w});
  for (int ci = 0; ci < c; ++ci) {
    T* dst = out.data() + static_cast<int64_t>(ci) * hw;
    for (int p = 0; p < hw; ++p) dst[p] = a.val()[static_cast<int64_t>(p) * c + ci];
  }
  return detail::make_op<T>(std::move(out), {a}, [c, hw](NodeT<T>& nd) {
    if (!nd.parents[0]->needs_grad) return;
    auto& pg = nd.parents[0]->grad_ref();
    for (int ci = 0; ci < c; ++ci) {
      const T* g = nd.grad.data() + static_cast<int64_t>(ci) * hw;
      for (int p = 0; p < hw; ++p) pg[static_cast<int64_t>(p) * c + ci] += g[p];
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <class T>
ValueT<T> sum_all(const ValueT<T>& a) {
  TensorT<T> out({1});
  out[0] = a.val().sum();
  return detail::make_op<T>(std::move(out), {a}, [](NodeT<T>& nd) {
    if (!nd.parents[0]->needs_grad) return;
    auto& pg = nd.parents[0]->grad_ref();
    const T g = nd.grad[0];
    for (int64_t i = 0; i < pg.numel(); ++i) pg[i] += g;
  });
}

template <class T>
ValueT<T> mean_all(const ValueT<T>& a) {
  const T inv = T(1) / static_cast<T>(a.val().numel());
  return mul_scalar(sum_all(a), inv);
}

template <class T>
ValueT<T> sum_rows(const ValueT<T>& a) {
  if (a.val().rank() != 2) throw std::invalid_argument("sum_rows: rank != 2");
  const int n = a.val().dim(0), m = a.val().dim(1);
  TensorT<T> out({n});
  for (int i = 0; i < n; ++i) {
    T acc = T(0);
    for (int j = 0; j < m; ++j) acc += a.val().at(i, j);
    out[i] = acc;
  }
  return detail::make_op<T>(std::move(out), {a}, [n, m](NodeT<T>& nd) {
    if (!nd.parents[0]->needs_grad) return;
    auto& pg = nd.parents[0]->grad_ref();
    for (int i = 0; i < n; ++i) {
      const T g = nd.grad[i];
      for (int j = 0; j < m; ++j) pg.at(i, j) += g;
    }
  });
}

// ---------------------------------------------------------------------------
// Softmax / normalization
// ---------------------------------------------------------------------------

template <class T>
ValueT<T> softmax_rows(const ValueT<T>& a) {
  if (a.val().rank() != 2) throw std::invalid_argument("softmax_rows: rank != 2");
  const int n = a.val().dim(0), m = a.val().dim(1);
  TensorT<T> out({n, m});
  for (int i = 0; i < n; ++i) {
    T mx = a.val().at(i, 0);
    for (int j = 1; j < m; ++j) mx = std::max(mx, a.val().at(i, j));
    T z = T(0);
    for (int j = 0; j < m; ++j) {
      const T e = std::exp(a.val().at(i, j) - mx);
      out.at(i, j) = e;
      z += e;
    }
    const T inv = T(1) / z;
    for (int j = 0; j < m; ++j) out.at(i, j) *= inv;
  }
  return detail::make_op<T>(std::move(out), {a}, [n, m](NodeT<T>& nd) {
    if (!nd.parents[0]->needs_grad) return;
    auto& pg = nd.parents[0]->grad_ref();
    const auto& y = nd.val;
    for (int i = 0; i < n; ++i) {
      T dot = T(0);
      for (int j = 0; j < m; ++j) dot += nd.grad.at(i, j) * y.at(i, j);
      for (int j = 0; j < m; ++j)
        pg.at(i, j) += y.at(i, j) * (nd.grad.at(i, j) - dot);
    }
  });
}

template <class T>
ValueT<T> layernorm_rows(const ValueT<T>& a, const ValueT<T>& gamma,
                         const ValueT<T>& beta, T eps = T(1e-5)) {
  if (a.val().rank() != 2) throw std::invalid_argument("layernorm_rows: rank != 2");
  const int n = a.val().dim(0), m = a.val().dim(1);
  if (gamma.val().numel() != m || beta.val().numel() != m)
    throw std::invalid_argument("layernorm_rows: bad affine shapes");
  TensorT<T> out({n, m});
  TensorT<T> xhat({n, m});
  std::vector<T> inv_std(n);
  for (int i = 0; i < n; ++i) {
    T mean = T(0);
    for (int j = 0; j < m; ++j) mean += a.val().at(i, j);
    mean /= static_cast<T>(m);
    T var = T(0);
    for (int j = 0; j < m; ++j) {
      const T d = a.val().at(i, j) - mean;
      var += d * d;
    }
    var /= static_cast<T>(m);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[i] = is;
    for (int j = 0; j < m; ++j) {
      const T xh = (a.val().at(i, j) - mean) * is;
      xhat.at(i, j) = xh;
      out.at(i, j) = xh * gamma.val()[j] + beta.val()[j];
    }
  }
  auto xhat_sp = std::make_shared<TensorT<T>>(std::move(xhat));
  auto istd_sp = std::make_shared<std::vector<T>>(std::move(inv_std));
  return detail::make_op<T>(
      std::move(out), {a, gamma, beta}, [n, m, xhat_sp, istd_sp](NodeT<T>& nd) {
        const auto& xh = *xhat_sp;
        const auto& istd = *istd_sp;
        const auto& gam = nd.parents[1]->val;
        if (nd.parents[1]->needs_grad) {
          auto& gg = nd.parents[1]->grad_ref();
          for (int i = 0; i < n; ++i)
            for (int j = 0; j < m; ++j) gg[j] += nd.grad.at(i, j) * xh.at(i, j);
        }
        if (nd.parents[2]->needs_grad) {
          auto& bg = nd.parents[2]->grad_ref();
          for (int i = 0; i < n; ++i)
            for (int j = 0; j < m; ++j) bg[j] += nd.grad.at(i, j);
        }
        if (nd.parents[0]->needs_grad) {
          auto& pg = nd.parents[0]->grad_ref();
          for (int i = 0; i < n; ++i) {
            T sum_g = T(0), sum_gx = T(0);
            for (int j = 0; j < m; ++j) {
              const T gy = nd.grad.at(i, j) * gam[j];
              sum_g += gy;
              sum_gx += gy * xh.at(i, j);
            }
            const T invm = T(1) / static_cast<T>(m);
            for (int j = 0; j < m; ++j) {
              const T gy = nd.grad.at(i, j) * gam[j];
              pg.at(i, j) += istd[i] * (gy - invm * sum_g - xh.at(i, j) * invm * sum_gx);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Convolution / spatial ops
// ---------------------------------------------------------------------------

// x:[Cin,H,W], w:[Cout,Cin,kh,kw] -> [Cout,Ho,Wo]; stride s, zero pad p.
template <class T>
ValueT<T> conv2d(const ValueT<T>& x, const ValueT<T>& w, int stride = 1, int pad = 0) {
  const auto& xv = x.val();
  const auto& wv = w.val();
  if (xv.rank() != 3 || wv.rank() != 4 || xv.dim(0) != wv.dim(1))
    throw std::invalid_argument("conv2d: bad shapes x=" + xv.shape_str() +
                                " w=" + wv.shape_str());
  const int cin = xv.dim(0), h = xv.dim(1), ww = xv.dim(2);
  const int cout = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
  const int ho = (h + 2 * pad - kh) / stride + 1;
  const int wo = (ww + 2 * pad - kw) / stride + 1;
  if (ho <= 0 || wo <= 0) throw std::invalid_argument("conv2d: empty output");
  TensorT<T> out({cout, ho, wo});
  const T* X = xv.data();
  const T* W = wv.data();
  T* O = out.data();
  for (int co = 0; co < cout; ++co) {
    T* oc = O + static_cast<int64_t>(co) * ho * wo;
    for (int ci = 0; ci < cin; ++ci) {
      const T* xc = X + static_cast<int64_t>(ci) * h * ww;
      const T* wk = W + ((static_cast<int64_t>(co) * cin + ci) * kh) * kw;
      for (int ky = 0; ky < kh; ++ky) {
        for (int kx = 0; kx < kw; ++kx) {
          const T wval = wk[ky * kw + kx];
          if (wval == T(0)) continue;
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= h) continue;
            const T* xrow = xc + static_cast<int64_t>(iy) * ww;
            T* orow = oc + static_cast<int64_t>(oy) * wo;
            for (int ox = 0; ox < wo; ++ox) {
              const int ix = ox * stride - pad + kx;
              if (ix < 0 || ix >= ww) continue;
              orow[ox] += wval * xrow[ix];
            }
          }
        }
      }
    }
  }
  return detail::make_op<T>(
      std::move(out), {x, w},
      [cin, h, ww, cout, kh, kw, ho, wo, stride, pad](NodeT<T>& nd) {
        const auto& g = nd.grad;
        const auto& xv2 = nd.parents[0]->val;
        const auto& wv2 = nd.parents[1]->val;
        if (nd.parents[0]->needs_grad) {
          auto& xg = nd.parents[0]->grad_ref();
          for (int co = 0; co < cout; ++co) {
            const T* gc = g.data() + static_cast<int64_t>(co) * ho * wo;
            for (int ci = 0; ci < cin; ++ci) {
              T* xgc = xg.data() + static_cast<int64_t>(ci) * h * ww;
              const T* wk = wv2.data() + ((static_cast<int64_t>(co) * cin + ci) * kh) * kw;
              for (int ky = 0; ky < kh; ++ky)
                for (int kx = 0; kx < kw; ++kx) {
                  const T wval = wk[ky * kw + kx];
                  if (wval == T(0)) continue;
                  for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) continue;
                    const T* grow = gc + static_cast<int64_t>(oy) * wo;
                    T* xrow = xgc + static_cast<int64_t>(iy) * ww;
                    for (int ox = 0; ox < wo; ++ox) {
                      const int ix = ox * stride - pad + kx;
                      if (ix < 0 || ix >= ww) continue;
                      xrow[ix] += wval * grow[ox];
                    }
                  }
                }
            }
          }
        }
        if (nd.parents[1]->needs_grad) {
          auto& wg = nd.parents[1]->grad_ref();
          for (int co = 0; co < cout; ++co) {
            const T* gc = g.data() + static_cast<int64_t>(co) * ho * wo;
            for (int ci = 0; ci < cin; ++ci) {
              const T* xc = xv2.data() + static_cast<int64_t>(ci) * h * ww;
              T* wk = wg.data() + ((static_cast<int64_t>(co) * cin + ci) * kh) * kw;
              for (int ky = 0; ky < kh; ++ky)
                for (int kx = 0; kx < kw; ++kx) {
                  T acc = T(0);
                  for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) continue;
                    const T* grow = gc + static_cast<int64_t>(oy) * wo;
                    const T* xrow = xc + static_cast<int64_t>(iy) * ww;
                    for (int ox = 0; ox < wo; ++ox) {
                      const int ix = ox * stride - pad + kx;
                      if (ix < 0 || ix >= ww) continue;
                      acc += grow[ox] * xrow[ix];
                    }
                  }
                  wk[ky * kw + kx] += acc;
                }
            }
          }
        }
      });
}

template <class T>
ValueT<T> avgpool2(const ValueT<T>& x) {
  const auto& xv = x.val();
  if (xv.rank() != 3 || xv.dim(1) % 2 || xv.dim(2) % 2)
    throw std::invalid_argument("avgpool2: needs even [C,H,W]");
  const int c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
  const int ho = h / 2, wo = w / 2;
  TensorT<T> out({c, ho, wo});
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < ho; ++y)
      for (int xo = 0; xo < wo; ++xo)
        out.at(ci, y, xo) =
            (xv.at(ci, 2 * y, 2 * xo) + xv.at(ci, 2 * y, 2 * xo + 1) +
             xv.at(ci, 2 * y + 1, 2 * xo) + xv.at(ci, 2 * y + 1, 2 * xo + 1)) *
            T(0.25);
  return detail::make_op<T>(std::move(out), {x}, [c, ho, wo](NodeT<T>& nd) {
    if (!nd.parents[0]->needs_grad) return;
    auto& pg = nd.parents[0]->grad_ref();
    for (int ci = 0; ci < c; ++ci)
      for (int y = 0; y < ho; ++y)
        for (int xo = 0; xo < wo; ++xo) {
          const T g = nd.grad.at(ci, y, xo) * T(0.25);
          pg.at(ci, 2 * y, 2 * xo) += g;
          pg.at(ci, 2 * y, 2 * xo + 1) += g;
          pg.at(ci, 2 * y + 1, 2 * xo) += g;
          pg.at(ci, 2 * y + 1, 2 * xo + 1) += g;
        }
  });
}

namespace detail {

// Half-pixel bilinear sample weights for one output coordinate.
template <class T>
inline void bilerp_axis(int out_i, int in_n, double scale, int& i0, int& i1, T& w0, T& w1) {
  double src = (out_i + 0.5) * scale - 0.5;
  if (src < 0) src = 0;
  if (src > in_n - 1) src = in_n - 1;
  i0 = static_cast<int>(std::floor(src));
  i1 = std::min(i0 + 1, in_n - 1);
  const double f = src - i0;
  w0 = static_cast<T>(1.0 - f);
  w1 = static_cast<T>(f);
}

}  // namespace detail

template <class T>
TensorT<T> resize_bilinear_plain(const TensorT<T>& xv, int ho, int wo) {
  const int c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
  TensorT<T> out({c, ho, wo});
  const double sy = static_cast<double>(h) / ho;
  const double sx = static_cast<double>(w) / wo;
  for (int y = 0; y < ho; ++y) {
    int y0, y1;
    T wy0, wy1;
    detail::bilerp_axis(y, h, sy, y0, y1, wy0, wy1);
    for (int x = 0; x < wo; ++x) {
      int x0, x1;
      T wx0, wx1;
      detail::bilerp_axis(x, w, sx, x0, x1, wx0, wx1);
      for (int ci = 0; ci < c; ++ci) {
        out.at(ci, y, x) = wy0 * (wx0 * xv.at(ci, y0, x0) + wx1 * xv.at(ci, y0, x1)) +
                           wy1 * (wx0 * xv.at(ci, y1, x0) + wx1 * xv.at(ci, y1, x1));
      }
    }
  }
  return out;
}

template <class T>
ValueT<T> resize_bilinear(const ValueT<T>& x, int ho, int wo) {
  const auto& xv = x.val();
  if (xv.rank() != 3) throw std::invalid_argument("resize_bilinear: rank != 3");
  const int c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
  if (h == ho && w == wo) return x;
  TensorT<T> out = resize_bilinear_plain(xv, ho, wo);
  return detail::make_op<T>(std::move(out), {x}, [c, h, w, ho, wo](NodeT<T>& nd) {
    if (!nd.parents[0]->needs_grad) return;
    auto& pg = nd.parents[0]->grad_ref();
    const double sy = static_cast<double>(h) / ho;
    const double sx = static_cast<double>(w) / wo;
    for (int y = 0; y < ho; ++y) {
      int y0, y1;
      T wy0, wy1;
      detail::bilerp_axis(y, h, sy, y0, y1, wy0, wy1);
      for (int x2 = 0; x2 < wo; ++x2) {
        int x0, x1;
        T wx0, wx1;
        detail::bilerp_axis(x2, w, sx, x0, x1, wx0, wx1);
        for (int ci = 0; ci < c; ++ci) {
          const T g = nd.grad.at(ci, y, x2);
          pg.at(ci, y0, x0) += g * wy0 * wx0;
          pg.at(ci, y0, x1) += g * wy0 * wx1;
          pg.at(ci, y1, x0) += g * wy1 * wx0;
          pg.at(ci, y1, x1) += g * wy1 * wx1;
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Fused losses
// ---------------------------------------------------------------------------

// Mean binary cross-entropy with logits against a constant target, in the
// log-sum-exp form: max(x,0) - x*y + log(1 + exp(-|x|)).
template <class T>
ValueT<T> bce_with_logits_mean(const ValueT<T>& logits, const TensorT<T>& target) {
  if (!logits.val().same_shape(target))
    throw std::invalid_argument("bce_with_logits_mean: shape mismatch");
  const int64_t n = logits.val().numel();
  T acc = T(0);
  for (int64_t i = 0; i < n; ++i) {
    const T x = logits.val()[i];
    const T y = target[i];
    acc += std::max(x, T(0)) - x * y + std::log1p(std::exp(-std::abs(x)));
  }
  TensorT<T> out({1});
  out[0] = acc / static_cast<T>(n);
  auto tgt = std::make_shared<TensorT<T>>(target);
  return detail::make_op<T>(std::move(out), {logits}, [tgt, n](NodeT<T>& nd) {
    if (!nd.parents[0]->needs_grad) return;
    auto& pg = nd.parents[0]->grad_ref();
    const auto& xv = nd.parents[0]->val;
    const T g = nd.grad[0] / static_cast<T>(n);
    for (int64_t i = 0; i < n; ++i) {
      const T x = xv[i];
      const T s = x >= T(0) ? T(1) / (T(1) + std::exp(-x))
                            : std::exp(x) / (T(1) + std::exp(x));
      pg[i] += g * (s - (*tgt)[i]);
    }
  });
}

// Per-row softmax cross-entropy with integer labels and per-class weights;
// returns sum(w_y * nll) / sum(w_y).
template <class T>
ValueT<T> cross_entropy_rows(const ValueT<T>& logits, const std::vector<int>& labels,
                             const std::vector<T>& class_weights) {
  if (logits.val().rank() != 2 || static_cast<int>(labels.size()) != logits.val().dim(0))
    throw std::invalid_argument("cross_entropy_rows: bad shapes");
  const int n = logits.val().dim(0), k = logits.val().dim(1);
  for (int lbl : labels)
    if (lbl < 0 || lbl >= k) throw std::invalid_argument("cross_entropy_rows: label out of range");
  T wsum = T(0), acc = T(0);
  std::vector<T> rowmax(n), rowlse(n);
  for (int i = 0; i < n; ++i) {
    T mx = logits.val().at(i, 0);
    for (int j = 1; j < k; ++j) mx = std::max(mx, logits.val().at(i, j));
    T z = T(0);
    for (int j = 0; j < k; ++j) z += std::exp(logits.val().at(i, j) - mx);
    rowmax[i] = mx;
    rowlse[i] = std::log(z) + mx;
    const T w = class_weights.empty() ? T(1) : class_weights[labels[i]];
    acc += w * (rowlse[i] - logits.val().at(i, labels[i]));
    wsum += w;
  }
  TensorT<T> out({1});
  out[0] = wsum > T(0) ? acc / wsum : T(0);
  auto lbl_sp = std::make_shared<std::vector<int>>(labels);
  auto w_sp = std::make_shared<std::vector<T>>(class_weights);
  return detail::make_op<T>(std::move(out), {logits}, [lbl_sp, w_sp, n, k, wsum](NodeT<T>& nd) {
    if (!nd.parents[0]->needs_grad || wsum <= T(0)) return;
    auto& pg = nd.parents[0]->grad_ref();
    const auto& xv = nd.parents[0]->val;
    const T g = nd.grad[0] / wsum;
    for (int i = 0; i < n; ++i) {
      T mx = xv.at(i, 0);
      for (int j = 1; j < k; ++j) mx = std::max(mx, xv.at(i, j));
      T z = T(0);
      for (int j = 0; j < k; ++j) z += std::exp(xv.at(i, j) - mx);
      const T w = w_sp->empty() ? T(1) : (*w_sp)[(*lbl_sp)[i]];
      for (int j = 0; j < k; ++j) {
        const T p = std::exp(xv.at(i, j) - mx) / z;
        pg.at(i, j) += g * w * (p - (j == (*lbl_sp)[i] ? T(1) : T(0)));
      }
    }
  });
}

template <class T>
ValueT<T> mse_mean(const ValueT<T>& pred, const TensorT<T>& target) {
  if (!pred.val().same_shape(target))
    throw std::invalid_argument("mse_mean: shape mismatch");
  const int64_t n = pred.val().numel();
  T acc = T(0);
  for (int64_t i = 0; i < n; ++i) {
    const T d = pred.val()[i] - target[i];
    acc += d * d;
  }
  TensorT<T> out({1});
  out[0] = acc / static_cast<T>(n);
  auto tgt = std::make_shared<TensorT<T>>(target);
  return detail::make_op<T>(std::move(out), {pred}, [tgt, n](NodeT<T>& nd) {
    if (!nd.parents[0]->needs_grad) return;
    auto& pg = nd.parents[0]->grad_ref();
    const auto& xv = nd.parents[0]->val;
    const T g = nd.grad[0] * T(2) / static_cast<T>(n);
    for (int64_t i = 0; i < n; ++i) pg[i] += g * (xv[i] - (*tgt)[i]);
  });
}

template <class T>
ValueT<T> operator+(const ValueT<T>& a, const ValueT<T>& b) { return add(a, b); }
template <class T>
ValueT<T> operator-(const ValueT<T>& a, const ValueT<T>& b) { return sub(a, b); }
template <class T>
ValueT<T> operator*(const ValueT<T>& a, const ValueT<T>& b) { return mul(a, b); }

}  // namespace ag

template <class T>
using ValueT = ag::ValueT<T>;
using Value = ag::ValueT<float>;
using ValueD = ag::ValueT<double>;

}  // namespace t2d
