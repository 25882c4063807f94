#include "memsum/autodiff/graph.hpp"

#include <cmath>
#include <memory>
#include <random>
#include <string>

#include "memsum/errors.hpp"

namespace memsum::ad {

namespace {

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + a.str() + " and " + b.str());
}

[[noreturn]] void shape_error(const char* op, const Shape& a, const std::string& detail) {
  throw ShapeError(std::string(op) + ": shape " + a.str() + " " + detail);
}

template <typename T>
bool is_excluded(T v) {
  return v == -std::numeric_limits<T>::infinity();
}

template <typename T>
T sigmoid_scalar(T x) {
  if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
  const T e = std::exp(x);
  return e / (T{1} + e);
}

template <typename T>
void add_into(Matrix<T>& dst, const Matrix<T>& src) {
  auto d = dst.values();
  auto s = src.values();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

}  // namespace

template <typename T>
Graph<T>::Graph(bool record_gradients, bool training, std::uint64_t dropout_seed)
    : record_(record_gradients), training_(training), dropout_seed_(dropout_seed) {
  nodes_.reserve(256);
}

template <typename T>
Var Graph<T>::push(const char* op, Matrix<T> value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = record_ && requires_grad;
  n.op = op;
#ifndef NDEBUG
  check_finite(n);
#endif
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename T>
void Graph<T>::check_finite(const Node& n) const {
  for (T v : n.value.values()) {
    if (!std::isfinite(static_cast<double>(v))) {
      throw std::runtime_error(std::string(n.op) + ": non-finite value in forward output");
    }
  }
}

template <typename T>
bool Graph<T>::any_grad(std::initializer_list<Var> inputs) const {
  if (!record_) return false;
  for (Var v : inputs) {
    if (nodes_[v.id].requires_grad) return true;
  }
  return false;
}

template <typename T>
Matrix<T>& Graph<T>::grad_buffer(Var v) {
  auto& n = nodes_[v.id];
  if (n.grad.shape() != n.value.shape()) n.grad = Matrix<T>(n.value.rows(), n.value.cols());
  return n.grad;
}

template <typename T>
T Graph<T>::item(Var v) const {
  const auto& m = value(v);
  if (m.size() != 1) shape_error("item", m.shape(), "is not a scalar");
  return m[0];
}

template <typename T>
Matrix<T> Graph<T>::grad(Var v) const {
  const auto& n = nodes_[v.id];
  if (n.grad.shape() == n.value.shape()) return n.grad;
  return Matrix<T>(n.value.rows(), n.value.cols());
}

template <typename T>
Var Graph<T>::constant(Matrix<T> value) {
  return push("constant", std::move(value), false);
}

template <typename T>
Var Graph<T>::parameter(Parameter<T>& p) {
  if (auto it = parameter_nodes_.find(&p); it != parameter_nodes_.end()) return it->second;
  Var out = push("parameter", p.value, p.trainable);
  if (nodes_[out.id].requires_grad) {
    Parameter<T>* param = &p;
    nodes_[out.id].backward = [this, out, param] {
      if (param->grad.shape() != param->value.shape()) {
        param->grad = Matrix<T>(param->value.rows(), param->value.cols());
      }
      add_into(param->grad, nodes_[out.id].grad);
    };
  }
  parameter_nodes_.emplace(&p, out);
  return out;
}

template <typename T>
Var Graph<T>::matmul(Var a, Var b) {
  const auto& A = value(a);
  const auto& B = value(b);
  if (A.cols() != B.rows()) shape_error("matmul", A.shape(), B.shape());
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  Matrix<T> out(m, n);
  kernels::gemm_nn(m, k, n, A.data(), B.data(), out.data());
  Var o = push("matmul", std::move(out), any_grad({a, b}));
  if (nodes_[o.id].requires_grad) {
    nodes_[o.id].backward = [this, a, b, o, m, k, n] {
      const auto& G = nodes_[o.id].grad;
      if (nodes_[a.id].requires_grad) {
        kernels::gemm_nt(m, n, k, G.data(), nodes_[b.id].value.data(), grad_buffer(a).data());
      }
      if (nodes_[b.id].requires_grad) {
        kernels::gemm_tn(k, m, n, nodes_[a.id].value.data(), G.data(), grad_buffer(b).data());
      }
    };
  }
  return o;
}

template <typename T>
Var Graph<T>::matmul_nt(Var a, Var b) {
  const auto& A = value(a);
  const auto& B = value(b);
  if (A.cols() != B.cols()) shape_error("matmul_nt", A.shape(), B.shape());
  const std::size_t m = A.rows(), k = A.cols(), n = B.rows();
  Matrix<T> out(m, n);
  kernels::gemm_nt(m, k, n, A.data(), B.data(), out.data());
  Var o = push("matmul_nt", std::move(out), any_grad({a, b}));
  if (nodes_[o.id].requires_grad) {
    nodes_[o.id].backward = [this, a, b, o, m, k, n] {
      const auto& G = nodes_[o.id].grad;  // m x n
      if (nodes_[a.id].requires_grad) {
        kernels::gemm_nn(m, n, k, G.data(), nodes_[b.id].value.data(), grad_buffer(a).data());
      }
      if (nodes_[b.id].requires_grad) {
        kernels::gemm_tn(n, m, k, G.data(), nodes_[a.id].value.data(), grad_buffer(b).data());
      }
    };
  }
  return o;
}

template <typename T>
Var Graph<T>::transpose(Var a) {
  const auto& A = value(a);
  Matrix<T> out(A.cols(), A.rows());
  for (std::size_t r = 0; r < A.rows(); ++r)
    for (std::size_t c = 0; c < A.cols(); ++c) out(c, r) = A(r, c);
  Var o = push("transpose", std::move(out), any_grad({a}));
  if (nodes_[o.id].requires_grad) {
    nodes_[o.id].backward = [this, a, o] {
      const auto& G = nodes_[o.id].grad;
      auto& ga = grad_buffer(a);
      for (std::size_t r = 0; r < ga.rows(); ++r)
        for (std::size_t c = 0; c < ga.cols(); ++c) ga(r, c) += G(c, r);
    };
  }
  return o;
}

template <typename T>
Var Graph<T>::add(Var a, Var b) {
  const auto& A = value(a);
  const auto& B = value(b);
  const bool same = A.shape() == B.shape();
  const bool bias = B.rows() == 1 && B.cols() == A.cols();
  if (!same && !bias) shape_error("add", A.shape(), B.shape());
  Matrix<T> out = A;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    auto brow = B.row(same ? r : 0);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += brow[c];
  }
  Var o = push("add", std::move(out), any_grad({a, b}));
  if (nodes_[o.id].requires_grad) {
    nodes_[o.id].backward = [this, a, b, o, same] {
      const auto& G = nodes_[o.id].grad;
      if (nodes_[a.id].requires_grad) add_into(grad_buffer(a), G);
      if (nodes_[b.id].requires_grad) {
        auto& gb = grad_buffer(b);
        if (same) {
          add_into(gb, G);
        } else {
          for (std::size_t r = 0; r < G.rows(); ++r) {
            auto row = G.row(r);
            for (std::size_t c = 0; c < row.size(); ++c) gb[c] += row[c];
          }
        }
      }
    };
  }
  return o;
}

template <typename T>
Var Graph<T>::sub(Var a, Var b) {
  const auto& A = value(a);
  const auto& B = value(b);
  if (A.shape() != B.shape()) shape_error("sub", A.shape(), B.shape());
  Matrix<T> out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= B[i];
  Var o = push("sub", std::move(out), any_grad({a, b}));
  if (nodes_[o.id].requires_grad) {
    nodes_[o.id].backward = [this, a, b, o] {
      const auto& G = nodes_[o.id].grad;
      if (nodes_[a.id].requires_grad) add_into(grad_buffer(a), G);
      if (nodes_[b.id].requires_grad) {
        auto& gb = grad_buffer(b);
        for (std::size_t i = 0; i < G.size(); ++i) gb[i] -= G[i];
      }
    };
  }
  return o;
}

template <typename T>
Var Graph<T>::mul(Var a, Var b) {
  const auto& A = value(a);
  const auto& B = value(b);
  if (A.shape() != B.shape()) shape_error("mul", A.shape(), B.shape());
  Matrix<T> out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
  Var o = push("mul", std::move(out), any_grad({a, b}));
  if (nodes_[o.id].requires_grad) {
    nodes_[o.id].backward = [this, a, b, o] {
      const auto& G = nodes_[o.id].grad;
      if (nodes_[a.id].requires_grad) {
        auto& ga = grad_buffer(a);
        const auto& Bv = nodes_[b.id].value;
        for (std::size_t i = 0; i < G.size(); ++i) ga[i] += G[i] * Bv[i];
      }
      if (nodes_[b.id].requires_grad) {
        auto& gb = grad_buffer(b);
        const auto& Av = nodes_[a.id].value;
        for (std::size_t i = 0; i < G.size(); ++i) gb[i] += G[i] * Av[i];
      }
    };
  }
  return o;
}

template <typename T>
Var Graph<T>::divide(Var a, Var b) {
  const auto& A = value(a);
  const auto& B = value(b);
  const bool scalar_b = B.size() == 1;
  if (!scalar_b && A.shape() != B.shape()) shape_error("divide", A.shape(), B.shape());
  Matrix<T> out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= B[scalar_b ? 0 : i];
  Var o = push("divide", std::move(out), any_grad({a, b}));
  if (nodes_[o.id].requires_grad) {
    nodes_[o.id].backward = [this, a, b, o, scalar_b] {
      const auto& G = nodes_[o.id].grad;
      const auto& Av = nodes_[a.id].value;
      const auto& Bv = nodes_[b.id].value;
      if (nodes_[a.id].requires_grad) {
        auto& ga = grad_buffer(a);
        for (std::size_t i = 0; i < G.size(); ++i) ga[i] += G[i] / Bv[scalar_b ? 0 : i];
      }
      if (nodes_[b.id].requires_grad) {
        auto& gb = grad_buffer(b);
        for (std::size_t i = 0; i < G.size(); ++i) {
          const T bv = Bv[scalar_b ? 0 : i];
          gb[scalar_b ? 0 : i] -= G[i] * Av[i] / (bv * bv);
        }
      }
    };
  }
  return o;
}

template <typename T>
Var Graph<T>::scale(Var a, T factor) {
  Matrix<T> out = value(a);
  for (auto& v : out.values()) v *= factor;
  Var o = push("scale", std::move(out), any_grad({a}));
  if (nodes_[o.id].requires_grad) {
    nodes_[o.id].backward = [this, a, o, factor] {
      const auto& G = nodes_[o.id].grad;
      auto& ga = grad_buffer(a);
      for (std::size_t i = 0; i < G.size(); ++i) ga[i] += G[i] * factor;
    };
  }
  return o;
}

template <typename T>
Var Graph<T>::add_scalar(Var a, T offset) {
  Matrix<T> out = value(a);
  for (auto& v : out.values()) v += offset;
  Var o = push("add_scalar", std::move(out), any_grad({a}));
  if (nodes_[o.id].requires_grad) {
    nodes_[o.id].backward = [this, a, o] { add_into(grad_buffer(a), nodes_[o.id].grad); };
  }
  return o;
}

template <typename T>
Var Graph<T>::elementwise(const char* op, Var a, T (*f)(T), T (*df)(T, T)) {
  Matrix<T> out = value(a);
  for (auto& v : out.values()) v = f(v);
  Var o = push(op, std::move(out), any_grad({a}));
  if (nodes_[o.id].requires_grad) {
    nodes_[o.id].backward = [this, a, o, df] {
      const auto& G = nodes_[o.id].grad;
      const auto& X = nodes_[a.id].value;
      const auto& Y = nodes_[o.id].value;
      auto& ga = grad_buffer(a);
      for (std::size_t i = 0; i < G.size(); ++i) ga[i] += G[i] * df(X[i], Y[i]);
    };
  }
  return o;
}

template <typename T>
Var Graph<T>::sigmoid(Var a) {
  return elementwise(
      "sigmoid", a, [](T x) { return sigmoid_scalar(x); },
      [](T, T y) { return y * (T{1} - y); });
}

template <typename T>
Var Graph<T>::tanh(Var a) {
  return elementwise(
      "tanh", a, [](T x) { return std::tanh(x); }, [](T, T y) { return T{1} - y * y; });
}

template <typename T>
Var Graph<T>::relu(Var a) {
  return elementwise(
      "relu", a, [](T x) { return x > T{0} ? x : T{0}; },
      [](T x, T) { return x > T{0} ? T{1} : T{0}; });
}

template <typename T>
Var Graph<T>::log(Var a) {
  for (T v : value(a).values()) {
    if (!(v > T{0})) throw std::domain_error("log: non-positive input");
  }
  return elementwise(
      "log", a, [](T x) { return std::log(x); }, [](T x, T) { return T{1} / x; });
}

template <typename T>
Var Graph<T>::log_sigmoid(Var a) {
  // log(sigmoid(x)) = -softplus(-x)
  return elementwise(
      "log_sigmoid", a,
      [](T x) { return x >= T{0} ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); },
      [](T x, T) { return T{1} - sigmoid_scalar(x); });
}

template <typename T>
Var Graph<T>::sum(Var a) {
  T total{0};
  for (T v : value(a).values()) total += v;
  Var o = push("sum", Matrix<T>(1, 1, total), any_grad({a}));
  if (nodes_[o.id].requires_grad) {
    nodes_[o.id].backward = [this, a, o] {
      const T g = nodes_[o.id].grad[0];
      for (auto& v : grad_buffer(a).values()) v += g;
    };
  }
  return o;
}

template <typename T>
Var Graph<T>::mean(Var a) {
  const auto n = static_cast<T>(value(a).size());
  if (value(a).empty()) shape_error("mean", value(a).shape(), "is empty");
  return scale(sum(a), T{1} / n);
}

template <typename T>
Var Graph<T>::mean_rows(Var a, const Mask& rows) {
  const auto& A = value(a);
  if (!rows.empty() && rows.size() != A.rows()) shape_error("mean_rows", A.shape(), "mask size mismatch");
  std::size_t count = 0;
  Matrix<T> out(1, A.cols());
  for (std::size_t r = 0; r < A.rows(); ++r) {
    if (!rows.empty() && !rows[r]) continue;
    ++count;
    auto row = A.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) out[c] += row[c];
  }
  if (count == 0) throw std::invalid_argument("mean_rows: all rows masked");
  const T inv = T{1} / static_cast<T>(count);
  for (auto& v : out.values()) v *= inv;
  Var o = push("mean_rows", std::move(out), any_grad({a}));
  if (nodes_[o.id].requires_grad) {
    nodes_[o.id].backward = [this, a, o, rows, inv] {
      const auto& G = nodes_[o.id].grad;
      auto& ga = grad_buffer(a);
      for (std::size_t r = 0; r < ga.rows(); ++r) {
        if (!rows.empty() && !rows[r]) continue;
        auto row = ga.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) row[c] += G[c] * inv;
      }
    };
  }
  return o;
}

template <typename T>
Var Graph<T>::softmax_rows(Var a, const Matrix<T>* additive_mask) {
  const auto& A = value(a);
  if (additive_mask && additive_mask->shape() != A.shape()) {
    shape_error("softmax_rows", A.shape(), additive_mask->shape());
  }
  Matrix<T> out(A.rows(), A.cols());
  for (std::size_t r = 0; r < A.rows(); ++r) {
    auto x = A.row(r);
    auto y = out.row(r);
    T mx = -std::numeric_limits<T>::infinity();
    bool any = false;
    for (std::size_t c = 0; c < x.size(); ++c) {
      const T m = additive_mask ? (*additive_mask)(r, c) : T{0};
      if (is_excluded(m)) continue;
      mx = std::max(mx, x[c] + m);
      any = true;
    }
    if (!any) throw std::invalid_argument("softmax_rows: every entry of a row is masked");
    T total{0};
    for (std::size_t c = 0; c < x.size(); ++c) {
      const T m = additive_mask ? (*additive_mask)(r, c) : T{0};
      if (is_excluded(m)) continue;
      y[c] = std::exp(x[c] + m - mx);
      total += y[c];
    }
    for (auto& v : y) v /= total;
  }
  Var o = push("softmax_rows", std::move(out), any_grad({a}));
  if (nodes_[o.id].requires_grad) {
    nodes_[o.id].backward = [this, a, o] {
      const auto& G = nodes_[o.id].grad;
      const auto& Y = nodes_[o.id].value;
      auto& ga = grad_buffer(a);
      for (std::size_t r = 0; r < Y.rows(); ++r) {
        auto y = Y.row(r);
        auto g = G.row(r);
        T dot{0};
        for (std::size_t c = 0; c < y.size(); ++c) dot += y[c] * g[c];
        auto gr = ga.row(r);
        for (std::size_t c = 0; c < y.size(); ++c) gr[c] += y[c] * (g[c] - dot);
      }
    };
  }
  return o;
}

template <typename T>
Var Graph<T>::sum_normalize(Var a, const Mask& include) {
  const auto& A = value(a);
  if (!include.empty() && include.size() != A.size()) {
    shape_error("sum_normalize", A.shape(), "mask size mismatch");
  }
  T total{0};
  for (std::size_t i = 0; i < A.size(); ++i) {
    if (include.empty() || include[i]) total += A[i];
  }
  if (!(total > T{0})) throw std::domain_error("sum_normalize: non-positive normalizer");
  Matrix<T> out(A.rows(), A.cols());
  for (std::size_t i = 0; i < A.size(); ++i) {
    if (include.empty() || include[i]) out[i] = A[i] / total;
  }
  Var o = push("sum_normalize", std::move(out), any_grad({a}));
  if (nodes_[o.id].requires_grad) {
    nodes_[o.id].backward = [this, a, o, include, total] {
      const auto& G = nodes_[o.id].grad;
      const auto& Y = nodes_[o.id].value;
      T dot{0};
      for (std::size_t i = 0; i < Y.size(); ++i) dot += Y[i] * G[i];
      auto& ga = grad_buffer(a);
      for (std::size_t i = 0; i < Y.size(); ++i) {
        if (include.empty() || include[i]) ga[i] += (G[i] - dot) / total;
      }
    };
  }
  return o;
}

template <typename T>
Var Graph<T>::layer_norm(Var a, Var gain, Var bias, T eps) {
  const auto& A = value(a);
  const auto& Gm = value(gain);
  const auto& Bt = value(bias);
  const std::size_t n = A.cols();
  if (Gm.shape() != Shape{1, n} || Bt.shape() != Shape{1, n}) {
    shape_error("layer_norm", A.shape(), Gm.shape());
  }
  auto normalized = std::make_shared<Matrix<T>>(A.rows(), n);
  auto inv_std = std::make_shared<std::vector<T>>(A.rows());
  Matrix<T> out(A.rows(), n);
  for (std::size_t r = 0; r < A.rows(); ++r) {
    auto x = A.row(r);
    T mu{0};
    for (T v : x) mu += v;
    mu /= static_cast<T>(n);
    T var{0};
    for (T v : x) var += (v - mu) * (v - mu);
    var /= static_cast<T>(n);
    const T is = T{1} / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t c = 0; c < n; ++c) {
      const T xh = (x[c] - mu) * is;
      (*normalized)(r, c) = xh;
      out(r, c) = xh * Gm[c] + Bt[c];
    }
  }
  Var o = push("layer_norm", std::move(out), any_grad({a, gain, bias}));
  if (nodes_[o.id].requires_grad) {
    nodes_[o.id].backward = [this, a, gain, bias, o, normalized, inv_std, n] {
      const auto& G = nodes_[o.id].grad;
      const auto& Gm = nodes_[gain.id].value;
      const auto& Xh = *normalized;
      if (nodes_[gain.id].requires_grad) {
        auto& gg = grad_buffer(gain);
        for (std::size_t r = 0; r < G.rows(); ++r)
          for (std::size_t c = 0; c < n; ++c) gg[c] += G(r, c) * Xh(r, c);
      }
      if (nodes_[bias.id].requires_grad) {
        auto& gb = grad_buffer(bias);
        for (std::size_t r = 0; r < G.rows(); ++r)
          for (std::size_t c = 0; c < n; ++c) gb[c] += G(r, c);
      }
      if (nodes_[a.id].requires_grad) {
        auto& ga = grad_buffer(a);
        const T inv_n = T{1} / static_cast<T>(n);
        for (std::size_t r = 0; r < G.rows(); ++r) {
          T sum_d{0}, sum_dx{0};
          for (std::size_t c = 0; c < n; ++c) {
            const T d = G(r, c) * Gm[c];
            sum_d += d;
            sum_dx += d * Xh(r, c);
          }
          const T is = (*inv_std)[r];
          for (std::size_t c = 0; c < n; ++c) {
            const T d = G(r, c) * Gm[c];
            ga(r, c) += is * (d - inv_n * sum_d - Xh(r, c) * inv_n * sum_dx);
          }
        }
      }
    };
  }
  return o;
}

template <typename T>
Var Graph<T>::concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const std::size_t rows = value(parts[0]).rows();
  std::size_t cols = 0;
  bool needs = false;
  for (Var p : parts) {
    if (value(p).rows() != rows) shape_error("concat_cols", value(parts[0]).shape(), value(p).shape());
    cols += value(p).cols();
    needs = needs || (record_ && nodes_[p.id].requires_grad);
  }
  Matrix<T> out(rows, cols);
  std::size_t offset = 0;
  for (Var p : parts) {
    const auto& P = value(p);
    for (std::size_t r = 0; r < rows; ++r)
      std::copy(P.row(r).begin(), P.row(r).end(), out.row(r).begin() + offset);
    offset += P.cols();
  }
  Var o = push("concat_cols", std::move(out), needs);
  if (nodes_[o.id].requires_grad) {
    std::vector<Var> inputs(parts.begin(), parts.end());
    nodes_[o.id].backward = [this, inputs, o, rows] {
      const auto& G = nodes_[o.id].grad;
      std::size_t off = 0;
      for (Var p : inputs) {
        const std::size_t w = nodes_[p.id].value.cols();
        if (nodes_[p.id].requires_grad) {
          auto& gp = grad_buffer(p);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < w; ++c) gp(r, c) += G(r, off + c);
        }
        off += w;
      }
    };
  }
  return o;
}

template <typename T>
Var Graph<T>::concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  const std::size_t cols = value(parts[0]).cols();
  std::size_t rows = 0;
  bool needs = false;
  for (Var p : parts) {
    if (value(p).cols() != cols) shape_error("concat_rows", value(parts[0]).shape(), value(p).shape());
    rows += value(p).rows();
    needs = needs || (record_ && nodes_[p.id].requires_grad);
  }
  std::vector<T> data;
  data.reserve(rows * cols);
  for (Var p : parts) {
    auto v = value(p).values();
    data.insert(data.end(), v.begin(), v.end());
  }
  Var o = push("concat_rows", Matrix<T>(rows, cols, std::move(data)), needs);
  if (nodes_[o.id].requires_grad) {
    std::vector<Var> inputs(parts.begin(), parts.end());
    nodes_[o.id].backward = [this, inputs, o] {
      const auto& G = nodes_[o.id].grad;
      std::size_t off = 0;
      for (Var p : inputs) {
        const std::size_t n = nodes_[p.id].value.size();
        if (nodes_[p.id].requires_grad) {
          auto& gp = grad_buffer(p);
          for (std::size_t i = 0; i < n; ++i) gp[i] += G[off + i];
        }
        off += n;
      }
    };
  }
  return o;
}

template <typename T>
Var Graph<T>::slice_cols(Var a, std::size_t start, std::size_t count) {
  const auto& A = value(a);
  if (start + count > A.cols()) shape_error("slice_cols", A.shape(), "column range out of bounds");
  Matrix<T> out(A.rows(), count);
  for (std::size_t r = 0; r < A.rows(); ++r)
    for (std::size_t c = 0; c < count; ++c) out(r, c) = A(r, start + c);
  Var o = push("slice_cols", std::move(out), any_grad({a}));
  if (nodes_[o.id].requires_grad) {
    nodes_[o.id].backward = [this, a, o, start, count] {
      const auto& G = nodes_[o.id].grad;
      auto& ga = grad_buffer(a);
      for (std::size_t r = 0; r < G.rows(); ++r)
        for (std::size_t c = 0; c < count; ++c) ga(r, start + c) += G(r, c);
    };
  }
  return o;
}

template <typename T>
Var Graph<T>::slice_rows(Var a, std::size_t start, std::size_t count) {
  const auto& A = value(a);
  if (start + count > A.rows()) shape_error("slice_rows", A.shape(), "row range out of bounds");
  const auto first = A.values().begin() + static_cast<std::ptrdiff_t>(start * A.cols());
  std::vector<T> data(first, first + static_cast<std::ptrdiff_t>(count * A.cols()));
  Var o = push("slice_rows", Matrix<T>(count, A.cols(), std::move(data)), any_grad({a}));
  if (nodes_[o.id].requires_grad) {
    nodes_[o.id].backward = [this, a, o, start] {
      const auto& G = nodes_[o.id].grad;
      auto& ga = grad_buffer(a);
      const std::size_t off = start * ga.cols();
      for (std::size_t i = 0; i < G.size(); ++i) ga[off + i] += G[i];
    };
  }
  return o;
}

template <typename T>
Var Graph<T>::gather_rows(Var a, std::span<const std::size_t> rows) {
  const auto& A = value(a);
  Matrix<T> out(rows.size(), A.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= A.rows()) shape_error("gather_rows", A.shape(), "row index out of bounds");
    std::copy(A.row(rows[i]).begin(), A.row(rows[i]).end(), out.row(i).begin());
  }
  Var o = push("gather_rows", std::move(out), any_grad({a}));
  if (nodes_[o.id].requires_grad) {
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    nodes_[o.id].backward = [this, a, o, idx] {
      const auto& G = nodes_[o.id].grad;
      auto& ga = grad_buffer(a);
      for (std::size_t i = 0; i < idx.size(); ++i) {
        auto src = G.row(i);
        auto dst = ga.row(idx[i]);
        for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
      }
    };
  }
  return o;
}

template <typename T>
Var Graph<T>::element(Var a, std::size_t r, std::size_t c) {
  const auto& A = value(a);
  if (r >= A.rows() || c >= A.cols()) shape_error("element", A.shape(), "index out of bounds");
  Var o = push("element", Matrix<T>(1, 1, A(r, c)), any_grad({a}));
  if (nodes_[o.id].requires_grad) {
    nodes_[o.id].backward = [this, a, o, r, c] { grad_buffer(a)(r, c) += nodes_[o.id].grad[0]; };
  }
  return o;
}

template <typename T>
Var Graph<T>::head_diagonal(Var a, std::size_t heads) {
  const auto& A = value(a);
  if (heads == 0 || A.rows() != heads || A.cols() % heads != 0) {
    shape_error("head_diagonal", A.shape(), "does not split into " + std::to_string(heads) + " heads");
  }
  const std::size_t width = A.cols() / heads;
  Matrix<T> out(1, A.cols());
  for (std::size_t k = 0; k < heads; ++k)
    for (std::size_t j = 0; j < width; ++j) out[k * width + j] = A(k, k * width + j);
  Var o = push("head_diagonal", std::move(out), any_grad({a}));
  if (nodes_[o.id].requires_grad) {
    nodes_[o.id].backward = [this, a, o, heads, width] {
      const auto& G = nodes_[o.id].grad;
      auto& ga = grad_buffer(a);
      for (std::size_t k = 0; k < heads; ++k)
        for (std::size_t j = 0; j < width; ++j) ga(k, k * width + j) += G[k * width + j];
    };
  }
  return o;
}

template <typename T>
Var Graph<T>::embedding_lookup(Var table, std::span<const std::size_t> indices) {
  return gather_rows(table, indices);
}

template <typename T>
Var Graph<T>::embedding_lookup(Parameter<T>& table, std::span<const std::size_t> indices) {
  const auto& A = table.value;
  Matrix<T> out(indices.size(), A.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= A.rows()) shape_error("embedding_lookup", A.shape(), "row index out of bounds");
    std::copy(A.row(indices[i]).begin(), A.row(indices[i]).end(), out.row(i).begin());
  }
  Var o = push("embedding_lookup", std::move(out), table.trainable);
  if (nodes_[o.id].requires_grad) {
    Parameter<T>* param = &table;
    std::vector<std::size_t> idx(indices.begin(), indices.end());
    nodes_[o.id].backward = [this, o, param, idx] {
      if (param->grad.shape() != param->value.shape()) {
        param->grad = Matrix<T>(param->value.rows(), param->value.cols());
      }
      const auto& G = nodes_[o.id].grad;
      for (std::size_t i = 0; i < idx.size(); ++i) {
        auto src = G.row(i);
        auto dst = param->grad.row(idx[i]);
        for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
      }
    };
  }
  return o;
}

template <typename T>
Var Graph<T>::dropout(Var a, double p) {
  if (!training_ || p <= 0.0) return a;
  if (p >= 1.0) throw std::invalid_argument("dropout: rate must be below 1");
  const auto& A = value(a);
  std::mt19937_64 rng(fnv1a(std::to_string(dropout_calls_++), dropout_seed_));
  std::bernoulli_distribution keep(1.0 - p);
  const T scale_kept = static_cast<T>(1.0 / (1.0 - p));
  auto mask = std::make_shared<std::vector<T>>(A.size());
  Matrix<T> out = A;
  for (std::size_t i = 0; i < out.size(); ++i) {
    (*mask)[i] = keep(rng) ? scale_kept : T{0};
    out[i] *= (*mask)[i];
  }
  Var o = push("dropout", std::move(out), any_grad({a}));
  if (nodes_[o.id].requires_grad) {
    nodes_[o.id].backward = [this, a, o, mask] {
      const auto& G = nodes_[o.id].grad;
      auto& ga = grad_buffer(a);
      for (std::size_t i = 0; i < G.size(); ++i) ga[i] += G[i] * (*mask)[i];
    };
  }
  return o;
}

template <typename T>
Var Graph<T>::lstm_cell(Var x, Var state, Var w, Var u, Var b, const Mask& row_mask) {
  const auto& X = value(x);
  const auto& S = value(state);
  const auto& W = value(w);
  const auto& U = value(u);
  const auto& Bv = value(b);
  const std::size_t batch = X.rows(), in = X.cols(), hid = S.cols() / 2;
  if (S.rows() != batch || S.cols() != 2 * hid) shape_error("lstm_cell", X.shape(), S.shape());
  if (W.shape() != Shape{in, 4 * hid}) shape_error("lstm_cell", X.shape(), W.shape());
  if (U.shape() != Shape{hid, 4 * hid}) shape_error("lstm_cell", S.shape(), U.shape());
  if (Bv.shape() != Shape{1, 4 * hid}) shape_error("lstm_cell", U.shape(), Bv.shape());
  if (!row_mask.empty() && row_mask.size() != batch) shape_error("lstm_cell", X.shape(), "row mask size mismatch");

  // previous hidden state as a contiguous B x H block for the recurrent product
  auto h_prev = std::make_shared<Matrix<T>>(batch, hid);
  for (std::size_t r = 0; r < batch; ++r)
    std::copy(S.row(r).begin(), S.row(r).begin() + static_cast<std::ptrdiff_t>(hid), h_prev->row(r).begin());
  // activated gates i, f, g, o per row, and tanh of the new cell state
  auto gates = std::make_shared<Matrix<T>>(batch, 4 * hid);
  auto tanh_c = std::make_shared<Matrix<T>>(batch, hid);
  kernels::gemm_nn(batch, in, 4 * hid, X.data(), W.data(), gates->data());
  kernels::gemm_nn(batch, hid, 4 * hid, h_prev->data(), U.data(), gates->data());
  Matrix<T> out(batch, 2 * hid);
  for (std::size_t r = 0; r < batch; ++r) {
    auto z = gates->row(r);
    const bool live = row_mask.empty() || row_mask[r];
    for (std::size_t j = 0; j < hid; ++j) {
      z[j] = sigmoid_scalar(z[j] + Bv[j]);
      z[hid + j] = sigmoid_scalar(z[hid + j] + Bv[hid + j]);
      z[2 * hid + j] = std::tanh(z[2 * hid + j] + Bv[2 * hid + j]);
      z[3 * hid + j] = sigmoid_scalar(z[3 * hid + j] + Bv[3 * hid + j]);
      if (live) {
        const T cn = z[hid + j] * S(r, hid + j) + z[j] * z[2 * hid + j];
        const T tc = std::tanh(cn);
        (*tanh_c)(r, j) = tc;
        out(r, j) = z[3 * hid + j] * tc;
        out(r, hid + j) = cn;
      } else {
        out(r, j) = S(r, j);
        out(r, hid + j) = S(r, hid + j);
      }
    }
  }
  Var o = push("lstm_cell", std::move(out), any_grad({x, state, w, u, b}));
  if (nodes_[o.id].requires_grad) {
    nodes_[o.id].backward = [this, x, state, w, u, b, o, row_mask, h_prev, gates, tanh_c, batch, in, hid] {
      const auto& G = nodes_[o.id].grad;
      const auto& Z = *gates;
      const auto& Sprev = nodes_[state.id].value;
      Matrix<T> dz(batch, 4 * hid);
      Matrix<T> dstate(batch, 2 * hid);
      for (std::size_t r = 0; r < batch; ++r) {
        const bool live = row_mask.empty() || row_mask[r];
        for (std::size_t j = 0; j < hid; ++j) {
          const T dh = G(r, j);
          const T dc_out = G(r, hid + j);
          if (!live) {
            dstate(r, j) += dh;
            dstate(r, hid + j) += dc_out;
            continue;
          }
          const T ig = Z(r, j), fg = Z(r, hid + j), gg = Z(r, 2 * hid + j), og = Z(r, 3 * hid + j);
          const T tc = (*tanh_c)(r, j);
          const T dc = dc_out + dh * og * (T{1} - tc * tc);
          dz(r, j) = dc * gg * ig * (T{1} - ig);
          dz(r, hid + j) = dc * Sprev(r, hid + j) * fg * (T{1} - fg);
          dz(r, 2 * hid + j) = dc * ig * (T{1} - gg * gg);
          dz(r, 3 * hid + j) = dh * tc * og * (T{1} - og);
          dstate(r, hid + j) += dc * fg;
        }
      }
      if (nodes_[x.id].requires_grad) {
        kernels::gemm_nt(batch, 4 * hid, in, dz.data(), nodes_[w.id].value.data(), grad_buffer(x).data());
      }
      if (nodes_[state.id].requires_grad) {
        Matrix<T> dh_prev(batch, hid);
        kernels::gemm_nt(batch, 4 * hid, hid, dz.data(), nodes_[u.id].value.data(), dh_prev.data());
        auto& gs = grad_buffer(state);
        for (std::size_t r = 0; r < batch; ++r) {
          for (std::size_t j = 0; j < hid; ++j) {
            gs(r, j) += dstate(r, j) + dh_prev(r, j);
            gs(r, hid + j) += dstate(r, hid + j);
          }
        }
      }
      if (nodes_[w.id].requires_grad) {
        kernels::gemm_tn(in, batch, 4 * hid, nodes_[x.id].value.data(), dz.data(), grad_buffer(w).data());
      }
      if (nodes_[u.id].requires_grad) {
        kernels::gemm_tn(hid, batch, 4 * hid, h_prev->data(), dz.data(), grad_buffer(u).data());
      }
      if (nodes_[b.id].requires_grad) {
        auto& gb = grad_buffer(b);
        for (std::size_t r = 0; r < batch; ++r)
          for (std::size_t j = 0; j < 4 * hid; ++j) gb[j] += dz(r, j);
      }
    };
  }
  return o;
}

template <typename T>
void Graph<T>::backward(Var root) {
  if (!root.valid() || root.id >= nodes_.size()) throw std::invalid_argument("backward: invalid root");
  if (value(root).size() != 1) {
    throw std::invalid_argument("backward: root must be a scalar, got " + value(root).shape().str());
  }
  for (auto& n : nodes_) n.grad = Matrix<T>();
  if (!nodes_[root.id].requires_grad) return;
  grad_buffer(root)[0] = T{1};
  for (std::size_t i = root.id + 1; i-- > 0;) {
    auto& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
    n.backward();
  }
}

template class Graph<float>;
template class Graph<double>;

}  // namespace memsum::ad
