#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <unordered_map>
#include <vector>

#include "memsum/autodiff/matrix.hpp"
#include "memsum/autodiff/parameters.hpp"

namespace memsum::ad {

/// Handle to a node of a Graph. Only meaningful for the graph that made it.
struct Var {
  static constexpr std::uint32_t kInvalid = std::numeric_limits<std::uint32_t>::max();
  std::uint32_t id = kInvalid;
  bool valid() const noexcept { return id != kInvalid; }
};

/// Row mask: one flag per row (or per element for sum_normalize); empty means all valid.
using Mask = std::vector<std::uint8_t>;

/// Reverse-mode tape. Nodes are appended in creation order, which is a
/// topological order, so backward() walks the tape once from the root down.
///
/// A graph built with record_gradients=false keeps only forward values and is
/// what inference uses. Dropout is active only when `training` is set; its
/// masks come from a counter-based stream seeded at construction.
template <typename T>
class Graph {
 public:
  explicit Graph(bool record_gradients = true, bool training = false,
                 std::uint64_t dropout_seed = 0);
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool training() const noexcept { return training_; }
  bool recording() const noexcept { return record_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  Var constant(Matrix<T> value);
  Var scalar(T v) { return constant(Matrix<T>(1, 1, v)); }
  Var zeros(std::size_t rows, std::size_t cols) { return constant(Matrix<T>(rows, cols)); }
  /// Leaf bound to a stored parameter. Non-trainable parameters act as constants.
  /// Repeated calls for the same parameter return the same node.
  Var parameter(Parameter<T>& p);

  const Matrix<T>& value(Var v) const { return nodes_[v.id].value; }
  T item(Var v) const;
  /// Gradient of the last backward() root w.r.t. v (zeros if unreached).
  Matrix<T> grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  // Linear algebra
  Var matmul(Var a, Var b);
  Var matmul_nt(Var a, Var b);  // a * b^T
  Var transpose(Var a);
  Var add(Var a, Var b);  // same shape, or b is 1 x cols and broadcasts over rows
  Var sub(Var a, Var b);  // same shape
  Var mul(Var a, Var b);  // elementwise, same shape
  Var divide(Var a, Var b);  // elementwise, or b is 1 x 1
  Var scale(Var a, T factor);
  Var add_scalar(Var a, T offset);
  Var negate(Var a) { return scale(a, T{-1}); }
  Var linear(Var x, Var weight, Var bias) { return add(matmul(x, weight), bias); }

  // Elementwise nonlinearities
  Var sigmoid(Var a);
  Var tanh(Var a);
  Var relu(Var a);
  Var log(Var a);
  Var log_sigmoid(Var a);

  // Reductions and normalizations
  Var sum(Var a);                          // 1 x 1
  Var mean(Var a);                         // 1 x 1
  Var mean_rows(Var a, const Mask& rows);  // 1 x cols, masked mean over rows
  /// Softmax along each row. `additive_mask` (same shape, or empty) is added to
  /// the logits; entries at -inf get probability exactly zero.
  Var softmax_rows(Var a, const Matrix<T>* additive_mask = nullptr);
  /// x_i / sum_{j in mask} x_j over all elements; masked-out elements become 0.
  Var sum_normalize(Var a, const Mask& include = {});
  Var layer_norm(Var a, Var gain, Var bias, T eps = T(1e-5));

  // Structural
  Var concat_cols(std::span<const Var> parts);
  Var concat_rows(std::span<const Var> parts);
  Var slice_cols(Var a, std::size_t start, std::size_t count);
  Var slice_rows(Var a, std::size_t start, std::size_t count);
  Var gather_rows(Var a, std::span<const std::size_t> rows);
  Var element(Var a, std::size_t r, std::size_t c);  // 1 x 1
  /// Input heads x d; output 1 x d where segment k comes from row k.
  Var head_diagonal(Var a, std::size_t heads);

  Var embedding_lookup(Var table, std::span<const std::size_t> indices);
  /// Row lookup straight from a stored table; gradients (if trainable) are
  /// scattered into the parameter without materializing the whole table.
  Var embedding_lookup(Parameter<T>& table, std::span<const std::size_t> indices);
  Var dropout(Var a, double p);

  /// Fused LSTM step. Gate order input, forget, candidate, output.
  /// x: B x in, state: B x 2H packed [h | c], w: in x 4H, u: H x 4H, b: 1 x 4H.
  /// Rows with row_mask == 0 carry the state through unchanged.
  /// Output is the next packed state, B x 2H.
  Var lstm_cell(Var x, Var state, Var w, Var u, Var b, const Mask& row_mask = {});

  /// Requires a 1 x 1 root. Populates node gradients and accumulates into the
  /// grad of every reachable trainable parameter.
  void backward(Var root);

 private:
  struct Node {
    Matrix<T> value;
    Matrix<T> grad;
    std::function<void()> backward;
    bool requires_grad = false;
    const char* op = "";
  };

  Var push(const char* op, Matrix<T> value, bool requires_grad);
  bool any_grad(std::initializer_list<Var> inputs) const;
  Matrix<T>& grad_buffer(Var v);
  Var elementwise(const char* op, Var a, T (*f)(T), T (*df)(T, T));
  void check_finite(const Node& n) const;

  bool record_;
  bool training_;
  std::uint64_t dropout_seed_;
  std::uint64_t dropout_calls_ = 0;
  std::vector<Node> nodes_;
  std::unordered_map<const void*, Var> parameter_nodes_;
};

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace memsum::ad
