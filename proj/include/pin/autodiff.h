#ifndef PIN_AUTODIFF_H_
#define PIN_AUTODIFF_H_

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <random>
#include <span>
#include <unordered_map>
#include <vector>

#include "pin/params.h"
#include "pin/tensor.h"

namespace pin::ad {

template <typename T>
class Tape;

// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape
// lives.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Tensor<T>& value() const { return tape_->value(id_); }
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  // Gradient after backward(); a zero tensor if the node was unreachable.
  Tensor<T> grad() const { return tape_->grad(id_); }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Linear record of one forward trace. Nodes are appended in evaluation order,
// so every node's inputs precede it and backward is a single reverse sweep.
template <typename T>
class Tape {
 public:
  // Receives the output gradient; adds contributions into the input grads.
  using BackwardFn = std::function<void(const Tensor<T>& out_grad)>;

  // With tracking off no backward rules are kept: a cheaper tape for
  // inference.
  explicit Tape(bool track_gradients = true) : track_(track_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value);
  Var<T> variable(Tensor<T> value);
  // One node per parameter per tape; repeated calls return the same node.
  Var<T> param(Parameter<T>& p);

  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn);
  Var<T> record(Tensor<T> value, std::span<const Var<T>> inputs, BackwardFn fn);

  // Accumulates d(loss)/d(node) for every reachable node and adds the totals
  // into the grad of each parameter used on this tape.
  void backward(Var<T> loss);

  const Tensor<T>& value(std::size_t id) const { return nodes_[id].value; }
  Tensor<T> grad(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  // Gradient buffer of an input during backward, or nullptr when that input
  // does not need a gradient.
  Tensor<T>* grad_sink(std::size_t id);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    BackwardFn backward;
    Parameter<T>* param = nullptr;
  };

  void check_owned(const Var<T>& v) const;

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter<T>*, std::size_t> param_nodes_;
  bool track_ = true;
  bool consumed_ = false;
};

// Matrix product. A rank-1 left operand is a single row and yields a rank-1
// result.
template <typename T>
Var<T> matmul(Var<T> a, Var<T> b);

// a [m x k] times the transpose of b [n x k], without materializing it.
template <typename T>
Var<T> matmul_nt(Var<T> a, Var<T> b);

template <typename T>
Var<T> transpose(Var<T> x);

// Elementwise binary ops. Shapes must match, or one side must broadcast: a
// single element, or a single row repeated over the rows of the other side.
template <typename T>
Var<T> add(Var<T> x, Var<T> y);
template <typename T>
Var<T> sub(Var<T> x, Var<T> y);
template <typename T>
Var<T> mul(Var<T> x, Var<T> y);

template <typename T>
Var<T> sigmoid(Var<T> x);
template <typename T>
Var<T> tanh(Var<T> x);
template <typename T>
Var<T> scale(Var<T> x, T factor);
template <typename T>
Var<T> shift(Var<T> x, T offset);
// 1 - x.
template <typename T>
Var<T> complement(Var<T> x);

// out[r, c] = x[r, c] * s[r] for s of shape [R] or [R x 1].
template <typename T>
Var<T> mul_rows(Var<T> x, Var<T> s);

// Normalized exponential along axis (rank 1: axis 0; rank 2: 0 or 1).
// Computed with max subtraction.
template <typename T>
Var<T> softmax(Var<T> x, int axis = -1);

template <typename T>
Var<T> concat(std::span<const Var<T>> parts, int axis);
template <typename T>
Var<T> concat(std::initializer_list<Var<T>> parts, int axis) {
  std::vector<Var<T>> v(parts);
  return concat(std::span<const Var<T>>(v), axis);
}

// Half-open range [begin, end) along axis; keeps the rank.
template <typename T>
Var<T> slice(Var<T> x, int axis, std::size_t begin, std::size_t end);
// Row i of a matrix as a 1 x cols matrix.
template <typename T>
Var<T> row(Var<T> x, std::size_t i);

// Same data under a new shape with equal element count.
template <typename T>
Var<T> reshape(Var<T> x, Shape shape);

// Sum of all elements as a 1-element tensor.
template <typename T>
Var<T> sum(Var<T> x);

// Row gather: out[i] = table[ids[i]]; result is len x d.
template <typename T>
Var<T> embedding_lookup(Var<T> table, std::span<const int> ids);

// Maps a distribution over positions onto the vocabulary:
// out[i] = sum over positions k with word[k] == i of weights[k].
// weights is [L] or [R x L]; the result is [V] or [R x V].
template <typename T>
Var<T> scatter_add_by_word(Var<T> weights, std::span<const int> word_of_position,
                           std::size_t vocab_size);

inline constexpr double kLogFloor = 1e-12;

// -log(p[target] + 1e-12) for p of shape [n] or [1 x n].
template <typename T>
Var<T> cross_entropy(Var<T> p, int target);

// Sum over rows of -log(p[r, targets[r]] + 1e-12); rows with a negative target
// are skipped.
template <typename T>
Var<T> cross_entropy_rows(Var<T> p, std::span<const int> targets);

// Inverted dropout: zeroes each element with probability rate and scales the
// survivors by 1/(1-rate). Identity when !training or rate == 0.
template <typename T>
Var<T> dropout(Var<T> x, double rate, std::mt19937_64& rng, bool training);

// One GRU step as a single node. projected holds x W_input + bias for a whole
// sequence; rows [first_row, first_row + R) feed the R rows of h. Gates are
// ordered (update, reset); h' = h + z * (tanh(p_c + (r * h) W_candidate) - h).
template <typename T>
Var<T> gru_step(Var<T> projected, std::size_t first_row, Var<T> h, Var<T> w_gates,
                Var<T> w_candidate);

template <typename T>
Var<T> operator+(Var<T> x, Var<T> y) { return add(x, y); }
template <typename T>
Var<T> operator-(Var<T> x, Var<T> y) { return sub(x, y); }
template <typename T>
Var<T> operator*(Var<T> x, Var<T> y) { return mul(x, y); }

namespace testing {
// Perturbs the backward rule of the named primitive ("sigmoid", "gru",
// "matmul", "softmax", ...) by a factor of 1.01. Pass nullptr to clear.
// Used to prove that gradient checking catches a broken rule.
void set_backward_fault(const char* op_name);
}  // namespace testing

}  // namespace pin::ad

#endif  // PIN_AUTODIFF_H_
