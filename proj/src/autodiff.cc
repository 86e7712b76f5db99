#include "pin/autodiff.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <memory>
#include <string>

namespace pin {

std::string shape_to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

namespace ad {

namespace {

std::atomic<const char*> g_fault_op{nullptr};

// 1.01 when the named op's backward rule is under fault injection.
template <typename T>
T fault_factor(const char* op) {
  const char* f = g_fault_op.load(std::memory_order_relaxed);
  if (f != nullptr && std::strcmp(f, op) == 0) return T(1.01);
  return T(1);
}

// C[m x n] += A[m x k] * B[k x n], all row-major.
template <typename T>
void gemm_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    const T* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[k x n] += A[m x k]^T * B[m x n].
template <typename T>
void gemm_tn_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    const T* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      T* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m x k] += A[m x n] * B[k x n]^T.
template <typename T>
void gemm_nt_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * n;
    T* crow = c + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T* brow = b + p * n;
      // Eight independent partial sums so the loop vectorizes.
      T acc[8] = {};
      std::size_t j = 0;
      for (; j + 8 <= n; j += 8)
        for (std::size_t q = 0; q < 8; ++q) acc[q] += arow[j + q] * brow[j + q];
      T total = T(0);
      for (; j < n; ++j) total += arow[j] * brow[j];
      for (std::size_t q = 0; q < 8; ++q) total += acc[q];
      crow[p] += total;
    }
  }
}

template <typename T>
std::vector<T> transposed(const T* x, std::size_t rows, std::size_t cols) {
  std::vector<T> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = x[r * cols + c];
  return out;
}

template <typename T>
T stable_sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

// Output shape and which operand (if any) is repeated.
struct BroadcastPlan {
  Shape out;
  std::size_t n = 0;
};

template <typename T>
BroadcastPlan plan_broadcast(const Tensor<T>& x, const Tensor<T>& y, const char* op) {
  const std::size_t xs = x.size(), ys = y.size();
  auto fail = [&]() {
    throw DimensionError(std::string(op) + ": shapes " + shape_to_string(x.shape()) +
                         " and " + shape_to_string(y.shape()) + " are not broadcastable");
  };
  if (xs == ys) {
    if (x.cols() != y.cols()) fail();
    return {x.shape(), xs};
  }
  if (ys == 1) return {x.shape(), xs};
  if (xs == 1) return {y.shape(), ys};
  if (ys < xs) {
    if (y.rows() != 1 || y.cols() != x.cols()) fail();
    return {x.shape(), xs};
  }
  if (x.rows() != 1 || x.cols() != y.cols()) fail();
  return {y.shape(), ys};
}

// Adds g (size n) into sink (size m, m divides n) by folding repeats.
template <typename T>
void fold_into(Tensor<T>& sink, const Tensor<T>& g, T factor = T(1)) {
  const std::size_t m = sink.size(), n = g.size();
  T* s = sink.data();
  const T* gd = g.data();
  if (m == n) {
    for (std::size_t i = 0; i < n; ++i) s[i] += factor * gd[i];
    return;
  }
  for (std::size_t off = 0; off < n; off += m)
    for (std::size_t j = 0; j < m; ++j) s[j] += factor * gd[off + j];
}

template <typename T>
void check_vector_index(int idx, std::size_t n, const char* what) {
  if (idx < 0 || static_cast<std::size_t>(idx) >= n) {
    throw IndexError(std::string(what) + " " + std::to_string(idx) +
                     " out of range [0, " + std::to_string(n) + ")");
  }
}

}  // namespace

// ---- Tape ------------------------------------------------------------------

template <typename T>
void Tape<T>::check_owned(const Var<T>& v) const {
  if (v.tape() != this || v.id() >= nodes_.size()) {
    throw ContractError("variable does not belong to this tape");
  }
}

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  nodes_.push_back(Node{std::move(value), {}, false, nullptr, nullptr});
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::variable(Tensor<T> value) {
  nodes_.push_back(Node{std::move(value), {}, track_, nullptr, nullptr});
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::param(Parameter<T>& p) {
  auto it = param_nodes_.find(&p);
  if (it != param_nodes_.end()) return Var<T>(this, it->second);
  nodes_.push_back(Node{p.value, {}, track_, nullptr, &p});
  param_nodes_.emplace(&p, nodes_.size() - 1);
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, std::initializer_list<Var<T>> inputs,
                       BackwardFn fn) {
  return record(std::move(value), std::span<const Var<T>>(inputs.begin(), inputs.size()),
                std::move(fn));
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, std::span<const Var<T>> inputs, BackwardFn fn) {
  bool needs = false;
  for (const auto& in : inputs) {
    check_owned(in);
    needs = needs || nodes_[in.id()].requires_grad;
  }
  for (T v : value.values()) {
    if (!std::isfinite(v)) throw NumericError("non-finite value produced on tape");
  }
  nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(fn) : nullptr, nullptr});
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Tensor<T>* Tape<T>::grad_sink(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return nullptr;
  if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
  return &n.grad;
}

template <typename T>
Tensor<T> Tape<T>::grad(std::size_t id) const {
  const Node& n = nodes_[id];
  if (n.grad.empty()) return Tensor<T>(n.value.shape());
  return n.grad;
}

template <typename T>
void Tape<T>::backward(Var<T> loss) {
  check_owned(loss);
  if (loss.value().size() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " +
                        shape_to_string(loss.shape()));
  }
  if (consumed_) throw ContractError("backward already ran on this tape");
  consumed_ = true;
  Tensor<T>* seed = grad_sink(loss.id());
  if (seed == nullptr) return;
  (*seed)[0] = T(1);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.empty()) continue;
    if (n.backward) n.backward(n.grad);
    if (n.param != nullptr) {
      T* dst = n.param->grad.data();
      const T* src = n.grad.data();
      for (std::size_t k = 0; k < n.grad.size(); ++k) dst[k] += src[k];
    }
  }
}

// ---- linear algebra ----------------------------------------------------------

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  if (bv.rank() != 2 || av.cols() != bv.rows()) {
    throw DimensionError("matmul: cannot multiply " + shape_to_string(av.shape()) + " by " +
                         shape_to_string(bv.shape()));
  }
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  Shape out_shape = av.rank() == 1 ? Shape{n} : Shape{m, n};
  Tensor<T> out(out_shape);
  gemm_acc(av.data(), bv.data(), out.data(), m, k, n);
  Tape<T>* tape = a.tape();
  const std::size_t ia = a.id(), ib = b.id();
  return tape->record(std::move(out), {a, b}, [tape, ia, ib, m, k, n](const Tensor<T>& g) {
    const T f = fault_factor<T>("matmul");
    Tensor<T> gs = g;
    if (f != T(1))
      for (T& v : gs.values()) v *= f;
    if (Tensor<T>* da = tape->grad_sink(ia)) {
      gemm_nt_acc(gs.data(), tape->value(ib).data(), da->data(), m, n, k);
    }
    if (Tensor<T>* db = tape->grad_sink(ib)) {
      gemm_tn_acc(tape->value(ia).data(), gs.data(), db->data(), m, k, n);
    }
  });
}

template <typename T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  if (bv.rank() != 2 || av.cols() != bv.cols()) {
    throw DimensionError("matmul_nt: cannot multiply " + shape_to_string(av.shape()) +
                         " by the transpose of " + shape_to_string(bv.shape()));
  }
  const std::size_t m = av.rows(), k = av.cols(), n = bv.rows();
  Shape out_shape = av.rank() == 1 ? Shape{n} : Shape{m, n};
  Tensor<T> out(out_shape);
  gemm_nt_acc(av.data(), bv.data(), out.data(), m, k, n);
  Tape<T>* tape = a.tape();
  const std::size_t ia = a.id(), ib = b.id();
  return tape->record(std::move(out), {a, b}, [tape, ia, ib, m, k, n](const Tensor<T>& g) {
    const T f = fault_factor<T>("matmul");
    Tensor<T> gs = g;
    if (f != T(1))
      for (T& v : gs.values()) v *= f;
    if (Tensor<T>* da = tape->grad_sink(ia)) {
      gemm_acc(gs.data(), tape->value(ib).data(), da->data(), m, n, k);
    }
    if (Tensor<T>* db = tape->grad_sink(ib)) {
      gemm_tn_acc(gs.data(), tape->value(ia).data(), db->data(), m, n, k);
    }
  });
}

template <typename T>
Var<T> transpose(Var<T> x) {
  const Tensor<T>& xv = x.value();
  const std::size_t r = xv.rows(), c = xv.cols();
  Tensor<T> out({c, r}, transposed(xv.data(), r, c));
  Tape<T>* tape = x.tape();
  const std::size_t ix = x.id();
  return tape->record(std::move(out), {x}, [tape, ix, r, c](const Tensor<T>& g) {
    if (Tensor<T>* dx = tape->grad_sink(ix)) {
      std::vector<T> back = transposed(g.data(), c, r);
      for (std::size_t i = 0; i < back.size(); ++i) (*dx)[i] += back[i];
    }
  });
}

// ---- elementwise -------------------------------------------------------------

namespace {

enum class BinaryOp { kAdd, kSub, kMul };

template <typename T>
Var<T> binary(Var<T> x, Var<T> y, BinaryOp op, const char* name) {
  const Tensor<T>& xv = x.value();
  const Tensor<T>& yv = y.value();
  BroadcastPlan plan = plan_broadcast(xv, yv, name);
  Tensor<T> out(plan.out);
  const std::size_t n = plan.n, xs = xv.size(), ys = yv.size();
  const T* xd = xv.data();
  const T* yd = yv.data();
  T* od = out.data();
  auto apply = [op](T a, T b) {
    switch (op) {
      case BinaryOp::kAdd: return a + b;
      case BinaryOp::kSub: return a - b;
      default: return a * b;
    }
  };
  if (xs == n && ys == n) {
    for (std::size_t i = 0; i < n; ++i) od[i] = apply(xd[i], yd[i]);
  } else if (ys < n) {
    for (std::size_t off = 0; off < n; off += ys)
      for (std::size_t j = 0; j < ys; ++j) od[off + j] = apply(xd[off + j], yd[j]);
  } else {
    for (std::size_t off = 0; off < n; off += xs)
      for (std::size_t j = 0; j < xs; ++j) od[off + j] = apply(xd[j], yd[off + j]);
  }
  Tape<T>* tape = x.tape();
  const std::size_t ix = x.id(), iy = y.id();
  return tape->record(std::move(out), {x, y}, [tape, ix, iy, op, n](const Tensor<T>& g) {
    Tensor<T>* dx = tape->grad_sink(ix);
    Tensor<T>* dy = tape->grad_sink(iy);
    if (op == BinaryOp::kAdd || op == BinaryOp::kSub) {
      if (dx) fold_into(*dx, g);
      if (dy) fold_into(*dy, g, op == BinaryOp::kSub ? T(-1) : T(1));
      return;
    }
    const Tensor<T>& xv = tape->value(ix);
    const Tensor<T>& yv = tape->value(iy);
    const std::size_t xs = xv.size(), ys = yv.size();
    if (dx) {
      Tensor<T> t(g.shape());
      for (std::size_t i = 0; i < n; ++i) t[i] = g[i] * yv[i % ys];
      fold_into(*dx, t);
    }
    if (dy) {
      Tensor<T> t(g.shape());
      for (std::size_t i = 0; i < n; ++i) t[i] = g[i] * xv[i % xs];
      fold_into(*dy, t);
    }
  });
}

// Unary op whose derivative is a function of (input, output).
template <typename T, typename Fwd, typename Deriv>
Var<T> unary(Var<T> x, const char* name, Fwd fwd, Deriv deriv) {
  const Tensor<T>& xv = x.value();
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  Tape<T>* tape = x.tape();
  const std::size_t ix = x.id();
  const std::size_t self = tape->size();
  return tape->record(std::move(out), {x}, [tape, ix, self, name, deriv](const Tensor<T>& g) {
    if (Tensor<T>* dx = tape->grad_sink(ix)) {
      const T f = fault_factor<T>(name);
      const Tensor<T>& xv = tape->value(ix);
      const Tensor<T>& yv = tape->value(self);
      for (std::size_t i = 0; i < g.size(); ++i) (*dx)[i] += f * g[i] * deriv(xv[i], yv[i]);
    }
  });
}

}  // namespace

template <typename T>
Var<T> add(Var<T> x, Var<T> y) {
  return binary(x, y, BinaryOp::kAdd, "add");
}
template <typename T>
Var<T> sub(Var<T> x, Var<T> y) {
  return binary(x, y, BinaryOp::kSub, "sub");
}
template <typename T>
Var<T> mul(Var<T> x, Var<T> y) {
  return binary(x, y, BinaryOp::kMul, "mul");
}

template <typename T>
Var<T> sigmoid(Var<T> x) {
  return unary(
      x, "sigmoid", [](T v) { return stable_sigmoid(v); },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> tanh(Var<T> x) {
  return unary(
      x, "tanh", [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Var<T> scale(Var<T> x, T factor) {
  return unary(
      x, "scale", [factor](T v) { return factor * v; }, [factor](T, T) { return factor; });
}

template <typename T>
Var<T> shift(Var<T> x, T offset) {
  return unary(
      x, "shift", [offset](T v) { return v + offset; }, [](T, T) { return T(1); });
}

template <typename T>
Var<T> complement(Var<T> x) {
  return unary(
      x, "complement", [](T v) { return T(1) - v; }, [](T, T) { return T(-1); });
}

template <typename T>
Var<T> mul_rows(Var<T> x, Var<T> s) {
  const Tensor<T>& xv = x.value();
  const Tensor<T>& sv = s.value();
  const std::size_t rows = xv.rows(), cols = xv.cols();
  if (sv.size() != rows || (sv.rank() == 2 && sv.cols() != 1)) {
    throw DimensionError("mul_rows: scale " + shape_to_string(sv.shape()) +
                         " does not match rows of " + shape_to_string(xv.shape()));
  }
  Tensor<T> out(xv.shape());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out.at(r, c) = xv.at(r, c) * sv[r];
  Tape<T>* tape = x.tape();
  const std::size_t ix = x.id(), is = s.id();
  return tape->record(std::move(out), {x, s}, [tape, ix, is, rows, cols](const Tensor<T>& g) {
    const Tensor<T>& xv = tape->value(ix);
    const Tensor<T>& sv = tape->value(is);
    if (Tensor<T>* dx = tape->grad_sink(ix)) {
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) dx->at(r, c) += g.at(r, c) * sv[r];
    }
    if (Tensor<T>* ds = tape->grad_sink(is)) {
      for (std::size_t r = 0; r < rows; ++r) {
        T acc = 0;
        for (std::size_t c = 0; c < cols; ++c) acc += g.at(r, c) * xv.at(r, c);
        (*ds)[r] += acc;
      }
    }
  });
}

// ---- softmax -------------------------------------------------------------------

namespace {

// Lanes of a softmax: `groups` independent runs of `len` elements, element j
// of group q at q * group_stride + j * elem_stride.
struct Lanes {
  std::size_t groups, len, group_stride, elem_stride;
};

template <typename T>
Lanes softmax_lanes(const Tensor<T>& x, int axis) {
  if (x.rank() == 1) {
    if (axis != 0 && axis != -1) throw DimensionError("softmax: axis out of range for rank 1");
    return {1, x.size(), 0, 1};
  }
  if (axis == 1 || axis == -1) return {x.rows(), x.cols(), x.cols(), 1};
  if (axis == 0) return {x.cols(), x.rows(), 1, x.cols()};
  throw DimensionError("softmax: axis out of range for rank 2");
}

}  // namespace

template <typename T>
Var<T> softmax(Var<T> x, int axis) {
  const Tensor<T>& xv = x.value();
  const Lanes ln = softmax_lanes(xv, axis);
  Tensor<T> out(xv.shape());
  for (std::size_t q = 0; q < ln.groups; ++q) {
    const std::size_t base = q * ln.group_stride;
    T mx = xv[base];
    for (std::size_t j = 1; j < ln.len; ++j) mx = std::max(mx, xv[base + j * ln.elem_stride]);
    T z = 0;
    for (std::size_t j = 0; j < ln.len; ++j) {
      const std::size_t i = base + j * ln.elem_stride;
      out[i] = std::exp(xv[i] - mx);
      z += out[i];
    }
    for (std::size_t j = 0; j < ln.len; ++j) out[base + j * ln.elem_stride] /= z;
  }
  Tape<T>* tape = x.tape();
  const std::size_t ix = x.id();
  const std::size_t self = tape->size();
  return tape->record(std::move(out), {x}, [tape, ix, self, ln](const Tensor<T>& g) {
    Tensor<T>* dx = tape->grad_sink(ix);
    if (!dx) return;
    const T f = fault_factor<T>("softmax");
    const Tensor<T>& y = tape->value(self);
    for (std::size_t q = 0; q < ln.groups; ++q) {
      const std::size_t base = q * ln.group_stride;
      T dot = 0;
      for (std::size_t j = 0; j < ln.len; ++j) {
        const std::size_t i = base + j * ln.elem_stride;
        dot += g[i] * y[i];
      }
      for (std::size_t j = 0; j < ln.len; ++j) {
        const std::size_t i = base + j * ln.elem_stride;
        (*dx)[i] += f * y[i] * (g[i] - dot);
      }
    }
  });
}

// ---- structural ----------------------------------------------------------------

template <typename T>
Var<T> concat(std::span<const Var<T>> parts, int axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  bool all_vectors = true;
  for (const auto& p : parts) all_vectors = all_vectors && p.value().rank() == 1;
  Tape<T>* tape = parts[0].tape();
  std::vector<std::size_t> ids;
  ids.reserve(parts.size());
  for (const auto& p : parts) ids.push_back(p.id());

  auto mismatch = [&](const char* what) {
    std::string msg = std::string("concat: incompatible ") + what + " among";
    for (const auto& p : parts) msg += " " + shape_to_string(p.shape());
    throw DimensionError(msg);
  };

  if (all_vectors || axis == 1 || axis == -1) {
    // Join along columns; every part contributes the same number of rows.
    if (all_vectors && axis != 0 && axis != -1) mismatch("axis");
    const std::size_t rows = parts[0].value().rows();
    std::size_t cols = 0;
    std::vector<std::size_t> offsets;
    for (const auto& p : parts) {
      if (p.value().rows() != rows) mismatch("row counts");
      offsets.push_back(cols);
      cols += p.value().cols();
    }
    Tensor<T> out(all_vectors ? Shape{cols} : Shape{rows, cols});
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const Tensor<T>& pv = parts[k].value();
      for (std::size_t r = 0; r < rows; ++r)
        std::copy(pv.row(r).begin(), pv.row(r).end(), out.data() + r * cols + offsets[k]);
    }
    return tape->record(std::move(out), parts,
                        [tape, ids, offsets, rows, cols](const Tensor<T>& g) {
                          for (std::size_t k = 0; k < ids.size(); ++k) {
                            Tensor<T>* d = tape->grad_sink(ids[k]);
                            if (!d) continue;
                            const std::size_t w = d->cols();
                            for (std::size_t r = 0; r < rows; ++r)
                              for (std::size_t c = 0; c < w; ++c)
                                d->at(r, c) += g[r * cols + offsets[k] + c];
                          }
                        });
  }
  if (axis != 0) throw DimensionError("concat: axis out of range");
  const std::size_t cols = parts[0].value().cols();
  std::size_t rows = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    if (p.value().cols() != cols) mismatch("column counts");
    offsets.push_back(rows * cols);
    rows += p.value().rows();
  }
  Tensor<T> out({rows, cols});
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor<T>& pv = parts[k].value();
    std::copy(pv.values().begin(), pv.values().end(), out.data() + offsets[k]);
  }
  return tape->record(std::move(out), parts, [tape, ids, offsets](const Tensor<T>& g) {
    for (std::size_t k = 0; k < ids.size(); ++k) {
      Tensor<T>* d = tape->grad_sink(ids[k]);
      if (!d) continue;
      for (std::size_t i = 0; i < d->size(); ++i) (*d)[i] += g[offsets[k] + i];
    }
  });
}

template <typename T>
Var<T> slice(Var<T> x, int axis, std::size_t begin, std::size_t end) {
  const Tensor<T>& xv = x.value();
  const bool along_rows = xv.rank() == 2 && axis == 0;
  const bool along_cols = (xv.rank() == 2 && (axis == 1 || axis == -1)) ||
                          (xv.rank() == 1 && (axis == 0 || axis == -1));
  if (!along_rows && !along_cols) throw DimensionError("slice: axis out of range");
  const std::size_t extent = along_rows ? xv.rows() : xv.cols();
  if (begin >= end || end > extent) {
    throw IndexError("slice [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of range for " + shape_to_string(xv.shape()));
  }
  const std::size_t rows = xv.rows(), cols = xv.cols(), w = end - begin;
  Tape<T>* tape = x.tape();
  const std::size_t ix = x.id();
  if (along_rows) {
    Tensor<T> out({w, cols});
    std::copy(xv.data() + begin * cols, xv.data() + end * cols, out.data());
    return tape->record(std::move(out), {x}, [tape, ix, begin, cols](const Tensor<T>& g) {
      if (Tensor<T>* d = tape->grad_sink(ix))
        for (std::size_t i = 0; i < g.size(); ++i) (*d)[begin * cols + i] += g[i];
    });
  }
  Tensor<T> out(xv.rank() == 1 ? Shape{w} : Shape{rows, w});
  for (std::size_t r = 0; r < rows; ++r)
    std::copy(xv.data() + r * cols + begin, xv.data() + r * cols + end, out.data() + r * w);
  return tape->record(std::move(out), {x}, [tape, ix, begin, rows, cols, w](const Tensor<T>& g) {
    if (Tensor<T>* d = tape->grad_sink(ix))
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < w; ++c) (*d)[r * cols + begin + c] += g[r * w + c];
  });
}

template <typename T>
Var<T> row(Var<T> x, std::size_t i) {
  if (x.value().rank() != 2) throw DimensionError("row: expected a matrix");
  return slice(x, 0, i, i + 1);
}

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
  if (shape_size(shape) != x.value().size()) {
    throw DimensionError("reshape: cannot view " + shape_to_string(x.shape()) + " as " +
                         shape_to_string(shape));
  }
  Tensor<T> out(std::move(shape), x.value().storage());
  Tape<T>* tape = x.tape();
  const std::size_t ix = x.id();
  return tape->record(std::move(out), {x}, [tape, ix](const Tensor<T>& g) {
    if (Tensor<T>* d = tape->grad_sink(ix))
      for (std::size_t i = 0; i < g.size(); ++i) (*d)[i] += g[i];
  });
}

template <typename T>
Var<T> sum(Var<T> x) {
  Tensor<T> out({1}, std::vector<T>{x.value().sum()});
  Tape<T>* tape = x.tape();
  const std::size_t ix = x.id();
  return tape->record(std::move(out), {x}, [tape, ix](const Tensor<T>& g) {
    if (Tensor<T>* d = tape->grad_sink(ix))
      for (T& v : d->values()) v += g[0];
  });
}

template <typename T>
Var<T> embedding_lookup(Var<T> table, std::span<const int> ids) {
  const Tensor<T>& tv = table.value();
  if (tv.rank() != 2) throw DimensionError("embedding_lookup: table must be a matrix");
  if (ids.empty()) throw ContractError("embedding_lookup: empty id sequence");
  const std::size_t vocab = tv.rows(), d = tv.cols();
  for (int id : ids) check_vector_index<T>(id, vocab, "embedding_lookup: token id");
  Tensor<T> out({ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    auto src = tv.row(static_cast<std::size_t>(ids[i]));
    std::copy(src.begin(), src.end(), out.data() + i * d);
  }
  Tape<T>* tape = table.tape();
  const std::size_t it = table.id();
  std::vector<int> idv(ids.begin(), ids.end());
  return tape->record(std::move(out), {table}, [tape, it, idv, d](const Tensor<T>& g) {
    if (Tensor<T>* dt = tape->grad_sink(it))
      for (std::size_t i = 0; i < idv.size(); ++i) {
        T* dst = dt->data() + static_cast<std::size_t>(idv[i]) * d;
        for (std::size_t c = 0; c < d; ++c) dst[c] += g[i * d + c];
      }
  });
}

template <typename T>
Var<T> scatter_add_by_word(Var<T> weights, std::span<const int> word_of_position,
                           std::size_t vocab_size) {
  const Tensor<T>& wv = weights.value();
  const std::size_t len = wv.cols(), rows = wv.rows();
  if (word_of_position.size() != len) {
    throw DimensionError("scatter_add_by_word: " + std::to_string(word_of_position.size()) +
                         " words for weights " + shape_to_string(wv.shape()));
  }
  for (int w : word_of_position) check_vector_index<T>(w, vocab_size, "scatter_add_by_word: word id");
  Tensor<T> out(wv.rank() == 1 ? Shape{vocab_size} : Shape{rows, vocab_size});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t k = 0; k < len; ++k)
      out.at(r, static_cast<std::size_t>(word_of_position[k])) += wv.at(r, k);
  Tape<T>* tape = weights.tape();
  const std::size_t iw = weights.id();
  std::vector<int> words(word_of_position.begin(), word_of_position.end());
  return tape->record(std::move(out), {weights},
                      [tape, iw, words, rows, len, vocab_size](const Tensor<T>& g) {
                        if (Tensor<T>* d = tape->grad_sink(iw))
                          for (std::size_t r = 0; r < rows; ++r)
                            for (std::size_t k = 0; k < len; ++k)
                              (*d)[r * len + k] +=
                                  g[r * vocab_size + static_cast<std::size_t>(words[k])];
                      });
}

template <typename T>
Var<T> cross_entropy(Var<T> p, int target) {
  if (p.value().rows() != 1) throw DimensionError("cross_entropy: expected a single distribution");
  const int t[1] = {target};
  return cross_entropy_rows(p, std::span<const int>(t, 1));
}

template <typename T>
Var<T> cross_entropy_rows(Var<T> p, std::span<const int> targets) {
  const Tensor<T>& pv = p.value();
  const std::size_t rows = pv.rows(), n = pv.cols();
  if (targets.size() != rows) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) +
                         " targets for distribution " + shape_to_string(pv.shape()));
  }
  T loss = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] < 0) continue;
    check_vector_index<T>(targets[r], n, "cross_entropy: target index");
    loss -= std::log(pv.at(r, static_cast<std::size_t>(targets[r])) + T(kLogFloor));
  }
  Tape<T>* tape = p.tape();
  const std::size_t ip = p.id();
  std::vector<int> tv(targets.begin(), targets.end());
  return tape->record(Tensor<T>({1}, std::vector<T>{loss}), {p},
                      [tape, ip, tv, n](const Tensor<T>& g) {
                        Tensor<T>* d = tape->grad_sink(ip);
                        if (!d) return;
                        const Tensor<T>& pv = tape->value(ip);
                        for (std::size_t r = 0; r < tv.size(); ++r) {
                          if (tv[r] < 0) continue;
                          const std::size_t i = r * n + static_cast<std::size_t>(tv[r]);
                          (*d)[i] -= g[0] / (pv[i] + T(kLogFloor));
                        }
                      });
}

template <typename T>
Var<T> dropout(Var<T> x, double rate, std::mt19937_64& rng, bool training) {
  if (rate < 0.0 || rate >= 1.0) throw ContractError("dropout: rate must be in [0, 1)");
  if (!training || rate == 0.0) return x;
  const Tensor<T>& xv = x.value();
  std::bernoulli_distribution keep(1.0 - rate);
  const T scale_up = T(1.0 / (1.0 - rate));
  Tensor<T> mask(xv.shape());
  for (T& m : mask.values()) m = keep(rng) ? scale_up : T(0);
  Var<T> mv = x.tape()->constant(std::move(mask));
  return mul(x, mv);
}

template <typename T>
Var<T> gru_step(Var<T> projected, std::size_t first_row, Var<T> h, Var<T> w_gates,
                Var<T> w_candidate) {
  const Tensor<T>& pv = projected.value();
  const Tensor<T>& hv = h.value();
  const std::size_t rows = hv.rows(), d = hv.cols();
  if (pv.cols() != 3 * d || first_row + rows > pv.rows() || w_gates.value().rows() != d ||
      w_gates.value().cols() != 2 * d || w_candidate.value().rows() != d ||
      w_candidate.value().cols() != d) {
    throw DimensionError("gru: hidden state " + shape_to_string(hv.shape()) +
                         " does not match projection " + shape_to_string(pv.shape()) +
                         " and weights " + shape_to_string(w_gates.value().shape()));
  }
  const T* p = pv.data() + first_row * 3 * d;
  // Saved for backward: gates g = [z, r], candidate c and r * h.
  auto gates = std::make_shared<std::vector<T>>(rows * 2 * d, T(0));
  auto cand = std::make_shared<std::vector<T>>(rows * d, T(0));
  auto reset_h = std::make_shared<std::vector<T>>(rows * d);
  gemm_acc(hv.data(), w_gates.value().data(), gates->data(), rows, d, 2 * d);
  for (std::size_t r = 0; r < rows; ++r) {
    T* g = gates->data() + r * 2 * d;
    const T* pr = p + r * 3 * d;
    for (std::size_t j = 0; j < 2 * d; ++j) g[j] = stable_sigmoid(g[j] + pr[j]);
    for (std::size_t j = 0; j < d; ++j) (*reset_h)[r * d + j] = g[d + j] * hv[r * d + j];
  }
  gemm_acc(reset_h->data(), w_candidate.value().data(), cand->data(), rows, d, d);
  Tensor<T> out(hv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* z = gates->data() + r * 2 * d;
    const T* pc = p + r * 3 * d + 2 * d;
    for (std::size_t j = 0; j < d; ++j) {
      T& c = (*cand)[r * d + j];
      c = std::tanh(c + pc[j]);
      const T hj = hv[r * d + j];
      out[r * d + j] = hj + z[j] * (c - hj);
    }
  }
  Tape<T>* tape = projected.tape();
  const std::size_t ip = projected.id(), ih = h.id(), ig = w_gates.id(), ic = w_candidate.id();
  return tape->record(
      std::move(out), {projected, h, w_gates, w_candidate},
      [tape, ip, ih, ig, ic, first_row, rows, d, gates, cand, reset_h](const Tensor<T>& grad) {
        const T f = fault_factor<T>("gru");
        const Tensor<T>& hv = tape->value(ih);
        std::vector<T> d_cand(rows * d), d_gates(rows * 2 * d), d_h(rows * d);
        for (std::size_t i = 0; i < rows * d; ++i) {
          const std::size_t r = i / d, j = i % d;
          const T g = f * grad[i];
          const T z = (*gates)[r * 2 * d + j];
          const T c = (*cand)[i];
          d_gates[r * 2 * d + j] = g * (c - hv[i]);
          d_cand[i] = g * z * (T(1) - c * c);
          d_h[i] = g * (T(1) - z);
        }
        if (Tensor<T>* dw = tape->grad_sink(ic)) {
          gemm_tn_acc(reset_h->data(), d_cand.data(), dw->data(), rows, d, d);
        }
        std::vector<T> d_reset_h(rows * d, T(0));
        gemm_nt_acc(d_cand.data(), tape->value(ic).data(), d_reset_h.data(), rows, d, d);
        for (std::size_t i = 0; i < rows * d; ++i) {
          const std::size_t r = i / d, j = i % d;
          const T reset = (*gates)[r * 2 * d + d + j];
          d_gates[r * 2 * d + d + j] = d_reset_h[i] * hv[i];
          d_h[i] += d_reset_h[i] * reset;
        }
        for (std::size_t i = 0; i < rows * 2 * d; ++i) {
          const T g = (*gates)[i];
          d_gates[i] *= g * (T(1) - g);
        }
        if (Tensor<T>* dw = tape->grad_sink(ig)) {
          gemm_tn_acc(hv.data(), d_gates.data(), dw->data(), rows, d, 2 * d);
        }
        if (Tensor<T>* dh = tape->grad_sink(ih)) {
          gemm_nt_acc(d_gates.data(), tape->value(ig).data(), d_h.data(), rows, 2 * d, d);
          for (std::size_t i = 0; i < rows * d; ++i) (*dh)[i] += d_h[i];
        }
        if (Tensor<T>* dp = tape->grad_sink(ip)) {
          T* base = dp->data() + first_row * 3 * d;
          for (std::size_t r = 0; r < rows; ++r) {
            T* pr = base + r * 3 * d;
            for (std::size_t j = 0; j < 2 * d; ++j) pr[j] += d_gates[r * 2 * d + j];
            for (std::size_t j = 0; j < d; ++j) pr[2 * d + j] += d_cand[r * d + j];
          }
        }
      });
}

namespace testing {
void set_backward_fault(const char* op_name) { g_fault_op.store(op_name); }
}  // namespace testing

#define PIN_INSTANTIATE_AD(T)                                                             \
  template class Tape<T>;                                                                 \
  template Var<T> matmul(Var<T>, Var<T>);                                                 \
  template Var<T> matmul_nt(Var<T>, Var<T>);                                              \
  template Var<T> transpose(Var<T>);                                                      \
  template Var<T> add(Var<T>, Var<T>);                                                    \
  template Var<T> sub(Var<T>, Var<T>);                                                    \
  template Var<T> mul(Var<T>, Var<T>);                                                    \
  template Var<T> sigmoid(Var<T>);                                                        \
  template Var<T> tanh(Var<T>);                                                           \
  template Var<T> scale(Var<T>, T);                                                       \
  template Var<T> shift(Var<T>, T);                                                       \
  template Var<T> complement(Var<T>);                                                     \
  template Var<T> mul_rows(Var<T>, Var<T>);                                               \
  template Var<T> softmax(Var<T>, int);                                                   \
  template Var<T> concat(std::span<const Var<T>>, int);                                   \
  template Var<T> slice(Var<T>, int, std::size_t, std::size_t);                           \
  template Var<T> row(Var<T>, std::size_t);                                               \
  template Var<T> reshape(Var<T>, Shape);                                                 \
  template Var<T> sum(Var<T>);                                                            \
  template Var<T> embedding_lookup(Var<T>, std::span<const int>);                         \
  template Var<T> scatter_add_by_word(Var<T>, std::span<const int>, std::size_t);         \
  template Var<T> cross_entropy(Var<T>, int);                                             \
  template Var<T> cross_entropy_rows(Var<T>, std::span<const int>);                       \
  template Var<T> dropout(Var<T>, double, std::mt19937_64&, bool);                        \
  template Var<T> gru_step(Var<T>, std::size_t, Var<T>, Var<T>, Var<T>);

PIN_INSTANTIATE_AD(float)
PIN_INSTANTIATE_AD(double)

#undef PIN_INSTANTIATE_AD

}  // namespace ad
}  // namespace pin
