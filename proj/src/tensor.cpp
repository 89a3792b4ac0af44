#include "stulab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "stulab/error.hpp"

namespace stulab::ad {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream s;
  s << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) s << (i ? ", " : "") << shape[i];
  s << ']';
  return s.str();
}

std::vector<double>& Node::grad_buffer() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (numel(shape) != values.size()) {
    throw InvalidArgument("Tensor::from: shape " + shape_str(shape) + " needs " + std::to_string(numel(shape)) +
                          " values, got " + std::to_string(values.size()));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value) { return from({}, {value}); }

std::size_t Tensor::dim(std::ptrdiff_t axis) const {
  const auto r = static_cast<std::ptrdiff_t>(rank());
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw InvalidArgument("Tensor::dim: axis out of range for " + shape_str(shape()));
  return node_->shape[static_cast<std::size_t>(axis)];
}

std::span<const double> Tensor::grad() const {
  if (node_->grad.empty()) node_->grad.assign(node_->value.size(), 0.0);
  return node_->grad;
}

double Tensor::item() const {
  if (size() != 1) throw InvalidArgument("Tensor::item: tensor of shape " + shape_str(shape()) + " is not a scalar");
  return node_->value[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank()) throw InvalidArgument("Tensor::at: wrong number of indices");
  std::size_t flat = 0;
  std::size_t i = 0;
  for (auto idx : index) flat = flat * node_->shape[i++] + idx;
  return node_->value[flat];
}

Tensor Tensor::detach() const { return from(shape(), values()); }

Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                   std::function<void(Node&)> backward, const char* op) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  const bool any = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (any) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& t : inputs) node->inputs.push_back(t.node());
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

Tape Tape::record(const Tensor& root) {
  Tape tape;
  if (!root.requires_grad()) return tape;
  std::unordered_set<Node*> seen;
  // Iterative post-order DFS: a node is emitted after all of its inputs.
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node().get(), 0}};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      tape.nodes_.push_back(node);
      stack.pop_back();
    }
  }
  return tape;
}

void backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw InvalidArgument("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
  }
  const Tape tape = Tape::record(loss);
  if (tape.nodes().empty()) return;
  for (Node* n : tape.nodes()) {
    if (!n->is_leaf()) n->grad.assign(n->value.size(), 0.0);
  }
  loss.node()->grad_buffer()[0] += 1.0;
  for (auto it = tape.nodes().rbegin(); it != tape.nodes().rend(); ++it) {
    Node* n = *it;
    if (n->backward) n->backward(*n);
  }
}

namespace {

std::size_t norm_axis(std::ptrdiff_t axis, std::size_t rank, const char* op) {
  const auto r = static_cast<std::ptrdiff_t>(rank);
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw InvalidArgument(std::string(op) + ": axis out of range");
  return static_cast<std::size_t>(axis);
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

void shape_mismatch(const char* op, const Tensor& a, const Tensor& b) {
  throw InvalidArgument(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
                        shape_str(b.shape()));
}

// Binary op where `b` repeats over the leading axes of `a`.
enum class BinOp { kAdd, kSub, kMul };

Tensor binary(const Tensor& a, const Tensor& b, BinOp kind, const char* name) {
  if (!is_suffix(b.shape(), a.shape())) {
    if (kind != BinOp::kSub && is_suffix(a.shape(), b.shape())) return binary(b, a, kind, name);
    if (kind == BinOp::kSub && is_suffix(a.shape(), b.shape())) {
      return binary(neg(b), a, BinOp::kAdd, name);
    }
    shape_mismatch(name, a, b);
  }
  const std::size_t n = a.size();
  const std::size_t m = b.size();
  std::vector<double> out(n);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  for (std::size_t i = 0; i < n; i += m) {
    for (std::size_t j = 0; j < m; ++j) {
      switch (kind) {
        case BinOp::kAdd: out[i + j] = pa[i + j] + pb[j]; break;
        case BinOp::kSub: out[i + j] = pa[i + j] - pb[j]; break;
        case BinOp::kMul: out[i + j] = pa[i + j] * pb[j]; break;
      }
    }
  }
  return make_result(
      a.shape(), std::move(out), {a, b},
      [kind, n, m](Node& self) {
        auto& na = *self.inputs[0];
        auto& nb = *self.inputs[1];
        const auto& g = self.grad;
        if (na.requires_grad) {
          auto& ga = na.grad_buffer();
          if (kind == BinOp::kMul) {
            for (std::size_t i = 0; i < n; i += m)
              for (std::size_t j = 0; j < m; ++j) ga[i + j] += g[i + j] * nb.value[j];
          } else {
            for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
          }
        }
        if (nb.requires_grad) {
          auto& gb = nb.grad_buffer();
          for (std::size_t i = 0; i < n; i += m) {
            for (std::size_t j = 0; j < m; ++j) {
              switch (kind) {
                case BinOp::kAdd: gb[j] += g[i + j]; break;
                case BinOp::kSub: gb[j] -= g[i + j]; break;
                case BinOp::kMul: gb[j] += g[i + j] * na.value[i + j]; break;
              }
            }
          }
        }
      },
      name);
}

// Elementwise unary op; `deriv(x, y)` gives dy/dx from input x and output y.
template <typename F, typename D>
Tensor unary(const Tensor& a, F f, D deriv, const char* name) {
  std::vector<double> out(a.size());
  const auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i]);
  return make_result(
      a.shape(), std::move(out), {a},
      [deriv](Node& self) {
        auto& in = *self.inputs[0];
        auto& g = in.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * deriv(in.value[i], self.value[i]);
      },
      name);
}

// C[M, N] += A[M, K] * B[K, N]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[M, K] += G[M, N] * B[K, N]^T
void gemm_nt(const double* g, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* grow = g + i * n;
    double* crow = c + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b + p * n;
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
      crow[p] += s;
    }
  }
}

// C[K, N] += A[M, K]^T * G[M, N]
void gemm_tn(const double* a, const double* g, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* grow = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      double* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * grow[j];
    }
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::kAdd, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::kSub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::kMul, "mul"); }

Tensor scale(const Tensor& a, double c) {
  return unary(a, [c](double x) { return c * x; }, [c](double, double) { return c; }, "scale");
}

Tensor add_scalar(const Tensor& a, double c) {
  return unary(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; }, "add_scalar");
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor relu(const Tensor& a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; }, "relu");
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); }, [](double, double y) { return y * (1.0 - y); },
      "sigmoid");
}

Tensor silu(const Tensor& a) {
  return unary(
      a, [](double x) { return x / (1.0 + std::exp(-x)); },
      [](double x, double) {
        const double s = 1.0 / (1.0 + std::exp(-x));
        return s * (1.0 + x * (1.0 - s));
      },
      "silu");
}

Tensor exp(const Tensor& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; }, "exp");
}

Tensor square(const Tensor& a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; }, "square");
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) shape_mismatch("matmul", a, b);
  const std::size_t m = a.dim(-2);
  const std::size_t k = a.dim(-1);
  const std::size_t n = b.dim(-1);
  if (b.dim(-2) != k) shape_mismatch("matmul", a, b);
  const bool shared = b.rank() == 2;
  if (!shared) {
    if (a.rank() != b.rank() || !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin())) {
      shape_mismatch("matmul", a, b);
    }
  }
  const std::size_t batch = a.size() / (m * k);
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  out_shape.push_back(n);
  std::vector<double> out(batch * m * n, 0.0);
  if (shared) {
    gemm_nn(a.data().data(), b.data().data(), out.data(), batch * m, k, n);
  } else {
    for (std::size_t i = 0; i < batch; ++i)
      gemm_nn(a.data().data() + i * m * k, b.data().data() + i * k * n, out.data() + i * m * n, m, k, n);
  }
  return make_result(
      std::move(out_shape), std::move(out), {a, b},
      [shared, batch, m, k, n](Node& self) {
        auto& na = *self.inputs[0];
        auto& nb = *self.inputs[1];
        const double* g = self.grad.data();
        if (shared) {
          if (na.requires_grad) gemm_nt(g, nb.value.data(), na.grad_buffer().data(), batch * m, k, n);
          if (nb.requires_grad) gemm_tn(na.value.data(), g, nb.grad_buffer().data(), batch * m, k, n);
          return;
        }
        for (std::size_t i = 0; i < batch; ++i) {
          if (na.requires_grad)
            gemm_nt(g + i * m * n, nb.value.data() + i * k * n, na.grad_buffer().data() + i * m * k, m, k, n);
          if (nb.requires_grad)
            gemm_tn(na.value.data() + i * m * k, g + i * m * n, nb.grad_buffer().data() + i * k * n, m, k, n);
        }
      },
      "matmul");
}

Tensor transpose(const Tensor& a) {
  if (a.rank() < 2) throw InvalidArgument("transpose: need rank >= 2, got " + shape_str(a.shape()));
  const std::size_t r = a.dim(-2);
  const std::size_t c = a.dim(-1);
  const std::size_t batch = a.size() / (r * c);
  Shape shape = a.shape();
  std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
  std::vector<double> out(a.size());
  const auto x = a.data();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) out[b * r * c + j * r + i] = x[b * r * c + i * c + j];
  return make_result(
      std::move(shape), std::move(out), {a},
      [batch, r, c](Node& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) g[b * r * c + i * c + j] += self.grad[b * r * c + j * r + i];
      },
      "transpose");
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw InvalidArgument("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  return make_result(
      std::move(shape), a.values(), {a},
      [](Node& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      },
      "reshape");
}

Tensor concat(const std::vector<Tensor>& parts, std::ptrdiff_t axis) {
  if (parts.empty()) throw InvalidArgument("concat: no inputs");
  const auto ax = norm_axis(axis, parts[0].rank(), "concat");
  Shape shape = parts[0].shape();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != shape.size()) shape_mismatch("concat", parts[0], p);
    for (std::size_t i = 0; i < shape.size(); ++i)
      if (i != ax && p.shape()[i] != shape[i]) shape_mismatch("concat", parts[0], p);
    total += p.shape()[ax];
  }
  shape[ax] = total;
  std::size_t outer = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= shape[i];
  std::size_t inner = 1;
  for (std::size_t i = ax + 1; i < shape.size(); ++i) inner *= shape[i];
  std::vector<double> out(numel(shape));
  std::vector<std::size_t> widths;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.shape()[ax] * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(p.data().data() + o * w, w, out.data() + o * total * inner + offset);
    widths.push_back(w);
    offset += w;
  }
  return make_result(
      std::move(shape), std::move(out), parts,
      [widths, outer, row = total * inner](Node& self) {
        std::size_t off = 0;
        for (std::size_t p = 0; p < widths.size(); ++p) {
          auto& in = *self.inputs[p];
          if (in.requires_grad) {
            auto& g = in.grad_buffer();
            for (std::size_t o = 0; o < outer; ++o)
              for (std::size_t i = 0; i < widths[p]; ++i) g[o * widths[p] + i] += self.grad[o * row + off + i];
          }
          off += widths[p];
        }
      },
      "concat");
}

Tensor slice(const Tensor& a, std::ptrdiff_t axis, std::size_t start, std::size_t length) {
  const auto ax = norm_axis(axis, a.rank(), "slice");
  if (start + length > a.shape()[ax]) {
    throw InvalidArgument("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                          ") exceeds axis of " + shape_str(a.shape()));
  }
  std::size_t outer = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= a.shape()[i];
  std::size_t inner = 1;
  for (std::size_t i = ax + 1; i < a.rank(); ++i) inner *= a.shape()[i];
  const std::size_t src_row = a.shape()[ax] * inner;
  const std::size_t dst_row = length * inner;
  Shape shape = a.shape();
  shape[ax] = length;
  std::vector<double> out(outer * dst_row);
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(a.data().data() + o * src_row + start * inner, dst_row, out.data() + o * dst_row);
  return make_result(
      std::move(shape), std::move(out), {a},
      [outer, src_row, dst_row, off = start * inner](Node& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t i = 0; i < dst_row; ++i) g[o * src_row + off + i] += self.grad[o * dst_row + i];
      },
      "slice");
}

Tensor softmax(const Tensor& a) {
  if (a.rank() == 0) throw InvalidArgument("softmax: scalar input");
  const std::size_t n = a.dim(-1);
  const std::size_t rows = a.size() / n;
  std::vector<double> out(a.size());
  const auto x = a.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * n;
    double* yr = out.data() + r * n;
    const double mx = *std::max_element(xr, xr + n);
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += (yr[i] = std::exp(xr[i] - mx));
    for (std::size_t i = 0; i < n; ++i) yr[i] /= s;
  }
  return make_result(
      a.shape(), std::move(out), {a},
      [rows, n](Node& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) {
          const double* y = self.value.data() + r * n;
          const double* gy = self.grad.data() + r * n;
          double dot = 0.0;
          for (std::size_t i = 0; i < n; ++i) dot += gy[i] * y[i];
          for (std::size_t i = 0; i < n; ++i) g[r * n + i] += y[i] * (gy[i] - dot);
        }
      },
      "softmax");
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return make_result(
      {}, {s}, {a},
      [](Node& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (auto& v : g) v += self.grad[0];
      },
      "sum");
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw InvalidArgument("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor sum_last(const Tensor& a) {
  if (a.rank() == 0) throw InvalidArgument("sum_last: scalar input");
  const std::size_t n = a.dim(-1);
  const std::size_t rows = a.size() / n;
  std::vector<double> out(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t i = 0; i < n; ++i) out[r] += a.data()[r * n + i];
  Shape shape(a.shape().begin(), a.shape().end() - 1);
  return make_result(
      std::move(shape), std::move(out), {a},
      [rows, n](Node& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t i = 0; i < n; ++i) g[r * n + i] += self.grad[r];
      },
      "sum_last");
}

Tensor scale_rows(const Tensor& a, const Tensor& s) {
  if (a.rank() == 0 || !std::equal(s.shape().begin(), s.shape().end(), a.shape().begin()) ||
      s.rank() + 1 != a.rank()) {
    shape_mismatch("scale_rows", a, s);
  }
  const std::size_t n = a.dim(-1);
  const std::size_t rows = s.size();
  std::vector<double> out(a.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t i = 0; i < n; ++i) out[r * n + i] = a.data()[r * n + i] * s.data()[r];
  return make_result(
      a.shape(), std::move(out), {a, s},
      [rows, n](Node& self) {
        auto& na = *self.inputs[0];
        auto& ns = *self.inputs[1];
        if (na.requires_grad) {
          auto& g = na.grad_buffer();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t i = 0; i < n; ++i) g[r * n + i] += self.grad[r * n + i] * ns.value[r];
        }
        if (ns.requires_grad) {
          auto& g = ns.grad_buffer();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t i = 0; i < n; ++i) g[r] += self.grad[r * n + i] * na.value[r * n + i];
        }
      },
      "scale_rows");
}

Tensor embedding(const Tensor& table, std::span<const std::int64_t> indices, Shape index_shape) {
  if (table.rank() != 2) throw InvalidArgument("embedding: table must be [V, d], got " + shape_str(table.shape()));
  if (numel(index_shape) != indices.size()) throw InvalidArgument("embedding: index shape does not match count");
  const std::size_t vocab = table.dim(0);
  const std::size_t d = table.dim(1);
  std::vector<std::size_t> rows(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || static_cast<std::size_t>(indices[i]) >= vocab) {
      throw InvalidArgument("embedding: index " + std::to_string(indices[i]) + " outside vocabulary of " +
                            std::to_string(vocab));
    }
    rows[i] = static_cast<std::size_t>(indices[i]);
  }
  std::vector<double> out(rows.size() * d);
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(table.data().data() + rows[i] * d, d, out.data() + i * d);
  Shape shape = std::move(index_shape);
  shape.push_back(d);
  return make_result(
      std::move(shape), std::move(out), {table},
      [rows = std::move(rows), d](Node& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < rows.size(); ++i)
          for (std::size_t j = 0; j < d; ++j) g[rows[i] * d + j] += self.grad[i * d + j];
      },
      "embedding");
}

GradCheckResult finite_diff_check(const std::function<Tensor()>& f, std::vector<Tensor> params, double step) {
  if (!(step > 0.0)) throw InvalidArgument("finite_diff_check: step must be positive");
  for (auto& p : params) p.zero_grad();
  const Tensor loss = f();
  if (!std::isfinite(loss.item())) throw NumericFailure("finite_diff_check: non-finite loss at the base point");
  backward(loss);

  GradCheckResult result;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = params[pi];
    const std::vector<double> analytic(p.grad().begin(), p.grad().end());
    auto& v = p.values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double orig = v[i];
      v[i] = orig + step;
      const double up = f().item();
      v[i] = orig - step;
      const double down = f().item();
      v[i] = orig;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw NumericFailure("finite_diff_check: non-finite loss probing parameter " + std::to_string(pi) +
                             " entry " + std::to_string(i));
      }
      const double numeric = (up - down) / (2.0 * step);
      const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
      if (err > result.max_rel_error) result = {err, pi, i};
    }
  }
  return result;
}

}  // namespace stulab::ad
