#pragma once

// Dense f64 tensors with reverse-mode differentiation.
//
// Every operation that has at least one input with requires_grad records a
// node holding its inputs and a backward rule. backward(loss) orders the nodes
// reachable from the loss topologically and runs the rules in reverse. Leaf
// gradients accumulate across calls until zero_grad(); intermediate gradients
// are reset on every call.
//
// Broadcasting is limited to leading axes: a binary op accepts a second operand
// whose shape equals the trailing axes of the first.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace stulab::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first needed
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;  // null for leaves
  const char* op = "leaf";

  bool is_leaf() const { return !backward; }
  std::vector<double>& grad_buffer();
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::ptrdiff_t axis) const;
  std::size_t size() const { return node_->value.size(); }

  std::span<const double> data() const { return node_->value; }
  std::span<double> mutable_data() { return node_->value; }
  std::vector<double>& values() { return node_->value; }
  const std::vector<double>& values() const { return node_->value; }

  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient buffer; zeros if backward has not reached this tensor.
  std::span<const double> grad() const;
  void zero_grad() { node_->grad.clear(); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  /// Copy of the value without graph history.
  Tensor detach() const;

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Creates an op result. `backward` receives the result node (with its grad
/// populated) and must accumulate into inputs that require grad. When no input
/// requires grad the result is a plain constant and `backward` is dropped.
Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                   std::function<void(Node&)> backward, const char* op);

/// Nodes reachable from a root, ordered so every node comes after its inputs.
class Tape {
 public:
  static Tape record(const Tensor& root);
  const std::vector<Node*>& nodes() const { return nodes_; }

 private:
  std::vector<Node*> nodes_;
};

/// Populates gradients of every requires_grad tensor that `loss` depends on.
/// Throws InvalidArgument when `loss` is not a scalar.
void backward(const Tensor& loss);

// ---- elementwise and structural ops --------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor neg(const Tensor& a);

Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor silu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor square(const Tensor& a);

/// [..., m, k] x [k, n] -> [..., m, n], or batched [..., m, k] x [..., k, n]
/// when both operands have the same leading axes.
Tensor matmul(const Tensor& a, const Tensor& b);
/// Swaps the last two axes.
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, std::ptrdiff_t axis);
Tensor slice(const Tensor& a, std::ptrdiff_t axis, std::size_t start, std::size_t length);

/// Softmax over the last axis, max-subtracted.
Tensor softmax(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Sums out the last axis.
Tensor sum_last(const Tensor& a);
/// Multiplies every last-axis row of `a` by the matching entry of `s`, whose
/// shape is a.shape without its last axis.
Tensor scale_rows(const Tensor& a, const Tensor& s);
/// Rows of `table` ([V, d]) picked by `indices`; result shape is
/// `index_shape` + [d].
Tensor embedding(const Tensor& table, std::span<const std::int64_t> indices, Shape index_shape);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

// ---- gradient checking -----------------------------------------------------

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
};

/// Compares backward() against central differences for every entry of every
/// tensor in `params`. `f` must rebuild the graph from the current parameter
/// values each call. Error per entry is |analytic - numeric| / max(1, |analytic|).
/// Throws NumericFailure on a non-finite loss and InvalidArgument when step <= 0.
GradCheckResult finite_diff_check(const std::function<Tensor()>& f, std::vector<Tensor> params,
                                  double step = 1e-5);

}  // namespace stulab::ad
