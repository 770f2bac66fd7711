#pragma once

// Dense 64-bit tensors with a dynamic reverse-mode tape.
//
// Ops record onto the thread's active Tape when at least one input requires a
// gradient. Without an active tape every op produces a constant, which is how
// evaluation runs.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace timeprompt {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty == absent
  bool requires_grad = false;
  bool is_leaf = true;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(Shape shape, std::vector<double> data);
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  // Trainable leaf.
  static Tensor parameter(Shape shape, std::vector<double> data);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const;

  std::span<const double> data() const;
  // Leaves only: in-place mutation is reserved for optimizers and loaders.
  std::span<double> mutable_data();
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  bool is_leaf() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();
  void clear_grad();
  void set_requires_grad(bool flag);

  // Same values, cut from the graph.
  Tensor detach() const;
  // Deep copy of the values as a fresh leaf with the same requires_grad flag.
  Tensor clone() const;

  const char* op_name() const;

  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

// Records the operations of one forward pass. Constructing a Tape makes it
// the active tape of the calling thread until it is destroyed.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Populates grad on every requires_grad leaf reachable from `loss`.
  // A second call without reset() is an error.
  void backward(const Tensor& loss);
  void reset();

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }
  // First recorded op whose output contains NaN/Inf, or nullptr.
  const char* first_nonfinite_op() const;

  void record(std::shared_ptr<detail::Node> node);
  static Tape* current();

 private:
  std::vector<std::shared_ptr<detail::Node>> nodes_;
  bool consumed_ = false;
  Tape* previous_ = nullptr;
};

// Suspends recording for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Tape* saved_;
};

// ---------------------------------------------------------------------------
// Ops. `b` in add/sub/mul may broadcast: either one element, or a shape equal
// to a trailing suffix of a's shape.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

// a: [..., m, k]; b: [..., k, n] where b's batch axes are a suffix of a's.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x, std::size_t axis0, std::size_t axis1);
Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);

Tensor sum(const Tensor& x, std::size_t axis);
Tensor mean(const Tensor& x, std::size_t axis);
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

Tensor softmax(const Tensor& x, std::size_t axis);
// Normalizes over the last axis; gamma/beta have the last axis' length.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
// tanh approximation, as in GPT-2.
Tensor gelu(const Tensor& x);
// Inverted dropout; the mask is a pure function of `seed`.
Tensor dropout(const Tensor& x, double p, std::uint64_t seed, bool training);
// table: [R, ...]; result: [indices.size(), ...]. Backward scatter-adds.
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> indices);

// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
// `loss` is re-evaluated with `param` perturbed in place and must return a
// one-element tensor.
double finite_diff_check(const std::function<Tensor()>& loss, Tensor& param, double eps = 1e-5);
double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                         double eps = 1e-5);

}  // namespace timeprompt
