#include "timeprompt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "timeprompt/kernels.hpp"

namespace timeprompt {

namespace {

thread_local Tape* g_current_tape = nullptr;

using NodePtr = std::shared_ptr<detail::Node>;

NodePtr make_leaf(Shape shape, std::vector<double> data, bool requires_grad) {
  if (numel(shape) != data.size()) {
    throw DimensionError("tensor data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  return node;
}

// Wraps a freshly computed value; attaches it to the active tape when any
// parent is differentiable.
Tensor make_result(Shape shape, std::vector<double> data, const char* op,
                   std::vector<NodePtr> parents, std::function<void(detail::Node&)> backward) {
  auto node = make_leaf(std::move(shape), std::move(data), false);
  node->op = op;
  Tape* tape = g_current_tape;
  const bool track = tape != nullptr && std::any_of(parents.begin(), parents.end(),
                                                    [](const NodePtr& p) { return p->requires_grad; });
  if (track) {
    node->requires_grad = true;
    node->is_leaf = false;
    node->parents = std::move(parents);
    node->backward = std::move(backward);
    tape->record(node);
  }
  return Tensor(node);
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw std::invalid_argument(std::string(op) + ": undefined tensor");
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

bool broadcasts_to(const Shape& b, const Shape& a) {
  return numel(b) == 1 || is_suffix(b, a);
}

// [outer, len, inner] decomposition around one axis.
struct AxisSplit {
  std::size_t outer = 1;
  std::size_t len = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

void check_axis(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for shape " + shape_str(shape));
  }
}

// dst[pre, B, mid, A, post] (+)= src[pre, A, mid, B, post]
void swap_axes_copy(const double* src, double* dst, std::size_t pre, std::size_t na,
                    std::size_t mid, std::size_t nb, std::size_t post, bool accumulate) {
  for (std::size_t p = 0; p < pre; ++p) {
    for (std::size_t a = 0; a < na; ++a) {
      for (std::size_t m = 0; m < mid; ++m) {
        for (std::size_t b = 0; b < nb; ++b) {
          const std::size_t s = (((p * na + a) * mid + m) * nb + b) * post;
          const std::size_t d = (((p * nb + b) * mid + m) * na + a) * post;
          if (accumulate) {
            for (std::size_t q = 0; q < post; ++q) dst[d + q] += src[s + q];
          } else {
            std::copy_n(src + s, post, dst + d);
          }
        }
      }
    }
  }
}

double uniform01(std::mt19937_64& gen) {
  return static_cast<double>(gen() >> 11) * 0x1.0p-53;
}

}  // namespace

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::constant(Shape shape, std::vector<double> data) {
  return Tensor(make_leaf(std::move(shape), std::move(data), false));
}

Tensor Tensor::zeros(Shape shape) {
  const std::size_t n = numel(shape);
  return constant(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::full(Shape shape, double value) {
  const std::size_t n = numel(shape);
  return constant(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return constant({}, {value}); }

Tensor Tensor::parameter(Shape shape, std::vector<double> data) {
  return Tensor(make_leaf(std::move(shape), std::move(data), true));
}

const Shape& Tensor::shape() const {
  require_defined(*this, "shape");
  return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  check_axis(shape(), axis, "dim");
  return node_->shape[axis];
}

std::size_t Tensor::size() const { return defined() ? node_->data.size() : 0; }

std::span<const double> Tensor::data() const {
  require_defined(*this, "data");
  return node_->data;
}

std::span<double> Tensor::mutable_data() {
  require_defined(*this, "mutable_data");
  if (!node_->is_leaf) throw GraphError("mutable_data: only leaf tensors may be modified in place");
  return node_->data;
}

double Tensor::item() const {
  if (size() != 1) throw DimensionError("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
  return node_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  const Shape& s = shape();
  if (index.size() != s.size()) throw DimensionError("at: index rank does not match " + shape_str(s));
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= s[axis]) throw DimensionError("at: index out of range for " + shape_str(s));
    flat = flat * s[axis] + i;
    ++axis;
  }
  return node_->data[flat];
}

bool Tensor::requires_grad() const { return defined() && node_->requires_grad; }
bool Tensor::is_leaf() const { return defined() && node_->is_leaf; }
bool Tensor::has_grad() const { return defined() && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  require_defined(*this, "grad");
  return node_->grad;
}

std::span<double> Tensor::mutable_grad() {
  require_defined(*this, "mutable_grad");
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() {
  if (defined() && !node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

void Tensor::clear_grad() {
  if (defined()) node_->grad.clear();
}

void Tensor::set_requires_grad(bool flag) {
  require_defined(*this, "set_requires_grad");
  if (!node_->is_leaf) throw GraphError("set_requires_grad: only leaves can change trainability");
  node_->requires_grad = flag;
  if (!flag) node_->grad.clear();
}

Tensor Tensor::detach() const { return constant(shape(), node_->data); }

Tensor Tensor::clone() const {
  return Tensor(make_leaf(shape(), node_->data, node_->requires_grad && node_->is_leaf));
}

const char* Tensor::op_name() const { return defined() ? node_->op : "undefined"; }

// ---------------------------------------------------------------------------
// Tape

Tape::Tape() : previous_(g_current_tape) { g_current_tape = this; }

Tape::~Tape() {
  if (g_current_tape == this) g_current_tape = previous_;
}

Tape* Tape::current() { return g_current_tape; }

void Tape::record(std::shared_ptr<detail::Node> node) { nodes_.push_back(std::move(node)); }

void Tape::backward(const Tensor& loss) {
  if (consumed_) throw GraphError("backward: tape already consumed; call reset() before reuse");
  require_defined(loss, "backward");
  if (loss.size() != 1) {
    throw DimensionError("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw GraphError("backward: loss does not depend on any tensor that requires grad");
  }
  detail::Node& root = *loss.node();
  root.ensure_grad();
  root.grad[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    detail::Node& node = **it;
    if (!node.grad.empty() && node.backward) node.backward(node);
  }
  for (auto& node : nodes_) {
    node->backward = nullptr;
    node->parents.clear();
  }
  consumed_ = true;
}

void Tape::reset() {
  nodes_.clear();
  consumed_ = false;
}

const char* Tape::first_nonfinite_op() const {
  for (const auto& node : nodes_) {
    for (double v : node->data) {
      if (!std::isfinite(v)) return node->op;
    }
  }
  return nullptr;
}

NoGradGuard::NoGradGuard() : saved_(g_current_tape) { g_current_tape = nullptr; }
NoGradGuard::~NoGradGuard() { g_current_tape = saved_; }

// ---------------------------------------------------------------------------
// Elementwise

namespace {

enum class Binary { kAdd, kSub, kMul };

Tensor binary(const Tensor& a_in, const Tensor& b_in, Binary kind, const char* op) {
  require_defined(a_in, op);
  require_defined(b_in, op);
  Tensor a = a_in;
  Tensor b = b_in;
  if (!broadcasts_to(b.shape(), a.shape())) {
    if (kind != Binary::kSub && broadcasts_to(a.shape(), b.shape())) {
      std::swap(a, b);
    } else {
      throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(b_in.shape()) +
                           " against " + shape_str(a_in.shape()));
    }
  }
  const auto ad = a.data();
  const auto bd = b.data();
  const std::size_t n = ad.size();
  const std::size_t bs = bd.size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double bv = bd[i % bs];
    switch (kind) {
      case Binary::kAdd: out[i] = ad[i] + bv; break;
      case Binary::kSub: out[i] = ad[i] - bv; break;
      case Binary::kMul: out[i] = ad[i] * bv; break;
    }
  }
  return make_result(a.shape(), std::move(out), op, {a.node(), b.node()},
                     [kind](detail::Node& self) {
                       auto& pa = *self.parents[0];
                       auto& pb = *self.parents[1];
                       const std::size_t n = self.grad.size();
                       const std::size_t bs = pb.data.size();
                       if (pa.requires_grad) {
                         pa.ensure_grad();
                         for (std::size_t i = 0; i < n; ++i) {
                           pa.grad[i] += kind == Binary::kMul ? self.grad[i] * pb.data[i % bs]
                                                              : self.grad[i];
                         }
                       }
                       if (pb.requires_grad) {
                         pb.ensure_grad();
                         for (std::size_t i = 0; i < n; ++i) {
                           double g = self.grad[i];
                           if (kind == Binary::kSub) g = -g;
                           if (kind == Binary::kMul) g *= pa.data[i];
                           pb.grad[i % bs] += g;
                         }
                       }
                     });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::kAdd, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::kSub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::kMul, "mul"); }

Tensor scale(const Tensor& a, double factor) {
  require_defined(a, "scale");
  std::vector<double> out(a.data().begin(), a.data().end());
  for (double& v : out) v *= factor;
  return make_result(a.shape(), std::move(out), "scale", {a.node()},
                     [factor](detail::Node& self) {
                       auto& p = *self.parents[0];
                       p.ensure_grad();
                       for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += factor * self.grad[i];
                     });
}

// ---------------------------------------------------------------------------
// Matmul

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() < 2 || bs.size() < 2) {
    throw DimensionError("matmul: operands must have rank >= 2, got " + shape_str(as) + " and " +
                         shape_str(bs));
  }
  const Shape a_batch(as.begin(), as.end() - 2);
  const Shape b_batch(bs.begin(), bs.end() - 2);
  const std::size_t m = as[as.size() - 2];
  const std::size_t k = as.back();
  const std::size_t n = bs.back();
  if (bs[bs.size() - 2] != k || !is_suffix(b_batch, a_batch)) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(as) + " and " + shape_str(bs));
  }
  kernels::GemmShape g;
  g.batch = numel(a_batch);
  g.b_batch = numel(b_batch);
  g.m = m;
  g.k = k;
  g.n = n;
  Shape out_shape = a_batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<double> out(g.batch * m * n);
  kernels::gemm(a.data().data(), b.data().data(), out.data(), g);
  return make_result(std::move(out_shape), std::move(out), "matmul", {a.node(), b.node()},
                     [g](detail::Node& self) {
                       auto& pa = *self.parents[0];
                       auto& pb = *self.parents[1];
                       if (pa.requires_grad) {
                         pa.ensure_grad();
                         // dA = dC * B^T
                         kernels::GemmShape s;
                         s.batch = g.batch;
                         s.b_batch = g.b_batch;
                         s.m = g.m;
                         s.k = g.n;
                         s.n = g.k;
                         s.trans_b = true;
                         s.accumulate = true;
                         kernels::gemm(self.grad.data(), pb.data.data(), pa.grad.data(), s);
                       }
                       if (pb.requires_grad) {
                         pb.ensure_grad();
                         // dB[j] = sum_o A[o, j]^T dC[o, j]
                         kernels::GemmShape s;
                         s.batch = g.b_batch;
                         s.b_batch = g.b_batch;
                         s.m = g.k;
                         s.k = g.m;
                         s.n = g.n;
                         s.trans_a = true;
                         s.accumulate = true;
                         const std::size_t outer = g.batch / g.b_batch;
                         for (std::size_t o = 0; o < outer; ++o) {
                           kernels::gemm(pa.data.data() + o * g.b_batch * g.m * g.k,
                                         self.grad.data() + o * g.b_batch * g.m * g.n,
                                         pb.grad.data(), s);
                         }
                       }
                     });
}

// ---------------------------------------------------------------------------
// Layout

Tensor transpose(const Tensor& x, std::size_t axis0, std::size_t axis1) {
  require_defined(x, "transpose");
  const Shape& s = x.shape();
  check_axis(s, axis0, "transpose");
  check_axis(s, axis1, "transpose");
  if (axis0 == axis1) return x;
  if (axis0 > axis1) std::swap(axis0, axis1);
  std::size_t pre = 1;
  std::size_t mid = 1;
  std::size_t post = 1;
  for (std::size_t i = 0; i < axis0; ++i) pre *= s[i];
  for (std::size_t i = axis0 + 1; i < axis1; ++i) mid *= s[i];
  for (std::size_t i = axis1 + 1; i < s.size(); ++i) post *= s[i];
  const std::size_t na = s[axis0];
  const std::size_t nb = s[axis1];
  Shape out_shape = s;
  std::swap(out_shape[axis0], out_shape[axis1]);
  std::vector<double> out(x.size());
  swap_axes_copy(x.data().data(), out.data(), pre, na, mid, nb, post, false);
  return make_result(std::move(out_shape), std::move(out), "transpose", {x.node()},
                     [=](detail::Node& self) {
                       auto& p = *self.parents[0];
                       p.ensure_grad();
                       swap_axes_copy(self.grad.data(), p.grad.data(), pre, nb, mid, na, post, true);
                     });
}

Tensor reshape(const Tensor& x, Shape shape) {
  require_defined(x, "reshape");
  if (numel(shape) != x.size()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  return make_result(std::move(shape), std::vector<double>(x.data().begin(), x.data().end()),
                     "reshape", {x.node()}, [](detail::Node& self) {
                       auto& p = *self.parents[0];
                       p.ensure_grad();
                       for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
                     });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  for (const auto& p : parts) require_defined(p, "concat");
  const Shape& first = parts.front().shape();
  check_axis(first, axis, "concat");
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> lens;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == first[i];
    if (!ok) {
      throw DimensionError("concat: shape " + shape_str(s) + " incompatible with " +
                           shape_str(first) + " along axis " + std::to_string(axis));
    }
    lens.push_back(s[axis]);
    out_shape[axis] += s[axis];
  }
  const AxisSplit split = split_axis(out_shape, axis);
  std::vector<double> out(numel(out_shape));
  std::size_t offset = 0;
  std::vector<NodePtr> parents;
  for (std::size_t idx = 0; idx < parts.size(); ++idx) {
    const auto src = parts[idx].data();
    const std::size_t len = lens[idx];
    for (std::size_t o = 0; o < split.outer; ++o) {
      std::copy_n(src.data() + o * len * split.inner, len * split.inner,
                  out.data() + (o * split.len + offset) * split.inner);
    }
    offset += len;
    parents.push_back(parts[idx].node());
  }
  return make_result(std::move(out_shape), std::move(out), "concat", std::move(parents),
                     [split, lens](detail::Node& self) {
                       std::size_t offset = 0;
                       for (std::size_t idx = 0; idx < lens.size(); ++idx) {
                         auto& p = *self.parents[idx];
                         const std::size_t len = lens[idx];
                         if (p.requires_grad) {
                           p.ensure_grad();
                           for (std::size_t o = 0; o < split.outer; ++o) {
                             const double* g = self.grad.data() + (o * split.len + offset) * split.inner;
                             double* dst = p.grad.data() + o * len * split.inner;
                             for (std::size_t i = 0; i < len * split.inner; ++i) dst[i] += g[i];
                           }
                         }
                         offset += len;
                       }
                     });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  require_defined(x, "slice");
  const Shape& s = x.shape();
  check_axis(s, axis, "slice");
  if (begin > end || end > s[axis]) {
    throw DimensionError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") invalid for axis of length " + std::to_string(s[axis]));
  }
  const AxisSplit split = split_axis(s, axis);
  const std::size_t len = end - begin;
  Shape out_shape = s;
  out_shape[axis] = len;
  std::vector<double> out(split.outer * len * split.inner);
  const auto src = x.data();
  for (std::size_t o = 0; o < split.outer; ++o) {
    std::copy_n(src.data() + (o * split.len + begin) * split.inner, len * split.inner,
                out.data() + o * len * split.inner);
  }
  return make_result(std::move(out_shape), std::move(out), "slice", {x.node()},
                     [split, begin, len](detail::Node& self) {
                       auto& p = *self.parents[0];
                       p.ensure_grad();
                       for (std::size_t o = 0; o < split.outer; ++o) {
                         double* dst = p.grad.data() + (o * split.len + begin) * split.inner;
                         const double* g = self.grad.data() + o * len * split.inner;
                         for (std::size_t i = 0; i < len * split.inner; ++i) dst[i] += g[i];
                       }
                     });
}

// ---------------------------------------------------------------------------
// Reductions

namespace {

Tensor reduce_axis(const Tensor& x, std::size_t axis, bool average, const char* op) {
  require_defined(x, op);
  const Shape& s = x.shape();
  check_axis(s, axis, op);
  const AxisSplit split = split_axis(s, axis);
  if (split.len == 0) throw DimensionError(std::string(op) + ": empty axis");
  const double factor = average ? 1.0 / static_cast<double>(split.len) : 1.0;
  Shape out_shape = s;
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  std::vector<double> out(split.outer * split.inner, 0.0);
  const auto src = x.data();
  for (std::size_t o = 0; o < split.outer; ++o) {
    for (std::size_t l = 0; l < split.len; ++l) {
      const double* row = src.data() + (o * split.len + l) * split.inner;
      double* dst = out.data() + o * split.inner;
      for (std::size_t i = 0; i < split.inner; ++i) dst[i] += row[i];
    }
  }
  if (average) {
    for (double& v : out) v *= factor;
  }
  return make_result(std::move(out_shape), std::move(out), op, {x.node()},
                     [split, factor](detail::Node& self) {
                       auto& p = *self.parents[0];
                       p.ensure_grad();
                       for (std::size_t o = 0; o < split.outer; ++o) {
                         const double* g = self.grad.data() + o * split.inner;
                         for (std::size_t l = 0; l < split.len; ++l) {
                           double* dst = p.grad.data() + (o * split.len + l) * split.inner;
                           for (std::size_t i = 0; i < split.inner; ++i) dst[i] += factor * g[i];
                         }
                       }
                     });
}

}  // namespace

Tensor sum(const Tensor& x, std::size_t axis) { return reduce_axis(x, axis, false, "sum"); }
Tensor mean(const Tensor& x, std::size_t axis) { return reduce_axis(x, axis, true, "mean"); }

Tensor sum_all(const Tensor& x) {
  require_defined(x, "sum_all");
  return reduce_axis(reshape(x, {x.size()}), 0, false, "sum");
}

Tensor mean_all(const Tensor& x) {
  require_defined(x, "mean_all");
  return reduce_axis(reshape(x, {x.size()}), 0, true, "mean");
}

// ---------------------------------------------------------------------------
// Nonlinearities

Tensor softmax(const Tensor& x, std::size_t axis) {
  require_defined(x, "softmax");
  const Shape& s = x.shape();
  check_axis(s, axis, "softmax");
  const AxisSplit split = split_axis(s, axis);
  if (split.len == 0) throw DimensionError("softmax: empty axis");
  std::vector<double> out(x.size());
  if (split.inner == 1) {
    kernels::softmax_rows(x.data().data(), out.data(), split.outer, split.len);
  } else {
    // Strided case: gather each fibre, reuse the row kernel.
    std::vector<double> fibre(split.len);
    std::vector<double> res(split.len);
    const auto src = x.data();
    for (std::size_t o = 0; o < split.outer; ++o) {
      for (std::size_t i = 0; i < split.inner; ++i) {
        for (std::size_t l = 0; l < split.len; ++l) fibre[l] = src[(o * split.len + l) * split.inner + i];
        kernels::softmax_rows_serial(fibre.data(), res.data(), 1, split.len);
        for (std::size_t l = 0; l < split.len; ++l) out[(o * split.len + l) * split.inner + i] = res[l];
      }
    }
  }
  return make_result(s, std::move(out), "softmax", {x.node()}, [split](detail::Node& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    if (split.inner == 1) {
      kernels::softmax_rows_backward(self.data.data(), self.grad.data(), p.grad.data(), split.outer,
                                     split.len);
      return;
    }
    std::vector<double> y(split.len), dy(split.len), dx(split.len);
    for (std::size_t o = 0; o < split.outer; ++o) {
      for (std::size_t i = 0; i < split.inner; ++i) {
        for (std::size_t l = 0; l < split.len; ++l) {
          const std::size_t at = (o * split.len + l) * split.inner + i;
          y[l] = self.data[at];
          dy[l] = self.grad[at];
          dx[l] = 0.0;
        }
        kernels::softmax_rows_backward_serial(y.data(), dy.data(), dx.data(), 1, split.len);
        for (std::size_t l = 0; l < split.len; ++l) p.grad[(o * split.len + l) * split.inner + i] += dx[l];
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_defined(x, "layer_norm");
  const Shape& s = x.shape();
  if (s.empty()) throw DimensionError("layer_norm: rank-0 input");
  const std::size_t d = s.back();
  if (gamma.size() != d || beta.size() != d) {
    throw DimensionError("layer_norm: gamma/beta must have length " + std::to_string(d));
  }
  const std::size_t rows = x.size() / d;
  const auto src = x.data();
  const auto gd = gamma.data();
  const auto bd = beta.data();
  std::vector<double> out(x.size());
  auto xhat = std::make_shared<std::vector<double>>(x.size());
  auto rstd = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = src.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*rstd)[r] = inv;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mu) * inv;
      (*xhat)[r * d + j] = h;
      out[r * d + j] = h * gd[j] + bd[j];
    }
  }
  return make_result(s, std::move(out), "layer_norm", {x.node(), gamma.node(), beta.node()},
                     [d, rows, xhat, rstd](detail::Node& self) {
                       auto& px = *self.parents[0];
                       auto& pg = *self.parents[1];
                       auto& pb = *self.parents[2];
                       if (pg.requires_grad) pg.ensure_grad();
                       if (pb.requires_grad) pb.ensure_grad();
                       if (px.requires_grad) px.ensure_grad();
                       std::vector<double> dxhat(d);
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double* g = self.grad.data() + r * d;
                         const double* h = xhat->data() + r * d;
                         double mean_dx = 0.0;
                         double mean_dxh = 0.0;
                         for (std::size_t j = 0; j < d; ++j) {
                           if (pg.requires_grad) pg.grad[j] += g[j] * h[j];
                           if (pb.requires_grad) pb.grad[j] += g[j];
                           dxhat[j] = g[j] * pg.data[j];
                           mean_dx += dxhat[j];
                           mean_dxh += dxhat[j] * h[j];
                         }
                         if (!px.requires_grad) continue;
                         mean_dx /= static_cast<double>(d);
                         mean_dxh /= static_cast<double>(d);
                         for (std::size_t j = 0; j < d; ++j) {
                           px.grad[r * d + j] += (*rstd)[r] * (dxhat[j] - mean_dx - h[j] * mean_dxh);
                         }
                       }
                     });
}

Tensor gelu(const Tensor& x) {
  require_defined(x, "gelu");
  std::vector<double> out(x.size());
  kernels::gelu(x.data().data(), out.data(), x.size());
  return make_result(x.shape(), std::move(out), "gelu", {x.node()}, [](detail::Node& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    const double k = std::sqrt(2.0 / std::numbers::pi);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double v = p.data[i];
      const double t = std::tanh(k * (v + 0.044715 * v * v * v));
      const double deriv = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * k * (1.0 + 3.0 * 0.044715 * v * v);
      p.grad[i] += self.grad[i] * deriv;
    }
  });
}

Tensor dropout(const Tensor& x, double p, std::uint64_t seed, bool training) {
  require_defined(x, "dropout");
  if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout: p must lie in [0, 1)");
  if (!training || p == 0.0) return x;
  std::mt19937_64 gen(seed);
  const double keep_scale = 1.0 / (1.0 - p);
  auto mask = std::make_shared<std::vector<double>>(x.size());
  std::vector<double> out(x.size());
  const auto src = x.data();
  for (std::size_t i = 0; i < x.size(); ++i) {
    (*mask)[i] = uniform01(gen) >= p ? keep_scale : 0.0;
    out[i] = src[i] * (*mask)[i];
  }
  return make_result(x.shape(), std::move(out), "dropout", {x.node()}, [mask](detail::Node& self) {
    auto& parent = *self.parents[0];
    parent.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) parent.grad[i] += self.grad[i] * (*mask)[i];
  });
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> indices) {
  require_defined(table, "gather_rows");
  const Shape& s = table.shape();
  if (s.empty()) throw DimensionError("gather_rows: table must have rank >= 1");
  const std::size_t rows = s[0];
  const std::size_t width = rows == 0 ? 0 : table.size() / rows;
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  for (std::size_t i : idx) {
    if (i >= rows) {
      throw std::out_of_range("gather_rows: index " + std::to_string(i) + " out of range for " +
                              std::to_string(rows) + " rows");
    }
  }
  Shape out_shape = s;
  out_shape[0] = idx.size();
  std::vector<double> out(idx.size() * width);
  const auto src = table.data();
  for (std::size_t r = 0; r < idx.size(); ++r) {
    std::copy_n(src.data() + idx[r] * width, width, out.data() + r * width);
  }
  return make_result(std::move(out_shape), std::move(out), "gather_rows", {table.node()},
                     [idx = std::move(idx), width](detail::Node& self) {
                       auto& p = *self.parents[0];
                       p.ensure_grad();
                       for (std::size_t r = 0; r < idx.size(); ++r) {
                         double* dst = p.grad.data() + idx[r] * width;
                         const double* g = self.grad.data() + r * width;
                         for (std::size_t j = 0; j < width; ++j) dst[j] += g[j];
                       }
                     });
}

// ---------------------------------------------------------------------------
// Gradient oracle

double finite_diff_check(const std::function<Tensor()>& loss, Tensor& param, double eps) {
  if (eps <= 0.0) throw std::invalid_argument("finite_diff_check: eps must be positive");
  if (!param.is_leaf() || !param.requires_grad()) {
    throw std::invalid_argument("finite_diff_check: parameter must be a trainable leaf");
  }
  param.clear_grad();
  std::vector<double> analytic(param.size(), 0.0);
  {
    Tape tape;
    Tensor value = loss();
    if (value.size() != 1) {
      throw DimensionError("finite_diff_check: function returned shape " + shape_str(value.shape()));
    }
    if (value.requires_grad()) {
      tape.backward(value);
      if (param.has_grad()) analytic.assign(param.grad().begin(), param.grad().end());
    }
  }
  NoGradGuard guard;
  auto values = param.mutable_data();
  double worst = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + eps;
    const double plus = loss().item();
    values[i] = saved - eps;
    const double minus = loss().item();
    values[i] = saved;
    const double numeric = (plus - minus) / (2.0 * eps);
    worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i])));
  }
  return worst;
}

double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps) {
  Tensor param = Tensor::parameter(x.shape(), std::vector<double>(x.data().begin(), x.data().end()));
  return finite_diff_check([&]() { return f(param); }, param, eps);
}

}  // namespace timeprompt
