// SPDX-License-Identifier: Apache-2.0
#include "wmoe/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <sstream>
#include <unordered_set>

#include "wmoe/kernels.hpp"
#include "wmoe/rng.hpp"

namespace wmoe {

namespace detail {

namespace {
thread_local bool t_grad_enabled = true;
}

bool grad_enabled() { return t_grad_enabled; }
void set_grad_enabled(bool on) { t_grad_enabled = on; }

void Node::ensure_grad() {
  if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
}

}  // namespace detail

NoGradGuard::NoGradGuard() : prev_(detail::grad_enabled()) { detail::set_grad_enabled(false); }
NoGradGuard::~NoGradGuard() { detail::set_grad_enabled(prev_); }

namespace {

using detail::Node;
using detail::NodePtr;

long shape_numel(const Shape& s) {
  long n = 1;
  for (int e : s) {
    if (e <= 0) throw dim_error("tensor extents must be positive, got " + shape_str(s));
    n *= e;
  }
  return n;
}

NodePtr make_leaf(std::vector<double> data, const Shape& shape, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->shape = shape;
  n->data = std::move(data);
  n->requires_grad = requires_grad;
  if (requires_grad) n->ensure_grad();
  return n;
}

// Result node of an op. Gradients are tracked only when the tape is enabled
// and at least one input requires them.
NodePtr make_result(Shape shape, std::vector<double> data, std::vector<NodePtr> grad_parents,
                    std::function<void(Node&)> backward) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  std::erase_if(grad_parents, [](const NodePtr& p) { return !p || !p->requires_grad; });
  if (detail::grad_enabled() && !grad_parents.empty()) {
    n->requires_grad = true;
    n->parents = std::move(grad_parents);
    n->backward = std::move(backward);
  }
  return n;
}

void accum(const NodePtr& p, const std::vector<double>& g) {
  if (!p->requires_grad) return;
  p->ensure_grad();
  for (std::size_t i = 0; i < g.size(); ++i) p->grad[i] += g[i];
}

const Shape& check_defined(const Tensor& t, const char* who) {
  if (!t.defined()) throw contract_error(std::string(who) + ": undefined tensor");
  return t.shape();
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* who) {
  check_defined(a, who);
  check_defined(b, who);
  if (a.shape() != b.shape()) {
    throw dim_error(std::string(who) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                    shape_str(b.shape()));
  }
}

}  // namespace

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

// --- Tensor handle ------------------------------------------------------

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  return wrap(make_leaf(std::vector<double>(shape_numel(shape), 0.0), shape, requires_grad));
}

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
  return wrap(make_leaf(std::vector<double>(shape_numel(shape), value), shape, requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return wrap(make_leaf({value}, Shape{1}, requires_grad));
}

Tensor Tensor::from(std::vector<double> data, const Shape& shape, bool requires_grad) {
  if (static_cast<long>(data.size()) != shape_numel(shape)) {
    throw dim_error("tensor data length " + std::to_string(data.size()) +
                    " does not match shape " + shape_str(shape));
  }
  return wrap(make_leaf(std::move(data), shape, requires_grad));
}

Tensor Tensor::wrap(detail::NodePtr n) {
  Tensor t;
  t.node_ = std::move(n);
  return t;
}

const Shape& Tensor::shape() const { return check_defined(*this, "shape"), node_->shape; }
int Tensor::rank() const { return static_cast<int>(shape().size()); }
long Tensor::size() const { return static_cast<long>(node_->data.size()); }
bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

std::vector<double>& Tensor::data() {
  check_defined(*this, "data");
  return node_->data;
}
const std::vector<double>& Tensor::data() const {
  check_defined(*this, "data");
  return node_->data;
}

std::vector<double>& Tensor::grad() {
  check_defined(*this, "grad");
  if (!node_->requires_grad) throw contract_error("grad: tensor does not require grad");
  node_->ensure_grad();
  return node_->grad;
}
const std::vector<double>& Tensor::grad() const {
  return const_cast<Tensor*>(this)->grad();
}

void Tensor::zero_grad() {
  if (node_ && node_->requires_grad) {
    node_->ensure_grad();
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
  }
}

double Tensor::value() const {
  check_defined(*this, "value");
  if (size() != 1) throw contract_error("value: tensor is not scalar, shape " + shape_str(shape()));
  return node_->data[0];
}

// --- elementwise ---------------------------------------------------------

namespace {

template <class Fwd, class Bwd>
Tensor unary_op(const Tensor& a, const char* who, Fwd fwd, Bwd dfdx) {
  check_defined(a, who);
  const auto& x = a.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = fwd(x[i]);
  auto an = a.node();
  return Tensor::wrap(make_result(a.shape(), std::move(out), {an}, [an, dfdx](Node& n) {
    std::vector<double> g(n.data.size());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = n.grad[i] * dfdx(an->data[i], n.data[i]);
    accum(an, g);
  }));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  const auto& xa = a.data();
  const auto& xb = b.data();
  std::vector<double> out(xa.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xa[i] + xb[i];
  auto an = a.node(), bn = b.node();
  return Tensor::wrap(make_result(a.shape(), std::move(out), {an, bn}, [an, bn](Node& n) {
    accum(an, n.grad);
    accum(bn, n.grad);
  }));
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  const auto& xa = a.data();
  const auto& xb = b.data();
  std::vector<double> out(xa.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xa[i] - xb[i];
  auto an = a.node(), bn = b.node();
  return Tensor::wrap(make_result(a.shape(), std::move(out), {an, bn}, [an, bn](Node& n) {
    accum(an, n.grad);
    if (bn->requires_grad) {
      std::vector<double> g(n.grad.size());
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = -n.grad[i];
      accum(bn, g);
    }
  }));
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  const auto& xa = a.data();
  const auto& xb = b.data();
  std::vector<double> out(xa.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xa[i] * xb[i];
  auto an = a.node(), bn = b.node();
  return Tensor::wrap(make_result(a.shape(), std::move(out), {an, bn}, [an, bn](Node& n) {
    if (an->requires_grad) {
      std::vector<double> g(n.grad.size());
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = n.grad[i] * bn->data[i];
      accum(an, g);
    }
    if (bn->requires_grad) {
      std::vector<double> g(n.grad.size());
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = n.grad[i] * an->data[i];
      accum(bn, g);
    }
  }));
}

Tensor div(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "div");
  const auto& xa = a.data();
  const auto& xb = b.data();
  std::vector<double> out(xa.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xa[i] / xb[i];
  auto an = a.node(), bn = b.node();
  return Tensor::wrap(make_result(a.shape(), std::move(out), {an, bn}, [an, bn](Node& n) {
    if (an->requires_grad) {
      std::vector<double> g(n.grad.size());
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = n.grad[i] / bn->data[i];
      accum(an, g);
    }
    if (bn->requires_grad) {
      std::vector<double> g(n.grad.size());
      for (std::size_t i = 0; i < g.size(); ++i)
        g[i] = -n.grad[i] * an->data[i] / (bn->data[i] * bn->data[i]);
      accum(bn, g);
    }
  }));
}

Tensor neg(const Tensor& a) {
  return unary_op(a, "neg", [](double x) { return -x; },
                  [](double, double) { return -1.0; });
}

Tensor add_scalar(const Tensor& a, double c) {
  return unary_op(a, "add_scalar", [c](double x) { return x + c; },
                  [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& a, double c) {
  return unary_op(a, "mul_scalar", [c](double x) { return x * c; },
                  [c](double, double) { return c; });
}

Tensor relu(const Tensor& a) {
  // Subgradient at exactly 0 is 0.
  return unary_op(a, "relu", [](double x) { return x > 0 ? x : 0.0; },
                  [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
  return unary_op(a, "sigmoid",
                  [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
                  [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh_op(const Tensor& a) {
  return unary_op(a, "tanh", [](double x) { return std::tanh(x); },
                  [](double, double y) { return 1.0 - y * y; });
}

Tensor exp_op(const Tensor& a) {
  return unary_op(a, "exp", [](double x) { return std::exp(x); },
                  [](double, double y) { return y; });
}

Tensor log_op(const Tensor& a) {
  return unary_op(a, "log", [](double x) { return std::log(x); },
                  [](double x, double) { return 1.0 / x; });
}

Tensor square(const Tensor& a) {
  return unary_op(a, "square", [](double x) { return x * x; },
                  [](double x, double) { return 2.0 * x; });
}

Tensor pow_scalar(const Tensor& a, double p) {
  return unary_op(a, "pow_scalar", [p](double x) { return std::pow(x, p); },
                  [p](double x, double) { return p == 0.0 ? 0.0 : p * std::pow(x, p - 1.0); });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  if (lo > hi) throw contract_error("clamp: lo > hi");
  return unary_op(a, "clamp", [lo, hi](double x) { return std::clamp(x, lo, hi); },
                  [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

// --- linear algebra -------------------------------------------------------

namespace {
void check_rank2(const Tensor& t, const char* who) {
  check_defined(t, who);
  if (t.rank() != 2) {
    throw dim_error(std::string(who) + ": expected rank-2 tensor, got " + shape_str(t.shape()));
  }
}
}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_rank2(a, "matmul");
  check_rank2(b, "matmul");
  const int m = a.shape()[0], k = a.shape()[1];
  const int k2 = b.shape()[0], n = b.shape()[1];
  if (k != k2) {
    throw dim_error("matmul: inner extents mismatch " + shape_str(a.shape()) + " x " +
                    shape_str(b.shape()));
  }
  std::vector<double> out(static_cast<std::size_t>(m) * n);
  kernels::matmul(a.data().data(), b.data().data(), out.data(), m, k, n);
  auto an = a.node(), bn = b.node();
  return Tensor::wrap(make_result({m, n}, std::move(out), {an, bn}, [an, bn, m, k, n](Node& nd) {
    if (an->requires_grad) {
      std::vector<double> g(static_cast<std::size_t>(m) * k);
      kernels::matmul_nt(nd.grad.data(), bn->data.data(), g.data(), m, n, k);
      accum(an, g);
    }
    if (bn->requires_grad) {
      std::vector<double> g(static_cast<std::size_t>(k) * n);
      kernels::matmul_tn(an->data.data(), nd.grad.data(), g.data(), k, m, n);
      accum(bn, g);
    }
  }));
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  check_rank2(a, "matmul_nt");
  check_rank2(b, "matmul_nt");
  const int m = a.shape()[0], k = a.shape()[1];
  const int n = b.shape()[0], k2 = b.shape()[1];
  if (k != k2) {
    throw dim_error("matmul_nt: inner extents mismatch " + shape_str(a.shape()) + " x " +
                    shape_str(b.shape()) + "^T");
  }
  std::vector<double> out(static_cast<std::size_t>(m) * n);
  kernels::matmul_nt(a.data().data(), b.data().data(), out.data(), m, k, n);
  auto an = a.node(), bn = b.node();
  return Tensor::wrap(make_result({m, n}, std::move(out), {an, bn}, [an, bn, m, k, n](Node& nd) {
    if (an->requires_grad) {
      std::vector<double> g(static_cast<std::size_t>(m) * k);
      kernels::matmul(nd.grad.data(), bn->data.data(), g.data(), m, n, k);
      accum(an, g);
    }
    if (bn->requires_grad) {
      std::vector<double> g(static_cast<std::size_t>(n) * k);
      kernels::matmul_tn(nd.grad.data(), an->data.data(), g.data(), n, m, k);
      accum(bn, g);
    }
  }));
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  check_rank2(a, "matmul_tn");
  check_rank2(b, "matmul_tn");
  const int k = a.shape()[0], m = a.shape()[1];
  const int k2 = b.shape()[0], n = b.shape()[1];
  if (k != k2) {
    throw dim_error("matmul_tn: inner extents mismatch " + shape_str(a.shape()) + "^T x " +
                    shape_str(b.shape()));
  }
  std::vector<double> out(static_cast<std::size_t>(m) * n);
  kernels::matmul_tn(a.data().data(), b.data().data(), out.data(), m, k, n);
  auto an = a.node(), bn = b.node();
  return Tensor::wrap(make_result({m, n}, std::move(out), {an, bn}, [an, bn, m, k, n](Node& nd) {
    if (an->requires_grad) {
      // dA[k,m] = B[k,n] * G[m,n]^T
      std::vector<double> g(static_cast<std::size_t>(k) * m);
      kernels::matmul_nt(bn->data.data(), nd.grad.data(), g.data(), k, n, m);
      accum(an, g);
    }
    if (bn->requires_grad) {
      // dB[k,n] = A[k,m] * G[m,n]
      std::vector<double> g(static_cast<std::size_t>(k) * n);
      kernels::matmul(an->data.data(), nd.grad.data(), g.data(), k, m, n);
      accum(bn, g);
    }
  }));
}

Tensor softmax(const Tensor& a, int axis) {
  check_defined(a, "softmax");
  const int r = a.rank();
  if (r != 1 && r != 2) throw dim_error("softmax: rank must be 1 or 2, got " + shape_str(a.shape()));
  if (axis < 0 || axis >= r) throw dim_error("softmax: axis " + std::to_string(axis) +
                                             " invalid for shape " + shape_str(a.shape()));
  for (double v : a.data()) {
    if (!std::isfinite(v)) throw numeric_error("softmax: non-finite input");
  }
  const int rows = (r == 1) ? 1 : a.shape()[0];
  const int cols = (r == 1) ? a.shape()[0] : a.shape()[1];
  // slices run along `axis`; normalize strides so the same loop serves both
  const int n_slices = (r == 1) ? 1 : (axis == 1 ? rows : cols);
  const int slice_len = (r == 1) ? cols : (axis == 1 ? cols : rows);
  const long stride = (r == 1) ? 1 : (axis == 1 ? 1 : cols);
  const long slice_step = (r == 1) ? 0 : (axis == 1 ? cols : 1);

  const auto& x = a.data();
  std::vector<double> out(x.size());
  for (int s = 0; s < n_slices; ++s) {
    const long base = s * slice_step;
    double mx = x[base];
    for (int i = 1; i < slice_len; ++i) mx = std::max(mx, x[base + i * stride]);
    double denom = 0.0;
    for (int i = 0; i < slice_len; ++i) {
      const double e = std::exp(x[base + i * stride] - mx);
      out[base + i * stride] = e;
      denom += e;
    }
    for (int i = 0; i < slice_len; ++i) out[base + i * stride] /= denom;
  }
  auto an = a.node();
  return Tensor::wrap(make_result(a.shape(), std::move(out), {an},
                                  [an, n_slices, slice_len, stride, slice_step](Node& nd) {
    std::vector<double> g(nd.data.size());
    for (int s = 0; s < n_slices; ++s) {
      const long base = s * slice_step;
      double dot = 0.0;
      for (int i = 0; i < slice_len; ++i) {
        const long idx = base + i * stride;
        dot += nd.grad[idx] * nd.data[idx];
      }
      for (int i = 0; i < slice_len; ++i) {
        const long idx = base + i * stride;
        g[idx] = nd.data[idx] * (nd.grad[idx] - dot);
      }
    }
    accum(an, g);
  }));
}

Tensor l2_normalize_rows(const Tensor& a, double eps) {
  check_rank2(a, "l2_normalize_rows");
  const int n = a.shape()[0], c = a.shape()[1];
  const auto& x = a.data();
  std::vector<double> out(x.size());
  std::vector<double> norms(n);
  for (int i = 0; i < n; ++i) {
    double sq = 0.0;
    for (int j = 0; j < c; ++j) sq += x[i * c + j] * x[i * c + j];
    const double nrm = std::sqrt(sq);
    norms[i] = nrm;
    const double denom = std::max(nrm, eps);
    for (int j = 0; j < c; ++j) out[i * c + j] = x[i * c + j] / denom;
  }
  auto an = a.node();
  return Tensor::wrap(make_result(a.shape(), std::move(out), {an},
                                  [an, n, c, eps, norms = std::move(norms)](Node& nd) {
    std::vector<double> g(nd.data.size());
    for (int i = 0; i < n; ++i) {
      if (norms[i] > eps) {
        double dot = 0.0;
        for (int j = 0; j < c; ++j) dot += nd.grad[i * c + j] * nd.data[i * c + j];
        for (int j = 0; j < c; ++j)
          g[i * c + j] = (nd.grad[i * c + j] - dot * nd.data[i * c + j]) / norms[i];
      } else {
        for (int j = 0; j < c; ++j) g[i * c + j] = nd.grad[i * c + j] / eps;
      }
    }
    accum(an, g);
  }));
}

// --- shape / gather --------------------------------------------------------

Tensor reshape(const Tensor& a, const Shape& shape) {
  check_defined(a, "reshape");
  if (shape_numel(shape) != a.size()) {
    throw dim_error("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  auto an = a.node();
  return Tensor::wrap(make_result(shape, a.data(), {an}, [an](Node& nd) { accum(an, nd.grad); }));
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
  if (rows.empty()) throw contract_error("stack_rows: empty input");
  const int c = static_cast<int>(check_defined(rows[0], "stack_rows")[0]);
  std::vector<double> out;
  out.reserve(rows.size() * c);
  std::vector<NodePtr> parents;
  for (const auto& r : rows) {
    check_defined(r, "stack_rows");
    if (r.rank() != 1 || r.shape()[0] != c) {
      throw dim_error("stack_rows: row shape " + shape_str(r.shape()) + " incompatible with [" +
                      std::to_string(c) + "]");
    }
    out.insert(out.end(), r.data().begin(), r.data().end());
    parents.push_back(r.node());
  }
  const int n = static_cast<int>(rows.size());
  auto all = parents;  // backward needs all inputs, indexable
  return Tensor::wrap(make_result({n, c}, std::move(out), parents, [all, c](Node& nd) {
    for (std::size_t i = 0; i < all.size(); ++i) {
      if (!all[i]->requires_grad) continue;
      std::vector<double> g(nd.grad.begin() + i * c, nd.grad.begin() + (i + 1) * c);
      accum(all[i], g);
    }
  }));
}

Tensor concat_cols(const std::vector<Tensor>& mats) {
  if (mats.empty()) throw contract_error("concat_cols: empty input");
  check_rank2(mats[0], "concat_cols");
  const int n = mats[0].shape()[0];
  int total = 0;
  std::vector<int> widths;
  std::vector<NodePtr> parents;
  for (const auto& m : mats) {
    check_rank2(m, "concat_cols");
    if (m.shape()[0] != n) {
      throw dim_error("concat_cols: row count mismatch " + shape_str(m.shape()));
    }
    widths.push_back(m.shape()[1]);
    total += m.shape()[1];
    parents.push_back(m.node());
  }
  std::vector<double> out(static_cast<std::size_t>(n) * total);
  int off = 0;
  for (std::size_t t = 0; t < mats.size(); ++t) {
    const auto& src = mats[t].data();
    for (int i = 0; i < n; ++i) {
      std::copy(src.begin() + static_cast<long>(i) * widths[t],
                src.begin() + static_cast<long>(i + 1) * widths[t],
                out.begin() + static_cast<long>(i) * total + off);
    }
    off += widths[t];
  }
  auto all = parents;
  return Tensor::wrap(make_result({n, total}, std::move(out), parents,
                                  [all, widths, n, total](Node& nd) {
    int o = 0;
    for (std::size_t t = 0; t < all.size(); ++t) {
      if (all[t]->requires_grad) {
        std::vector<double> g(static_cast<std::size_t>(n) * widths[t]);
        for (int i = 0; i < n; ++i) {
          std::copy(nd.grad.begin() + static_cast<long>(i) * total + o,
                    nd.grad.begin() + static_cast<long>(i) * total + o + widths[t],
                    g.begin() + static_cast<long>(i) * widths[t]);
        }
        accum(all[t], g);
      }
      o += widths[t];
    }
  }));
}

Tensor select_col(const Tensor& a, int col) {
  check_rank2(a, "select_col");
  const int n = a.shape()[0], c = a.shape()[1];
  if (col < 0 || col >= c) throw dim_error("select_col: column out of range");
  std::vector<double> out(n);
  for (int i = 0; i < n; ++i) out[i] = a.data()[static_cast<long>(i) * c + col];
  auto an = a.node();
  return Tensor::wrap(make_result({n}, std::move(out), {an}, [an, n, c, col](Node& nd) {
    std::vector<double> g(static_cast<std::size_t>(n) * c, 0.0);
    for (int i = 0; i < n; ++i) g[static_cast<long>(i) * c + col] = nd.grad[i];
    accum(an, g);
  }));
}

Tensor gather(const Tensor& a, const std::vector<int>& idx) {
  check_defined(a, "gather");
  if (a.rank() != 1) throw dim_error("gather: expected rank-1 tensor");
  const int n = a.shape()[0];
  std::vector<double> out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= n) throw dim_error("gather: index out of range");
    out[i] = a.data()[idx[i]];
  }
  auto an = a.node();
  return Tensor::wrap(make_result({static_cast<int>(idx.size())}, std::move(out), {an},
                                  [an, idx, n](Node& nd) {
    std::vector<double> g(n, 0.0);
    for (std::size_t i = 0; i < idx.size(); ++i) g[idx[i]] += nd.grad[i];
    accum(an, g);
  }));
}

Tensor scale_by(const Tensor& a, const Tensor& s) {
  check_defined(a, "scale_by");
  check_defined(s, "scale_by");
  if (s.size() != 1) throw dim_error("scale_by: scale must be scalar");
  const double sv = s.data()[0];
  std::vector<double> out(a.size());
  for (long i = 0; i < a.size(); ++i) out[i] = a.data()[i] * sv;
  auto an = a.node(), sn = s.node();
  return Tensor::wrap(make_result(a.shape(), std::move(out), {an, sn}, [an, sn](Node& nd) {
    const double sv = sn->data[0];
    if (an->requires_grad) {
      std::vector<double> g(nd.grad.size());
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = nd.grad[i] * sv;
      accum(an, g);
    }
    if (sn->requires_grad) {
      double acc = 0.0;
      for (std::size_t i = 0; i < nd.grad.size(); ++i) acc += nd.grad[i] * an->data[i];
      accum(sn, {acc});
    }
  }));
}

// --- reductions / spatial ---------------------------------------------------

Tensor sum(const Tensor& a) {
  check_defined(a, "sum");
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  auto an = a.node();
  return Tensor::wrap(make_result({1}, {acc}, {an}, [an](Node& nd) {
    std::vector<double> g(an->data.size(), nd.grad[0]);
    accum(an, g);
  }));
}

Tensor mean(const Tensor& a) {
  check_defined(a, "mean");
  return mul_scalar(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor max_all(const Tensor& a) {
  check_defined(a, "max_all");
  const auto& x = a.data();
  std::size_t arg = 0;
  for (std::size_t i = 1; i < x.size(); ++i) {
    if (x[i] > x[arg]) arg = i;  // first maximum wins ties
  }
  auto an = a.node();
  return Tensor::wrap(make_result({1}, {x[arg]}, {an}, [an, arg](Node& nd) {
    std::vector<double> g(an->data.size(), 0.0);
    g[arg] = nd.grad[0];
    accum(an, g);
  }));
}

Tensor mean_rows(const Tensor& a) {
  check_rank2(a, "mean_rows");
  const int n = a.shape()[0], c = a.shape()[1];
  std::vector<double> out(c, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < c; ++j) out[j] += a.data()[static_cast<long>(i) * c + j];
  for (int j = 0; j < c; ++j) out[j] /= n;
  auto an = a.node();
  return Tensor::wrap(make_result({c}, std::move(out), {an}, [an, n, c](Node& nd) {
    std::vector<double> g(static_cast<std::size_t>(n) * c);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < c; ++j) g[static_cast<long>(i) * c + j] = nd.grad[j] / n;
    accum(an, g);
  }));
}

Tensor gap(const Tensor& a) {
  check_defined(a, "gap");
  if (a.rank() != 3) throw dim_error("gap: expected rank-3 [H,W,C], got " + shape_str(a.shape()));
  const int hw = a.shape()[0] * a.shape()[1];
  return mean_rows(reshape(a, {hw, a.shape()[2]}));
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  check_rank2(x, "linear");
  check_rank2(w, "linear");
  check_defined(b, "linear");
  if (w.shape()[1] != x.shape()[1]) {
    throw dim_error("linear: weight " + shape_str(w.shape()) + " does not accept input " +
                    shape_str(x.shape()));
  }
  if (b.rank() != 1 || b.shape()[0] != w.shape()[0]) {
    throw dim_error("linear: bias " + shape_str(b.shape()) + " does not match weight " +
                    shape_str(w.shape()));
  }
  Tensor y = matmul_nt(x, w);
  // broadcast bias over rows
  const int n = y.shape()[0], c = y.shape()[1];
  std::vector<double> out(y.data());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < c; ++j) out[static_cast<long>(i) * c + j] += b.data()[j];
  auto yn = y.node(), bn = b.node();
  return Tensor::wrap(make_result(y.shape(), std::move(out), {yn, bn}, [yn, bn, n, c](Node& nd) {
    accum(yn, nd.grad);
    if (bn->requires_grad) {
      std::vector<double> g(c, 0.0);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j) g[j] += nd.grad[static_cast<long>(i) * c + j];
      accum(bn, g);
    }
  }));
}

Tensor pointwise_conv(const Tensor& x, const Tensor& w, const Tensor& b) {
  check_defined(x, "pointwise_conv");
  if (x.rank() != 3) {
    throw dim_error("pointwise_conv: expected rank-3 [H,W,C], got " + shape_str(x.shape()));
  }
  const int h = x.shape()[0], wd = x.shape()[1], c = x.shape()[2];
  check_rank2(w, "pointwise_conv");
  if (w.shape()[1] != c || b.shape()[0] != w.shape()[0]) {
    throw dim_error("pointwise_conv: channel mismatch, input " + shape_str(x.shape()) +
                    " weight " + shape_str(w.shape()));
  }
  return reshape(linear(reshape(x, {h * wd, c}), w, b), {h, wd, w.shape()[0]});
}

Tensor broadcast_add_channels(const Tensor& grid, const Tensor& vec) {
  check_defined(grid, "broadcast_add_channels");
  check_defined(vec, "broadcast_add_channels");
  if (grid.rank() != 3 || vec.rank() != 1 || grid.shape()[2] != vec.shape()[0]) {
    throw dim_error("broadcast_add_channels: " + shape_str(grid.shape()) + " + " +
                    shape_str(vec.shape()));
  }
  const int hw = grid.shape()[0] * grid.shape()[1];
  const int c = grid.shape()[2];
  std::vector<double> out(grid.data());
  for (int i = 0; i < hw; ++i)
    for (int j = 0; j < c; ++j) out[static_cast<long>(i) * c + j] += vec.data()[j];
  auto gn = grid.node(), vn = vec.node();
  return Tensor::wrap(make_result(grid.shape(), std::move(out), {gn, vn}, [gn, vn, hw, c](Node& nd) {
    accum(gn, nd.grad);
    if (vn->requires_grad) {
      std::vector<double> g(c, 0.0);
      for (int i = 0; i < hw; ++i)
        for (int j = 0; j < c; ++j) g[j] += nd.grad[static_cast<long>(i) * c + j];
      accum(vn, g);
    }
  }));
}

Tensor bilinear_upsample(const Tensor& a, int h, int w) {
  check_rank2(a, "bilinear_upsample");
  if (h < 1 || w < 1) throw dim_error("bilinear_upsample: target size must be positive");
  const int H = a.shape()[0], W = a.shape()[1];
  std::vector<double> out(static_cast<std::size_t>(h) * w);
  kernels::upsample_bilinear(a.data().data(), H, W, out.data(), h, w);
  auto an = a.node();
  return Tensor::wrap(make_result({h, w}, std::move(out), {an}, [an, H, W, h, w](Node& nd) {
    std::vector<double> g(static_cast<std::size_t>(H) * W, 0.0);
    kernels::upsample_bilinear_adjoint(nd.grad.data(), h, w, g.data(), H, W);
    accum(an, g);
  }));
}

Tensor haar_band(const Tensor& f, int sb, int sc, int sd) {
  check_defined(f, "haar_band");
  if (f.rank() != 3) throw dim_error("haar_band: expected [H,W,C], got " + shape_str(f.shape()));
  const int H = f.shape()[0], W = f.shape()[1], C = f.shape()[2];
  std::vector<double> out(f.size());
  kernels::haar_band(f.data().data(), out.data(), H, W, C, sb, sc, sd);
  auto fn = f.node();
  return Tensor::wrap(make_result(f.shape(), std::move(out), {fn},
                                  [fn, H, W, C, sb, sc, sd](Node& nd) {
    std::vector<double> g(fn->data.size(), 0.0);
    kernels::haar_band_adjoint(nd.grad.data(), g.data(), H, W, C, sb, sc, sd);
    accum(fn, g);
  }));
}

// --- backward ----------------------------------------------------------------

void backward(const Tensor& root) {
  check_defined(root, "backward");
  if (root.size() != 1) {
    throw contract_error("backward: root must be scalar, got shape " + shape_str(root.shape()));
  }
  auto rn = root.node();
  if (!rn->requires_grad) return;  // nothing reachable requires grad

  // Iterative post-order DFS over grad-requiring nodes.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(rn.get(), 0);
  visited.insert(rn.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) n->ensure_grad();
  rn->grad[0] += 1.0;

  // order is post-order, so reverse iteration is topological from the root.
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward) n->backward(*n);
  }

  // Drop the tape: edges and closures go, values and leaf grads stay.
  for (Node* n : order) {
    n->backward = nullptr;
    n->parents.clear();
  }
}

// --- NamedParamSet ------------------------------------------------------------

void NamedParamSet::insert(const std::string& path, Tensor t) {
  if (!t.defined()) throw contract_error("NamedParamSet: undefined tensor for " + path);
  if (params_.count(path)) throw contract_error("NamedParamSet: duplicate path " + path);
  params_.emplace(path, std::move(t));
}

Tensor& NamedParamSet::at(const std::string& path) {
  auto it = params_.find(path);
  if (it == params_.end()) throw contract_error("NamedParamSet: no parameter " + path);
  return it->second;
}

const Tensor& NamedParamSet::at(const std::string& path) const {
  auto it = params_.find(path);
  if (it == params_.end()) throw contract_error("NamedParamSet: no parameter " + path);
  return it->second;
}

bool NamedParamSet::contains(const std::string& path) const { return params_.count(path) > 0; }

void NamedParamSet::zero_grads() {
  for (auto& [path, t] : params_) t.zero_grad();
}

// --- Adam ----------------------------------------------------------------------

void Adam::step(NamedParamSet& params) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
  for (auto& [path, p] : params) {
    if (!p.requires_grad()) {
      throw contract_error("adam_step: parameter " + path + " does not require grad");
    }
    auto& g = p.grad();
    auto& [m, v] = state_[path];
    if (m.size() != g.size()) {
      m.assign(g.size(), 0.0);
      v.assign(g.size(), 0.0);
    }
    auto& x = p.data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      x[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
    std::fill(g.begin(), g.end(), 0.0);
  }
}

// --- grad_check ------------------------------------------------------------------

double grad_check(const std::function<Tensor(NamedParamSet&)>& f, NamedParamSet& params,
                  double eps, int coords_per_tensor, std::uint64_t seed) {
  if (eps < 1e-7 || eps > 1e-3) throw contract_error("grad_check: eps out of [1e-7, 1e-3]");

  const double v1 = f(params).value();
  const double v2 = f(params).value();
  if (std::memcmp(&v1, &v2, sizeof(double)) != 0) {
    throw contract_error("grad_check: objective is not deterministic");
  }

  params.zero_grads();
  Tensor loss = f(params);
  backward(loss);

  double max_rel = 0.0;
  for (auto& [path, p] : params) {
    std::vector<double> analytic = p.grad();
    auto& x = p.data();
    const long n = p.size();
    std::vector<long> coords;
    if (n <= coords_per_tensor) {
      for (long i = 0; i < n; ++i) coords.push_back(i);
    } else {
      Rng rng(mix_seed(seed, fnv1a(path)));
      std::unordered_set<long> seen;
      while (static_cast<int>(coords.size()) < coords_per_tensor) {
        const long i = static_cast<long>(rng.below(static_cast<std::uint64_t>(n)));
        if (seen.insert(i).second) coords.push_back(i);
      }
    }
    for (long i : coords) {
      const double orig = x[i];
      x[i] = orig + eps;
      const double fp = f(params).value();
      x[i] = orig - eps;
      const double fm = f(params).value();
      x[i] = orig;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
      max_rel = std::max(max_rel, std::abs(analytic[i] - numeric) / denom);
    }
  }
  return max_rel;
}

}  // namespace wmoe
