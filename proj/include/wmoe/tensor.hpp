// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "wmoe/errors.hpp"

namespace wmoe {

using Shape = std::vector<int>;

namespace detail {
struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // allocated iff requires_grad
  bool requires_grad = false;
  std::vector<NodePtr> parents;               // grad-requiring inputs, for traversal
  std::function<void(Node&)> backward;        // scatters node.grad into parents
  void ensure_grad();
};

// Thread-local switch; when off, newly built ops are constants (no tape).
bool grad_enabled();
void set_grad_enabled(bool on);
}  // namespace detail

// Builds constant (tape-free) results while alive. Used for inference paths.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Dense double-precision tensor participating in a dynamic reverse-mode tape.
// Copying a Tensor copies the handle, not the buffer.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor from(std::vector<double> data, const Shape& shape, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int rank() const;
  long size() const;
  bool requires_grad() const;

  std::vector<double>& data();
  const std::vector<double>& data() const;
  // Gradient accumulator; throws contract_error when the tensor does not require grad.
  std::vector<double>& grad();
  const std::vector<double>& grad() const;
  void zero_grad();

  // Scalar convenience; throws unless size() == 1.
  double value() const;

  detail::NodePtr node() const { return node_; }
  static Tensor wrap(detail::NodePtr n);

 private:
  detail::NodePtr node_;
};

std::string shape_str(const Shape& s);

// --- elementwise / pointwise ---
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor tanh_op(const Tensor& a);
Tensor exp_op(const Tensor& a);
Tensor log_op(const Tensor& a);
Tensor square(const Tensor& a);
Tensor pow_scalar(const Tensor& a, double p);
Tensor clamp(const Tensor& a, double lo, double hi);

// --- linear algebra ---
Tensor matmul(const Tensor& a, const Tensor& b);      // [m,k] x [k,n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);   // [m,k] x [n,k]^T
Tensor matmul_tn(const Tensor& a, const Tensor& b);   // [k,m]^T x [k,n]
Tensor softmax(const Tensor& a, int axis);            // rank 1 or 2
Tensor l2_normalize_rows(const Tensor& a, double eps = 1e-12);  // rank 2, per row

// --- shape / gather ---
Tensor reshape(const Tensor& a, const Shape& shape);
Tensor stack_rows(const std::vector<Tensor>& rows);      // n vectors [c] -> [n,c]
Tensor concat_cols(const std::vector<Tensor>& mats);     // [n,ci] -> [n, sum ci]
Tensor select_col(const Tensor& a, int col);             // [n,c] -> [n]
Tensor gather(const Tensor& a, const std::vector<int>& idx);  // rank 1
Tensor scale_by(const Tensor& a, const Tensor& s);       // a * scalar node

// --- reductions / spatial ---
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor max_all(const Tensor& a);                          // grad to first argmax
Tensor mean_rows(const Tensor& a);                        // [n,c] -> [c]
Tensor gap(const Tensor& a);                              // [H,W,C] -> [C]
Tensor pointwise_conv(const Tensor& x, const Tensor& w, const Tensor& b);  // [H,W,C]
Tensor broadcast_add_channels(const Tensor& grid, const Tensor& vec);      // [H,W,C] + [C]
Tensor bilinear_upsample(const Tensor& a, int h, int w);  // [H,W] -> [h,w], align corners
// One undecimated Haar band of [H,W,C] with replicate padding; signs select
// the band, see kernels::haar_band.
Tensor haar_band(const Tensor& f, int sb, int sc, int sd);

// Linear layer on a row matrix: x [n,cin] * w[cout,cin]^T + b.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// Reverse pass from a scalar root. Accumulates into every grad-requiring
// tensor reachable through the tape, then drops the tape edges.
void backward(const Tensor& root);

// Ordered (lexicographic) parameter registry.
class NamedParamSet {
 public:
  void insert(const std::string& path, Tensor t);
  Tensor& at(const std::string& path);
  const Tensor& at(const std::string& path) const;
  bool contains(const std::string& path) const;
  std::size_t size() const { return params_.size(); }
  void zero_grads();
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::map<std::string, Tensor> params_;
};

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. step() consumes and zeroes the gradients.
class Adam {
 public:
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}
  void step(NamedParamSet& params);
  long step_count() const { return t_; }

 private:
  AdamConfig cfg_;
  long t_ = 0;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> state_;
};

// Central finite differences against the tape over sampled coordinates.
// Returns the max relative error with denominator max(|analytic|, |numeric|, 1e-8).
// Evaluates f twice up front; a bitwise mismatch reports a contract_error.
double grad_check(const std::function<Tensor(NamedParamSet&)>& f, NamedParamSet& params,
                  double eps, int coords_per_tensor, std::uint64_t seed);

}  // namespace wmoe
