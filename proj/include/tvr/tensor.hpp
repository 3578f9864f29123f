#pragma once

#include <functional>
#include <initializer_list>
#include <memory>
#include <unordered_map>
#include <vector>

#include "tvr/common.hpp"

namespace tvr {

class Tape;

// Dense float32 tensor in row-major order. Values are immutable once created
// except for two sanctioned mutations: parameter updates between training
// steps and assign_values() (the Algorithm-1 style value reassignment, which
// only affects ops recorded afterwards).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape);
  Tensor(std::vector<int> shape, std::vector<float> values);

  static Tensor scalar(double v);
  static Tensor full(std::vector<int> shape, float value);
  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
  static Tensor randn(std::vector<int> shape, Rng& rng, double stddev = 1.0);
  static Tensor uniform(std::vector<int> shape, Rng& rng, double lo, double hi);

  bool defined() const { return data_ != nullptr; }
  const std::vector<int>& shape() const { return shape_; }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t size() const { return data_ ? static_cast<int64_t>(data_->size()) : 0; }

  const float* data() const { return data_->data(); }
  float* data() { return data_->data(); }
  const std::vector<float>& values() const { return *data_; }

  float operator[](int64_t i) const { return (*data_)[static_cast<size_t>(i)]; }
  float& operator[](int64_t i) { return (*data_)[static_cast<size_t>(i)]; }

  // Scalar value. Reductions cache their double-precision accumulator here so
  // finite-difference probes are not limited by float32 storage of the loss.
  double item() const;

  bool tracked() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  int node() const { return node_; }

  // Same buffer, no tape node.
  Tensor detached() const;

  // Overwrite values in place, keeping the tape node. Shapes must match.
  void assign_values(const Tensor& src);

  // Stable identity of the underlying buffer (used for watch memoization).
  const void* buffer_id() const { return static_cast<const void*>(data_.get()); }

 private:
  friend class Tape;
  std::vector<int> shape_;
  std::shared_ptr<std::vector<float>> data_;
  double scalar_cache_ = 0.0;
  bool has_scalar_cache_ = false;
  Tape* tape_ = nullptr;
  int node_ = -1;
};

// Reverse-mode tape. Append-only; a backward pass consumes it (re-recording is
// required for another pass). Recording is single-threaded by construction.
class Tape {
 public:
  using BackFn = std::function<void(Tape&, const std::vector<float>&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Register a leaf (parameter or input). Watching the same buffer twice
  // returns the same node, so shared parameters accumulate into one gradient.
  Tensor watch(const Tensor& t);

  // Record an op producing `out_size` values; `back` receives the output
  // gradient and accumulates into parent gradient buffers.
  int emplace(int64_t out_size, BackFn back);

  // Bind a freshly computed op output to a recorded node.
  Tensor adopt(Tensor t, int node) {
    t.tape_ = this;
    t.node_ = node;
    return t;
  }

  // Backward from a scalar root (seed 1), or from any node with an explicit
  // seed of the node's size. Single use.
  void backward(const Tensor& root);
  void backward(const Tensor& root, std::vector<float> seed);

  bool consumed() const { return consumed_; }
  int num_nodes() const { return static_cast<int>(nodes_.size()); }

  // Gradient of a tensor recorded on this tape (zeros if it never received
  // any). Valid after backward().
  std::vector<float> grad(const Tensor& t) const;

  // True if the tensor (or its buffer) was recorded on this tape.
  bool has(const Tensor& t) const;

  std::vector<float>& grad_buf(int node);

 private:
  struct Node {
    int64_t size;
    BackFn back;
  };
  std::vector<Node> nodes_;
  std::vector<std::vector<float>> grads_;
  std::unordered_map<const void*, int> watched_;
  bool consumed_ = false;
};

// ---- Elementwise ops ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // Hadamard
Tensor div(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
Tensor exp_op(const Tensor& a);      // input clamped to +-80 so no Inf/NaN
Tensor sigmoid(const Tensor& a);
Tensor leaky_relu(const Tensor& a, double slope = 0.1);
Tensor softplus(const Tensor& a);
Tensor clamp(const Tensor& a, double lo, double hi);
// exp(gamma * (2*sigmoid(u) - 1)); bounded in (e^-gamma, e^gamma).
Tensor scale_activation(const Tensor& u, double gamma);
// round(x*255)/255 forward, identity backward (straight-through).
Tensor quantize8_ste(const Tensor& a);
// Identity forward; backward replaces g with (1-alpha)*g + alpha*RMS(g)*xi.
Tensor grad_noise(const Tensor& a, double alpha, Rng* rng);

// ---- Structure ops ----
Tensor concat_ch(const std::vector<Tensor>& parts);        // along dim 0 of [C,H,W]
Tensor slice_ch(const Tensor& a, int c0, int c1);          // channels [c0, c1)
Tensor upsample2(const Tensor& a);                         // nearest, [C,H,W] -> [C,2H,2W]
Tensor avgpool2(const Tensor& a);                          // [C,H,W] -> [C,H/2,W/2]

// ---- NN ops ----
Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, int padding);
Tensor bias_add(const Tensor& x, const Tensor& b);         // b: [C] over [C,H,W]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);  // x:[n] w:[m,n] b:[m]
Tensor channel_scale(const Tensor& x, const Tensor& s);    // x:[C,H,W], s:[C]

// ---- Reductions (scalar out; double accumulation cached in item()) ----
Tensor mean(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor l1(const Tensor& a, const Tensor& b);   // mean absolute difference
Tensor l2(const Tensor& a, const Tensor& b);   // mean squared difference

// Central-difference gradient of f at x. f is evaluated in double via
// Tensor::item(); the realized step (x+eps rounded to float minus x-eps) is
// used as the divisor.
Tensor fd_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x, double eps);

// Branch fingerprinting for piecewise ops (leaky_relu, clamp, quantize).
// A central difference only estimates a derivative if both evaluations stay
// on the same linear piece; probes that flip any branch are not valid
// derivative measurements. begin/end bracket one forward evaluation.
void kink_probe_begin();
uint64_t kink_probe_end();
bool kink_probe_active();
void kink_note_branch(uint64_t v);  // for discrete decisions outside the op set

// fd_gradient that additionally reports, per element, whether the +/- probes
// shared one branch pattern (a valid central-difference measurement).
Tensor fd_gradient_masked(const std::function<double(const Tensor&)>& f, const Tensor& x,
                          double eps, std::vector<bool>* valid);

// Per element, tries each step in order and keeps the first kink-free
// measurement; elements with no valid step are masked out.
Tensor fd_gradient_adaptive(const std::function<double(const Tensor&)>& f, const Tensor& x,
                            const std::vector<double>& eps_list, std::vector<bool>* valid);

// Normwise relative error restricted to masked elements; `coverage` (0..1)
// receives the mask fraction.
double rel_error_masked(const Tensor& a, const Tensor& b, const std::vector<bool>& valid,
                        double* coverage = nullptr);

// Normwise relative error ||a-b|| / max(||b||, tiny).
double rel_error(const Tensor& a, const Tensor& b);
double max_abs_diff(const Tensor& a, const Tensor& b);

// ---- Optimizer ----
class Adam {
 public:
  Adam(std::vector<Tensor*> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);
  // Applies one update from gradients looked up on `tape` (post-backward).
  void step(Tape& tape);
  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  const std::vector<Tensor*>& params() const { return params_; }

 private:
  std::vector<Tensor*> params_;
  std::vector<std::vector<double>> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
};

}  // namespace tvr
