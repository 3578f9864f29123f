#pragma once

#include <optional>
#include <vector>

#include "tvr/tensor.hpp"

namespace tvr {

// Watch-through helper: parameters enter the tape lazily, and repeated use of
// the same buffer shares one gradient slot (weight tying falls out of this).
inline Tensor tp(Tape* tape, const Tensor& param) { return tape ? tape->watch(param) : param; }

struct Conv2dLayer {
  Tensor w;  // [Cout,Cin,kh,kw]
  Tensor b;  // [Cout]
  int stride = 1;
  int padding = 1;

  static Conv2dLayer make(int c_in, int c_out, int k, Rng& rng, int stride = 1,
                          bool zero_init = false);

  Tensor operator()(Tape* tape, const Tensor& x) const {
    return bias_add(conv2d(x, tp(tape, w), stride, padding), tp(tape, b));
  }
  void params(std::vector<Tensor*>& out) {
    out.push_back(&w);
    out.push_back(&b);
  }
};

// Two-layer perceptron mapping normalized QP to a positive per-channel scale.
struct QpScaleMlp {
  Tensor w1, b1, w2, b2;  // 1 -> hidden -> channels

  static QpScaleMlp make(int hidden, int channels, Rng& rng);

  // softplus(out) + 1e-3, strictly positive
  Tensor operator()(Tape* tape, double qp_norm) const;
  void params(std::vector<Tensor*>& out) {
    out.push_back(&w1);
    out.push_back(&b1);
    out.push_back(&w2);
    out.push_back(&b2);
  }
};

// 3-layer 3x3 conv stack (in -> hidden -> hidden -> out, leaky-relu) with an
// optional QP-conditioned channel scale applied to the penultimate features.
// The final layer is zero-initialized so stacks start as the zero map.
struct TransformNet {
  Conv2dLayer c1, c2, c3;
  std::optional<QpScaleMlp> qp_mlp;
  bool qp_enabled = true;  // ablation hook: force a neutral scale

  static TransformNet make(int c_in, int c_out, int hidden, Rng& rng, bool with_qp);

  Tensor operator()(Tape* tape, const Tensor& x, std::optional<double> qp_norm) const;
  void params(std::vector<Tensor*>& out);
};

}  // namespace tvr
