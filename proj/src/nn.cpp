#include "tvr/nn.hpp"

#include <cmath>

namespace tvr {

Conv2dLayer Conv2dLayer::make(int c_in, int c_out, int k, Rng& rng, int stride, bool zero_init) {
  Conv2dLayer layer;
  if (zero_init) {
    layer.w = Tensor::zeros({c_out, c_in, k, k});
  } else {
    double std = std::sqrt(2.0 / (c_in * k * k));  // He init
    layer.w = Tensor::randn({c_out, c_in, k, k}, rng, std);
  }
  layer.b = Tensor::zeros({c_out});
  layer.stride = stride;
  layer.padding = k / 2;
  return layer;
}

QpScaleMlp QpScaleMlp::make(int hidden, int channels, Rng& rng) {
  QpScaleMlp mlp;
  mlp.w1 = Tensor::randn({hidden, 1}, rng, 1.0);
  mlp.b1 = Tensor::zeros({hidden});
  mlp.w2 = Tensor::zeros({channels, hidden});
  // softplus(0.5397424) + 1e-3 == 1, so conditioning starts neutral
  mlp.b2 = Tensor::full({channels}, 0.5397424f);
  return mlp;
}

Tensor QpScaleMlp::operator()(Tape* tape, double qp_norm) const {
  Tensor in({1}, {static_cast<float>(qp_norm)});
  Tensor h = leaky_relu(linear(in, tp(tape, w1), tp(tape, b1)));
  Tensor out = linear(h, tp(tape, w2), tp(tape, b2));
  return add_scalar(softplus(out), 1e-3);
}

TransformNet TransformNet::make(int c_in, int c_out, int hidden, Rng& rng, bool with_qp) {
  TransformNet net;
  net.c1 = Conv2dLayer::make(c_in, hidden, 3, rng);
  net.c2 = Conv2dLayer::make(hidden, hidden, 3, rng);
  net.c3 = Conv2dLayer::make(hidden, c_out, 3, rng, 1, /*zero_init=*/true);
  if (with_qp) net.qp_mlp = QpScaleMlp::make(16, hidden, rng);
  return net;
}

Tensor TransformNet::operator()(Tape* tape, const Tensor& x, std::optional<double> qp_norm) const {
  Tensor h = leaky_relu(c1(tape, x));
  h = leaky_relu(c2(tape, h));
  if (qp_mlp && qp_norm) {
    if (qp_enabled) {
      Tensor s = (*qp_mlp)(tape, *qp_norm);
      h = channel_scale(h, s);
    }
    // ablation: scale forced to 1 (no-op)
  }
  return c3(tape, h);
}

void TransformNet::params(std::vector<Tensor*>& out) {
  c1.params(out);
  c2.params(out);
  c3.params(out);
  if (qp_mlp) qp_mlp->params(out);
}

}  // namespace tvr
