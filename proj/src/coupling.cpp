#include "tvr/coupling.hpp"

namespace tvr {

CouplingBlock CouplingBlock::make(int low_ch, int high_ch, int hidden, Rng& rng, bool with_qp,
                                  double gamma) {
  CouplingBlock block;
  block.low_scale = TransformNet::make(high_ch, low_ch, hidden, rng, with_qp);
  block.low_shift = TransformNet::make(high_ch, low_ch, hidden, rng, with_qp);
  block.high_scale = TransformNet::make(low_ch, high_ch, hidden, rng, with_qp);
  block.high_shift = TransformNet::make(low_ch, high_ch, hidden, rng, with_qp);
  block.gamma = gamma;
  return block;
}

std::pair<Tensor, Tensor> CouplingBlock::forward(Tape* tape, const Tensor& low,
                                                 const Tensor& high,
                                                 std::optional<double> qp_norm) const {
  Tensor low_next =
      add(mul(low, scale_activation(low_scale(tape, high, qp_norm), gamma)),
          low_shift(tape, high, qp_norm));
  Tensor high_next =
      add(mul(high, scale_activation(high_scale(tape, low_next, qp_norm), gamma)),
          high_shift(tape, low_next, qp_norm));
  return {low_next, high_next};
}

std::pair<Tensor, Tensor> CouplingBlock::inverse(Tape* tape, const Tensor& low,
                                                 const Tensor& high,
                                                 std::optional<double> qp_norm) const {
  Tensor high_prev = div(sub(high, high_shift(tape, low, qp_norm)),
                         scale_activation(high_scale(tape, low, qp_norm), gamma));
  Tensor low_prev = div(sub(low, low_shift(tape, high_prev, qp_norm)),
                        scale_activation(low_scale(tape, high_prev, qp_norm), gamma));
  return {low_prev, high_prev};
}

void CouplingBlock::params(std::vector<Tensor*>& out) {
  low_scale.params(out);
  low_shift.params(out);
  high_scale.params(out);
  high_shift.params(out);
}

CouplingStack CouplingStack::make(int depth, int low_ch, int high_ch, int hidden, Rng& rng,
                                  bool with_qp, double gamma) {
  CouplingStack stack;
  for (int i = 0; i < depth; ++i)
    stack.blocks.push_back(CouplingBlock::make(low_ch, high_ch, hidden, rng, with_qp, gamma));
  return stack;
}

std::pair<Tensor, Tensor> CouplingStack::forward(Tape* tape, Tensor low, Tensor high,
                                                 std::optional<double> qp_norm) const {
  for (const CouplingBlock& block : blocks)
    std::tie(low, high) = block.forward(tape, low, high, qp_norm);
  return {low, high};
}

std::pair<Tensor, Tensor> CouplingStack::inverse(Tape* tape, Tensor low, Tensor high,
                                                 std::optional<double> qp_norm) const {
  for (auto it = blocks.rbegin(); it != blocks.rend(); ++it)
    std::tie(low, high) = it->inverse(tape, low, high, qp_norm);
  return {low, high};
}

void CouplingStack::params(std::vector<Tensor*>& out) {
  for (CouplingBlock& block : blocks) block.params(out);
}

void CouplingStack::set_qp_enabled(bool enabled) {
  for (CouplingBlock& block : blocks) {
    block.low_scale.qp_enabled = enabled;
    block.low_shift.qp_enabled = enabled;
    block.high_scale.qp_enabled = enabled;
    block.high_shift.qp_enabled = enabled;
  }
}

}  // namespace tvr
