#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "tvr/nn.hpp"

namespace tvr {

// Affine coupling block. The low branch is updated first from the high
// branch, then the high branch from the updated low branch; inversion only
// evaluates the transformation nets, never inverts them. Multiplicative
// factors go through exp(gamma*(2*sigmoid(u)-1)), bounded and positive.
// With QP conditioning enabled the transformation nets modulate their
// penultimate features by an MLP-derived channel scale (Q-Invertible block).
struct CouplingBlock {
  TransformNet low_scale;   // multiplicative path into the low branch
  TransformNet low_shift;   // additive path into the low branch
  TransformNet high_scale;  // multiplicative path into the high branch
  TransformNet high_shift;  // additive path into the high branch
  double gamma = 1.0;

  static CouplingBlock make(int low_ch, int high_ch, int hidden, Rng& rng, bool with_qp,
                            double gamma = 1.0);

  std::pair<Tensor, Tensor> forward(Tape* tape, const Tensor& low, const Tensor& high,
                                    std::optional<double> qp_norm = std::nullopt) const;
  std::pair<Tensor, Tensor> inverse(Tape* tape, const Tensor& low, const Tensor& high,
                                    std::optional<double> qp_norm = std::nullopt) const;
  void params(std::vector<Tensor*>& out);
};

struct CouplingStack {
  std::vector<CouplingBlock> blocks;

  static CouplingStack make(int depth, int low_ch, int high_ch, int hidden, Rng& rng,
                            bool with_qp, double gamma = 1.0);

  std::pair<Tensor, Tensor> forward(Tape* tape, Tensor low, Tensor high,
                                    std::optional<double> qp_norm = std::nullopt) const;
  std::pair<Tensor, Tensor> inverse(Tape* tape, Tensor low, Tensor high,
                                    std::optional<double> qp_norm = std::nullopt) const;
  void params(std::vector<Tensor*>& out);

  // Ablation hook: force neutral QP scales in every transformation net.
  void set_qp_enabled(bool enabled);
};

// Normalized QP fed to the conditioning perceptrons.
inline double qp_norm(int qp) { return qp / 51.0; }

}  // namespace tvr
