#pragma once

#include <cstddef>
#include <vector>

#include "mlcil/labels.hpp"
#include "mlcil/tensor.hpp"

namespace mlcil {

// Asymmetric binary classification loss over per-class probabilities.
// probs: [N, C]; targets supply {-1, 0, 1} per entry and ignored entries
// contribute nothing, including to the averaging denominator. gamma_pos = 0,
// gamma_neg = 0 reduces it to mean binary cross entropy.
Tensor asl_loss(const Tensor& probs, const LabelMatrix& targets, double gamma_pos,
                double gamma_neg);

struct McAnchor {
    std::size_t sample;
    std::size_t cls;
};

// Multi-label contrastive loss over projected class embeddings.
// projected: [N, C, Dp]; each anchor names one (sample, class) row. Rows of
// the same class attract, different classes repel:
//   (1/K) * sum_km (1 - cos(a_k, a_m)) * B_km,  B_km = +1 same class else -1.
// Self-pairs are included (they contribute zero). Fewer than two anchors
// yield a constant zero.
Tensor mc_loss(const Tensor& projected, const std::vector<McAnchor>& anchors);

// Embedding distillation: mean squared difference between the current
// embeddings restricted to the old classes and the snapshot's output.
Tensor kd_loss(const Tensor& current, const Tensor& old_target);

// ce + alpha * mc + beta * kd as one graph node
Tensor total_loss_graph(const Tensor& ce, const Tensor& mc, const Tensor& kd, double alpha,
                        double beta);

struct LossBreakdown {
    double ce = 0.0;
    double mc = 0.0;
    double kd = 0.0;
    double total = 0.0;
    double alpha = 0.0;
    double beta = 0.0;
};

LossBreakdown make_breakdown(double ce, double mc, double kd, double alpha, double beta);

}  // namespace mlcil
