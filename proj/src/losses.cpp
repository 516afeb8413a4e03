#include "mlcil/losses.hpp"

#include <cmath>

#include "mlcil/errors.hpp"

namespace mlcil {

namespace {
constexpr double kProbClip = 1e-8;
}

Tensor asl_loss(const Tensor& probs, const LabelMatrix& targets, double gamma_pos,
                double gamma_neg) {
    require(probs.defined() && probs.rank() == 2, "asl_loss: probs must be [N, C]");
    require(probs.dim(0) == targets.samples() && probs.dim(1) == targets.classes(),
            "asl_loss: probs " + shape_str(probs.shape()) + " vs targets " +
                std::to_string(targets.samples()) + "x" + std::to_string(targets.classes()));
    require(gamma_pos >= 0.0 && gamma_neg >= 0.0, "asl_loss: focusing exponents must be >= 0");
    for (double v : probs.data())
        if (!std::isfinite(v)) throw CheckError("asl_loss: non-finite probability");

    const std::size_t n = probs.size();
    std::vector<double> pos_mask(n, 0.0), neg_mask(n, 0.0);
    std::size_t count = 0;
    for (std::size_t i = 0; i < targets.samples(); ++i)
        for (std::size_t j = 0; j < targets.classes(); ++j) {
            const auto s = targets.at(i, j);
            if (s == kIgnore) continue;
            (s == kPositive ? pos_mask : neg_mask)[i * targets.classes() + j] = 1.0;
            ++count;
        }
    if (count == 0) return Tensor::scalar(0.0);

    auto p = clamp(probs, kProbClip, 1.0 - kProbClip);
    auto one_minus_p = sub(Tensor::full(p.shape(), 1.0), p);
    auto pos = mul(Tensor::from_data(p.shape(), std::move(pos_mask)),
                   mul(pow_const(one_minus_p, gamma_pos), log_elem(p)));
    auto neg = mul(Tensor::from_data(p.shape(), std::move(neg_mask)),
                   mul(pow_const(p, gamma_neg), log_elem(one_minus_p)));
    return scale(sum(add(pos, neg)), -1.0 / static_cast<double>(count));
}

Tensor mc_loss(const Tensor& projected, const std::vector<McAnchor>& anchors) {
    require(projected.defined() && projected.rank() == 3, "mc_loss: projected must be [N, C, Dp]");
    const std::size_t K = anchors.size();
    if (K <= 1) return Tensor::scalar(0.0);

    std::vector<std::pair<std::size_t, std::size_t>> idx;
    idx.reserve(K);
    for (const auto& a : anchors) idx.emplace_back(a.sample, a.cls);

    auto an = l2_normalize_rows(gather_rows(projected, idx));
    auto sim = matmul(an, transpose(an));  // [K, K] cosine similarities
    std::vector<double> b(K * K);
    for (std::size_t k = 0; k < K; ++k)
        for (std::size_t m = 0; m < K; ++m)
            b[k * K + m] = anchors[k].cls == anchors[m].cls ? 1.0 : -1.0;
    auto dist = sub(Tensor::full(sim.shape(), 1.0), sim);
    auto weighted = mul(dist, Tensor::from_data(sim.shape(), std::move(b)));
    return scale(sum(weighted), 1.0 / static_cast<double>(K));
}

Tensor kd_loss(const Tensor& current, const Tensor& old_target) {
    require(current.defined() && old_target.defined(), "kd_loss: undefined input");
    require(current.shape() == old_target.shape(),
            "kd_loss: shape mismatch " + shape_str(current.shape()) + " vs " +
                shape_str(old_target.shape()));
    auto diff = sub(current, old_target);
    return mean(mul(diff, diff));
}

Tensor total_loss_graph(const Tensor& ce, const Tensor& mc, const Tensor& kd, double alpha,
                        double beta) {
    require(ce.size() == 1 && mc.size() == 1 && kd.size() == 1,
            "total_loss_graph: losses must be scalars");
    return add(ce, add(scale(mc, alpha), scale(kd, beta)));
}

LossBreakdown make_breakdown(double ce, double mc, double kd, double alpha, double beta) {
    LossBreakdown b;
    b.ce = ce;
    b.mc = mc;
    b.kd = kd;
    b.alpha = alpha;
    b.beta = beta;
    b.total = ce + alpha * mc + beta * kd;
    return b;
}

}  // namespace mlcil
