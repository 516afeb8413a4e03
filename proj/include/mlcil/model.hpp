#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "mlcil/optim.hpp"
#include "mlcil/tensor.hpp"

namespace mlcil {

struct ForwardResult {
    Tensor logits;      // [N, C]
    Tensor probs;       // [N, C], sigmoid per class
    Tensor embeddings;  // [N, C, D] class-level (baseline: [N, 1, D] pooled)
    Tensor projected;   // [N, C, Dp] contrastive head output
};

// A classifier that grows one class-block per session. Parameters live in a
// named store so the optimizer, checkpoints and gradient checks all see the
// same registry.
class IncrementalModel {
  public:
    virtual ~IncrementalModel() = default;

    // Opens session t = session_count()+1 with new_classes fresh classes and
    // freezes the per-class blocks of every earlier session.
    virtual void expand(std::size_t new_classes, std::uint64_t seed) = 0;

    // features: [N, L, feature_dim]
    virtual ForwardResult forward(const Tensor& features) = 0;

    virtual ParamStore& params() = 0;
    virtual const ParamStore& params() const = 0;

    // Deep copy whose parameters are constants; its forwards build no graph.
    virtual std::unique_ptr<IncrementalModel> clone_frozen() const = 0;

    virtual std::string kind() const = 0;
    virtual std::size_t num_classes() const = 0;
    virtual const std::vector<std::size_t>& session_classes() const = 0;
    std::size_t session_count() const { return session_classes().size(); }
};

}  // namespace mlcil
