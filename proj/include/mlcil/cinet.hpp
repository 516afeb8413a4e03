#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "mlcil/model.hpp"

namespace mlcil {

struct CinetConfig {
    std::size_t feature_dim = 32;  // raw patch token width
    std::size_t model_dim = 32;    // shared embedding width, divisible by heads
    std::size_t heads = 4;
    std::size_t proj_dim = 0;  // contrastive head width; 0 means model_dim
    double token_init = 0.02;

    std::size_t proj_width() const { return proj_dim == 0 ? model_dim : proj_dim; }
};

// Class-level cross-attention network. Every class owns a query token; one
// pre-norm attention block plus an MLP turns patch tokens into one embedding
// per class, and each class gets its own binary classifier row. New sessions
// append token and classifier blocks while the old blocks stay frozen.
class CinetModel final : public IncrementalModel {
  public:
    CinetModel(CinetConfig cfg, std::uint64_t seed);

    void expand(std::size_t new_classes, std::uint64_t seed) override;
    ForwardResult forward(const Tensor& features) override;

    ParamStore& params() override { return ps_; }
    const ParamStore& params() const override { return ps_; }

    std::unique_ptr<IncrementalModel> clone_frozen() const override;

    std::string kind() const override { return "cinet"; }
    std::size_t num_classes() const override;
    const std::vector<std::size_t>& session_classes() const override { return sessions_; }

    const CinetConfig& config() const { return cfg_; }

  private:
    CinetConfig cfg_;
    std::vector<std::size_t> sessions_;
    ParamStore ps_;
};

// Fine-tuning reference point: mean-pooled adapter feature with one joint
// linear classifier. No class tokens, so its embedding output is the single
// pooled vector per sample.
class BaselineModel final : public IncrementalModel {
  public:
    BaselineModel(CinetConfig cfg, std::uint64_t seed);

    void expand(std::size_t new_classes, std::uint64_t seed) override;
    ForwardResult forward(const Tensor& features) override;

    ParamStore& params() override { return ps_; }
    const ParamStore& params() const override { return ps_; }

    std::unique_ptr<IncrementalModel> clone_frozen() const override;

    std::string kind() const override { return "baseline"; }
    std::size_t num_classes() const override;
    const std::vector<std::size_t>& session_classes() const override { return sessions_; }

    const CinetConfig& config() const { return cfg_; }

  private:
    CinetConfig cfg_;
    std::vector<std::size_t> sessions_;
    ParamStore ps_;
};

// kind is "cinet" or "baseline"; sessions are rebuilt in order so the
// parameter registry matches a checkpoint written from the same topology
std::unique_ptr<IncrementalModel> make_model(const std::string& kind, const CinetConfig& cfg,
                                             const std::vector<std::size_t>& session_classes,
                                             std::uint64_t seed);

}  // namespace mlcil
