#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "mlcil/tensor.hpp"

namespace mlcil {

// Named parameter registry. std::map keeps iteration order stable across
// runs, which the determinism guarantees lean on.
class ParamStore {
  public:
    struct Entry {
        Tensor tensor;
        bool trainable = true;
    };

    void add(const std::string& name, Tensor t, bool trainable = true);
    bool has(const std::string& name) const { return entries_.count(name) > 0; }
    Tensor& get(const std::string& name);
    const Tensor& get(const std::string& name) const;
    bool is_trainable(const std::string& name) const;
    void set_trainable(const std::string& name, bool trainable);

    std::size_t size() const { return entries_.size(); }
    std::vector<std::string> names() const;
    void zero_grads();

    std::map<std::string, Entry>& entries() { return entries_; }
    const std::map<std::string, Entry>& entries() const { return entries_; }

  private:
    std::map<std::string, Entry> entries_;
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;  // coupled L2: folded into the gradient
};

// First/second moments keyed by parameter name. New parameters picked up
// mid-run start with fresh moments and their own step counter, so bias
// correction stays exact for them.
struct AdamState {
    struct Moments {
        std::vector<double> m, v;
        std::uint64_t t = 0;
    };
    std::map<std::string, Moments> moments;
    std::uint64_t step = 0;
};

// One update over every trainable parameter that received a gradient.
// Parameters without a gradient (constant w.r.t. this loss) and frozen
// parameters are left untouched.
void adam_step(ParamStore& params, AdamState& state, const AdamConfig& cfg);

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
    std::size_t checked = 0;
};

// Central finite differences of loss_fn against the reverse-mode gradients,
// swept over every coordinate of every parameter in the store. loss_fn must
// rebuild the graph from the current parameter values on each call.
GradCheckReport finite_diff_check(const std::function<Tensor()>& loss_fn, ParamStore& params,
                                  double step = 1e-4);

}  // namespace mlcil
