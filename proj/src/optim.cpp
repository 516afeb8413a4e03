#include "mlcil/optim.hpp"

#include <algorithm>
#include <cmath>

#include "mlcil/errors.hpp"

namespace mlcil {

void ParamStore::add(const std::string& name, Tensor t, bool trainable) {
    require(!name.empty(), "ParamStore: empty name");
    require(!has(name), "ParamStore: duplicate parameter '" + name + "'");
    require(t.defined(), "ParamStore: undefined tensor for '" + name + "'");
    t.set_requires_grad(true);
    entries_.emplace(name, Entry{std::move(t), trainable});
}

Tensor& ParamStore::get(const std::string& name) {
    auto it = entries_.find(name);
    require(it != entries_.end(), "ParamStore: unknown parameter '" + name + "'");
    return it->second.tensor;
}

const Tensor& ParamStore::get(const std::string& name) const {
    auto it = entries_.find(name);
    require(it != entries_.end(), "ParamStore: unknown parameter '" + name + "'");
    return it->second.tensor;
}

bool ParamStore::is_trainable(const std::string& name) const {
    auto it = entries_.find(name);
    require(it != entries_.end(), "ParamStore: unknown parameter '" + name + "'");
    return it->second.trainable;
}

void ParamStore::set_trainable(const std::string& name, bool trainable) {
    auto it = entries_.find(name);
    require(it != entries_.end(), "ParamStore: unknown parameter '" + name + "'");
    it->second.trainable = trainable;
}

std::vector<std::string> ParamStore::names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [k, v] : entries_) out.push_back(k);
    return out;
}

void ParamStore::zero_grads() {
    for (auto& [k, e] : entries_) e.tensor.zero_grad();
}

void adam_step(ParamStore& params, AdamState& state, const AdamConfig& cfg) {
    require(cfg.lr >= 0.0 && cfg.eps > 0.0, "adam_step: bad config");
    state.step += 1;
    for (auto& [name, entry] : params.entries()) {
        if (!entry.trainable) continue;
        Tensor& p = entry.tensor;
        if (!p.has_grad()) continue;  // not part of this loss
        auto& mom = state.moments[name];
        auto& value = p.node()->value;
        const auto& grad = p.grad();
        if (mom.m.empty()) {
            mom.m.assign(value.size(), 0.0);
            mom.v.assign(value.size(), 0.0);
        }
        require(mom.m.size() == value.size(),
                "adam_step: stale moments for '" + name + "'");
        mom.t += 1;
        const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(mom.t));
        const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(mom.t));
        for (std::size_t i = 0; i < value.size(); ++i) {
            const double g = grad[i] + cfg.weight_decay * value[i];
            mom.m[i] = cfg.beta1 * mom.m[i] + (1.0 - cfg.beta1) * g;
            mom.v[i] = cfg.beta2 * mom.v[i] + (1.0 - cfg.beta2) * g * g;
            const double mhat = mom.m[i] / bc1;
            const double vhat = mom.v[i] / bc2;
            value[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

GradCheckReport finite_diff_check(const std::function<Tensor()>& loss_fn, ParamStore& params,
                                  double step) {
    require(step > 0.0, "finite_diff_check: step must be positive");
    params.zero_grads();
    Tensor loss = loss_fn();
    require(loss.size() == 1, "finite_diff_check: loss_fn must return a scalar");
    backward(loss);

    // snapshot reverse-mode gradients before the probes disturb anything
    std::map<std::string, std::vector<double>> analytic;
    for (const auto& [name, entry] : params.entries()) {
        const Tensor& t = entry.tensor;
        analytic[name] =
            t.has_grad() ? t.grad() : std::vector<double>(t.size(), 0.0);
    }

    GradCheckReport report;
    for (auto& [name, entry] : params.entries()) {
        auto& value = entry.tensor.node()->value;
        for (std::size_t i = 0; i < value.size(); ++i) {
            const double orig = value[i];
            value[i] = orig + step;
            const double up = loss_fn().item();
            value[i] = orig - step;
            const double down = loss_fn().item();
            value[i] = orig;
            const double numeric = (up - down) / (2.0 * step);
            const double a = analytic[name][i];
            const double rel =
                std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst_param = name;
                report.worst_index = i;
            }
            report.checked += 1;
        }
    }
    return report;
}

}  // namespace mlcil
