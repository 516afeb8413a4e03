#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "mlcil/dataio.hpp"
#include "mlcil/losses.hpp"
#include "mlcil/metrics.hpp"
#include "mlcil/model.hpp"
#include "mlcil/optim.hpp"
#include "mlcil/protocol.hpp"

namespace mlcil {

struct TrainConfig {
    std::size_t epochs = 20;
    std::size_t batch = 64;
    double lr_base = 4e-5;  // first session
    double lr_inc = 1e-4;   // incremental sessions
    double weight_decay = 1e-4;
    double alpha = 0.05;  // contrastive weight
    double beta = 80.0;   // distillation weight
    double gamma_pos = 0.0;
    double gamma_neg = 4.0;
    std::size_t mper = 0;  // exemplars per class
    double pseudo_pos = 0.8;
    double pseudo_neg = 0.2;
    std::uint64_t seed = 1;
    double warmup_frac = 0.1;  // linear warmup, then cosine decay
    bool mc_on_replay = true;    // replayed positives join the contrastive set
    bool mc_on_pseudo = true;    // accepted pseudo-positives join it too
    bool keep_unlabeled = true;  // keep samples with no visible positive
    bool single_assignment = false;  // strict protocol: one session per sample
    bool kd_target_self = false;  // wiring probe: distill toward own output
};

// linear warmup over warmup_frac of total, cosine decay to zero afterwards
double lr_at(std::size_t step, std::size_t total_steps, double peak, double warmup_frac);

struct SessionReport {
    std::size_t session = 0;  // 1-based
    std::size_t classes_seen = 0;
    std::size_t train_samples = 0;
    std::size_t replay_samples = 0;
    std::size_t pseudo_filled = 0;
    std::size_t buffer_total = 0;
    std::size_t steps = 0;
    double mean_ce = 0.0;
    double mean_mc = 0.0;
    double mean_kd = 0.0;
    double mean_total = 0.0;
    MetricsSummary metrics;  // cumulative test set through this session
};

struct RunSummary {
    std::vector<double> session_map;  // percent per session
    double average_map = 0.0;
    double final_map = 0.0;
};

RunSummary summarize_run(const std::vector<SessionReport>& reports);
RunSummary summarize_maps(const std::vector<double>& session_map);

// Drives the session loop: snapshot, expand, pseudo-label, epochs over the
// replay-augmented stream, buffer update, cumulative evaluation.
class Trainer {
  public:
    Trainer(std::unique_ptr<IncrementalModel> model, TrainConfig cfg);

    // trains session (0-based index, must be called in order) and evaluates
    SessionReport train_session(std::size_t session, const Dataset& train, const Dataset& test,
                                const SessionSpec& spec);

    // all sessions; on_session runs after each one (checkpointing hook)
    std::vector<SessionReport> run(
        const Dataset& train, const Dataset& test, const SessionSpec& spec,
        const std::function<void(std::size_t, const IncrementalModel&)>& on_session = {});

    // no-mutation forward over chosen samples; probs as [ids, seen] tensor
    Tensor predict(const Tensor& features, const std::vector<std::size_t>& ids) const;

    MetricsSummary evaluate(const Dataset& test, const SessionSpec& spec,
                            std::size_t session) const;

    IncrementalModel& model() { return *model_; }
    const IncrementalModel& model() const { return *model_; }
    const ExemplarBuffer& buffer() const { return buffer_; }
    const TrainConfig& config() const { return cfg_; }
    std::size_t sessions_done() const { return done_; }

  private:
    std::unique_ptr<IncrementalModel> model_;
    TrainConfig cfg_;
    AdamState adam_;
    ExemplarBuffer buffer_;
    std::size_t done_ = 0;
};

}  // namespace mlcil
