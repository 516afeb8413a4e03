#include "mlcil/trainer.hpp"

#include <algorithm>
#include <cmath>

#include "mlcil/errors.hpp"
#include "mlcil/rng.hpp"

namespace mlcil {

namespace {

void check_config(const TrainConfig& cfg) {
    require(cfg.epochs > 0 && cfg.batch > 0, "TrainConfig: epochs and batch must be positive");
    require(cfg.lr_base > 0.0 && cfg.lr_inc > 0.0, "TrainConfig: learning rates must be positive");
    require(cfg.weight_decay >= 0.0, "TrainConfig: weight decay must be >= 0");
    require(cfg.alpha >= 0.0 && cfg.beta >= 0.0, "TrainConfig: loss weights must be >= 0");
    require(cfg.gamma_pos >= 0.0 && cfg.gamma_neg >= 0.0,
            "TrainConfig: focusing exponents must be >= 0");
    require(cfg.pseudo_neg <= cfg.pseudo_pos, "TrainConfig: pseudo thresholds cross");
    require(cfg.warmup_frac >= 0.0 && cfg.warmup_frac <= 1.0,
            "TrainConfig: warmup fraction must be in [0, 1]");
}

void check_dataset(const Dataset& d, const char* what) {
    require_data(d.features.defined() && d.features.rank() == 3,
                 std::string(what) + ": features must be [N, L, D]");
    require_data(d.features.dim(0) == d.labels.size(),
                 std::string(what) + ": feature rows and annotation lines disagree");
}

}  // namespace

double lr_at(std::size_t step, std::size_t total_steps, double peak, double warmup_frac) {
    require(total_steps > 0 && step < total_steps, "lr_at: step outside the schedule");
    std::size_t warm = static_cast<std::size_t>(
        std::llround(warmup_frac * static_cast<double>(total_steps)));
    warm = std::min(std::max<std::size_t>(warm, 1), total_steps);
    if (step < warm)
        return peak * static_cast<double>(step + 1) / static_cast<double>(warm);
    if (total_steps == warm) return peak;
    const double progress =
        static_cast<double>(step - warm) / static_cast<double>(total_steps - warm);
    return peak * 0.5 * (1.0 + std::cos(M_PI * progress));
}

RunSummary summarize_maps(const std::vector<double>& session_map) {
    require(!session_map.empty(), "summarize: no sessions");
    RunSummary s;
    s.session_map = session_map;
    s.average_map = mean_of(session_map);
    s.final_map = session_map.back();
    return s;
}

RunSummary summarize_run(const std::vector<SessionReport>& reports) {
    std::vector<double> maps;
    maps.reserve(reports.size());
    for (const auto& r : reports) maps.push_back(r.metrics.map);
    return summarize_maps(maps);
}

Trainer::Trainer(std::unique_ptr<IncrementalModel> model, TrainConfig cfg)
    : model_(std::move(model)), cfg_(cfg), buffer_(cfg.mper) {
    require(static_cast<bool>(model_), "Trainer: no model");
    check_config(cfg_);
}

Tensor Trainer::predict(const Tensor& features, const std::vector<std::size_t>& ids) const {
    require(!ids.empty(), "predict: no samples selected");
    auto frozen = model_->clone_frozen();  // graph-free forwards
    const std::size_t C = frozen->num_classes();
    std::vector<double> probs;
    probs.reserve(ids.size() * C);
    for (std::size_t off = 0; off < ids.size(); off += cfg_.batch) {
        const std::size_t n = std::min(cfg_.batch, ids.size() - off);
        std::vector<std::size_t> chunk(ids.begin() + off, ids.begin() + off + n);
        auto out = frozen->forward(gather_samples(features, chunk));
        probs.insert(probs.end(), out.probs.data().begin(), out.probs.data().end());
    }
    return Tensor::from_data({ids.size(), C}, std::move(probs));
}

MetricsSummary Trainer::evaluate(const Dataset& test, const SessionSpec& spec,
                                 std::size_t session) const {
    check_dataset(test, "test set");
    const auto ids = cumulative_eval_ids(test.labels, spec, session);
    require_data(!ids.empty(), "evaluate: cumulative test set is empty");
    const std::size_t seen = spec.seen_classes(session);
    require(model_->num_classes() == seen, "evaluate: model classes do not match the session");
    auto probs = predict(test.features, ids);
    return evaluate_predictions(probs, eval_truth(test.labels, ids, seen));
}

SessionReport Trainer::train_session(std::size_t session, const Dataset& train,
                                     const Dataset& test, const SessionSpec& spec) {
    require(session == done_, "train_session: sessions must run in order");
    require(session < spec.sessions(), "train_session: session outside the protocol");
    check_dataset(train, "train set");
    check_dataset(test, "test set");
    const std::size_t t = session + 1;  // 1-based for reporting and seeds

    // (1) snapshot before any mutation
    std::unique_ptr<IncrementalModel> snapshot;
    std::size_t old_classes = 0;
    if (session > 0) {
        require(model_->num_classes() == spec.seen_classes(session - 1),
                "train_session: model classes do not match the previous session");
        snapshot = model_->clone_frozen();
        old_classes = snapshot->num_classes();
    }

    // (2) new class block
    model_->expand(spec.session_size(session),
                   mix_seed(cfg_.seed, fnv1a("expand." + std::to_string(t))));
    const std::size_t seen = spec.seen_classes(session);

    // current-session samples with masked supervision
    std::vector<TrainSample> current;
    for (auto id : session_sample_ids(train.labels, spec, session, cfg_.single_assignment)) {
        TrainSample s = mask_labels(id, train.labels[id], spec, session);
        if (!cfg_.keep_unlabeled &&
            std::none_of(s.mask.begin(), s.mask.end(),
                         [](std::int8_t m) { return m == kPositive; }))
            continue;
        current.push_back(std::move(s));
    }
    require_data(!current.empty(), "train_session: no samples for session " + std::to_string(t));

    // (3) recover old-class supervision from the snapshot
    std::size_t pseudo_filled = 0;
    if (snapshot) {
        for (std::size_t off = 0; off < current.size(); off += cfg_.batch) {
            const std::size_t n = std::min(cfg_.batch, current.size() - off);
            std::vector<std::size_t> chunk(n);
            for (std::size_t i = 0; i < n; ++i) chunk[i] = current[off + i].id;
            auto out = snapshot->forward(gather_samples(train.features, chunk));
            for (std::size_t i = 0; i < n; ++i) {
                std::vector<double> row(old_classes);
                for (std::size_t c = 0; c < old_classes; ++c) row[c] = out.probs.at(i, c);
                pseudo_filled += pseudo_label(current[off + i], row, old_classes,
                                              cfg_.pseudo_pos, cfg_.pseudo_neg);
            }
        }
    }

    const std::size_t replay_count = buffer_.replay_samples().size();
    const std::size_t pool = current.size() + replay_count;
    const std::size_t batches_per_epoch = (pool + cfg_.batch - 1) / cfg_.batch;
    const std::size_t total_steps = cfg_.epochs * batches_per_epoch;
    const double peak = t == 1 ? cfg_.lr_base : cfg_.lr_inc;

    AdamConfig acfg;
    acfg.weight_decay = cfg_.weight_decay;

    SessionReport report;
    report.session = t;
    report.classes_seen = seen;
    report.train_samples = current.size();
    report.replay_samples = replay_count;
    report.pseudo_filled = pseudo_filled;

    // (4) epochs over the replay-augmented stream
    double sum_ce = 0.0, sum_mc = 0.0, sum_kd = 0.0, sum_total = 0.0;
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < cfg_.epochs; ++epoch) {
        const auto stream = session_epoch_stream(
            current, buffer_,
            mix_seed(cfg_.seed,
                     fnv1a("epoch." + std::to_string(t) + "." + std::to_string(epoch))),
            cfg_.batch);
        for (const auto& batch : stream) {
            std::vector<std::size_t> ids(batch.size());
            for (std::size_t i = 0; i < batch.size(); ++i) ids[i] = batch[i].id;
            auto feats = gather_samples(train.features, ids);
            auto out = model_->forward(feats);

            LabelMatrix targets(batch.size(), seen);
            for (std::size_t i = 0; i < batch.size(); ++i)
                for (std::size_t c = 0; c < seen; ++c) targets.set(i, c, batch[i].mask[c]);
            auto ce = asl_loss(out.probs, targets, cfg_.gamma_pos, cfg_.gamma_neg);

            // the contrastive set: supervised positives of this batch
            std::vector<McAnchor> anchors;
            if (out.projected.dim(1) == seen) {  // class-level embeddings only
                for (std::size_t i = 0; i < batch.size(); ++i)
                    for (std::size_t c = 0; c < seen; ++c) {
                        if (batch[i].mask[c] != kPositive) continue;
                        if (batch[i].pseudo[c] && !cfg_.mc_on_pseudo) continue;
                        if (batch[i].replay && !cfg_.mc_on_replay) continue;
                        anchors.push_back({i, c});
                    }
            }
            auto mc = mc_loss(out.projected, anchors);

            Tensor kd = Tensor::scalar(0.0);
            if (snapshot) {
                auto old_out = snapshot->forward(feats);
                const std::size_t old_width = old_out.embeddings.dim(1);
                auto cur_slice = slice_axis1(out.embeddings, 0, old_width);
                auto target = cfg_.kd_target_self ? cur_slice.detach() : old_out.embeddings;
                kd = kd_loss(cur_slice, target);
            }

            auto total = total_loss_graph(ce, mc, kd, cfg_.alpha, cfg_.beta);
            const auto breakdown =
                make_breakdown(ce.item(), mc.item(), kd.item(), cfg_.alpha, cfg_.beta);
            if (!std::isfinite(breakdown.total))
                throw CheckError("train_session: non-finite loss at session " +
                                 std::to_string(t) + " step " + std::to_string(step));
            sum_ce += breakdown.ce;
            sum_mc += breakdown.mc;
            sum_kd += breakdown.kd;
            sum_total += breakdown.total;

            model_->params().zero_grads();
            backward(total);
            acfg.lr = lr_at(step, total_steps, peak, cfg_.warmup_frac);
            adam_step(model_->params(), adam_, acfg);
            ++step;
        }
    }
    report.steps = step;
    if (step > 0) {
        report.mean_ce = sum_ce / static_cast<double>(step);
        report.mean_mc = sum_mc / static_cast<double>(step);
        report.mean_kd = sum_kd / static_cast<double>(step);
        report.mean_total = sum_total / static_cast<double>(step);
    }

    // (5) store exemplars with their storage-time supervision
    buffer_.update(current, spec, session,
                   mix_seed(cfg_.seed, fnv1a("buffer." + std::to_string(t))));
    report.buffer_total = buffer_.total();

    // (6) cumulative evaluation
    done_ = t;
    report.metrics = evaluate(test, spec, session);
    return report;
}

std::vector<SessionReport> Trainer::run(
    const Dataset& train, const Dataset& test, const SessionSpec& spec,
    const std::function<void(std::size_t, const IncrementalModel&)>& on_session) {
    std::vector<SessionReport> reports;
    for (std::size_t s = 0; s < spec.sessions(); ++s) {
        reports.push_back(train_session(s, train, test, spec));
        if (on_session) on_session(s + 1, *model_);
    }
    return reports;
}

}  // namespace mlcil
