#include "mlcil/protocol.hpp"

#include <algorithm>
#include <set>

#include "mlcil/errors.hpp"
#include "mlcil/rng.hpp"

namespace mlcil {

std::size_t SessionSpec::session_of(std::size_t cls) const {
    for (std::size_t s = 0; s < ranges.size(); ++s)
        if (cls >= ranges[s].first && cls < ranges[s].second) return s;
    throw std::invalid_argument("session_of: class " + std::to_string(cls) +
                                " outside the protocol");
}

SessionSpec split_protocol(std::size_t total_classes, std::size_t base, std::size_t increment) {
    require_data(total_classes > 0, "split_protocol: no classes");
    require_data(increment > 0, "split_protocol: increment must be positive");
    require_data(base <= total_classes, "split_protocol: base exceeds the class count");
    require_data((total_classes - base) % increment == 0,
                 "split_protocol: " + std::to_string(total_classes - base) +
                     " incremental classes do not divide into steps of " +
                     std::to_string(increment));
    SessionSpec spec;
    spec.total_classes = total_classes;
    spec.base = base;
    spec.increment = increment;
    std::size_t begin = 0;
    if (base > 0) {
        spec.ranges.emplace_back(0, base);
        begin = base;
    }
    while (begin < total_classes) {
        spec.ranges.emplace_back(begin, begin + increment);
        begin += increment;
    }
    require_data(!spec.ranges.empty(), "split_protocol: produced no sessions");
    return spec;
}

ProtocolName parse_protocol(const std::string& text) {
    // expected shape: B<number>-C<number>
    auto fail = [&] {
        throw DataError("protocol '" + text + "' is not of the form B<k>-C<n>");
    };
    if (text.size() < 4 || text[0] != 'B') fail();
    const auto dash = text.find("-C");
    if (dash == std::string::npos || dash == 1 || dash + 2 >= text.size()) fail();
    ProtocolName out;
    try {
        std::size_t used = 0;
        const std::string b = text.substr(1, dash - 1);
        out.base = std::stoull(b, &used);
        if (used != b.size()) fail();
        const std::string c = text.substr(dash + 2);
        out.increment = std::stoull(c, &used);
        if (used != c.size()) fail();
    } catch (const std::logic_error&) {
        fail();
    }
    return out;
}

std::string format_session_manifest(const SessionSpec& spec) {
    std::string out;
    for (std::size_t s = 0; s < spec.sessions(); ++s) {
        out += std::to_string(s + 1);
        for (std::size_t c = spec.ranges[s].first; c < spec.ranges[s].second; ++c)
            out += " " + std::to_string(c);
        out += "\n";
    }
    return out;
}

std::vector<std::size_t> session_sample_ids(const Annotations& labels, const SessionSpec& spec,
                                            std::size_t session, bool single_assignment) {
    require(session < spec.sessions(), "session_sample_ids: session out of range");
    const auto [begin, end] = spec.ranges[session];
    std::vector<std::size_t> ids;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        bool in_session = false;
        bool in_earlier = false;
        for (auto c : labels[i]) {
            require_data(c < spec.total_classes, "sample " + std::to_string(i) + " carries class " +
                                                     std::to_string(c) +
                                                     " outside the protocol vocabulary");
            if (c >= begin && c < end) in_session = true;
            if (c < begin) in_earlier = true;
        }
        if (!in_session) continue;
        if (single_assignment && in_earlier) continue;  // pinned to its earliest session
        ids.push_back(i);
    }
    return ids;
}

TrainSample mask_labels(std::size_t id, const std::vector<std::size_t>& labels,
                        const SessionSpec& spec, std::size_t session) {
    require(session < spec.sessions(), "mask_labels: session out of range");
    const auto [begin, end] = spec.ranges[session];
    TrainSample s;
    s.id = id;
    s.mask.assign(spec.total_classes, kIgnore);
    s.pseudo.assign(spec.total_classes, 0);
    for (std::size_t c = begin; c < end; ++c) s.mask[c] = kNegative;
    for (auto c : labels)
        if (c >= begin && c < end) s.mask[c] = kPositive;
    return s;
}

std::size_t pseudo_label(TrainSample& sample, const std::vector<double>& old_probs,
                         std::size_t old_classes, double pos_thr, double neg_thr) {
    require(old_classes <= sample.mask.size() && old_probs.size() == old_classes,
            "pseudo_label: probability row does not cover the old classes");
    require(neg_thr <= pos_thr, "pseudo_label: thresholds cross");
    std::size_t filled = 0;
    for (std::size_t c = 0; c < old_classes; ++c) {
        if (sample.mask[c] != kIgnore) continue;  // real supervision wins
        if (old_probs[c] >= pos_thr) {
            sample.mask[c] = kPositive;
        } else if (old_probs[c] <= neg_thr) {
            sample.mask[c] = kNegative;
        } else {
            continue;
        }
        sample.pseudo[c] = 1;
        ++filled;
    }
    return filled;
}

std::size_t ExemplarBuffer::total() const {
    std::size_t n = 0;
    for (const auto& [c, v] : store_) n += v.size();
    return n;
}

void ExemplarBuffer::update(const std::vector<TrainSample>& session_samples,
                            const SessionSpec& spec, std::size_t session, std::uint64_t seed) {
    if (per_class_ == 0) return;
    require(session < spec.sessions(), "buffer update: session out of range");
    const auto [begin, end] = spec.ranges[session];
    for (std::size_t c = begin; c < end; ++c) {
        require(store_.count(c) == 0, "buffer update: class " + std::to_string(c) +
                                          " was already stored; past classes are immutable");
        std::vector<std::size_t> positives;
        for (std::size_t i = 0; i < session_samples.size(); ++i)
            if (!session_samples[i].replay && session_samples[i].mask[c] == kPositive)
                positives.push_back(i);
        Rng rng(mix_seed(seed, c));
        auto picks = rng.sample_without_replacement(
            positives.size(), std::min(per_class_, positives.size()));
        std::sort(picks.begin(), picks.end());
        auto& slot = store_[c];
        for (auto p : picks) {
            TrainSample kept = session_samples[positives[p]];
            kept.replay = true;
            slot.push_back(std::move(kept));
        }
    }
}

std::vector<TrainSample> ExemplarBuffer::replay_samples() const {
    std::set<std::size_t> seen;
    std::vector<TrainSample> out;
    for (const auto& [c, v] : store_)
        for (const auto& s : v)
            if (seen.insert(s.id).second) out.push_back(s);
    return out;
}

std::vector<std::vector<TrainSample>> session_epoch_stream(
    const std::vector<TrainSample>& current, const ExemplarBuffer& buffer, std::uint64_t seed,
    std::size_t batch_size) {
    require(batch_size > 0, "session_epoch_stream: batch size must be positive");
    std::vector<TrainSample> pool = current;
    for (auto& s : buffer.replay_samples()) pool.push_back(std::move(s));
    Rng rng(seed);
    rng.shuffle(pool);
    std::vector<std::vector<TrainSample>> batches;
    for (std::size_t off = 0; off < pool.size(); off += batch_size) {
        const std::size_t n = std::min(batch_size, pool.size() - off);
        batches.emplace_back(pool.begin() + off, pool.begin() + off + n);
    }
    return batches;
}

std::vector<std::size_t> cumulative_eval_ids(const Annotations& labels, const SessionSpec& spec,
                                             std::size_t session) {
    require(session < spec.sessions(), "cumulative_eval_ids: session out of range");
    const std::size_t seen = spec.seen_classes(session);
    std::vector<std::size_t> ids;
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (std::any_of(labels[i].begin(), labels[i].end(),
                        [&](std::size_t c) { return c < seen; }))
            ids.push_back(i);
    return ids;
}

LabelMatrix eval_truth(const Annotations& labels, const std::vector<std::size_t>& ids,
                       std::size_t seen_classes) {
    LabelMatrix truth(ids.size(), seen_classes, kNegative);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        require(ids[i] < labels.size(), "eval_truth: sample id out of range");
        for (auto c : labels[ids[i]])
            if (c < seen_classes) truth.set(i, c, kPositive);
    }
    return truth;
}

Tensor gather_samples(const Tensor& features, const std::vector<std::size_t>& ids) {
    require(features.defined() && features.rank() == 3, "gather_samples: features must be [N,L,D]");
    require(!ids.empty(), "gather_samples: empty selection");
    const std::size_t L = features.dim(1), D = features.dim(2);
    std::vector<double> out;
    out.reserve(ids.size() * L * D);
    for (auto id : ids) {
        require(id < features.dim(0), "gather_samples: sample id out of range");
        const double* row = features.data().data() + id * L * D;
        out.insert(out.end(), row, row + L * D);
    }
    return Tensor::from_data({ids.size(), L, D}, std::move(out));
}

}  // namespace mlcil
