#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mlcil/dataio.hpp"
#include "mlcil/labels.hpp"

namespace mlcil {

// Class-order split: session 1 holds the base classes (or the first
// increment when base = 0), every later session holds one increment.
struct SessionSpec {
    std::size_t total_classes = 0;
    std::size_t base = 0;
    std::size_t increment = 0;
    std::vector<std::pair<std::size_t, std::size_t>> ranges;  // [begin, end) per session

    std::size_t sessions() const { return ranges.size(); }
    std::size_t session_size(std::size_t s) const { return ranges[s].second - ranges[s].first; }
    // classes covered by sessions [0, s]
    std::size_t seen_classes(std::size_t s) const { return ranges[s].second; }
    std::size_t session_of(std::size_t cls) const;
};

SessionSpec split_protocol(std::size_t total_classes, std::size_t base, std::size_t increment);

// "B<k>-C<n>" -> (base k, increment n)
struct ProtocolName {
    std::size_t base = 0;
    std::size_t increment = 0;
};
ProtocolName parse_protocol(const std::string& text);

// one line per session: "<index> <class> <class> ..."
std::string format_session_manifest(const SessionSpec& spec);

// A training-time view of one sample: which classes are supervised right
// now and where each positive came from.
struct TrainSample {
    std::size_t id = 0;                // row in the feature tensor
    std::vector<std::int8_t> mask;     // width total_classes, {-1, 0, 1}
    std::vector<std::uint8_t> pseudo;  // mask entry was filled by pseudo-labeling
    bool replay = false;
};

// Samples participating in a session. By default an image repeats in every
// session that owns one of its labels; single_assignment pins it to its
// earliest such session.
std::vector<std::size_t> session_sample_ids(const Annotations& labels, const SessionSpec& spec,
                                            std::size_t session, bool single_assignment);

// Supervision restricted to the session's classes; everything else ignore.
TrainSample mask_labels(std::size_t id, const std::vector<std::size_t>& labels,
                        const SessionSpec& spec, std::size_t session);

// Thresholds the snapshot's probabilities over the old classes into the
// ignore entries of the mask. Returns how many entries were filled.
std::size_t pseudo_label(TrainSample& sample, const std::vector<double>& old_probs,
                         std::size_t old_classes, double pos_thr, double neg_thr);

// Per-class exemplar storage. Each session adds lists for its own classes;
// earlier lists are never touched again.
class ExemplarBuffer {
  public:
    explicit ExemplarBuffer(std::size_t per_class) : per_class_(per_class) {}

    std::size_t per_class() const { return per_class_; }
    std::size_t total() const;
    const std::map<std::size_t, std::vector<TrainSample>>& store() const { return store_; }

    // uniform selection (without replacement) of up to per_class samples
    // positive for each class of the given session, keeping the supervision
    // visible at storage time
    void update(const std::vector<TrainSample>& session_samples, const SessionSpec& spec,
                std::size_t session, std::uint64_t seed);

    // flattened exemplars, deduplicated by sample id, marked replay
    std::vector<TrainSample> replay_samples() const;

  private:
    std::size_t per_class_ = 0;
    std::map<std::size_t, std::vector<TrainSample>> store_;
};

// Union of current samples and replay exemplars, shuffled by seed and cut
// into batches of at most batch_size.
std::vector<std::vector<TrainSample>> session_epoch_stream(
    const std::vector<TrainSample>& current, const ExemplarBuffer& buffer, std::uint64_t seed,
    std::size_t batch_size);

// Test samples whose label set intersects the classes seen through session s.
std::vector<std::size_t> cumulative_eval_ids(const Annotations& labels, const SessionSpec& spec,
                                             std::size_t session);

// Ground truth over the seen vocabulary for the chosen samples, positives
// where the annotation lists a seen class and negatives elsewhere.
LabelMatrix eval_truth(const Annotations& labels, const std::vector<std::size_t>& ids,
                       std::size_t seen_classes);

// rows of a [N, L, D] feature tensor gathered into a batch, graph-free
Tensor gather_samples(const Tensor& features, const std::vector<std::size_t>& ids);

}  // namespace mlcil
