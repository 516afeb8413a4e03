#include "mlcil/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mlcil/errors.hpp"

namespace mlcil {

double average_precision(const std::vector<double>& scores, const std::vector<int>& relevant) {
    require(scores.size() == relevant.size() && !scores.empty(),
            "average_precision: scores and relevance must align");
    std::size_t positives = 0;
    for (int r : relevant) positives += (r != 0);
    require(positives > 0, "average_precision: no positive sample");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    });

    double sum = 0.0;
    std::size_t hits = 0;
    for (std::size_t rank = 0; rank < order.size(); ++rank) {
        if (relevant[order[rank]] == 0) continue;
        ++hits;
        sum += static_cast<double>(hits) / static_cast<double>(rank + 1);
    }
    return sum / static_cast<double>(positives);
}

MetricsSummary evaluate_predictions(const Tensor& probs, const LabelMatrix& truth,
                                    double threshold) {
    require(probs.defined() && probs.rank() == 2, "evaluate_predictions: probs must be [N, C]");
    require(probs.dim(0) == truth.samples() && probs.dim(1) == truth.classes(),
            "evaluate_predictions: probs " + shape_str(probs.shape()) + " vs truth " +
                std::to_string(truth.samples()) + "x" + std::to_string(truth.classes()));
    const std::size_t N = truth.samples(), C = truth.classes();

    MetricsSummary out;
    out.samples = N;
    out.classes = C;
    out.per_class_ap.assign(C, -1.0);

    double ap_sum = 0.0;
    std::size_t ap_classes = 0;
    double cf1_sum = 0.0;
    std::size_t tp_all = 0, fp_all = 0, fn_all = 0;

    std::vector<double> scores;
    std::vector<int> relevant;
    for (std::size_t c = 0; c < C; ++c) {
        scores.clear();
        relevant.clear();
        std::size_t tp = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < N; ++i) {
            const auto s = truth.at(i, c);
            if (s == kIgnore) continue;
            const double p = probs.at(i, c);
            scores.push_back(p);
            relevant.push_back(s == kPositive ? 1 : 0);
            const bool pred = p >= threshold;
            if (s == kPositive) {
                pred ? ++tp : ++fn;
            } else if (pred) {
                ++fp;
            }
        }
        tp_all += tp;
        fp_all += fp;
        fn_all += fn;

        const double prec = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
        const double rec = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
        cf1_sum += prec + rec > 0.0 ? 2.0 * prec * rec / (prec + rec) : 0.0;

        const bool has_pos = std::any_of(relevant.begin(), relevant.end(), [](int r) { return r; });
        if (!has_pos) {
            out.skipped_classes.push_back(c);
            continue;
        }
        const double ap = average_precision(scores, relevant);
        out.per_class_ap[c] = 100.0 * ap;
        ap_sum += ap;
        ++ap_classes;
    }

    require(ap_classes > 0, "evaluate_predictions: every class is empty of positives");
    out.map = 100.0 * ap_sum / static_cast<double>(ap_classes);
    out.cf1 = 100.0 * cf1_sum / static_cast<double>(C);
    const double op = tp_all + fp_all
                          ? static_cast<double>(tp_all) / static_cast<double>(tp_all + fp_all)
                          : 0.0;
    const double orc = tp_all + fn_all
                           ? static_cast<double>(tp_all) / static_cast<double>(tp_all + fn_all)
                           : 0.0;
    out.of1 = op + orc > 0.0 ? 100.0 * 2.0 * op * orc / (op + orc) : 0.0;
    return out;
}

double mean_of(const std::vector<double>& v) {
    require(!v.empty(), "mean_of: empty input");
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

}  // namespace mlcil
