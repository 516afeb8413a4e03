#pragma once

#include <cstddef>
#include <vector>

#include "mlcil/labels.hpp"
#include "mlcil/tensor.hpp"

namespace mlcil {

// Ranked average precision for one class. relevant[i] != 0 marks sample i as
// a positive; at least one positive is required. Ties in score break toward
// the lower sample index, so the value is deterministic.
double average_precision(const std::vector<double>& scores, const std::vector<int>& relevant);

struct MetricsSummary {
    double map = 0.0;  // percent, over classes that have positives
    double cf1 = 0.0;  // percent, per-class F1 averaged over all classes
    double of1 = 0.0;  // percent, F1 over the pooled confusion counts
    std::vector<double> per_class_ap;           // percent; -1 for skipped classes
    std::vector<std::size_t> skipped_classes;   // classes with no positive sample
    std::size_t samples = 0;
    std::size_t classes = 0;
};

// probs: [N, C]; truth uses {-1, 0, 1} and ignored entries take no part in
// either ranking or confusion counts. threshold splits positive predictions
// for the F1 numbers (p >= threshold counts as positive).
MetricsSummary evaluate_predictions(const Tensor& probs, const LabelMatrix& truth,
                                    double threshold = 0.5);

double mean_of(const std::vector<double>& v);

}  // namespace mlcil
