#pragma once

#include "fedssd/data.hpp"
#include "fedssd/nn.hpp"

#include <cstddef>
#include <vector>

namespace fedssd {

// K x K prediction counts; row = true class, column = argmax prediction
// (lowest index on ties). Shared by evaluation and teacher credibility so both
// use one argmax rule.
struct ConfusionCounts {
    std::size_t num_classes = 0;
    std::vector<std::size_t> counts;  // row-major

    explicit ConfusionCounts(std::size_t k = 0) : num_classes(k), counts(k * k, 0) {}

    std::size_t& operator()(std::size_t truth, std::size_t pred) {
        return counts[truth * num_classes + pred];
    }
    std::size_t operator()(std::size_t truth, std::size_t pred) const {
        return counts[truth * num_classes + pred];
    }
    std::size_t row_total(std::size_t truth) const;
    std::size_t total() const;
    std::size_t diagonal() const;

    friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

ConfusionCounts confusion_counts(const ModelParams& params, const LabeledDataset& ds);

}  // namespace fedssd
