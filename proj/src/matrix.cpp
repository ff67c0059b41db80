#include "fedssd/matrix.hpp"

#include "fedssd/error.hpp"

#include <fmt/format.h>

namespace fedssd {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), data_(std::move(values)) {
    if (data_.size() != rows * cols) {
        throw Error(ErrorCode::dimension_mismatch,
                    fmt::format("matrix {}x{} needs {} values, got {}", rows, cols, rows * cols,
                                data_.size()));
    }
}

std::size_t argmax(std::span<const double> values) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i) {
        if (values[i] > values[best]) best = i;
    }
    return best;
}

const char* to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::invalid_argument: return "invalid_argument";
        case ErrorCode::dimension_mismatch: return "dimension_mismatch";
        case ErrorCode::non_finite: return "non_finite";
        case ErrorCode::label_out_of_range: return "label_out_of_range";
        case ErrorCode::missing_teacher: return "missing_teacher";
        case ErrorCode::bad_magic: return "bad_magic";
        case ErrorCode::truncated_file: return "truncated_file";
        case ErrorCode::count_mismatch: return "count_mismatch";
        case ErrorCode::io: return "io";
        case ErrorCode::infeasible: return "infeasible";
        case ErrorCode::empty_client: return "empty_client";
        case ErrorCode::insufficient_samples: return "insufficient_samples";
        case ErrorCode::empty_class: return "empty_class";
        case ErrorCode::config: return "config";
        case ErrorCode::round_mismatch: return "round_mismatch";
    }
    return "unknown";
}

}  // namespace fedssd
