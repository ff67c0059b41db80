#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace fedssd {

enum class ErrorCode {
    invalid_argument,
    dimension_mismatch,
    non_finite,
    label_out_of_range,
    missing_teacher,
    bad_magic,
    truncated_file,
    count_mismatch,
    io,
    infeasible,
    empty_client,
    insufficient_samples,
    empty_class,
    config,
    round_mismatch,
};

const char* to_string(ErrorCode code);

// Every failure in the library surfaces as this type. The code is stable and
// meant for programmatic dispatch; the message is for humans.
class Error : public std::runtime_error {
  public:
    Error(ErrorCode code, const std::string& message,
          std::optional<std::size_t> layer = std::nullopt)
        : std::runtime_error(message), code_(code), layer_(layer) {}

    ErrorCode code() const noexcept { return code_; }

    // Set for dimension mismatches that can be pinned to one dense layer.
    std::optional<std::size_t> layer() const noexcept { return layer_; }

  private:
    ErrorCode code_;
    std::optional<std::size_t> layer_;
};

}  // namespace fedssd
