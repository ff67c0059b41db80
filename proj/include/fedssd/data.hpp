#pragma once

#include "fedssd/matrix.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace fedssd {

struct LabeledDataset {
    Matrix features;          // [n x d]
    std::vector<int> labels;  // [n], each in [0, num_classes)
    std::size_t num_classes = 0;
    std::string name;

    std::size_t size() const noexcept { return labels.size(); }
    std::size_t dims() const noexcept { return features.cols(); }

    // Throws on misaligned rows or labels outside [0, num_classes).
    void validate() const;

    std::vector<std::size_t> class_counts() const;

    friend bool operator==(const LabeledDataset&, const LabeledDataset&) = default;
};

LabeledDataset subset(const LabeledDataset& ds, std::span<const std::size_t> indices);

struct SyntheticSpec {
    std::size_t num_classes = 10;
    std::size_t dims = 20;
    std::size_t per_class = 100;
    double separation = 3.0;
};

// Unit-variance Gaussian blobs; class means sit at `separation` from the
// origin along seeded random directions. Rows are class-major.
LabeledDataset generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

// Splits each class in order: the first `first_per_class` rows of every class
// go to `first`, the rest to `second`.
struct DatasetSplit {
    LabeledDataset first;
    LabeledDataset second;
};
DatasetSplit split_per_class(const LabeledDataset& ds, std::size_t first_per_class);

// IDX (MNIST) image/label pair. Pixels are scaled to [0, 1]; images are
// flattened row-major.
LabeledDataset load_idx(const std::filesystem::path& images_path,
                        const std::filesystem::path& labels_path);

struct QuantitySkew {
    std::size_t labels_per_client;
};
struct DirichletSkew {
    double concentration;
};
using PartitionStrategy = std::variant<QuantitySkew, DirichletSkew>;

struct PartitionPlan {
    std::vector<std::vector<std::size_t>> client_indices;  // sorted ascending
    PartitionStrategy strategy;
    std::uint64_t seed = 0;

    std::size_t num_clients() const noexcept { return client_indices.size(); }
};

PartitionPlan partition_dirichlet(const LabeledDataset& ds, std::size_t num_clients,
                                  double concentration, std::uint64_t seed);

PartitionPlan partition_quantity(const LabeledDataset& ds, std::size_t num_clients,
                                 std::size_t labels_per_client, std::uint64_t seed);

inline constexpr int kDirichletMaxAttempts = 20;

// Mean over non-empty clients of the L1 distance between the client's label
// distribution and the uniform distribution over classes.
double label_skew_l1(const LabeledDataset& ds, const PartitionPlan& plan);

struct AuxiliarySample {
    LabeledDataset auxiliary;                 // class-major, ascending index within class
    std::vector<std::size_t> aux_indices;     // into the parent dataset
    std::vector<std::size_t> remaining_indices;
};

AuxiliarySample sample_auxiliary(const LabeledDataset& ds, std::size_t per_class,
                                 std::uint64_t seed);

}  // namespace fedssd
