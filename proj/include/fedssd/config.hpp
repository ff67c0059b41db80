#pragma once

// Experiment configuration: an INI-style file ([section] headers, key = value
// lines) plus dotted-key overrides ("algorithm.m_max=0.001") that win over the
// file.

#include "fedssd/data.hpp"
#include "fedssd/fed.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace fedssd {

enum class DataSource { synthetic, idx };

struct DatasetSpec {
    DataSource source = DataSource::synthetic;
    SyntheticSpec synthetic{10, 20, 300, 2.5};  // per_class counts the training pool
    std::size_t test_per_class = 100;
    std::filesystem::path train_images, train_labels, test_images, test_labels;
};

struct AlgorithmChoice {
    std::string name;  // fedavg | fedprox | kl | mse | ssd
    CompositeLossSpec loss;
};

struct ExperimentConfig {
    DatasetSpec dataset;
    PartitionStrategy partition = DirichletSkew{0.5};
    FederationConfig federation;  // seeds are filled per run from the master seed
    std::vector<AlgorithmChoice> algorithms;
    std::size_t aux_per_class = 64;
    std::filesystem::path out_dir = "runs";
    bool round_checkpoints = false;
    std::vector<std::uint64_t> seeds{0};

    // Everything that determines results; excludes output location and worker
    // count so equal experiments echo identically.
    nlohmann::json to_json() const;
};

using Overrides = std::vector<std::pair<std::string, std::string>>;

// Throws Error(ErrorCode::config) naming the offending key and constraint.
ExperimentConfig parse_config(std::string_view text, const Overrides& overrides = {});
ExperimentConfig load_config(const std::filesystem::path& path, const Overrides& overrides = {});

AlgorithmChoice make_algorithm(std::string_view name, double m_max, double mu, double alpha,
                               double tau, double dead_zone = kDeadZone);

// Built-in recipes. All are toy scale on synthetic Gaussian data.
std::vector<std::string> preset_names();
std::optional<std::string> preset_text(std::string_view name);

// Keys that must be present in every config.
std::vector<std::string> required_keys();

}  // namespace fedssd
