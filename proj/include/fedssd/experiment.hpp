#pragma once

// Drives complete experiments: data preparation, partitioning, federation and
// artifact emission, one pipeline per (algorithm, seed).
//
// Layout under the output directory:
//   <algo>/seed_<s>/metrics.csv    per-round CSV
//   <algo>/seed_<s>/results.json   config echo, seeds, per-round detail
//   <algo>/seed_<s>/model.fssd     final global model
//   <algo>/seed_<s>/round_<t>.fssd optional per-round checkpoints
//   manifest.json                  every artifact with its sha256

#include "fedssd/config.hpp"
#include "fedssd/fed.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace fedssd {

// Env var naming a root directory that relative output dirs are placed under.
inline constexpr const char* kOutputRootEnv = "FEDSSD_OUTPUT_ROOT";

std::filesystem::path resolve_output_dir(const std::filesystem::path& out_dir);

// Client, auxiliary and test sets for one master seed.
struct PreparedData {
    FederationData federation;
    PartitionPlan plan;
};

PreparedData prepare_data(const ExperimentConfig& config, const SeedSet& seeds);

struct Artifact {
    std::string path;  // relative to the output directory
    std::string kind;  // csv | json | checkpoint
    std::string sha256;
};

struct RunFailure {
    std::string algorithm;
    std::uint64_t seed = 0;
    std::string message;
};

struct ExperimentOutcome {
    std::filesystem::path out_dir;
    std::vector<Artifact> artifacts;
    std::vector<RunFailure> failures;

    bool ok() const noexcept { return failures.empty(); }
};

// Failures abort only the affected (algorithm, seed) pipeline; the rest still run.
ExperimentOutcome run_experiment(const ExperimentConfig& config);

struct CompareRow {
    std::string run;
    std::size_t rounds = 0;
    double final_accuracy = 0.0;
    double best_accuracy = 0.0;
    std::optional<std::size_t> rounds_to_target;
};

struct CompareTable {
    double target = 0.0;  // final accuracy of the first run
    std::vector<CompareRow> rows;
};

// Each entry is a metrics.csv, a directory holding one, or a directory with
// exactly one seed_* subdirectory holding one.
CompareTable compare(const std::vector<std::filesystem::path>& runs);

void print_compare(std::ostream& out, const CompareTable& table);
void write_compare_csv(const std::filesystem::path& path, const CompareTable& table);

// Human summary of a checkpoint, results document, manifest, or output dir.
void inspect(const std::filesystem::path& path, std::ostream& out);

}  // namespace fedssd
