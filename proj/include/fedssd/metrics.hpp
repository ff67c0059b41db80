#pragma once

#include "fedssd/confusion.hpp"
#include "fedssd/data.hpp"
#include "fedssd/distill.hpp"
#include "fedssd/nn.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fedssd {

struct Evaluation {
    double accuracy = 0.0;
    std::vector<double> class_accuracy;  // per-class recall; 0 for classes absent from the set
    ConfusionCounts confusion;
};

Evaluation evaluate(const ModelParams& params, const LabeledDataset& test);

// Acc_G - Acc_L: positive when local training lost accuracy the global model had.
double forgetting_gap(double acc_global, double acc_local_mean);

// First index whose accuracy reaches `target`.
std::optional<std::size_t> rounds_to_target(std::span<const double> acc_series, double target);

struct ClientMetrics {
    std::size_t client = 0;
    std::size_t samples = 0;
    double acc_local = 0.0;
    double ce_loss = 0.0;           // mean over the last local epoch's batches
    double regularizer_loss = 0.0;  // same, for the distillation / proximal term
};

struct RoundMetrics {
    double acc_global = 0.0;       // model the round started from
    double acc_global_next = 0.0;  // aggregate produced by the round
    double acc_local_mean = 0.0;   // unweighted over participating clients
    double forgetting_gap = 0.0;   // acc_global - acc_local_mean
    double forgetting_gap_post = 0.0;  // acc_global_next - acc_local_mean
    std::vector<double> class_accuracy;  // of the starting global model
    ConfusionCounts confusion;           // of the starting global model
    std::vector<ClientMetrics> clients;

    double mean_ce_loss() const;
    double mean_regularizer_loss() const;
};

struct RoundRecord {
    std::size_t round = 0;
    std::vector<std::size_t> participants;
    std::optional<CredibilityMatrix> credibility;  // ssd mode only
    std::string params_digest;                     // sha256 of the aggregate's checkpoint bytes
    RoundMetrics metrics;
};

inline constexpr int kCsvSchemaVersion = 1;
inline constexpr const char* kResultsSchema = "fedssd-results/1";

std::string csv_header(std::size_t num_classes);

void write_metrics_csv(std::ostream& out, std::span<const RoundRecord> records,
                       std::size_t num_classes);

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t column(std::string_view name) const;
    std::vector<double> numeric_column(std::string_view name) const;
};

CsvTable read_csv(const std::filesystem::path& path);

nlohmann::json to_json(const RoundRecord& record);
RoundRecord record_from_json(const nlohmann::json& j);

nlohmann::json results_document(std::span<const RoundRecord> records, const nlohmann::json& config,
                                const nlohmann::json& seeds, const Evaluation& final_eval);

// Writes the per-round CSV and the JSON results document. Output bytes are a
// pure function of the inputs.
void emit(std::span<const RoundRecord> records, std::size_t num_classes,
          const nlohmann::json& config, const nlohmann::json& seeds, const Evaluation& final_eval,
          const std::filesystem::path& csv_path, const std::filesystem::path& json_path);

// %.17g formatting used for every float written to disk.
std::string format_real(double value);

}  // namespace fedssd
