#include "fedssd/metrics.hpp"

#include "fedssd/error.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <fstream>
#include <sstream>

namespace fedssd {

Evaluation evaluate(const ModelParams& params, const LabeledDataset& test) {
    if (test.size() == 0) throw Error(ErrorCode::invalid_argument, "evaluation set is empty");
    Evaluation out;
    out.confusion = confusion_counts(params, test);
    const std::size_t K = out.confusion.num_classes;
    out.accuracy = static_cast<double>(out.confusion.diagonal()) / static_cast<double>(test.size());
    out.class_accuracy.assign(K, 0.0);
    for (std::size_t k = 0; k < K; ++k) {
        const std::size_t support = out.confusion.row_total(k);
        if (support > 0) {
            out.class_accuracy[k] =
                static_cast<double>(out.confusion(k, k)) / static_cast<double>(support);
        }
    }
    return out;
}

double forgetting_gap(double acc_global, double acc_local_mean) {
    return acc_global - acc_local_mean;
}

std::optional<std::size_t> rounds_to_target(std::span<const double> acc_series, double target) {
    for (std::size_t t = 0; t < acc_series.size(); ++t) {
        if (acc_series[t] >= target) return t;
    }
    return std::nullopt;
}

double RoundMetrics::mean_ce_loss() const {
    if (clients.empty()) return 0.0;
    double s = 0.0;
    for (const auto& c : clients) s += c.ce_loss;
    return s / static_cast<double>(clients.size());
}

double RoundMetrics::mean_regularizer_loss() const {
    if (clients.empty()) return 0.0;
    double s = 0.0;
    for (const auto& c : clients) s += c.regularizer_loss;
    return s / static_cast<double>(clients.size());
}

std::string format_real(double value) { return fmt::format("{:.17g}", value); }

std::string csv_header(std::size_t num_classes) {
    std::string h =
        "schema,round,acc_global,acc_global_next,acc_local_mean,forgetting_gap,"
        "forgetting_gap_post,ce_loss,regularizer_loss";
    for (std::size_t k = 0; k < num_classes; ++k) h += fmt::format(",class_acc_{}", k);
    return h;
}

void write_metrics_csv(std::ostream& out, std::span<const RoundRecord> records,
                       std::size_t num_classes) {
    out << csv_header(num_classes) << '\n';
    for (const auto& rec : records) {
        const auto& m = rec.metrics;
        if (m.class_accuracy.size() != num_classes) {
            throw Error(ErrorCode::dimension_mismatch,
                        fmt::format("round {} has {} class accuracies, header has {}", rec.round,
                                    m.class_accuracy.size(), num_classes));
        }
        out << kCsvSchemaVersion << ',' << rec.round << ',' << format_real(m.acc_global) << ','
            << format_real(m.acc_global_next) << ',' << format_real(m.acc_local_mean) << ','
            << format_real(m.forgetting_gap) << ',' << format_real(m.forgetting_gap_post) << ','
            << format_real(m.mean_ce_loss()) << ',' << format_real(m.mean_regularizer_loss());
        for (double a : m.class_accuracy) out << ',' << format_real(a);
        out << '\n';
    }
}

std::size_t CsvTable::column(std::string_view name) const {
    const auto it = std::ranges::find(header, name);
    if (it == header.end()) {
        throw Error(ErrorCode::invalid_argument, fmt::format("CSV has no column '{}'", name));
    }
    return static_cast<std::size_t>(it - header.begin());
}

std::vector<double> CsvTable::numeric_column(std::string_view name) const {
    const std::size_t c = column(name);
    std::vector<double> out;
    out.reserve(rows.size());
    for (const auto& row : rows) out.push_back(std::stod(row.at(c)));
    return out;
}

CsvTable read_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::io, fmt::format("cannot open '{}'", path.string()));
    auto split = [](const std::string& line) {
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        return cells;
    };
    CsvTable table;
    std::string line;
    if (!std::getline(in, line)) {
        throw Error(ErrorCode::io, fmt::format("'{}' is empty", path.string()));
    }
    table.header = split(line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto cells = split(line);
        if (cells.size() != table.header.size()) {
            throw Error(ErrorCode::dimension_mismatch,
                        fmt::format("'{}': row with {} cells, header has {}", path.string(),
                                    cells.size(), table.header.size()));
        }
        table.rows.push_back(std::move(cells));
    }
    return table;
}

namespace {

nlohmann::json confusion_json(const ConfusionCounts& cm) {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t r = 0; r < cm.num_classes; ++r) {
        rows.push_back(std::vector<std::size_t>(
            cm.counts.begin() + static_cast<std::ptrdiff_t>(r * cm.num_classes),
            cm.counts.begin() + static_cast<std::ptrdiff_t>((r + 1) * cm.num_classes)));
    }
    return rows;
}

ConfusionCounts confusion_from_json(const nlohmann::json& rows) {
    ConfusionCounts cm(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const auto row = rows[r].get<std::vector<std::size_t>>();
        if (row.size() != cm.num_classes) {
            throw Error(ErrorCode::dimension_mismatch, "confusion JSON is not square");
        }
        for (std::size_t c = 0; c < row.size(); ++c) cm(r, c) = row[c];
    }
    return cm;
}

}  // namespace

nlohmann::json to_json(const RoundRecord& record) {
    const auto& m = record.metrics;
    nlohmann::json clients = nlohmann::json::array();
    for (const auto& c : m.clients) {
        clients.push_back({{"client", c.client},
                           {"samples", c.samples},
                           {"acc_local", c.acc_local},
                           {"ce_loss", c.ce_loss},
                           {"regularizer_loss", c.regularizer_loss}});
    }
    return {
        {"round", record.round},
        {"participants", record.participants},
        {"params_digest", record.params_digest},
        {"credibility", record.credibility ? to_json(*record.credibility) : nlohmann::json(nullptr)},
        {"metrics",
         {{"acc_global", m.acc_global},
          {"acc_global_next", m.acc_global_next},
          {"acc_local_mean", m.acc_local_mean},
          {"forgetting_gap", m.forgetting_gap},
          {"forgetting_gap_post", m.forgetting_gap_post},
          {"class_accuracy", m.class_accuracy},
          {"confusion", confusion_json(m.confusion)},
          {"clients", clients}}},
    };
}

RoundRecord record_from_json(const nlohmann::json& j) {
    RoundRecord rec;
    rec.round = j.at("round").get<std::size_t>();
    rec.participants = j.at("participants").get<std::vector<std::size_t>>();
    rec.params_digest = j.at("params_digest").get<std::string>();
    if (!j.at("credibility").is_null()) rec.credibility = credibility_from_json(j.at("credibility"));
    const auto& m = j.at("metrics");
    rec.metrics.acc_global = m.at("acc_global").get<double>();
    rec.metrics.acc_global_next = m.at("acc_global_next").get<double>();
    rec.metrics.acc_local_mean = m.at("acc_local_mean").get<double>();
    rec.metrics.forgetting_gap = m.at("forgetting_gap").get<double>();
    rec.metrics.forgetting_gap_post = m.at("forgetting_gap_post").get<double>();
    rec.metrics.class_accuracy = m.at("class_accuracy").get<std::vector<double>>();
    rec.metrics.confusion = confusion_from_json(m.at("confusion"));
    for (const auto& c : m.at("clients")) {
        rec.metrics.clients.push_back({c.at("client").get<std::size_t>(),
                                       c.at("samples").get<std::size_t>(),
                                       c.at("acc_local").get<double>(),
                                       c.at("ce_loss").get<double>(),
                                       c.at("regularizer_loss").get<double>()});
    }
    return rec;
}

nlohmann::json results_document(std::span<const RoundRecord> records, const nlohmann::json& config,
                                const nlohmann::json& seeds, const Evaluation& final_eval) {
    nlohmann::json rounds = nlohmann::json::array();
    for (const auto& rec : records) rounds.push_back(to_json(rec));
    return {{"schema", kResultsSchema},
            {"config", config},
            {"seeds", seeds},
            {"rounds", rounds},
            {"final",
             {{"accuracy", final_eval.accuracy},
              {"class_accuracy", final_eval.class_accuracy},
              {"confusion", confusion_json(final_eval.confusion)}}}};
}

void emit(std::span<const RoundRecord> records, std::size_t num_classes,
          const nlohmann::json& config, const nlohmann::json& seeds, const Evaluation& final_eval,
          const std::filesystem::path& csv_path, const std::filesystem::path& json_path) {
    {
        std::ofstream csv(csv_path, std::ios::binary | std::ios::trunc);
        if (!csv) throw Error(ErrorCode::io, fmt::format("cannot write '{}'", csv_path.string()));
        write_metrics_csv(csv, records, num_classes);
        if (!csv) throw Error(ErrorCode::io, fmt::format("write failed for '{}'", csv_path.string()));
    }
    std::ofstream json(json_path, std::ios::binary | std::ios::trunc);
    if (!json) throw Error(ErrorCode::io, fmt::format("cannot write '{}'", json_path.string()));
    json << results_document(records, config, seeds, final_eval).dump(2) << '\n';
    if (!json) throw Error(ErrorCode::io, fmt::format("write failed for '{}'", json_path.string()));
}

}  // namespace fedssd
