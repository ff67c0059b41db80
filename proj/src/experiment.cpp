#include "fedssd/experiment.hpp"

#include "fedssd/checkpoint.hpp"
#include "fedssd/error.hpp"

#include <fmt/format.h>
#include <fmt/ostream.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <ostream>
#include <type_traits>
#include <variant>

namespace fedssd {

namespace fs = std::filesystem;

fs::path resolve_output_dir(const fs::path& out_dir) {
    if (out_dir.is_absolute()) return out_dir;
    if (const char* root = std::getenv(kOutputRootEnv); root != nullptr && *root != '\0') {
        return fs::path(root) / out_dir;
    }
    return out_dir;
}

PreparedData prepare_data(const ExperimentConfig& config, const SeedSet& seeds) {
    LabeledDataset pool, test;
    if (config.dataset.source == DataSource::synthetic) {
        SyntheticSpec spec = config.dataset.synthetic;
        spec.per_class += config.dataset.test_per_class;
        auto split = split_per_class(generate_synthetic(spec, seeds.data),
                                     config.dataset.synthetic.per_class);
        pool = std::move(split.first);
        test = std::move(split.second);
        test.name += "-test";
    } else {
        pool = load_idx(config.dataset.train_images, config.dataset.train_labels);
        test = load_idx(config.dataset.test_images, config.dataset.test_labels);
        const std::size_t K = std::max(pool.num_classes, test.num_classes);
        pool.num_classes = test.num_classes = K;
    }

    auto aux = sample_auxiliary(pool, config.aux_per_class, seeds.auxiliary);
    const LabeledDataset remaining = subset(pool, aux.remaining_indices);

    PartitionPlan plan = std::visit(
        [&](const auto& strategy) {
            using T = std::decay_t<decltype(strategy)>;
            if constexpr (std::is_same_v<T, DirichletSkew>) {
                return partition_dirichlet(remaining, config.federation.clients,
                                           strategy.concentration, seeds.partition);
            } else {
                return partition_quantity(remaining, config.federation.clients,
                                          strategy.labels_per_client, seeds.partition);
            }
        },
        config.partition);

    PreparedData out;
    for (const auto& idx : plan.client_indices) out.federation.clients.push_back(subset(remaining, idx));
    out.federation.auxiliary = std::move(aux.auxiliary);
    out.federation.test = std::move(test);
    out.plan = std::move(plan);
    return out;
}

namespace {

nlohmann::json seeds_json(std::uint64_t master, const SeedSet& s) {
    return {{"master", master},     {"data", s.data},         {"auxiliary", s.auxiliary},
            {"partition", s.partition}, {"init", s.init},     {"sampling", s.sampling},
            {"training", s.training}};
}

std::vector<Artifact> run_one(const ExperimentConfig& config, const AlgorithmChoice& algo,
                              std::uint64_t master, const fs::path& root) {
    const SeedSet seeds = SeedSet::from_master(master);
    const PreparedData data = prepare_data(config, seeds);

    FederationConfig fed = config.federation;
    fed.algorithm = algo.loss;
    fed.seeds = seeds;

    const fs::path rel_dir = fs::path(algo.name) / fmt::format("seed_{}", master);
    const fs::path dir = root / rel_dir;
    fs::create_directories(dir);

    std::vector<Artifact> artifacts;
    auto add = [&](const fs::path& name, std::string kind) {
        artifacts.push_back({(rel_dir / name).generic_string(), std::move(kind),
                             sha256_file(dir / name)});
    };

    RoundObserver observer;
    if (config.round_checkpoints) {
        observer = [&](const RoundRecord& rec, const ModelParams& params) {
            const auto name = fmt::format("round_{}.fssd", rec.round);
            save_checkpoint(dir / name, params);
            add(name, "checkpoint");
        };
    }
    const FederationResult result = run_federation(fed, data.federation, observer);

    nlohmann::json echo = config.to_json();
    echo["algorithm"] = algo.name;
    const Evaluation final_eval = evaluate(result.final_params, data.federation.test);
    emit(result.records, data.federation.test.num_classes, echo, seeds_json(master, seeds),
         final_eval, dir / "metrics.csv", dir / "results.json");
    save_checkpoint(dir / "model.fssd", result.final_params);
    add("metrics.csv", "csv");
    add("results.json", "json");
    add("model.fssd", "checkpoint");
    return artifacts;
}

}  // namespace

ExperimentOutcome run_experiment(const ExperimentConfig& config) {
    ExperimentOutcome outcome;
    outcome.out_dir = resolve_output_dir(config.out_dir);
    std::error_code ec;
    fs::create_directories(outcome.out_dir, ec);
    if (ec) {
        throw Error(ErrorCode::io, fmt::format("cannot create output directory '{}': {}",
                                               outcome.out_dir.string(), ec.message()));
    }

    for (const auto& algo : config.algorithms) {
        for (std::uint64_t seed : config.seeds) {
            try {
                auto produced = run_one(config, algo, seed, outcome.out_dir);
                outcome.artifacts.insert(outcome.artifacts.end(), produced.begin(), produced.end());
            } catch (const std::exception& e) {
                outcome.failures.push_back({algo.name, seed, e.what()});
                fmt::print(stderr, "{} seed {}: {}\n", algo.name, seed, e.what());
            }
        }
    }

    nlohmann::json manifest = {{"schema", "fedssd-manifest/1"}};
    nlohmann::json artifacts = nlohmann::json::array();
    for (const auto& a : outcome.artifacts) {
        artifacts.push_back({{"path", a.path}, {"kind", a.kind}, {"sha256", a.sha256}});
    }
    nlohmann::json failures = nlohmann::json::array();
    for (const auto& f : outcome.failures) {
        failures.push_back({{"algorithm", f.algorithm}, {"seed", f.seed}, {"message", f.message}});
    }
    manifest["artifacts"] = artifacts;
    manifest["failures"] = failures;
    manifest["config"] = config.to_json();

    const fs::path manifest_path = outcome.out_dir / "manifest.json";
    std::ofstream out(manifest_path, std::ios::binary | std::ios::trunc);
    out << manifest.dump(2) << '\n';
    if (!out) throw Error(ErrorCode::io, fmt::format("cannot write '{}'", manifest_path.string()));
    return outcome;
}

namespace {

fs::path find_metrics(const fs::path& run) {
    if (fs::is_regular_file(run)) return run;
    if (!fs::is_directory(run)) {
        throw Error(ErrorCode::io, fmt::format("run '{}' does not exist", run.string()));
    }
    if (fs::is_regular_file(run / "metrics.csv")) return run / "metrics.csv";
    std::vector<fs::path> seeds;
    for (const auto& entry : fs::directory_iterator(run)) {
        if (entry.is_directory() && entry.path().filename().string().starts_with("seed_") &&
            fs::is_regular_file(entry.path() / "metrics.csv")) {
            seeds.push_back(entry.path() / "metrics.csv");
        }
    }
    if (seeds.size() != 1) {
        throw Error(ErrorCode::invalid_argument,
                    fmt::format("run '{}' holds {} seed directories; name one explicitly",
                                run.string(), seeds.size()));
    }
    return seeds.front();
}

}  // namespace

CompareTable compare(const std::vector<fs::path>& runs) {
    if (runs.size() < 2) throw Error(ErrorCode::invalid_argument, "compare needs at least two runs");
    std::vector<std::vector<double>> series;
    for (const auto& run : runs) {
        series.push_back(read_csv(find_metrics(run)).numeric_column("acc_global_next"));
        if (series.back().empty()) {
            throw Error(ErrorCode::round_mismatch, fmt::format("run '{}' has no rounds", run.string()));
        }
        if (series.back().size() != series.front().size()) {
            throw Error(ErrorCode::round_mismatch,
                        fmt::format("run '{}' has {} rounds, '{}' has {}", run.string(),
                                    series.back().size(), runs.front().string(),
                                    series.front().size()));
        }
    }
    CompareTable table;
    table.target = series.front().back();
    for (std::size_t i = 0; i < runs.size(); ++i) {
        const auto& acc = series[i];
        table.rows.push_back({runs[i].string(), acc.size(), acc.back(),
                              *std::ranges::max_element(acc), rounds_to_target(acc, table.target)});
    }
    return table;
}

void print_compare(std::ostream& out, const CompareTable& table) {
    fmt::print(out, "target accuracy (final of first run): {:.4f}\n", table.target);
    fmt::print(out, "{:<48} {:>7} {:>9} {:>9} {:>10}\n", "run", "rounds", "final", "best", "to_target");
    for (const auto& r : table.rows) {
        fmt::print(out, "{:<48} {:>7} {:>9.4f} {:>9.4f} {:>10}\n", r.run, r.rounds, r.final_accuracy,
                   r.best_accuracy,
                   r.rounds_to_target ? std::to_string(*r.rounds_to_target) : std::string("none"));
    }
}

void write_compare_csv(const fs::path& path, const CompareTable& table) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::io, fmt::format("cannot write '{}'", path.string()));
    out << "run,rounds,final_accuracy,best_accuracy,rounds_to_target,target\n";
    for (const auto& r : table.rows) {
        out << r.run << ',' << r.rounds << ',' << format_real(r.final_accuracy) << ','
            << format_real(r.best_accuracy) << ','
            << (r.rounds_to_target ? std::to_string(*r.rounds_to_target) : std::string()) << ','
            << format_real(table.target) << '\n';
    }
}

namespace {

nlohmann::json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::io, fmt::format("cannot open '{}'", path.string()));
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::io, fmt::format("'{}': {}", path.string(), e.what()));
    }
}

void inspect_checkpoint(const fs::path& path, std::ostream& out) {
    const ModelParams params = load_checkpoint(path);
    fmt::print(out, "checkpoint {}\n  layers: {}\n", path.string(), params.layers().size());
    for (std::size_t l = 0; l < params.layers().size(); ++l) {
        const auto& layer = params.layers()[l];
        fmt::print(out, "    [{}] {} -> {}\n", l, layer.fan_in(), layer.fan_out());
    }
    fmt::print(out, "  parameters: {}\n  sha256: {}\n", params.parameter_count(), params_digest(params));
}

void inspect_results(const nlohmann::json& doc, std::ostream& out) {
    fmt::print(out, "results ({}), algorithm {}, master seed {}\n", doc.at("schema").get<std::string>(),
               doc.at("config").value("algorithm", std::string("?")),
               doc.at("seeds").at("master").get<std::uint64_t>());
    fmt::print(out, "{:>5} {:>9} {:>9} {:>9} {:>9}\n", "round", "acc_G", "acc_L", "gap", "acc_next");
    for (const auto& j : doc.at("rounds")) {
        const RoundRecord rec = record_from_json(j);
        const auto& m = rec.metrics;
        fmt::print(out, "{:>5} {:>9.4f} {:>9.4f} {:>+9.4f} {:>9.4f}\n", rec.round, m.acc_global,
                   m.acc_local_mean, m.forgetting_gap, m.acc_global_next);
    }
    fmt::print(out, "final accuracy: {:.4f}\n", doc.at("final").at("accuracy").get<double>());
}

void inspect_manifest(const nlohmann::json& doc, std::ostream& out) {
    fmt::print(out, "manifest: {} artifacts, {} failures\n", doc.at("artifacts").size(),
               doc.at("failures").size());
    for (const auto& a : doc.at("artifacts")) {
        fmt::print(out, "  {:<10} {}  {}\n", a.at("kind").get<std::string>(),
                   a.at("sha256").get<std::string>().substr(0, 16), a.at("path").get<std::string>());
    }
    for (const auto& f : doc.at("failures")) {
        fmt::print(out, "  FAILED {} seed {}: {}\n", f.at("algorithm").get<std::string>(),
                   f.at("seed").get<std::uint64_t>(), f.at("message").get<std::string>());
    }
}

}  // namespace

void inspect(const fs::path& path, std::ostream& out) {
    if (fs::is_directory(path)) {
        if (fs::is_regular_file(path / "manifest.json")) return inspect(path / "manifest.json", out);
        if (fs::is_regular_file(path / "results.json")) return inspect(path / "results.json", out);
        throw Error(ErrorCode::invalid_argument,
                    fmt::format("'{}' has no manifest.json or results.json", path.string()));
    }
    if (path.extension() == ".fssd") return inspect_checkpoint(path, out);
    if (path.extension() == ".json") {
        const auto doc = read_json(path);
        const auto schema = doc.value("schema", std::string());
        if (schema == kResultsSchema) return inspect_results(doc, out);
        if (schema == "fedssd-manifest/1") return inspect_manifest(doc, out);
        if (doc.contains("matrix") && doc.contains("support")) {
            const auto cm = credibility_from_json(doc);
            fmt::print(out, "credibility matrix, round {}, K = {}\n", cm.round, cm.num_classes());
            const auto w = class_weights(cm);
            for (std::size_t k = 0; k < w.size(); ++k) {
                fmt::print(out, "  class {}: recall {:.4f}, M_class {:.4f}, support {}\n", k,
                           cm.a(k, k), w[k], cm.support[k]);
            }
            return;
        }
        throw Error(ErrorCode::invalid_argument,
                    fmt::format("'{}' is not a fedssd JSON document", path.string()));
    }
    throw Error(ErrorCode::invalid_argument,
                fmt::format("don't know how to inspect '{}'", path.string()));
}

}  // namespace fedssd
