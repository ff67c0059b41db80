// fedssd: run, compare and inspect federated distillation experiments.
//
// Exit codes: 0 ok, 1 config error, 2 runtime error.

#include "fedssd/config.hpp"
#include "fedssd/error.hpp"
#include "fedssd/experiment.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <iostream>
#include <optional>

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

struct RunOptions {
    std::string config_path;
    std::string preset;
    std::vector<std::uint64_t> seeds;
    std::string algo;
    std::optional<double> m_max, mu, alpha, tau;
    std::optional<std::size_t> rounds, workers;
    std::string out;
    std::vector<std::string> sets;
};

std::string format_number(double v) { return fmt::format("{:.17g}", v); }

int do_run(const RunOptions& opt) {
    fedssd::ExperimentConfig cfg;
    try {
        if (!opt.config_path.empty() && !opt.preset.empty()) {
            throw fedssd::Error(fedssd::ErrorCode::config, "use either --config or --preset, not both");
        }
        std::string text;
        if (!opt.preset.empty()) {
            const auto preset = fedssd::preset_text(opt.preset);
            if (!preset) {
                std::string names;
                for (const auto& n : fedssd::preset_names()) names += " " + n;
                throw fedssd::Error(fedssd::ErrorCode::config,
                                    fmt::format("unknown preset '{}'; available:{}", opt.preset, names));
            }
            text = *preset;
        }

        fedssd::Overrides overrides;
        for (const auto& kv : opt.sets) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) {
                throw fedssd::Error(fedssd::ErrorCode::config,
                                    fmt::format("--set expects key=value, got '{}'", kv));
            }
            overrides.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
        }
        if (!opt.algo.empty()) overrides.emplace_back("algorithm.name", opt.algo);
        if (opt.m_max) overrides.emplace_back("algorithm.m_max", format_number(*opt.m_max));
        if (opt.mu) overrides.emplace_back("algorithm.mu", format_number(*opt.mu));
        if (opt.alpha) overrides.emplace_back("algorithm.alpha", format_number(*opt.alpha));
        if (opt.tau) overrides.emplace_back("algorithm.tau", format_number(*opt.tau));
        if (opt.rounds) overrides.emplace_back("federation.rounds", std::to_string(*opt.rounds));
        if (opt.workers) overrides.emplace_back("federation.workers", std::to_string(*opt.workers));
        if (!opt.out.empty()) overrides.emplace_back("output.dir", opt.out);
        if (!opt.seeds.empty()) {
            std::string list;
            for (auto s : opt.seeds) list += (list.empty() ? "" : ",") + std::to_string(s);
            overrides.emplace_back("run.seeds", list);
        }

        cfg = opt.config_path.empty() ? fedssd::parse_config(text, overrides)
                                      : fedssd::load_config(opt.config_path, overrides);
    } catch (const fedssd::Error& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    }

    try {
        const auto outcome = fedssd::run_experiment(cfg);
        std::cout << fmt::format("{} artifacts written under {}\n", outcome.artifacts.size(),
                                 outcome.out_dir.string());
        if (!outcome.ok()) {
            std::cerr << fmt::format("{} run(s) failed:\n", outcome.failures.size());
            for (const auto& f : outcome.failures) {
                std::cerr << fmt::format("  {} seed {}: {}\n", f.algorithm, f.seed, f.message);
            }
            return kExitRuntime;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Federated learning simulator with selective self-distillation"};
    app.require_subcommand(1);

    RunOptions run_opt;
    auto* run = app.add_subcommand("run", "Run an experiment from a config file or preset");
    run->add_option("--config", run_opt.config_path, "INI-style experiment config")->check(CLI::ExistingFile);
    run->add_option("--preset", run_opt.preset, "Built-in toy-scale recipe");
    run->add_option("--seed", run_opt.seeds, "Master seed(s); replaces the config's seed list");
    run->add_option("--algo", run_opt.algo, "fedavg, fedprox, kl, mse or ssd (comma list allowed)");
    run->add_option("--m-max", run_opt.m_max, "Upper bound of the selective distillation weight");
    run->add_option("--mu", run_opt.mu, "Proximal term weight");
    run->add_option("--alpha", run_opt.alpha, "Constant distillation coefficient (kl, mse)");
    run->add_option("--tau", run_opt.tau, "KL temperature");
    run->add_option("--rounds", run_opt.rounds, "Communication rounds");
    run->add_option("--workers", run_opt.workers, "Clients trained concurrently");
    run->add_option("--out", run_opt.out, "Output directory");
    run->add_option("--set", run_opt.sets, "Override any config key: section.key=value");

    std::vector<std::string> compare_runs;
    std::string compare_out;
    auto* cmp = app.add_subcommand("compare", "Compare final/best accuracy and rounds-to-target");
    cmp->add_option("runs", compare_runs, "Run directories or metrics.csv files")->required()->expected(2, -1);
    cmp->add_option("--out", compare_out, "Also write the table as CSV");

    std::string inspect_path;
    auto* insp = app.add_subcommand("inspect", "Summarize a checkpoint, results, manifest or run dir");
    insp->add_option("path", inspect_path)->required();

    auto* presets = app.add_subcommand("presets", "List built-in presets");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    if (*run) return do_run(run_opt);

    try {
        if (*cmp) {
            std::vector<std::filesystem::path> paths(compare_runs.begin(), compare_runs.end());
            const auto table = fedssd::compare(paths);
            fedssd::print_compare(std::cout, table);
            if (!compare_out.empty()) fedssd::write_compare_csv(compare_out, table);
        } else if (*insp) {
            fedssd::inspect(inspect_path, std::cout);
        } else if (*presets) {
            for (const auto& name : fedssd::preset_names()) {
                std::cout << "# " << name << '\n' << *fedssd::preset_text(name) << '\n';
            }
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitOk;
}
