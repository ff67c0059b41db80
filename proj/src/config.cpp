#include "fedssd/config.hpp"

#include "fedssd/error.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>
#include <fmt/ranges.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace fedssd {

namespace {

namespace pt = boost::property_tree;

const std::set<std::string, std::less<>> kKnownKeys = {
    "dataset.source",         "dataset.classes",         "dataset.dims",
    "dataset.per_class",      "dataset.test_per_class",  "dataset.separation",
    "dataset.train_images",   "dataset.train_labels",    "dataset.test_images",
    "dataset.test_labels",    "partition.strategy",      "partition.delta",
    "partition.labels_per_client",
    "federation.clients",     "federation.participation", "federation.rounds",
    "federation.local_epochs", "federation.batch_size",  "federation.learning_rate",
    "federation.momentum",    "federation.hidden",       "federation.workers",
    "algorithm.name",         "algorithm.m_max",         "algorithm.mu",
    "algorithm.alpha",        "algorithm.tau",           "algorithm.dead_zone",
    "auxiliary.per_class",    "output.dir",              "output.round_checkpoints",
    "run.seeds",
};

[[noreturn]] void config_error(const std::string& msg) { throw Error(ErrorCode::config, msg); }

std::string trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_list(std::string_view s) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= s.size()) {
        const auto comma = s.find(',', start);
        const auto piece = trim(s.substr(start, comma == std::string_view::npos ? s.npos : comma - start));
        if (!piece.empty()) out.push_back(piece);
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

// Flat "section.key" -> value view of the file plus overrides.
class Settings {
  public:
    Settings(std::string_view text, const Overrides& overrides) {
        pt::ptree tree;
        std::istringstream in{std::string(text)};
        try {
            pt::read_ini(in, tree);
        } catch (const pt::ini_parser_error& e) {
            config_error(fmt::format("config syntax error at line {}: {}", e.line(), e.message()));
        }
        for (const auto& [section, body] : tree) {
            if (body.empty()) {
                config_error(fmt::format("unknown key '{}': keys must sit under a [section]", section));
            }
            for (const auto& [key, value] : body) {
                set(section + "." + key, value.get_value<std::string>());
            }
        }
        for (const auto& [key, value] : overrides) set(key, value);
    }

    bool has(std::string_view key) const { return values_.contains(key); }

    std::optional<std::string> raw(std::string_view key) const {
        const auto it = values_.find(key);
        if (it == values_.end()) return std::nullopt;
        return it->second;
    }

    std::string text(std::string_view key, std::string fallback) const {
        return raw(key).value_or(std::move(fallback));
    }

    template <typename T>
    T number(std::string_view key, T fallback) const {
        const auto value = raw(key);
        if (!value) return fallback;
        T out{};
        const char* first = value->data();
        const char* last = first + value->size();
        const auto [ptr, ec] = std::from_chars(first, last, out);
        if (ec != std::errc() || ptr != last) {
            config_error(fmt::format("key '{}': expected {}, got '{}'", key,
                                     std::is_integral_v<T> ? "a non-negative integer" : "a number",
                                     *value));
        }
        return out;
    }

    bool flag(std::string_view key, bool fallback) const {
        const auto value = raw(key);
        if (!value) return fallback;
        if (*value == "true" || *value == "1" || *value == "yes") return true;
        if (*value == "false" || *value == "0" || *value == "no") return false;
        config_error(fmt::format("key '{}': expected true/false, got '{}'", key, *value));
    }

  private:
    void set(const std::string& key, const std::string& value) {
        if (!kKnownKeys.contains(key)) config_error(fmt::format("unknown key '{}'", key));
        values_[key] = trim(value);
    }

    std::map<std::string, std::string, std::less<>> values_;
};

void require(bool ok, std::string_view key, const std::string& constraint) {
    if (!ok) config_error(fmt::format("key '{}': {}", key, constraint));
}

}  // namespace

std::vector<std::string> required_keys() { return {"dataset.source", "algorithm.name"}; }

AlgorithmChoice make_algorithm(std::string_view name, double m_max, double mu, double alpha,
                               double tau, double dead_zone) {
    CompositeLossSpec loss;
    loss.temperature = tau;
    loss.dead_zone = dead_zone;
    if (name == "fedavg") {
        loss.mode = LossMode::ce_only;
    } else if (name == "fedprox") {
        loss.mode = LossMode::prox;
        loss.coefficient = mu;
    } else if (name == "kl") {
        loss.mode = LossMode::kl_const;
        loss.coefficient = alpha;
    } else if (name == "mse") {
        loss.mode = LossMode::mse_const;
        loss.coefficient = alpha;
    } else if (name == "ssd") {
        loss.mode = LossMode::ssd;
        loss.coefficient = m_max;
    } else {
        config_error(fmt::format("key 'algorithm.name': unknown algorithm '{}' "
                                 "(expected fedavg, fedprox, kl, mse or ssd)",
                                 name));
    }
    return {std::string(name), loss};
}

ExperimentConfig parse_config(std::string_view text, const Overrides& overrides) {
    const Settings s(text, overrides);

    std::vector<std::string> missing;
    for (const auto& key : required_keys()) {
        if (!s.has(key)) missing.push_back(key);
    }
    if (!missing.empty()) {
        config_error(fmt::format("missing required keys: {}", fmt::join(missing, ", ")));
    }

    ExperimentConfig cfg;

    const auto source = s.text("dataset.source", "");
    if (source == "synthetic") {
        cfg.dataset.source = DataSource::synthetic;
    } else if (source == "idx") {
        cfg.dataset.source = DataSource::idx;
    } else {
        config_error(fmt::format("key 'dataset.source': expected synthetic or idx, got '{}'", source));
    }
    auto& syn = cfg.dataset.synthetic;
    syn.num_classes = s.number<std::size_t>("dataset.classes", syn.num_classes);
    syn.dims = s.number<std::size_t>("dataset.dims", syn.dims);
    syn.per_class = s.number<std::size_t>("dataset.per_class", syn.per_class);
    syn.separation = s.number<double>("dataset.separation", syn.separation);
    cfg.dataset.test_per_class = s.number<std::size_t>("dataset.test_per_class", cfg.dataset.test_per_class);
    cfg.dataset.train_images = s.text("dataset.train_images", "");
    cfg.dataset.train_labels = s.text("dataset.train_labels", "");
    cfg.dataset.test_images = s.text("dataset.test_images", "");
    cfg.dataset.test_labels = s.text("dataset.test_labels", "");
    if (cfg.dataset.source == DataSource::synthetic) {
        require(syn.num_classes >= 2, "dataset.classes", "must be at least 2");
        require(syn.dims >= 2, "dataset.dims", "must be at least 2");
        require(syn.per_class >= 1, "dataset.per_class", "must be positive");
        require(cfg.dataset.test_per_class >= 1, "dataset.test_per_class", "must be positive");
        require(syn.separation >= 0.0 && std::isfinite(syn.separation), "dataset.separation",
                "must be finite and non-negative");
    } else {
        for (const char* key : {"dataset.train_images", "dataset.train_labels",
                                "dataset.test_images", "dataset.test_labels"}) {
            require(s.has(key), key, "required when dataset.source = idx");
        }
    }

    const auto strategy = s.text("partition.strategy", "dirichlet");
    if (strategy == "dirichlet") {
        const double delta = s.number<double>("partition.delta", 0.5);
        require(delta > 0.0 && std::isfinite(delta), "partition.delta", "must be positive");
        cfg.partition = DirichletSkew{delta};
    } else if (strategy == "quantity") {
        require(s.has("partition.labels_per_client"), "partition.labels_per_client",
                "required when partition.strategy = quantity");
        const auto k = s.number<std::size_t>("partition.labels_per_client", 0);
        require(k >= 1, "partition.labels_per_client", "must be positive");
        if (cfg.dataset.source == DataSource::synthetic) {
            require(k <= syn.num_classes, "partition.labels_per_client",
                    fmt::format("cannot exceed the {} classes", syn.num_classes));
        }
        cfg.partition = QuantitySkew{k};
    } else {
        config_error(fmt::format("key 'partition.strategy': expected dirichlet or quantity, got '{}'",
                                 strategy));
    }

    auto& fed = cfg.federation;
    fed.clients = s.number<std::size_t>("federation.clients", fed.clients);
    fed.participation = s.number<double>("federation.participation", fed.participation);
    fed.rounds = s.number<std::size_t>("federation.rounds", fed.rounds);
    fed.local_epochs = s.number<std::size_t>("federation.local_epochs", fed.local_epochs);
    fed.batch_size = s.number<std::size_t>("federation.batch_size", fed.batch_size);
    fed.learning_rate = s.number<double>("federation.learning_rate", fed.learning_rate);
    fed.momentum = s.number<double>("federation.momentum", fed.momentum);
    fed.workers = s.number<std::size_t>("federation.workers", fed.workers);
    if (const auto hidden = s.raw("federation.hidden")) {
        fed.hidden.clear();
        for (const auto& w : split_list(*hidden)) {
            std::size_t width = 0;
            const auto [ptr, ec] = std::from_chars(w.data(), w.data() + w.size(), width);
            require(ec == std::errc() && ptr == w.data() + w.size() && width > 0,
                    "federation.hidden", fmt::format("expected positive widths, got '{}'", *hidden));
            fed.hidden.push_back(width);
        }
    }
    require(fed.clients >= 1, "federation.clients", "must be positive");
    require(fed.participation > 0.0 && fed.participation <= 1.0, "federation.participation",
            "must lie in (0, 1]");
    require(fed.local_epochs >= 1, "federation.local_epochs", "must be positive");
    require(fed.batch_size >= 1, "federation.batch_size", "must be positive");
    require(fed.learning_rate > 0.0, "federation.learning_rate", "must be positive");
    require(fed.momentum >= 0.0 && fed.momentum < 1.0, "federation.momentum", "must lie in [0, 1)");
    require(fed.workers >= 1, "federation.workers", "must be positive");

    const double m_max = s.number<double>("algorithm.m_max", 0.01);
    const double mu = s.number<double>("algorithm.mu", 0.01);
    const double alpha = s.number<double>("algorithm.alpha", 0.01);
    const double tau = s.number<double>("algorithm.tau", 1.0);
    const double dead_zone = s.number<double>("algorithm.dead_zone", kDeadZone);
    require(m_max >= 0.0 && std::isfinite(m_max), "algorithm.m_max", "must be non-negative");
    require(mu >= 0.0 && std::isfinite(mu), "algorithm.mu", "must be non-negative");
    require(alpha >= 0.0 && std::isfinite(alpha), "algorithm.alpha", "must be non-negative");
    require(tau > 0.0 && std::isfinite(tau), "algorithm.tau", "must be positive");
    require(dead_zone >= 0.0 && dead_zone <= 1.0, "algorithm.dead_zone", "must lie in [0, 1]");
    const auto names = split_list(s.text("algorithm.name", ""));
    require(!names.empty(), "algorithm.name", "must name at least one algorithm");
    std::set<std::string> seen;
    for (const auto& name : names) {
        require(seen.insert(name).second, "algorithm.name", fmt::format("'{}' listed twice", name));
        cfg.algorithms.push_back(make_algorithm(name, m_max, mu, alpha, tau, dead_zone));
    }
    fed.algorithm = cfg.algorithms.front().loss;

    cfg.aux_per_class = s.number<std::size_t>("auxiliary.per_class", cfg.aux_per_class);
    require(cfg.aux_per_class >= 1, "auxiliary.per_class", "must be positive");
    if (cfg.dataset.source == DataSource::synthetic) {
        require(cfg.aux_per_class < syn.per_class, "auxiliary.per_class",
                fmt::format("must be smaller than dataset.per_class ({})", syn.per_class));
    }

    cfg.out_dir = s.text("output.dir", cfg.out_dir.string());
    require(!cfg.out_dir.empty(), "output.dir", "must not be empty");
    cfg.round_checkpoints = s.flag("output.round_checkpoints", false);

    if (const auto seeds = s.raw("run.seeds")) {
        cfg.seeds.clear();
        for (const auto& token : split_list(*seeds)) {
            std::uint64_t v = 0;
            const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
            require(ec == std::errc() && ptr == token.data() + token.size(), "run.seeds",
                    fmt::format("expected non-negative integers, got '{}'", *seeds));
            cfg.seeds.push_back(v);
        }
        require(!cfg.seeds.empty(), "run.seeds", "must list at least one seed");
    }
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path, const Overrides& overrides) {
    std::ifstream in(path);
    if (!in) config_error(fmt::format("cannot open config file '{}'", path.string()));
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse_config(buffer.str(), overrides);
}

nlohmann::json ExperimentConfig::to_json() const {
    nlohmann::json dataset;
    if (this->dataset.source == DataSource::synthetic) {
        const auto& syn = this->dataset.synthetic;
        dataset = {{"source", "synthetic"},
                   {"classes", syn.num_classes},
                   {"dims", syn.dims},
                   {"per_class", syn.per_class},
                   {"test_per_class", this->dataset.test_per_class},
                   {"separation", syn.separation}};
    } else {
        dataset = {{"source", "idx"},
                   {"train_images", this->dataset.train_images.string()},
                   {"train_labels", this->dataset.train_labels.string()},
                   {"test_images", this->dataset.test_images.string()},
                   {"test_labels", this->dataset.test_labels.string()}};
    }
    nlohmann::json part;
    if (const auto* q = std::get_if<QuantitySkew>(&partition)) {
        part = {{"strategy", "quantity"}, {"labels_per_client", q->labels_per_client}};
    } else {
        part = {{"strategy", "dirichlet"}, {"delta", std::get<DirichletSkew>(partition).concentration}};
    }
    nlohmann::json algos = nlohmann::json::array();
    for (const auto& a : algorithms) {
        algos.push_back({{"name", a.name},
                         {"mode", to_string(a.loss.mode)},
                         {"coefficient", a.loss.coefficient},
                         {"temperature", a.loss.temperature},
                         {"dead_zone", a.loss.dead_zone}});
    }
    return {{"dataset", dataset},
            {"partition", part},
            {"federation",
             {{"clients", federation.clients},
              {"participation", federation.participation},
              {"rounds", federation.rounds},
              {"local_epochs", federation.local_epochs},
              {"batch_size", federation.batch_size},
              {"learning_rate", federation.learning_rate},
              {"momentum", federation.momentum},
              {"hidden", federation.hidden}}},
            {"algorithms", algos},
            {"auxiliary_per_class", aux_per_class},
            {"seeds", seeds}};
}

namespace {

// Toy-scale recipes on synthetic Gaussian blobs; none of them reproduces
// image-benchmark numbers.
const std::map<std::string, std::string, std::less<>> kPresets = {
    {"defaults",
     "[dataset]\nsource = synthetic\n"
     "[algorithm]\nname = fedavg\n"},
    {"toy-synthetic-forgetting",
     "[dataset]\nsource = synthetic\nclasses = 10\ndims = 20\n"
     "[partition]\nstrategy = dirichlet\ndelta = 0.1\n"
     "[federation]\nclients = 10\nrounds = 30\n"
     "[algorithm]\nname = fedavg\n"
     "[run]\nseeds = 1, 2, 3, 4, 5\n"},
    {"toy-synthetic-compare",
     "[dataset]\nsource = synthetic\nclasses = 10\ndims = 20\n"
     "[partition]\nstrategy = dirichlet\ndelta = 0.1\n"
     "[federation]\nclients = 10\nrounds = 30\n"
     "[algorithm]\nname = fedavg, fedprox, ssd\nm_max = 0.01\nmu = 0.01\n"
     "[run]\nseeds = 1\n"},
    {"toy-synthetic-ablation",
     "[dataset]\nsource = synthetic\nclasses = 10\ndims = 20\n"
     "[partition]\nstrategy = dirichlet\ndelta = 0.1\n"
     "[federation]\nclients = 10\nrounds = 30\n"
     "[algorithm]\nname = kl, mse, ssd\nm_max = 0.1\nalpha = 0.1\n"
     "[run]\nseeds = 1\n"},
    {"toy-synthetic-quantity",
     "[dataset]\nsource = synthetic\nclasses = 10\ndims = 20\n"
     "[partition]\nstrategy = quantity\nlabels_per_client = 2\n"
     "[federation]\nclients = 10\nrounds = 30\n"
     "[algorithm]\nname = fedavg, ssd\nm_max = 0.01\n"
     "[run]\nseeds = 1\n"},
};

}  // namespace

std::vector<std::string> preset_names() {
    std::vector<std::string> out;
    for (const auto& [name, _] : kPresets) out.push_back(name);
    return out;
}

std::optional<std::string> preset_text(std::string_view name) {
    const auto it = kPresets.find(name);
    if (it == kPresets.end()) return std::nullopt;
    return it->second;
}

}  // namespace fedssd
