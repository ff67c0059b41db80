#include "fedssd/fed.hpp"

#include "fedssd/checkpoint.hpp"
#include "fedssd/error.hpp"
#include "fedssd/loss.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <memory>
#include <numeric>
#include <random>
#include <thread>

namespace fedssd {

std::size_t FederationConfig::clients_per_round() const {
    // The epsilon absorbs representation error in products like 0.1 * 100.
    const double raw = participation * static_cast<double>(clients);
    const auto m = static_cast<std::size_t>(std::ceil(raw - 1e-9));
    return std::clamp<std::size_t>(m, 1, clients);
}

void FederationConfig::validate() const {
    auto fail = [](const std::string& msg) { throw Error(ErrorCode::invalid_argument, msg); };
    if (clients < 1) fail("federation needs at least one client");
    if (!(participation > 0.0 && participation <= 1.0)) {
        fail(fmt::format("participation ratio {} outside (0, 1]", participation));
    }
    if (local_epochs < 1 && rounds > 0) {
        // E = 0 is allowed for client_update itself, but a federation that
        // never trains is almost certainly a config mistake.
        fail("local_epochs must be positive");
    }
    if (batch_size < 1) fail("batch_size must be positive");
    if (!(learning_rate > 0.0)) fail(fmt::format("learning rate {} must be positive", learning_rate));
    if (!(momentum >= 0.0 && momentum < 1.0)) fail(fmt::format("momentum {} outside [0, 1)", momentum));
    if (workers < 1) fail("workers must be positive");
    algorithm.validate_hyperparameters();
}

std::vector<std::size_t> sample_clients(std::size_t num_clients, double participation,
                                        std::uint64_t round_seed) {
    FederationConfig probe;
    probe.clients = num_clients;
    probe.participation = participation;
    const std::size_t m = probe.clients_per_round();
    std::vector<std::size_t> ids(num_clients);
    std::iota(ids.begin(), ids.end(), 0);
    if (m < num_clients) {
        std::mt19937_64 rng(round_seed);
        std::shuffle(ids.begin(), ids.end(), rng);
        ids.resize(m);
        std::ranges::sort(ids);
    }
    return ids;
}

namespace {

Batch gather(const LabeledDataset& ds, std::span<const std::size_t> order) {
    Batch batch{Matrix(order.size(), ds.dims()), {}};
    batch.labels.reserve(order.size());
    for (std::size_t r = 0; r < order.size(); ++r) {
        std::ranges::copy(ds.features.row(order[r]), batch.inputs.row(r).begin());
        batch.labels.push_back(ds.labels[order[r]]);
    }
    return batch;
}

}  // namespace

ClientResult client_update(const ModelParams& global,
                           const std::optional<CredibilityMatrix>& credibility,
                           const LabeledDataset& local_data, const FederationConfig& config,
                           std::uint64_t seed) {
    if (local_data.size() == 0) {
        throw Error(ErrorCode::empty_client, "client has no local samples");
    }
    local_data.validate();

    CompositeLossSpec spec = config.algorithm;
    if (spec.needs_teacher()) spec.teacher = std::make_shared<const ModelParams>(global);
    if (spec.mode == LossMode::ssd) {
        if (!credibility) {
            throw Error(ErrorCode::missing_teacher, "ssd mode needs the round's credibility matrix");
        }
        spec.class_weights = class_weights(*credibility);
    }

    ClientResult out{global, 0.0, 0.0, local_data.size()};
    OptimizerState opt = OptimizerState::fresh(global, config.learning_rate, config.momentum);
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> order(local_data.size());
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 0; epoch < config.local_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double ce_sum = 0.0, reg_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t len = std::min(config.batch_size, order.size() - start);
            const Batch batch = gather(local_data, std::span(order).subspan(start, len));
            const LossEvaluation step = loss_and_gradient(out.params, batch, spec);
            sgd_step_inplace(out.params, step.grad, opt);
            ce_sum += step.loss.cross_entropy;
            reg_sum += step.loss.regularizer;
            ++batches;
        }
        out.ce_loss = ce_sum / static_cast<double>(batches);
        out.regularizer_loss = reg_sum / static_cast<double>(batches);
    }
    return out;
}

ModelParams aggregate(std::span<const ModelParams> models, std::span<const std::size_t> sizes) {
    if (models.empty()) throw Error(ErrorCode::invalid_argument, "aggregate: no models");
    if (models.size() != sizes.size()) {
        throw Error(ErrorCode::dimension_mismatch,
                    fmt::format("aggregate: {} models but {} sizes", models.size(), sizes.size()));
    }
    for (std::size_t i = 1; i < models.size(); ++i) {
        if (!models[i].same_shape(models[0])) {
            throw Error(ErrorCode::dimension_mismatch,
                        fmt::format("aggregate: model {} differs in shape from model 0", i));
        }
    }
    const std::size_t total = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
    if (total == 0) throw Error(ErrorCode::invalid_argument, "aggregate: total sample count is zero");

    std::vector<std::vector<double>> flat;
    flat.reserve(models.size());
    for (const auto& m : models) flat.push_back(flatten(m));

    const std::size_t n = flat[0].size();
    std::vector<double> out(n, 0.0);
    for (std::size_t i = 0; i < models.size(); ++i) {
        const double w = static_cast<double>(sizes[i]);
        for (std::size_t c = 0; c < n; ++c) out[c] += w * flat[i][c];
    }
    const double denom = static_cast<double>(total);
    for (std::size_t c = 0; c < n; ++c) {
        double lo = flat[0][c], hi = flat[0][c];
        for (std::size_t i = 1; i < flat.size(); ++i) {
            lo = std::min(lo, flat[i][c]);
            hi = std::max(hi, flat[i][c]);
        }
        // The exact mean lies in [lo, hi]; rounding may leave it an ulp outside.
        out[c] = std::clamp(out[c] / denom, lo, hi);
    }
    return unflatten(models[0], out);
}

namespace {

// Runs job(i) for i in [0, n) on up to `workers` threads. The first failure
// in index order is rethrown after all jobs finish.
template <typename Job>
void parallel_for(std::size_t n, std::size_t workers, Job&& job) {
    std::vector<std::exception_ptr> errors(n);
    auto run = [&](std::size_t i) {
        try {
            job(i);
        } catch (...) {
            errors[i] = std::current_exception();
        }
    };
    workers = std::min(workers, n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) run(i);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::jthread> pool;
        pool.reserve(workers);
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < n; i = next++) run(i);
            });
        }
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

}  // namespace

FederationResult run_federation(const FederationConfig& config, const FederationData& data,
                                const RoundObserver& observer) {
    config.validate();
    if (data.clients.size() != config.clients) {
        throw Error(ErrorCode::invalid_argument,
                    fmt::format("config has {} clients but {} client datasets were supplied",
                                config.clients, data.clients.size()));
    }
    data.test.validate();
    const std::size_t K = data.test.num_classes;
    const std::size_t d = data.test.dims();
    const bool ssd = config.algorithm.mode == LossMode::ssd;
    if (ssd) data.auxiliary.validate();

    FederationResult result;
    result.initial = init_mlp(d, config.hidden, K, config.seeds.init);
    ModelParams global = result.initial;
    Evaluation global_eval = evaluate(global, data.test);

    for (std::size_t t = 0; t < config.rounds; ++t) {
        RoundRecord rec;
        rec.round = t;
        if (ssd) {
            try {
                rec.credibility = credibility_matrix(global, data.auxiliary);
            } catch (const Error& e) {
                throw Error(e.code(), fmt::format("round {}: credibility: {}", t, e.what()));
            }
            rec.credibility->round = static_cast<long>(t);
        }

        std::vector<std::size_t> sampled =
            sample_clients(config.clients, config.participation, round_seed(config.seeds.sampling, t));
        for (std::size_t id : sampled) {
            if (data.clients[id].size() == 0) {
                fmt::print(stderr, "round {}: client {} has no data, skipped\n", t, id);
            } else {
                rec.participants.push_back(id);
            }
        }

        std::vector<ClientResult> updates(rec.participants.size());
        std::vector<double> local_acc(rec.participants.size());
        parallel_for(rec.participants.size(), config.workers, [&](std::size_t i) {
            const std::size_t id = rec.participants[i];
            try {
                updates[i] = client_update(global, rec.credibility, data.clients[id], config,
                                           client_seed(config.seeds.training, t, id));
                local_acc[i] = evaluate(updates[i].params, data.test).accuracy;
            } catch (const Error& e) {
                throw Error(e.code(), fmt::format("round {}, client {}: {}", t, id, e.what()));
            }
        });

        ModelParams next = global;
        if (!updates.empty()) {
            std::vector<ModelParams> models;
            std::vector<std::size_t> sizes;
            for (auto& u : updates) {
                models.push_back(std::move(u.params));
                sizes.push_back(u.samples);
            }
            next = aggregate(models, sizes);
        }
        Evaluation next_eval = evaluate(next, data.test);

        auto& m = rec.metrics;
        m.acc_global = global_eval.accuracy;
        m.acc_global_next = next_eval.accuracy;
        m.class_accuracy = global_eval.class_accuracy;
        m.confusion = global_eval.confusion;
        double acc_sum = 0.0;
        for (std::size_t i = 0; i < updates.size(); ++i) {
            m.clients.push_back({rec.participants[i], updates[i].samples, local_acc[i],
                                 updates[i].ce_loss, updates[i].regularizer_loss});
            acc_sum += local_acc[i];
        }
        m.acc_local_mean = updates.empty() ? m.acc_global : acc_sum / static_cast<double>(updates.size());
        m.forgetting_gap = forgetting_gap(m.acc_global, m.acc_local_mean);
        m.forgetting_gap_post = forgetting_gap(m.acc_global_next, m.acc_local_mean);
        rec.params_digest = params_digest(next);

        if (observer) observer(rec, next);
        result.records.push_back(std::move(rec));
        global = std::move(next);
        global_eval = std::move(next_eval);
    }
    result.final_params = std::move(global);
    return result;
}

}  // namespace fedssd
