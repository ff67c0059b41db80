#pragma once

// Server/client orchestration: per-round teacher credibility, client
// sampling, local training on the composite loss, sample-weighted averaging.

#include "fedssd/data.hpp"
#include "fedssd/distill.hpp"
#include "fedssd/metrics.hpp"
#include "fedssd/nn.hpp"
#include "fedssd/seeds.hpp"

#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace fedssd {

struct FederationConfig {
    std::size_t clients = 10;
    double participation = 1.0;  // C in (0, 1]
    std::size_t rounds = 100;
    std::size_t local_epochs = 10;
    std::size_t batch_size = 64;
    double learning_rate = 0.01;
    double momentum = 0.9;
    // Mode and hyperparameters; teacher and class weights are filled per round.
    CompositeLossSpec algorithm;
    std::vector<std::size_t> hidden{64, 32};
    // Clients trained concurrently within a round. Results do not depend on it.
    std::size_t workers = 1;
    SeedSet seeds;

    // ceil(C * N), at least 1.
    std::size_t clients_per_round() const;
    void validate() const;
};

struct FederationData {
    std::vector<LabeledDataset> clients;
    LabeledDataset auxiliary;
    LabeledDataset test;
};

// Sorted ids of a uniform sample without replacement of ceil(C * N) clients.
std::vector<std::size_t> sample_clients(std::size_t num_clients, double participation,
                                        std::uint64_t round_seed);

struct ClientResult {
    ModelParams params;
    double ce_loss = 0.0;
    double regularizer_loss = 0.0;
    std::size_t samples = 0;
};

// Local training from a copy of the global model. Reads only its arguments.
ClientResult client_update(const ModelParams& global,
                           const std::optional<CredibilityMatrix>& credibility,
                           const LabeledDataset& local_data, const FederationConfig& config,
                           std::uint64_t seed);

// Coordinate-wise mean weighted by sizes, summed in input order.
ModelParams aggregate(std::span<const ModelParams> models, std::span<const std::size_t> sizes);

struct FederationResult {
    ModelParams initial;
    ModelParams final_params;
    std::vector<RoundRecord> records;
};

using RoundObserver = std::function<void(const RoundRecord&, const ModelParams&)>;

FederationResult run_federation(const FederationConfig& config, const FederationData& data,
                                const RoundObserver& observer = {});

}  // namespace fedssd
