#pragma once

#include <cstdint>

namespace fedssd {

// splitmix64 finalizer over (base, stream); the fixed seed-splitting scheme.
constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) noexcept {
    std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Independent streams expanded from one master seed.
struct SeedSet {
    std::uint64_t data = 0;       // synthetic generation
    std::uint64_t auxiliary = 0;  // auxiliary-set draw
    std::uint64_t partition = 0;  // client partition
    std::uint64_t init = 0;       // global model initialization
    std::uint64_t sampling = 0;   // per-round client sampling
    std::uint64_t training = 0;   // per-round, per-client minibatch shuffling

    static constexpr SeedSet from_master(std::uint64_t master) noexcept {
        return {derive_seed(master, 1), derive_seed(master, 2), derive_seed(master, 3),
                derive_seed(master, 4), derive_seed(master, 5), derive_seed(master, 6)};
    }
};

constexpr std::uint64_t round_seed(std::uint64_t sampling, std::uint64_t round) noexcept {
    return derive_seed(sampling, round);
}

constexpr std::uint64_t client_seed(std::uint64_t training, std::uint64_t round,
                                    std::uint64_t client) noexcept {
    return derive_seed(derive_seed(training, round), client);
}

}  // namespace fedssd
