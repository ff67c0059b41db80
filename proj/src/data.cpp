#include "fedssd/data.hpp"

#include "fedssd/error.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>

namespace fedssd {

void LabeledDataset::validate() const {
    if (features.rows() != labels.size()) {
        throw Error(ErrorCode::dimension_mismatch,
                    fmt::format("dataset '{}': {} feature rows but {} labels", name,
                                features.rows(), labels.size()));
    }
    for (int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
            throw Error(ErrorCode::label_out_of_range,
                        fmt::format("dataset '{}': label {} outside [0, {})", name, y, num_classes));
        }
    }
}

std::vector<std::size_t> LabeledDataset::class_counts() const {
    std::vector<std::size_t> counts(num_classes, 0);
    for (int y : labels) ++counts[static_cast<std::size_t>(y)];
    return counts;
}

LabeledDataset subset(const LabeledDataset& ds, std::span<const std::size_t> indices) {
    LabeledDataset out;
    out.features = Matrix(indices.size(), ds.dims());
    out.labels.reserve(indices.size());
    out.num_classes = ds.num_classes;
    out.name = ds.name;
    for (std::size_t r = 0; r < indices.size(); ++r) {
        const std::size_t src = indices[r];
        if (src >= ds.size()) {
            throw Error(ErrorCode::invalid_argument,
                        fmt::format("index {} outside dataset of size {}", src, ds.size()));
        }
        std::ranges::copy(ds.features.row(src), out.features.row(r).begin());
        out.labels.push_back(ds.labels[src]);
    }
    return out;
}

LabeledDataset generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
    if (spec.num_classes < 2 || spec.dims < 2 || spec.per_class < 1) {
        throw Error(ErrorCode::invalid_argument,
                    fmt::format("synthetic data needs K >= 2, d >= 2, n_per_class >= 1 (got {}, {}, {})",
                                spec.num_classes, spec.dims, spec.per_class));
    }
    if (!(spec.separation >= 0.0) || !std::isfinite(spec.separation)) {
        throw Error(ErrorCode::invalid_argument, "separation must be finite and non-negative");
    }
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);

    Matrix means(spec.num_classes, spec.dims);
    for (std::size_t k = 0; k < spec.num_classes; ++k) {
        auto mu = means.row(k);
        double norm = 0.0;
        while (norm == 0.0) {
            for (double& v : mu) v = normal(rng);
            norm = std::sqrt(std::inner_product(mu.begin(), mu.end(), mu.begin(), 0.0));
        }
        for (double& v : mu) v *= spec.separation / norm;
    }

    LabeledDataset ds;
    ds.num_classes = spec.num_classes;
    ds.name = fmt::format("synthetic-k{}-d{}", spec.num_classes, spec.dims);
    ds.features = Matrix(spec.num_classes * spec.per_class, spec.dims);
    ds.labels.reserve(spec.num_classes * spec.per_class);
    std::size_t r = 0;
    for (std::size_t k = 0; k < spec.num_classes; ++k) {
        for (std::size_t i = 0; i < spec.per_class; ++i, ++r) {
            auto x = ds.features.row(r);
            auto mu = means.row(k);
            for (std::size_t j = 0; j < spec.dims; ++j) x[j] = mu[j] + normal(rng);
            ds.labels.push_back(static_cast<int>(k));
        }
    }
    return ds;
}

DatasetSplit split_per_class(const LabeledDataset& ds, std::size_t first_per_class) {
    std::vector<std::size_t> seen(ds.num_classes, 0);
    std::vector<std::size_t> first, second;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        auto& n = seen[static_cast<std::size_t>(ds.labels[i])];
        (n++ < first_per_class ? first : second).push_back(i);
    }
    return {subset(ds, first), subset(ds, second)};
}

namespace {

std::vector<unsigned char> read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::io, fmt::format("cannot open '{}'", path.string()));
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset,
                        const std::filesystem::path& path) {
    if (offset + 4 > bytes.size()) {
        throw Error(ErrorCode::truncated_file,
                    fmt::format("'{}': header truncated at byte {}", path.string(), offset));
    }
    return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
           (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

constexpr std::uint32_t kIdxImageMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

}  // namespace

LabeledDataset load_idx(const std::filesystem::path& images_path,
                        const std::filesystem::path& labels_path) {
    const auto images = read_bytes(images_path);
    const auto labels = read_bytes(labels_path);

    const std::uint32_t image_magic = read_be32(images, 0, images_path);
    if (image_magic != kIdxImageMagic) {
        throw Error(ErrorCode::bad_magic, fmt::format("'{}': image magic 0x{:08x}, expected 0x{:08x}",
                                                      images_path.string(), image_magic,
                                                      kIdxImageMagic));
    }
    const std::uint32_t label_magic = read_be32(labels, 0, labels_path);
    if (label_magic != kIdxLabelMagic) {
        throw Error(ErrorCode::bad_magic, fmt::format("'{}': label magic 0x{:08x}, expected 0x{:08x}",
                                                      labels_path.string(), label_magic,
                                                      kIdxLabelMagic));
    }

    const std::size_t n_images = read_be32(images, 4, images_path);
    const std::size_t rows = read_be32(images, 8, images_path);
    const std::size_t cols = read_be32(images, 12, images_path);
    const std::size_t n_labels = read_be32(labels, 4, labels_path);

    const std::size_t d = rows * cols;
    if (images.size() < 16 + n_images * d) {
        throw Error(ErrorCode::truncated_file,
                    fmt::format("'{}': expected {} pixel bytes, found {}", images_path.string(),
                                n_images * d, images.size() - 16));
    }
    if (labels.size() < 8 + n_labels) {
        throw Error(ErrorCode::truncated_file,
                    fmt::format("'{}': expected {} label bytes, found {}", labels_path.string(),
                                n_labels, labels.size() - 8));
    }
    if (n_images != n_labels) {
        throw Error(ErrorCode::count_mismatch,
                    fmt::format("{} images but {} labels", n_images, n_labels));
    }

    LabeledDataset ds;
    ds.name = images_path.stem().string();
    ds.features = Matrix(n_images, d);
    auto pixels = ds.features.values();
    for (std::size_t i = 0; i < n_images * d; ++i) pixels[i] = images[16 + i] / 255.0;
    ds.labels.reserve(n_labels);
    int top = -1;
    for (std::size_t i = 0; i < n_labels; ++i) {
        ds.labels.push_back(labels[8 + i]);
        top = std::max(top, ds.labels.back());
    }
    ds.num_classes = static_cast<std::size_t>(top + 1);
    return ds;
}

namespace {

std::vector<std::vector<std::size_t>> indices_by_class(const LabeledDataset& ds) {
    std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);
    }
    return by_class;
}

void sort_clients(PartitionPlan& plan) {
    for (auto& idx : plan.client_indices) std::ranges::sort(idx);
}

}  // namespace

PartitionPlan partition_dirichlet(const LabeledDataset& ds, std::size_t num_clients,
                                  double concentration, std::uint64_t seed) {
    if (num_clients < 1) throw Error(ErrorCode::invalid_argument, "need at least one client");
    if (!(concentration > 0.0) || !std::isfinite(concentration)) {
        throw Error(ErrorCode::invalid_argument,
                    fmt::format("Dirichlet concentration must be positive, got {}", concentration));
    }
    ds.validate();
    const auto by_class = indices_by_class(ds);

    std::mt19937_64 rng(seed);
    std::gamma_distribution<double> gamma(concentration, 1.0);

    for (int attempt = 0; attempt < kDirichletMaxAttempts; ++attempt) {
        PartitionPlan plan{std::vector<std::vector<std::size_t>>(num_clients),
                           DirichletSkew{concentration}, seed};
        for (const auto& members : by_class) {
            std::vector<std::size_t> idx = members;
            std::shuffle(idx.begin(), idx.end(), rng);

            std::vector<double> share(num_clients);
            for (double& s : share) s = gamma(rng);
            const double total = std::accumulate(share.begin(), share.end(), 0.0);
            if (total > 0.0) {
                for (double& s : share) s /= total;
            } else {
                // Every draw underflowed (tiny concentration): one-hot on a random client.
                std::ranges::fill(share, 0.0);
                share[std::uniform_int_distribution<std::size_t>(0, num_clients - 1)(rng)] = 1.0;
            }

            const auto n = static_cast<long long>(idx.size());
            std::vector<long long> sizes(num_clients);
            long long assigned = 0;
            for (std::size_t c = 0; c < num_clients; ++c) {
                sizes[c] = std::llround(share[c] * static_cast<double>(n));
                assigned += sizes[c];
            }
            const std::size_t top = argmax(share);
            sizes[top] += n - assigned;
            // Rounding up elsewhere can overdraw the largest share; take the
            // excess back from the largest blocks.
            while (sizes[top] < 0) {
                std::size_t donor = top == 0 ? 1 : 0;
                for (std::size_t c = 0; c < num_clients; ++c) {
                    if (c != top && sizes[c] > sizes[donor]) donor = c;
                }
                --sizes[donor];
                ++sizes[top];
            }

            std::size_t offset = 0;
            for (std::size_t c = 0; c < num_clients; ++c) {
                auto& dst = plan.client_indices[c];
                dst.insert(dst.end(), idx.begin() + static_cast<std::ptrdiff_t>(offset),
                           idx.begin() + static_cast<std::ptrdiff_t>(offset + sizes[c]));
                offset += static_cast<std::size_t>(sizes[c]);
            }
        }
        const bool has_empty = std::ranges::any_of(plan.client_indices,
                                                   [](const auto& v) { return v.empty(); });
        if (!has_empty) {
            sort_clients(plan);
            return plan;
        }
    }
    throw Error(ErrorCode::empty_client,
                fmt::format("Dirichlet({}) partition left a client empty after {} attempts",
                            concentration, kDirichletMaxAttempts));
}

PartitionPlan partition_quantity(const LabeledDataset& ds, std::size_t num_clients,
                                 std::size_t labels_per_client, std::uint64_t seed) {
    const std::size_t K = ds.num_classes;
    if (num_clients < 1) throw Error(ErrorCode::invalid_argument, "need at least one client");
    if (labels_per_client < 1 || labels_per_client > K) {
        throw Error(ErrorCode::infeasible,
                    fmt::format("cannot give {} distinct labels per client with {} classes",
                                labels_per_client, K));
    }
    ds.validate();
    const auto by_class = indices_by_class(ds);
    std::mt19937_64 rng(seed);

    std::vector<std::size_t> class_order(K);
    std::iota(class_order.begin(), class_order.end(), 0);
    std::shuffle(class_order.begin(), class_order.end(), rng);
    std::vector<std::size_t> client_order(num_clients);
    std::iota(client_order.begin(), client_order.end(), 0);
    std::shuffle(client_order.begin(), client_order.end(), rng);

    // Slot j of the N*k label slots holds class_order[j mod K]; a client owns
    // k consecutive slots, so its k labels are distinct and every class is
    // held by floor(Nk/K) or ceil(Nk/K) clients.
    std::vector<std::vector<std::size_t>> holders(K);
    for (std::size_t c = 0; c < num_clients; ++c) {
        for (std::size_t s = 0; s < labels_per_client; ++s) {
            const std::size_t cls = class_order[(c * labels_per_client + s) % K];
            holders[cls].push_back(client_order[c]);
        }
    }
    if (num_clients * labels_per_client < K) {
        fmt::print(stderr,
                   "warning: {} clients x {} labels cannot cover {} classes; "
                   "extra classes are dealt round-robin\n",
                   num_clients, labels_per_client, K);
        std::size_t next = 0;
        for (std::size_t cls = 0; cls < K; ++cls) {
            if (holders[cls].empty()) holders[cls].push_back(client_order[next++ % num_clients]);
        }
    }

    PartitionPlan plan{std::vector<std::vector<std::size_t>>(num_clients),
                       QuantitySkew{labels_per_client}, seed};
    for (std::size_t cls = 0; cls < K; ++cls) {
        std::vector<std::size_t> idx = by_class[cls];
        std::shuffle(idx.begin(), idx.end(), rng);
        const std::size_t m = holders[cls].size();
        const std::size_t base = idx.size() / m;
        const std::size_t extra = idx.size() % m;
        std::size_t offset = 0;
        for (std::size_t h = 0; h < m; ++h) {
            const std::size_t take = base + (h < extra ? 1 : 0);
            auto& dst = plan.client_indices[holders[cls][h]];
            dst.insert(dst.end(), idx.begin() + static_cast<std::ptrdiff_t>(offset),
                       idx.begin() + static_cast<std::ptrdiff_t>(offset + take));
            offset += take;
        }
    }
    sort_clients(plan);
    return plan;
}

double label_skew_l1(const LabeledDataset& ds, const PartitionPlan& plan) {
    const double uniform = 1.0 / static_cast<double>(ds.num_classes);
    double total = 0.0;
    std::size_t counted = 0;
    for (const auto& idx : plan.client_indices) {
        if (idx.empty()) continue;
        std::vector<double> hist(ds.num_classes, 0.0);
        for (std::size_t i : idx) hist[static_cast<std::size_t>(ds.labels[i])] += 1.0;
        double l1 = 0.0;
        for (double h : hist) l1 += std::abs(h / static_cast<double>(idx.size()) - uniform);
        total += l1;
        ++counted;
    }
    return counted == 0 ? 0.0 : total / static_cast<double>(counted);
}

AuxiliarySample sample_auxiliary(const LabeledDataset& ds, std::size_t per_class,
                                 std::uint64_t seed) {
    if (per_class < 1) throw Error(ErrorCode::invalid_argument, "per_class must be positive");
    ds.validate();
    const auto by_class = indices_by_class(ds);
    for (std::size_t k = 0; k < by_class.size(); ++k) {
        if (by_class[k].size() < per_class) {
            throw Error(ErrorCode::insufficient_samples,
                        fmt::format("class {} has {} samples, auxiliary set needs {}", k,
                                    by_class[k].size(), per_class));
        }
    }
    std::mt19937_64 rng(seed);
    AuxiliarySample out;
    std::vector<bool> taken(ds.size(), false);
    for (const auto& members : by_class) {
        std::vector<std::size_t> idx = members;
        std::shuffle(idx.begin(), idx.end(), rng);
        idx.resize(per_class);
        std::ranges::sort(idx);
        for (std::size_t i : idx) taken[i] = true;
        out.aux_indices.insert(out.aux_indices.end(), idx.begin(), idx.end());
    }
    for (std::size_t i = 0; i < ds.size(); ++i) {
        if (!taken[i]) out.remaining_indices.push_back(i);
    }
    out.auxiliary = subset(ds, out.aux_indices);
    out.auxiliary.name = ds.name + "-aux";
    return out;
}

}  // namespace fedssd
