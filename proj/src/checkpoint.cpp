#include "fedssd/checkpoint.hpp"

#include "fedssd/error.hpp"

#include <fmt/format.h>
#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <memory>

namespace fedssd {

namespace {

constexpr std::size_t kMagicSize = sizeof(kCheckpointMagic) - 1;

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

void put_f64(std::vector<unsigned char>& out, double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>(bits >> (8 * i)));
}

class Reader {
  public:
    explicit Reader(std::span<const unsigned char> bytes) : bytes_(bytes) {}

    std::uint64_t take(int width) {
        if (pos_ + static_cast<std::size_t>(width) > bytes_.size()) {
            throw Error(ErrorCode::truncated_file,
                        fmt::format("checkpoint truncated at byte {} of {}", pos_, bytes_.size()));
        }
        std::uint64_t v = 0;
        for (int i = 0; i < width; ++i) v |= std::uint64_t{bytes_[pos_++]} << (8 * i);
        return v;
    }
    std::uint32_t u32() { return static_cast<std::uint32_t>(take(4)); }
    double f64() { return std::bit_cast<double>(take(8)); }
    bool done() const { return pos_ == bytes_.size(); }

  private:
    std::span<const unsigned char> bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

std::vector<unsigned char> encode_checkpoint(const ModelParams& params) {
    std::vector<unsigned char> out(kCheckpointMagic, kCheckpointMagic + kMagicSize);
    out.reserve(kMagicSize + 4 + 8 * params.layers().size() + 8 * params.parameter_count());
    put_u32(out, static_cast<std::uint32_t>(params.layers().size()));
    for (const auto& layer : params.layers()) {
        put_u32(out, static_cast<std::uint32_t>(layer.fan_out()));
        put_u32(out, static_cast<std::uint32_t>(layer.fan_in()));
    }
    params.for_each([&](double v) { put_f64(out, v); });
    return out;
}

ModelParams decode_checkpoint(std::span<const unsigned char> bytes) {
    if (bytes.size() < kMagicSize || std::memcmp(bytes.data(), kCheckpointMagic, kMagicSize) != 0) {
        throw Error(ErrorCode::bad_magic, "not an FSSD1 checkpoint");
    }
    Reader in(bytes.subspan(kMagicSize));
    const std::uint32_t n_layers = in.u32();
    std::vector<DenseLayer> layers;
    for (std::uint32_t l = 0; l < n_layers; ++l) {
        const std::size_t fan_out = in.u32();
        const std::size_t fan_in = in.u32();
        layers.push_back({Matrix(fan_out, fan_in), std::vector<double>(fan_out, 0.0)});
    }
    for (auto& layer : layers) {
        for (double& w : layer.weight.values()) w = in.f64();
        for (double& b : layer.bias) b = in.f64();
    }
    if (!in.done()) throw Error(ErrorCode::count_mismatch, "trailing bytes after checkpoint payload");
    ModelParams params(std::move(layers));
    params.validate();
    return params;
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params) {
    const auto bytes = encode_checkpoint(params);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::io, fmt::format("cannot write checkpoint '{}'", path.string()));
}

namespace {

std::vector<unsigned char> slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::io, fmt::format("cannot open '{}'", path.string()));
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

ModelParams load_checkpoint(const std::filesystem::path& path) {
    const auto bytes = slurp(path);
    try {
        return decode_checkpoint(bytes);
    } catch (const Error& e) {
        throw Error(e.code(), fmt::format("'{}': {}", path.string(), e.what()));
    }
}

std::string sha256_hex(std::span<const unsigned char> bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw Error(ErrorCode::io, "sha256 digest failed");
    }
    std::string hex;
    hex.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", digest[i]);
    return hex;
}

std::string sha256_file(const std::filesystem::path& path) { return sha256_hex(slurp(path)); }

std::string params_digest(const ModelParams& params) {
    return sha256_hex(encode_checkpoint(params));
}

}  // namespace fedssd
