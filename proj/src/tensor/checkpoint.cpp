#include "ddipnet/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <sstream>

namespace ddipnet {

namespace {

constexpr const char* kMagic = "ddipnet-checkpoint";
constexpr int kVersion = 1;

std::filesystem::path blob_path_for(const std::filesystem::path& manifest) {
    auto p = manifest;
    p.replace_extension(".bin");
    return p;
}

Shape parse_shape(const std::string& text, int line_no) {
    Shape shape;
    std::stringstream ss(text);
    std::string part;
    while (std::getline(ss, part, 'x')) {
        try {
            std::size_t used = 0;
            unsigned long long v = std::stoull(part, &used);
            if (used != part.size() || v == 0) throw std::invalid_argument(part);
            shape.push_back(static_cast<std::size_t>(v));
        } catch (const std::exception&) {
            throw DataError("checkpoint manifest line " + std::to_string(line_no) +
                            ": bad shape '" + text + "'");
        }
    }
    if (shape.empty())
        throw DataError("checkpoint manifest line " + std::to_string(line_no) + ": empty shape");
    return shape;
}

std::string shape_token(const Shape& shape) {
    std::string s;
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += 'x';
        s += std::to_string(shape[i]);
    }
    return s;
}

void check_token(const std::string& s, const char* what) {
    if (s.empty() || s.find_first_of(" \t\r\n") != std::string::npos)
        throw ConfigError(std::string("checkpoint ") + what + " '" + s +
                          "' must be non-empty without whitespace");
}

}  // namespace

void write_checkpoint(const std::filesystem::path& manifest, const Checkpoint& ckpt) {
    const auto blob = blob_path_for(manifest);
    std::ofstream mf(manifest);
    std::ofstream bf(blob, std::ios::binary);
    if (!mf) throw IoError("cannot write " + manifest.string());
    if (!bf) throw IoError("cannot write " + blob.string());

    mf << kMagic << ' ' << kVersion << '\n';
    mf << "blob " << blob.filename().string() << '\n';
    for (const auto& [k, v] : ckpt.meta) {
        check_token(k, "meta key");
        if (v.find('\n') != std::string::npos)
            throw ConfigError("checkpoint meta value for '" + k + "' contains a newline");
        mf << "meta " << k << ' ' << v << '\n';
    }
    std::uint64_t offset = 0;
    std::string bytes;
    for (const auto& e : ckpt.tensors) {
        check_token(e.name, "tensor name");
        mf << "tensor " << e.name << ' ' << shape_token(e.tensor.shape()) << ' ' << offset << '\n';
        for (float v : e.tensor.data()) {
            const auto u = std::bit_cast<std::uint32_t>(v);
            for (int b = 0; b < 4; ++b) bytes.push_back(static_cast<char>((u >> (8 * b)) & 0xFFu));
        }
        offset += 4 * e.tensor.numel();
    }
    bf.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!mf || !bf) throw IoError("short write on checkpoint " + manifest.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& manifest) {
    std::ifstream mf(manifest);
    if (!mf) throw IoError("cannot open checkpoint manifest " + manifest.string());

    struct Pending {
        std::string name;
        Shape shape;
        std::uint64_t offset;
    };
    std::vector<Pending> pending;
    Checkpoint ckpt;
    std::string blob_name;

    std::string line;
    int line_no = 0;
    while (std::getline(mf, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string kind;
        ls >> kind;
        if (line_no == 1) {
            int version = 0;
            ls >> version;
            if (kind != kMagic || version != kVersion)
                throw DataError(manifest.string() + ": not a version-1 checkpoint manifest");
            continue;
        }
        if (kind == "blob") {
            ls >> blob_name;
        } else if (kind == "meta") {
            std::string key;
            ls >> key;
            std::string value;
            std::getline(ls, value);
            if (!value.empty() && value.front() == ' ') value.erase(0, 1);
            ckpt.meta[key] = value;
        } else if (kind == "tensor") {
            std::string name, shape_text;
            std::uint64_t offset = 0;
            if (!(ls >> name >> shape_text >> offset))
                throw DataError(manifest.string() + " line " + std::to_string(line_no) +
                                ": malformed tensor record");
            pending.push_back({name, parse_shape(shape_text, line_no), offset});
        } else {
            throw DataError(manifest.string() + " line " + std::to_string(line_no) +
                            ": unknown record '" + kind + "'");
        }
    }
    if (line_no == 0) throw DataError(manifest.string() + ": empty checkpoint manifest");
    if (blob_name.empty()) throw DataError(manifest.string() + ": manifest names no blob");

    const auto blob = manifest.parent_path() / blob_name;
    std::ifstream bf(blob, std::ios::binary);
    if (!bf) throw IoError("cannot open checkpoint blob " + blob.string());
    std::string bytes((std::istreambuf_iterator<char>(bf)), std::istreambuf_iterator<char>());

    for (const auto& p : pending) {
        const std::size_t n = numel(p.shape);
        if (p.offset + 4 * n > bytes.size())
            throw DataError("checkpoint blob " + blob.string() + " too short for tensor '" + p.name + "'");
        std::vector<float> values(n);
        for (std::size_t i = 0; i < n; ++i) {
            std::uint32_t u = 0;
            for (int b = 0; b < 4; ++b)
                u |= std::uint32_t(static_cast<unsigned char>(bytes[p.offset + 4 * i + b])) << (8 * b);
            values[i] = std::bit_cast<float>(u);
        }
        ckpt.tensors.add(p.name, Tensor::from_data(p.shape, std::move(values)));
    }
    return ckpt;
}

void restore_params(ParamSet& target, const ParamSet& source, const std::string& prefix) {
    for (auto& e : target) {
        const auto& src = source.at(prefix + e.name);
        if (src.shape() != e.tensor.shape())
            throw DimensionError("checkpoint tensor '" + prefix + e.name + "' has shape " +
                                 shape_str(src.shape()) + ", expected " +
                                 shape_str(e.tensor.shape()));
        auto dst = e.tensor.mutable_data();
        std::copy(src.data().begin(), src.data().end(), dst.begin());
    }
}

void store_params(Checkpoint& ckpt, const ParamSet& params, const std::string& prefix) {
    for (const auto& e : params) ckpt.tensors.add(prefix + e.name, e.tensor.detach());
}

}  // namespace ddipnet
