#include "ddipnet/backbone.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <random>
#include <string>

#include "ddipnet/checkpoint.hpp"
#include "ddipnet/ops.hpp"

namespace ddipnet {

namespace {

struct LayerPlan {
    std::size_t flat_width = 0;  // width entering the first FC layer
};

LayerPlan plan_layers(const ArchitectureSpec& arch) {
    LayerPlan plan;
    if (arch.vector_input()) {
        if (!arch.conv_blocks.empty())
            throw ConfigError("backbone: conv blocks need image input (input_features must be 0)");
        plan.flat_width = arch.input_features;
        return plan;
    }
    if (arch.input_channels == 0 || arch.input_side == 0)
        throw ConfigError("backbone: input channels and side must be positive");
    if (arch.fc_widths.empty())
        throw ConfigError("backbone: image input needs at least one fully connected layer");
    std::size_t channels = arch.input_channels;
    std::size_t side = arch.input_side;
    for (std::size_t b = 0; b < arch.conv_blocks.size(); ++b) {
        const auto& blk = arch.conv_blocks[b];
        if (blk.channels == 0 || blk.kernel == 0 || blk.convs == 0)
            throw ConfigError("backbone: conv block " + std::to_string(b) +
                              " needs positive channels, kernel and conv count");
        for (std::size_t i = 0; i < blk.convs; ++i) {
            const std::size_t pad = blk.kernel / 2;
            if (blk.kernel > side + 2 * pad)
                throw ConfigError("backbone: conv block " + std::to_string(b) + " kernel " +
                                  std::to_string(blk.kernel) + " exceeds side " + std::to_string(side));
            side = side + 2 * pad - blk.kernel + 1;
        }
        channels = blk.channels;
        if (blk.pool) {
            if (side < 2)
                throw ConfigError("backbone: conv block " + std::to_string(b) +
                                  " pools a side smaller than 2");
            side = (side - 2) / 2 + 1;
        }
    }
    plan.flat_width = channels * side * side;
    return plan;
}

std::string conv_name(std::size_t block, std::size_t i) {
    return "conv" + std::to_string(block) + "_" + std::to_string(i);
}

}  // namespace

void ArchitectureSpec::validate() const {
    plan_layers(*this);
    for (std::size_t i = 0; i < fc_widths.size(); ++i)
        if (fc_widths[i] == 0) throw ConfigError("backbone: fc width " + std::to_string(i) + " is zero");
}

std::size_t ArchitectureSpec::feature_width() const {
    validate();
    if (fc_widths.empty()) return input_features;
    return fc_widths.back();
}

Shape ArchitectureSpec::input_shape() const {
    if (vector_input()) return {1, input_features};
    return {input_channels, input_side, input_side};
}

std::size_t ArchitectureSpec::parameter_count() const {
    const auto plan = plan_layers(*this);
    std::size_t count = 0;
    std::size_t channels = input_channels;
    for (const auto& blk : conv_blocks)
        for (std::size_t i = 0; i < blk.convs; ++i) {
            count += blk.channels * channels * blk.kernel * blk.kernel + blk.channels;
            channels = blk.channels;
        }
    std::size_t width = plan.flat_width;
    for (auto w : fc_widths) {
        count += width * w + w;
        width = w;
    }
    return count;
}

Backbone build_backbone(const ArchitectureSpec& arch, std::uint64_t seed) {
    arch.validate();
    const auto plan = plan_layers(arch);
    std::mt19937_64 rng(seed);
    auto he_uniform = [&rng](Shape shape, std::size_t fan_in) {
        const float bound = std::sqrt(6.0f / static_cast<float>(fan_in));
        std::uniform_real_distribution<float> dist(-bound, bound);
        std::vector<float> v(numel(shape));
        for (auto& x : v) x = dist(rng);
        return Tensor::from_data(std::move(shape), std::move(v), true);
    };

    Backbone bb;
    bb.arch = arch;
    std::size_t channels = arch.input_channels;
    for (std::size_t b = 0; b < arch.conv_blocks.size(); ++b) {
        const auto& blk = arch.conv_blocks[b];
        for (std::size_t i = 0; i < blk.convs; ++i) {
            const auto name = conv_name(b, i);
            bb.params.add(name + ".weight",
                          he_uniform({blk.channels, channels, blk.kernel, blk.kernel},
                                     channels * blk.kernel * blk.kernel));
            bb.params.add(name + ".bias", Tensor::zeros({blk.channels}, true));
            channels = blk.channels;
        }
    }
    std::size_t width = plan.flat_width;
    for (std::size_t j = 0; j < arch.fc_widths.size(); ++j) {
        const auto out = arch.fc_widths[j];
        const auto name = "fc" + std::to_string(j);
        bb.params.add(name + ".weight", he_uniform({width, out}, width));
        bb.params.add(name + ".bias", Tensor::zeros({1, out}, true));
        width = out;
    }
    return bb;
}

template <class T>
BasicTensor<T> backbone_forward(const ArchitectureSpec& arch, const BasicParamSet<T>& params,
                                const BasicTensor<T>& input, Mode /*mode: no mode-dependent layers*/) {
    const Shape expected = arch.input_shape();
    if (input.shape() != expected)
        throw DimensionError("backbone: input shape " + shape_str(input.shape()) +
                             " does not match configured " + shape_str(expected));
    BasicTensor<T> x = input;
    for (std::size_t b = 0; b < arch.conv_blocks.size(); ++b) {
        const auto& blk = arch.conv_blocks[b];
        for (std::size_t i = 0; i < blk.convs; ++i) {
            const auto name = conv_name(b, i);
            x = relu(conv2d(x, params.at(name + ".weight"), params.at(name + ".bias"), 1,
                            blk.kernel / 2));
        }
        if (blk.pool) x = maxpool2d(x, 2, 2);
    }
    if (arch.fc_widths.empty()) return x;
    x = reshape(x, {1, x.numel()});
    for (std::size_t j = 0; j < arch.fc_widths.size(); ++j) {
        const auto name = "fc" + std::to_string(j);
        x = relu(add(matmul(x, params.at(name + ".weight")), params.at(name + ".bias")));
    }
    return x;
}

template Tensor backbone_forward(const ArchitectureSpec&, const ParamSet&, const Tensor&, Mode);
template Tensor64 backbone_forward(const ArchitectureSpec&, const BasicParamSet<double>&,
                                   const Tensor64&, Mode);

FeatureVec backbone_forward(const Backbone& backbone, const Tensor& input, Mode mode) {
    return backbone_forward<float>(backbone.arch, backbone.params, input, mode);
}

// ---------------------------------------------------------------------------
// feature CSV

namespace {

std::vector<std::string_view> split_commas(std::string_view line) {
    std::vector<std::string_view> cells;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(',', start);
        auto cell = line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start);
        while (!cell.empty() && (cell.front() == ' ' || cell.front() == '\t')) cell.remove_prefix(1);
        while (!cell.empty() && (cell.back() == ' ' || cell.back() == '\t' || cell.back() == '\r'))
            cell.remove_suffix(1);
        cells.push_back(cell);
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return cells;
}

[[noreturn]] void parse_fail(const std::filesystem::path& path, int line_no, const std::string& what) {
    throw DataError(path.string() + ": line " + std::to_string(line_no) + ": " + what);
}

}  // namespace

std::vector<Sample> ingest_features(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open feature file " + path.string());

    std::vector<Sample> samples;
    std::size_t width = 0;
    bool have_header = false;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line.front() == '#') continue;
        const auto cells = split_commas(line);
        if (!have_header) {
            if (cells.size() < 2 || cells[0] != "label")
                parse_fail(path, line_no, "header must be 'label,f0,...'");
            for (std::size_t i = 1; i < cells.size(); ++i)
                if (cells[i] != "f" + std::to_string(i - 1))
                    parse_fail(path, line_no,
                               "header column " + std::to_string(i) + " must be f" + std::to_string(i - 1));
            width = cells.size() - 1;
            have_header = true;
            continue;
        }
        if (cells.size() != width + 1)
            parse_fail(path, line_no,
                       "row " + std::to_string(samples.size() + 1) + " has " +
                           std::to_string(cells.size() - 1) + " features, expected " +
                           std::to_string(width));
        int label = 0;
        {
            auto c = cells[0];
            auto [p, ec] = std::from_chars(c.data(), c.data() + c.size(), label);
            if (ec != std::errc() || p != c.data() + c.size() || label < 0)
                parse_fail(path, line_no, "label '" + std::string(c) + "' is not a non-negative integer");
        }
        std::vector<float> values(width);
        for (std::size_t i = 0; i < width; ++i) {
            auto c = cells[i + 1];
            float v = 0;
            auto [p, ec] = std::from_chars(c.data(), c.data() + c.size(), v);
            if (ec != std::errc() || p != c.data() + c.size() || c.empty())
                parse_fail(path, line_no, "cell f" + std::to_string(i) + " '" + std::string(c) +
                                              "' is not numeric");
            if (!std::isfinite(v)) parse_fail(path, line_no, "feature f" + std::to_string(i) + " is not finite");
            if (v < 0.0f) parse_fail(path, line_no, "feature f" + std::to_string(i) + " is negative");
            values[i] = v;
        }
        samples.push_back({Tensor::from_data({1, width}, std::move(values)), label});
    }
    if (!have_header) throw DataError(path.string() + ": empty feature file");
    if (samples.empty()) throw DataError(path.string() + ": feature file has no rows");
    return samples;
}

void write_features_csv(const std::filesystem::path& path, const std::vector<Sample>& samples) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    if (samples.empty()) throw DataError("no samples to write");
    const std::size_t width = samples.front().input.numel();
    out << "label";
    for (std::size_t i = 0; i < width; ++i) out << ",f" << i;
    out << '\n';
    char buf[64];
    for (const auto& s : samples) {
        if (s.input.numel() != width) throw DimensionError("feature rows have differing widths");
        out << s.label;
        for (float v : s.input.data()) {
            auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
            out << ',' << std::string_view(buf, static_cast<std::size_t>(p - buf));
        }
        out << '\n';
    }
    if (!out) throw IoError("short write on " + path.string());
}

// ---------------------------------------------------------------------------
// architecture text and checkpoints

namespace {

std::vector<std::string> split_on(const std::string& text, char sep) {
    std::vector<std::string> parts;
    std::string cur;
    for (char ch : text) {
        if (ch == sep) {
            parts.push_back(cur);
            cur.clear();
        } else if (ch != ' ' && ch != '\t') {
            cur.push_back(ch);
        }
    }
    parts.push_back(cur);
    return parts;
}

std::size_t parse_positive(const std::string& tok, const std::string& context) {
    std::size_t v = 0;
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || p != tok.data() + tok.size() || v == 0)
        throw ConfigError(context + ": '" + tok + "' is not a positive integer");
    return v;
}

}  // namespace

std::vector<ConvBlockSpec> parse_conv_blocks(const std::string& text) {
    std::vector<ConvBlockSpec> blocks;
    if (text.find_first_not_of(" \t") == std::string::npos) return blocks;
    for (const auto& item : split_on(text, ',')) {
        const auto f = split_on(item, ':');
        if (f.size() < 2 || f.size() > 4)
            throw ConfigError("conv block '" + item + "' must be channels:kernel[:convs[:pool]]");
        ConvBlockSpec b;
        b.channels = parse_positive(f[0], "conv block channels");
        b.kernel = parse_positive(f[1], "conv block kernel");
        if (f.size() > 2) b.convs = parse_positive(f[2], "conv block conv count");
        if (f.size() > 3) {
            if (f[3] != "0" && f[3] != "1") throw ConfigError("conv block pool flag must be 0 or 1");
            b.pool = f[3] == "1";
        }
        blocks.push_back(b);
    }
    return blocks;
}

std::string format_conv_blocks(const std::vector<ConvBlockSpec>& blocks) {
    std::string s;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        if (i) s += ',';
        s += std::to_string(blocks[i].channels) + ':' + std::to_string(blocks[i].kernel) + ':' +
             std::to_string(blocks[i].convs) + ':' + (blocks[i].pool ? "1" : "0");
    }
    return s;
}

std::vector<std::size_t> parse_size_list(const std::string& text) {
    std::vector<std::size_t> out;
    if (text.find_first_not_of(" \t") == std::string::npos) return out;
    for (const auto& tok : split_on(text, ',')) out.push_back(parse_positive(tok, "size list"));
    return out;
}

std::string format_size_list(const std::vector<std::size_t>& values) {
    std::string s;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) s += ',';
        s += std::to_string(values[i]);
    }
    return s;
}

void save_backbone(const std::filesystem::path& manifest, const Backbone& backbone) {
    Checkpoint ckpt;
    const auto& a = backbone.arch;
    ckpt.meta["backbone.input_channels"] = std::to_string(a.input_channels);
    ckpt.meta["backbone.input_side"] = std::to_string(a.input_side);
    ckpt.meta["backbone.input_features"] = std::to_string(a.input_features);
    ckpt.meta["backbone.conv_blocks"] = format_conv_blocks(a.conv_blocks);
    ckpt.meta["backbone.fc_widths"] = format_size_list(a.fc_widths);
    store_params(ckpt, backbone.params, "backbone.");
    write_checkpoint(manifest, ckpt);
}

Backbone load_backbone(const std::filesystem::path& manifest) {
    const auto ckpt = read_checkpoint(manifest);
    auto meta = [&](const std::string& key) -> std::string {
        auto it = ckpt.meta.find(key);
        if (it == ckpt.meta.end()) throw DataError(manifest.string() + ": missing meta '" + key + "'");
        return it->second;
    };
    ArchitectureSpec arch;
    try {
        arch.input_channels = std::stoul(meta("backbone.input_channels"));
        arch.input_side = std::stoul(meta("backbone.input_side"));
        arch.input_features = std::stoul(meta("backbone.input_features"));
        arch.conv_blocks = parse_conv_blocks(meta("backbone.conv_blocks"));
        arch.fc_widths = parse_size_list(meta("backbone.fc_widths"));
    } catch (const std::logic_error& e) {
        throw DataError(manifest.string() + ": malformed backbone header (" + e.what() + ")");
    }
    auto bb = build_backbone(arch, 0);
    restore_params(bb.params, ckpt.tensors, "backbone.");
    return bb;
}

}  // namespace ddipnet
