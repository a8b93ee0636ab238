#include "ddipnet/dcgpn.hpp"

#include <cmath>
#include <random>
#include <sstream>
#include <string>

#include "ddipnet/checkpoint.hpp"
#include "ddipnet/ops.hpp"

namespace ddipnet {

namespace {

thread_local std::uint64_t tl_forward_count = 0;

std::string bn_name(std::size_t i) { return "bn" + std::to_string(i); }
std::string up_name(std::size_t i) { return "up" + std::to_string(i); }

// Channel width after stage `i` (0 = the 4x4 projection).
std::size_t stage_channels(const GeneratorConfig& cfg, std::size_t i) {
    if (i == cfg.stages()) return cfg.classes;
    return cfg.base_channels >> i;
}

}  // namespace

LatentSeed sample_latent(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
    std::vector<float> v(kLatentDim);
    for (auto& x : v) x = dist(rng);
    return {Tensor::from_data({1, kLatentDim}, std::move(v)), false};
}

std::size_t GeneratorConfig::side() const {
    const auto s = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(feature_width))));
    if (s * s != feature_width)
        throw ConfigError("generator: feature width f = " + std::to_string(feature_width) +
                          " is not a perfect square (s*s = f required)");
    return s;
}

std::size_t GeneratorConfig::stages() const {
    std::size_t s = side();
    if (s < 8 || s % 4 != 0)
        throw ConfigError("generator: output side " + std::to_string(s) + " (f = " +
                          std::to_string(feature_width) + ") must be >= 8 and a multiple of 4");
    std::size_t q = s / 4, n = 0;
    while (q > 1) {
        if (q % 2 != 0)
            throw ConfigError("generator: output side " + std::to_string(s) +
                              " must be 4 times a power of two");
        q /= 2;
        ++n;
    }
    return n;
}

void GeneratorConfig::validate() const {
    const auto n = stages();
    if (classes < 2) throw ConfigError("generator: need at least 2 classes");
    if (base_channels == 0 || (base_channels >> (n - 1)) == 0)
        throw ConfigError("generator: base_channels " + std::to_string(base_channels) +
                          " cannot be halved across " + std::to_string(n) + " stages");
    if (!(bn_eps > 0.0f)) throw ConfigError("generator: bn_eps must be positive");
}

Generator build_generator(std::size_t classes, std::size_t feature_width,
                          std::size_t base_channels, std::uint64_t seed) {
    GeneratorConfig cfg;
    cfg.classes = classes;
    cfg.feature_width = feature_width;
    cfg.base_channels = base_channels;
    return build_generator(cfg, seed);
}

Generator build_generator(const GeneratorConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> normal(0.0f, 0.02f);
    auto init = [&](Shape shape) {
        std::vector<float> v(numel(shape));
        for (auto& x : v) x = normal(rng);
        return Tensor::from_data(std::move(shape), std::move(v), true);
    };
    auto add_bn = [](Generator& g, std::size_t i, std::size_t channels) {
        g.params.add(bn_name(i) + ".gamma", Tensor::full({channels}, 1.0f, true));
        g.params.add(bn_name(i) + ".beta", Tensor::zeros({channels}, true));
        g.buffers.add(bn_name(i) + ".running_mean", Tensor::zeros({channels}));
        g.buffers.add(bn_name(i) + ".running_var", Tensor::full({channels}, 1.0f));
    };

    Generator g;
    g.cfg = cfg;
    const std::size_t n = cfg.stages();
    g.params.add("project.weight", init({kLatentDim, cfg.base_channels * 16}));
    add_bn(g, 0, cfg.base_channels);
    for (std::size_t i = 1; i <= n; ++i) {
        const auto cin = stage_channels(cfg, i - 1);
        const auto cout = stage_channels(cfg, i);
        g.params.add(up_name(i) + ".weight", init({cin, cout, 4, 4}));
        if (i < n) add_bn(g, i, cout);
    }
    return g;
}

template <class T>
BasicTensor<T> generator_forward(const GeneratorConfig& cfg, const BasicParamSet<T>& params,
                                 BasicParamSet<T>& buffers, const BasicTensor<T>& z, Mode mode) {
    if (z.shape() != Shape{1, kLatentDim})
        throw DimensionError("generator: latent input must be [1x100], got " + shape_str(z.shape()));
    const std::size_t n = cfg.stages();
    const std::size_t s = cfg.side();
    ++tl_forward_count;

    auto bn = [&](const BasicTensor<T>& x, std::size_t i) {
        const auto name = bn_name(i);
        return batchnorm2d(x, params.at(name + ".gamma"), params.at(name + ".beta"),
                           buffers.at(name + ".running_mean"), buffers.at(name + ".running_var"),
                           static_cast<T>(cfg.bn_eps), static_cast<T>(cfg.bn_momentum), mode);
    };

    auto x = matmul(z, params.at("project.weight"));
    x = reshape(x, {cfg.base_channels, 4, 4});
    x = relu(bn(x, 0));
    for (std::size_t i = 1; i <= n; ++i) {
        x = conv2d_transpose(x, params.at(up_name(i) + ".weight"), 2, 1);
        if (i < n) x = relu(bn(x, i));
    }
    x = tanh(x);
    // [c x s x s] -> [c x f] -> [f x c]
    return transpose(reshape(x, {cfg.classes, s * s}));
}

template Tensor generator_forward(const GeneratorConfig&, const ParamSet&, ParamSet&, const Tensor&,
                                  Mode);
template Tensor64 generator_forward(const GeneratorConfig&, const BasicParamSet<double>&,
                                    BasicParamSet<double>&, const Tensor64&, Mode);

Tensor generator_forward(Generator& gen, const LatentSeed& z, Mode mode) {
    return generator_forward<float>(gen.cfg, gen.params, gen.buffers, z.values, mode);
}

std::uint64_t generator_forward_count() { return tl_forward_count; }

void save_generator(const std::filesystem::path& manifest, const Generator& gen, const LatentSeed& z) {
    Checkpoint ckpt;
    ckpt.meta["generator.classes"] = std::to_string(gen.cfg.classes);
    ckpt.meta["generator.feature_width"] = std::to_string(gen.cfg.feature_width);
    ckpt.meta["generator.base_channels"] = std::to_string(gen.cfg.base_channels);
    std::ostringstream os;
    os.precision(9);
    os << gen.cfg.bn_eps << ' ' << gen.cfg.bn_momentum;
    ckpt.meta["generator.bn"] = os.str();
    store_params(ckpt, gen.params, "generator.");
    store_params(ckpt, gen.buffers, "generator.buffer.");
    ckpt.tensors.add("latent.z", z.values.detach());
    write_checkpoint(manifest, ckpt);
}

Generator load_generator(const std::filesystem::path& manifest, LatentSeed& z) {
    const auto ckpt = read_checkpoint(manifest);
    auto meta = [&](const std::string& key) -> std::string {
        auto it = ckpt.meta.find(key);
        if (it == ckpt.meta.end()) throw DataError(manifest.string() + ": missing meta '" + key + "'");
        return it->second;
    };
    GeneratorConfig cfg;
    try {
        cfg.classes = std::stoul(meta("generator.classes"));
        cfg.feature_width = std::stoul(meta("generator.feature_width"));
        cfg.base_channels = std::stoul(meta("generator.base_channels"));
        std::istringstream is(meta("generator.bn"));
        is >> cfg.bn_eps >> cfg.bn_momentum;
        if (!is) throw std::invalid_argument("generator.bn");
    } catch (const std::logic_error& e) {
        throw DataError(manifest.string() + ": malformed generator header (" + e.what() + ")");
    }
    auto gen = build_generator(cfg, 0);
    restore_params(gen.params, ckpt.tensors, "generator.");
    restore_params(gen.buffers, ckpt.tensors, "generator.buffer.");
    const auto& zt = ckpt.tensors.at("latent.z");
    if (zt.shape() != Shape{1, kLatentDim}) throw DataError(manifest.string() + ": latent.z must be [1x100]");
    z.values = zt.detach();
    z.frozen = true;
    return gen;
}

}  // namespace ddipnet
