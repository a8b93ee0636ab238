#pragma once

#include <cstdint>
#include <filesystem>

#include "ddipnet/params.hpp"

namespace ddipnet {

inline constexpr std::size_t kLatentDim = 100;

/// Fixed generator input: 100 values drawn uniformly from [-1, 1]. Marked
/// frozen once training starts; the trainer never updates it.
struct LatentSeed {
    Tensor values;  // [1 x 100]
    bool frozen = false;
};

LatentSeed sample_latent(std::uint64_t seed);

/// DCGAN-style generator producing the f x c discriminant matrix.
///
/// The latent row is projected to base_channels x 4 x 4, then each stage
/// doubles the side with a stride-2 transposed convolution (kernel 4, pad 1)
/// until side s = sqrt(f). Intermediate stages halve the channel count and
/// use batchnorm + ReLU; the last stage emits `classes` channels through tanh.
struct GeneratorConfig {
    std::size_t classes = 2;
    std::size_t feature_width = 256;
    std::size_t base_channels = 32;
    float bn_eps = 1e-5f;
    float bn_momentum = 0.1f;

    /// Output side s, with s * s == feature_width.
    std::size_t side() const;
    /// Number of upsampling stages, log2(s / 4).
    std::size_t stages() const;
    /// Throws ConfigError on a non-square f, s < 8, s not 4 * 2^k, fewer than
    /// two classes, or a base width that cannot be halved for every stage.
    void validate() const;
};

struct Generator {
    GeneratorConfig cfg;
    ParamSet params;   // trainable
    ParamSet buffers;  // batchnorm running statistics
};

/// Weights ~ N(0, 0.02), batchnorm gamma = 1, beta = 0; reproducible from seed.
Generator build_generator(std::size_t classes, std::size_t feature_width,
                          std::size_t base_channels, std::uint64_t seed);
Generator build_generator(const GeneratorConfig& cfg, std::uint64_t seed);

/// Returns S as [f x c]; row r holds the c channel values at spatial
/// position (r / s, r % s). Training mode updates `buffers`.
template <class T>
BasicTensor<T> generator_forward(const GeneratorConfig& cfg, const BasicParamSet<T>& params,
                                 BasicParamSet<T>& buffers, const BasicTensor<T>& z, Mode mode);

Tensor generator_forward(Generator& gen, const LatentSeed& z, Mode mode);

/// Checkpoint holding config, parameters, batchnorm buffers and Z.
void save_generator(const std::filesystem::path& manifest, const Generator& gen, const LatentSeed& z);
Generator load_generator(const std::filesystem::path& manifest, LatentSeed& z);

/// Number of generator forwards executed on the calling thread.
std::uint64_t generator_forward_count();

}  // namespace ddipnet
