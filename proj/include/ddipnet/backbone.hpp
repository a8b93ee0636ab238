#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ddipnet/params.hpp"

namespace ddipnet {

struct ConvBlockSpec {
    std::size_t channels = 8;
    std::size_t kernel = 3;  // odd kernels keep the side ("same" padding of kernel / 2)
    std::size_t convs = 1;   // conv + ReLU repetitions inside the block
    bool pool = true;        // 2x2 max pool, stride 2, after the block

    bool operator==(const ConvBlockSpec&) const = default;
};

/// Small VGG-style stack: conv blocks, flatten, fully connected layers. Every
/// layer is followed by ReLU, including the last one, so features are
/// non-negative.
///
/// With `input_features > 0` the network consumes precomputed feature vectors
/// of that width; conv blocks are then not allowed and an empty FC list makes
/// the backbone the identity.
struct ArchitectureSpec {
    std::size_t input_channels = 3;
    std::size_t input_side = 32;
    std::size_t input_features = 0;
    std::vector<ConvBlockSpec> conv_blocks;
    std::vector<std::size_t> fc_widths;

    bool vector_input() const { return input_features > 0; }
    /// Throws ConfigError when the layer chain is inconsistent.
    void validate() const;
    /// Width f of the produced feature vectors.
    std::size_t feature_width() const;
    std::size_t parameter_count() const;
    Shape input_shape() const;

    bool operator==(const ArchitectureSpec&) const = default;
};

/// One dataset entry. `input` is an image [C x H x W] with values in [0, 1],
/// or a feature row [1 x f] for vector-input pipelines.
struct Sample {
    Tensor input;
    int label = 0;
};

/// A backbone output: a [1 x f] row, all entries >= 0.
using FeatureVec = Tensor;

struct Backbone {
    ArchitectureSpec arch;
    ParamSet params;

    std::size_t feature_width() const { return arch.feature_width(); }
};

/// He-uniform weights, zero biases; reproducible from `seed`.
Backbone build_backbone(const ArchitectureSpec& arch, std::uint64_t seed);

/// Generic-precision forward used by training (float) and gradient oracles
/// (double). Returns a [1 x f] row.
template <class T>
BasicTensor<T> backbone_forward(const ArchitectureSpec& arch, const BasicParamSet<T>& params,
                                const BasicTensor<T>& input, Mode mode);

FeatureVec backbone_forward(const Backbone& backbone, const Tensor& input, Mode mode);

/// "channels:kernel:convs:pool" per block, comma separated, e.g.
/// "8:3:1:1,16:3:1:1". Throws ConfigError on malformed text.
std::vector<ConvBlockSpec> parse_conv_blocks(const std::string& text);
std::string format_conv_blocks(const std::vector<ConvBlockSpec>& blocks);
/// Comma separated positive integers ("" is the empty list).
std::vector<std::size_t> parse_size_list(const std::string& text);
std::string format_size_list(const std::vector<std::size_t>& values);

/// Checkpoint with the architecture in the manifest meta records.
void save_backbone(const std::filesystem::path& manifest, const Backbone& backbone);
Backbone load_backbone(const std::filesystem::path& manifest);

/// Reads the feature CSV format:
///   label,f0,f1,...,f{f-1}
///   <int>,<float>,...
/// Lines starting with '#' are comments. Throws DataError naming the line on
/// ragged rows, non-numeric cells and negative or non-finite features.
std::vector<Sample> ingest_features(const std::filesystem::path& path);

/// Writes samples (each a [1 x f] row) in the same CSV format.
void write_features_csv(const std::filesystem::path& path, const std::vector<Sample>& samples);

}  // namespace ddipnet
