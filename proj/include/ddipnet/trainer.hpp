#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ddipnet/backbone.hpp"
#include "ddipnet/dcgpn.hpp"
#include "ddipnet/metric_head.hpp"

namespace ddipnet {

enum class Variant { ddipnet, ddipnet_plus };

std::string to_string(Variant v);
/// Accepts "ddipnet", "ddipnet+" and "ddipnet_plus".
Variant parse_variant(const std::string& s);

struct AugmentationPolicy {
    double horizontal_flip_prob = 0.5;
    double vertical_flip_prob = 0.5;
    double crop_area_lo = 0.8;  // fraction of the image area kept by the square crop
    double crop_area_hi = 1.0;
    std::vector<int> rotation_choices{0, 90, 180, 270};

    void validate() const;
    bool operator==(const AugmentationPolicy&) const = default;
};

/// Which triplet members DDIPNet+ augments.
enum class AugmentMembers { all, anchor };

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    bool operator==(const AdamConfig&) const = default;
};

struct TrainConfig {
    int epochs = 50;
    int batch_size = 32;
    double lr_backbone = 1e-6;
    double lr_generator = 1e-4;
    MarginConfig margin;
    Variant variant = Variant::ddipnet;
    std::uint64_t seed = 0;
    AdamConfig adam;
    AugmentationPolicy augmentation;
    AugmentMembers augment_members = AugmentMembers::all;
    bool resample_latent = false;  // draw a fresh Z per batch instead of the fixed one
    int checkpoint_every = 0;      // epochs; 0 disables
    std::filesystem::path checkpoint_dir;

    void validate() const;
    bool operator==(const TrainConfig&) const = default;
};

struct Triplet {
    std::size_t anchor = 0;
    std::size_t negative = 0;
    std::size_t positive = 0;
};
using TripletBatch = std::vector<Triplet>;

/// Indices into `samples`. Anchor uniform over the dataset, positive uniform
/// over the anchor's class minus the anchor, negative uniform over the samples
/// of every other class. Throws DataError when a class has a single sample or
/// only one class is present.
TripletBatch sample_triplets(std::span<const Sample> samples, std::size_t batch_size,
                             std::mt19937_64& rng);

/// Random square crop (resized back), flips and a quarter-turn rotation.
/// Vector samples are returned unchanged.
Sample augment(const Sample& sample, const AugmentationPolicy& policy, std::mt19937_64& rng);

/// Bilinear resize of a [C x H x W] image to [C x side x side] (pixel-center
/// alignment).
Tensor resize_bilinear(const Tensor& image, std::size_t side);

struct AdamState {
    std::vector<std::vector<float>> m;
    std::vector<std::vector<float>> v;
    std::uint64_t step = 0;
};

/// One bias-corrected Adam update of every parameter from its accumulated
/// gradient (a parameter without a gradient sees zeros). Throws NumericError
/// naming the step and parameter when a gradient is not finite.
void adam_step(ParamSet& params, AdamState& state, double lr, const AdamConfig& cfg);

struct EpochRecord {
    int epoch = 0;
    double mean_loss = 0;
    double mean_d1 = 0;
    double mean_d2 = 0;
    double wallclock_ms = 0;

    bool operator==(const EpochRecord&) const = default;
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;
    std::size_t batches_per_epoch = 0;

    bool operator==(const TrainHistory&) const = default;
};

/// Joint optimization of backbone and generator under the triplet loss.
/// Mutates the parameters of `backbone` and `generator`; `z` is frozen and
/// left bit-identical.
TrainHistory train(std::span<const Sample> samples, Backbone& backbone, Generator& generator,
                   LatentSeed& z, const TrainConfig& cfg);

/// CSV: epoch,mean_loss,mean_d1,mean_d2[,wallclock_ms]
void write_history_csv(const std::filesystem::path& path, const TrainHistory& history,
                       bool include_wallclock);

/// Model checkpoint directory: backbone.manifest, generator.manifest (with Z).
void save_model(const std::filesystem::path& dir, const Backbone& backbone,
                const Generator& generator, const LatentSeed& z);

}  // namespace ddipnet
