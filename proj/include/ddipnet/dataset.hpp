#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ddipnet/backbone.hpp"

namespace ddipnet {

struct Dataset {
    std::string name;
    std::vector<Sample> samples;
    std::size_t num_classes = 0;
    std::vector<std::string> class_names;

    /// Samples per class index.
    std::vector<std::size_t> class_counts() const;
    /// Throws DataError unless every label lies in [0, c) and occurs at least twice.
    void validate() const;
};

/// A directory holding one sub-directory per class (sorted names give the class
/// indices; images are decoded, converted to RGB and resized to image_side), or
/// a feature CSV file as read by ingest_features.
Dataset load_dataset(const std::filesystem::path& path, std::size_t image_side);

/// Class-conditional blob images: each class has its own colour and blob
/// position, jittered per image, over a noisy grey background.
Dataset synth_dataset(std::size_t classes, std::size_t per_class, std::size_t image_side,
                      std::uint64_t seed);

/// Writes an image dataset as class-per-directory PNG files.
void write_image_dataset(const std::filesystem::path& root, const Dataset& data);

struct SplitSpec {
    double train_ratio = 0.8;
    std::uint64_t seed = 0;
    bool stratified = true;

    void validate() const;
    bool operator==(const SplitSpec&) const = default;
};

/// Indices into Dataset::samples, each list sorted.
struct Split {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};

/// round(ratio * size) with halves rounded up, clamped to [1, size - 1].
std::size_t stratified_train_count(std::size_t class_size, double ratio);

/// Per-class shuffle then cut; reproducible from spec.seed.
Split split(const Dataset& data, const SplitSpec& spec);

std::vector<Sample> gather(const Dataset& data, const std::vector<std::size_t>& indices);

}  // namespace ddipnet
