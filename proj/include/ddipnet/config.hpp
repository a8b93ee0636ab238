#pragma once

#include <filesystem>
#include <string>

#include "ddipnet/experiment.hpp"

namespace ddipnet {

/// Everything the command line tool can be configured with. The text form is
/// one `key = value` per line; '#' starts a comment. Keys:
///
///   arch.input_channels arch.input_side arch.input_features arch.conv_blocks
///   arch.fc_widths
///   generator.base_channels
///   train.epochs train.batch_size train.lr_backbone train.lr_generator
///   train.margin train.variant train.seed train.adam_beta1 train.adam_beta2
///   train.adam_eps train.hflip_prob train.vflip_prob train.crop_area_lo
///   train.crop_area_hi train.rotations train.augment_members
///   train.resample_latent train.checkpoint_every train.checkpoint_dir
///   svm.C svm.tolerance svm.max_iterations
///   split.train_ratio split.seed split.stratified
///   experiment.runs experiment.seed experiment.fixed_split
///   experiment.svm_input experiment.jobs
///   margin_search.margins margin_search.rounds margin_search.epochs
///   dataset.path synth.classes synth.per_class synth.seed
struct Settings {
    ExperimentConfig experiment;
    MarginSearchConfig margin_search;
    std::filesystem::path dataset;
    std::size_t synth_classes = 3;
    std::size_t synth_per_class = 20;
    std::uint64_t synth_seed = 7;

    bool operator==(const Settings&) const = default;
};

/// Throws ConfigError naming the key on unknown keys or unparsable values.
void apply_setting(Settings& settings, const std::string& key, const std::string& value);
Settings parse_settings(const std::string& text);
Settings load_settings(const std::filesystem::path& path);

/// Canonical text listing every key; parse_settings(format_settings(s)) == s.
std::string format_settings(const Settings& settings);

/// Shortest round-trip decimal form.
std::string format_double(double v);

std::uint64_t fnv1a(std::string_view text);

/// 16 hex digits over the canonical text of the result-affecting keys
/// (experiment.jobs and train.checkpoint_dir are left out).
std::string config_hash(const ExperimentConfig& cfg);
std::string config_hash(const ExperimentConfig& cfg, const MarginSearchConfig& search);

}  // namespace ddipnet
