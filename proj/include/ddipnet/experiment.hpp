#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ddipnet/classifier.hpp"
#include "ddipnet/dataset.hpp"
#include "ddipnet/trainer.hpp"

namespace ddipnet {

/// Backbone layout used at desk scale: two conv blocks and one 256-wide FC
/// layer on 32 x 32 RGB input, giving f = 256 (s = 16).
ArchitectureSpec desk_architecture();

struct ExperimentConfig {
    ArchitectureSpec arch = desk_architecture();
    std::size_t generator_base_channels = 32;
    TrainConfig train;
    SvmConfig svm;
    SplitSpec split;
    int runs = 10;
    std::uint64_t master_seed = 0;
    bool fixed_split = false;  // every run reuses the split of run 0
    SvmInput svm_input = SvmInput::features;
    int jobs = 1;              // runs executed concurrently

    void validate() const;
    bool operator==(const ExperimentConfig&) const = default;
};

/// Seeds of one run, all derived from the master seed and the run index.
struct RunSeeds {
    std::uint64_t split = 0;
    std::uint64_t backbone = 0;
    std::uint64_t generator = 0;
    std::uint64_t latent = 0;
    std::uint64_t train = 0;
    std::uint64_t svm = 0;

    bool operator==(const RunSeeds&) const = default;
};

RunSeeds derive_run_seeds(std::uint64_t master, std::uint64_t run, bool fixed_split);

struct RunResult {
    int run = 0;
    RunSeeds seeds;
    std::size_t train_size = 0;
    std::size_t test_size = 0;
    double accuracy = 0;
    std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
    TrainHistory history;
    std::uint64_t eval_generator_forwards = 0;
    double wallclock_ms = 0;

    bool operator==(const RunResult&) const = default;
};

struct Summary {
    double mean = 0;
    double std = 0;  // sample (n - 1) deviation; 0 for a single value
    bool single_run = false;

    bool operator==(const Summary&) const = default;
};

Summary summarize(const std::vector<double>& values);

/// Overall (micro) accuracy from a confusion matrix: trace / total.
double confusion_accuracy(const std::vector<std::vector<std::size_t>>& confusion);

struct ExperimentReport {
    ExperimentConfig config;
    std::string config_hash;
    std::string dataset;
    std::size_t num_classes = 0;
    std::vector<RunResult> runs;
    Summary accuracy;
    double wallclock_ms = 0;

    bool operator==(const ExperimentReport&) const = default;
};

/// Trained backbone + SVM of one run, evaluated on the held-out split.
struct RunOutcome {
    RunResult result;
    Classifier model;
};

/// One execution: split, train, eval-mode features, SVM, test accuracy.
RunOutcome run_once(const Dataset& data, const ExperimentConfig& cfg, int run);

/// Runs cfg.runs executions and aggregates. A failing run is rethrown with
/// its index in the message.
ExperimentReport run_experiment(const Dataset& data, const ExperimentConfig& cfg);

struct MarginSearchConfig {
    std::vector<double> margins = margin_grid(0.1, 1.0, 0.1);
    int rounds = 5;
    int epochs_per_round = 15;

    void validate() const;
    bool operator==(const MarginSearchConfig&) const = default;

    /// lo, lo + step, ... up to hi inclusive (values rounded to 1e-9).
    static std::vector<double> margin_grid(double lo, double hi, double step);
};

struct MarginRow {
    double margin = 0;
    std::vector<double> accuracies;
    Summary accuracy;

    bool operator==(const MarginRow&) const = default;
};

struct MarginSearchResult {
    ExperimentConfig base;
    MarginSearchConfig search;
    std::string config_hash;
    std::string dataset;
    std::vector<MarginRow> rows;
    double best_margin = 0;
    double wallclock_ms = 0;

    bool operator==(const MarginSearchResult&) const = default;
};

/// For every margin, `rounds` independent short trainings and evaluations.
/// Every margin shares the base master seed, so cells differ only in m.
MarginSearchResult margin_search(const Dataset& data, const ExperimentConfig& base,
                                 const MarginSearchConfig& search);

}  // namespace ddipnet
