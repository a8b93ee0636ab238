#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <optional>
#include <iostream>
#include <set>

#include "ddipnet/classifier.hpp"
#include "ddipnet/config.hpp"
#include "ddipnet/dataset.hpp"
#include "ddipnet/experiment.hpp"
#include "ddipnet/report.hpp"
#include "ddipnet/trainer.hpp"

namespace fs = std::filesystem;
using namespace ddipnet;

namespace {

struct Common {
    std::string config;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
    std::string out_dir = "out";
    std::string variant;
    bool fixed_split = false;
    std::string dataset;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config, "key = value configuration file");
    cmd->add_option("--set", c.overrides, "extra key=value setting (repeatable, applied after --config)");
    cmd->add_option("--seed", c.seed, "master seed");
    cmd->add_option("--out-dir", c.out_dir, "directory for every produced artifact");
    cmd->add_option("--variant", c.variant, "ddipnet or ddipnet+");
    cmd->add_option("--dataset", c.dataset, "class-per-directory image root or feature CSV (default: synthetic)");
}

struct Loaded {
    Settings settings;
    std::set<std::string> explicit_keys;
};

Loaded resolve(const Common& c) {
    Loaded l;
    if (!c.config.empty()) l.settings = load_settings(c.config);
    auto note_keys = [&](const std::string& body) {
        const auto eq = body.find('=');
        if (eq != std::string::npos) {
            auto key = body.substr(0, eq);
            key.erase(key.find_last_not_of(" \t") + 1);
            key.erase(0, key.find_first_not_of(" \t"));
            l.explicit_keys.insert(key);
        }
    };
    if (!c.config.empty()) {
        std::ifstream in(c.config);
        for (std::string line; std::getline(in, line);) note_keys(line.substr(0, line.find('#')));
    }
    for (const auto& o : c.overrides) {
        const auto eq = o.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + o + "'");
        auto key = o.substr(0, eq), value = o.substr(eq + 1);
        apply_setting(l.settings, key, value);
        l.explicit_keys.insert(key);
    }
    if (c.seed) l.settings.experiment.master_seed = *c.seed;
    if (!c.variant.empty()) l.settings.experiment.train.variant = parse_variant(c.variant);
    if (c.fixed_split) l.settings.experiment.fixed_split = true;
    if (!c.dataset.empty()) l.settings.dataset = c.dataset;
    return l;
}

Dataset obtain_dataset(Loaded& l) {
    auto& s = l.settings;
    auto& arch = s.experiment.arch;
    if (s.dataset.empty()) return synth_dataset(s.synth_classes, s.synth_per_class, arch.input_side, s.synth_seed);
    Dataset data = load_dataset(s.dataset, arch.input_side);
    if (data.samples.front().input.rank() == 2) {
        // feature vectors: the backbone becomes the identity unless FC layers were asked for
        arch.input_features = data.samples.front().input.numel();
        arch.conv_blocks.clear();
        if (!l.explicit_keys.contains("arch.fc_widths")) arch.fc_widths.clear();
    }
    return data;
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

void print_dataset(const Dataset& d) {
    std::printf("dataset %s: %zu samples, %zu classes\n", d.name.c_str(), d.samples.size(), d.num_classes);
    const auto counts = d.class_counts();
    for (std::size_t k = 0; k < counts.size(); ++k) std::printf("  %zu %s: %zu\n", k, d.class_names[k].c_str(), counts[k]);
}

int cmd_synth(const Common& c, std::size_t classes, std::size_t per_class, std::size_t side) {
    Loaded l = resolve(c);
    const std::uint64_t seed = c.seed ? *c.seed : l.settings.synth_seed;
    const Dataset d = synth_dataset(classes, per_class, side, seed);
    write_image_dataset(fs::path(c.out_dir) / "images", d);
    write_manifest(c.out_dir, "-", {"images"});
    print_dataset(d);
    return 0;
}

int cmd_ingest(const Common& c, const std::string& csv) {
    Loaded l = resolve(c);
    l.settings.dataset = csv;
    const Dataset d = obtain_dataset(l);
    ensure_dir(c.out_dir);
    write_features_csv(fs::path(c.out_dir) / "features.csv", d.samples);
    write_manifest(c.out_dir, config_hash(l.settings.experiment), {"features.csv"});
    print_dataset(d);
    std::printf("feature width %zu\n", d.samples.front().input.numel());
    return 0;
}

int cmd_train(const Common& c) {
    Loaded l = resolve(c);
    const Dataset d = obtain_dataset(l);
    auto& cfg = l.settings.experiment;
    cfg.validate();
    const RunSeeds seeds = derive_run_seeds(cfg.master_seed, 0, false);
    Backbone backbone = build_backbone(cfg.arch, seeds.backbone);
    Generator gen = build_generator(d.num_classes, backbone.feature_width(), cfg.generator_base_channels, seeds.generator);
    LatentSeed z = sample_latent(seeds.latent);
    TrainConfig tc = cfg.train;
    tc.seed = seeds.train;
    const auto history = train(d.samples, backbone, gen, z, tc);

    const fs::path out = c.out_dir;
    ensure_dir(out);
    save_model(out / "model", backbone, gen, z);
    std::optional<Tensor> projection;
    if (cfg.svm_input == SvmInput::embeddings) projection = generator_forward(gen, z, Mode::eval).detach();
    const auto features = extract_features(backbone, projection, d.samples);
    Classifier model{backbone, projection, svm_train(features, cfg.svm, seeds.svm)};
    save_classifier(out / "classifier", model);
    write_history_csv(out / "history.csv", history, true);
    write_text(out / "config.txt", format_settings(l.settings));
    write_manifest(out, config_hash(cfg), {"model", "classifier", "history.csv", "config.txt"});
    const auto& last = history.epochs.back();
    std::printf("trained %zu epochs: loss %.6f d1 %.6f d2 %.6f\n", history.epochs.size(), last.mean_loss,
                last.mean_d1, last.mean_d2);
    return 0;
}

int cmd_evaluate(const Common& c, const std::string& model_dir) {
    Loaded l = resolve(c);
    const Classifier model = load_classifier(model_dir);
    l.settings.experiment.arch = model.backbone.arch;
    const Dataset d = obtain_dataset(l);
    std::vector<std::vector<std::size_t>> confusion(d.num_classes, std::vector<std::size_t>(d.num_classes, 0));
    std::string csv = "index,label,predicted\n";
    for (std::size_t i = 0; i < d.samples.size(); ++i) {
        const int p = classify(model, d.samples[i]);
        if (p >= 0 && static_cast<std::size_t>(p) < d.num_classes) ++confusion[d.samples[i].label][p];
        csv += std::to_string(i) + "," + std::to_string(d.samples[i].label) + "," + std::to_string(p) + "\n";
    }
    ensure_dir(c.out_dir);
    write_text(fs::path(c.out_dir) / "predictions.csv", csv);
    write_manifest(c.out_dir, config_hash(l.settings.experiment), {"predictions.csv"});
    std::printf("accuracy %.6f on %zu samples\n", confusion_accuracy(confusion), d.samples.size());
    return 0;
}

int cmd_experiment(const Common& c) {
    Loaded l = resolve(c);
    const Dataset d = obtain_dataset(l);
    const auto report = run_experiment(d, l.settings.experiment);
    emit_report(report, c.out_dir);
    for (const auto& r : report.runs) std::printf("run %d: accuracy %.6f\n", r.run, r.accuracy);
    std::printf("mean %.6f std %.6f%s\n", report.accuracy.mean, report.accuracy.std,
                report.accuracy.single_run ? " (single run)" : "");
    return 0;
}

int cmd_margin_search(const Common& c) {
    Loaded l = resolve(c);
    const Dataset d = obtain_dataset(l);
    const auto result = margin_search(d, l.settings.experiment, l.settings.margin_search);
    emit_report(result, c.out_dir);
    for (const auto& row : result.rows)
        std::printf("m=%.2f: %.6f +- %.6f\n", row.margin, row.accuracy.mean, row.accuracy.std);
    std::printf("best margin %.2f\n", result.best_margin);
    return 0;
}

int cmd_export(const Common& c, const std::string& model_dir) {
    Loaded l = resolve(c);
    const Backbone backbone = load_backbone(fs::path(model_dir) / "backbone.manifest");
    l.settings.experiment.arch = backbone.arch;
    const Dataset d = obtain_dataset(l);
    std::vector<Sample> rows;
    for (const auto& s : d.samples) rows.push_back({backbone_forward(backbone, s.input, Mode::eval), s.label});
    ensure_dir(c.out_dir);
    write_features_csv(fs::path(c.out_dir) / "features.csv", rows);
    write_manifest(c.out_dir, config_hash(l.settings.experiment), {"features.csv"});
    std::printf("exported %zu rows of width %zu\n", rows.size(), backbone.feature_width());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Discriminant deep image prior network: training, evaluation and experiments"};
    app.require_subcommand(1);

    Common c;
    std::size_t classes = 3, per_class = 20, side = 32;
    std::string path;

    auto* synth = app.add_subcommand("synth", "write a synthetic class-per-directory image dataset");
    add_common(synth, c);
    synth->add_option("--classes", classes);
    synth->add_option("--per-class", per_class);
    synth->add_option("--side", side);

    auto* ingest = app.add_subcommand("ingest-features", "validate a feature CSV and copy it in canonical form");
    add_common(ingest, c);
    ingest->add_option("csv", path)->required();

    auto* train_cmd = app.add_subcommand("train", "train on the whole dataset and save model and classifier");
    add_common(train_cmd, c);

    auto* eval = app.add_subcommand("evaluate", "classify a dataset with a saved classifier (backbone + SVM)");
    add_common(eval, c);
    eval->add_option("--model", path, "classifier directory written by train")->required();

    auto* exp = app.add_subcommand("experiment", "repeated split/train/evaluate runs with aggregated accuracy");
    add_common(exp, c);
    exp->add_flag("--fixed-split", c.fixed_split, "reuse one split for every run");

    auto* ms = app.add_subcommand("margin-search", "accuracy over a grid of triplet margins");
    add_common(ms, c);
    ms->add_flag("--fixed-split", c.fixed_split, "reuse one split for every run");

    auto* exp_feat = app.add_subcommand("export-features", "write eval-mode backbone features as CSV");
    add_common(exp_feat, c);
    exp_feat->add_option("--model", path, "classifier or model directory holding backbone.manifest")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (*synth) return cmd_synth(c, classes, per_class, side);
        if (*ingest) return cmd_ingest(c, path);
        if (*train_cmd) return cmd_train(c);
        if (*eval) return cmd_evaluate(c, path);
        if (*exp) return cmd_experiment(c);
        if (*ms) return cmd_margin_search(c);
        if (*exp_feat) return cmd_export(c, path);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 1;
    } catch (const DimensionError& e) {
        std::fprintf(stderr, "dimension error: %s\n", e.what());
        return 1;
    } catch (const ContractError& e) {
        std::fprintf(stderr, "internal error: %s\n", e.what());
        return 1;
    } catch (const DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 2;
    } catch (const IoError& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return 2;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric error: %s\n", e.what());
        return 3;
    }
    return 0;
}
