#include "ddipnet/experiment.hpp"

#include <chrono>
#include <cmath>
#include <future>
#include <numeric>
#include <random>

#include "ddipnet/config.hpp"
#include "ddipnet/dcgpn.hpp"

namespace ddipnet {

ArchitectureSpec desk_architecture() {
    ArchitectureSpec a;
    a.input_channels = 3;
    a.input_side = 32;
    a.conv_blocks = {{8, 3, 1, true}, {16, 3, 1, true}};
    a.fc_widths = {256};
    return a;
}

void ExperimentConfig::validate() const {
    arch.validate();
    GeneratorConfig g;
    g.feature_width = arch.feature_width();
    g.base_channels = generator_base_channels;
    g.validate();
    train.validate();
    svm.validate();
    split.validate();
    if (runs < 1) throw ConfigError("experiment: runs must be >= 1");
    if (jobs < 1) throw ConfigError("experiment: jobs must be >= 1");
}

RunSeeds derive_run_seeds(std::uint64_t master, std::uint64_t run, bool fixed_split) {
    auto draw = [&](std::uint64_t r, std::uint32_t stream) {
        std::seed_seq seq{static_cast<std::uint32_t>(master), static_cast<std::uint32_t>(master >> 32),
                          static_cast<std::uint32_t>(r), static_cast<std::uint32_t>(r >> 32), stream};
        std::uint32_t out[2];
        seq.generate(out, out + 2);
        return (std::uint64_t(out[0]) << 32) | out[1];
    };
    RunSeeds s;
    s.split = draw(fixed_split ? 0 : run, 1);
    s.backbone = draw(run, 2);
    s.generator = draw(run, 3);
    s.latent = draw(run, 4);
    s.train = draw(run, 5);
    s.svm = draw(run, 6);
    return s;
}

Summary summarize(const std::vector<double>& values) {
    Summary s;
    if (values.empty()) return s;
    s.mean = std::accumulate(values.begin(), values.end(), 0.0) / double(values.size());
    if (values.size() == 1) {
        s.single_run = true;
        return s;
    }
    double ss = 0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / double(values.size() - 1));
    return s;
}

double confusion_accuracy(const std::vector<std::vector<std::size_t>>& confusion) {
    std::size_t hit = 0, total = 0;
    for (std::size_t i = 0; i < confusion.size(); ++i)
        for (std::size_t j = 0; j < confusion[i].size(); ++j) {
            total += confusion[i][j];
            if (i == j) hit += confusion[i][j];
        }
    if (total == 0) throw DataError("accuracy of an empty test set");
    return double(hit) / double(total);
}

RunOutcome run_once(const Dataset& data, const ExperimentConfig& cfg, int run) {
    const auto t0 = std::chrono::steady_clock::now();
    RunOutcome out;
    RunResult& r = out.result;
    r.run = run;
    r.seeds = derive_run_seeds(cfg.master_seed, static_cast<std::uint64_t>(run), cfg.fixed_split);

    SplitSpec spec = cfg.split;
    spec.seed = r.seeds.split;
    const Split parts = split(data, spec);
    const auto train_set = gather(data, parts.train);
    const auto test_set = gather(data, parts.test);
    r.train_size = train_set.size();
    r.test_size = test_set.size();

    Backbone backbone = build_backbone(cfg.arch, r.seeds.backbone);
    Generator generator =
        build_generator(data.num_classes, backbone.feature_width(), cfg.generator_base_channels, r.seeds.generator);
    LatentSeed z = sample_latent(r.seeds.latent);
    TrainConfig tc = cfg.train;
    tc.seed = r.seeds.train;
    r.history = train(train_set, backbone, generator, z, tc);

    std::optional<Tensor> projection;
    if (cfg.svm_input == SvmInput::embeddings)
        projection = generator_forward(generator, z, Mode::eval).detach();

    // from here on only the backbone and the SVM are used
    const auto forwards_before = generator_forward_count();
    const FeatureSet train_features = extract_features(backbone, projection, train_set);
    SvmModel svm = svm_train(train_features, cfg.svm, r.seeds.svm);
    out.model = {std::move(backbone), std::move(projection), std::move(svm)};

    r.confusion.assign(data.num_classes, std::vector<std::size_t>(data.num_classes, 0));
    for (const auto& s : test_set) ++r.confusion[s.label][classify(out.model, s)];
    r.accuracy = confusion_accuracy(r.confusion);
    r.eval_generator_forwards = generator_forward_count() - forwards_before;
    r.wallclock_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

namespace {

template <class E>
[[noreturn]] void rethrow_as(const E& e, int run) {
    throw E("run " + std::to_string(run) + ": " + e.what());
}

RunResult guarded_run(const Dataset& data, const ExperimentConfig& cfg, int run) {
    try {
        return run_once(data, cfg, run).result;
    } catch (const ConfigError& e) { rethrow_as(e, run); }
    catch (const DimensionError& e) { rethrow_as(e, run); }
    catch (const ContractError& e) { rethrow_as(e, run); }
    catch (const DataError& e) { rethrow_as(e, run); }
    catch (const IoError& e) { rethrow_as(e, run); }
    catch (const NumericError& e) { rethrow_as(e, run); }
}

}  // namespace

ExperimentReport run_experiment(const Dataset& data, const ExperimentConfig& cfg) {
    cfg.validate();
    data.validate();
    const auto t0 = std::chrono::steady_clock::now();
    ExperimentReport report;
    report.config = cfg;
    report.config_hash = config_hash(cfg);
    report.dataset = data.name;
    report.num_classes = data.num_classes;
    report.runs.resize(static_cast<std::size_t>(cfg.runs));

    if (cfg.jobs == 1) {
        for (int i = 0; i < cfg.runs; ++i) report.runs[i] = guarded_run(data, cfg, i);
    } else {
        // each run stays on one thread, so the thread-local generator counter is per run
        for (int first = 0; first < cfg.runs; first += cfg.jobs) {
            std::vector<std::future<RunResult>> pending;
            const int last = std::min(cfg.runs, first + cfg.jobs);
            for (int i = first; i < last; ++i)
                pending.push_back(std::async(std::launch::async, guarded_run, std::cref(data), std::cref(cfg), i));
            for (int i = first; i < last; ++i) report.runs[i] = pending[i - first].get();
        }
    }

    std::vector<double> acc;
    for (const auto& r : report.runs) acc.push_back(r.accuracy);
    report.accuracy = summarize(acc);
    report.wallclock_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

std::vector<double> MarginSearchConfig::margin_grid(double lo, double hi, double step) {
    if (!(step > 0.0) || !(hi >= lo) || !std::isfinite(lo) || !std::isfinite(hi))
        throw ConfigError("margin grid needs finite lo <= hi and step > 0");
    std::vector<double> grid;
    const auto n = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9));
    for (std::size_t i = 0; i <= n; ++i) grid.push_back(std::round((lo + double(i) * step) * 1e9) / 1e9);
    return grid;
}

void MarginSearchConfig::validate() const {
    if (margins.empty()) throw ConfigError("margin search: empty margin grid");
    for (double m : margins) MarginConfig{m}.validate();
    if (rounds < 1) throw ConfigError("margin search: rounds must be >= 1");
    if (epochs_per_round < 1) throw ConfigError("margin search: epochs_per_round must be >= 1");
}

MarginSearchResult margin_search(const Dataset& data, const ExperimentConfig& base,
                                 const MarginSearchConfig& search) {
    search.validate();
    const auto t0 = std::chrono::steady_clock::now();
    MarginSearchResult result;
    result.base = base;
    result.search = search;
    result.config_hash = config_hash(base, search);
    result.dataset = data.name;
    double best = -1;
    for (double m : search.margins) {
        ExperimentConfig cfg = base;
        cfg.train.margin.m = m;
        cfg.train.epochs = search.epochs_per_round;
        cfg.runs = search.rounds;
        const auto report = run_experiment(data, cfg);
        MarginRow row;
        row.margin = m;
        for (const auto& r : report.runs) row.accuracies.push_back(r.accuracy);
        row.accuracy = report.accuracy;
        if (row.accuracy.mean > best) {
            best = row.accuracy.mean;
            result.best_margin = m;
        }
        result.rows.push_back(std::move(row));
    }
    result.wallclock_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return result;
}

}  // namespace ddipnet
