#include "ddipnet/linear_svm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>
#include <string>

#include "ddipnet/checkpoint.hpp"
#include "ddipnet/errors.hpp"

namespace ddipnet {

void SvmConfig::validate() const {
    if (!(C > 0.0) || !std::isfinite(C)) throw ConfigError("svm: C must be positive");
    if (!(tolerance > 0.0)) throw ConfigError("svm: tolerance must be positive");
    if (max_iterations < 1) throw ConfigError("svm: max_iterations must be >= 1");
}

void FeatureSet::add(std::span<const float> x, int label) {
    if (labels.empty() && values.empty() && dim == 0) dim = x.size();
    if (x.size() != dim)
        throw DimensionError("feature set: row of width " + std::to_string(x.size()) +
                             " added to a set of width " + std::to_string(dim));
    values.insert(values.end(), x.begin(), x.end());
    labels.push_back(label);
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double dot_aug(const std::vector<double>& w, std::span<const float> x) {
    double s = w.back();  // bias feature is 1
    for (std::size_t j = 0; j < x.size(); ++j) s += w[j] * x[j];
    return s;
}

void axpy_aug(double a, std::span<const float> x, std::vector<double>& w) {
    for (std::size_t j = 0; j < x.size(); ++j) w[j] += a * x[j];
    w.back() += a;
}

// Dual coordinate descent for one binary L2-loss problem, with liblinear's
// shrinking heuristic. y[i] is +1 / -1. Returns w of length dim + 1.
std::vector<double> solve_binary(const FeatureSet& data, const std::vector<signed char>& y,
                                 const SvmConfig& cfg, std::mt19937_64& rng,
                                 std::vector<double>* objective_log, int* iterations_out) {
    const std::size_t n = data.size();
    const std::size_t d = data.dim;
    const double diag = 0.5 / cfg.C;
    std::vector<double> w(d + 1, 0.0);
    std::vector<double> alpha(n, 0.0);
    std::vector<double> qd(n);
    std::vector<std::size_t> index(n);
    for (std::size_t i = 0; i < n; ++i) {
        double sq = 1.0;  // bias feature
        for (float v : data.row(i)) sq += double(v) * double(v);
        qd[i] = diag + sq;
        index[i] = i;
    }

    auto dual_objective = [&] {
        double v = 0;
        for (double x : w) v += x * x;
        for (std::size_t i = 0; i < n; ++i) v += alpha[i] * (alpha[i] * diag - 2.0);
        return v / 2.0;
    };

    std::size_t active = n;
    double pg_max_old = kInf;
    int iter = 0;
    while (iter < cfg.max_iterations) {
        double pg_max_new = -kInf, pg_min_new = kInf;
        for (std::size_t i = 0; i < active; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, active - 1);
            std::swap(index[i], index[pick(rng)]);
        }
        for (std::size_t s = 0; s < active; ++s) {
            const std::size_t i = index[s];
            const auto xi = data.row(i);
            double g = y[i] * dot_aug(w, xi) - 1.0 + alpha[i] * diag;
            double pg = 0.0;
            if (alpha[i] == 0.0) {
                if (g > pg_max_old) {
                    --active;
                    std::swap(index[s], index[active]);
                    --s;
                    continue;
                }
                if (g < 0.0) pg = g;
            } else {
                pg = g;  // no upper bound for the L2 loss
            }
            pg_max_new = std::max(pg_max_new, pg);
            pg_min_new = std::min(pg_min_new, pg);
            if (std::fabs(pg) > 1.0e-12) {
                const double old = alpha[i];
                alpha[i] = std::max(alpha[i] - g / qd[i], 0.0);
                axpy_aug((alpha[i] - old) * y[i], xi, w);
            }
        }
        ++iter;
        if (objective_log) objective_log->push_back(dual_objective());

        if (pg_max_new - pg_min_new <= cfg.tolerance) {
            if (active == n) break;
            active = n;
            pg_max_old = kInf;
            continue;
        }
        pg_max_old = pg_max_new <= 0.0 ? kInf : pg_max_new;
    }
    if (iterations_out) *iterations_out = iter;
    return w;
}

}  // namespace

SvmModel svm_train(const FeatureSet& data, const SvmConfig& cfg, std::uint64_t seed, SvmTrace* trace) {
    cfg.validate();
    if (data.values.size() != data.size() * data.dim)
        throw DimensionError("svm: feature matrix is ragged");
    for (std::size_t i = 0; i < data.values.size(); ++i)
        if (!std::isfinite(data.values[i]))
            throw DataError("svm: non-finite feature in row " + std::to_string(i / data.dim));

    SvmModel model;
    model.dim = data.dim;
    model.config = cfg;
    model.class_labels = data.labels;
    std::sort(model.class_labels.begin(), model.class_labels.end());
    model.class_labels.erase(std::unique(model.class_labels.begin(), model.class_labels.end()),
                             model.class_labels.end());
    if (model.class_labels.size() < 2)
        throw DataError("svm: training data must contain at least two classes");

    const std::size_t c = model.class_labels.size();
    model.weights.assign(c * (data.dim + 1), 0.0f);
    if (trace) {
        trace->dual_objective.assign(c, {});
        trace->iterations.assign(c, 0);
    }
    std::vector<signed char> y(data.size());
    for (std::size_t k = 0; k < c; ++k) {
        for (std::size_t i = 0; i < data.size(); ++i)
            y[i] = data.labels[i] == model.class_labels[k] ? 1 : -1;
        std::seed_seq sseq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                           static_cast<std::uint32_t>(k)};
        std::mt19937_64 rng(sseq);
        int iters = 0;
        const auto w = solve_binary(data, y, cfg, rng, trace ? &trace->dual_objective[k] : nullptr, &iters);
        if (trace) trace->iterations[k] = iters;
        std::transform(w.begin(), w.end(), model.weights.begin() + k * (data.dim + 1),
                       [](double v) { return static_cast<float>(v); });
    }
    return model;
}

SvmPrediction svm_predict(const SvmModel& model, std::span<const float> feature) {
    if (feature.size() != model.dim)
        throw DimensionError("svm: feature width " + std::to_string(feature.size()) +
                             " does not match model width " + std::to_string(model.dim));
    SvmPrediction p;
    p.scores.resize(model.num_classes());
    std::size_t best = 0;
    for (std::size_t k = 0; k < model.num_classes(); ++k) {
        const auto w = model.row(k);
        double s = w[model.dim];
        for (std::size_t j = 0; j < model.dim; ++j) s += double(w[j]) * double(feature[j]);
        p.scores[k] = s;
        if (s > p.scores[best]) best = k;
    }
    p.label = model.class_labels[best];
    return p;
}

double svm_binary_objective(const SvmModel& model, std::size_t k, const FeatureSet& data, double C) {
    if (data.dim != model.dim) throw DimensionError("svm objective: feature width mismatch");
    const auto w = model.row(k);
    double reg = 0;
    for (float v : w) reg += double(v) * double(v);
    double loss = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto x = data.row(i);
        double s = w[model.dim];
        for (std::size_t j = 0; j < model.dim; ++j) s += double(w[j]) * double(x[j]);
        const double y = data.labels[i] == model.class_labels[k] ? 1.0 : -1.0;
        const double margin = std::max(0.0, 1.0 - y * s);
        loss += margin * margin;
    }
    return 0.5 * reg + C * loss;
}

double svm_objective(const SvmModel& model, const FeatureSet& data, const SvmConfig& cfg) {
    double total = 0;
    for (std::size_t k = 0; k < model.num_classes(); ++k)
        total += svm_binary_objective(model, k, data, cfg.C);
    return total;
}

void save_svm(const std::filesystem::path& manifest, const SvmModel& model) {
    Checkpoint ckpt;
    ckpt.meta["svm.c"] = std::to_string(model.num_classes());
    ckpt.meta["svm.f"] = std::to_string(model.dim);
    std::ostringstream os;
    os.precision(17);
    os << model.config.C;
    ckpt.meta["svm.C"] = os.str();
    os.str("");
    os << model.config.tolerance;
    ckpt.meta["svm.tolerance"] = os.str();
    ckpt.meta["svm.max_iterations"] = std::to_string(model.config.max_iterations);
    std::string labels;
    for (std::size_t k = 0; k < model.class_labels.size(); ++k) {
        if (k) labels += ',';
        labels += std::to_string(model.class_labels[k]);
    }
    ckpt.meta["svm.labels"] = labels;
    ckpt.tensors.add("svm.weights",
                     Tensor::from_data({model.num_classes(), model.dim + 1}, model.weights));
    write_checkpoint(manifest, ckpt);
}

SvmModel load_svm(const std::filesystem::path& manifest) {
    const auto ckpt = read_checkpoint(manifest);
    auto meta = [&](const std::string& key) -> const std::string& {
        auto it = ckpt.meta.find(key);
        if (it == ckpt.meta.end()) throw DataError(manifest.string() + ": missing meta '" + key + "'");
        return it->second;
    };
    SvmModel m;
    try {
        m.dim = std::stoul(meta("svm.f"));
        m.config.C = std::stod(meta("svm.C"));
        m.config.tolerance = std::stod(meta("svm.tolerance"));
        m.config.max_iterations = std::stoi(meta("svm.max_iterations"));
        std::stringstream ss(meta("svm.labels"));
        std::string tok;
        while (std::getline(ss, tok, ',')) m.class_labels.push_back(std::stoi(tok));
        if (std::stoul(meta("svm.c")) != m.class_labels.size())
            throw DataError("class count does not match label list");
    } catch (const std::logic_error&) {
        throw DataError(manifest.string() + ": malformed svm header");
    }
    const auto& w = ckpt.tensors.at("svm.weights");
    if (w.shape() != Shape{m.class_labels.size(), m.dim + 1})
        throw DataError(manifest.string() + ": weight shape " + shape_str(w.shape()) +
                        " does not match header");
    m.weights.assign(w.data().begin(), w.data().end());
    return m;
}

}  // namespace ddipnet
