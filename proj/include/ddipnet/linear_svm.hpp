#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace ddipnet {

/// liblinear defaults for L2-regularized L2-loss SVC solved in the dual.
struct SvmConfig {
    double C = 1.0;
    double tolerance = 0.1;
    int max_iterations = 1000;

    void validate() const;
    bool operator==(const SvmConfig&) const = default;
};

/// Dense row-major feature matrix with one integer label per row.
struct FeatureSet {
    std::size_t dim = 0;
    std::vector<float> values;
    std::vector<int> labels;

    std::size_t size() const { return labels.size(); }
    std::span<const float> row(std::size_t i) const { return {values.data() + i * dim, dim}; }
    void add(std::span<const float> x, int label);
};

/// One-vs-rest linear model. Row k of `weights` holds the hyperplane for
/// class_labels[k] followed by its bias (the weight of a constant-1 feature).
struct SvmModel {
    std::vector<int> class_labels;
    std::size_t dim = 0;
    std::vector<float> weights;  // num_classes x (dim + 1)
    SvmConfig config;

    std::size_t num_classes() const { return class_labels.size(); }
    std::span<const float> row(std::size_t k) const {
        return {weights.data() + k * (dim + 1), dim + 1};
    }
};

/// Per-class solver log.
struct SvmTrace {
    std::vector<std::vector<double>> dual_objective;  // one entry per outer iteration
    std::vector<int> iterations;
};

/// Throws DataError with fewer than two classes or a non-finite feature.
SvmModel svm_train(const FeatureSet& data, const SvmConfig& cfg, std::uint64_t seed,
                   SvmTrace* trace = nullptr);

struct SvmPrediction {
    int label = 0;
    std::vector<double> scores;  // per class, in class_labels order
};

/// Argmax of the one-vs-rest decision values; ties go to the lowest class index.
SvmPrediction svm_predict(const SvmModel& model, std::span<const float> feature);

/// Primal objective 0.5 |w|^2 + C sum max(0, 1 - y w.x)^2 of one binary
/// subproblem (class k against the rest); the bias is regularized as in
/// liblinear.
double svm_binary_objective(const SvmModel& model, std::size_t k, const FeatureSet& data, double C);

/// Sum of the binary objectives over all classes.
double svm_objective(const SvmModel& model, const FeatureSet& data, const SvmConfig& cfg);

/// Manifest + blob in the common checkpoint format.
void save_svm(const std::filesystem::path& manifest, const SvmModel& model);
SvmModel load_svm(const std::filesystem::path& manifest);

}  // namespace ddipnet
