#pragma once

#include <filesystem>
#include <optional>
#include <span>

#include "ddipnet/backbone.hpp"
#include "ddipnet/linear_svm.hpp"

namespace ddipnet {

/// What the SVM sees: raw backbone features, or squashed projections Q(F . S)
/// through a discriminant matrix captured once after training.
enum class SvmInput { features, embeddings };

std::string to_string(SvmInput v);
SvmInput parse_svm_input(const std::string& s);

/// Inference model: backbone plus linear SVM. It holds no generator; in
/// embedding mode it carries a frozen copy of S instead.
struct Classifier {
    Backbone backbone;
    std::optional<Tensor> projection;  // [f x c], embedding mode only
    SvmModel svm;
};

/// Eval-mode SVM input for one sample, as a flat row.
std::vector<float> classifier_input(const Backbone& backbone, const std::optional<Tensor>& projection,
                                    const Sample& sample);

FeatureSet extract_features(const Backbone& backbone, const std::optional<Tensor>& projection,
                            std::span<const Sample> samples);

int classify(const Classifier& model, const Sample& sample);

/// Directory with backbone.manifest, svm.manifest and, in embedding mode,
/// projection.manifest.
void save_classifier(const std::filesystem::path& dir, const Classifier& model);
Classifier load_classifier(const std::filesystem::path& dir);

}  // namespace ddipnet
