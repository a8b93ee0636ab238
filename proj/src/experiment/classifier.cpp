#include "ddipnet/classifier.hpp"

#include "ddipnet/checkpoint.hpp"
#include "ddipnet/metric_head.hpp"
#include "ddipnet/ops.hpp"

namespace ddipnet {

namespace fs = std::filesystem;

std::string to_string(SvmInput v) { return v == SvmInput::features ? "features" : "embeddings"; }

SvmInput parse_svm_input(const std::string& s) {
    if (s == "features") return SvmInput::features;
    if (s == "embeddings") return SvmInput::embeddings;
    throw ConfigError("unknown svm input '" + s + "' (expected features or embeddings)");
}

std::vector<float> classifier_input(const Backbone& backbone, const std::optional<Tensor>& projection,
                                    const Sample& sample) {
    Tensor f = backbone_forward(backbone, sample.input, Mode::eval);
    if (projection) f = squash(project(f, *projection));
    return {f.data().begin(), f.data().end()};
}

FeatureSet extract_features(const Backbone& backbone, const std::optional<Tensor>& projection,
                            std::span<const Sample> samples) {
    FeatureSet set;
    set.dim = projection ? projection->dim(1) : backbone.feature_width();
    for (const auto& s : samples) set.add(classifier_input(backbone, projection, s), s.label);
    return set;
}

int classify(const Classifier& model, const Sample& sample) {
    return svm_predict(model.svm, classifier_input(model.backbone, model.projection, sample)).label;
}

void save_classifier(const fs::path& dir, const Classifier& model) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    save_backbone(dir / "backbone.manifest", model.backbone);
    save_svm(dir / "svm.manifest", model.svm);
    if (model.projection) {
        Checkpoint ckpt;
        ckpt.tensors.add("projection", model.projection->detach());
        write_checkpoint(dir / "projection.manifest", ckpt);
    } else {
        fs::remove(dir / "projection.manifest", ec);
        fs::remove(dir / "projection.bin", ec);
    }
}

Classifier load_classifier(const fs::path& dir) {
    Classifier model;
    model.backbone = load_backbone(dir / "backbone.manifest");
    model.svm = load_svm(dir / "svm.manifest");
    if (fs::exists(dir / "projection.manifest")) {
        auto ckpt = read_checkpoint(dir / "projection.manifest");
        if (!ckpt.tensors.contains("projection"))
            throw DataError((dir / "projection.manifest").string() + ": missing tensor 'projection'");
        model.projection = ckpt.tensors.at("projection").detach();
    }
    const std::size_t width = model.projection ? model.projection->dim(1) : model.backbone.feature_width();
    if (model.projection && model.projection->dim(0) != model.backbone.feature_width())
        throw DataError(dir.string() + ": projection rows do not match the backbone width");
    if (model.svm.dim != width)
        throw DataError(dir.string() + ": svm width " + std::to_string(model.svm.dim) +
                        " does not match classifier input width " + std::to_string(width));
    return model;
}

}  // namespace ddipnet
