#include "ddipnet/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <map>

#include "ddipnet/ops.hpp"

namespace ddipnet {

std::string to_string(Variant v) { return v == Variant::ddipnet ? "ddipnet" : "ddipnet+"; }

Variant parse_variant(const std::string& s) {
    if (s == "ddipnet") return Variant::ddipnet;
    if (s == "ddipnet+" || s == "ddipnet_plus") return Variant::ddipnet_plus;
    throw ConfigError("unknown variant '" + s + "' (expected ddipnet or ddipnet+)");
}

void AugmentationPolicy::validate() const {
    auto prob = [](double p, const char* name) {
        if (!(p >= 0.0 && p <= 1.0))
            throw ConfigError(std::string("augmentation: ") + name + " must be in [0,1]");
    };
    prob(horizontal_flip_prob, "horizontal_flip_prob");
    prob(vertical_flip_prob, "vertical_flip_prob");
    if (!(crop_area_lo > 0.0 && crop_area_lo <= crop_area_hi && crop_area_hi <= 1.0))
        throw ConfigError("augmentation: crop area range needs 0 < lo <= hi <= 1");
    if (rotation_choices.empty()) throw ConfigError("augmentation: rotation choices are empty");
    for (int r : rotation_choices)
        if (r % 90 != 0) throw ConfigError("augmentation: rotations must be multiples of 90 degrees");
}

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (!(lr_backbone >= 0.0) || !(lr_generator >= 0.0))
        throw ConfigError("train: learning rates must be non-negative");
    if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0))
        throw ConfigError("train: adam betas must be in [0,1)");
    if (!(adam.eps > 0.0)) throw ConfigError("train: adam eps must be positive");
    if (checkpoint_every < 0) throw ConfigError("train: checkpoint_every must be >= 0");
    if (checkpoint_every > 0 && checkpoint_dir.empty())
        throw ConfigError("train: checkpoint_every needs a checkpoint directory");
    margin.validate();
    augmentation.validate();
}

// ---------------------------------------------------------------------------
// triplets

namespace {

struct ClassIndex {
    std::map<int, std::vector<std::size_t>> members;
};

ClassIndex index_classes(std::span<const Sample> samples) {
    ClassIndex idx;
    for (std::size_t i = 0; i < samples.size(); ++i) idx.members[samples[i].label].push_back(i);
    if (idx.members.size() < 2) throw DataError("triplet sampling needs at least two classes");
    for (const auto& [label, members] : idx.members)
        if (members.size() < 2)
            throw DataError("triplet sampling: class " + std::to_string(label) +
                            " has a single sample");
    return idx;
}

TripletBatch draw_triplets(std::span<const Sample> samples, const ClassIndex& idx,
                           std::size_t batch_size, std::mt19937_64& rng) {
    TripletBatch batch;
    batch.reserve(batch_size);
    const std::size_t n = samples.size();
    std::uniform_int_distribution<std::size_t> pick_anchor(0, n - 1);
    for (std::size_t b = 0; b < batch_size; ++b) {
        Triplet t;
        t.anchor = pick_anchor(rng);
        const int label = samples[t.anchor].label;
        const auto& same = idx.members.at(label);
        // positive: same class, anchor excluded
        std::uniform_int_distribution<std::size_t> pick_pos(0, same.size() - 2);
        std::size_t k = pick_pos(rng);
        // same[] is sorted; skip over the anchor's slot
        const auto slot = static_cast<std::size_t>(
            std::lower_bound(same.begin(), same.end(), t.anchor) - same.begin());
        if (k >= slot) ++k;
        t.positive = same[k];
        // negative: uniform over samples of other classes
        std::uniform_int_distribution<std::size_t> pick_neg(0, n - same.size() - 1);
        std::size_t r = pick_neg(rng);
        for (const auto& [other, members] : idx.members) {
            if (other == label) continue;
            if (r < members.size()) {
                t.negative = members[r];
                break;
            }
            r -= members.size();
        }
        batch.push_back(t);
    }
    return batch;
}

}  // namespace

TripletBatch sample_triplets(std::span<const Sample> samples, std::size_t batch_size,
                             std::mt19937_64& rng) {
    return draw_triplets(samples, index_classes(samples), batch_size, rng);
}

// ---------------------------------------------------------------------------
// augmentation

Tensor resize_bilinear(const Tensor& image, std::size_t side) {
    if (image.rank() != 3) throw DimensionError("resize: expected C x H x W, got " + shape_str(image.shape()));
    const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
    if (h == side && w == side) return image.detach();
    std::vector<float> out(c * side * side);
    auto X = image.data();
    const double sy = double(h) / double(side), sx = double(w) / double(side);
    for (std::size_t y = 0; y < side; ++y) {
        double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, double(h - 1));
        const auto y0 = static_cast<std::size_t>(fy);
        const auto y1 = std::min(y0 + 1, h - 1);
        const double ay = fy - double(y0);
        for (std::size_t x = 0; x < side; ++x) {
            double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, double(w - 1));
            const auto x0 = static_cast<std::size_t>(fx);
            const auto x1 = std::min(x0 + 1, w - 1);
            const double ax = fx - double(x0);
            for (std::size_t ch = 0; ch < c; ++ch) {
                const float* p = &X[ch * h * w];
                const double top = (1 - ax) * p[y0 * w + x0] + ax * p[y0 * w + x1];
                const double bot = (1 - ax) * p[y1 * w + x0] + ax * p[y1 * w + x1];
                out[(ch * side + y) * side + x] = static_cast<float>((1 - ay) * top + ay * bot);
            }
        }
    }
    return Tensor::from_data({c, side, side}, std::move(out));
}

namespace {

std::vector<float> crop(std::span<const float> x, std::size_t c, std::size_t side, std::size_t y0,
                        std::size_t x0, std::size_t cs) {
    std::vector<float> out(c * cs * cs);
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < cs; ++y)
            for (std::size_t xx = 0; xx < cs; ++xx)
                out[(ch * cs + y) * cs + xx] = x[(ch * side + y0 + y) * side + x0 + xx];
    return out;
}

// Quarter turns counter-clockwise.
std::vector<float> rotate(const std::vector<float>& x, std::size_t c, std::size_t side, int turns) {
    turns = ((turns % 4) + 4) % 4;
    if (turns == 0) return x;
    std::vector<float> out(x.size());
    const std::size_t m = side - 1;
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < side; ++y)
            for (std::size_t xx = 0; xx < side; ++xx) {
                std::size_t sy = y, sx = xx;
                switch (turns) {
                    case 1: sy = xx; sx = m - y; break;
                    case 2: sy = m - y; sx = m - xx; break;
                    case 3: sy = m - xx; sx = y; break;
                }
                out[(ch * side + y) * side + xx] = x[(ch * side + sy) * side + sx];
            }
    return out;
}

}  // namespace

Sample augment(const Sample& sample, const AugmentationPolicy& policy, std::mt19937_64& rng) {
    if (sample.input.rank() != 3) return {sample.input.detach(), sample.label};
    const std::size_t c = sample.input.dim(0), side = sample.input.dim(1);
    if (sample.input.dim(2) != side) throw DimensionError("augment: image must be square");

    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double area = policy.crop_area_lo + (policy.crop_area_hi - policy.crop_area_lo) * unit(rng);
    auto cs = static_cast<std::size_t>(std::lround(double(side) * std::sqrt(area)));
    cs = std::clamp<std::size_t>(cs, 1, side);
    std::uniform_int_distribution<std::size_t> off(0, side - cs);
    const std::size_t y0 = off(rng), x0 = off(rng);
    const bool hflip = unit(rng) < policy.horizontal_flip_prob;
    const bool vflip = unit(rng) < policy.vertical_flip_prob;
    std::uniform_int_distribution<std::size_t> rot(0, policy.rotation_choices.size() - 1);
    const int turns = policy.rotation_choices[rot(rng)] / 90;

    std::vector<float> img;
    if (cs == side) {
        img.assign(sample.input.data().begin(), sample.input.data().end());
    } else {
        auto patch = Tensor::from_data({c, cs, cs}, crop(sample.input.data(), c, side, y0, x0, cs));
        auto resized = resize_bilinear(patch, side);
        img.assign(resized.data().begin(), resized.data().end());
    }
    if (hflip)
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t y = 0; y < side; ++y) {
                float* row = &img[(ch * side + y) * side];
                std::reverse(row, row + side);
            }
    if (vflip)
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t y = 0; y < side / 2; ++y)
                std::swap_ranges(&img[(ch * side + y) * side], &img[(ch * side + y) * side] + side,
                                 &img[(ch * side + side - 1 - y) * side]);
    img = rotate(img, c, side, turns);
    return {Tensor::from_data({c, side, side}, std::move(img)), sample.label};
}

// ---------------------------------------------------------------------------
// Adam

void adam_step(ParamSet& params, AdamState& state, double lr, const AdamConfig& cfg) {
    if (state.m.empty()) {
        for (const auto& e : params) {
            state.m.emplace_back(e.tensor.numel(), 0.0f);
            state.v.emplace_back(e.tensor.numel(), 0.0f);
        }
    }
    if (state.m.size() != params.size()) throw ContractError("adam: state does not match parameter set");
    const std::uint64_t step = state.step + 1;
    for (std::size_t p = 0; p < params.size(); ++p) {
        const auto& e = params[p];
        if (state.m[p].size() != e.tensor.numel())
            throw ContractError("adam: moment buffer shape differs for '" + e.name + "'");
        if (e.tensor.has_grad())
            for (float g : e.tensor.grad())
                if (!std::isfinite(g))
                    throw NumericError("adam: non-finite gradient at step " + std::to_string(step) +
                                       " in parameter '" + e.name + "'");
    }
    const double c1 = 1.0 - std::pow(cfg.beta1, double(step));
    const double c2 = 1.0 - std::pow(cfg.beta2, double(step));
    for (std::size_t p = 0; p < params.size(); ++p) {
        auto& t = params[p].tensor;
        const bool has = t.has_grad();
        auto grad = t.grad();
        auto data = t.mutable_data();
        auto& m = state.m[p];
        auto& v = state.v[p];
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double g = has ? double(grad[i]) : 0.0;
            const double mi = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            const double vi = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            m[i] = static_cast<float>(mi);
            v[i] = static_cast<float>(vi);
            const double update = lr * (mi / c1) / (std::sqrt(vi / c2) + cfg.eps);
            data[i] = static_cast<float>(double(data[i]) - update);
        }
    }
    state.step = step;
}

// ---------------------------------------------------------------------------
// training loop

TrainHistory train(std::span<const Sample> samples, Backbone& backbone, Generator& generator,
                   LatentSeed& z, const TrainConfig& cfg) {
    cfg.validate();
    if (samples.empty()) throw DataError("train: empty dataset");
    const std::size_t f = backbone.feature_width();
    if (generator.cfg.feature_width != f)
        throw DimensionError("train: backbone feature width " + std::to_string(f) +
                             " does not match generator row count " +
                             std::to_string(generator.cfg.feature_width));
    const ClassIndex idx = index_classes(samples);
    if (generator.cfg.classes != idx.members.size())
        throw DimensionError("train: generator has " + std::to_string(generator.cfg.classes) +
                             " columns but the dataset has " + std::to_string(idx.members.size()) +
                             " classes");
    if (z.values.shape() != Shape{1, kLatentDim}) throw DimensionError("train: Z must be [1x100]");

    z.frozen = true;
    const Tensor z_snapshot = z.values.detach();

    std::mt19937_64 rng(cfg.seed);
    AdamState adam_backbone, adam_generator;
    const std::size_t bsz = static_cast<std::size_t>(cfg.batch_size);
    TrainHistory history;
    history.batches_per_epoch = std::max<std::size_t>(1, (samples.size() + bsz - 1) / bsz);
    const bool plus = cfg.variant == Variant::ddipnet_plus;

    auto input_of = [&](std::size_t i, bool augmented) {
        if (plus && augmented) return augment(samples[i], cfg.augmentation, rng).input;
        return samples[i].input;
    };

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        double loss_acc = 0, d1_acc = 0, d2_acc = 0;
        for (std::size_t b = 0; b < history.batches_per_epoch; ++b) {
            const auto batch = draw_triplets(samples, idx, bsz, rng);
            const LatentSeed batch_z = cfg.resample_latent ? sample_latent(rng()) : z;
            const Tensor s = generator_forward(generator, batch_z, Mode::train);

            Tensor total;
            double d1_sum = 0, d2_sum = 0;
            const bool aug_rest = cfg.augment_members == AugmentMembers::all;
            for (const auto& t : batch) {
                const auto fa = backbone_forward(backbone, input_of(t.anchor, true), Mode::train);
                const auto fn = backbone_forward(backbone, input_of(t.negative, aug_rest), Mode::train);
                const auto fp = backbone_forward(backbone, input_of(t.positive, aug_rest), Mode::train);
                const auto out = triplet_forward(fa, fn, fp, s, cfg.margin);
                total = total.defined() ? add(total, out.loss) : out.loss;
                d1_sum += out.d1.item();
                d2_sum += out.d2.item();
            }
            const Tensor mean_loss = scale(total, 1.0f / static_cast<float>(batch.size()));
            if (!mean_loss.all_finite())
                throw NumericError("train: non-finite loss in epoch " + std::to_string(epoch) +
                                   ", batch " + std::to_string(b));
            backbone.params.zero_grad();
            generator.params.zero_grad();
            if (mean_loss.requires_grad()) mean_loss.backward();
            adam_step(backbone.params, adam_backbone, cfg.lr_backbone, cfg.adam);
            adam_step(generator.params, adam_generator, cfg.lr_generator, cfg.adam);

            loss_acc += mean_loss.item();
            d1_acc += d1_sum / double(batch.size());
            d2_acc += d2_sum / double(batch.size());
        }
        const double nb = double(history.batches_per_epoch);
        EpochRecord rec;
        rec.epoch = epoch;
        rec.mean_loss = loss_acc / nb;
        rec.mean_d1 = d1_acc / nb;
        rec.mean_d2 = d2_acc / nb;
        rec.wallclock_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        history.epochs.push_back(rec);

        if (cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0)
            save_model(cfg.checkpoint_dir / ("epoch_" + std::to_string(epoch)), backbone, generator, z);
    }

    auto now = z.values.data();
    auto was = z_snapshot.data();
    if (!std::equal(now.begin(), now.end(), was.begin()))
        throw ContractError("train: latent seed Z changed during training");
    backbone.params.zero_grad();
    generator.params.zero_grad();
    return history;
}

void write_history_csv(const std::filesystem::path& path, const TrainHistory& history,
                       bool include_wallclock) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << "epoch,mean_loss,mean_d1,mean_d2";
    if (include_wallclock) out << ",wallclock_ms";
    out << '\n';
    out.precision(9);
    for (const auto& r : history.epochs) {
        out << r.epoch << ',' << r.mean_loss << ',' << r.mean_d1 << ',' << r.mean_d2;
        if (include_wallclock) out << ',' << r.wallclock_ms;
        out << '\n';
    }
    if (!out) throw IoError("short write on " + path.string());
}

void save_model(const std::filesystem::path& dir, const Backbone& backbone,
                const Generator& generator, const LatentSeed& z) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    save_backbone(dir / "backbone.manifest", backbone);
    save_generator(dir / "generator.manifest", generator, z);
}

}  // namespace ddipnet
