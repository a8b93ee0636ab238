#include "ddipnet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <set>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace ddipnet {

namespace fs = std::filesystem;

std::vector<std::size_t> Dataset::class_counts() const {
    std::vector<std::size_t> counts(num_classes, 0);
    for (const auto& s : samples)
        if (s.label >= 0 && static_cast<std::size_t>(s.label) < num_classes) ++counts[s.label];
    return counts;
}

void Dataset::validate() const {
    if (num_classes < 2) throw DataError("dataset '" + name + "': need at least two classes");
    for (std::size_t i = 0; i < samples.size(); ++i)
        if (samples[i].label < 0 || static_cast<std::size_t>(samples[i].label) >= num_classes)
            throw DataError("dataset '" + name + "': sample " + std::to_string(i) + " has label " +
                            std::to_string(samples[i].label) + " outside [0," +
                            std::to_string(num_classes) + ")");
    const auto counts = class_counts();
    for (std::size_t k = 0; k < counts.size(); ++k)
        if (counts[k] < 2)
            throw DataError("dataset '" + name + "': class " + std::to_string(k) + " (" +
                            (k < class_names.size() ? class_names[k] : "?") + ") has " +
                            std::to_string(counts[k]) + " samples, need at least 2");
}

namespace {

Tensor decode_image(const fs::path& file, std::size_t side) {
    cv::Mat img = cv::imread(file.string(), cv::IMREAD_COLOR);
    if (img.empty()) throw DataError("cannot decode image " + file.string());
    cv::cvtColor(img, img, cv::COLOR_BGR2RGB);
    if (img.rows != static_cast<int>(side) || img.cols != static_cast<int>(side))
        cv::resize(img, img, cv::Size(static_cast<int>(side), static_cast<int>(side)), 0, 0,
                   cv::INTER_LINEAR);
    std::vector<float> chw(3 * side * side);
    for (std::size_t y = 0; y < side; ++y) {
        const auto* row = img.ptr<cv::Vec3b>(static_cast<int>(y));
        for (std::size_t x = 0; x < side; ++x)
            for (std::size_t ch = 0; ch < 3; ++ch)
                chw[(ch * side + y) * side + x] = static_cast<float>(row[x][ch]) / 255.0f;
    }
    return Tensor::from_data({3, side, side}, std::move(chw));
}

bool hidden(const fs::path& p) { return p.filename().string().starts_with("."); }

Dataset load_image_tree(const fs::path& root, std::size_t side) {
    std::vector<fs::path> class_dirs;
    for (const auto& e : fs::directory_iterator(root))
        if (e.is_directory() && !hidden(e.path())) class_dirs.push_back(e.path());
    std::sort(class_dirs.begin(), class_dirs.end());
    if (class_dirs.empty()) throw DataError(root.string() + ": no class directories");

    Dataset data;
    data.name = root.filename().string();
    if (data.name.empty()) data.name = root.parent_path().filename().string();
    data.num_classes = class_dirs.size();
    for (std::size_t k = 0; k < class_dirs.size(); ++k) {
        data.class_names.push_back(class_dirs[k].filename().string());
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(class_dirs[k]))
            if (e.is_regular_file() && !hidden(e.path())) files.push_back(e.path());
        std::sort(files.begin(), files.end());
        if (files.empty()) throw DataError("empty class directory " + class_dirs[k].string());
        for (const auto& f : files) data.samples.push_back({decode_image(f, side), static_cast<int>(k)});
    }
    return data;
}

Dataset load_feature_file(const fs::path& file) {
    Dataset data;
    data.name = file.stem().string();
    data.samples = ingest_features(file);
    std::set<int> labels;
    for (const auto& s : data.samples) labels.insert(s.label);
    // labels must already be the dense range 0..c-1
    data.num_classes = static_cast<std::size_t>(*labels.rbegin()) + 1;
    if (labels.size() != data.num_classes)
        throw DataError(file.string() + ": labels must cover 0.." + std::to_string(data.num_classes - 1) +
                        " without gaps");
    for (std::size_t k = 0; k < data.num_classes; ++k) data.class_names.push_back("class" + std::to_string(k));
    return data;
}

}  // namespace

Dataset load_dataset(const fs::path& path, std::size_t image_side) {
    std::error_code ec;
    if (!fs::exists(path, ec)) throw DataError("dataset path does not exist: " + path.string());
    Dataset data = fs::is_directory(path) ? load_image_tree(path, image_side) : load_feature_file(path);
    data.validate();
    return data;
}

Dataset synth_dataset(std::size_t classes, std::size_t per_class, std::size_t side, std::uint64_t seed) {
    if (classes < 2) throw ConfigError("synth: need at least 2 classes");
    if (per_class < 4) throw ConfigError("synth: need at least 4 images per class");
    if (side < 8) throw ConfigError("synth: image side must be >= 8");

    std::mt19937_64 rng(seed);
    std::normal_distribution<float> noise(0.0f, 0.08f);
    std::uniform_real_distribution<double> jitter(-1.0, 1.0);

    Dataset data;
    data.name = "synthetic";
    data.num_classes = classes;
    const double half = 0.5 * double(side);
    const double radius = double(side) / 5.0;
    for (std::size_t k = 0; k < classes; ++k) {
        data.class_names.push_back("class" + std::to_string(k));
        // hue spread evenly around the colour wheel, blob centres around a ring
        const double angle = 2.0 * std::numbers::pi * double(k) / double(classes);
        float rgb[3];
        for (int ch = 0; ch < 3; ++ch)
            rgb[ch] = static_cast<float>(0.5 + 0.45 * std::cos(angle - 2.0 * std::numbers::pi * ch / 3.0));
        const double cy = half + 0.25 * double(side) * std::sin(angle);
        const double cx = half + 0.25 * double(side) * std::cos(angle);
        for (std::size_t n = 0; n < per_class; ++n) {
            const double jy = cy + jitter(rng) * double(side) / 16.0;
            const double jx = cx + jitter(rng) * double(side) / 16.0;
            std::vector<float> img(3 * side * side);
            for (std::size_t y = 0; y < side; ++y)
                for (std::size_t x = 0; x < side; ++x) {
                    const double dy = double(y) + 0.5 - jy, dx = double(x) + 0.5 - jx;
                    const bool inside = dy * dy + dx * dx <= radius * radius;
                    for (std::size_t ch = 0; ch < 3; ++ch) {
                        const float base = inside ? rgb[ch] : 0.5f;
                        img[(ch * side + y) * side + x] = std::clamp(base + noise(rng), 0.0f, 1.0f);
                    }
                }
            data.samples.push_back({Tensor::from_data({3, side, side}, std::move(img)), static_cast<int>(k)});
        }
    }
    return data;
}

void write_image_dataset(const fs::path& root, const Dataset& data) {
    std::error_code ec;
    std::vector<std::size_t> next(data.num_classes, 0);
    for (const auto& s : data.samples) {
        if (s.input.rank() != 3 || s.input.dim(0) != 3)
            throw DataError("write_image_dataset: only RGB image samples can be written");
        const std::size_t h = s.input.dim(1), w = s.input.dim(2);
        const auto dir = root / data.class_names.at(static_cast<std::size_t>(s.label));
        fs::create_directories(dir, ec);
        if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
        cv::Mat img(static_cast<int>(h), static_cast<int>(w), CV_8UC3);
        auto x = s.input.data();
        for (std::size_t yy = 0; yy < h; ++yy)
            for (std::size_t xx = 0; xx < w; ++xx)
                for (std::size_t ch = 0; ch < 3; ++ch) {
                    const float v = std::clamp(x[(ch * h + yy) * w + xx], 0.0f, 1.0f);
                    // OpenCV stores BGR
                    img.at<cv::Vec3b>(static_cast<int>(yy), static_cast<int>(xx))[2 - ch] =
                        static_cast<unsigned char>(std::lround(v * 255.0f));
                }
        char name[32];
        std::snprintf(name, sizeof name, "%05zu.png", next[s.label]++);
        if (!cv::imwrite((dir / name).string(), img)) throw IoError("cannot write " + (dir / name).string());
    }
}

void SplitSpec::validate() const {
    if (!(train_ratio > 0.0 && train_ratio < 1.0)) throw ConfigError("split: train_ratio must be in (0,1)");
    if (!stratified) throw ConfigError("split: only stratified splits are supported");
}

std::size_t stratified_train_count(std::size_t class_size, double ratio) {
    if (class_size < 2) throw DataError("split: a class needs at least 2 samples");
    const auto n = static_cast<std::size_t>(std::floor(ratio * double(class_size) + 0.5));
    return std::clamp<std::size_t>(n, 1, class_size - 1);
}

Split split(const Dataset& data, const SplitSpec& spec) {
    spec.validate();
    data.validate();
    std::vector<std::vector<std::size_t>> members(data.num_classes);
    for (std::size_t i = 0; i < data.samples.size(); ++i) members[data.samples[i].label].push_back(i);
    std::mt19937_64 rng(spec.seed);
    Split out;
    for (auto& m : members) {
        for (std::size_t i = m.size() - 1; i > 0; --i) {
            std::uniform_int_distribution<std::size_t> pick(0, i);
            std::swap(m[i], m[pick(rng)]);
        }
        const auto n = stratified_train_count(m.size(), spec.train_ratio);
        out.train.insert(out.train.end(), m.begin(), m.begin() + static_cast<std::ptrdiff_t>(n));
        out.test.insert(out.test.end(), m.begin() + static_cast<std::ptrdiff_t>(n), m.end());
    }
    std::sort(out.train.begin(), out.train.end());
    std::sort(out.test.begin(), out.test.end());
    return out;
}

std::vector<Sample> gather(const Dataset& data, const std::vector<std::size_t>& indices) {
    std::vector<Sample> out;
    out.reserve(indices.size());
    for (auto i : indices) out.push_back(data.samples.at(i));
    return out;
}

}  // namespace ddipnet
