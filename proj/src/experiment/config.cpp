#include "ddipnet/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace ddipnet {

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

template <class N>
N parse_number(const std::string& key, const std::string& v) {
    N out{};
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (v.empty() || ec != std::errc() || p != v.data() + v.size())
        throw ConfigError("config: " + key + " = '" + v + "' is not a valid number");
    return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config: " + key + " = '" + v + "' is not a boolean");
}

std::vector<double> parse_double_list(const std::string& key, const std::string& v) {
    std::vector<double> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_number<double>(key, trim(item)));
    return out;
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
    std::vector<int> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_number<int>(key, trim(item)));
    return out;
}

template <class T>
std::string join(const std::vector<T>& values) {
    std::string out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) out += ',';
        if constexpr (std::is_floating_point_v<T>) out += format_double(values[i]);
        else out += std::to_string(values[i]);
    }
    return out;
}

using Setter = std::function<void(Settings&, const std::string&, const std::string&)>;
using Getter = std::function<std::string(const Settings&)>;

struct Field {
    Setter set;
    Getter get;
    bool hashed = true;
    bool margin_search = false;
};

template <class N, class Proj>
Field number(Proj proj) {
    return {[proj](Settings& s, const std::string& k, const std::string& v) { proj(s) = parse_number<N>(k, v); },
            [proj](const Settings& s) {
                if constexpr (std::is_floating_point_v<N>) return format_double(proj(s));
                else return std::to_string(proj(s));
            }};
}

template <class Proj>
Field boolean(Proj proj) {
    return {[proj](Settings& s, const std::string& k, const std::string& v) { proj(s) = parse_bool(k, v); },
            [proj](const Settings& s) -> std::string {
                return proj(s) ? "true" : "false";
            }};
}

const std::map<std::string, Field>& fields() {
    static const std::map<std::string, Field> table = [] {
        std::map<std::string, Field> t;
        t["arch.input_channels"] = number<std::size_t>([](auto& s) -> auto& { return s.experiment.arch.input_channels; });
        t["arch.input_features"] = number<std::size_t>([](auto& s) -> auto& { return s.experiment.arch.input_features; });
        t["arch.input_side"] = number<std::size_t>([](auto& s) -> auto& { return s.experiment.arch.input_side; });
        t["arch.conv_blocks"] = {
            [](Settings& s, const std::string&, const std::string& v) { s.experiment.arch.conv_blocks = parse_conv_blocks(v); },
            [](const Settings& s) { return format_conv_blocks(s.experiment.arch.conv_blocks); }};
        t["arch.fc_widths"] = {
            [](Settings& s, const std::string&, const std::string& v) { s.experiment.arch.fc_widths = parse_size_list(v); },
            [](const Settings& s) { return format_size_list(s.experiment.arch.fc_widths); }};
        t["generator.base_channels"] =
            number<std::size_t>([](auto& s) -> auto& { return s.experiment.generator_base_channels; });

        t["train.epochs"] = number<int>([](auto& s) -> auto& { return s.experiment.train.epochs; });
        t["train.batch_size"] = number<int>([](auto& s) -> auto& { return s.experiment.train.batch_size; });
        t["train.lr_backbone"] = number<double>([](auto& s) -> auto& { return s.experiment.train.lr_backbone; });
        t["train.lr_generator"] = number<double>([](auto& s) -> auto& { return s.experiment.train.lr_generator; });
        t["train.margin"] = number<double>([](auto& s) -> auto& { return s.experiment.train.margin.m; });
        t["train.variant"] = {
            [](Settings& s, const std::string&, const std::string& v) { s.experiment.train.variant = parse_variant(v); },
            [](const Settings& s) { return to_string(s.experiment.train.variant); }};
        t["train.seed"] = number<std::uint64_t>([](auto& s) -> auto& { return s.experiment.train.seed; });
        t["train.adam_beta1"] = number<double>([](auto& s) -> auto& { return s.experiment.train.adam.beta1; });
        t["train.adam_beta2"] = number<double>([](auto& s) -> auto& { return s.experiment.train.adam.beta2; });
        t["train.adam_eps"] = number<double>([](auto& s) -> auto& { return s.experiment.train.adam.eps; });
        t["train.hflip_prob"] =
            number<double>([](auto& s) -> auto& { return s.experiment.train.augmentation.horizontal_flip_prob; });
        t["train.vflip_prob"] =
            number<double>([](auto& s) -> auto& { return s.experiment.train.augmentation.vertical_flip_prob; });
        t["train.crop_area_lo"] =
            number<double>([](auto& s) -> auto& { return s.experiment.train.augmentation.crop_area_lo; });
        t["train.crop_area_hi"] =
            number<double>([](auto& s) -> auto& { return s.experiment.train.augmentation.crop_area_hi; });
        t["train.rotations"] = {
            [](Settings& s, const std::string& k, const std::string& v) {
                s.experiment.train.augmentation.rotation_choices = parse_int_list(k, v);
            },
            [](const Settings& s) { return join(s.experiment.train.augmentation.rotation_choices); }};
        t["train.augment_members"] = {
            [](Settings& s, const std::string& k, const std::string& v) {
                if (v == "all") s.experiment.train.augment_members = AugmentMembers::all;
                else if (v == "anchor") s.experiment.train.augment_members = AugmentMembers::anchor;
                else throw ConfigError("config: " + k + " must be 'all' or 'anchor'");
            },
            [](const Settings& s) -> std::string {
                return s.experiment.train.augment_members == AugmentMembers::all ? "all" : "anchor";
            }};
        t["train.resample_latent"] = boolean([](auto& s) -> auto& { return s.experiment.train.resample_latent; });
        t["train.checkpoint_every"] = number<int>([](auto& s) -> auto& { return s.experiment.train.checkpoint_every; });
        t["train.checkpoint_dir"] = {
            [](Settings& s, const std::string&, const std::string& v) { s.experiment.train.checkpoint_dir = v; },
            [](const Settings& s) { return s.experiment.train.checkpoint_dir.string(); }, false};

        t["svm.C"] = number<double>([](auto& s) -> auto& { return s.experiment.svm.C; });
        t["svm.tolerance"] = number<double>([](auto& s) -> auto& { return s.experiment.svm.tolerance; });
        t["svm.max_iterations"] = number<int>([](auto& s) -> auto& { return s.experiment.svm.max_iterations; });

        t["split.train_ratio"] = number<double>([](auto& s) -> auto& { return s.experiment.split.train_ratio; });
        t["split.seed"] = number<std::uint64_t>([](auto& s) -> auto& { return s.experiment.split.seed; });
        t["split.stratified"] = boolean([](auto& s) -> auto& { return s.experiment.split.stratified; });

        t["experiment.runs"] = number<int>([](auto& s) -> auto& { return s.experiment.runs; });
        t["experiment.seed"] = number<std::uint64_t>([](auto& s) -> auto& { return s.experiment.master_seed; });
        t["experiment.fixed_split"] = boolean([](auto& s) -> auto& { return s.experiment.fixed_split; });
        t["experiment.svm_input"] = {
            [](Settings& s, const std::string&, const std::string& v) { s.experiment.svm_input = parse_svm_input(v); },
            [](const Settings& s) { return to_string(s.experiment.svm_input); }};
        auto jobs = number<int>([](auto& s) -> auto& { return s.experiment.jobs; });
        jobs.hashed = false;
        t["experiment.jobs"] = jobs;

        Field margins{[](Settings& s, const std::string& k, const std::string& v) {
                          s.margin_search.margins = parse_double_list(k, v);
                      },
                      [](const Settings& s) { return join(s.margin_search.margins); }};
        margins.margin_search = true;
        t["margin_search.margins"] = margins;
        auto rounds = number<int>([](auto& s) -> auto& { return s.margin_search.rounds; });
        rounds.margin_search = true;
        t["margin_search.rounds"] = rounds;
        auto epochs = number<int>([](auto& s) -> auto& { return s.margin_search.epochs_per_round; });
        epochs.margin_search = true;
        t["margin_search.epochs"] = epochs;

        auto unhashed = [](Field f) {
            f.hashed = false;
            return f;
        };
        t["dataset.path"] = unhashed({[](Settings& s, const std::string&, const std::string& v) { s.dataset = v; },
                                      [](const Settings& s) { return s.dataset.string(); }});
        t["synth.classes"] = unhashed(number<std::size_t>([](auto& s) -> auto& { return s.synth_classes; }));
        t["synth.per_class"] = unhashed(number<std::size_t>([](auto& s) -> auto& { return s.synth_per_class; }));
        t["synth.seed"] = unhashed(number<std::uint64_t>([](auto& s) -> auto& { return s.synth_seed; }));
        return t;
    }();
    return table;
}

std::string hash_text(const Settings& s, bool with_margin_search) {
    std::string text;
    for (const auto& [key, field] : fields()) {
        if (!field.hashed) continue;
        if (field.margin_search && !with_margin_search) continue;
        text += key + "=" + field.get(s) + "\n";
    }
    return text;
}

std::string hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace

std::string format_double(double v) {
    char buf[32];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

void apply_setting(Settings& settings, const std::string& key, const std::string& value) {
    const auto it = fields().find(key);
    if (it == fields().end()) throw ConfigError("config: unknown key '" + key + "'");
    try {
        it->second.set(settings, key, value);
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError("config: " + key + ": " + e.what());
    }
}

Settings parse_settings(const std::string& text) {
    Settings s;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const auto body = trim(line);
        if (body.empty()) continue;
        const auto eq = body.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
        apply_setting(s, trim(body.substr(0, eq)), trim(body.substr(eq + 1)));
    }
    return s;
}

Settings load_settings(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_settings(ss.str());
}

std::string format_settings(const Settings& settings) {
    std::string text;
    for (const auto& [key, field] : fields()) text += key + " = " + field.get(settings) + "\n";
    return text;
}

std::uint64_t fnv1a(std::string_view text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string config_hash(const ExperimentConfig& cfg) {
    Settings s;
    s.experiment = cfg;
    return hex(fnv1a(hash_text(s, false)));
}

std::string config_hash(const ExperimentConfig& cfg, const MarginSearchConfig& search) {
    Settings s;
    s.experiment = cfg;
    s.margin_search = search;
    return hex(fnv1a(hash_text(s, true)));
}

}  // namespace ddipnet
