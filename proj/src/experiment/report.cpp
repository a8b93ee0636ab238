#include "ddipnet/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "ddipnet/config.hpp"

namespace ddipnet {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const EpochRecord* last_epoch(const RunResult& r) {
    return r.history.epochs.empty() ? nullptr : &r.history.epochs.back();
}

}  // namespace

std::string experiment_csv(const ExperimentReport& report) {
    std::string out = "row,seed,accuracy,accuracy_std,final_loss,final_d1,final_d2,note\n";
    for (const auto& r : report.runs) {
        out += std::to_string(r.run) + "," + std::to_string(r.seeds.train) + "," + format_double(r.accuracy) + ",,";
        if (const auto* e = last_epoch(r))
            out += format_double(e->mean_loss) + "," + format_double(e->mean_d1) + "," + format_double(e->mean_d2);
        else
            out += ",,";
        out += ",\n";
    }
    out += "summary,," + format_double(report.accuracy.mean) + "," + format_double(report.accuracy.std) + ",,,," +
           (report.accuracy.single_run ? "single run" : "") + "\n";
    return out;
}

std::string margin_csv(const MarginSearchResult& result) {
    std::string out = "margin,mean_accuracy,std_accuracy,accuracies\n";
    for (const auto& row : result.rows) {
        out += format_double(row.margin) + "," + format_double(row.accuracy.mean) + "," +
               format_double(row.accuracy.std) + ",";
        for (std::size_t i = 0; i < row.accuracies.size(); ++i)
            out += (i ? ";" : "") + format_double(row.accuracies[i]);
        out += "\n";
    }
    return out;
}

// ---------------------------------------------------------------------------
// JSON

namespace {

json settings_json(const ExperimentConfig& cfg, const MarginSearchConfig* search) {
    Settings s;
    s.experiment = cfg;
    if (search) s.margin_search = *search;
    json j = json::object();
    std::istringstream in(format_settings(s));
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find(" = ");
        const auto key = line.substr(0, eq);
        if (!search && key.starts_with("margin_search.")) continue;
        if (key.starts_with("dataset.") || key.starts_with("synth.")) continue;
        j[key] = line.substr(eq + 3);
    }
    return j;
}

Settings settings_from_json(const json& j) {
    Settings s;
    for (const auto& [key, value] : j.items()) apply_setting(s, key, value.get<std::string>());
    return s;
}

json summary_json(const Summary& s) { return {{"mean", s.mean}, {"std", s.std}, {"single_run", s.single_run}}; }

Summary summary_from_json(const json& j) {
    return {j.at("mean").get<double>(), j.at("std").get<double>(), j.at("single_run").get<bool>()};
}

json run_json(const RunResult& r) {
    json epochs = json::array();
    for (const auto& e : r.history.epochs)
        epochs.push_back({{"epoch", e.epoch},
                          {"mean_loss", e.mean_loss},
                          {"mean_d1", e.mean_d1},
                          {"mean_d2", e.mean_d2},
                          {"wallclock_ms", e.wallclock_ms}});
    return {{"run", r.run},
            {"seeds",
             {{"split", r.seeds.split},
              {"backbone", r.seeds.backbone},
              {"generator", r.seeds.generator},
              {"latent", r.seeds.latent},
              {"train", r.seeds.train},
              {"svm", r.seeds.svm}}},
            {"train_size", r.train_size},
            {"test_size", r.test_size},
            {"accuracy", r.accuracy},
            {"confusion", r.confusion},
            {"batches_per_epoch", r.history.batches_per_epoch},
            {"history", epochs},
            {"eval_generator_forwards", r.eval_generator_forwards},
            {"wallclock_ms", r.wallclock_ms}};
}

RunResult run_from_json(const json& j) {
    RunResult r;
    r.run = j.at("run").get<int>();
    const auto& s = j.at("seeds");
    r.seeds = {s.at("split").get<std::uint64_t>(),     s.at("backbone").get<std::uint64_t>(),
               s.at("generator").get<std::uint64_t>(), s.at("latent").get<std::uint64_t>(),
               s.at("train").get<std::uint64_t>(),     s.at("svm").get<std::uint64_t>()};
    r.train_size = j.at("train_size").get<std::size_t>();
    r.test_size = j.at("test_size").get<std::size_t>();
    r.accuracy = j.at("accuracy").get<double>();
    r.confusion = j.at("confusion").get<std::vector<std::vector<std::size_t>>>();
    r.history.batches_per_epoch = j.at("batches_per_epoch").get<std::size_t>();
    for (const auto& e : j.at("history"))
        r.history.epochs.push_back({e.at("epoch").get<int>(), e.at("mean_loss").get<double>(),
                                    e.at("mean_d1").get<double>(), e.at("mean_d2").get<double>(),
                                    e.at("wallclock_ms").get<double>()});
    r.eval_generator_forwards = j.at("eval_generator_forwards").get<std::uint64_t>();
    r.wallclock_ms = j.at("wallclock_ms").get<double>();
    return r;
}

}  // namespace

json to_json(const ExperimentReport& report) {
    json runs = json::array();
    for (const auto& r : report.runs) runs.push_back(run_json(r));
    return {{"kind", "experiment"},
            {"config", settings_json(report.config, nullptr)},
            {"master_seed", report.config.master_seed},
            {"config_hash", report.config_hash},
            {"dataset", report.dataset},
            {"num_classes", report.num_classes},
            {"runs", runs},
            {"accuracy", summary_json(report.accuracy)},
            {"wallclock_ms", report.wallclock_ms}};
}

ExperimentReport experiment_report_from_json(const json& j) {
    try {
        if (j.at("kind") != "experiment") throw DataError("report JSON is not an experiment report");
        ExperimentReport r;
        r.config = settings_from_json(j.at("config")).experiment;
        r.config_hash = j.at("config_hash").get<std::string>();
        r.dataset = j.at("dataset").get<std::string>();
        r.num_classes = j.at("num_classes").get<std::size_t>();
        for (const auto& run : j.at("runs")) r.runs.push_back(run_from_json(run));
        r.accuracy = summary_from_json(j.at("accuracy"));
        r.wallclock_ms = j.at("wallclock_ms").get<double>();
        return r;
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed experiment report: ") + e.what());
    }
}

json to_json(const MarginSearchResult& result) {
    json rows = json::array();
    for (const auto& row : result.rows)
        rows.push_back({{"margin", row.margin}, {"accuracies", row.accuracies}, {"accuracy", summary_json(row.accuracy)}});
    return {{"kind", "margin_search"},
            {"config", settings_json(result.base, &result.search)},
            {"master_seed", result.base.master_seed},
            {"config_hash", result.config_hash},
            {"dataset", result.dataset},
            {"rows", rows},
            {"best_margin", result.best_margin},
            {"wallclock_ms", result.wallclock_ms}};
}

MarginSearchResult margin_result_from_json(const json& j) {
    try {
        if (j.at("kind") != "margin_search") throw DataError("report JSON is not a margin search");
        MarginSearchResult r;
        const auto s = settings_from_json(j.at("config"));
        r.base = s.experiment;
        r.search = s.margin_search;
        r.config_hash = j.at("config_hash").get<std::string>();
        r.dataset = j.at("dataset").get<std::string>();
        for (const auto& row : j.at("rows"))
            r.rows.push_back({row.at("margin").get<double>(), row.at("accuracies").get<std::vector<double>>(),
                              summary_from_json(row.at("accuracy"))});
        r.best_margin = j.at("best_margin").get<double>();
        r.wallclock_ms = j.at("wallclock_ms").get<double>();
        return r;
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed margin search report: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// SVG

namespace {

std::string escape_xml(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '&': out += "&amp;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

}  // namespace

std::string render_svg(const Chart& chart) {
    constexpr double width = 640, height = 400, left = 70, right = 150, top = 40, bottom = 60;
    const double pw = width - left - right, ph = height - top - bottom;
    static const char* colours[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

    double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
    for (const auto& s : chart.series)
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            const double e = i < s.error.size() ? s.error[i] : 0.0;
            x0 = std::min(x0, s.x[i]);
            x1 = std::max(x1, s.x[i]);
            y0 = std::min(y0, s.y[i] - e);
            y1 = std::max(y1, s.y[i] + e);
        }
    if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    if (x1 - x0 < 1e-12) x0 -= 0.5, x1 += 0.5;
    if (y1 - y0 < 1e-12) y0 -= 0.5, y1 += 0.5;
    const double pad = 0.05 * (y1 - y0);
    y0 -= pad;
    y1 += pad;
    auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
    auto py = [&](double y) { return top + (1.0 - (y - y0) / (y1 - y0)) * ph; };

    std::ostringstream o;
    o << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << num(left + pw / 2) << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">"
      << escape_xml(chart.title) << "</text>\n"
      << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 4; ++t) {
        const double xv = x0 + (x1 - x0) * t / 4.0, yv = y0 + (y1 - y0) * t / 4.0;
        o << "<text x=\"" << num(px(xv)) << "\" y=\"" << num(top + ph + 18)
          << "\" text-anchor=\"middle\" font-size=\"11\">" << format_double(std::round(xv * 1000) / 1000) << "</text>\n"
          << "<text x=\"" << num(left - 6) << "\" y=\"" << num(py(yv) + 4)
          << "\" text-anchor=\"end\" font-size=\"11\">" << format_double(std::round(yv * 1000) / 1000) << "</text>\n";
    }
    o << "<text x=\"" << num(left + pw / 2) << "\" y=\"" << num(height - 16)
      << "\" text-anchor=\"middle\" font-size=\"13\">" << escape_xml(chart.x_label) << "</text>\n"
      << "<text x=\"16\" y=\"" << num(top + ph / 2) << "\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 16 "
      << num(top + ph / 2) << ")\">" << escape_xml(chart.y_label) << "</text>\n";

    for (std::size_t k = 0; k < chart.series.size(); ++k) {
        const auto& s = chart.series[k];
        const char* colour = colours[k % std::size(colours)];
        o << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"2\" points=\"";
        for (std::size_t i = 0; i < s.x.size(); ++i) o << (i ? " " : "") << num(px(s.x[i])) << ',' << num(py(s.y[i]));
        o << "\"/>\n";
        for (std::size_t i = 0; i < s.x.size() && i < s.error.size(); ++i) {
            if (!(s.error[i] > 0)) continue;
            o << "<line x1=\"" << num(px(s.x[i])) << "\" y1=\"" << num(py(s.y[i] - s.error[i])) << "\" x2=\""
              << num(px(s.x[i])) << "\" y2=\"" << num(py(s.y[i] + s.error[i])) << "\" stroke=\"" << colour
              << "\"/>\n";
        }
        o << "<text x=\"" << num(left + pw + 10) << "\" y=\"" << num(top + 16 + 18.0 * k) << "\" font-size=\"12\" fill=\""
          << colour << "\">" << escape_xml(s.name) << "</text>\n";
    }
    o << "</svg>\n";
    return o.str();
}

Chart margin_chart(const MarginSearchResult& result) {
    ChartSeries s{"mean accuracy", {}, {}, {}};
    for (const auto& row : result.rows) {
        s.x.push_back(row.margin);
        s.y.push_back(row.accuracy.mean);
        s.error.push_back(row.accuracy.std);
    }
    return {"Accuracy against margin", "margin m", "overall accuracy", {s}};
}

Chart history_chart(const ExperimentReport& report) {
    std::size_t epochs = 0;
    for (const auto& r : report.runs) epochs = std::max(epochs, r.history.epochs.size());
    ChartSeries loss{"mean loss", {}, {}, {}}, d1{"mean d1", {}, {}, {}}, d2{"mean d2", {}, {}, {}};
    for (std::size_t e = 0; e < epochs; ++e) {
        std::vector<double> l, a, b;
        for (const auto& r : report.runs)
            if (e < r.history.epochs.size()) {
                l.push_back(r.history.epochs[e].mean_loss);
                a.push_back(r.history.epochs[e].mean_d1);
                b.push_back(r.history.epochs[e].mean_d2);
            }
        const double x = double(e + 1);
        for (auto [series, values] : {std::pair{&loss, &l}, std::pair{&d1, &a}, std::pair{&d2, &b}}) {
            const auto s = summarize(*values);
            series->x.push_back(x);
            series->y.push_back(s.mean);
            series->error.push_back(s.std);
        }
    }
    return {"Training history", "epoch", "value", {loss, d1, d2}};
}

// ---------------------------------------------------------------------------
// files

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("short write on " + path.string());
}

void write_manifest(const fs::path& out_dir, const std::string& config_hash, const std::vector<std::string>& outputs) {
    std::string text = "config_hash " + config_hash + "\n";
    for (const auto& f : outputs) text += "output " + f + "\n";
    write_text(out_dir / "manifest.txt", text);
}

namespace {

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

std::string history_csv(const TrainHistory& h) {
    std::string out = "epoch,mean_loss,mean_d1,mean_d2\n";
    for (const auto& e : h.epochs)
        out += std::to_string(e.epoch) + "," + format_double(e.mean_loss) + "," + format_double(e.mean_d1) + "," +
               format_double(e.mean_d2) + "\n";
    return out;
}

}  // namespace

std::vector<std::string> emit_report(const ExperimentReport& report, const fs::path& out_dir) {
    ensure_dir(out_dir);
    std::vector<std::string> files{"experiment.csv", "experiment.json", "history.svg"};
    write_text(out_dir / "experiment.csv", experiment_csv(report));
    write_text(out_dir / "experiment.json", to_json(report).dump(2) + "\n");
    write_text(out_dir / "history.svg", render_svg(history_chart(report)));
    for (const auto& r : report.runs) {
        const auto name = "history_run" + std::to_string(r.run) + ".csv";
        write_text(out_dir / name, history_csv(r.history));
        files.push_back(name);
    }
    write_manifest(out_dir, report.config_hash, files);
    files.push_back("manifest.txt");
    return files;
}

std::vector<std::string> emit_report(const MarginSearchResult& result, const fs::path& out_dir) {
    ensure_dir(out_dir);
    std::vector<std::string> files{"margin_search.csv", "margin_search.json", "margin_search.svg"};
    write_text(out_dir / "margin_search.csv", margin_csv(result));
    write_text(out_dir / "margin_search.json", to_json(result).dump(2) + "\n");
    write_text(out_dir / "margin_search.svg", render_svg(margin_chart(result)));
    write_manifest(out_dir, result.config_hash, files);
    files.push_back("manifest.txt");
    return files;
}

}  // namespace ddipnet
