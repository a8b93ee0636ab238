#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "ddipnet/experiment.hpp"

namespace ddipnet {

/// row,seed,accuracy,accuracy_std,final_loss,final_d1,final_d2,note
/// One row per run, then a `summary` row carrying mean and sample std.
/// No timing columns, so equal seeds give byte-identical files.
std::string experiment_csv(const ExperimentReport& report);

/// margin,mean_accuracy,std_accuracy,accuracies (';' separated per round)
std::string margin_csv(const MarginSearchResult& result);

nlohmann::json to_json(const ExperimentReport& report);
ExperimentReport experiment_report_from_json(const nlohmann::json& j);
nlohmann::json to_json(const MarginSearchResult& result);
MarginSearchResult margin_result_from_json(const nlohmann::json& j);

struct ChartSeries {
    std::string name;
    std::vector<double> x;
    std::vector<double> y;
    std::vector<double> error;  // optional half-height of the error bar per point
};

struct Chart {
    std::string title;
    std::string x_label;
    std::string y_label;
    std::vector<ChartSeries> series;
};

/// Line chart with one polyline per series and vertical error bars.
std::string render_svg(const Chart& chart);

/// Accuracy against margin with std error bars.
Chart margin_chart(const MarginSearchResult& result);
/// Mean loss, d1 and d2 per epoch averaged over runs, std across runs as bars.
Chart history_chart(const ExperimentReport& report);

void write_text(const std::filesystem::path& path, const std::string& text);

/// Lists the produced files (relative to out_dir) and the config hash.
void write_manifest(const std::filesystem::path& out_dir, const std::string& config_hash,
                    const std::vector<std::string>& outputs);

/// experiment.csv, experiment.json, history.svg, history_run<k>.csv and the
/// manifest under out_dir. Returns the relative file names.
std::vector<std::string> emit_report(const ExperimentReport& report, const std::filesystem::path& out_dir);
/// margin_search.csv, margin_search.json, margin_search.svg and the manifest.
std::vector<std::string> emit_report(const MarginSearchResult& result, const std::filesystem::path& out_dir);

}  // namespace ddipnet
