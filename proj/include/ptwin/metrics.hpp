#pragma once

// Evaluation metrics and report emission for the two prediction tasks.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ptwin/common.hpp"

namespace ptwin {

double rmse(const std::vector<double>& pred, const std::vector<double>& target);

// 1 - SS_res / SS_tot about the target mean. A constant target has no
// variance to explain, so the score is reported as absent.
std::optional<double> r2(const std::vector<double>& pred, const std::vector<double>& target);

// Jaccard index over occupied cells; two empty masks match exactly and score 1.
double iou(const Array2D<std::uint8_t>& pred, const Array2D<std::uint8_t>& target);

struct CountReportRow {
    std::string dataset;
    std::string augmentation;
    int depth_layers = 1;
    double rmse_value = 0.0;
    std::optional<double> r2_value;
};

struct LocateReportRow {
    std::string dataset;
    std::string augmentation;
    std::string mode;
    double avg_iou = 0.0;
    double max_iou = 0.0;
};

struct PerLayerPoint {
    int layer_index = 0;
    double target = 0.0;
    double prediction = 0.0;
    double iou_value = 0.0;  // locate task only
};

void write_count_report_csv(const std::string& path, const std::vector<CountReportRow>& rows);
void write_locate_report_csv(const std::string& path, const std::vector<LocateReportRow>& rows);
void write_per_layer_csv(const std::string& path, const std::vector<PerLayerPoint>& points,
                         bool locate);
std::vector<PerLayerPoint> read_per_layer_csv(const std::string& path, bool locate);

// Plot rasters (PGM): prediction-vs-target scatter and a grid heat map.
void write_scatter_pgm(const std::string& path, const std::vector<PerLayerPoint>& points);
void write_heat_pgm(const std::string& path, const Array2D<float>& grid, int upscale = 16);

}  // namespace ptwin
