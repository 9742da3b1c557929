#pragma once

#include "maskshape/mesh.hpp"

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace maskshape {

/// Normalized bodies span 2 units of height; an adult is taken to be 1.70 m tall.
inline constexpr double kMetersPerUnit = 1.70 / 2.0;
inline constexpr int kHistogramBins = 50;

/// Largest per-vertex displacement.
double rmse_max(const Mesh& truth, const Mesh& pred);

/// Mean per-vertex displacement. Named after the customary metric, but it is a mean distance, not a root mean square.
double rmse_mean(const Mesh& truth, const Mesh& pred);

/// 20 log10(height range of truth) - 10 log10(rmse_mean^2); +infinity when the meshes coincide.
double psnr(const Mesh& truth, const Mesh& pred);

struct ErrorMap
{
    std::vector<double> displacement;
    /// displacement / scale, clamped to [0, 1]; white at 0, red at 1.
    std::vector<double> ramp;
    double scale = 0.0;
};

/// Ramp scale defaults to the largest displacement of this pair.
ErrorMap error_map(const Mesh& truth, const Mesh& pred, double scale = 0.0);

/// <stem>.sfmt with the displacements and <stem>.obj whose "# ramp" comments carry one value per vertex.
void save_error_map(const ErrorMap& map, const Mesh& pred, const std::filesystem::path& stem);

struct BodyError
{
    std::string id;
    double rmse_max = 0.0;
    double rmse_mean = 0.0;
    double psnr = 0.0;
};

BodyError body_error(std::string id, const Mesh& truth, const Mesh& pred);

struct Histogram
{
    double lo = 0.0;
    double hi = 0.0;
    std::vector<std::size_t> counts;
};

/// Equal-width bins over the finite values; the top edge is inclusive.
Histogram histogram(std::span<const double> values, int bins = kHistogramBins);

double mean_of(std::span<const double> values);
double median_of(std::vector<double> values);

/// One row per body; rmse_mean is labelled as mean vertex distance.
std::string errors_csv(std::span<const BodyError> rows);

/// Means, medians and 50-bin histograms as pretty-printed JSON.
std::string errors_summary_json(std::span<const BodyError> rows);

} // namespace maskshape
