#include "maskshape/evaluation.hpp"

#include "maskshape/sfmt.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace maskshape {

namespace {

std::vector<double> displacements(const Mesh& truth, const Mesh& pred)
{
    if (truth.vertices.size() != pred.vertices.size() || truth.vertices.empty()) {
        throw std::invalid_argument("mesh metrics need two non-empty meshes with the same vertex count");
    }
    std::vector<double> d(truth.vertices.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
        d[i] = (truth.vertices[i] - pred.vertices[i]).norm();
    }
    return d;
}

std::string format_number(double v)
{
    if (std::isinf(v)) {
        return v > 0 ? "∞" : "-∞";
    }
    std::ostringstream os;
    os.precision(10);
    os << v;
    return os.str();
}

nlohmann::json number_or_infinity(double v)
{
    return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(format_number(v));
}

nlohmann::json histogram_json(const Histogram& h)
{
    return {{"lo", h.lo}, {"hi", h.hi}, {"bins", h.counts.size()}, {"counts", h.counts}};
}

nlohmann::json metric_json(const std::vector<double>& values, double meters)
{
    nlohmann::json j = {
        {"mean", number_or_infinity(mean_of(values))},
        {"median", number_or_infinity(median_of(values))},
        {"histogram", histogram_json(histogram(values))},
    };
    if (meters > 0.0) {
        j["mean_m"] = mean_of(values) * meters;
        j["median_m"] = median_of(values) * meters;
    }
    return j;
}

} // namespace

double rmse_max(const Mesh& truth, const Mesh& pred)
{
    const auto d = displacements(truth, pred);
    return *std::max_element(d.begin(), d.end());
}

double rmse_mean(const Mesh& truth, const Mesh& pred)
{
    const auto d = displacements(truth, pred);
    return std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
}

double psnr(const Mesh& truth, const Mesh& pred)
{
    const double e = rmse_mean(truth, pred);
    if (e == 0.0) {
        return std::numeric_limits<double>::infinity();
    }
    const auto [lo, hi] = height_range(truth);
    return 20.0 * std::log10(hi - lo) - 10.0 * std::log10(e * e);
}

ErrorMap error_map(const Mesh& truth, const Mesh& pred, double scale)
{
    if (scale < 0.0 || !std::isfinite(scale)) {
        throw std::invalid_argument("error_map: scale must be finite and non-negative");
    }
    ErrorMap map;
    map.displacement = displacements(truth, pred);
    map.scale = scale > 0.0 ? scale : *std::max_element(map.displacement.begin(), map.displacement.end());
    map.ramp.resize(map.displacement.size(), 0.0);
    if (map.scale > 0.0) {
        for (std::size_t i = 0; i < map.ramp.size(); ++i) {
            map.ramp[i] = std::min(1.0, map.displacement[i] / map.scale);
        }
    }
    return map;
}

void save_error_map(const ErrorMap& map, const Mesh& pred, const std::filesystem::path& stem)
{
    if (map.displacement.size() != pred.vertices.size()) {
        throw std::invalid_argument("save_error_map: vertex count mismatch");
    }
    write_sfmt(stem.string() + ".sfmt",
               SfmtBlob{SfmtDtype::F64, {static_cast<std::uint64_t>(map.displacement.size())}, map.displacement});

    std::ostringstream os;
    os.precision(17);
    os << "# error map, ramp scale " << map.scale << "\n";
    for (std::size_t i = 0; i < pred.vertices.size(); ++i) {
        const auto& v = pred.vertices[i];
        os << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << "\n# ramp " << map.ramp[i] << "\n";
    }
    for (const auto& t : pred.triangles) {
        os << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << "\n";
    }
    write_text_file(stem.string() + ".obj", os.str());
}

BodyError body_error(std::string id, const Mesh& truth, const Mesh& pred)
{
    return {std::move(id), rmse_max(truth, pred), rmse_mean(truth, pred), psnr(truth, pred)};
}

Histogram histogram(std::span<const double> values, int bins)
{
    if (bins < 1) {
        throw std::invalid_argument("histogram: bins must be positive");
    }
    Histogram h;
    h.counts.assign(static_cast<std::size_t>(bins), 0);
    std::vector<double> finite;
    std::copy_if(values.begin(), values.end(), std::back_inserter(finite), [](double v) { return std::isfinite(v); });
    if (finite.empty()) {
        return h;
    }
    const auto [lo, hi] = std::minmax_element(finite.begin(), finite.end());
    h.lo = *lo;
    h.hi = *hi > *lo ? *hi : *lo + 1.0;
    const double width = (h.hi - h.lo) / bins;
    for (double v : finite) {
        const auto b = std::min(bins - 1, static_cast<int>((v - h.lo) / width));
        ++h.counts[static_cast<std::size_t>(b)];
    }
    return h;
}

double mean_of(std::span<const double> values)
{
    if (values.empty()) {
        return 0.0;
    }
    return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

double median_of(std::vector<double> values)
{
    if (values.empty()) {
        return 0.0;
    }
    const std::size_t mid = values.size() / 2;
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
    const double upper = values[mid];
    if (values.size() % 2 == 1) {
        return upper;
    }
    const double lower = *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
    return 0.5 * (lower + upper);
}

std::string errors_csv(std::span<const BodyError> rows)
{
    std::ostringstream os;
    os << "id,rmse_max,rmse_max_m,mean_vertex_distance,mean_vertex_distance_m,psnr_db\n";
    for (const auto& r : rows) {
        os << r.id << ',' << format_number(r.rmse_max) << ',' << format_number(r.rmse_max * kMetersPerUnit) << ','
           << format_number(r.rmse_mean) << ',' << format_number(r.rmse_mean * kMetersPerUnit) << ','
           << format_number(r.psnr) << '\n';
    }
    return os.str();
}

std::string errors_summary_json(std::span<const BodyError> rows)
{
    std::vector<double> maxes, means, psnrs;
    for (const auto& r : rows) {
        maxes.push_back(r.rmse_max);
        means.push_back(r.rmse_mean);
        psnrs.push_back(r.psnr);
    }
    const nlohmann::json doc = {
        {"bodies", rows.size()},
        {"rmse_max", metric_json(maxes, kMetersPerUnit)},
        {"mean_vertex_distance", metric_json(means, kMetersPerUnit)},
        {"psnr_db", metric_json(psnrs, 0.0)},
    };
    return doc.dump(2) + "\n";
}

} // namespace maskshape
