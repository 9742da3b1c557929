#include "maskshape/raster.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace maskshape {

namespace {

// Edge function evaluated with a canonical vertex order so the two triangles
// sharing an edge see exactly negated values.
double edge_value(const Eigen::Vector2d& a, const Eigen::Vector2d& b, double px, double py)
{
    const bool swap = (b.x() < a.x()) || (b.x() == a.x() && b.y() < a.y());
    const Eigen::Vector2d& u = swap ? b : a;
    const Eigen::Vector2d& v = swap ? a : b;
    const double e = (v.x() - u.x()) * (py - u.y()) - (v.y() - u.y()) * (px - u.x());
    return swap ? -e : e;
}

// With interior on the positive side, an edge a->b is a top edge when it is
// horizontal with dx > 0 and a left edge when dy < 0 (image y points down).
bool is_top_left(const Eigen::Vector2d& a, const Eigen::Vector2d& b)
{
    const double dx = b.x() - a.x();
    const double dy = b.y() - a.y();
    return dy < 0.0 || (dy == 0.0 && dx > 0.0);
}

double signed_area2(const Eigen::Vector2d& a, const Eigen::Vector2d& b, const Eigen::Vector2d& c)
{
    return (b.x() - a.x()) * (c.y() - a.y()) - (b.y() - a.y()) * (c.x() - a.x());
}

} // namespace

std::string_view to_string(View view)
{
    return view == View::Frontal ? "frontal" : "lateral";
}

View parse_view(std::string_view token)
{
    if (token == "frontal") {
        return View::Frontal;
    }
    if (token == "lateral") {
        return View::Lateral;
    }
    throw std::invalid_argument("unsupported view '" + std::string(token) + "'");
}

void ViewSpec::validate() const
{
    if (!(margin >= 0.0 && margin < 0.4)) {
        throw std::invalid_argument("view margin must lie in [0, 0.4)");
    }
}

BinaryMask::BinaryMask(int resolution_, View view_)
    : resolution(resolution_), view(view_), bits(static_cast<std::size_t>(resolution_) * resolution_, 0)
{
}

std::size_t BinaryMask::count() const
{
    return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

double pixels_per_unit(const ViewSpec& spec, int resolution)
{
    return (1.0 - 2.0 * spec.margin) * resolution / 2.0;
}

Eigen::Vector3d image_x_direction(View view)
{
    // Frontal: camera looks along -y, image right is -x. Lateral: looks along +x, image right is -y.
    return view == View::Frontal ? Eigen::Vector3d(-1.0, 0.0, 0.0) : Eigen::Vector3d(0.0, -1.0, 0.0);
}

Eigen::Vector2d project_to_image(const Eigen::Vector3d& point, const ViewSpec& spec, int resolution)
{
    const double s = pixels_per_unit(spec, resolution);
    const double u = point.dot(image_x_direction(spec.view));
    const double half = 0.5 * resolution;
    return {half + s * u, half - s * point[kHeightAxis]};
}

void rasterize_triangle(const Eigen::Vector2d& a, const Eigen::Vector2d& b, const Eigen::Vector2d& c, int resolution,
                        const std::function<void(int, int)>& emit)
{
    const double area = signed_area2(a, b, c);
    if (area == 0.0 || !std::isfinite(area)) {
        return;
    }
    // Orient so the interior lies on the positive side of every edge.
    const Eigen::Vector2d& p0 = a;
    const Eigen::Vector2d& p1 = area > 0.0 ? b : c;
    const Eigen::Vector2d& p2 = area > 0.0 ? c : b;
    const bool own01 = is_top_left(p0, p1);
    const bool own12 = is_top_left(p1, p2);
    const bool own20 = is_top_left(p2, p0);

    const double min_x = std::min({p0.x(), p1.x(), p2.x()});
    const double max_x = std::max({p0.x(), p1.x(), p2.x()});
    const double min_y = std::min({p0.y(), p1.y(), p2.y()});
    const double max_y = std::max({p0.y(), p1.y(), p2.y()});
    const int c0 = std::max(0, static_cast<int>(std::floor(min_x - 0.5)));
    const int c1 = std::min(resolution - 1, static_cast<int>(std::ceil(max_x - 0.5)));
    const int r0 = std::max(0, static_cast<int>(std::floor(min_y - 0.5)));
    const int r1 = std::min(resolution - 1, static_cast<int>(std::ceil(max_y - 0.5)));

    auto inside = [](double e, bool owned) { return e > 0.0 || (e == 0.0 && owned); };
    for (int r = r0; r <= r1; ++r) {
        const double py = r + 0.5;
        for (int col = c0; col <= c1; ++col) {
            const double px = col + 0.5;
            if (inside(edge_value(p0, p1, px, py), own01) && inside(edge_value(p1, p2, px, py), own12) &&
                inside(edge_value(p2, p0, px, py), own20)) {
                emit(r, col);
            }
        }
    }
}

BinaryMask render_mask(const Mesh& mesh, const ViewSpec& spec, int resolution)
{
    if (resolution < kMinResolution) {
        throw std::invalid_argument("render_mask: resolution must be at least 16");
    }
    spec.validate();
    BinaryMask mask(resolution, spec.view);
    std::vector<Eigen::Vector2d> projected(mesh.vertices.size());
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
        projected[i] = project_to_image(mesh.vertices[i], spec, resolution);
    }
    const auto emit = [&mask](int r, int c) { mask.at(r, c) = 1; };
    for (const auto& t : mesh.triangles) {
        rasterize_triangle(projected[t[0]], projected[t[1]], projected[t[2]], resolution, emit);
    }
    return mask;
}

Mesh strip_for_lateral(const Mesh& mesh)
{
    Mesh out = mesh;
    out.triangles.clear();
    auto stripped = [&mesh](int v) {
        const auto l = mesh.labels[static_cast<std::size_t>(v)];
        return l == PartLabel::LeftArm || l == PartLabel::RightArm || l == PartLabel::RightLeg;
    };
    for (const auto& t : mesh.triangles) {
        if (!stripped(t[0]) && !stripped(t[1]) && !stripped(t[2])) {
            out.triangles.push_back(t);
        }
    }
    return out;
}

BinaryMask render_view(const Mesh& mesh, View view, int resolution, double margin)
{
    const ViewSpec spec{view, margin};
    return view == View::Lateral ? render_mask(strip_for_lateral(mesh), spec, resolution)
                                 : render_mask(mesh, spec, resolution);
}

BinaryMask mask_oracle(const Mesh& mesh, const ViewSpec& spec, int resolution, int supersample)
{
    if (supersample < 2) {
        throw std::invalid_argument("mask_oracle: supersample must be at least 2");
    }
    spec.validate();
    const int fine = resolution * supersample;
    const double inv = 1.0 / supersample;
    std::vector<std::uint8_t> covered(static_cast<std::size_t>(fine) * fine, 0);
    std::vector<Eigen::Vector2d> projected(mesh.vertices.size());
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
        projected[i] = project_to_image(mesh.vertices[i], spec, resolution);
    }
    for (const auto& t : mesh.triangles) {
        const auto& a = projected[t[0]];
        const auto& b = projected[t[1]];
        const auto& c = projected[t[2]];
        const double area = signed_area2(a, b, c);
        if (area == 0.0) {
            continue;
        }
        const double sign = area > 0.0 ? 1.0 : -1.0;
        const int x0 = std::max(0, static_cast<int>(std::floor(std::min({a.x(), b.x(), c.x()}) * supersample)) - 1);
        const int x1 = std::min(fine - 1, static_cast<int>(std::ceil(std::max({a.x(), b.x(), c.x()}) * supersample)));
        const int y0 = std::max(0, static_cast<int>(std::floor(std::min({a.y(), b.y(), c.y()}) * supersample)) - 1);
        const int y1 = std::min(fine - 1, static_cast<int>(std::ceil(std::max({a.y(), b.y(), c.y()}) * supersample)));
        for (int y = y0; y <= y1; ++y) {
            const double py = (y + 0.5) * inv;
            for (int x = x0; x <= x1; ++x) {
                const double px = (x + 0.5) * inv;
                const double e0 = sign * ((b.x() - a.x()) * (py - a.y()) - (b.y() - a.y()) * (px - a.x()));
                const double e1 = sign * ((c.x() - b.x()) * (py - b.y()) - (c.y() - b.y()) * (px - b.x()));
                const double e2 = sign * ((a.x() - c.x()) * (py - c.y()) - (a.y() - c.y()) * (px - c.x()));
                if (e0 >= 0.0 && e1 >= 0.0 && e2 >= 0.0) {
                    covered[static_cast<std::size_t>(y) * fine + x] = 1;
                }
            }
        }
    }
    BinaryMask mask(resolution, spec.view);
    const int threshold = (supersample * supersample + 1) / 2;
    for (int r = 0; r < resolution; ++r) {
        for (int col = 0; col < resolution; ++col) {
            int hits = 0;
            for (int sy = 0; sy < supersample; ++sy) {
                for (int sx = 0; sx < supersample; ++sx) {
                    hits += covered[static_cast<std::size_t>(r * supersample + sy) * fine + col * supersample + sx];
                }
            }
            mask.at(r, col) = hits >= threshold ? 1 : 0;
        }
    }
    return mask;
}

std::vector<std::uint8_t> boundary_band(const BinaryMask& mask)
{
    const int n = mask.resolution;
    std::vector<std::uint8_t> band(mask.bits.size(), 0);
    for (int r = 0; r < n; ++r) {
        for (int c = 0; c < n; ++c) {
            const auto v = mask.at(r, c);
            bool mixed = false;
            for (int dr = -1; dr <= 1 && !mixed; ++dr) {
                for (int dc = -1; dc <= 1; ++dc) {
                    const int rr = r + dr;
                    const int cc = c + dc;
                    if (rr >= 0 && rr < n && cc >= 0 && cc < n && mask.at(rr, cc) != v) {
                        mixed = true;
                        break;
                    }
                }
            }
            band[static_cast<std::size_t>(r) * n + c] = mixed ? 1 : 0;
        }
    }
    return band;
}

} // namespace maskshape
