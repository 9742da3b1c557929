#pragma once

#include "maskshape/mesh.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <string_view>
#include <vector>

namespace maskshape {

enum class View : std::uint8_t { Frontal, Lateral };

std::string_view to_string(View view);
View parse_view(std::string_view token);

/// Orthographic camera framing. The body's [-1, 1] height fills (1 - 2 * margin) of the image.
struct ViewSpec
{
    View view = View::Frontal;
    double margin = 0.05;

    void validate() const;
};

inline constexpr int kMinResolution = 16;

/// R x R silhouette, row-major with row 0 at the top; 1 = body.
struct BinaryMask
{
    int resolution = 0;
    View view = View::Frontal;
    std::vector<std::uint8_t> bits;

    BinaryMask() = default;
    BinaryMask(int resolution, View view);

    std::uint8_t at(int row, int col) const { return bits[static_cast<std::size_t>(row) * resolution + col]; }
    std::uint8_t& at(int row, int col) { return bits[static_cast<std::size_t>(row) * resolution + col]; }
    std::size_t count() const;

    bool operator==(const BinaryMask&) const = default;
};

/// Pixels per model unit for a given framing.
double pixels_per_unit(const ViewSpec& spec, int resolution);

/// Continuous image coordinates (x right, y down); pixel (r, c) has its centre at (c + 0.5, r + 0.5).
Eigen::Vector2d project_to_image(const Eigen::Vector3d& point, const ViewSpec& spec, int resolution);

/// World-space direction that moves a projection by +1 pixel along image x.
Eigen::Vector3d image_x_direction(View view);

/**
 * Calls `emit(row, col)` for every pixel centre inside the triangle.
 *
 * Centres on an edge belong to the triangle only if the edge is a top or a
 * left edge, so two triangles sharing an edge never both claim (or both miss)
 * a centre on it. Degenerate triangles emit nothing.
 */
void rasterize_triangle(const Eigen::Vector2d& a, const Eigen::Vector2d& b, const Eigen::Vector2d& c, int resolution,
                        const std::function<void(int, int)>& emit);

/// Pixel-centre coverage of every triangle; depth is ignored.
BinaryMask render_mask(const Mesh& mesh, const ViewSpec& spec, int resolution);

/// Drops triangles touching LeftArm, RightArm or RightLeg vertices; vertices are kept.
Mesh strip_for_lateral(const Mesh& mesh);

/// Frontal renders the mesh as is; Lateral renders strip_for_lateral(mesh).
BinaryMask render_view(const Mesh& mesh, View view, int resolution, double margin = 0.05);

/**
 * Reference renderer used to check render_mask: each pixel is split into
 * supersample^2 sub-pixels tested with an inclusive edge-sign test, and the
 * pixel is set when at least half of them are covered.
 */
BinaryMask mask_oracle(const Mesh& mesh, const ViewSpec& spec, int resolution, int supersample);

/// Pixels whose 3x3 neighbourhood contains both set and unset pixels.
std::vector<std::uint8_t> boundary_band(const BinaryMask& mask);

} // namespace maskshape
