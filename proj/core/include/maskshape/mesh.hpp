#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace maskshape {

/// Height runs along z. The frontal camera looks along -y, the lateral camera along +x.
inline constexpr int kHeightAxis = 2;

enum class PartLabel : std::uint8_t { Head, Torso, LeftArm, RightArm, LeftLeg, RightLeg };
inline constexpr int kPartLabelCount = 6;

std::string_view to_string(PartLabel label);
PartLabel parse_part_label(std::string_view token);

using Triangle = std::array<int, 3>;

/**
 * Triangle mesh with one part label per vertex.
 *
 * Meshes derived from the same template share the vertex count and the
 * triangle list; the PCA space and all metrics rely on that correspondence.
 */
struct Mesh
{
    std::vector<Eigen::Vector3d> vertices;
    std::vector<Triangle> triangles;
    std::vector<PartLabel> labels;

    std::size_t vertex_count() const { return vertices.size(); }

    /// Same N and an identical triangle list.
    bool same_topology(const Mesh& other) const;

    /// Throws std::invalid_argument on out-of-range indices or a label count mismatch.
    void validate() const;
};

/// Vertex positions as a 3N vector (x0, y0, z0, x1, ...).
Eigen::VectorXd flatten(const Mesh& mesh);

/// Copy of `topology` with positions replaced by a 3N vector.
Mesh with_positions(const Mesh& topology, const Eigen::VectorXd& flat);

/// "<dir>/<stem>.labels" next to an OBJ path.
std::filesystem::path label_sidecar_path(const std::filesystem::path& obj_path);

/// Reads "v"/"f" records; labels come from the sidecar if present, else Torso.
Mesh load_obj(const std::filesystem::path& path);

/// Writes shortest round-trip decimal coordinates and the label sidecar.
void save_obj(const Mesh& mesh, const std::filesystem::path& path);

/// OBJ geometry only: `v` and `f` lines, full round-trip precision.
std::string obj_text(const Mesh& mesh);

/// Uniform scale plus a translation along the height axis so heights span exactly [-1, 1].
Mesh normalize_height(const Mesh& mesh);

/// Min and max of the height coordinate over `subset` (all vertices when empty).
std::pair<double, double> height_range(const Mesh& mesh, std::span<const int> subset = {});

std::vector<int> vertices_with_label(const Mesh& mesh, PartLabel label);
std::vector<int> vertices_with_labels(const Mesh& mesh, std::span<const PartLabel> labels);

/// Sorted, deduplicated one-ring neighbours per vertex.
std::vector<std::vector<int>> vertex_neighbors(const Mesh& mesh);

/// Vertices labelled `side` that share an edge with a vertex labelled `part`.
std::vector<int> boundary_ring(const Mesh& mesh, PartLabel part, PartLabel side = PartLabel::Torso);

Eigen::Vector3d centroid(const Mesh& mesh, std::span<const int> subset);

/// Scales every vertex labelled `part` about `anchor`; everything else is untouched.
Mesh scale_part(const Mesh& mesh, PartLabel part, double factor, const Eigen::Vector3d& anchor);

/**
 * Umbrella-operator smoothing around a seam.
 *
 * The support is every vertex within `rings` edge hops of `seam_vertices`,
 * minus vertices whose label is listed in `frozen`. Each iteration applies
 * v <- v + weight * (mean(neighbours) - v) to the support simultaneously.
 */
Mesh smooth_seam(const Mesh& mesh, std::span<const int> seam_vertices, int rings, int iterations, double weight,
                 std::span<const PartLabel> frozen = {});

} // namespace maskshape
