#pragma once

#include "maskshape/mesh.hpp"
#include "maskshape/raster.hpp"

#include <Eigen/Core>

#include <array>
#include <span>
#include <string_view>
#include <vector>

namespace maskshape {

inline constexpr int kJointCount = 16;

/// head, neck, chest, pelvis, then left/right shoulder, elbow, wrist, hip, knee, ankle.
extern const std::array<std::string_view, kJointCount> kJointNames;

/// A joint as the centroid of a fixed vertex set.
struct JointDefinition
{
    std::string_view name;
    std::vector<int> vertices;
};

using JointSet = std::vector<Eigen::Vector3d>;

/**
 * Joint definitions from the part labels of a template.
 *
 * The neck is the torso ring around the head seam. Shoulders and hips use the
 * limb's own first ring; the torso-side ring lies flat on the shoulder
 * surface, so its centroid is not inside the body. The pelvis is the torso
 * ring just above the leg seams. Limbs are walked ring by
 * ring away from the seam: the last full ring gives the wrist or ankle and
 * the middle ring the elbow or knee.
 */
std::vector<JointDefinition> derive_joint_annotations(const Mesh& templ);

JointSet annotate_joints(const Mesh& mesh, std::span<const JointDefinition> defs);

/// Dense 3J x 3N matrix with joints_flat = W * flatten(mesh).
Eigen::MatrixXd joint_weight_matrix(std::span<const JointDefinition> defs, std::size_t vertex_count);

/// Affine map from flattened vertices to stacked joint coordinates.
struct JointRegressor
{
    Eigen::VectorXd vertex_mean;
    Eigen::VectorXd joint_mean;
    /// 3J x 3N.
    Eigen::MatrixXd weights;

    JointSet predict(const Mesh& mesh) const;
};

/**
 * Ridge regression centred on the training means, solved in the dual
 * (mesh-by-mesh) form because meshes are far fewer than coordinates.
 * Iterated-Tikhonov refinements then remove the ridge bias on the training set.
 */
JointRegressor fit_joint_regressor(std::span<const Mesh> meshes, std::span<const JointDefinition> defs,
                                   double ridge = 1e-6);

/// Same orthographic transform as the rasterizer.
std::vector<Eigen::Vector2d> project_joints(const JointSet& joints, const ViewSpec& spec, int resolution);

/// Number of projected joints whose pixel is set in `mask`.
int joints_inside(const std::vector<Eigen::Vector2d>& pixels, const BinaryMask& mask);

} // namespace maskshape
