#include "maskshape/skeleton.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace maskshape {

const std::array<std::string_view, kJointCount> kJointNames{
    "head",        "neck",       "chest",       "pelvis",    "left_shoulder", "right_shoulder",
    "left_elbow",  "right_elbow", "left_wrist", "right_wrist", "left_hip",      "right_hip",
    "left_knee",   "right_knee", "left_ankle",  "right_ankle",
};

namespace {

struct LimbRings
{
    /// Limb vertices touching the torso.
    std::vector<int> seam;
    std::vector<int> middle;
    std::vector<int> extremity;
};

// Breadth-first levels through the part, starting next to its torso seam.
LimbRings limb_rings(const Mesh& mesh, const std::vector<std::vector<int>>& adj, PartLabel part)
{
    LimbRings rings;
    const auto torso_side = boundary_ring(mesh, part);
    if (torso_side.empty()) {
        throw std::invalid_argument("derive_joint_annotations: part '" + std::string(to_string(part)) +
                                    "' has no torso seam");
    }
    std::vector<int> level(mesh.vertices.size(), -1);
    std::vector<std::vector<int>> levels(1);
    for (int s : torso_side) {
        for (int w : adj[s]) {
            if (mesh.labels[w] == part && level[w] < 0) {
                level[w] = 0;
                levels[0].push_back(w);
            }
        }
    }
    while (!levels.back().empty()) {
        std::vector<int> next;
        for (int v : levels.back()) {
            for (int w : adj[v]) {
                if (mesh.labels[w] == part && level[w] < 0) {
                    level[w] = static_cast<int>(levels.size());
                    next.push_back(w);
                }
            }
        }
        levels.push_back(std::move(next));
    }
    levels.pop_back();

    // The tip of a limb is a fan apex; the extremity is the last level that is still a ring.
    int last = -1;
    for (int i = 0; i < static_cast<int>(levels.size()); ++i) {
        if (levels[i].size() >= 3) {
            last = i;
        }
    }
    if (last < 0) {
        throw std::invalid_argument("derive_joint_annotations: part '" + std::string(to_string(part)) +
                                    "' has no vertex rings");
    }
    rings.seam = levels[0];
    rings.extremity = levels[last];
    rings.middle = levels[last / 2];
    for (auto* r : {&rings.seam, &rings.extremity, &rings.middle}) {
        std::sort(r->begin(), r->end());
    }
    return rings;
}

std::vector<int> merged(std::initializer_list<const std::vector<int>*> sets)
{
    std::vector<int> out;
    for (const auto* s : sets) {
        out.insert(out.end(), s->begin(), s->end());
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

std::vector<int> merged_rings(const std::vector<int>& a, const std::vector<int>& b)
{
    return merged({&a, &b});
}

// Torso vertices one edge above the leg seams: the lowest full torso ring.
std::vector<int> pelvis_ring(const Mesh& mesh, const std::vector<std::vector<int>>& adj)
{
    auto seam = merged_rings(boundary_ring(mesh, PartLabel::LeftLeg), boundary_ring(mesh, PartLabel::RightLeg));
    std::vector<int> ring;
    for (int s : seam) {
        for (int w : adj[s]) {
            if (mesh.labels[w] == PartLabel::Torso && !std::binary_search(seam.begin(), seam.end(), w)) {
                ring.push_back(w);
            }
        }
    }
    std::sort(ring.begin(), ring.end());
    ring.erase(std::unique(ring.begin(), ring.end()), ring.end());
    if (ring.empty()) {
        throw std::invalid_argument("derive_joint_annotations: no torso ring above the legs");
    }
    return ring;
}

} // namespace

std::vector<JointDefinition> derive_joint_annotations(const Mesh& templ)
{
    templ.validate();
    const auto adj = vertex_neighbors(templ);
    const auto head = vertices_with_label(templ, PartLabel::Head);
    if (head.empty()) {
        throw std::invalid_argument("derive_joint_annotations: no head vertices");
    }
    const auto neck = boundary_ring(templ, PartLabel::Head);
    if (neck.empty()) {
        throw std::invalid_argument("derive_joint_annotations: no neck seam");
    }
    const auto la = limb_rings(templ, adj, PartLabel::LeftArm);
    const auto ra = limb_rings(templ, adj, PartLabel::RightArm);
    const auto ll = limb_rings(templ, adj, PartLabel::LeftLeg);
    const auto rl = limb_rings(templ, adj, PartLabel::RightLeg);

    std::vector<JointDefinition> defs{
        {kJointNames[0], head},
        {kJointNames[1], neck},
        {kJointNames[2], merged({&la.seam, &ra.seam, &neck})},
        {kJointNames[3], pelvis_ring(templ, adj)},
        {kJointNames[4], la.seam},
        {kJointNames[5], ra.seam},
        {kJointNames[6], la.middle},
        {kJointNames[7], ra.middle},
        {kJointNames[8], la.extremity},
        {kJointNames[9], ra.extremity},
        {kJointNames[10], ll.seam},
        {kJointNames[11], rl.seam},
        {kJointNames[12], ll.middle},
        {kJointNames[13], rl.middle},
        {kJointNames[14], ll.extremity},
        {kJointNames[15], rl.extremity},
    };
    return defs;
}

JointSet annotate_joints(const Mesh& mesh, std::span<const JointDefinition> defs)
{
    JointSet joints;
    joints.reserve(defs.size());
    for (const auto& d : defs) {
        joints.push_back(centroid(mesh, d.vertices));
    }
    return joints;
}

Eigen::MatrixXd joint_weight_matrix(std::span<const JointDefinition> defs, std::size_t vertex_count)
{
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(3 * static_cast<Eigen::Index>(defs.size()),
                                              3 * static_cast<Eigen::Index>(vertex_count));
    for (std::size_t j = 0; j < defs.size(); ++j) {
        const double share = 1.0 / static_cast<double>(defs[j].vertices.size());
        for (int v : defs[j].vertices) {
            for (int c = 0; c < 3; ++c) {
                w(3 * static_cast<Eigen::Index>(j) + c, 3 * v + c) += share;
            }
        }
    }
    return w;
}

JointSet JointRegressor::predict(const Mesh& mesh) const
{
    const Eigen::VectorXd x = flatten(mesh);
    if (x.size() != vertex_mean.size()) {
        throw std::invalid_argument("joint regressor: vertex count mismatch");
    }
    const Eigen::VectorXd y = joint_mean + weights * (x - vertex_mean);
    JointSet joints(static_cast<std::size_t>(y.size() / 3));
    for (std::size_t j = 0; j < joints.size(); ++j) {
        joints[j] = y.segment<3>(3 * static_cast<Eigen::Index>(j));
    }
    return joints;
}

JointRegressor fit_joint_regressor(std::span<const Mesh> meshes, std::span<const JointDefinition> defs, double ridge)
{
    if (meshes.size() < 2) {
        throw std::invalid_argument("fit_joint_regressor: need at least two meshes");
    }
    if (defs.empty() || !(ridge > 0.0)) {
        throw std::invalid_argument("fit_joint_regressor: need joint definitions and a positive ridge");
    }
    const auto m = static_cast<Eigen::Index>(meshes.size());
    const auto n3 = static_cast<Eigen::Index>(3 * meshes[0].vertices.size());
    const auto j3 = static_cast<Eigen::Index>(3 * defs.size());
    Eigen::MatrixXd x(m, n3);
    Eigen::MatrixXd y(m, j3);
    for (Eigen::Index i = 0; i < m; ++i) {
        const auto& mesh = meshes[static_cast<std::size_t>(i)];
        if (static_cast<Eigen::Index>(3 * mesh.vertices.size()) != n3) {
            throw std::invalid_argument("fit_joint_regressor: meshes differ in vertex count");
        }
        x.row(i) = flatten(mesh).transpose();
        const auto joints = annotate_joints(mesh, defs);
        for (std::size_t j = 0; j < joints.size(); ++j) {
            y.row(i).segment<3>(3 * static_cast<Eigen::Index>(j)) = joints[j].transpose();
        }
    }
    JointRegressor reg;
    reg.vertex_mean = x.colwise().mean().transpose();
    reg.joint_mean = y.colwise().mean().transpose();
    x.rowwise() -= reg.vertex_mean.transpose();
    y.rowwise() -= reg.joint_mean.transpose();

    const Eigen::MatrixXd gram = x * x.transpose();
    Eigen::MatrixXd regularized = gram;
    regularized.diagonal().array() += ridge;
    const Eigen::LDLT<Eigen::MatrixXd> solver(regularized);
    // Directions with Gram eigenvalue well below the ridge converge slowly,
    // so refine until the training residual stops shrinking.
    Eigen::MatrixXd dual = solver.solve(y);
    Eigen::MatrixXd residual = y - gram * dual;
    double norm = residual.norm();
    for (int it = 0; it < 200 && norm > 0.0; ++it) {
        const Eigen::MatrixXd next = dual + solver.solve(residual);
        const Eigen::MatrixXd next_residual = y - gram * next;
        const double next_norm = next_residual.norm();
        if (!(next_norm < 0.999 * norm)) {
            break;
        }
        dual = next;
        residual = next_residual;
        norm = next_norm;
    }
    reg.weights = dual.transpose() * x;
    return reg;
}

std::vector<Eigen::Vector2d> project_joints(const JointSet& joints, const ViewSpec& spec, int resolution)
{
    spec.validate();
    std::vector<Eigen::Vector2d> out;
    out.reserve(joints.size());
    for (const auto& j : joints) {
        out.push_back(project_to_image(j, spec, resolution));
    }
    return out;
}

int joints_inside(const std::vector<Eigen::Vector2d>& pixels, const BinaryMask& mask)
{
    int inside = 0;
    for (const auto& p : pixels) {
        const int c = static_cast<int>(std::floor(p.x()));
        const int r = static_cast<int>(std::floor(p.y()));
        if (r >= 0 && r < mask.resolution && c >= 0 && c < mask.resolution && mask.at(r, c) != 0) {
            ++inside;
        }
    }
    return inside;
}

} // namespace maskshape
