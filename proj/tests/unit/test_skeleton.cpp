#include "maskshape/humanoid.hpp"
#include "maskshape/skeleton.hpp"

#include <doctest.h>

#include <cmath>

using namespace maskshape;

namespace {

Mesh blend(const Mesh& a, const Mesh& b, double alpha)
{
    return with_positions(a, alpha * flatten(a) + (1.0 - alpha) * flatten(b));
}

double max_joint_error(const JointSet& a, const JointSet& b)
{
    double worst = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) {
        worst = std::max(worst, (a[j] - b[j]).norm());
    }
    return worst;
}

} // namespace

TEST_CASE("sixteen joints are defined from label rings")
{
    const Mesh templ = template_mesh();
    const auto defs = derive_joint_annotations(templ);
    REQUIRE(defs.size() == 16);
    for (std::size_t j = 0; j < defs.size(); ++j) {
        CHECK(defs[j].name == kJointNames[j]);
        CHECK(!defs[j].vertices.empty());
    }
    const auto joints = annotate_joints(templ, defs);
    const auto neck = boundary_ring(templ, PartLabel::Head);
    CHECK((joints[1] - centroid(templ, neck)).norm() == 0.0);

    // Anatomical ordering along the height axis.
    CHECK(joints[0].z() > joints[1].z());
    CHECK(joints[1].z() > joints[3].z());
    CHECK(joints[10].z() > joints[12].z());
    CHECK(joints[12].z() > joints[14].z());
    CHECK(joints[4].x() * joints[5].x() < 0.0);

    Mesh unlabeled = templ;
    std::fill(unlabeled.labels.begin(), unlabeled.labels.end(), PartLabel::Torso);
    CHECK_THROWS_AS(derive_joint_annotations(unlabeled), std::invalid_argument);
}

TEST_CASE("joints are linear in the vertices")
{
    const auto bodies = generate_population(2, 2);
    const auto defs = derive_joint_annotations(bodies[0]);
    const auto ja = annotate_joints(bodies[0], defs);
    const auto jb = annotate_joints(bodies[1], defs);
    for (double alpha : {0.0, 0.3, 0.5, 1.0}) {
        const auto jm = annotate_joints(blend(bodies[0], bodies[1], alpha), defs);
        for (std::size_t j = 0; j < jm.size(); ++j) {
            CHECK((jm[j] - (alpha * ja[j] + (1.0 - alpha) * jb[j])).norm() < 1e-12);
        }
    }
    const Eigen::MatrixXd w = joint_weight_matrix(defs, bodies[0].vertex_count());
    const Eigen::VectorXd flat = w * flatten(bodies[1]);
    for (std::size_t j = 0; j < jb.size(); ++j) {
        CHECK((flat.segment<3>(3 * static_cast<Eigen::Index>(j)) - jb[j]).norm() < 1e-12);
    }
}

TEST_CASE("joint regressor interpolates training meshes and generalizes to held-out bodies")
{
    const Mesh templ = template_mesh();
    const auto defs = derive_joint_annotations(templ);
    auto train = generate_population(100, 150);
    train.push_back(templ);
    const auto reg = fit_joint_regressor(train, defs);

    double residual = 0.0;
    for (const auto& m : train) {
        residual = std::max(residual, max_joint_error(reg.predict(m), annotate_joints(m, defs)));
    }
    CHECK(residual < 1e-6);
    CHECK(max_joint_error(reg.predict(templ), annotate_joints(templ, defs)) < 1e-6);

    // Affine combinations of training meshes have affine-combined joints.
    const Mesh mix = with_positions(templ, 0.2 * flatten(train[3]) + 0.5 * flatten(train[40]) + 0.3 * flatten(train[77]));
    CHECK(max_joint_error(reg.predict(mix), annotate_joints(mix, defs)) < 1e-6);

    double held_out = 0.0;
    for (const auto& m : generate_population(555, 50)) {
        const auto [lo, hi] = height_range(m);
        held_out = std::max(held_out, max_joint_error(reg.predict(m), annotate_joints(m, defs)) / (hi - lo));
    }
    CHECK(held_out < 0.01);

    CHECK_THROWS_AS(fit_joint_regressor(std::span(train).first(1), defs), std::invalid_argument);
}

TEST_CASE("projected joints follow the rasterizer's framing")
{
    const ViewSpec spec{View::Frontal, 0.05};
    const JointSet centre{Eigen::Vector3d::Zero()};
    const auto px = project_joints(centre, spec, 128);
    CHECK(std::abs(px[0].x() - 64.0) <= 0.5);
    CHECK(std::abs(px[0].y() - 64.0) <= 0.5);

    const Mesh body = generate_population(8, 1)[0];
    const auto defs = derive_joint_annotations(body);
    const auto joints = annotate_joints(body, defs);
    // One pixel to the right in the frontal image is -x in the body frame.
    const double unit = 1.0 / pixels_per_unit(spec, 128);
    Mesh moved = body;
    for (auto& v : moved.vertices) {
        v.x() -= unit;
    }
    const auto before = project_joints(joints, spec, 128);
    const auto after = project_joints(annotate_joints(moved, defs), spec, 128);
    for (std::size_t j = 0; j < before.size(); ++j) {
        CHECK(after[j].x() - before[j].x() == doctest::Approx(1.0).epsilon(1e-9));
        CHECK(after[j].y() == doctest::Approx(before[j].y()).epsilon(1e-12));
    }
}

TEST_CASE("projected joints land inside the body's own masks")
{
    const auto defs = derive_joint_annotations(template_mesh());
    int worst_frontal = 16, worst_lateral = 16;
    for (const auto& body : generate_population(31, 20)) {
        const auto joints = annotate_joints(body, defs);
        for (View view : {View::Frontal, View::Lateral}) {
            const auto mask = render_view(body, view, 128);
            const int inside = joints_inside(project_joints(joints, {view, 0.05}, 128), mask);
            (view == View::Frontal ? worst_frontal : worst_lateral) =
                std::min(view == View::Frontal ? worst_frontal : worst_lateral, inside);
        }
    }
    CHECK(worst_frontal >= 15);
    MESSAGE("fewest joints inside: frontal " << worst_frontal << ", lateral " << worst_lateral);
}
