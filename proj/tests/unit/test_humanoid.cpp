#include "maskshape/humanoid.hpp"

#include <doctest.h>

#include <map>
#include <queue>

using namespace maskshape;

namespace {

bool label_connected(const Mesh& m, PartLabel label)
{
    const auto members = vertices_with_label(m, label);
    if (members.empty()) {
        return false;
    }
    const auto nbrs = vertex_neighbors(m);
    std::vector<char> seen(m.vertex_count(), 0);
    std::queue<int> q;
    q.push(members.front());
    seen[members.front()] = 1;
    std::size_t reached = 0;
    while (!q.empty()) {
        const int v = q.front();
        q.pop();
        ++reached;
        for (int w : nbrs[v]) {
            if (!seen[w] && m.labels[w] == label) {
                seen[w] = 1;
                q.push(w);
            }
        }
    }
    return reached == members.size();
}

} // namespace

TEST_CASE("template is a closed labelled humanoid of moderate size")
{
    const Mesh t = template_mesh();
    CHECK(t.vertex_count() >= 500);
    CHECK(t.vertex_count() <= 5000);
    CHECK_NOTHROW(t.validate());

    std::map<std::pair<int, int>, int> edges;
    for (const auto& tri : t.triangles) {
        for (int e = 0; e < 3; ++e) {
            int a = tri[e], b = tri[(e + 1) % 3];
            if (a > b) {
                std::swap(a, b);
            }
            ++edges[{a, b}];
        }
    }
    for (const auto& [edge, uses] : edges) {
        CHECK_MESSAGE(uses == 2, "edge " << edge.first << "-" << edge.second);
    }

    for (int l = 0; l < kPartLabelCount; ++l) {
        CHECK_MESSAGE(label_connected(t, static_cast<PartLabel>(l)), to_string(static_cast<PartLabel>(l)));
    }
    const auto [lo, hi] = height_range(t);
    CHECK(lo == -1.0);
    CHECK(hi == 1.0);
}

TEST_CASE("all-zero controls reproduce the template")
{
    CHECK(build_humanoid(TemplateParams{}).vertices == template_mesh().vertices);
}

TEST_CASE("population is deterministic and shares the template topology")
{
    const auto a = generate_population(42, 6);
    const auto b = generate_population(42, 6);
    const Mesh t = template_mesh();
    REQUIRE(a.size() == 6);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].vertices == b[i].vertices);
        CHECK(a[i].same_topology(t));
        CHECK(a[i].labels == t.labels);
    }
    CHECK(generate_population(43, 1).front().vertices != a.front().vertices);
    CHECK_THROWS_AS(generate_population(1, 0), std::invalid_argument);
}

TEST_CASE("leg-length control is monotone in leg height extent")
{
    TemplateParams longer, shorter;
    longer[ShapeControl::LegLength] = 1.0;
    shorter[ShapeControl::LegLength] = -1.0;
    const Mesh a = build_humanoid(longer);
    const Mesh b = build_humanoid(shorter);
    const auto legs_a = vertices_with_label(a, PartLabel::LeftLeg);
    const auto legs_b = vertices_with_label(b, PartLabel::LeftLeg);
    const auto [a_lo, a_hi] = height_range(a, legs_a);
    const auto [b_lo, b_hi] = height_range(b, legs_b);
    CHECK(a_hi - a_lo > b_hi - b_lo);
}

TEST_CASE("sampled controls are clipped and validated")
{
    std::mt19937_64 rng(9);
    for (int i = 0; i < 200; ++i) {
        CHECK_NOTHROW(sample_template_params(rng).validate());
    }
    TemplateParams bad;
    bad[ShapeControl::HeadScale] = 1.5;
    CHECK_THROWS_AS(build_humanoid(bad), std::invalid_argument);
}
