#include "maskshape/humanoid.hpp"
#include "maskshape/mesh.hpp"
#include "maskshape/sfmt.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>

using namespace maskshape;
using maskshape::testing::TempDir;

namespace {

void write_file(const std::filesystem::path& p, const std::string& text)
{
    std::ofstream out(p);
    out << text;
}

Mesh flat_grid(int n)
{
    Mesh m;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            m.vertices.emplace_back(i * 0.1, j * 0.1, 0.25 * i - 0.5 * j);
        }
    }
    for (int i = 0; i + 1 < n; ++i) {
        for (int j = 0; j + 1 < n; ++j) {
            const int a = i * n + j;
            m.triangles.push_back({a, a + n, a + 1});
            m.triangles.push_back({a + 1, a + n, a + n + 1});
        }
    }
    m.labels.assign(m.vertices.size(), PartLabel::Torso);
    return m;
}

double max_abs_diff(const Mesh& a, const Mesh& b)
{
    double d = 0.0;
    for (std::size_t i = 0; i < a.vertices.size(); ++i) {
        d = std::max(d, (a.vertices[i] - b.vertices[i]).cwiseAbs().maxCoeff());
    }
    return d;
}

} // namespace

TEST_CASE("load_obj reads a single triangle")
{
    TempDir dir("obj");
    write_file(dir / "tri.obj", "# one face\nv 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n");
    const Mesh m = load_obj(dir / "tri.obj");
    CHECK(m.vertex_count() == 3);
    REQUIRE(m.triangles.size() == 1);
    CHECK(m.triangles[0] == Triangle{0, 1, 2});
    CHECK(m.labels == std::vector<PartLabel>(3, PartLabel::Torso));
}

TEST_CASE("load_obj accepts slash and negative index forms")
{
    TempDir dir("obj");
    write_file(dir / "tri.obj", "v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nf 1/1 2/1/1 -1//1\n");
    const Mesh m = load_obj(dir / "tri.obj");
    CHECK(m.triangles[0] == Triangle{0, 1, 2});
}

TEST_CASE("load_obj rejects bad input")
{
    TempDir dir("obj");
    write_file(dir / "quad.obj", "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n");
    CHECK_THROWS_WITH_AS(load_obj(dir / "quad.obj"), doctest::Contains("non-triangle face"), std::runtime_error);

    write_file(dir / "range.obj", "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 4\n");
    CHECK_THROWS_WITH_AS(load_obj(dir / "range.obj"), doctest::Contains("out of range"), std::runtime_error);

    CHECK_THROWS(load_obj(dir / "missing.obj"));

    write_file(dir / "lab.obj", "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n");
    write_file(dir / "lab.labels", "head\ntorso\n");
    CHECK_THROWS(load_obj(dir / "lab.obj"));
}

TEST_CASE("save_obj and load_obj round-trip the template exactly")
{
    TempDir dir("obj");
    const Mesh t = template_mesh();
    save_obj(t, dir / "t.obj");
    const Mesh back = load_obj(dir / "t.obj");
    CHECK(back.vertices == t.vertices);
    CHECK(back.triangles == t.triangles);
    CHECK(back.labels == t.labels);

    save_obj(back, dir / "t2.obj");
    CHECK(read_file_bytes(dir / "t.obj") == read_file_bytes(dir / "t2.obj"));
    CHECK(read_file_bytes(dir / "t.labels") == read_file_bytes(dir / "t2.labels"));
}

TEST_CASE("round trip of random coordinates stays below 1e-8")
{
    TempDir dir("obj");
    Mesh m = flat_grid(4);
    std::mt19937_64 rng(3);
    std::normal_distribution<double> nd(0.0, 100.0);
    for (auto& v : m.vertices) {
        v = Eigen::Vector3d(nd(rng), nd(rng), nd(rng)) / 7.0;
    }
    save_obj(m, dir / "r.obj");
    CHECK(max_abs_diff(load_obj(dir / "r.obj"), m) < 1e-8);
}

TEST_CASE("empty mesh writes a valid empty OBJ")
{
    TempDir dir("obj");
    save_obj(Mesh{}, dir / "empty.obj");
    const Mesh m = load_obj(dir / "empty.obj");
    CHECK(m.vertex_count() == 0);
    CHECK(m.triangles.empty());
}

TEST_CASE("normalize_height hand cases")
{
    Mesh m;
    m.labels.assign(2, PartLabel::Torso);

    m.vertices = {{0, 0, -1}, {0.3, 0.2, 1}};
    Mesh n = normalize_height(m);
    CHECK(max_abs_diff(n, m) < 1e-12);

    m.vertices = {{0, 0, 0}, {0, 0, 2}};
    n = normalize_height(m);
    CHECK(n.vertices[0].z() == -1.0);
    CHECK(n.vertices[1].z() == 1.0);

    // Heights {10, 14} with width extent 2: scale 1/2.
    m.vertices = {{0, 0, 10}, {2, 0, 14}};
    n = normalize_height(m);
    CHECK(n.vertices[0].z() == -1.0);
    CHECK(n.vertices[1].z() == 1.0);
    CHECK(std::abs((n.vertices[1].x() - n.vertices[0].x()) - 1.0) < 1e-12);

    m.vertices = {{0, 0, 1}, {1, 1, 1}};
    CHECK_THROWS_AS(normalize_height(m), std::invalid_argument);
}

TEST_CASE("normalize_height is idempotent on random meshes")
{
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(-5.0, 5.0);
    for (int trial = 0; trial < 20; ++trial) {
        Mesh m = flat_grid(3);
        for (auto& v : m.vertices) {
            v = Eigen::Vector3d(u(rng), u(rng), u(rng));
        }
        const Mesh once = normalize_height(m);
        const auto [lo, hi] = height_range(once);
        CHECK(std::abs(lo + 1.0) < 1e-9);
        CHECK(std::abs(hi - 1.0) < 1e-9);
        CHECK(max_abs_diff(normalize_height(once), once) < 1e-12);
        CHECK(once.triangles == m.triangles);
    }
}

TEST_CASE("scale_part")
{
    const Mesh t = template_mesh();
    CHECK(scale_part(t, PartLabel::LeftArm, 1.0, Eigen::Vector3d(0.1, 0.2, 0.3)).vertices == t.vertices);

    const Mesh s = scale_part(t, PartLabel::LeftArm, 2.0, Eigen::Vector3d::Zero());
    const auto arm = vertices_with_label(t, PartLabel::LeftArm);
    REQUIRE(arm.size() >= 3);
    for (int i : {arm.front(), arm[arm.size() / 2], arm.back()}) {
        CHECK(s.vertices[i] == 2.0 * t.vertices[i]);
    }
    for (std::size_t i = 0; i < t.vertex_count(); ++i) {
        if (t.labels[i] != PartLabel::LeftArm) {
            CHECK(s.vertices[i] == t.vertices[i]);
        }
    }
    CHECK(s.triangles == t.triangles);
    CHECK_THROWS_AS(scale_part(t, PartLabel::Head, 0.0, Eigen::Vector3d::Zero()), std::invalid_argument);
    CHECK_THROWS_AS(scale_part(t, PartLabel::Head, -1.0, Eigen::Vector3d::Zero()), std::invalid_argument);
    CHECK_THROWS_AS(scale_part(t, PartLabel::Head, 11.0, Eigen::Vector3d::Zero()), std::invalid_argument);
}

TEST_CASE("smooth_seam identity and fixed-point cases")
{
    const Mesh t = template_mesh();
    const auto seam = boundary_ring(t, PartLabel::LeftLeg);
    CHECK(smooth_seam(t, seam, 2, 0, 0.5).vertices == t.vertices);

    // A plane is a fixed point of the umbrella operator at interior vertices.
    const Mesh g = flat_grid(7);
    const std::vector<int> centre{3 * 7 + 3};
    const Mesh sg = smooth_seam(g, centre, 1, 5, 0.7);
    CHECK(max_abs_diff(sg, g) < 1e-9);

    CHECK_THROWS_AS(smooth_seam(t, std::vector<int>{}, 1, 1, 0.5), std::invalid_argument);
}

TEST_CASE("smooth_seam moves a spike to its neighbour centroid")
{
    Mesh m;
    const int ring = 6;
    m.vertices.emplace_back(0, 0, 1);  // spike
    for (int i = 0; i < ring; ++i) {
        const double a = 2.0 * M_PI * i / ring;
        m.vertices.emplace_back(std::cos(a), std::sin(a), 0.0);
    }
    for (int i = 0; i < ring; ++i) {
        m.triangles.push_back({0, 1 + i, 1 + (i + 1) % ring});
    }
    m.labels.assign(m.vertices.size(), PartLabel::Torso);
    const std::vector<int> seam{0};
    const Mesh s = smooth_seam(m, seam, 0, 1, 1.0);
    CHECK((s.vertices[0] - Eigen::Vector3d::Zero()).norm() < 1e-12);
    for (int i = 1; i <= ring; ++i) {
        CHECK(s.vertices[i] == m.vertices[i]);
    }
}

TEST_CASE("smooth_seam touches only the declared support")
{
    const Mesh t = generate_population(5, 1).front();
    const auto seam = boundary_ring(t, PartLabel::RightArm);
    const std::vector<PartLabel> frozen{PartLabel::Torso};
    const Mesh s = smooth_seam(t, seam, 2, 3, 0.5, frozen);
    const auto nbrs = vertex_neighbors(t);
    std::vector<int> hops(t.vertex_count(), -1);
    std::vector<int> frontier(seam.begin(), seam.end());
    for (int v : frontier) {
        hops[v] = 0;
    }
    for (int r = 0; r < 2; ++r) {
        std::vector<int> next;
        for (int v : frontier) {
            for (int w : nbrs[v]) {
                if (hops[w] < 0) {
                    hops[w] = r + 1;
                    next.push_back(w);
                }
            }
        }
        frontier = next;
    }
    for (std::size_t i = 0; i < t.vertex_count(); ++i) {
        if (hops[i] < 0 || t.labels[i] == PartLabel::Torso) {
            CHECK(s.vertices[i] == t.vertices[i]);
        }
    }
    CHECK(s.triangles == t.triangles);
}
