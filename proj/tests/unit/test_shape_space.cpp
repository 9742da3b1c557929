#include "maskshape/humanoid.hpp"
#include "maskshape/shape_space.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace maskshape;
using maskshape::testing::TempDir;

namespace {

// Cyclic Jacobi eigenvalue iteration on a dense symmetric matrix; independent of Eigen's solvers.
std::vector<double> jacobi_eigenvalues(std::vector<std::vector<double>> a)
{
    const std::size_t n = a.size();
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                off += a[p][q] * a[p][q];
            }
        }
        if (off < 1e-30) {
            break;
        }
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                if (std::abs(a[p][q]) < 1e-300) {
                    continue;
                }
                const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a[k][p], akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a[p][k], aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    std::vector<double> ev(n);
    for (std::size_t i = 0; i < n; ++i) {
        ev[i] = a[i][i];
    }
    std::sort(ev.rbegin(), ev.rend());
    return ev;
}

Mesh small_mesh(int n)
{
    Mesh m;
    for (int i = 0; i < n; ++i) {
        m.vertices.emplace_back(0, 0, 0);
    }
    for (int i = 0; i + 2 < n; ++i) {
        m.triangles.push_back({i, i + 1, i + 2});
    }
    m.labels.assign(n, PartLabel::Torso);
    return m;
}

std::vector<Mesh> random_small_meshes(int count, int n, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, 1.0);
    std::vector<Mesh> out;
    for (int c = 0; c < count; ++c) {
        Mesh m = small_mesh(n);
        for (auto& v : m.vertices) {
            v = Eigen::Vector3d(nd(rng), nd(rng), nd(rng));
        }
        out.push_back(normalize_height(m));
    }
    return out;
}

double max_vertex_error(const Mesh& a, const Mesh& b)
{
    return (flatten(a) - flatten(b)).cwiseAbs().maxCoeff();
}

const std::vector<Mesh>& population()
{
    static const std::vector<Mesh> bodies = generate_population(2024, 24);
    return bodies;
}

} // namespace

TEST_CASE("two meshes give a rank-one space")
{
    const auto meshes = random_small_meshes(2, 8, 1);
    const ShapeSpace s = fit_shape_space(meshes, 1);
    const Eigen::VectorXd diff = flatten(meshes[0]) - flatten(meshes[1]);
    CHECK(std::abs(s.variances[0] - diff.squaredNorm() / 2.0) < 1e-10 * diff.squaredNorm());
    CHECK(std::abs(std::abs(s.basis.col(0).dot(diff.normalized())) - 1.0) < 1e-12);
    CHECK((s.mean - 0.5 * (flatten(meshes[0]) + flatten(meshes[1]))).norm() < 1e-12);
}

TEST_CASE("identical meshes give zero variances")
{
    const auto one = random_small_meshes(1, 6, 2).front();
    const std::vector<Mesh> same(4, one);
    const ShapeSpace s = fit_shape_space(same, 3);
    CHECK(s.variances.cwiseAbs().maxCoeff() < 1e-20);
    CHECK((s.mean - flatten(one)).norm() < 1e-15);
    CHECK((s.basis.transpose() * s.basis - Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("fit rejects bad arguments")
{
    auto meshes = random_small_meshes(3, 6, 3);
    CHECK_THROWS_AS(fit_shape_space(meshes, 0), std::invalid_argument);
    CHECK_THROWS_AS(fit_shape_space(meshes, 3), std::invalid_argument);
    CHECK_THROWS_AS(fit_shape_space(std::span<const Mesh>(meshes.data(), 1), 1), std::invalid_argument);
    meshes[1].triangles.pop_back();
    CHECK_THROWS_AS(fit_shape_space(meshes, 1), std::invalid_argument);
}

TEST_CASE("variances match a brute-force covariance eigendecomposition")
{
    for (int trial = 0; trial < 10; ++trial) {
        const int count = 3 + trial % 8;
        const int n = 4 + trial % 9;
        const auto meshes = random_small_meshes(count, n, 100 + trial);
        const int k = std::min(3 * n, count - 1);
        const ShapeSpace s = fit_shape_space(meshes, k);

        const std::size_t d = 3 * static_cast<std::size_t>(n);
        Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
        for (const auto& m : meshes) {
            mean += flatten(m);
        }
        mean /= count;
        std::vector<std::vector<double>> cov(d, std::vector<double>(d, 0.0));
        for (const auto& m : meshes) {
            const Eigen::VectorXd x = flatten(m) - mean;
            for (std::size_t i = 0; i < d; ++i) {
                for (std::size_t j = 0; j < d; ++j) {
                    cov[i][j] += x[i] * x[j] / (count - 1);
                }
            }
        }
        const auto ev = jacobi_eigenvalues(cov);
        for (int i = 0; i < k; ++i) {
            CHECK_MESSAGE(std::abs(s.variances[i] - ev[i]) <= 1e-8 * std::max(ev[0], 1e-300),
                          "trial " << trial << " component " << i);
        }
    }
}

TEST_CASE("population space invariants")
{
    const auto& bodies = population();
    const int k = static_cast<int>(bodies.size()) - 1;
    const ShapeSpace s = fit_shape_space(bodies, k);

    const Eigen::MatrixXd gram = s.basis.transpose() * s.basis;
    CHECK((gram - Eigen::MatrixXd::Identity(k, k)).cwiseAbs().maxCoeff() < 1e-8);
    for (int i = 1; i < k; ++i) {
        CHECK(s.variances[i] <= s.variances[i - 1]);
    }
    CHECK(s.variances.minCoeff() >= 0.0);
    for (int c = 0; c < k; ++c) {
        Eigen::Index arg;
        s.basis.col(c).cwiseAbs().maxCoeff(&arg);
        CHECK(s.basis(arg, c) > 0.0);
    }

    SUBCASE("full-rank round trip")
    {
        for (const auto& m : bodies) {
            CHECK(max_vertex_error(decode(s, encode(s, m)), m) < 1e-6);
        }
    }
    SUBCASE("cumulative variance reaches the total")
    {
        const Eigen::VectorXd cum = cumulative_variance(s);
        for (int i = 1; i < k; ++i) {
            CHECK(cum[i] >= cum[i - 1]);
        }
        CHECK(std::abs(cum[k - 1] - s.total_variance) <= 1e-8 * s.total_variance);
    }
}

TEST_CASE("encode and decode identities")
{
    const ShapeSpace s = fit_shape_space(population(), 10);
    CHECK(encode(s, decode(s, Coefficients::Zero(10))).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((flatten(decode(s, Coefficients::Zero(10))) - s.mean).norm() == 0.0);

    std::mt19937_64 rng(5);
    std::normal_distribution<double> nd(0.0, 0.05);
    for (int trial = 0; trial < 20; ++trial) {
        Coefficients phi(10);
        for (int i = 0; i < 10; ++i) {
            phi[i] = nd(rng);
        }
        CHECK((encode(s, decode(s, phi)) - phi).cwiseAbs().maxCoeff() < 1e-8);

        const double t = nd(rng) * 10.0;
        Coefficients e0 = Coefficients::Zero(10);
        e0[0] = t;
        CHECK((flatten(decode(s, e0)) - (s.mean + t * s.basis.col(0))).cwiseAbs().maxCoeff() < 1e-12);

        Coefficients phi2(10);
        for (int i = 0; i < 10; ++i) {
            phi2[i] = nd(rng);
        }
        const double alpha = 0.3;
        const Eigen::VectorXd lhs = flatten(decode(s, alpha * phi + (1 - alpha) * phi2));
        const Eigen::VectorXd rhs = alpha * flatten(decode(s, phi)) + (1 - alpha) * flatten(decode(s, phi2));
        CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-9);
    }

    // A body outside the span projects orthogonally.
    const Mesh outsider = generate_population(777, 1).front();
    const Eigen::VectorXd residual = flatten(outsider) - flatten(decode(s, encode(s, outsider)));
    CHECK(residual.norm() > 1e-6);
    CHECK((s.basis.transpose() * residual).cwiseAbs().maxCoeff() < 1e-6);

    CHECK_THROWS_AS(decode(s, Coefficients::Zero(9)), std::invalid_argument);
    CHECK_THROWS_AS(encode(s, random_small_meshes(1, 5, 1)[0]), std::invalid_argument);
}

TEST_CASE("project_subspace")
{
    const ShapeSpace s = fit_shape_space(population(), 15);
    const Mesh m = generate_population(99, 1).front();
    CHECK(max_vertex_error(project_subspace(s, m, 15), decode(s, encode(s, m))) < 1e-12);
    double previous = std::numeric_limits<double>::infinity();
    for (int k = 1; k <= 15; ++k) {
        const Mesh p = project_subspace(s, m, k);
        CHECK(max_vertex_error(project_subspace(s, p, k), p) < 1e-9);
        const double err = (flatten(p) - flatten(m)).norm();
        CHECK(err <= previous + 1e-12);
        previous = err;
    }
    CHECK_THROWS_AS(project_subspace(s, m, 0), std::invalid_argument);
    CHECK_THROWS_AS(project_subspace(s, m, 16), std::invalid_argument);
}

TEST_CASE("sample_gaussian matches stored variances")
{
    const ShapeSpace s = fit_shape_space(population(), 8);
    CHECK(sample_gaussian(s, 3, 1.0) == sample_gaussian(s, 3, 1.0));
    CHECK(sample_gaussian(s, 3, 1e-12).cwiseAbs().maxCoeff() < 1e-9);
    CHECK_THROWS_AS(sample_gaussian(s, 3, 0.0), std::invalid_argument);

    const int n = 10000;
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(8), sq = Eigen::VectorXd::Zero(8);
    for (int i = 0; i < n; ++i) {
        const Coefficients phi = sample_gaussian(s, 1000 + i, 1.0);
        sum += phi;
        sq += phi.cwiseProduct(phi);
    }
    for (int i = 0; i < 8; ++i) {
        const double mean = sum[i] / n;
        const double var = (sq[i] - n * mean * mean) / (n - 1);
        CHECK(std::abs(var - s.variances[i]) < 0.1 * s.variances[i]);
    }
}

TEST_CASE("shape space persists losslessly")
{
    TempDir dir("space");
    const ShapeSpace s = fit_shape_space(population(), 6);
    save_shape_space(s, dir.path());
    const ShapeSpace back = load_shape_space(dir.path());
    CHECK(back.k() == 6);
    CHECK(back.template_ref == s.template_ref);
    CHECK(back.mean == s.mean);
    CHECK(back.basis == s.basis);
    CHECK(back.variances == s.variances);
    CHECK(back.topology.triangles == s.topology.triangles);
    CHECK(back.topology.labels == s.topology.labels);
}
