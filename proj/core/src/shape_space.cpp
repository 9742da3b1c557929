#include "maskshape/shape_space.hpp"

#include "maskshape/sfmt.hpp"

#include <Eigen/Eigenvalues>
#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <random>
#include <stdexcept>

namespace maskshape {

namespace {

void require_topology(const ShapeSpace& space, const Mesh& mesh)
{
    if (mesh.vertex_count() != space.vertex_count() || mesh.triangles != space.topology.triangles) {
        throw std::invalid_argument("mesh topology does not match the shape space");
    }
}

void orthonormalize_columns(Eigen::MatrixXd& basis)
{
    // Two passes of modified Gram-Schmidt keep the columns orthonormal to
    // machine precision even where the Gram route loses a few digits.
    for (int pass = 0; pass < 2; ++pass) {
        for (Eigen::Index i = 0; i < basis.cols(); ++i) {
            for (Eigen::Index j = 0; j < i; ++j) {
                basis.col(i) -= basis.col(j).dot(basis.col(i)) * basis.col(j);
            }
            basis.col(i).normalize();
        }
    }
}

void fix_sign(Eigen::Ref<Eigen::VectorXd> column)
{
    Eigen::Index arg = 0;
    double best = -1.0;
    for (Eigen::Index i = 0; i < column.size(); ++i) {
        if (std::abs(column[i]) > best) {
            best = std::abs(column[i]);
            arg = i;
        }
    }
    if (column[arg] < 0.0) {
        column = -column;
    }
}

} // namespace

std::string topology_id(const Mesh& mesh)
{
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](std::uint64_t v) {
        for (int b = 0; b < 8; ++b) {
            h ^= (v >> (8 * b)) & 0xFF;
            h *= 1099511628211ULL;
        }
    };
    mix(mesh.vertex_count());
    for (const auto& t : mesh.triangles) {
        mix(static_cast<std::uint64_t>(t[0]));
        mix(static_cast<std::uint64_t>(t[1]));
        mix(static_cast<std::uint64_t>(t[2]));
    }
    for (auto label : mesh.labels) {
        mix(static_cast<std::uint64_t>(label));
    }
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

ShapeSpace fit_shape_space(std::span<const Mesh> meshes, int k)
{
    if (meshes.size() < 2) {
        throw std::invalid_argument("fit_shape_space needs at least two meshes");
    }
    const auto& ref = meshes.front();
    for (const auto& m : meshes) {
        if (!m.same_topology(ref)) {
            throw std::invalid_argument("fit_shape_space: topology mismatch");
        }
    }
    const Eigen::Index dim = 3 * static_cast<Eigen::Index>(ref.vertex_count());
    const Eigen::Index count = static_cast<Eigen::Index>(meshes.size());
    if (k < 1 || k > std::min<Eigen::Index>(dim, count - 1)) {
        throw std::invalid_argument("fit_shape_space: k out of range");
    }

    Eigen::MatrixXd data(count, dim);
    for (Eigen::Index i = 0; i < count; ++i) {
        data.row(i) = flatten(meshes[static_cast<std::size_t>(i)]).transpose();
    }
    ShapeSpace space;
    space.mean = data.colwise().mean().transpose();
    data.rowwise() -= space.mean.transpose();

    const double denom = static_cast<double>(count - 1);
    const Eigen::MatrixXd gram = (data * data.transpose()) / denom;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(gram);
    if (solver.info() != Eigen::Success) {
        throw std::runtime_error("fit_shape_space: eigendecomposition failed");
    }
    const Eigen::VectorXd evals = solver.eigenvalues();
    const Eigen::MatrixXd evecs = solver.eigenvectors();
    const double lambda_max = std::max(evals[count - 1], 0.0);
    const double zero_tol = 1e-14 * std::max(lambda_max, 1e-300);

    space.basis.resize(dim, k);
    space.variances.resize(k);
    int populated = 0;
    for (int c = 0; c < k; ++c) {
        const Eigen::Index src = count - 1 - c;
        const double lambda = evals[src];
        if (lambda > zero_tol) {
            space.variances[c] = lambda;
            space.basis.col(c) = data.transpose() * evecs.col(src) / std::sqrt(denom * lambda);
            ++populated;
        } else {
            space.variances[c] = 0.0;
            space.basis.col(c).setZero();
        }
    }
    {
        Eigen::MatrixXd head = space.basis.leftCols(populated);
        orthonormalize_columns(head);
        space.basis.leftCols(populated) = head;
    }
    // Complete zero-variance components with canonical directions.
    Eigen::Index candidate = 0;
    for (int c = populated; c < k; ++c) {
        for (; candidate < dim; ++candidate) {
            Eigen::VectorXd v = Eigen::VectorXd::Unit(dim, candidate);
            for (int pass = 0; pass < 2; ++pass) {
                for (int j = 0; j < c; ++j) {
                    v -= space.basis.col(j).dot(v) * space.basis.col(j);
                }
            }
            if (v.norm() > 0.5) {
                space.basis.col(c) = v.normalized();
                ++candidate;
                break;
            }
        }
    }
    for (int c = 0; c < k; ++c) {
        fix_sign(space.basis.col(c));
    }
    space.total_variance = std::max(0.0, gram.trace());
    space.topology = ref;
    space.template_ref = topology_id(ref);
    return space;
}

Mesh decode(const ShapeSpace& space, const Coefficients& phi)
{
    if (phi.size() != space.k()) {
        throw std::invalid_argument("decode: coefficient length does not match k");
    }
    return with_positions(space.topology, space.mean + space.basis * phi);
}

Coefficients encode_flat(const ShapeSpace& space, const Eigen::VectorXd& flat)
{
    if (flat.size() != space.mean.size()) {
        throw std::invalid_argument("encode: vertex vector length mismatch");
    }
    return space.basis.transpose() * (flat - space.mean);
}

Coefficients encode(const ShapeSpace& space, const Mesh& mesh)
{
    require_topology(space, mesh);
    return encode_flat(space, flatten(mesh));
}

Mesh project_subspace(const ShapeSpace& space, const Mesh& mesh, int k_sub)
{
    if (k_sub < 1 || k_sub > space.k()) {
        throw std::invalid_argument("project_subspace: k_sub out of range");
    }
    Coefficients phi = encode(space, mesh);
    phi.tail(space.k() - k_sub).setZero();
    return decode(space, phi);
}

Coefficients sample_gaussian(const ShapeSpace& space, std::uint64_t seed, double scale)
{
    if (!(scale > 0.0)) {
        throw std::invalid_argument("sample_gaussian: scale must be positive");
    }
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Coefficients phi(space.k());
    for (int i = 0; i < space.k(); ++i) {
        phi[i] = normal(rng) * scale * std::sqrt(space.variances[i]);
    }
    return phi;
}

Eigen::VectorXd cumulative_variance(const ShapeSpace& space)
{
    Eigen::VectorXd out(space.k());
    double acc = 0.0;
    for (int i = 0; i < space.k(); ++i) {
        acc += space.variances[i];
        out[i] = acc;
    }
    return out;
}

void save_shape_space(const ShapeSpace& space, const std::filesystem::path& dir)
{
    std::filesystem::create_directories(dir);
    nlohmann::json manifest = {
        {"k", space.k()},
        {"N", space.vertex_count()},
        {"template_ref", space.template_ref},
        {"total_variance", space.total_variance},
        {"mean", "mean.sfmt"},
        {"basis", "basis.sfmt"},
        {"variances", "variances.sfmt"},
        {"topology", "topology.obj"},
    };
    write_text_file(dir / "space.json", manifest.dump(2) + "\n");

    SfmtBlob mean{SfmtDtype::F64, {static_cast<std::uint64_t>(space.mean.size())},
                  {space.mean.data(), space.mean.data() + space.mean.size()}};
    write_sfmt(dir / "mean.sfmt", mean);

    // Row-major 3N x k.
    SfmtBlob basis{SfmtDtype::F64,
                   {static_cast<std::uint64_t>(space.basis.rows()), static_cast<std::uint64_t>(space.basis.cols())},
                   {}};
    basis.values.reserve(static_cast<std::size_t>(space.basis.size()));
    for (Eigen::Index r = 0; r < space.basis.rows(); ++r) {
        for (Eigen::Index c = 0; c < space.basis.cols(); ++c) {
            basis.values.push_back(space.basis(r, c));
        }
    }
    write_sfmt(dir / "basis.sfmt", basis);

    SfmtBlob var{SfmtDtype::F64, {static_cast<std::uint64_t>(space.variances.size())},
                 {space.variances.data(), space.variances.data() + space.variances.size()}};
    write_sfmt(dir / "variances.sfmt", var);
    save_obj(space.topology, dir / "topology.obj");
}

ShapeSpace load_shape_space(const std::filesystem::path& dir)
{
    const auto manifest = nlohmann::json::parse(read_text_file(dir / "space.json"));
    ShapeSpace space;
    space.topology = load_obj(dir / manifest.at("topology").get<std::string>());
    space.template_ref = manifest.at("template_ref").get<std::string>();
    space.total_variance = manifest.value("total_variance", 0.0);
    if (topology_id(space.topology) != space.template_ref) {
        throw std::runtime_error("shape space topology does not match its template_ref");
    }
    const int k = manifest.at("k").get<int>();
    const auto n = manifest.at("N").get<std::size_t>();
    if (n != space.topology.vertex_count()) {
        throw std::runtime_error("shape space N does not match topology");
    }
    const auto mean = read_sfmt(dir / manifest.at("mean").get<std::string>());
    const auto basis = read_sfmt(dir / manifest.at("basis").get<std::string>());
    const auto var = read_sfmt(dir / manifest.at("variances").get<std::string>());
    const auto dim = static_cast<Eigen::Index>(3 * n);
    if (mean.values.size() != static_cast<std::size_t>(dim) || basis.dims.size() != 2 ||
        basis.dims[0] != static_cast<std::uint64_t>(dim) || basis.dims[1] != static_cast<std::uint64_t>(k) ||
        var.values.size() != static_cast<std::size_t>(k)) {
        throw std::runtime_error("shape space blobs have inconsistent sizes");
    }
    space.mean = Eigen::Map<const Eigen::VectorXd>(mean.values.data(), dim);
    space.basis = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        basis.values.data(), dim, k);
    space.variances = Eigen::Map<const Eigen::VectorXd>(var.values.data(), k);
    return space;
}

} // namespace maskshape
