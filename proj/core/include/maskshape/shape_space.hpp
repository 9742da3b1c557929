#pragma once

#include "maskshape/mesh.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>

namespace maskshape {

/// k PCA weights of one body.
using Coefficients = Eigen::VectorXd;

/**
 * Linear body model B = mean + basis * phi.
 *
 * `basis` is 3N x k with orthonormal columns sorted by descending variance.
 * `topology` carries the shared triangle list and part labels used by decode().
 */
struct ShapeSpace
{
    Eigen::VectorXd mean;
    Eigen::MatrixXd basis;
    Eigen::VectorXd variances;
    Mesh topology;
    std::string template_ref;

    int k() const { return static_cast<int>(basis.cols()); }
    std::size_t vertex_count() const { return topology.vertex_count(); }

    /// Sum of the per-coordinate sample variances of the fitting set.
    double total_variance = 0.0;
};

/// Stable identifier of a triangle list plus labels.
std::string topology_id(const Mesh& mesh);

/**
 * Fits the space from height-normalized meshes of one topology.
 *
 * Eigenvectors come from the count x count Gram matrix of the centred data
 * (sample covariance divisor count - 1). Each column's largest-magnitude
 * entry is made positive. Components with zero variance are completed to an
 * orthonormal set.
 */
ShapeSpace fit_shape_space(std::span<const Mesh> meshes, int k);

Mesh decode(const ShapeSpace& space, const Coefficients& phi);
Coefficients encode(const ShapeSpace& space, const Mesh& mesh);
Coefficients encode_flat(const ShapeSpace& space, const Eigen::VectorXd& flat);

/// decode() of the first k_sub coefficients of encode(mesh), the rest zeroed.
Mesh project_subspace(const ShapeSpace& space, const Mesh& mesh, int k_sub);

/// phi_i ~ Normal(0, scale^2 * variance_i), independent per component.
Coefficients sample_gaussian(const ShapeSpace& space, std::uint64_t seed, double scale);

/// Cumulative explained variance per component.
Eigen::VectorXd cumulative_variance(const ShapeSpace& space);

/// space.json + mean/basis/variances SFMT blobs + topology.obj in `dir`.
void save_shape_space(const ShapeSpace& space, const std::filesystem::path& dir);
ShapeSpace load_shape_space(const std::filesystem::path& dir);

} // namespace maskshape
