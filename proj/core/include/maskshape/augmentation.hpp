#pragma once

#include "maskshape/mesh.hpp"
#include "maskshape/raster.hpp"
#include "maskshape/shape_space.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace maskshape {

struct KMeansResult
{
    std::vector<Coefficients> centroids;
    std::vector<int> assignments;
    /// Sum of squared distances after each Lloyd update, one entry per iteration.
    std::vector<double> inertia;
    int iterations = 0;
    bool converged = false;
};

/**
 * Lloyd's algorithm with k-means++ seeding.
 *
 * Ties in the nearest-centroid search go to the lowest index. A cluster that
 * empties is re-seeded with the point farthest from its current centroid.
 * Stops on an assignment fixpoint or after `max_iter` updates.
 */
KMeansResult kmeans(std::span<const Coefficients> points, int k, std::uint64_t seed, int max_iter = 100);

/// (1 - t) c_a + t c_b with a != b uniform and t uniform in (0, 1).
std::vector<Coefficients> interpolate_centroids(std::span<const Coefficients> centroids, std::size_t count,
                                                std::uint64_t seed);

struct RatioGaussian
{
    double mu = 0.0;
    double sigma = 0.0;
};

/// Sample mean and the n - 1 standard deviation.
RatioGaussian fit_ratio_gaussian(std::span<const double> ratios);

/// mu - 3 sigma, mu - 1.5 sigma, mu, mu + 1.5 sigma, mu + 3 sigma.
std::array<double, 5> ratio_levels(const RatioGaussian& g);

enum class MergeGroup { Legs, Arms, Head };
inline constexpr std::array<MergeGroup, 3> kMergeGroups{MergeGroup::Legs, MergeGroup::Arms, MergeGroup::Head};

std::string_view to_string(MergeGroup group);
std::vector<PartLabel> group_parts(MergeGroup group);

/// Height extent of the vertices carrying any of `parts` over the torso height extent.
double part_ratio(const Mesh& mesh, std::span<const PartLabel> parts);

struct SegmentMergeTrace
{
    /// Donor limbs translated onto the seams, before any scaling.
    Mesh copied;
    /// After scaling and seam blending, before projection into the space.
    Mesh merged;
};

/**
 * Replaces `parts` of `torso_donor` with those of `limb_donor`, rescales them
 * so part_ratio() equals `ratio`, blends the seams and projects the result
 * into `space`.
 *
 * Each limb is translated so its seam-ring centroid lands on the torso
 * donor's and is scaled about that centroid. The head is never copied; it is
 * scaled in place about the neck ring. Seam blending smooths the displacement
 * from the torso donor, so the torso stays bit-identical and a self-merge at
 * the mesh's own ratio is a pure projection.
 */
Mesh segment_merge(const Mesh& torso_donor, const Mesh& limb_donor, std::span<const PartLabel> parts, double ratio,
                   const ShapeSpace& space, SegmentMergeTrace* trace = nullptr);

/// One project_subspace() result per entry of `k_list`.
std::vector<Mesh> regularize_variants(const ShapeSpace& space, const Mesh& mesh, std::span<const int> k_list);

enum class Provenance { Original, Interp, Gaussian, SegMerge, Gan };
inline constexpr int kProvenanceCount = 5;

std::string_view to_string(Provenance p);
Provenance parse_provenance(std::string_view token);

enum class Split { Train, Test };
std::string_view to_string(Split s);

struct SourceSet
{
    Provenance provenance;
    std::vector<Coefficients> items;
};

struct DatasetEntry
{
    std::string id;
    int row = 0;
    Provenance provenance = Provenance::Original;
    Split split = Split::Train;
};

struct DatasetManifest
{
    std::vector<DatasetEntry> entries;
    /// One row of coefficients per entry, in entry order.
    Eigen::MatrixXd coefficients;
    std::uint64_t seed = 0;
    std::array<std::size_t, kProvenanceCount> counts{};

    std::vector<int> rows(Split split) const;
};

/// Largest-remainder apportionment of `total` items by `proportions`.
std::array<std::size_t, kProvenanceCount> apportion(std::size_t total,
                                                     const std::array<double, kProvenanceCount>& proportions);

/**
 * Takes the first counts[p] items of each source and splits the result with a
 * seeded shuffle; round(train_fraction * total) entries go to training.
 */
DatasetManifest assemble_dataset(const ShapeSpace& space, std::span<const SourceSet> sources,
                                 const std::array<std::size_t, kProvenanceCount>& counts, std::uint64_t split_seed,
                                 double train_fraction = 0.8);

std::string mask_file_name(const std::string& id, View view);

/// dataset.json plus coefficients.sfmt in `dir`.
void save_dataset(const DatasetManifest& manifest, const std::filesystem::path& dir);
DatasetManifest load_dataset(const std::filesystem::path& dir);

} // namespace maskshape
