#include "maskshape/augmentation.hpp"

#include "maskshape/sfmt.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

namespace maskshape {

namespace {

constexpr std::array<Provenance, kProvenanceCount> kAllProvenances{
    Provenance::Original, Provenance::Interp, Provenance::Gaussian, Provenance::SegMerge, Provenance::Gan};

struct Nearest
{
    int index;
    double distance2;
};

Nearest nearest_centroid(const Coefficients& p, const std::vector<Coefficients>& centroids)
{
    Nearest best{0, (p - centroids[0]).squaredNorm()};
    for (std::size_t c = 1; c < centroids.size(); ++c) {
        const double d = (p - centroids[c]).squaredNorm();
        if (d < best.distance2) {
            best = {static_cast<int>(c), d};
        }
    }
    return best;
}

std::vector<Coefficients> kmeanspp_seeds(std::span<const Coefficients> points, int k, std::mt19937_64& rng)
{
    const std::size_t n = points.size();
    std::vector<Coefficients> seeds;
    std::vector<char> taken(n, 0);
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    const std::size_t first = pick(rng);
    seeds.push_back(points[first]);
    taken[first] = 1;

    std::vector<double> d2(n);
    for (std::size_t i = 0; i < n; ++i) {
        d2[i] = (points[i] - seeds[0]).squaredNorm();
    }
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    while (static_cast<int>(seeds.size()) < k) {
        const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
        std::size_t chosen = n;
        if (total > 0.0) {
            const double target = unit(rng) * total;
            double running = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                running += d2[i];
                if (d2[i] > 0.0 && running > target) {
                    chosen = i;
                    break;
                }
            }
            if (chosen == n) {
                // Roundoff left target at the very end of the distribution.
                for (std::size_t i = n; i-- > 0;) {
                    if (d2[i] > 0.0) {
                        chosen = i;
                        break;
                    }
                }
            }
        } else {
            // Every remaining point duplicates a seed.
            chosen = static_cast<std::size_t>(std::find(taken.begin(), taken.end(), 0) - taken.begin());
        }
        seeds.push_back(points[chosen]);
        taken[chosen] = 1;
        for (std::size_t i = 0; i < n; ++i) {
            d2[i] = std::min(d2[i], (points[i] - seeds.back()).squaredNorm());
        }
    }
    return seeds;
}

double height_extent(const Mesh& mesh, std::span<const int> subset)
{
    const auto [lo, hi] = height_range(mesh, subset);
    return hi - lo;
}

std::vector<int> seam_ring(const Mesh& mesh, PartLabel part)
{
    auto ring = boundary_ring(mesh, part, PartLabel::Torso);
    if (ring.empty()) {
        throw std::invalid_argument("segment_merge: part '" + std::string(to_string(part)) + "' has no torso seam");
    }
    return ring;
}

// Rescales every part about its own seam centroid until part_ratio() hits
// `target`. A common factor for all parts makes the ratio piecewise linear
// in that factor, so the fixed-point update converges in a few steps.
Mesh match_ratio(Mesh mesh, std::span<const PartLabel> parts, const std::vector<Eigen::Vector3d>& anchors,
                 double target)
{
    for (int it = 0; it < 100; ++it) {
        const double r = part_ratio(mesh, parts);
        if (std::abs(r - target) <= 1e-12 * target) {
            return mesh;
        }
        const double factor = target / r;
        for (std::size_t p = 0; p < parts.size(); ++p) {
            mesh = scale_part(mesh, parts[p], factor, anchors[p]);
        }
    }
    throw std::runtime_error("segment_merge: part ratio did not converge");
}

} // namespace

KMeansResult kmeans(std::span<const Coefficients> points, int k, std::uint64_t seed, int max_iter)
{
    if (points.empty()) {
        throw std::invalid_argument("kmeans: empty input");
    }
    if (k < 1 || static_cast<std::size_t>(k) > points.size()) {
        throw std::invalid_argument("kmeans: K must lie in [1, point count]");
    }
    if (max_iter < 1) {
        throw std::invalid_argument("kmeans: max_iter must be at least 1");
    }
    const auto dim = points[0].size();
    for (const auto& p : points) {
        if (p.size() != dim) {
            throw std::invalid_argument("kmeans: points differ in dimension");
        }
    }

    std::mt19937_64 rng(seed);
    KMeansResult result;
    result.centroids = kmeanspp_seeds(points, k, rng);
    const std::size_t n = points.size();
    result.assignments.assign(n, -1);

    for (int it = 0; it < max_iter; ++it) {
        bool changed = false;
        for (std::size_t i = 0; i < n; ++i) {
            const int c = nearest_centroid(points[i], result.centroids).index;
            changed = changed || c != result.assignments[i];
            result.assignments[i] = c;
        }
        if (!changed) {
            result.converged = true;
            break;
        }

        std::vector<Coefficients> sums(static_cast<std::size_t>(k), Coefficients::Zero(dim));
        std::vector<int> sizes(static_cast<std::size_t>(k), 0);
        for (std::size_t i = 0; i < n; ++i) {
            sums[result.assignments[i]] += points[i];
            ++sizes[result.assignments[i]];
        }
        for (int c = 0; c < k; ++c) {
            if (sizes[c] > 0) {
                result.centroids[c] = sums[c] / static_cast<double>(sizes[c]);
            }
        }
        for (int c = 0; c < k; ++c) {
            if (sizes[c] > 0) {
                continue;
            }
            std::size_t far = 0;
            double far_d = -1.0;
            for (std::size_t i = 0; i < n; ++i) {
                if (sizes[result.assignments[i]] < 2) {
                    continue;
                }
                const double d = (points[i] - result.centroids[result.assignments[i]]).squaredNorm();
                if (d > far_d) {
                    far = i;
                    far_d = d;
                }
            }
            --sizes[result.assignments[far]];
            result.assignments[far] = c;
            sizes[c] = 1;
            result.centroids[c] = points[far];
        }

        double inertia = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            inertia += (points[i] - result.centroids[result.assignments[i]]).squaredNorm();
        }
        result.inertia.push_back(inertia);
        result.iterations = it + 1;
    }
    return result;
}

std::vector<Coefficients> interpolate_centroids(std::span<const Coefficients> centroids, std::size_t count,
                                                std::uint64_t seed)
{
    if (centroids.size() < 2) {
        throw std::invalid_argument("interpolate_centroids: need at least two centroids");
    }
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> first(0, centroids.size() - 1);
    std::uniform_int_distribution<std::size_t> second(0, centroids.size() - 2);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<Coefficients> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t a = first(rng);
        std::size_t b = second(rng);
        if (b >= a) {
            ++b;
        }
        double t = unit(rng);
        while (t == 0.0) {
            t = unit(rng);
        }
        out.push_back((1.0 - t) * centroids[a] + t * centroids[b]);
    }
    return out;
}

RatioGaussian fit_ratio_gaussian(std::span<const double> ratios)
{
    if (ratios.size() < 2) {
        throw std::invalid_argument("fit_ratio_gaussian: need at least two values");
    }
    const double n = static_cast<double>(ratios.size());
    const double mu = std::accumulate(ratios.begin(), ratios.end(), 0.0) / n;
    double ss = 0.0;
    for (double r : ratios) {
        ss += (r - mu) * (r - mu);
    }
    RatioGaussian g{mu, std::sqrt(ss / (n - 1.0))};
    if (!std::isfinite(g.mu) || !std::isfinite(g.sigma)) {
        throw std::invalid_argument("fit_ratio_gaussian: non-finite input");
    }
    return g;
}

std::array<double, 5> ratio_levels(const RatioGaussian& g)
{
    return {g.mu - 3.0 * g.sigma, g.mu - 1.5 * g.sigma, g.mu, g.mu + 1.5 * g.sigma, g.mu + 3.0 * g.sigma};
}

std::string_view to_string(MergeGroup group)
{
    switch (group) {
    case MergeGroup::Legs: return "legs";
    case MergeGroup::Arms: return "arms";
    case MergeGroup::Head: return "head";
    }
    return "?";
}

std::vector<PartLabel> group_parts(MergeGroup group)
{
    switch (group) {
    case MergeGroup::Legs: return {PartLabel::LeftLeg, PartLabel::RightLeg};
    case MergeGroup::Arms: return {PartLabel::LeftArm, PartLabel::RightArm};
    case MergeGroup::Head: return {PartLabel::Head};
    }
    return {};
}

double part_ratio(const Mesh& mesh, std::span<const PartLabel> parts)
{
    const auto limb = vertices_with_labels(mesh, parts);
    const auto torso = vertices_with_label(mesh, PartLabel::Torso);
    if (limb.empty() || torso.empty()) {
        throw std::invalid_argument("part_ratio: missing part or torso vertices");
    }
    return height_extent(mesh, limb) / height_extent(mesh, torso);
}

Mesh segment_merge(const Mesh& torso_donor, const Mesh& limb_donor, std::span<const PartLabel> parts, double ratio,
                   const ShapeSpace& space, SegmentMergeTrace* trace)
{
    if (!(ratio > 0.0) || !std::isfinite(ratio)) {
        throw std::invalid_argument("segment_merge: ratio must be positive");
    }
    if (!torso_donor.same_topology(limb_donor) || torso_donor.labels != limb_donor.labels ||
        !torso_donor.same_topology(space.topology)) {
        throw std::invalid_argument("segment_merge: topology mismatch");
    }
    if (parts.empty() || std::find(parts.begin(), parts.end(), PartLabel::Torso) != parts.end()) {
        throw std::invalid_argument("segment_merge: parts must be non-empty and exclude the torso");
    }

    Mesh copied = torso_donor;
    std::vector<Eigen::Vector3d> anchors;
    std::vector<int> seam;
    for (PartLabel part : parts) {
        const auto ring = seam_ring(torso_donor, part);
        seam.insert(seam.end(), ring.begin(), ring.end());
        anchors.push_back(centroid(torso_donor, ring));
        if (part == PartLabel::Head) {
            continue;
        }
        const Eigen::Vector3d shift = anchors.back() - centroid(limb_donor, ring);
        for (std::size_t i = 0; i < copied.vertices.size(); ++i) {
            if (copied.labels[i] == part) {
                copied.vertices[i] = limb_donor.vertices[i] + shift;
            }
        }
    }

    const Mesh scaled = match_ratio(copied, parts, anchors, ratio);

    // Blend the seam by smoothing the displacement away from the torso donor.
    // The torso is frozen at zero displacement, so near the seam the new
    // limb eases into the torso donor's own limb shape.
    Mesh displacement = scaled;
    for (std::size_t i = 0; i < displacement.vertices.size(); ++i) {
        displacement.vertices[i] = scaled.vertices[i] - torso_donor.vertices[i];
    }
    const std::array<PartLabel, 1> frozen{PartLabel::Torso};
    displacement = smooth_seam(displacement, seam, 2, 3, 0.5, frozen);
    Mesh blended = torso_donor;
    for (std::size_t i = 0; i < blended.vertices.size(); ++i) {
        if (blended.labels[i] != PartLabel::Torso) {
            blended.vertices[i] = torso_donor.vertices[i] + displacement.vertices[i];
        }
    }
    Mesh merged = match_ratio(std::move(blended), parts, anchors, ratio);

    Mesh result = decode(space, encode(space, merged));
    if (trace != nullptr) {
        trace->copied = std::move(copied);
        trace->merged = std::move(merged);
    }
    return result;
}

std::vector<Mesh> regularize_variants(const ShapeSpace& space, const Mesh& mesh, std::span<const int> k_list)
{
    std::vector<Mesh> out;
    out.reserve(k_list.size());
    for (int k : k_list) {
        if (k < 1 || k > space.k()) {
            throw std::invalid_argument("regularize_variants: k' out of range");
        }
    }
    for (int k : k_list) {
        out.push_back(project_subspace(space, mesh, k));
    }
    return out;
}

std::string_view to_string(Provenance p)
{
    switch (p) {
    case Provenance::Original: return "original";
    case Provenance::Interp: return "interp";
    case Provenance::Gaussian: return "gaussian";
    case Provenance::SegMerge: return "segmerge";
    case Provenance::Gan: return "gan";
    }
    return "?";
}

Provenance parse_provenance(std::string_view token)
{
    for (Provenance p : kAllProvenances) {
        if (to_string(p) == token) {
            return p;
        }
    }
    throw std::invalid_argument("unknown provenance '" + std::string(token) + "'");
}

std::string_view to_string(Split s)
{
    return s == Split::Train ? "train" : "test";
}

std::vector<int> DatasetManifest::rows(Split split) const
{
    std::vector<int> out;
    for (const auto& e : entries) {
        if (e.split == split) {
            out.push_back(e.row);
        }
    }
    return out;
}

std::array<std::size_t, kProvenanceCount> apportion(std::size_t total,
                                                     const std::array<double, kProvenanceCount>& proportions)
{
    const double sum = std::accumulate(proportions.begin(), proportions.end(), 0.0);
    if (!(sum > 0.0) || std::any_of(proportions.begin(), proportions.end(), [](double p) { return p < 0.0; })) {
        throw std::invalid_argument("apportion: proportions must be non-negative with a positive sum");
    }
    std::array<std::size_t, kProvenanceCount> counts{};
    std::array<double, kProvenanceCount> remainder{};
    std::size_t assigned = 0;
    for (int i = 0; i < kProvenanceCount; ++i) {
        const double exact = static_cast<double>(total) * proportions[i] / sum;
        counts[i] = static_cast<std::size_t>(std::floor(exact));
        remainder[i] = exact - std::floor(exact);
        assigned += counts[i];
    }
    std::array<int, kProvenanceCount> order{};
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return remainder[a] > remainder[b]; });
    for (std::size_t i = 0; assigned < total; ++i, ++assigned) {
        ++counts[order[i % kProvenanceCount]];
    }
    return counts;
}

DatasetManifest assemble_dataset(const ShapeSpace& space, std::span<const SourceSet> sources,
                                 const std::array<std::size_t, kProvenanceCount>& counts, std::uint64_t split_seed,
                                 double train_fraction)
{
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
        throw std::invalid_argument("assemble_dataset: train fraction must lie in (0, 1)");
    }
    const auto find_source = [&](Provenance p) -> const SourceSet* {
        for (const auto& s : sources) {
            if (s.provenance == p) {
                return &s;
            }
        }
        return nullptr;
    };
    const SourceSet* originals = find_source(Provenance::Original);
    if (originals == nullptr || originals->items.empty()) {
        throw std::invalid_argument("assemble_dataset: the original source is empty");
    }

    DatasetManifest manifest;
    manifest.seed = split_seed;
    manifest.counts = counts;
    const std::size_t total = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
    manifest.coefficients.resize(static_cast<Eigen::Index>(total), space.k());
    int row = 0;
    for (Provenance p : kAllProvenances) {
        const std::size_t want = counts[static_cast<int>(p)];
        if (want == 0) {
            continue;
        }
        const SourceSet* src = find_source(p);
        if (src == nullptr || src->items.size() < want) {
            throw std::invalid_argument("assemble_dataset: source '" + std::string(to_string(p)) +
                                        "' has fewer items than requested");
        }
        for (std::size_t i = 0; i < want; ++i) {
            const auto& phi = src->items[i];
            if (phi.size() != space.k() || !phi.allFinite()) {
                throw std::invalid_argument("assemble_dataset: coefficient vector does not match the space");
            }
            manifest.coefficients.row(row) = phi.transpose();
            char id[16];
            std::snprintf(id, sizeof id, "b%05d", row);
            manifest.entries.push_back({id, row, p, Split::Test});
            ++row;
        }
    }

    std::vector<std::size_t> order(total);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(split_seed);
    for (std::size_t i = total; i > 1; --i) {
        std::uniform_int_distribution<std::size_t> pick(0, i - 1);
        std::swap(order[i - 1], order[pick(rng)]);
    }
    const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(total)));
    for (std::size_t i = 0; i < n_train; ++i) {
        manifest.entries[order[i]].split = Split::Train;
    }
    return manifest;
}

std::string mask_file_name(const std::string& id, View view)
{
    return id + (view == View::Frontal ? "_f.png" : "_l.png");
}

void save_dataset(const DatasetManifest& manifest, const std::filesystem::path& dir)
{
    std::filesystem::create_directories(dir);
    nlohmann::json counts = nlohmann::json::object();
    for (Provenance p : kAllProvenances) {
        counts[std::string(to_string(p))] = manifest.counts[static_cast<int>(p)];
    }
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& e : manifest.entries) {
        entries.push_back({
            {"id", e.id},
            {"coefficients", {{"file", "coefficients.sfmt"}, {"row", e.row}}},
            {"masks",
             {{"frontal", "masks/" + mask_file_name(e.id, View::Frontal)},
              {"lateral", "masks/" + mask_file_name(e.id, View::Lateral)}}},
            {"provenance", to_string(e.provenance)},
            {"split", to_string(e.split)},
        });
    }
    const nlohmann::json doc = {
        {"format", "maskshape-dataset"},
        {"version", 1},
        {"seed", manifest.seed},
        {"k", manifest.coefficients.cols()},
        {"counts", counts},
        {"entries", entries},
    };
    write_text_file(dir / "dataset.json", doc.dump(2) + "\n");

    SfmtBlob blob{SfmtDtype::F64,
                  {static_cast<std::uint64_t>(manifest.coefficients.rows()),
                   static_cast<std::uint64_t>(manifest.coefficients.cols())},
                  {}};
    blob.values.reserve(static_cast<std::size_t>(manifest.coefficients.size()));
    for (Eigen::Index r = 0; r < manifest.coefficients.rows(); ++r) {
        for (Eigen::Index c = 0; c < manifest.coefficients.cols(); ++c) {
            blob.values.push_back(manifest.coefficients(r, c));
        }
    }
    write_sfmt(dir / "coefficients.sfmt", blob);
}

DatasetManifest load_dataset(const std::filesystem::path& dir)
{
    const auto doc = nlohmann::json::parse(read_text_file(dir / "dataset.json"));
    if (doc.value("format", "") != "maskshape-dataset") {
        throw std::runtime_error("not a dataset manifest: " + (dir / "dataset.json").string());
    }
    DatasetManifest manifest;
    manifest.seed = doc.at("seed").get<std::uint64_t>();
    for (Provenance p : kAllProvenances) {
        manifest.counts[static_cast<int>(p)] = doc.at("counts").value(std::string(to_string(p)), std::size_t{0});
    }
    const SfmtBlob blob = read_sfmt(dir / "coefficients.sfmt");
    if (blob.dims.size() != 2) {
        throw std::runtime_error("coefficients.sfmt must be a matrix");
    }
    const auto rows = static_cast<Eigen::Index>(blob.dims[0]);
    const auto cols = static_cast<Eigen::Index>(blob.dims[1]);
    manifest.coefficients.resize(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) {
            manifest.coefficients(r, c) = blob.values[static_cast<std::size_t>(r * cols + c)];
        }
    }
    for (const auto& e : doc.at("entries")) {
        DatasetEntry entry;
        entry.id = e.at("id").get<std::string>();
        entry.row = e.at("coefficients").at("row").get<int>();
        entry.provenance = parse_provenance(e.at("provenance").get<std::string>());
        entry.split = e.at("split").get<std::string>() == "train" ? Split::Train : Split::Test;
        if (entry.row < 0 || entry.row >= rows) {
            throw std::runtime_error("dataset entry row out of range: " + entry.id);
        }
        manifest.entries.push_back(std::move(entry));
    }
    return manifest;
}

} // namespace maskshape
