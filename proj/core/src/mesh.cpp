#include "maskshape/mesh.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

namespace maskshape {

namespace {

constexpr std::array<std::string_view, kPartLabelCount> kLabelTokens = {
    "head", "torso", "left_arm", "right_arm", "left_leg", "right_leg"};

std::string format_double(double v)
{
    std::array<char, 64> buf{};
    auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    if (ec != std::errc{}) {
        throw std::runtime_error("cannot format coordinate");
    }
    return {buf.data(), ptr};
}

double parse_double(std::string_view token, int line_no)
{
    double value = 0.0;
    auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
    if (ec != std::errc{} || ptr != token.data() + token.size()) {
        throw std::runtime_error("OBJ line " + std::to_string(line_no) + ": bad number '" + std::string(token) + "'");
    }
    return value;
}

std::vector<std::string_view> split_ws(std::string_view line)
{
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) {
            ++i;
        }
        std::size_t j = i;
        while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) {
            ++j;
        }
        if (j > i) {
            out.push_back(line.substr(i, j - i));
        }
        i = j;
    }
    return out;
}

} // namespace

std::string_view to_string(PartLabel label)
{
    return kLabelTokens.at(static_cast<std::size_t>(label));
}

PartLabel parse_part_label(std::string_view token)
{
    for (std::size_t i = 0; i < kLabelTokens.size(); ++i) {
        if (kLabelTokens[i] == token) {
            return static_cast<PartLabel>(i);
        }
    }
    throw std::invalid_argument("unknown part label '" + std::string(token) + "'");
}

bool Mesh::same_topology(const Mesh& other) const
{
    return vertices.size() == other.vertices.size() && triangles == other.triangles;
}

void Mesh::validate() const
{
    const int n = static_cast<int>(vertices.size());
    for (const auto& t : triangles) {
        for (int idx : t) {
            if (idx < 0 || idx >= n) {
                throw std::invalid_argument("triangle index out of range");
            }
        }
    }
    if (labels.size() != vertices.size()) {
        throw std::invalid_argument("label count does not match vertex count");
    }
}

Eigen::VectorXd flatten(const Mesh& mesh)
{
    Eigen::VectorXd flat(3 * static_cast<Eigen::Index>(mesh.vertices.size()));
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
        flat.segment<3>(3 * static_cast<Eigen::Index>(i)) = mesh.vertices[i];
    }
    return flat;
}

Mesh with_positions(const Mesh& topology, const Eigen::VectorXd& flat)
{
    if (flat.size() != 3 * static_cast<Eigen::Index>(topology.vertices.size())) {
        throw std::invalid_argument("position vector length does not match vertex count");
    }
    Mesh out = topology;
    for (std::size_t i = 0; i < out.vertices.size(); ++i) {
        out.vertices[i] = flat.segment<3>(3 * static_cast<Eigen::Index>(i));
    }
    return out;
}

std::filesystem::path label_sidecar_path(const std::filesystem::path& obj_path)
{
    auto p = obj_path;
    p.replace_extension(".labels");
    return p;
}

Mesh load_obj(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open " + path.string());
    }
    Mesh mesh;
    std::string line;
    int line_no = 0;
    std::vector<std::array<long, 3>> raw_faces;
    while (std::getline(in, line)) {
        ++line_no;
        const auto tokens = split_ws(line);
        if (tokens.empty() || tokens[0].starts_with('#')) {
            continue;
        }
        if (tokens[0] == "v") {
            if (tokens.size() < 4) {
                throw std::runtime_error("OBJ line " + std::to_string(line_no) + ": vertex needs 3 coordinates");
            }
            mesh.vertices.emplace_back(parse_double(tokens[1], line_no), parse_double(tokens[2], line_no),
                                       parse_double(tokens[3], line_no));
        } else if (tokens[0] == "f") {
            if (tokens.size() != 4) {
                throw std::runtime_error("OBJ line " + std::to_string(line_no) + ": non-triangle face");
            }
            std::array<long, 3> face{};
            for (int k = 0; k < 3; ++k) {
                auto tok = tokens[k + 1];
                tok = tok.substr(0, tok.find('/'));
                long idx = 0;
                auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), idx);
                if (ec != std::errc{} || ptr != tok.data() + tok.size() || idx == 0) {
                    throw std::runtime_error("OBJ line " + std::to_string(line_no) + ": bad face index");
                }
                // Negative indices are relative to the vertices read so far.
                face[k] = idx > 0 ? idx - 1 : static_cast<long>(mesh.vertices.size()) + idx;
            }
            raw_faces.push_back(face);
        }
    }
    const long n = static_cast<long>(mesh.vertices.size());
    for (const auto& f : raw_faces) {
        for (long idx : f) {
            if (idx < 0 || idx >= n) {
                throw std::runtime_error("OBJ face index out of range");
            }
        }
        mesh.triangles.push_back({static_cast<int>(f[0]), static_cast<int>(f[1]), static_cast<int>(f[2])});
    }

    const auto sidecar = label_sidecar_path(path);
    if (std::filesystem::exists(sidecar)) {
        std::ifstream lin(sidecar);
        std::string tok;
        while (lin >> tok) {
            mesh.labels.push_back(parse_part_label(tok));
        }
        if (mesh.labels.size() != mesh.vertices.size()) {
            throw std::runtime_error("label count " + std::to_string(mesh.labels.size()) + " does not match " +
                                     std::to_string(mesh.vertices.size()) + " vertices");
        }
    } else {
        mesh.labels.assign(mesh.vertices.size(), PartLabel::Torso);
    }
    return mesh;
}

std::string obj_text(const Mesh& mesh)
{
    mesh.validate();
    std::ostringstream obj;
    for (const auto& v : mesh.vertices) {
        obj << "v " << format_double(v.x()) << ' ' << format_double(v.y()) << ' ' << format_double(v.z()) << '\n';
    }
    for (const auto& t : mesh.triangles) {
        obj << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
    }
    return obj.str();
}

void save_obj(const Mesh& mesh, const std::filesystem::path& path)
{
    const std::string text = obj_text(mesh);
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::trunc);
    out << text;
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    std::ofstream lout(label_sidecar_path(path), std::ios::trunc);
    for (auto label : mesh.labels) {
        lout << to_string(label) << '\n';
    }
    if (!lout) {
        throw std::runtime_error("cannot write label sidecar for " + path.string());
    }
}

std::pair<double, double> height_range(const Mesh& mesh, std::span<const int> subset)
{
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    auto visit = [&](const Eigen::Vector3d& v) {
        lo = std::min(lo, v[kHeightAxis]);
        hi = std::max(hi, v[kHeightAxis]);
    };
    if (subset.empty()) {
        for (const auto& v : mesh.vertices) {
            visit(v);
        }
    } else {
        for (int i : subset) {
            visit(mesh.vertices.at(static_cast<std::size_t>(i)));
        }
    }
    return {lo, hi};
}

Mesh normalize_height(const Mesh& mesh)
{
    if (mesh.vertices.size() < 2) {
        throw std::invalid_argument("normalize_height needs at least two vertices");
    }
    const auto [lo, hi] = height_range(mesh);
    const double extent = hi - lo;
    if (!(extent > 0.0)) {
        throw std::invalid_argument("normalize_height: zero height extent");
    }
    const double scale = 2.0 / extent;
    const double mid = 0.5 * (lo + hi);
    Mesh out = mesh;
    for (auto& v : out.vertices) {
        v *= scale;
        v[kHeightAxis] = (v[kHeightAxis] - mid * scale);
    }
    // Pin the extremes exactly; the affine map above can be off by an ulp.
    for (std::size_t i = 0; i < out.vertices.size(); ++i) {
        if (mesh.vertices[i][kHeightAxis] == lo) {
            out.vertices[i][kHeightAxis] = -1.0;
        } else if (mesh.vertices[i][kHeightAxis] == hi) {
            out.vertices[i][kHeightAxis] = 1.0;
        }
    }
    return out;
}

std::vector<int> vertices_with_label(const Mesh& mesh, PartLabel label)
{
    std::vector<int> out;
    for (std::size_t i = 0; i < mesh.labels.size(); ++i) {
        if (mesh.labels[i] == label) {
            out.push_back(static_cast<int>(i));
        }
    }
    return out;
}

std::vector<int> vertices_with_labels(const Mesh& mesh, std::span<const PartLabel> labels)
{
    std::vector<int> out;
    for (std::size_t i = 0; i < mesh.labels.size(); ++i) {
        if (std::find(labels.begin(), labels.end(), mesh.labels[i]) != labels.end()) {
            out.push_back(static_cast<int>(i));
        }
    }
    return out;
}

std::vector<std::vector<int>> vertex_neighbors(const Mesh& mesh)
{
    std::vector<std::vector<int>> adj(mesh.vertices.size());
    for (const auto& t : mesh.triangles) {
        for (int k = 0; k < 3; ++k) {
            const int a = t[k];
            const int b = t[(k + 1) % 3];
            adj[a].push_back(b);
            adj[b].push_back(a);
        }
    }
    for (auto& list : adj) {
        std::sort(list.begin(), list.end());
        list.erase(std::unique(list.begin(), list.end()), list.end());
    }
    return adj;
}

std::vector<int> boundary_ring(const Mesh& mesh, PartLabel part, PartLabel side)
{
    const auto adj = vertex_neighbors(mesh);
    std::vector<int> ring;
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
        if (mesh.labels[i] != side) {
            continue;
        }
        const bool touches = std::any_of(adj[i].begin(), adj[i].end(),
                                         [&](int j) { return mesh.labels[static_cast<std::size_t>(j)] == part; });
        if (touches) {
            ring.push_back(static_cast<int>(i));
        }
    }
    return ring;
}

Eigen::Vector3d centroid(const Mesh& mesh, std::span<const int> subset)
{
    if (subset.empty()) {
        throw std::invalid_argument("centroid of an empty vertex set");
    }
    Eigen::Vector3d sum = Eigen::Vector3d::Zero();
    for (int i : subset) {
        sum += mesh.vertices.at(static_cast<std::size_t>(i));
    }
    return sum / static_cast<double>(subset.size());
}

Mesh scale_part(const Mesh& mesh, PartLabel part, double factor, const Eigen::Vector3d& anchor)
{
    if (!(factor > 0.0) || factor > 10.0) {
        throw std::invalid_argument("scale_part: factor must lie in (0, 10]");
    }
    if (!anchor.allFinite()) {
        throw std::invalid_argument("scale_part: anchor must be finite");
    }
    Mesh out = mesh;
    if (factor == 1.0) {
        return out;
    }
    for (std::size_t i = 0; i < out.vertices.size(); ++i) {
        if (out.labels[i] == part) {
            out.vertices[i] = anchor + factor * (mesh.vertices[i] - anchor);
        }
    }
    return out;
}

Mesh smooth_seam(const Mesh& mesh, std::span<const int> seam_vertices, int rings, int iterations, double weight,
                 std::span<const PartLabel> frozen)
{
    if (seam_vertices.empty()) {
        throw std::invalid_argument("smooth_seam: empty seam set");
    }
    if (rings < 0 || iterations < 0) {
        throw std::invalid_argument("smooth_seam: rings and iterations must be non-negative");
    }
    if (!(weight > 0.0) || weight > 1.0) {
        throw std::invalid_argument("smooth_seam: weight must lie in (0, 1]");
    }
    Mesh out = mesh;
    if (iterations == 0) {
        return out;
    }
    const auto adj = vertex_neighbors(mesh);
    const std::size_t n = mesh.vertices.size();

    std::vector<int> hops(n, -1);
    std::vector<int> frontier;
    for (int s : seam_vertices) {
        if (s < 0 || static_cast<std::size_t>(s) >= n) {
            throw std::invalid_argument("smooth_seam: seam vertex out of range");
        }
        if (hops[s] < 0) {
            hops[s] = 0;
            frontier.push_back(s);
        }
    }
    for (int r = 0; r < rings; ++r) {
        std::vector<int> next;
        for (int v : frontier) {
            for (int w : adj[v]) {
                if (hops[w] < 0) {
                    hops[w] = r + 1;
                    next.push_back(w);
                }
            }
        }
        frontier = std::move(next);
    }

    std::vector<int> support;
    for (std::size_t i = 0; i < n; ++i) {
        const bool is_frozen = std::find(frozen.begin(), frozen.end(), mesh.labels[i]) != frozen.end();
        if (hops[i] >= 0 && !is_frozen && !adj[i].empty()) {
            support.push_back(static_cast<int>(i));
        }
    }

    std::vector<Eigen::Vector3d> updated(support.size());
    for (int it = 0; it < iterations; ++it) {
        for (std::size_t s = 0; s < support.size(); ++s) {
            const int v = support[s];
            Eigen::Vector3d mean = Eigen::Vector3d::Zero();
            for (int w : adj[v]) {
                mean += out.vertices[w];
            }
            mean /= static_cast<double>(adj[v].size());
            updated[s] = out.vertices[v] + weight * (mean - out.vertices[v]);
        }
        for (std::size_t s = 0; s < support.size(); ++s) {
            out.vertices[support[s]] = updated[s];
        }
    }
    return out;
}

} // namespace maskshape
