#include "maskshape/humanoid.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <utility>

namespace maskshape {

namespace {

using Eigen::Vector3d;

constexpr int kTorsoSegments = 32; // vertices per torso ring; must be a multiple of 8
constexpr int kTorsoRings = 12;
constexpr int kBridgePoints = 3;
constexpr double kArmAngle = 0.36; // A-pose, radians from vertical

struct Profile
{
    std::vector<std::pair<double, double>> knots;

    double operator()(double t) const
    {
        if (t <= knots.front().first) {
            return knots.front().second;
        }
        for (std::size_t i = 1; i < knots.size(); ++i) {
            if (t <= knots[i].first) {
                const auto [t0, v0] = knots[i - 1];
                const auto [t1, v1] = knots[i];
                return v0 + (v1 - v0) * (t - t0) / (t1 - t0);
            }
        }
        return knots.back().second;
    }
};

struct RingSpec
{
    Vector3d center;
    double radius_a;
    double radius_b;
};

class Builder
{
public:
    int add(const Vector3d& p, PartLabel label)
    {
        mesh_.vertices.push_back(p);
        mesh_.labels.push_back(label);
        return static_cast<int>(mesh_.vertices.size()) - 1;
    }

    const Vector3d& position(int i) const { return mesh_.vertices[static_cast<std::size_t>(i)]; }

    void strip(const std::vector<int>& a, const std::vector<int>& b)
    {
        const std::size_t n = a.size();
        for (std::size_t i = 0; i < n; ++i) {
            const int a0 = a[i];
            const int a1 = a[(i + 1) % n];
            const int b0 = b[i];
            const int b1 = b[(i + 1) % n];
            mesh_.triangles.push_back({a0, a1, b1});
            mesh_.triangles.push_back({a0, b1, b0});
        }
    }

    void fan(const std::vector<int>& ring, int apex)
    {
        const std::size_t n = ring.size();
        for (std::size_t i = 0; i < n; ++i) {
            mesh_.triangles.push_back({ring[i], ring[(i + 1) % n], apex});
        }
    }

    // Sweeps rings along a loop of existing vertices. Ring vertex i sits at the
    // loop vertex's arc-length angle so the correspondence never twists.
    std::vector<int> tube(const std::vector<int>& loop, const std::vector<RingSpec>& rings, const Vector3d& e1,
                          const Vector3d& e2, PartLabel label)
    {
        const std::size_t n = loop.size();
        Vector3d c = Vector3d::Zero();
        for (int i : loop) {
            c += position(i);
        }
        c /= static_cast<double>(n);

        std::vector<double> arc(n + 1, 0.0);
        double area = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const Vector3d& p = position(loop[i]);
            const Vector3d& q = position(loop[(i + 1) % n]);
            arc[i + 1] = arc[i] + (q - p).norm();
            const double px = (p - c).dot(e1);
            const double py = (p - c).dot(e2);
            const double qx = (q - c).dot(e1);
            const double qy = (q - c).dot(e2);
            area += px * qy - qx * py;
        }
        const Vector3d d0 = position(loop[0]) - c;
        const double theta0 = std::atan2(d0.dot(e2), d0.dot(e1));
        const double sign = area >= 0.0 ? 1.0 : -1.0;

        std::vector<int> previous = loop;
        for (const auto& spec : rings) {
            std::vector<int> ring(n);
            for (std::size_t i = 0; i < n; ++i) {
                const double phi = theta0 + sign * 2.0 * std::numbers::pi * arc[i] / arc[n];
                ring[i] = add(spec.center + spec.radius_a * std::cos(phi) * e1 + spec.radius_b * std::sin(phi) * e2,
                              label);
            }
            strip(previous, ring);
            previous = std::move(ring);
        }
        return previous;
    }

    Mesh take() { return std::move(mesh_); }

private:
    Mesh mesh_;
};

double control(const TemplateParams& p, ShapeControl c)
{
    return p[c];
}

} // namespace

void TemplateParams::validate() const
{
    for (double v : values) {
        if (!std::isfinite(v) || v < -1.0 || v > 1.0) {
            throw std::invalid_argument("template parameters must be finite and within [-1, 1]");
        }
    }
}

Mesh build_humanoid(const TemplateParams& params)
{
    params.validate();
    using C = ShapeControl;
    const double height_scale = 1.0 + 0.06 * control(params, C::HeightScale);
    const double torso_girth = 1.0 + 0.15 * control(params, C::TorsoGirth);
    const double torso_length = 1.0 + 0.12 * control(params, C::TorsoLength);
    const double shoulder_width = 1.0 + 0.15 * control(params, C::ShoulderWidth);
    const double arm_length = 1.0 + 0.12 * control(params, C::ArmLength);
    const double arm_girth = 1.0 + 0.25 * control(params, C::ArmGirth);
    const double leg_length = 1.0 + 0.12 * control(params, C::LegLength);
    const double leg_girth = 1.0 + 0.22 * control(params, C::LegGirth);
    const double hip_width = 1.0 + 0.15 * control(params, C::HipWidth);
    const double head_scale = 1.0 + 0.10 * control(params, C::HeadScale);
    const double belly = 0.05 * (1.0 + control(params, C::BellyProtrusion));
    const double chest = 0.03 * (1.0 + control(params, C::ChestProtrusion));

    const double z_crotch = 0.80 * leg_length;
    const double torso_len = 0.56 * torso_length;
    const double z_shoulder = z_crotch + torso_len;
    constexpr double z_ankle = 0.075;

    const Profile half_width{{{0.0, 0.165}, {0.2, 0.155}, {0.45, 0.14}, {0.75, 0.155}, {1.0, 0.18}}};
    const Profile half_depth{{{0.0, 0.105}, {0.2, 0.10}, {0.45, 0.095}, {0.75, 0.105}, {1.0, 0.085}}};
    auto torso_a = [&](double u) {
        const double w_hip = std::max(0.0, 1.0 - u / 0.4);
        const double w_shoulder = std::max(0.0, (u - 0.6) / 0.4);
        const double w_mid = 1.0 - w_hip - w_shoulder;
        return torso_girth * half_width(u) * (w_hip * hip_width + w_shoulder * shoulder_width + w_mid);
    };
    auto torso_b = [&](double u) { return torso_girth * half_depth(u); };
    auto torso_point = [&](double u, int j) {
        const double theta = 2.0 * std::numbers::pi * j / kTorsoSegments;
        const double s = std::sin(theta);
        double y = torso_b(u) * s;
        if (s > 0.0) {
            const double front = s * s;
            y += belly * front * std::exp(-std::pow((u - 0.3) / 0.15, 2));
            y += chest * front * std::exp(-std::pow((u - 0.72) / 0.10, 2));
        }
        return Vector3d(torso_a(u) * std::cos(theta), y, z_crotch + u * torso_len);
    };

    Builder b;

    // Torso rings, bottom (crotch level) to top (shoulder level).
    std::vector<std::vector<int>> torso(kTorsoRings, std::vector<int>(kTorsoSegments));
    for (int r = 0; r < kTorsoRings; ++r) {
        const double u = static_cast<double>(r) / (kTorsoRings - 1);
        for (int j = 0; j < kTorsoSegments; ++j) {
            torso[r][j] = b.add(torso_point(u, j), PartLabel::Torso);
        }
        if (r > 0) {
            b.strip(torso[r - 1], torso[r]);
        }
    }
    const auto& bottom = torso.front();
    const auto& top = torso.back();
    constexpr int q = kTorsoSegments / 8; // 45 degrees
    auto ring_index = [](int j) { return ((j % kTorsoSegments) + kTorsoSegments) % kTorsoSegments; };
    auto arc = [&](const std::vector<int>& ring, int from, int to) {
        std::vector<int> out;
        for (int j = from;; ++j) {
            out.push_back(ring[ring_index(j)]);
            if (ring_index(j) == ring_index(to)) {
                break;
            }
        }
        return out;
    };
    auto append = [](std::vector<int>& dst, const std::vector<int>& src) { dst.insert(dst.end(), src.begin(), src.end()); };
    auto reversed = [](std::vector<int> v) {
        std::reverse(v.begin(), v.end());
        return v;
    };

    // Crotch bridge from front centre to back centre.
    std::vector<int> crotch;
    for (int k = 1; k <= kBridgePoints; ++k) {
        const double f = static_cast<double>(k) / (kBridgePoints + 1);
        const double y = torso_b(0.0) * 0.9 * (1.0 - 2.0 * f);
        const double dip = 0.03 + 0.01 * (1.0 - std::abs(1.0 - 2.0 * f));
        crotch.push_back(b.add(Vector3d(0.0, y, z_crotch - dip), PartLabel::Torso));
    }

    // Shoulder bridges from the front-side to the back-side of the top ring.
    const double a_top = torso_a(1.0);
    auto shoulder_bridge = [&](int front_j, int back_j) {
        std::vector<int> out;
        const Vector3d pf = b.position(top[ring_index(front_j)]);
        const Vector3d pb = b.position(top[ring_index(back_j)]);
        for (int k = 1; k <= kBridgePoints; ++k) {
            const double f = static_cast<double>(k) / (kBridgePoints + 1);
            const double side = pf.x() > 0.0 ? 1.0 : -1.0;
            Vector3d p((1.0 - f) * pf + f * pb);
            p.x() = side * 0.62 * a_top;
            p.z() = z_shoulder + 0.012;
            out.push_back(b.add(p, PartLabel::Torso));
        }
        return out;
    };
    const auto right_bridge = shoulder_bridge(q, -q);        // FR -> BR
    const auto left_bridge = shoulder_bridge(3 * q, 5 * q);  // FL -> BL

    // Legs.
    const Profile leg_radius{{{0.0, 0.085}, {0.3, 0.068}, {0.5, 0.05}, {0.62, 0.055}, {0.85, 0.038}, {1.0, 0.034}}};
    const std::vector<double> leg_t = {0.05, 0.13, 0.22, 0.31, 0.40, 0.48, 0.56, 0.64, 0.73, 0.82, 0.90, 0.97};
    auto build_leg = [&](const std::vector<int>& loop, double side, PartLabel label) {
        const double cx0 = side * 0.5 * torso_a(0.0);
        std::vector<RingSpec> rings;
        for (double t : leg_t) {
            const double r = leg_radius(t) * (1.0 + (leg_girth - 1.0) * (1.0 - 0.6 * t));
            const Vector3d c(cx0 * (1.0 - 0.2 * t), 0.0, z_crotch - t * (z_crotch - z_ankle));
            rings.push_back({c, r, 1.05 * r});
        }
        const auto last = b.tube(loop, rings, Vector3d::UnitX(), Vector3d::UnitY(), label);
        b.fan(last, b.add(Vector3d(cx0 * 0.8, 0.05, 0.0), label));
    };
    {
        std::vector<int> right_loop = arc(bottom, -2 * q, 2 * q); // back centre -> +x -> front centre
        append(right_loop, crotch);
        build_leg(right_loop, 1.0, PartLabel::RightLeg);
        std::vector<int> left_loop = arc(bottom, 2 * q, 6 * q); // front centre -> -x -> back centre
        append(left_loop, reversed(crotch));
        build_leg(left_loop, -1.0, PartLabel::LeftLeg);
    }

    // Arms.
    const Profile arm_radius{{{0.0, 0.05}, {0.3, 0.043}, {0.45, 0.034}, {0.6, 0.036}, {0.8, 0.026}, {0.9, 0.03}, {1.0, 0.022}}};
    const std::vector<double> arm_t = {0.06, 0.14, 0.24, 0.34, 0.43, 0.52, 0.61, 0.70, 0.79, 0.86, 0.92, 0.97};
    const double arm_len = 0.60 * arm_length;
    auto build_arm = [&](const std::vector<int>& loop, double side, PartLabel label) {
        Vector3d shoulder = Vector3d::Zero();
        for (int i : loop) {
            shoulder += b.position(i);
        }
        shoulder /= static_cast<double>(loop.size());
        const Vector3d dir(side * std::sin(kArmAngle), 0.0, -std::cos(kArmAngle));
        const Vector3d e1(side * std::cos(kArmAngle), 0.0, std::sin(kArmAngle));
        std::vector<RingSpec> rings;
        for (double t : arm_t) {
            const double r = arm_radius(t) * (1.0 + (arm_girth - 1.0) * (1.0 - 0.5 * t));
            rings.push_back({shoulder + t * arm_len * dir, r, t > 0.85 ? 1.5 * r : r});
        }
        const auto last = b.tube(loop, rings, e1, Vector3d::UnitY(), label);
        b.fan(last, b.add(shoulder + 1.02 * arm_len * dir, label));
    };
    {
        std::vector<int> right_loop = arc(top, -q, q); // BR -> +x -> FR
        append(right_loop, right_bridge);
        build_arm(right_loop, 1.0, PartLabel::RightArm);
        std::vector<int> left_loop = arc(top, 3 * q, 5 * q); // FL -> -x -> BL
        append(left_loop, reversed(left_bridge));
        build_arm(left_loop, -1.0, PartLabel::LeftArm);
    }

    // Neck (torso-labelled) and head.
    {
        std::vector<int> neck_loop = arc(top, q, 3 * q); // FR -> front -> FL
        append(neck_loop, left_bridge);
        append(neck_loop, arc(top, 5 * q, 7 * q)); // BL -> back -> BR
        append(neck_loop, reversed(right_bridge));
        const std::vector<RingSpec> neck = {
            {Vector3d(0.0, 0.0, z_shoulder + 0.05), 0.055, 0.05},
            {Vector3d(0.0, 0.0, z_shoulder + 0.09), 0.052, 0.048},
        };
        const auto neck_top = b.tube(neck_loop, neck, Vector3d::UnitX(), Vector3d::UnitY(), PartLabel::Torso);

        const double head_r = 0.105 * head_scale;
        const double head_z = z_shoulder + 0.09 + 0.11 * head_scale;
        std::vector<RingSpec> head;
        for (double deg : {-62.0, -40.0, -20.0, 0.0, 20.0, 40.0, 58.0, 74.0}) {
            const double phi = deg * std::numbers::pi / 180.0;
            const double r = head_r * std::cos(phi);
            head.push_back({Vector3d(0.0, 0.01, head_z + head_r * std::sin(phi)), r, 1.12 * r});
        }
        // The tube's angles come from the neck loop, which is the loop we pass here.
        const auto last = b.tube(neck_top, head, Vector3d::UnitX(), Vector3d::UnitY(), PartLabel::Head);
        b.fan(last, b.add(Vector3d(0.0, 0.01, head_z + head_r), PartLabel::Head));
    }

    Mesh mesh = b.take();
    for (auto& v : mesh.vertices) {
        v.z() *= height_scale;
    }
    return normalize_height(mesh);
}

Mesh template_mesh()
{
    return build_humanoid(TemplateParams{});
}

TemplateParams sample_template_params(std::mt19937_64& rng)
{
    std::normal_distribution<double> normal(0.0, 0.35);
    TemplateParams p;
    for (auto& v : p.values) {
        v = std::clamp(normal(rng), -1.0, 1.0);
    }
    return p;
}

std::vector<Mesh> generate_population(std::uint64_t seed, std::size_t count, std::vector<TemplateParams>* params_out)
{
    if (count == 0) {
        throw std::invalid_argument("generate_population: count must be positive");
    }
    std::mt19937_64 rng(seed);
    std::vector<Mesh> out;
    out.reserve(count);
    if (params_out) {
        params_out->clear();
    }
    for (std::size_t i = 0; i < count; ++i) {
        const auto p = sample_template_params(rng);
        out.push_back(build_humanoid(p));
        if (params_out) {
            params_out->push_back(p);
        }
    }
    return out;
}

std::vector<Mesh> generate_population(std::uint64_t seed, std::size_t count)
{
    return generate_population(seed, count, nullptr);
}

} // namespace maskshape
