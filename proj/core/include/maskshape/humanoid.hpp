#pragma once

#include "maskshape/mesh.hpp"

#include <array>
#include <cstdint>
#include <random>
#include <vector>

namespace maskshape {

/// Indices into TemplateParams::values.
enum class ShapeControl : int {
    HeightScale,
    TorsoGirth,
    TorsoLength,
    ShoulderWidth,
    ArmLength,
    ArmGirth,
    LegLength,
    LegGirth,
    HipWidth,
    HeadScale,
    BellyProtrusion,
    ChestProtrusion,
};
inline constexpr int kShapeControlCount = 12;

/// Twelve shape controls in [-1, 1]; all zeros is the template body.
struct TemplateParams
{
    std::array<double, kShapeControlCount> values{};

    double& operator[](ShapeControl c) { return values[static_cast<std::size_t>(c)]; }
    double operator[](ShapeControl c) const { return values[static_cast<std::size_t>(c)]; }

    /// Throws std::invalid_argument unless every value is finite and within [-1, 1].
    void validate() const;
};

/**
 * The built-in low-poly humanoid deformed by `params`, height-normalized.
 *
 * A single connected surface: the torso tube splits into two legs at the
 * crotch and into arms plus neck at the shoulders. Vertices on the split
 * loops carry the Torso label, so every limb's boundary ring is a ring of
 * torso vertices. The topology does not depend on `params`.
 */
Mesh build_humanoid(const TemplateParams& params);

/// build_humanoid with all-zero controls.
Mesh template_mesh();

/// Clipped Gaussian draw (sigma 0.35, clipped to [-1, 1]) per control.
TemplateParams sample_template_params(std::mt19937_64& rng);

/// `count` bodies from `seed`; a pure function of its arguments.
std::vector<Mesh> generate_population(std::uint64_t seed, std::size_t count);

/// Also returns the controls used for each body.
std::vector<Mesh> generate_population(std::uint64_t seed, std::size_t count, std::vector<TemplateParams>* params_out);

} // namespace maskshape
