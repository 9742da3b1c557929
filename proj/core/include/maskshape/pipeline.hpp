#pragma once

#include "maskshape/augmentation.hpp"
#include "maskshape/began.hpp"
#include "maskshape/regressor.hpp"
#include "maskshape/skeleton.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace maskshape {

enum class Profile { Desk, Full };
std::string_view to_string(Profile p);
Profile parse_profile(std::string_view token);

/**
 * Everything a pipeline run depends on. Paths are relative to `out` unless
 * absolute. The desk profile is the CPU-scale default; the full profile
 * restores the large configuration.
 */
struct RunConfig
{
    Profile profile = Profile::Desk;
    std::filesystem::path out = "run";
    std::uint64_t seed = 1;
    int resolution = 64;
    int k = 20;
    std::uint16_t port = 8080;

    std::size_t dataset_size = 2000;
    /// Relative sizes of the original, interp, gaussian, segmerge and gan sources.
    std::array<double, kProvenanceCount> proportions{4308, 5000, 20000, 10000, 15000};
    int kmeans_k = 20;
    double gaussian_scale = 1.0;
    std::vector<int> regularize_k{5, 15, 20};
    BeganConfig gan;
    NetConfig net;
    TrainConfig train;
    /// Joint head epochs; defaults to train.epochs when zero.
    int joint_epochs = 0;
    double train_fraction = 0.8;

    static RunConfig for_profile(Profile p);

    /// Overrides fields present in a JSON object; unknown keys are rejected.
    void apply_json(const std::string& text);
    std::string to_json() const;
    /// FNV-1a of to_json().
    std::uint64_t hash() const;
    void validate() const;

    std::size_t original_count() const;

    std::filesystem::path path(const std::filesystem::path& leaf) const;
    std::filesystem::path originals_dir() const { return path("originals"); }
    std::filesystem::path space_dir() const { return path("space"); }
    std::filesystem::path dataset_dir() const { return path("dataset"); }
    std::filesystem::path checkpoint_dir() const { return path("checkpoints"); }
    std::filesystem::path eval_dir() const { return path("eval"); }
};

/// Independent stream seed for a named stage.
std::uint64_t derive_seed(std::uint64_t base, std::string_view tag);

/// The run stopped because an earlier stage has not produced its outputs.
class StageOrderError : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

using Logger = std::function<void(const std::string&)>;

/// Each stage returns a one-line JSON summary.
std::string stage_gen_data(const RunConfig& config, const Logger& log = {});
std::string stage_fit_space(const RunConfig& config, const Logger& log = {});
std::string stage_augment(const RunConfig& config, const Logger& log = {});
std::string stage_render(const RunConfig& config, const Logger& log = {});
std::string stage_train(const RunConfig& config, Pipeline network, const Logger& log = {});
std::string stage_eval(const RunConfig& config, const Logger& log = {});

/// Loads the original bodies written by gen-data.
std::vector<Mesh> load_originals(const RunConfig& config);

/// (M, 1, R, R) masks for every dataset entry, as written by render.
nn::Tensor<float> load_mask_stack(const RunConfig& config, View view);

/// Flips each pixel independently with probability `rate`.
BinaryMask salt_and_pepper(const BinaryMask& mask, double rate, std::mt19937_64& rng);

/// Zeroes a size x size block centred on pixel (row, col), clipped to the image.
BinaryMask punch_hole(const BinaryMask& mask, int row, int col, int size);

/// Pixel of the torso centroid in `view`.
std::pair<int, int> torso_pixel(const Mesh& mesh, View view, int resolution);

/// Frontal-plane extent of the torso vertices.
double torso_width(const Mesh& mesh);

/// Joint regressor fitted on the mean body and the mean +-1 sd along every basis direction.
JointRegressor space_joint_regressor(const ShapeSpace& space);

} // namespace maskshape
