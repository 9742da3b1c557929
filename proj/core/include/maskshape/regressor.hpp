#pragma once

#include "maskshape/nn/layers.hpp"
#include "maskshape/nn/loss.hpp"
#include "maskshape/raster.hpp"
#include "maskshape/shape_space.hpp"

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace maskshape {

inline constexpr std::size_t kDescriptorWidth = 512;

/// Network shape. Defaults are the desk profile.
struct NetConfig
{
    int resolution = 64;
    int k = 20;
    int growth = 6;
    int dense_layers = 3;
    int dense_blocks = 3;
    int stem_channels = 16;

    /// Throws std::invalid_argument on inconsistent values.
    void validate() const;
    std::string to_json() const;
    static NetConfig from_json(const std::string& text);
};

struct TrainConfig
{
    int epochs = 30;
    int batch_size = 32;
    double learning_rate = 1e-3;
    nn::LambdaSchedule lambda;
    std::uint64_t seed = 0;
};

/**
 * Convolutional feature extractor of one branch, ending at the descriptor:
 * conv 11x11 -> BN -> ReLU -> conv 7x7, then dense blocks with 5x5 convs each
 * followed by a transition that halves channels and resolution, then three
 * 512-wide fully connected layers with ReLU.
 */
template <typename T>
nn::Sequential<T> build_branch_features(const NetConfig& config, std::mt19937_64& rng);

/// The stem alone, for gradient checks.
template <typename T>
nn::Sequential<T> build_branch_stem(const NetConfig& config, std::mt19937_64& rng);

/// Feature extractor plus a linear output layer 512 -> k.
class BranchNet : public nn::Layer<float>
{
public:
    BranchNet(View view, const NetConfig& config, std::uint64_t seed);

    nn::Tensor<float> forward(const nn::Tensor<float>& input, nn::Mode mode) override;
    nn::Tensor<float> backward(const nn::Tensor<float>& grad_output) override;
    void collect_parameters(std::vector<nn::Parameter<float>*>& out) override;
    void collect_buffers(std::vector<nn::Buffer<float>>& out) override;
    std::string kind() const override { return "branch"; }

    /// Eval-mode descriptors for a (B, 1, R, R) batch.
    nn::Tensor<float> descriptors(const nn::Tensor<float>& masks);

    View view() const { return view_; }
    const NetConfig& config() const { return config_; }
    std::string architecture_json() const;

    /// Forward passes through this network, for pipeline isolation checks.
    long forward_count() const { return forward_count_.load(); }

private:
    BranchNet(View view, const NetConfig& config, std::mt19937_64 rng);

    View view_;
    NetConfig config_;
    nn::Sequential<float> features_;
    nn::Linear<float> output_;
    std::atomic<long> forward_count_{0};
};

/// Three fully connected layers 1024 -> 512 -> 512 -> k on concatenated descriptors.
class JointNet : public nn::Layer<float>
{
public:
    JointNet(const NetConfig& config, std::uint64_t seed);

    nn::Tensor<float> forward(const nn::Tensor<float>& input, nn::Mode mode) override;
    nn::Tensor<float> backward(const nn::Tensor<float>& grad_output) override;
    void collect_parameters(std::vector<nn::Parameter<float>*>& out) override;
    std::string kind() const override { return "joint"; }

    const NetConfig& config() const { return config_; }
    std::string architecture_json() const;
    long forward_count() const { return forward_count_.load(); }

private:
    NetConfig config_;
    nn::Sequential<float> layers_;
    std::atomic<long> forward_count_{0};
};

struct EpochRecord
{
    int epoch = 0;
    double lambda = 0.0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_rmse_mean = 0.0;
};

/// Inputs with one sample per leading index and their target coefficients (rows).
struct Samples
{
    nn::Tensor<float> inputs;
    Eigen::MatrixXd targets;

    std::size_t size() const { return static_cast<std::size_t>(targets.rows()); }
};

/// Copies rows `ids` of `all` into a new sample set.
Samples select_samples(const nn::Tensor<float>& inputs, const Eigen::MatrixXd& targets, std::span<const int> ids);

using EpochCallback = std::function<void(const EpochRecord&)>;

/**
 * Minimizes the shape loss with Adam on shuffled mini-batches; the shuffle
 * is seeded per run. Throws nn::NonFiniteError naming the epoch on divergence.
 */
std::vector<EpochRecord> train_network(nn::Layer<float>& net, const Samples& train, const Samples& validation,
                                       const ShapeSpace& space, const TrainConfig& config,
                                       const EpochCallback& on_epoch = {});

/// Eval-mode predictions, one row per sample.
Eigen::MatrixXd predict_batch(nn::Layer<float>& net, const nn::Tensor<float>& inputs, std::size_t batch = 64);

/// Mean rmse_mean between decoded predictions and decoded targets.
double mean_decoded_error(const ShapeSpace& space, const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target);

/// (1, 1, R, R) float tensor with 1 for body pixels.
nn::Tensor<float> mask_tensor(const BinaryMask& mask);

/// Descriptor of one mask; throws on a resolution mismatch.
Eigen::VectorXf extract_descriptor(BranchNet& net, const BinaryMask& mask);

/// (B, 1024) rows of frontal then lateral descriptors.
nn::Tensor<float> joint_inputs(BranchNet& frontal, BranchNet& lateral, const nn::Tensor<float>& frontal_masks,
                               const nn::Tensor<float>& lateral_masks, std::size_t batch = 64);

/// FNV-1a over every parameter and buffer value, in collection order.
std::uint64_t parameter_checksum(nn::Layer<float>& net);

std::string history_csv(std::span<const EpochRecord> history);

enum class Pipeline { Frontal, Lateral, Joint };

/// A prediction needed a network that is not loaded.
class ModelsUnavailable : public std::runtime_error
{
public:
    explicit ModelsUnavailable(const std::string& what);
};
std::string_view to_string(Pipeline p);

/**
 * The three trained networks plus the space they regress into.
 *
 * Networks cache activations during forward passes, so prediction is
 * serialized by a mutex; callers may share one instance across threads.
 */
struct ModelSet
{
    ShapeSpace space;
    std::unique_ptr<BranchNet> frontal;
    std::unique_ptr<BranchNet> lateral;
    std::unique_ptr<JointNet> joint;
    std::mutex mutex;

    int resolution() const;
};

struct Prediction
{
    Coefficients coefficients;
    Pipeline pipeline = Pipeline::Joint;
};

/// Both masks use the joint pipeline; one mask uses its branch alone.
Prediction predict(ModelSet& models, const BinaryMask* frontal, const BinaryMask* lateral);

/// checkpoints/{frontal,lateral,joint}; each network loads if its directory exists.
void save_models(ModelSet& models, const std::filesystem::path& checkpoint_dir);
std::unique_ptr<ModelSet> load_models(const ShapeSpace& space, const std::filesystem::path& checkpoint_dir);

bool checkpoint_exists(const std::filesystem::path& dir);

} // namespace maskshape
