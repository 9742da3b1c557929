#include "maskshape/regressor.hpp"

#include "maskshape/nn/adam.hpp"
#include "maskshape/nn/checkpoint.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstring>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

namespace maskshape {

using nn::Tensor;

namespace {

constexpr std::size_t kStemKernel1 = 11;
constexpr std::size_t kStemKernel2 = 7;

std::mt19937_64 seeded(std::uint64_t seed)
{
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
    return std::mt19937_64(seq);
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& all, std::span<const std::size_t> rows)
{
    auto shape = all.shape();
    shape[0] = rows.size();
    Tensor<T> out(shape);
    const std::size_t stride = all.stride0();
    for (std::size_t i = 0; i < rows.size(); ++i) {
        std::copy_n(all.data() + rows[i] * stride, stride, out.data() + i * stride);
    }
    return out;
}

Tensor<float> target_rows(const Eigen::MatrixXd& targets, std::span<const std::size_t> rows)
{
    const auto k = static_cast<std::size_t>(targets.cols());
    Tensor<float> out({rows.size(), k});
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            out[i * k + j] = static_cast<float>(targets(static_cast<Eigen::Index>(rows[i]), static_cast<Eigen::Index>(j)));
        }
    }
    return out;
}

double validation_loss(const nn::ShapeLoss& loss, const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target)
{
    double sum = 0.0;
    for (Eigen::Index i = 0; i < pred.rows(); ++i) {
        sum += loss.evaluate(pred.row(i).transpose(), target.row(i).transpose());
    }
    return pred.rows() > 0 ? sum / static_cast<double>(pred.rows()) : 0.0;
}

void hash_bytes(std::uint64_t& h, const void* data, std::size_t n)
{
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
}

} // namespace

// ---------------------------------------------------------------- NetConfig

void NetConfig::validate() const
{
    if (resolution != 64 && resolution != 128) {
        throw std::invalid_argument("mask resolution must be 64 or 128");
    }
    if (k < 1 || growth < 1 || dense_layers < 1 || dense_blocks < 1 || stem_channels < 1) {
        throw std::invalid_argument("network sizes must be positive");
    }
    if ((resolution >> dense_blocks) < 1 || (resolution % (1 << dense_blocks)) != 0) {
        throw std::invalid_argument("resolution must be divisible by 2^dense_blocks");
    }
}

std::string NetConfig::to_json() const
{
    const nlohmann::json j = {
        {"resolution", resolution},       {"k", k},
        {"growth", growth},               {"dense_layers", dense_layers},
        {"dense_blocks", dense_blocks},   {"stem_channels", stem_channels},
    };
    return j.dump();
}

NetConfig NetConfig::from_json(const std::string& text)
{
    const auto j = nlohmann::json::parse(text);
    NetConfig c;
    c.resolution = j.at("resolution").get<int>();
    c.k = j.at("k").get<int>();
    c.growth = j.at("growth").get<int>();
    c.dense_layers = j.at("dense_layers").get<int>();
    c.dense_blocks = j.at("dense_blocks").get<int>();
    c.stem_channels = j.at("stem_channels").get<int>();
    c.validate();
    return c;
}

// ---------------------------------------------------------------- builders

template <typename T>
nn::Sequential<T> build_branch_stem(const NetConfig& config, std::mt19937_64& rng)
{
    const auto c = static_cast<std::size_t>(config.stem_channels);
    nn::Sequential<T> stem;
    auto& first = stem.template add<nn::Conv2d<T>>(1, c, kStemKernel1, kStemKernel1, 1, kStemKernel1 / 2, rng, false);
    first.set_input_grad(false);
    stem.template add<nn::BatchNorm2d<T>>(c);
    stem.template add<nn::ReLU<T>>();
    // Everything downstream of this conv passes through a batch norm, so it needs no bias either.
    stem.template add<nn::Conv2d<T>>(c, c, kStemKernel2, kStemKernel2, 1, kStemKernel2 / 2, rng, false);
    return stem;
}

template <typename T>
nn::Sequential<T> build_branch_features(const NetConfig& config, std::mt19937_64& rng)
{
    config.validate();
    nn::Sequential<T> net;
    net.add_layer(std::make_unique<nn::Sequential<T>>(build_branch_stem<T>(config, rng)));
    std::size_t channels = static_cast<std::size_t>(config.stem_channels);
    std::size_t side = static_cast<std::size_t>(config.resolution);
    for (int b = 0; b < config.dense_blocks; ++b) {
        auto& block = net.template add<nn::DenseBlock<T>>(channels, static_cast<std::size_t>(config.dense_layers),
                                                          static_cast<std::size_t>(config.growth), rng);
        channels = block.out_channels();
        const std::size_t halved = std::max<std::size_t>(1, channels / 2);
        net.template add<nn::Transition<T>>(channels, halved, rng);
        channels = halved;
        side /= 2;
    }
    net.template add<nn::Flatten<T>>();
    std::size_t width = channels * side * side;
    for (int i = 0; i < 3; ++i) {
        net.template add<nn::Linear<T>>(width, kDescriptorWidth, rng);
        net.template add<nn::ReLU<T>>();
        width = kDescriptorWidth;
    }
    return net;
}

template nn::Sequential<float> build_branch_stem<float>(const NetConfig&, std::mt19937_64&);
template nn::Sequential<double> build_branch_stem<double>(const NetConfig&, std::mt19937_64&);
template nn::Sequential<float> build_branch_features<float>(const NetConfig&, std::mt19937_64&);
template nn::Sequential<double> build_branch_features<double>(const NetConfig&, std::mt19937_64&);

// ---------------------------------------------------------------- BranchNet

namespace {

nn::Sequential<float> features_for(const NetConfig& config, std::mt19937_64& rng)
{
    return build_branch_features<float>(config, rng);
}

} // namespace

BranchNet::BranchNet(View view, const NetConfig& config, std::uint64_t seed)
    : BranchNet(view, config, seeded(seed))
{
}

BranchNet::BranchNet(View view, const NetConfig& config, std::mt19937_64 rng)
    : view_(view), config_(config), features_(features_for(config, rng)),
      output_(kDescriptorWidth, static_cast<std::size_t>(config.k), rng)
{
    features_.set_name("features");
    output_.set_name("output");
    const auto r = static_cast<std::size_t>(config.resolution);
    const Tensor<float> out = forward(Tensor<float>({1, 1, r, r}), nn::Mode::Eval);
    if (out.shape() != std::vector<std::size_t>{1, static_cast<std::size_t>(config.k)}) {
        throw std::logic_error("branch dry run produced shape " + nn::shape_string(out.shape()));
    }
    forward_count_ = 0;
}

Tensor<float> BranchNet::forward(const Tensor<float>& input, nn::Mode mode)
{
    ++forward_count_;
    return output_.forward(features_.forward(input, mode), mode);
}

Tensor<float> BranchNet::backward(const Tensor<float>& grad_output)
{
    return features_.backward(output_.backward(grad_output));
}

void BranchNet::collect_parameters(std::vector<nn::Parameter<float>*>& out)
{
    features_.collect_parameters(out);
    output_.collect_parameters(out);
}

void BranchNet::collect_buffers(std::vector<nn::Buffer<float>>& out)
{
    features_.collect_buffers(out);
}

Tensor<float> BranchNet::descriptors(const Tensor<float>& masks)
{
    ++forward_count_;
    return features_.forward(masks, nn::Mode::Eval);
}

std::string BranchNet::architecture_json() const
{
    nlohmann::json j = {{"network", "branch"}, {"view", to_string(view_)},
                        {"config", nlohmann::json::parse(config_.to_json())}};
    return j.dump();
}

// ---------------------------------------------------------------- JointNet

JointNet::JointNet(const NetConfig& config, std::uint64_t seed) : config_(config)
{
    config_.validate();
    auto rng = seeded(seed);
    layers_.add<nn::Linear<float>>(2 * kDescriptorWidth, kDescriptorWidth, rng);
    layers_.add<nn::ReLU<float>>();
    layers_.add<nn::Linear<float>>(kDescriptorWidth, kDescriptorWidth, rng);
    layers_.add<nn::ReLU<float>>();
    layers_.add<nn::Linear<float>>(kDescriptorWidth, static_cast<std::size_t>(config.k), rng);
    layers_.set_name("layers");
}

Tensor<float> JointNet::forward(const Tensor<float>& input, nn::Mode mode)
{
    if (input.rank() != 2 || input.dim(1) != 2 * kDescriptorWidth) {
        throw std::invalid_argument("joint network expects (B, 1024) inputs, got " + nn::shape_string(input.shape()));
    }
    ++forward_count_;
    return layers_.forward(input, mode);
}

Tensor<float> JointNet::backward(const Tensor<float>& grad_output)
{
    return layers_.backward(grad_output);
}

void JointNet::collect_parameters(std::vector<nn::Parameter<float>*>& out)
{
    layers_.collect_parameters(out);
}

std::string JointNet::architecture_json() const
{
    nlohmann::json j = {{"network", "joint"}, {"config", nlohmann::json::parse(config_.to_json())}};
    return j.dump();
}

// ---------------------------------------------------------------- training

Samples select_samples(const Tensor<float>& inputs, const Eigen::MatrixXd& targets, std::span<const int> ids)
{
    if (inputs.rank() < 2 || inputs.dim(0) != static_cast<std::size_t>(targets.rows())) {
        throw std::invalid_argument("select_samples: inputs and targets disagree on the sample count");
    }
    std::vector<std::size_t> rows;
    rows.reserve(ids.size());
    for (int id : ids) {
        if (id < 0 || id >= targets.rows()) {
            throw std::out_of_range("select_samples: sample index out of range");
        }
        rows.push_back(static_cast<std::size_t>(id));
    }
    Samples s;
    s.inputs = gather_rows(inputs, rows);
    s.targets.resize(static_cast<Eigen::Index>(rows.size()), targets.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        s.targets.row(static_cast<Eigen::Index>(i)) = targets.row(static_cast<Eigen::Index>(rows[i]));
    }
    return s;
}

Eigen::MatrixXd predict_batch(nn::Layer<float>& net, const Tensor<float>& inputs, std::size_t batch)
{
    const std::size_t n = inputs.dim(0);
    Eigen::MatrixXd out;
    std::vector<std::size_t> rows;
    for (std::size_t start = 0; start < n; start += batch) {
        rows.resize(std::min(batch, n - start));
        std::iota(rows.begin(), rows.end(), start);
        const Tensor<float> y = net.forward(gather_rows(inputs, rows), nn::Mode::Eval);
        if (out.size() == 0) {
            out.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(y.dim(1)));
        }
        for (std::size_t i = 0; i < rows.size(); ++i) {
            for (std::size_t j = 0; j < y.dim(1); ++j) {
                out(static_cast<Eigen::Index>(start + i), static_cast<Eigen::Index>(j)) = y[i * y.dim(1) + j];
            }
        }
    }
    return out;
}

double mean_decoded_error(const ShapeSpace& space, const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target)
{
    if (pred.rows() != target.rows() || pred.cols() != space.k() || target.cols() != space.k()) {
        throw std::invalid_argument("mean_decoded_error: shape mismatch");
    }
    if (pred.rows() == 0) {
        return 0.0;
    }
    // decode(p) - decode(t) = basis (p - t), so the mean cancels.
    const Eigen::MatrixXd diff = space.basis * (pred - target).transpose();
    const Eigen::Index n = diff.rows() / 3;
    double total = 0.0;
    for (Eigen::Index b = 0; b < diff.cols(); ++b) {
        double sum = 0.0;
        for (Eigen::Index v = 0; v < n; ++v) {
            sum += diff.col(b).segment<3>(3 * v).norm();
        }
        total += sum / static_cast<double>(n);
    }
    return total / static_cast<double>(diff.cols());
}

std::vector<EpochRecord> train_network(nn::Layer<float>& net, const Samples& train, const Samples& validation,
                                       const ShapeSpace& space, const TrainConfig& config,
                                       const EpochCallback& on_epoch)
{
    if (train.size() < 2) {
        throw std::invalid_argument("train_network: need at least two training samples");
    }
    if (config.epochs < 1 || config.batch_size < 2 || !(config.learning_rate > 0.0)) {
        throw std::invalid_argument("train_network: epochs, batch size and learning rate must be positive");
    }
    if (train.targets.cols() != space.k()) {
        throw std::invalid_argument("train_network: targets do not match the space dimension");
    }
    nn::ShapeLoss loss(space.basis, space.vertex_count());
    const nn::AdamConfig adam{config.learning_rate};
    auto rng = seeded(config.seed);
    auto params = net.parameters();
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const auto batch = static_cast<std::size_t>(config.batch_size);

    std::vector<EpochRecord> history;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        EpochRecord rec;
        rec.epoch = epoch + 1;
        rec.lambda = nn::lambda_schedule(epoch, config.lambda);
        loss.set_lambda(rec.lambda);
        std::shuffle(order.begin(), order.end(), rng);
        double sum = 0.0;
        std::size_t seen = 0;
        try {
            for (std::size_t start = 0; start < order.size(); start += batch) {
                const std::size_t b = std::min(batch, order.size() - start);
                if (b < 2) {
                    // Batch statistics of a single sample are degenerate.
                    continue;
                }
                const std::span<const std::size_t> rows(order.data() + start, b);
                net.zero_grad();
                const Tensor<float> pred = net.forward(gather_rows(train.inputs, rows), nn::Mode::Train);
                Tensor<float> grad;
                sum += loss.evaluate(pred, target_rows(train.targets, rows), &grad) * static_cast<double>(b);
                seen += b;
                net.backward(grad);
                nn::adam_step<float>(params, adam);
            }
        } catch (const nn::NonFiniteError& e) {
            throw nn::NonFiniteError("training diverged at epoch " + std::to_string(rec.epoch) + ": " + e.what());
        }
        rec.train_loss = sum / static_cast<double>(seen);
        if (validation.size() > 0) {
            const Eigen::MatrixXd pred = predict_batch(net, validation.inputs);
            rec.val_loss = validation_loss(loss, pred, validation.targets);
            rec.val_rmse_mean = mean_decoded_error(space, pred, validation.targets);
        }
        history.push_back(rec);
        if (on_epoch) {
            on_epoch(rec);
        }
    }
    return history;
}

Tensor<float> mask_tensor(const BinaryMask& mask)
{
    const auto r = static_cast<std::size_t>(mask.resolution);
    Tensor<float> t({1, 1, r, r});
    for (std::size_t i = 0; i < mask.bits.size(); ++i) {
        t[i] = mask.bits[i] != 0 ? 1.0f : 0.0f;
    }
    return t;
}

Eigen::VectorXf extract_descriptor(BranchNet& net, const BinaryMask& mask)
{
    if (mask.resolution != net.config().resolution) {
        throw std::invalid_argument("mask resolution " + std::to_string(mask.resolution) + " does not match the network's " +
                                    std::to_string(net.config().resolution));
    }
    const Tensor<float> d = net.descriptors(mask_tensor(mask));
    return Eigen::Map<const Eigen::VectorXf>(d.data(), static_cast<Eigen::Index>(d.size()));
}

Tensor<float> joint_inputs(BranchNet& frontal, BranchNet& lateral, const Tensor<float>& frontal_masks,
                           const Tensor<float>& lateral_masks, std::size_t batch)
{
    const std::size_t n = frontal_masks.dim(0);
    if (lateral_masks.dim(0) != n) {
        throw std::invalid_argument("joint_inputs: frontal and lateral mask counts differ");
    }
    Tensor<float> out({n, 2 * kDescriptorWidth});
    std::vector<std::size_t> rows;
    for (std::size_t start = 0; start < n; start += batch) {
        rows.resize(std::min(batch, n - start));
        std::iota(rows.begin(), rows.end(), start);
        const Tensor<float> f = frontal.descriptors(gather_rows(frontal_masks, rows));
        const Tensor<float> l = lateral.descriptors(gather_rows(lateral_masks, rows));
        for (std::size_t i = 0; i < rows.size(); ++i) {
            float* dst = out.data() + (start + i) * 2 * kDescriptorWidth;
            std::copy_n(f.data() + i * kDescriptorWidth, kDescriptorWidth, dst);
            std::copy_n(l.data() + i * kDescriptorWidth, kDescriptorWidth, dst + kDescriptorWidth);
        }
    }
    return out;
}

std::uint64_t parameter_checksum(nn::Layer<float>& net)
{
    std::uint64_t h = 1469598103934665603ull;
    for (auto* p : net.parameters()) {
        hash_bytes(h, p->value.data(), p->value.size() * sizeof(float));
    }
    for (auto& b : net.buffers()) {
        hash_bytes(h, b.tensor->data(), b.tensor->size() * sizeof(float));
    }
    return h;
}

std::string history_csv(std::span<const EpochRecord> history)
{
    std::ostringstream os;
    os.precision(10);
    os << "epoch,lambda,train_loss,val_loss,val_rmse_mean\n";
    for (const auto& r : history) {
        os << r.epoch << ',' << r.lambda << ',' << r.train_loss << ',' << r.val_loss << ',' << r.val_rmse_mean << '\n';
    }
    return os.str();
}

// ---------------------------------------------------------------- prediction

std::string_view to_string(Pipeline p)
{
    switch (p) {
    case Pipeline::Frontal: return "frontal";
    case Pipeline::Lateral: return "lateral";
    case Pipeline::Joint: return "joint";
    }
    return "?";
}

ModelsUnavailable::ModelsUnavailable(const std::string& what) : std::runtime_error(what) {}

int ModelSet::resolution() const
{
    for (const BranchNet* b : {frontal.get(), lateral.get()}) {
        if (b != nullptr) {
            return b->config().resolution;
        }
    }
    return joint ? joint->config().resolution : 0;
}

Prediction predict(ModelSet& models, const BinaryMask* frontal, const BinaryMask* lateral)
{
    if (frontal == nullptr && lateral == nullptr) {
        throw std::invalid_argument("no mask provided");
    }
    const auto check = [](const BinaryMask& mask, const BranchNet* net, std::string_view view) {
        if (net == nullptr) {
            throw ModelsUnavailable(std::string(view) + " network not loaded");
        }
        if (mask.resolution != net->config().resolution) {
            throw std::invalid_argument("mask resolution " + std::to_string(mask.resolution) + " does not match " +
                                        std::to_string(net->config().resolution));
        }
    };
    std::lock_guard lock(models.mutex);
    Prediction out;
    Tensor<float> y;
    if (frontal != nullptr && lateral != nullptr) {
        check(*frontal, models.frontal.get(), "frontal");
        check(*lateral, models.lateral.get(), "lateral");
        if (!models.joint) {
            throw ModelsUnavailable("joint network not loaded");
        }
        const auto f = models.frontal->descriptors(mask_tensor(*frontal));
        const auto l = models.lateral->descriptors(mask_tensor(*lateral));
        Tensor<float> both({1, 2 * kDescriptorWidth});
        std::copy_n(f.data(), kDescriptorWidth, both.data());
        std::copy_n(l.data(), kDescriptorWidth, both.data() + kDescriptorWidth);
        y = models.joint->forward(both, nn::Mode::Eval);
        out.pipeline = Pipeline::Joint;
    } else if (frontal != nullptr) {
        check(*frontal, models.frontal.get(), "frontal");
        y = models.frontal->forward(mask_tensor(*frontal), nn::Mode::Eval);
        out.pipeline = Pipeline::Frontal;
    } else {
        check(*lateral, models.lateral.get(), "lateral");
        y = models.lateral->forward(mask_tensor(*lateral), nn::Mode::Eval);
        out.pipeline = Pipeline::Lateral;
    }
    out.coefficients.resize(static_cast<Eigen::Index>(y.size()));
    for (std::size_t i = 0; i < y.size(); ++i) {
        out.coefficients[static_cast<Eigen::Index>(i)] = y[i];
    }
    return out;
}

bool checkpoint_exists(const std::filesystem::path& dir)
{
    return std::filesystem::exists(dir / "checkpoint.json");
}

void save_models(ModelSet& models, const std::filesystem::path& checkpoint_dir)
{
    if (models.frontal) {
        std::filesystem::create_directories(checkpoint_dir / "frontal");
        nn::save_checkpoint(checkpoint_dir / "frontal", *models.frontal, models.frontal->architecture_json());
    }
    if (models.lateral) {
        std::filesystem::create_directories(checkpoint_dir / "lateral");
        nn::save_checkpoint(checkpoint_dir / "lateral", *models.lateral, models.lateral->architecture_json());
    }
    if (models.joint) {
        std::filesystem::create_directories(checkpoint_dir / "joint");
        nn::save_checkpoint(checkpoint_dir / "joint", *models.joint, models.joint->architecture_json());
    }
}

std::unique_ptr<BranchNet> load_branch(const std::filesystem::path& dir, View view, int k)
{
    if (!checkpoint_exists(dir)) {
        return nullptr;
    }
    const auto arch = nlohmann::json::parse(nn::read_checkpoint_architecture(dir));
    if (arch.value("network", "") != "branch" || parse_view(arch.at("view").get<std::string>()) != view) {
        throw std::runtime_error("checkpoint in " + dir.string() + " is not a " + std::string(to_string(view)) +
                                 " branch");
    }
    const NetConfig cfg = NetConfig::from_json(arch.at("config").dump());
    if (cfg.k != k) {
        throw std::runtime_error("checkpoint k does not match the shape space");
    }
    auto net = std::make_unique<BranchNet>(view, cfg, 0);
    nn::load_checkpoint(dir, *net);
    return net;
}

std::unique_ptr<JointNet> load_joint(const std::filesystem::path& dir, int k)
{
    if (!checkpoint_exists(dir)) {
        return nullptr;
    }
    const auto arch = nlohmann::json::parse(nn::read_checkpoint_architecture(dir));
    if (arch.value("network", "") != "joint") {
        throw std::runtime_error("checkpoint in " + dir.string() + " is not a joint network");
    }
    const NetConfig cfg = NetConfig::from_json(arch.at("config").dump());
    if (cfg.k != k) {
        throw std::runtime_error("checkpoint k does not match the shape space");
    }
    auto net = std::make_unique<JointNet>(cfg, 0);
    nn::load_checkpoint(dir, *net);
    return net;
}

std::unique_ptr<ModelSet> load_models(const ShapeSpace& space, const std::filesystem::path& checkpoint_dir)
{
    auto models = std::make_unique<ModelSet>();
    models->space = space;
    models->frontal = load_branch(checkpoint_dir / "frontal", View::Frontal, space.k());
    models->lateral = load_branch(checkpoint_dir / "lateral", View::Lateral, space.k());
    models->joint = load_joint(checkpoint_dir / "joint", space.k());
    return models;
}

} // namespace maskshape
