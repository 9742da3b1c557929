#include "maskshape/began.hpp"

#include "maskshape/nn/adam.hpp"

#include <boost/math/distributions/chi_squared.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace maskshape {

namespace {

using nn::Tensor;

nn::Sequential<float> build_mlp(int in, const std::vector<int>& hidden, int out, std::mt19937_64& rng,
                                const std::string& name)
{
    nn::Sequential<float> net;
    int width = in;
    for (int h : hidden) {
        net.add<nn::Linear<float>>(static_cast<std::size_t>(width), static_cast<std::size_t>(h), rng);
        net.add<nn::ReLU<float>>();
        width = h;
    }
    net.add<nn::Linear<float>>(static_cast<std::size_t>(width), static_cast<std::size_t>(out), rng);
    net.set_name(name);
    return net;
}

Tensor<float> uniform_latent(std::size_t batch, int dim, std::mt19937_64& rng)
{
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    Tensor<float> z({batch, static_cast<std::size_t>(dim)});
    for (std::size_t i = 0; i < z.size(); ++i) {
        z[i] = u(rng);
    }
    return z;
}

// Mean |x - recon|. Fills d/d(recon); d/dx is its negation.
double l1_loss(const Tensor<float>& x, const Tensor<float>& recon, Tensor<float>& grad_recon)
{
    grad_recon = Tensor<float>(recon.shape());
    const float inv = 1.0f / static_cast<float>(x.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const float d = x[i] - recon[i];
        sum += std::abs(static_cast<double>(d));
        grad_recon[i] = d > 0.0f ? -inv : (d < 0.0f ? inv : 0.0f);
    }
    return sum / static_cast<double>(x.size());
}

void step(nn::Sequential<float>& net, const nn::AdamConfig& cfg)
{
    auto params = net.parameters();
    nn::adam_step<float>(params, cfg);
}

} // namespace

GanDivergence::GanDivergence(int epoch, const std::string& what)
    : std::runtime_error("GAN diverged at epoch " + std::to_string(epoch) + ": " + what), epoch_(epoch)
{
}

Eigen::VectorXd coefficient_scale(const ShapeSpace& space)
{
    Eigen::VectorXd s = space.variances.cwiseMax(0.0).cwiseSqrt();
    for (Eigen::Index i = 0; i < s.size(); ++i) {
        if (!(s[i] > 0.0)) {
            s[i] = 1.0;
        }
    }
    return s;
}

GanModel began_train(std::span<const Coefficients> real, const Eigen::VectorXd& scale, const BeganConfig& config)
{
    if (real.size() < config.min_samples) {
        throw std::invalid_argument("began_train: need at least " + std::to_string(config.min_samples) +
                                    " real samples");
    }
    if (config.latent_dim < 1 || config.batch_size < 1 || config.epochs < 1 || config.hidden.empty()) {
        throw std::invalid_argument("began_train: invalid configuration");
    }
    const int k = static_cast<int>(scale.size());
    if ((scale.array() <= 0.0).any()) {
        throw std::invalid_argument("began_train: scale must be positive");
    }
    for (const auto& phi : real) {
        if (phi.size() != k) {
            throw std::invalid_argument("began_train: sample dimension does not match the scale");
        }
    }

    std::mt19937_64 rng(config.seed);
    GanModel model;
    model.latent_dim = config.latent_dim;
    model.gamma = config.gamma;
    model.scale = scale;
    model.generator = build_mlp(config.latent_dim, config.hidden, k, rng, "generator");
    model.discriminator = build_mlp(k, config.hidden, k, rng, "discriminator");
    const nn::AdamConfig adam{config.learning_rate};

    const std::size_t n = real.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    const auto batch = static_cast<std::size_t>(config.batch_size);

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double m_sum = 0.0;
        int updates = 0;
        try {
            for (std::size_t start = 0; start < n; start += batch) {
                const std::size_t b = std::min(batch, n - start);
                Tensor<float> x({b, static_cast<std::size_t>(k)});
                for (std::size_t i = 0; i < b; ++i) {
                    const auto& phi = real[order[start + i]];
                    for (int j = 0; j < k; ++j) {
                        x[i * k + j] = static_cast<float>(phi[j] / scale[j]);
                    }
                }
                const Tensor<float> z = uniform_latent(b, config.latent_dim, rng);

                // Generator: minimise L(G(z)) through the discriminator.
                model.generator.zero_grad();
                const Tensor<float> fake = model.generator.forward(z, nn::Mode::Train);
                Tensor<float> g_recon;
                l1_loss(fake, model.discriminator.forward(fake, nn::Mode::Train), g_recon);
                Tensor<float> g_fake = model.discriminator.backward(g_recon);
                for (std::size_t i = 0; i < g_fake.size(); ++i) {
                    g_fake[i] -= g_recon[i];
                }
                model.generator.backward(g_fake);
                step(model.generator, adam);

                // Discriminator: minimise L(x) - k_t L(G(z)) with G(z) held fixed.
                model.discriminator.zero_grad();
                const double loss_real = l1_loss(x, model.discriminator.forward(x, nn::Mode::Train), g_recon);
                model.discriminator.backward(g_recon);
                const double loss_fake = l1_loss(fake, model.discriminator.forward(fake, nn::Mode::Train), g_recon);
                for (std::size_t i = 0; i < g_recon.size(); ++i) {
                    g_recon[i] *= static_cast<float>(-model.k_t);
                }
                model.discriminator.backward(g_recon);
                step(model.discriminator, adam);

                if (!std::isfinite(loss_real) || !std::isfinite(loss_fake)) {
                    throw nn::NonFiniteError("non-finite autoencoder loss");
                }
                const double balance = config.gamma * loss_real - loss_fake;
                model.k_t = std::clamp(model.k_t + config.lambda_k * balance, 0.0, 1.0);
                model.k_history.push_back(model.k_t);
                m_sum += loss_real + std::abs(balance);
                ++updates;
            }
        } catch (const nn::NonFiniteError& e) {
            throw GanDivergence(epoch, e.what());
        }
        model.convergence.push_back(m_sum / updates);
    }
    return model;
}

std::vector<Coefficients> began_sample(GanModel& model, std::size_t count, std::uint64_t seed)
{
    if (count == 0) {
        throw std::invalid_argument("began_sample: count must be positive");
    }
    std::mt19937_64 rng(seed);
    const Tensor<float> z = uniform_latent(count, model.latent_dim, rng);
    const Tensor<float> y = model.generator.forward(z, nn::Mode::Eval);
    const auto k = static_cast<std::size_t>(model.scale.size());
    std::vector<Coefficients> out(count, Coefficients(model.scale.size()));
    for (std::size_t i = 0; i < count; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            out[i][static_cast<Eigen::Index>(j)] = static_cast<double>(y[i * k + j]) * model.scale[j];
        }
    }
    return out;
}

double mahalanobis(const Coefficients& phi, const Eigen::VectorXd& sigma)
{
    return std::sqrt((phi.array() / sigma.array()).square().sum());
}

double chi_square_quantile(int dof, double probability)
{
    return boost::math::quantile(boost::math::chi_squared(static_cast<double>(dof)), probability);
}

} // namespace maskshape
