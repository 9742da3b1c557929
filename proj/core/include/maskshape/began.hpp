#pragma once

#include "maskshape/nn/layers.hpp"
#include "maskshape/shape_space.hpp"

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace maskshape {

struct BeganConfig
{
    int latent_dim = 30;
    std::vector<int> hidden{64, 64};
    double gamma = 0.7;
    double lambda_k = 0.001;
    double learning_rate = 1e-4;
    int epochs = 400;
    int batch_size = 32;
    std::uint64_t seed = 0;
    std::size_t min_samples = 100;
};

/// Thrown when a loss turns non-finite; carries the 1-based epoch.
class GanDivergence : public std::runtime_error
{
public:
    GanDivergence(int epoch, const std::string& what);
    int epoch() const { return epoch_; }

private:
    int epoch_;
};

/**
 * Boundary-equilibrium GAN over standardized coefficient vectors.
 *
 * The discriminator is an autoencoder; its per-sample loss is the mean
 * absolute reconstruction error.
 */
struct GanModel
{
    nn::Sequential<float> generator;
    nn::Sequential<float> discriminator;
    int latent_dim = 30;
    double k_t = 0.0;
    double gamma = 0.7;
    /// Per-dimension divisor applied before training and undone when sampling.
    Eigen::VectorXd scale;
    /// Convergence measure M averaged over each epoch.
    std::vector<double> convergence;
    /// k_t after every update, for the clamp invariant.
    std::vector<double> k_history;
};

/// Per-dimension standard deviations from the space, with zeros replaced by 1.
Eigen::VectorXd coefficient_scale(const ShapeSpace& space);

GanModel began_train(std::span<const Coefficients> real, const Eigen::VectorXd& scale, const BeganConfig& config);

/// `count` samples from z ~ U(-1, 1)^latent, de-standardized.
std::vector<Coefficients> began_sample(GanModel& model, std::size_t count, std::uint64_t seed);

/// sqrt(sum phi_i^2 / sigma_i^2).
double mahalanobis(const Coefficients& phi, const Eigen::VectorXd& sigma);

/// Upper quantile of the chi-square distribution with `dof` degrees of freedom.
double chi_square_quantile(int dof, double probability);

} // namespace maskshape
