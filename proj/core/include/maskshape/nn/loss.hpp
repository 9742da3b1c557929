#pragma once

#include "maskshape/nn/tensor.hpp"

#include <Eigen/Core>

namespace maskshape::nn {

/**
 * L(phi, phi_s) = (1 - lambda) |d|^2 + lambda |Omega d|^2 / N, d = phi - phi_s.
 *
 * Only Omega^T Omega (k x k) is kept; with an orthonormal basis it is the
 * identity and the loss collapses to ((1 - lambda) + lambda / N) |d|^2.
 */
class ShapeLoss
{
public:
    ShapeLoss(const Eigen::MatrixXd& basis, std::size_t vertex_count, double lambda = 0.0);

    void set_lambda(double lambda);
    double lambda() const { return lambda_; }
    int k() const { return static_cast<int>(gram_.rows()); }

    /// Loss and dL/dpred for a single coefficient pair.
    double evaluate(const Eigen::VectorXd& pred, const Eigen::VectorXd& target, Eigen::VectorXd* grad = nullptr) const;

    /// Batch mean over rows of (B, k) tensors; `grad` receives dMean/dPred.
    template <typename T>
    double evaluate(const Tensor<T>& pred, const Tensor<T>& target, Tensor<T>* grad = nullptr) const;

private:
    Eigen::MatrixXd gram_;
    double n_;
    double lambda_ = 0.0;
};

struct LambdaSchedule
{
    int step_epochs = 5;
    double increment = 0.1;
    double cap = 0.9;
};

/// lambda = min(cap, increment * floor(epoch / step_epochs)), epochs counted from 0.
double lambda_schedule(int epoch, const LambdaSchedule& schedule);

/// The default schedule: min(0.9, 0.1 * floor(epoch / 5)).
double lambda_schedule(int epoch);

} // namespace maskshape::nn
