#include "maskshape/nn/loss.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace maskshape::nn {

ShapeLoss::ShapeLoss(const Eigen::MatrixXd& basis, std::size_t vertex_count, double lambda)
    : gram_(basis.transpose() * basis), n_(static_cast<double>(vertex_count))
{
    if (vertex_count == 0) {
        throw std::invalid_argument("shape loss needs a positive vertex count");
    }
    set_lambda(lambda);
}

void ShapeLoss::set_lambda(double lambda)
{
    if (!(lambda >= 0.0 && lambda <= 1.0)) {
        throw std::invalid_argument("loss lambda must lie in [0, 1]");
    }
    lambda_ = lambda;
}

double ShapeLoss::evaluate(const Eigen::VectorXd& pred, const Eigen::VectorXd& target, Eigen::VectorXd* grad) const
{
    if (pred.size() != gram_.rows() || target.size() != gram_.rows()) {
        throw std::invalid_argument("loss expects " + std::to_string(gram_.rows()) + " coefficients");
    }
    const Eigen::VectorXd d = pred - target;
    const Eigen::VectorXd gd = gram_ * d;
    if (grad) {
        *grad = 2.0 * (1.0 - lambda_) * d + (2.0 * lambda_ / n_) * gd;
    }
    return (1.0 - lambda_) * d.squaredNorm() + lambda_ * d.dot(gd) / n_;
}

template <typename T>
double ShapeLoss::evaluate(const Tensor<T>& pred, const Tensor<T>& target, Tensor<T>* grad) const
{
    const std::size_t k = static_cast<std::size_t>(gram_.rows());
    if (pred.rank() != 2 || pred.dim(1) != k || pred.shape() != target.shape()) {
        throw std::invalid_argument("loss expects matching (batch, " + std::to_string(k) + ") tensors, got " +
                                    shape_string(pred.shape()) + " and " + shape_string(target.shape()));
    }
    const std::size_t batch = pred.dim(0);
    if (batch == 0) {
        throw std::invalid_argument("loss over an empty batch");
    }
    if (grad) {
        *grad = Tensor<T>(pred.shape());
    }
    double total = 0.0;
    Eigen::VectorXd p(k), t(k), g;
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t i = 0; i < k; ++i) {
            p[i] = pred[b * k + i];
            t[i] = target[b * k + i];
        }
        total += evaluate(p, t, grad ? &g : nullptr);
        if (grad) {
            for (std::size_t i = 0; i < k; ++i) {
                (*grad)[b * k + i] = static_cast<T>(g[i] / static_cast<double>(batch));
            }
        }
    }
    const double mean = total / static_cast<double>(batch);
    if (!std::isfinite(mean)) {
        throw NonFiniteError("non-finite loss");
    }
    return mean;
}

double lambda_schedule(int epoch)
{
    return lambda_schedule(epoch, LambdaSchedule{});
}

double lambda_schedule(int epoch, const LambdaSchedule& schedule)
{
    if (epoch < 0) {
        throw std::invalid_argument("epoch must be non-negative");
    }
    if (schedule.step_epochs < 1) {
        throw std::invalid_argument("lambda schedule step must be at least one epoch");
    }
    return std::min(schedule.cap, schedule.increment * static_cast<double>(epoch / schedule.step_epochs));
}

template double ShapeLoss::evaluate(const Tensor<float>&, const Tensor<float>&, Tensor<float>*) const;
template double ShapeLoss::evaluate(const Tensor<double>&, const Tensor<double>&, Tensor<double>*) const;

} // namespace maskshape::nn
