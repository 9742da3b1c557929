#include "maskshape/nn/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace maskshape::nn {

namespace {

// d/dt sum(R * f(t)) by central differences. Differencing the outputs before
// weighting keeps untouched elements exactly zero, so the roundoff of the
// full sum does not swamp small gradients.
double central_difference(const Tensor<double>& plus, const Tensor<double>& minus, const Tensor<double>& weights,
                          double epsilon)
{
    double sum = 0.0;
    for (std::size_t i = 0; i < plus.size(); ++i) {
        sum += weights[i] * (plus[i] - minus[i]);
    }
    return sum / (2.0 * epsilon);
}

void record(GradCheckResult& result, double analytic, double numeric, const std::string& where, std::size_t i)
{
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    const double err = std::abs(analytic - numeric) / denom;
    if (result.checked++ == 0 || err > result.max_relative_error) {
        result.max_relative_error = err;
        result.worst = where + "[" + std::to_string(i) + "]";
    }
}

} // namespace

GradCheckResult grad_check(Layer<double>& layer, const Tensor<double>& input, Mode mode, double epsilon,
                           std::uint64_t seed)
{
    // Train-mode forwards move batch-norm running statistics; put them back afterwards.
    std::vector<Tensor<double>> saved_buffers;
    for (const auto& b : layer.buffers()) {
        saved_buffers.push_back(*b.tensor);
    }

    const Tensor<double> probe = layer.forward(input, mode);
    const double margin = layer.nonsmooth_margin();
    Tensor<double> weights(probe.shape());
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    for (std::size_t i = 0; i < weights.size(); ++i) {
        weights[i] = dist(rng);
    }

    layer.forward(input, mode);
    layer.zero_grad();
    const Tensor<double> input_grad = layer.backward(weights);
    auto params = layer.parameters();
    std::vector<Tensor<double>> analytic;
    analytic.reserve(params.size());
    for (auto* p : params) {
        analytic.push_back(p->grad);
    }

    GradCheckResult result;
    result.nonsmooth_margin = margin;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor<double>& value = params[pi]->value;
        for (std::size_t i = 0; i < value.size(); ++i) {
            const double saved = value[i];
            value[i] = saved + epsilon;
            const Tensor<double> plus = layer.forward(input, mode);
            value[i] = saved - epsilon;
            const Tensor<double> minus = layer.forward(input, mode);
            value[i] = saved;
            record(result, analytic[pi][i], central_difference(plus, minus, weights, epsilon), params[pi]->name, i);
        }
    }
    if (!input_grad.empty()) {
        Tensor<double> x = input;
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double saved = x[i];
            x[i] = saved + epsilon;
            const Tensor<double> plus = layer.forward(x, mode);
            x[i] = saved - epsilon;
            const Tensor<double> minus = layer.forward(x, mode);
            x[i] = saved;
            record(result, input_grad[i], central_difference(plus, minus, weights, epsilon), "input", i);
        }
    }
    auto buffers = layer.buffers();
    for (std::size_t i = 0; i < buffers.size(); ++i) {
        *buffers[i].tensor = saved_buffers[i];
    }
    return result;
}

} // namespace maskshape::nn
