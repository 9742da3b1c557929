#pragma once

#include "maskshape/nn/grad_check.hpp"
#include "maskshape/nn/layers.hpp"

#include <functional>
#include <random>

namespace maskshape::testing {

inline nn::Tensor<double> random_tensor(nn::Tensor<double>::Shape shape, std::mt19937_64& rng, double scale = 1.0)
{
    nn::Tensor<double> t(std::move(shape));
    std::normal_distribution<double> nd(0.0, scale);
    for (std::size_t i = 0; i < t.size(); ++i) {
        t[i] = nd(rng);
    }
    return t;
}

/// Redraws the input until no ReLU or pooling decision sits within `margin` of a kink, then checks.
inline nn::GradCheckResult checked_away_from_kinks(nn::Layer<double>& layer,
                                                   const std::function<nn::Tensor<double>()>& draw,
                                                   nn::Mode mode = nn::Mode::Train, double margin = 1e-4)
{
    for (int attempt = 0; attempt < 200; ++attempt) {
        const nn::Tensor<double> x = draw();
        layer.forward(x, mode);
        if (layer.nonsmooth_margin() > margin) {
            return nn::grad_check(layer, x, mode);
        }
    }
    throw std::runtime_error("could not draw an input away from kinks");
}

/// Wraps a layer and inflates every gradient by 1%, to prove the checker notices.
class FaultyGradient : public nn::Layer<double>
{
public:
    explicit FaultyGradient(nn::Layer<double>& inner) : inner_(inner) {}

    nn::Tensor<double> forward(const nn::Tensor<double>& x, nn::Mode mode) override { return inner_.forward(x, mode); }
    nn::Tensor<double> backward(const nn::Tensor<double>& g) override
    {
        nn::Tensor<double> dx = inner_.backward(g);
        for (std::size_t i = 0; i < dx.size(); ++i) {
            dx[i] *= 1.01;
        }
        for (auto* p : inner_.parameters()) {
            for (std::size_t i = 0; i < p->grad.size(); ++i) {
                p->grad[i] *= 1.01;
            }
        }
        return dx;
    }
    void collect_parameters(std::vector<nn::Parameter<double>*>& out) override { inner_.collect_parameters(out); }
    void collect_buffers(std::vector<nn::Buffer<double>>& out) override { inner_.collect_buffers(out); }
    double nonsmooth_margin() const override { return inner_.nonsmooth_margin(); }
    std::string kind() const override { return "faulty"; }

private:
    nn::Layer<double>& inner_;
};

} // namespace maskshape::testing
