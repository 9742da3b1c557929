#include "maskshape/nn/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace maskshape::nn {

template <typename T>
void adam_step(std::span<Parameter<T>* const> params, const AdamConfig& config)
{
    if (!(config.lr > 0.0) || config.beta1 < 0.0 || config.beta1 >= 1.0 || config.beta2 < 0.0 || config.beta2 >= 1.0) {
        throw std::invalid_argument("invalid Adam configuration");
    }
    for (Parameter<T>* p : params) {
        if (p->grad.shape() != p->value.shape() || p->m.shape() != p->value.shape() ||
            p->v.shape() != p->value.shape()) {
            throw std::invalid_argument("Adam state shape mismatch for " + p->name);
        }
        ++p->step;
        const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(p->step));
        const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(p->step));
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const double g = p->grad[i];
            const double m = config.beta1 * p->m[i] + (1.0 - config.beta1) * g;
            const double v = config.beta2 * p->v[i] + (1.0 - config.beta2) * g * g;
            p->m[i] = static_cast<T>(m);
            p->v[i] = static_cast<T>(v);
            const double update = config.lr * (m / c1) / (std::sqrt(v / c2) + config.epsilon);
            p->value[i] = static_cast<T>(p->value[i] - update);
        }
        require_finite(p->value, "adam update of " + p->name);
    }
}

template void adam_step(std::span<Parameter<float>* const>, const AdamConfig&);
template void adam_step(std::span<Parameter<double>* const>, const AdamConfig&);

} // namespace maskshape::nn
