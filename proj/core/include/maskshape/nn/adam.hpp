#pragma once

#include "maskshape/nn/layers.hpp"

#include <span>

namespace maskshape::nn {

struct AdamConfig
{
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Bias-corrected Adam. Moments and the step count live on each Parameter.
template <typename T>
void adam_step(std::span<Parameter<T>* const> params, const AdamConfig& config);

} // namespace maskshape::nn
