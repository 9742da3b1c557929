#pragma once

#include "maskshape/nn/layers.hpp"

#include <cstdint>
#include <string>

namespace maskshape::nn {

struct GradCheckResult
{
    double max_relative_error = 0.0;
    std::string worst;  ///< "input[i]" or "<param>[i]" of the largest error
    std::size_t checked = 0;
    double nonsmooth_margin = 0.0;  ///< of the unperturbed forward
};

/**
 * Compares analytic gradients against central differences.
 *
 * The objective is sum(R * forward(x)) with a fixed random R, so every output
 * element contributes. All parameters and all input elements are perturbed
 * by +-epsilon. Error per element is |a - n| / max(|a|, |n|, 1e-8).
 */
GradCheckResult grad_check(Layer<double>& layer, const Tensor<double>& input, Mode mode = Mode::Train,
                           double epsilon = 1e-5, std::uint64_t seed = 7);

} // namespace maskshape::nn
