#pragma once

#include "maskshape/pipeline.hpp"

#include <filesystem>

namespace maskshape::testing {

/// A run small enough to take every stage in a couple of seconds.
inline RunConfig tiny_run(const std::filesystem::path& out)
{
    RunConfig c;
    c.out = out;
    c.seed = 5;
    c.k = 3;
    c.dataset_size = 80;
    c.kmeans_k = 3;
    c.regularize_k = {1, 2, 3};
    c.gan.min_samples = 4;
    c.gan.epochs = 3;
    c.gan.batch_size = 4;
    c.gan.hidden = {8};
    c.gan.latent_dim = 4;
    c.net.growth = 2;
    c.net.dense_layers = 1;
    c.net.stem_channels = 3;
    c.train.epochs = 2;
    c.train.batch_size = 16;
    return c;
}

/// Runs every stage through joint training.
inline void run_through_training(const RunConfig& c)
{
    stage_gen_data(c);
    stage_fit_space(c);
    stage_augment(c);
    stage_render(c);
    stage_train(c, Pipeline::Frontal);
    stage_train(c, Pipeline::Lateral);
    stage_train(c, Pipeline::Joint);
}

} // namespace maskshape::testing
