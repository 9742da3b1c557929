#include "maskshape/pipeline.hpp"

#include "maskshape/evaluation.hpp"
#include "maskshape/humanoid.hpp"
#include "maskshape/image_io.hpp"
#include "maskshape/nn/checkpoint.hpp"
#include "maskshape/sfmt.hpp"
#include "maskshape/skeleton.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <set>

namespace maskshape {

namespace fs = std::filesystem;
using nlohmann::json;
using nn::Tensor;

namespace {

constexpr double kNoiseRate = 0.01;
constexpr int kHoleSize = 8;
constexpr std::size_t kErrorMapBodies = 3;

void say(const Logger& log, const std::string& line)
{
    if (log) {
        log(line);
    }
}

std::string body_file(std::size_t i)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "b%05zu.obj", i);
    return buf;
}

std::string mask_stack_name(View view)
{
    return "masks_" + std::string(to_string(view)) + ".sfmt";
}

double seconds_since(std::chrono::steady_clock::time_point t0)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

ShapeSpace require_space(const RunConfig& config)
{
    if (!fs::exists(config.space_dir())) {
        throw StageOrderError("shape space missing: run fit-space first");
    }
    ShapeSpace space = load_shape_space(config.space_dir());
    if (space.k() != config.k) {
        throw std::runtime_error("shape space has k=" + std::to_string(space.k()) + " but the config asks for k=" +
                                 std::to_string(config.k));
    }
    return space;
}

DatasetManifest require_dataset(const RunConfig& config)
{
    if (!fs::exists(config.dataset_dir() / "dataset.json")) {
        throw StageOrderError("dataset missing: run augment first");
    }
    return load_dataset(config.dataset_dir());
}

Coefficients row_of(const DatasetManifest& d, int row)
{
    return d.coefficients.row(row).transpose();
}

NetConfig net_config(const RunConfig& config)
{
    NetConfig net = config.net;
    net.resolution = config.resolution;
    net.k = config.k;
    return net;
}

json history_json(const std::vector<EpochRecord>& h)
{
    json j = {{"epochs", h.size()}};
    if (!h.empty()) {
        j["first_train_loss"] = h.front().train_loss;
        j["final_train_loss"] = h.back().train_loss;
        j["final_val_loss"] = h.back().val_loss;
        j["final_val_rmse_mean"] = h.back().val_rmse_mean;
    }
    return j;
}

Logger epoch_logger(const Logger& log, std::string_view name)
{
    return [log, name = std::string(name)](const std::string& s) { say(log, name + ": " + s); };
}

std::string epoch_line(const EpochRecord& r)
{
    char buf[160];
    std::snprintf(buf, sizeof buf, "epoch %d lambda %.2f train %.6g val %.6g val_rmse_mean %.6g", r.epoch, r.lambda,
                  r.train_loss, r.val_loss, r.val_rmse_mean);
    return buf;
}

struct Predictions
{
    Eigen::MatrixXd frontal, lateral, joint;
};

Predictions predict_all(ModelSet& models, const Tensor<float>& fmasks, const Tensor<float>& lmasks)
{
    Predictions p;
    p.frontal = predict_batch(*models.frontal, fmasks);
    p.lateral = predict_batch(*models.lateral, lmasks);
    p.joint = predict_batch(*models.joint, joint_inputs(*models.frontal, *models.lateral, fmasks, lmasks));
    return p;
}

Tensor<float> stack_masks(const std::vector<BinaryMask>& masks)
{
    const auto r = static_cast<std::size_t>(masks.front().resolution);
    Tensor<float> t({masks.size(), 1, r, r});
    for (std::size_t i = 0; i < masks.size(); ++i) {
        for (std::size_t p = 0; p < r * r; ++p) {
            t[i * r * r + p] = masks[i].bits[p] != 0 ? 1.0f : 0.0f;
        }
    }
    return t;
}

BinaryMask mask_from_stack(const Tensor<float>& stack, std::size_t i, View view)
{
    const int r = static_cast<int>(stack.dim(2));
    BinaryMask m(r, view);
    const float* src = stack.data() + i * stack.stride0();
    for (std::size_t p = 0; p < m.bits.size(); ++p) {
        m.bits[p] = src[p] > 0.5f ? 1 : 0;
    }
    return m;
}

std::vector<BodyError> errors_for(const std::vector<std::string>& ids, const std::vector<Mesh>& truth,
                                  const ShapeSpace& space, const Eigen::MatrixXd& pred)
{
    std::vector<BodyError> out;
    out.reserve(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        out.push_back(body_error(ids[i], truth[i], decode(space, pred.row(static_cast<Eigen::Index>(i)).transpose())));
    }
    return out;
}

std::vector<double> column(const std::vector<BodyError>& rows, double BodyError::*field)
{
    std::vector<double> v;
    v.reserve(rows.size());
    for (const auto& r : rows) {
        v.push_back(r.*field);
    }
    return v;
}

double mean_torso_width(const ShapeSpace& space, const Eigen::MatrixXd& pred)
{
    double sum = 0.0;
    for (Eigen::Index i = 0; i < pred.rows(); ++i) {
        sum += torso_width(decode(space, pred.row(i).transpose()));
    }
    return sum / static_cast<double>(pred.rows());
}

} // namespace

// ---------------------------------------------------------------- config

std::string_view to_string(Profile p)
{
    return p == Profile::Desk ? "desk" : "full";
}

Profile parse_profile(std::string_view token)
{
    if (token == "desk") {
        return Profile::Desk;
    }
    if (token == "full") {
        return Profile::Full;
    }
    throw std::invalid_argument("unknown profile '" + std::string(token) + "' (expected desk or full)");
}

RunConfig RunConfig::for_profile(Profile p)
{
    RunConfig c;
    c.profile = p;
    if (p == Profile::Full) {
        c.resolution = 128;
        c.k = 50;
        c.dataset_size = 54308;
        c.kmeans_k = 100;
        c.regularize_k = {5, 15, 30};
        c.net.growth = 12;
    }
    return c;
}

void RunConfig::apply_json(const std::string& text)
{
    const json j = json::parse(text);
    if (!j.is_object()) {
        throw std::invalid_argument("run config must be a JSON object");
    }
    static const std::set<std::string> known{
        "profile", "out",      "seed",        "resolution", "k",     "port",         "dataset_size",  "proportions",
        "kmeans_k", "gaussian_scale", "regularize_k", "gan", "net", "train", "joint_epochs", "train_fraction"};
    for (const auto& [key, value] : j.items()) {
        if (!known.contains(key)) {
            throw std::invalid_argument("unknown run config key '" + key + "'");
        }
    }
    if (j.contains("profile")) {
        // A profile switch resets the scale defaults before the other keys apply.
        const RunConfig base = for_profile(parse_profile(j["profile"].get<std::string>()));
        const auto keep_out = out;
        const auto keep_seed = seed;
        const auto keep_port = port;
        *this = base;
        out = keep_out;
        seed = keep_seed;
        port = keep_port;
    }
    if (j.contains("out")) out = j["out"].get<std::string>();
    if (j.contains("seed")) seed = j["seed"].get<std::uint64_t>();
    if (j.contains("resolution")) resolution = j["resolution"].get<int>();
    if (j.contains("k")) k = j["k"].get<int>();
    if (j.contains("port")) port = j["port"].get<std::uint16_t>();
    if (j.contains("dataset_size")) dataset_size = j["dataset_size"].get<std::size_t>();
    if (j.contains("proportions")) proportions = j["proportions"].get<std::array<double, kProvenanceCount>>();
    if (j.contains("kmeans_k")) kmeans_k = j["kmeans_k"].get<int>();
    if (j.contains("gaussian_scale")) gaussian_scale = j["gaussian_scale"].get<double>();
    if (j.contains("regularize_k")) regularize_k = j["regularize_k"].get<std::vector<int>>();
    if (j.contains("joint_epochs")) joint_epochs = j["joint_epochs"].get<int>();
    if (j.contains("train_fraction")) train_fraction = j["train_fraction"].get<double>();
    if (j.contains("gan")) {
        const auto& g = j["gan"];
        gan.latent_dim = g.value("latent_dim", gan.latent_dim);
        gan.hidden = g.value("hidden", gan.hidden);
        gan.gamma = g.value("gamma", gan.gamma);
        gan.lambda_k = g.value("lambda_k", gan.lambda_k);
        gan.learning_rate = g.value("learning_rate", gan.learning_rate);
        gan.epochs = g.value("epochs", gan.epochs);
        gan.batch_size = g.value("batch_size", gan.batch_size);
        gan.min_samples = g.value("min_samples", gan.min_samples);
    }
    if (j.contains("net")) {
        const auto& n = j["net"];
        net.growth = n.value("growth", net.growth);
        net.dense_layers = n.value("dense_layers", net.dense_layers);
        net.dense_blocks = n.value("dense_blocks", net.dense_blocks);
        net.stem_channels = n.value("stem_channels", net.stem_channels);
    }
    if (j.contains("train")) {
        const auto& t = j["train"];
        train.epochs = t.value("epochs", train.epochs);
        train.batch_size = t.value("batch_size", train.batch_size);
        train.learning_rate = t.value("learning_rate", train.learning_rate);
        if (t.contains("lambda")) {
            const auto& l = t["lambda"];
            train.lambda.step_epochs = l.value("step_epochs", train.lambda.step_epochs);
            train.lambda.increment = l.value("increment", train.lambda.increment);
            train.lambda.cap = l.value("cap", train.lambda.cap);
        }
    }
}

std::string RunConfig::to_json() const
{
    const json j = {
        {"profile", std::string(to_string(profile))},
        {"out", out.string()},
        {"seed", seed},
        {"resolution", resolution},
        {"k", k},
        {"port", port},
        {"dataset_size", dataset_size},
        {"proportions", proportions},
        {"kmeans_k", kmeans_k},
        {"gaussian_scale", gaussian_scale},
        {"regularize_k", regularize_k},
        {"gan",
         {{"latent_dim", gan.latent_dim},
          {"hidden", gan.hidden},
          {"gamma", gan.gamma},
          {"lambda_k", gan.lambda_k},
          {"learning_rate", gan.learning_rate},
          {"epochs", gan.epochs},
          {"batch_size", gan.batch_size},
          {"min_samples", gan.min_samples}}},
        {"net",
         {{"growth", net.growth},
          {"dense_layers", net.dense_layers},
          {"dense_blocks", net.dense_blocks},
          {"stem_channels", net.stem_channels}}},
        {"train",
         {{"epochs", train.epochs},
          {"batch_size", train.batch_size},
          {"learning_rate", train.learning_rate},
          {"lambda",
           {{"step_epochs", train.lambda.step_epochs},
            {"increment", train.lambda.increment},
            {"cap", train.lambda.cap}}}}},
        {"joint_epochs", joint_epochs},
        {"train_fraction", train_fraction},
    };
    return j.dump();
}

std::uint64_t RunConfig::hash() const
{
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : to_json()) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

void RunConfig::validate() const
{
    net_config(*this).validate();
    if (dataset_size < 10) {
        throw std::invalid_argument("dataset_size must be at least 10");
    }
    if (std::any_of(proportions.begin(), proportions.end(), [](double p) { return !(p >= 0.0); }) ||
        !(proportions[0] > 0.0)) {
        throw std::invalid_argument("proportions must be non-negative with a positive original share");
    }
    if (kmeans_k < 2) {
        throw std::invalid_argument("kmeans_k must be at least 2");
    }
    if (!(gaussian_scale > 0.0)) {
        throw std::invalid_argument("gaussian_scale must be positive");
    }
    if (regularize_k.empty() ||
        std::any_of(regularize_k.begin(), regularize_k.end(), [this](int v) { return v < 1 || v > k; })) {
        throw std::invalid_argument("regularize_k entries must lie in [1, k]");
    }
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
        throw std::invalid_argument("train_fraction must lie in (0, 1)");
    }
    if (train.epochs < 1 || train.batch_size < 2 || !(train.learning_rate > 0.0) || joint_epochs < 0) {
        throw std::invalid_argument("training epochs, batch size and learning rate must be positive");
    }
    if (original_count() <= static_cast<std::size_t>(k)) {
        throw std::invalid_argument("the original share of the dataset must exceed k bodies");
    }
}

std::size_t RunConfig::original_count() const
{
    return apportion(dataset_size, proportions)[0];
}

fs::path RunConfig::path(const fs::path& leaf) const
{
    return out / leaf;
}

std::uint64_t derive_seed(std::uint64_t base, std::string_view tag)
{
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : tag) {
        h ^= c;
        h *= 1099511628211ull;
    }
    // splitmix64 finalizer over the combined value.
    std::uint64_t z = base + 0x9e3779b97f4a7c15ull * (h | 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// ---------------------------------------------------------------- stages

std::string stage_gen_data(const RunConfig& config, const Logger& log)
{
    config.validate();
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t n = config.original_count();
    const auto bodies = generate_population(derive_seed(config.seed, "population"), n);
    const fs::path dir = config.originals_dir();
    fs::remove_all(dir);
    fs::create_directories(dir);
    for (std::size_t i = 0; i < bodies.size(); ++i) {
        save_obj(bodies[i], dir / body_file(i));
    }
    save_obj(template_mesh(), config.path("template.obj"));
    say(log, "gen-data: wrote " + std::to_string(n) + " bodies to " + dir.string());
    return json{{"stage", "gen-data"}, {"bodies", n}, {"seconds", seconds_since(t0)}}.dump();
}

std::vector<Mesh> load_originals(const RunConfig& config)
{
    const fs::path dir = config.originals_dir();
    if (!fs::exists(dir)) {
        throw StageOrderError("original bodies missing: run gen-data first");
    }
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.path().extension() == ".obj") {
            files.push_back(e.path());
        }
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) {
        throw StageOrderError("no original bodies in " + dir.string() + ": run gen-data first");
    }
    std::vector<Mesh> meshes;
    meshes.reserve(files.size());
    for (const auto& f : files) {
        meshes.push_back(load_obj(f));
    }
    return meshes;
}

std::string stage_fit_space(const RunConfig& config, const Logger& log)
{
    config.validate();
    const auto t0 = std::chrono::steady_clock::now();
    const auto meshes = load_originals(config);
    const ShapeSpace space = fit_shape_space(meshes, config.k);
    save_shape_space(space, config.space_dir());
    const auto cumulative = cumulative_variance(space);
    say(log, "fit-space: k=" + std::to_string(space.k()) + " over " + std::to_string(meshes.size()) + " bodies");
    return json{{"stage", "fit-space"},
                {"k", space.k()},
                {"bodies", meshes.size()},
                {"explained_variance", cumulative[cumulative.size() - 1]},
                {"explained_fraction", cumulative[cumulative.size() - 1] / space.total_variance},
                {"seconds", seconds_since(t0)}}
        .dump();
}

std::string stage_augment(const RunConfig& config, const Logger& log)
{
    config.validate();
    const auto t0 = std::chrono::steady_clock::now();
    const ShapeSpace space = require_space(config);
    const auto originals = load_originals(config);
    const auto counts = apportion(config.dataset_size, config.proportions);

    std::vector<Coefficients> base;
    base.reserve(originals.size());
    for (const auto& m : originals) {
        base.push_back(encode(space, m));
    }
    std::vector<SourceSet> sources;
    sources.push_back({Provenance::Original, base});

    const int clusters = std::min<int>(config.kmeans_k, static_cast<int>(base.size()));
    const auto km = kmeans(base, clusters, derive_seed(config.seed, "kmeans"));
    sources.push_back({Provenance::Interp, interpolate_centroids(km.centroids, counts[1], derive_seed(config.seed, "interp"))});
    say(log, "augment: kmeans K=" + std::to_string(clusters) + " converged after " + std::to_string(km.iterations) +
                 " iterations");

    SourceSet gaussian{Provenance::Gaussian, {}};
    const std::uint64_t gseed = derive_seed(config.seed, "gaussian");
    for (std::size_t i = 0; i < counts[2]; ++i) {
        gaussian.items.push_back(sample_gaussian(space, gseed + i, config.gaussian_scale));
    }
    sources.push_back(std::move(gaussian));

    json ratio_report = json::object();
    std::array<std::array<double, 5>, kMergeGroups.size()> levels{};
    for (std::size_t g = 0; g < kMergeGroups.size(); ++g) {
        const auto parts = group_parts(kMergeGroups[g]);
        std::vector<double> ratios;
        for (const auto& m : originals) {
            ratios.push_back(part_ratio(m, parts));
        }
        const auto fit = fit_ratio_gaussian(ratios);
        levels[g] = ratio_levels(fit);
        ratio_report[std::string(to_string(kMergeGroups[g]))] = {{"mu", fit.mu}, {"sigma", fit.sigma}, {"levels", levels[g]}};
    }
    SourceSet merged{Provenance::SegMerge, {}};
    std::mt19937_64 mrng(derive_seed(config.seed, "segmerge"));
    std::uniform_int_distribution<std::size_t> pick(0, originals.size() - 1);
    for (std::size_t m = 0; merged.items.size() < counts[3]; ++m) {
        const std::size_t g = m % kMergeGroups.size();
        const double ratio = levels[g][(m / kMergeGroups.size()) % 5];
        const std::size_t torso = pick(mrng);
        std::size_t limb = pick(mrng);
        while (originals.size() > 1 && limb == torso) {
            limb = pick(mrng);
        }
        const auto parts = group_parts(kMergeGroups[g]);
        const Mesh body = segment_merge(originals[torso], originals[limb], parts, ratio, space);
        for (const auto& v : regularize_variants(space, body, config.regularize_k)) {
            merged.items.push_back(encode(space, v));
        }
    }
    sources.push_back(std::move(merged));
    say(log, "augment: segment-and-merge produced " + std::to_string(sources.back().items.size()) + " bodies");

    BeganConfig gan_config = config.gan;
    gan_config.seed = derive_seed(config.seed, "gan");
    const Eigen::VectorXd scale = coefficient_scale(space);
    json gan_report = {{"samples", counts[4]}};
    SourceSet gan{Provenance::Gan, {}};
    if (counts[4] > 0) {
        GanModel model = began_train(base, scale, gan_config);
        gan.items = began_sample(model, counts[4], derive_seed(config.seed, "gan-sample"));
        const Eigen::VectorXd sigma = space.variances.cwiseSqrt();
        const double bound = std::sqrt(chi_square_quantile(space.k(), 0.999));
        std::size_t inside = 0;
        for (const auto& phi : gan.items) {
            inside += mahalanobis(phi, sigma) < bound ? 1 : 0;
        }
        gan_report["within_chi_square_999"] = static_cast<double>(inside) / static_cast<double>(gan.items.size());
        gan_report["convergence_first"] = model.convergence.front();
        gan_report["convergence_final"] = model.convergence.back();
        gan_report["k_t"] = model.k_t;
        say(log, "augment: BEGAN trained for " + std::to_string(model.convergence.size()) + " epochs");
    }
    sources.push_back(std::move(gan));

    const DatasetManifest manifest =
        assemble_dataset(space, sources, counts, derive_seed(config.seed, "split"), config.train_fraction);
    save_dataset(manifest, config.dataset_dir());

    bool monotone = true;
    for (std::size_t i = 1; i < km.inertia.size(); ++i) {
        monotone = monotone && km.inertia[i] <= km.inertia[i - 1] * (1.0 + 1e-12);
    }
    const json report = {
        {"counts", counts},
        {"kmeans", {{"k", clusters}, {"iterations", km.iterations}, {"inertia", km.inertia}, {"monotone", monotone}}},
        {"ratios", ratio_report},
        {"gan", gan_report},
    };
    write_text_file(config.dataset_dir() / "augment_report.json", report.dump(2) + "\n");
    say(log, "augment: dataset of " + std::to_string(manifest.entries.size()) + " bodies written");
    return json{{"stage", "augment"},
                {"bodies", manifest.entries.size()},
                {"train", manifest.rows(Split::Train).size()},
                {"test", manifest.rows(Split::Test).size()},
                {"seconds", seconds_since(t0)}}
        .dump();
}

std::string stage_render(const RunConfig& config, const Logger& log)
{
    config.validate();
    const auto t0 = std::chrono::steady_clock::now();
    const ShapeSpace space = require_space(config);
    const DatasetManifest d = require_dataset(config);
    const fs::path mask_dir = config.dataset_dir() / "masks";
    fs::create_directories(mask_dir);
    const std::size_t r = static_cast<std::size_t>(config.resolution);
    for (View view : {View::Frontal, View::Lateral}) {
        SfmtBlob blob;
        blob.dtype = SfmtDtype::F32;
        blob.dims = {d.entries.size(), r, r};
        blob.values.reserve(d.entries.size() * r * r);
        for (const auto& e : d.entries) {
            const BinaryMask mask = render_view(decode(space, row_of(d, e.row)), view, config.resolution);
            save_mask_png(mask, mask_dir / mask_file_name(e.id, view));
            for (auto b : mask.bits) {
                blob.values.push_back(b);
            }
        }
        write_sfmt(config.dataset_dir() / mask_stack_name(view), blob);
        say(log, "render: " + std::string(to_string(view)) + " masks done");
    }
    return json{{"stage", "render"},
                {"bodies", d.entries.size()},
                {"resolution", config.resolution},
                {"seconds", seconds_since(t0)}}
        .dump();
}

Tensor<float> load_mask_stack(const RunConfig& config, View view)
{
    const fs::path file = config.dataset_dir() / mask_stack_name(view);
    if (!fs::exists(file)) {
        throw StageOrderError("masks missing: run render first");
    }
    const SfmtBlob blob = read_sfmt(file);
    if (blob.dims.size() != 3 || blob.dims[1] != blob.dims[2]) {
        throw std::runtime_error(file.string() + " is not an (M, R, R) mask stack");
    }
    if (blob.dims[1] != static_cast<std::uint64_t>(config.resolution)) {
        throw std::runtime_error("masks were rendered at " + std::to_string(blob.dims[1]) +
                                 " pixels but the config asks for " + std::to_string(config.resolution));
    }
    Tensor<float> t({blob.dims[0], 1, blob.dims[1], blob.dims[2]});
    for (std::size_t i = 0; i < t.size(); ++i) {
        t[i] = static_cast<float>(blob.values[i]);
    }
    return t;
}

std::string stage_train(const RunConfig& config, Pipeline network, const Logger& log)
{
    config.validate();
    const auto t0 = std::chrono::steady_clock::now();
    const std::string name(to_string(network));
    const fs::path ckpt = config.checkpoint_dir();
    if (network == Pipeline::Joint &&
        (!checkpoint_exists(ckpt / "frontal") || !checkpoint_exists(ckpt / "lateral"))) {
        throw StageOrderError("branches not trained: run train frontal and train lateral first");
    }
    const ShapeSpace space = require_space(config);
    const DatasetManifest d = require_dataset(config);
    const auto train_rows = d.rows(Split::Train);
    const auto test_rows = d.rows(Split::Test);
    const NetConfig net = net_config(config);
    TrainConfig tc = config.train;
    tc.seed = derive_seed(config.seed, "shuffle/" + name);
    const Logger elog = epoch_logger(log, "train " + name);
    const auto on_epoch = [&](const EpochRecord& r) { elog(epoch_line(r)); };

    json summary = {{"stage", "train"}, {"network", name}};
    std::vector<EpochRecord> history;
    if (network == Pipeline::Joint) {
        auto models = load_models(space, ckpt);
        const auto f_sum = parameter_checksum(*models->frontal);
        const auto l_sum = parameter_checksum(*models->lateral);
        say(log, "train joint: extracting descriptors");
        const Tensor<float> x = joint_inputs(*models->frontal, *models->lateral, load_mask_stack(config, View::Frontal),
                                             load_mask_stack(config, View::Lateral));
        JointNet joint(net, derive_seed(config.seed, "init/joint"));
        if (config.joint_epochs > 0) {
            tc.epochs = config.joint_epochs;
        }
        history = train_network(joint, select_samples(x, d.coefficients, train_rows),
                                select_samples(x, d.coefficients, test_rows), space, tc, on_epoch);
        fs::create_directories(ckpt / "joint");
        nn::save_checkpoint(ckpt / "joint", joint, joint.architecture_json());
        summary["branches_unchanged"] =
            parameter_checksum(*models->frontal) == f_sum && parameter_checksum(*models->lateral) == l_sum;
    } else {
        const View view = network == Pipeline::Frontal ? View::Frontal : View::Lateral;
        const Tensor<float> masks = load_mask_stack(config, view);
        BranchNet branch(view, net, derive_seed(config.seed, "init/" + name));
        history = train_network(branch, select_samples(masks, d.coefficients, train_rows),
                                select_samples(masks, d.coefficients, test_rows), space, tc, on_epoch);
        fs::create_directories(ckpt / name);
        nn::save_checkpoint(ckpt / name, branch, branch.architecture_json());
    }
    write_text_file(ckpt / name / "history.csv", history_csv(history));
    summary["history"] = history_json(history);
    summary["seconds"] = seconds_since(t0);
    return summary.dump();
}

// ---------------------------------------------------------------- evaluation

BinaryMask salt_and_pepper(const BinaryMask& mask, double rate, std::mt19937_64& rng)
{
    if (!(rate >= 0.0 && rate <= 1.0)) {
        throw std::invalid_argument("noise rate must lie in [0, 1]");
    }
    std::bernoulli_distribution flip(rate);
    BinaryMask out = mask;
    for (auto& b : out.bits) {
        if (flip(rng)) {
            b = b != 0 ? 0 : 1;
        }
    }
    return out;
}

BinaryMask punch_hole(const BinaryMask& mask, int row, int col, int size)
{
    if (size < 1) {
        throw std::invalid_argument("hole size must be positive");
    }
    BinaryMask out = mask;
    const int r0 = row - size / 2, c0 = col - size / 2;
    for (int r = std::max(0, r0); r < std::min(mask.resolution, r0 + size); ++r) {
        for (int c = std::max(0, c0); c < std::min(mask.resolution, c0 + size); ++c) {
            out.at(r, c) = 0;
        }
    }
    return out;
}

std::pair<int, int> torso_pixel(const Mesh& mesh, View view, int resolution)
{
    const auto torso = vertices_with_label(mesh, PartLabel::Torso);
    const Eigen::Vector2d p = project_to_image(centroid(mesh, torso), ViewSpec{view}, resolution);
    return {static_cast<int>(std::floor(p.y())), static_cast<int>(std::floor(p.x()))};
}

double torso_width(const Mesh& mesh)
{
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
        if (mesh.labels[i] == PartLabel::Torso) {
            lo = std::min(lo, mesh.vertices[i].x());
            hi = std::max(hi, mesh.vertices[i].x());
        }
    }
    if (!(hi >= lo)) {
        throw std::invalid_argument("torso_width: mesh has no torso vertices");
    }
    return hi - lo;
}

JointRegressor space_joint_regressor(const ShapeSpace& space)
{
    const int k = space.k();
    std::vector<Mesh> meshes;
    meshes.push_back(decode(space, Coefficients::Zero(k)));
    for (int i = 0; i < k; ++i) {
        const double sd = std::sqrt(std::max(space.variances[i], 0.0));
        for (double sign : {-1.0, 1.0}) {
            Coefficients phi = Coefficients::Zero(k);
            phi[i] = sign * (sd > 0.0 ? sd : 1.0);
            meshes.push_back(decode(space, phi));
        }
    }
    return fit_joint_regressor(meshes, derive_joint_annotations(meshes.front()));
}

std::string stage_eval(const RunConfig& config, const Logger& log)
{
    config.validate();
    const auto t0 = std::chrono::steady_clock::now();
    const ShapeSpace space = require_space(config);
    const DatasetManifest d = require_dataset(config);
    auto models = load_models(space, config.checkpoint_dir());
    if (!models->frontal || !models->lateral || !models->joint) {
        throw StageOrderError("models not trained: run train frontal, lateral and joint first");
    }
    const auto test_rows = d.rows(Split::Test);
    const std::size_t m = test_rows.size();
    const Tensor<float> all_f = load_mask_stack(config, View::Frontal);
    const Tensor<float> all_l = load_mask_stack(config, View::Lateral);
    const Samples tf = select_samples(all_f, d.coefficients, test_rows);
    const Samples tl = select_samples(all_l, d.coefficients, test_rows);

    std::vector<std::string> ids;
    std::vector<Mesh> truth;
    for (int row : test_rows) {
        ids.push_back(d.entries[static_cast<std::size_t>(row)].id);
        truth.push_back(decode(space, row_of(d, row)));
    }

    say(log, "eval: predicting " + std::to_string(m) + " held-out bodies");
    const Predictions clean = predict_all(*models, tf.inputs, tl.inputs);
    const Eigen::MatrixXd baseline = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m), space.k());
    const auto e_front = errors_for(ids, truth, space, clean.frontal);
    const auto e_lat = errors_for(ids, truth, space, clean.lateral);
    const auto e_joint = errors_for(ids, truth, space, clean.joint);
    const auto e_base = errors_for(ids, truth, space, baseline);

    const fs::path dir = config.eval_dir();
    fs::create_directories(dir);
    write_text_file(dir / "errors.csv", errors_csv(e_joint));
    const std::pair<const char*, const std::vector<BodyError>*> tables[] = {
        {"frontal", &e_front}, {"lateral", &e_lat}, {"joint", &e_joint}, {"baseline", &e_base}};
    json pipelines = json::object();
    for (const auto& [name, rows] : tables) {
        write_text_file(dir / ("errors_" + std::string(name) + ".csv"), errors_csv(*rows));
        pipelines[name] = json::parse(errors_summary_json(*rows));
    }

    const auto mean_of_rows = [](const std::vector<BodyError>& rows) {
        return mean_of(column(rows, &BodyError::rmse_mean));
    };
    std::size_t joint_wins = 0;
    for (std::size_t i = 0; i < m; ++i) {
        joint_wins += e_joint[i].rmse_mean < std::min(e_front[i].rmse_mean, e_lat[i].rmse_mean) ? 1 : 0;
    }
    const double base_mean = mean_of_rows(e_base);
    const json comparison = {
        {"test_bodies", m},
        {"mean_rmse_mean",
         {{"frontal", mean_of_rows(e_front)},
          {"lateral", mean_of_rows(e_lat)},
          {"joint", mean_of_rows(e_joint)},
          {"baseline", base_mean}}},
        {"joint_win_fraction", static_cast<double>(joint_wins) / static_cast<double>(m)},
        {"improvement_over_baseline",
         {{"frontal", 1.0 - mean_of_rows(e_front) / base_mean},
          {"lateral", 1.0 - mean_of_rows(e_lat) / base_mean},
          {"joint", 1.0 - mean_of_rows(e_joint) / base_mean}}},
    };

    // Noisy and hole-punched copies of the held-out masks.
    say(log, "eval: robustness");
    std::mt19937_64 noise_rng(derive_seed(config.seed, "noise"));
    std::vector<BinaryMask> nf, nl, hf, hl;
    for (std::size_t i = 0; i < m; ++i) {
        const BinaryMask f = mask_from_stack(tf.inputs, i, View::Frontal);
        const BinaryMask l = mask_from_stack(tl.inputs, i, View::Lateral);
        nf.push_back(salt_and_pepper(f, kNoiseRate, noise_rng));
        nl.push_back(salt_and_pepper(l, kNoiseRate, noise_rng));
        const auto [fr, fc] = torso_pixel(truth[i], View::Frontal, config.resolution);
        const auto [lr, lc] = torso_pixel(truth[i], View::Lateral, config.resolution);
        hf.push_back(punch_hole(f, fr, fc, kHoleSize));
        hl.push_back(punch_hole(l, lr, lc, kHoleSize));
    }
    const Predictions noisy = predict_all(*models, stack_masks(nf), stack_masks(nl));
    const Predictions holed = predict_all(*models, stack_masks(hf), stack_masks(hl));
    json robustness = json::object();
    const std::tuple<const char*, const Eigen::MatrixXd*, const Eigen::MatrixXd*, const Eigen::MatrixXd*> per[] = {
        {"frontal", &clean.frontal, &noisy.frontal, &holed.frontal},
        {"lateral", &clean.lateral, &noisy.lateral, &holed.lateral},
        {"joint", &clean.joint, &noisy.joint, &holed.joint}};
    for (const auto& [name, c, n, h] : per) {
        const double clean_err = mean_of_rows(errors_for(ids, truth, space, *c));
        const double noisy_err = mean_of_rows(errors_for(ids, truth, space, *n));
        robustness[name] = {
            {"clean_mean_rmse_mean", clean_err},
            {"noisy_mean_rmse_mean", noisy_err},
            {"noise_relative_increase", noisy_err / clean_err - 1.0},
            {"clean_torso_width", mean_torso_width(space, *c)},
            {"holed_torso_width", mean_torso_width(space, *h)},
        };
    }
    robustness["noise_rate"] = kNoiseRate;
    robustness["hole_size"] = kHoleSize;

    say(log, "eval: skeleton");
    const auto originals = load_originals(config);
    const auto defs = derive_joint_annotations(originals.front());
    const JointRegressor reg = fit_joint_regressor(originals, defs);
    double train_residual = 0.0;
    for (const auto& mesh : originals) {
        const auto want = annotate_joints(mesh, defs);
        const auto got = reg.predict(mesh);
        for (std::size_t j = 0; j < want.size(); ++j) {
            train_residual = std::max(train_residual, (want[j] - got[j]).norm());
        }
    }
    double held_out = 0.0;
    int min_inside[2] = {kJointCount, kJointCount};
    std::size_t bodies_ok[2] = {0, 0};
    for (std::size_t i = 0; i < m; ++i) {
        const auto want = annotate_joints(truth[i], defs);
        const auto got = reg.predict(truth[i]);
        const auto [zlo, zhi] = height_range(truth[i]);
        for (std::size_t j = 0; j < want.size(); ++j) {
            held_out = std::max(held_out, (want[j] - got[j]).norm() / (zhi - zlo));
        }
        const Mesh recon = decode(space, clean.joint.row(static_cast<Eigen::Index>(i)).transpose());
        const auto joints = reg.predict(recon);
        for (int v = 0; v < 2; ++v) {
            const View view = v == 0 ? View::Frontal : View::Lateral;
            const int inside = joints_inside(project_joints(joints, ViewSpec{view}, config.resolution),
                                             render_view(recon, view, config.resolution));
            min_inside[v] = std::min(min_inside[v], inside);
            bodies_ok[v] += inside >= kJointCount - 1 ? 1 : 0;
        }
    }
    const json skeleton = {
        {"joints", kJointCount},
        {"train_residual", train_residual},
        {"held_out_error_fraction_of_height", held_out},
        {"min_joints_inside", {{"frontal", min_inside[0]}, {"lateral", min_inside[1]}}},
        {"fraction_bodies_15_of_16",
         {{"frontal", static_cast<double>(bodies_ok[0]) / static_cast<double>(m)},
          {"lateral", static_cast<double>(bodies_ok[1]) / static_cast<double>(m)}}},
    };

    for (std::size_t i = 0; i < std::min(kErrorMapBodies, m); ++i) {
        const Mesh pred = decode(space, clean.joint.row(static_cast<Eigen::Index>(i)).transpose());
        save_error_map(error_map(truth[i], pred), pred, dir / "maps" / ids[i]);
    }

    const json summary = {
        {"config_hash", config.hash()},
        {"seed", config.seed},
        {"comparison", comparison},
        {"pipelines", pipelines},
        {"robustness", robustness},
        {"skeleton", skeleton},
    };
    write_text_file(dir / "summary.json", summary.dump(2) + "\n");
    say(log, "eval: wrote " + (dir / "errors.csv").string());
    return json{{"stage", "eval"},
                {"test_bodies", m},
                {"mean_rmse_mean_joint", comparison["mean_rmse_mean"]["joint"]},
                {"joint_win_fraction", comparison["joint_win_fraction"]},
                {"seconds", seconds_since(t0)}}
        .dump();
}

} // namespace maskshape
