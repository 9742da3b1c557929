#include "maskshape/humanoid.hpp"
#include "maskshape/image_io.hpp"
#include "maskshape/pipeline.hpp"
#include "maskshape/sfmt.hpp"
#include "run_fixtures.hpp"
#include "test_support.hpp"

#include <doctest.h>
#include <json.hpp>

#include <set>

using namespace maskshape;
using maskshape::testing::TempDir;
using nlohmann::json;

TEST_CASE("run config JSON round-trips and rejects unknown keys")
{
    RunConfig a = RunConfig::for_profile(Profile::Full);
    CHECK(a.resolution == 128);
    CHECK(a.k == 50);
    a.seed = 77;
    RunConfig b;
    b.apply_json(a.to_json());
    CHECK(b.to_json() == a.to_json());
    CHECK(b.hash() == a.hash());
    b.seed = 78;
    CHECK(b.hash() != a.hash());

    RunConfig c;
    CHECK_THROWS_AS(c.apply_json(R"({"sede": 3})"), std::invalid_argument);
    c.apply_json(R"({"train": {"epochs": 4}, "net": {"growth": 6}})");
    CHECK(c.train.epochs == 4);
    CHECK(c.net.growth == 6);
    CHECK(c.net.dense_layers == NetConfig{}.dense_layers);
    CHECK_THROWS_AS(parse_profile("laptop"), std::invalid_argument);

    RunConfig bad;
    bad.resolution = 96;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = RunConfig{};
    bad.regularize_k = {0};
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    RunConfig{}.validate();
    RunConfig::for_profile(Profile::Full).validate();
}

TEST_CASE("derived seeds differ by tag and by base")
{
    std::set<std::uint64_t> seen;
    for (std::uint64_t base : {0ull, 1ull, 2ull}) {
        for (const char* tag : {"population", "kmeans", "split", "init/frontal"}) {
            seen.insert(derive_seed(base, tag));
        }
    }
    CHECK(seen.size() == 12);
    CHECK(derive_seed(4, "x") == derive_seed(4, "x"));
}

TEST_CASE("mask corruptions")
{
    BinaryMask m(64, View::Frontal);
    std::mt19937_64 rng(3);
    const BinaryMask noisy = salt_and_pepper(m, 0.01, rng);
    const auto flipped = noisy.count();
    // Binomial(4096, 0.01): mean 41, sd 6.4.
    CHECK(flipped > 15);
    CHECK(flipped < 70);
    CHECK(salt_and_pepper(m, 0.0, rng) == m);
    CHECK_THROWS_AS(salt_and_pepper(m, 1.5, rng), std::invalid_argument);

    std::fill(m.bits.begin(), m.bits.end(), 1);
    CHECK(m.count() - punch_hole(m, 30, 30, 8).count() == 64);
    CHECK(punch_hole(m, 30, 30, 8).at(26, 26) == 0);
    CHECK(punch_hole(m, 30, 30, 8).at(25, 26) == 1);
    CHECK(punch_hole(m, 30, 30, 8).at(26, 34) == 1);
    // Clipped at the corner: rows and columns 0..3 remain.
    CHECK(m.count() - punch_hole(m, 0, 0, 8).count() == 16);
}

TEST_CASE("the torso pixel lies inside both silhouettes")
{
    const auto bodies = generate_population(2, 5);
    for (const auto& b : bodies) {
        for (View v : {View::Frontal, View::Lateral}) {
            const auto mask = render_view(b, v, 64);
            const auto [r, c] = torso_pixel(b, v, 64);
            CHECK(mask.at(r, c) == 1);
        }
        CHECK(torso_width(b) > 0.0);
    }
}

TEST_CASE("stages refuse to run out of order")
{
    TempDir dir("order");
    const RunConfig c = maskshape::testing::tiny_run(dir.path());
    CHECK_THROWS_AS(stage_fit_space(c), StageOrderError);
    CHECK_THROWS_AS(stage_render(c), StageOrderError);
    CHECK_THROWS_AS(stage_train(c, Pipeline::Joint), StageOrderError);
    CHECK_THROWS_AS(stage_eval(c), StageOrderError);
}

TEST_CASE("a tiny run goes through every stage")
{
    TempDir dir("run");
    const RunConfig c = maskshape::testing::tiny_run(dir.path());
    std::vector<std::string> lines;
    const Logger log = [&](const std::string& s) { lines.push_back(s); };

    const json gen = json::parse(stage_gen_data(c, log));
    CHECK(gen["bodies"] == c.original_count());
    CHECK(load_originals(c).size() == c.original_count());
    CHECK(std::filesystem::exists(c.path("template.obj")));

    const json fit = json::parse(stage_fit_space(c, log));
    CHECK(fit["k"] == 3);

    CHECK_THROWS_AS(stage_train(c, Pipeline::Joint), StageOrderError);
    const json aug = json::parse(stage_augment(c, log));
    CHECK(aug["bodies"] == 80);
    CHECK(aug["train"] == 64);
    const json report = json::parse(read_text_file(c.dataset_dir() / "augment_report.json"));
    CHECK(report["kmeans"]["monotone"] == true);
    CHECK(report["gan"]["samples"].get<int>() > 0);

    stage_render(c, log);
    const auto frontal = load_mask_stack(c, View::Frontal);
    CHECK(frontal.shape() == nn::Tensor<float>::Shape{80, 1, 64, 64});
    const auto d = load_dataset(c.dataset_dir());
    const BinaryMask png = load_mask_png(c.dataset_dir() / "masks" / mask_file_name(d.entries[7].id, View::Frontal),
                                         View::Frontal);
    for (std::size_t p = 0; p < png.bits.size(); ++p) {
        REQUIRE(png.bits[p] == static_cast<std::uint8_t>(frontal[7 * 64 * 64 + p]));
    }

    CHECK_THROWS_AS(stage_train(c, Pipeline::Joint), StageOrderError);
    stage_train(c, Pipeline::Frontal, log);
    stage_train(c, Pipeline::Lateral, log);
    const json joint = json::parse(stage_train(c, Pipeline::Joint, log));
    CHECK(joint["branches_unchanged"] == true);
    CHECK(joint["history"]["epochs"] == 2);
    CHECK(std::filesystem::exists(c.checkpoint_dir() / "joint" / "history.csv"));

    const json ev = json::parse(stage_eval(c, log));
    CHECK(ev["test_bodies"] == 16);
    const json summary = json::parse(read_text_file(c.eval_dir() / "summary.json"));
    CHECK(summary["config_hash"] == c.hash());
    CHECK(summary["pipelines"]["joint"]["bodies"] == 16);
    CHECK(summary["skeleton"]["joints"] == 16);
    CHECK(summary["robustness"].contains("joint"));
    const std::string csv = read_text_file(c.eval_dir() / "errors.csv");
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 17);
    CHECK(!lines.empty());
}
