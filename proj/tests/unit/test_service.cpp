#include "maskshape/image_io.hpp"
#include "maskshape/service.hpp"
#include "run_fixtures.hpp"
#include "test_support.hpp"

#include <doctest.h>
#include <httplib.h>
#include <json.hpp>

#include <future>
#include <thread>

using namespace maskshape;
using maskshape::testing::TempDir;
using nlohmann::json;

namespace {

/// One trained tiny run shared by every case in this file.
struct TrainedRun
{
    TempDir dir{"service"};
    RunConfig config = maskshape::testing::tiny_run(dir.path());
    std::vector<Mesh> bodies;

    TrainedRun()
    {
        maskshape::testing::run_through_training(config);
        bodies = load_originals(config);
    }

    std::string png(std::size_t body, View view) const
    {
        return base64_encode(encode_mask_png(render_view(bodies[body], view, config.resolution)));
    }
};

const TrainedRun& run()
{
    static const TrainedRun r;
    return r;
}

json parse(const HttpReply& r)
{
    return json::parse(r.body);
}

std::string bitset(const BinaryMask& m)
{
    std::string s;
    for (auto b : m.bits) {
        s.push_back(b != 0 ? '1' : '0');
    }
    return s;
}

} // namespace

TEST_CASE("the pipeline follows the masks provided")
{
    const auto svc = ReconstructService::from_run(run().config);
    REQUIRE(svc.ready());
    const auto f = run().png(0, View::Frontal), l = run().png(0, View::Lateral);

    auto r = svc.reconstruct(json{{"frontal", f}}.dump());
    REQUIRE(r.status == 200);
    CHECK(parse(r)["pipeline"] == "frontal");
    CHECK(parse(r)["coefficients"].size() == 3);
    CHECK(!parse(r).contains("mesh"));
    CHECK(parse(r)["timing_ms"].get<double>() >= 0.0);

    r = svc.reconstruct(json{{"lateral", l}, {"frontal", nullptr}}.dump());
    CHECK(parse(r)["pipeline"] == "lateral");

    r = svc.reconstruct(json{{"frontal", f}, {"lateral", l}, {"return_mesh", true}, {"return_joints", true}}.dump());
    REQUIRE(r.status == 200);
    const json body = parse(r);
    CHECK(body["pipeline"] == "joint");
    CHECK(body["joints"].size() == kJointCount);
    CHECK(body["joints"][0]["name"] == "head");

    // The OBJ text decodes to the same mesh as the returned coefficients.
    const ShapeSpace space = load_shape_space(run().config.space_dir());
    Coefficients phi(3);
    for (int i = 0; i < 3; ++i) {
        phi[i] = body["coefficients"][i].get<double>();
    }
    CHECK(body["mesh"].get<std::string>() == obj_text(decode(space, phi)));

    // Inline bitsets are equivalent to PNGs.
    const auto mask = render_view(run().bodies[0], View::Frontal, 64);
    const json inline_req = {{"frontal", {{"resolution", 64}, {"bits", bitset(mask)}}}};
    CHECK(parse(svc.reconstruct(inline_req.dump()))["coefficients"] ==
          parse(svc.reconstruct(json{{"frontal", f}}.dump()))["coefficients"]);
}

TEST_CASE("malformed requests get 400 and missing models 503")
{
    const auto svc = ReconstructService::from_run(run().config);
    auto r = svc.reconstruct(json{{"frontal", ""}}.dump());
    CHECK(r.status == 400);
    CHECK(r.body == R"({"error":"undecodable mask"})");
    CHECK(svc.reconstruct(json{{"frontal", "bm90IGEgcG5n"}}.dump()).status == 400);
    CHECK(svc.reconstruct(json{{"frontal", {{"resolution", 64}, {"bits", "0101"}}}}.dump()).status == 400);
    CHECK(parse(svc.reconstruct("{}"))["error"] == "no mask provided");
    CHECK(svc.reconstruct("not json").status == 400);
    CHECK(svc.reconstruct(json{{"frontal", run().png(0, View::Frontal)}, {"return_mesh", "yes"}}.dump()).status == 400);

    const auto big = base64_encode(encode_mask_png(render_view(run().bodies[0], View::Frontal, 128)));
    r = svc.reconstruct(json{{"frontal", big}}.dump());
    CHECK(r.status == 400);
    CHECK(parse(r)["error"].get<std::string>().find("resolution") != std::string::npos);

    const ReconstructService empty(nullptr);
    CHECK(!empty.ready());
    CHECK(empty.reconstruct(json{{"frontal", run().png(0, View::Frontal)}}.dump()).status == 503);
    CHECK(empty.template_mask("frontal").status == 503);
    CHECK(empty.health().status == 200);

    TempDir nothing("unloaded");
    CHECK(!ReconstructService::from_run(maskshape::testing::tiny_run(nothing.path())).ready());
}

TEST_CASE("template masks are the rendered mean body")
{
    const auto svc = ReconstructService::from_run(run().config);
    const ShapeSpace space = load_shape_space(run().config.space_dir());
    for (View v : {View::Frontal, View::Lateral}) {
        const auto r = svc.template_mask(to_string(v));
        REQUIRE(r.status == 200);
        CHECK(r.content_type == "image/png");
        const std::vector<std::uint8_t> bytes(r.body.begin(), r.body.end());
        CHECK(decode_mask_png(bytes, v) == render_view(decode(space, Coefficients::Zero(3)), v, 64));
    }
    CHECK(svc.template_mask("top").status == 400);
}

TEST_CASE("the HTTP server answers concurrent requests exactly as serial ones")
{
    HttpServer server(ReconstructService::from_run(run().config));
    const int port = server.bind("127.0.0.1", 0);
    std::thread loop([&] { server.run(); });

    httplib::Client client("127.0.0.1", port);
    client.set_read_timeout(30, 0);
    for (int i = 0; i < 100 && !client.Get("/api/health"); ++i) {
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
    auto health = client.Get("/api/health");
    REQUIRE(health);
    CHECK(health->body == R"({"status":"ok"})");
    auto tmpl = client.Get("/api/template?view=lateral");
    REQUIRE(tmpl);
    CHECK(tmpl->status == 200);
    CHECK(tmpl->get_header_value("Content-Type") == "image/png");
    CHECK(client.Get("/api/template?view=top")->status == 400);
    auto bad = client.Post("/api/reconstruct", json{{"frontal", ""}}.dump(), "application/json");
    REQUIRE(bad);
    CHECK(bad->status == 400);

    std::vector<std::string> requests;
    for (std::size_t b = 0; b < 6; ++b) {
        json req = {{"return_mesh", b % 2 == 0}};
        if (b % 3 != 1) req["frontal"] = run().png(b, View::Frontal);
        if (b % 3 != 0) req["lateral"] = run().png(b, View::Lateral);
        requests.push_back(req.dump());
    }
    const auto strip_timing = [](const std::string& body) {
        json j = json::parse(body);
        j.erase("timing_ms");
        return j.dump();
    };
    std::vector<std::string> serial;
    for (const auto& r : requests) {
        auto res = client.Post("/api/reconstruct", r, "application/json");
        REQUIRE(res);
        REQUIRE(res->status == 200);
        serial.push_back(strip_timing(res->body));
    }
    std::vector<std::future<std::string>> parallel;
    for (int round = 0; round < 3; ++round) {
        for (std::size_t i = requests.size(); i-- > 0;) {
            parallel.push_back(std::async(std::launch::async, [&, i] {
                httplib::Client c("127.0.0.1", port);
                c.set_read_timeout(30, 0);
                auto res = c.Post("/api/reconstruct", requests[i], "application/json");
                return res ? strip_timing(res->body) : std::string("no response");
            }));
        }
    }
    for (std::size_t n = 0; n < parallel.size(); ++n) {
        CHECK(parallel[n].get() == serial[requests.size() - 1 - n % requests.size()]);
    }
    server.stop();
    loop.join();
}
