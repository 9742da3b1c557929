// Command-line driver for the pipeline stages and the reconstruction service.

#include "maskshape/image_io.hpp"
#include "maskshape/pipeline.hpp"
#include "maskshape/service.hpp"
#include "maskshape/sfmt.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <csignal>
#include <ctime>
#include <fstream>
#include <iostream>
#include <optional>

namespace {

using namespace maskshape;
using nlohmann::json;

constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

struct Overrides
{
    std::string config_file;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> profile;
    std::optional<int> resolution;
    std::optional<int> k;
    std::optional<std::string> out;
    std::optional<std::uint16_t> port;
};

RunConfig build_config(const Overrides& o)
{
    RunConfig c = RunConfig::for_profile(o.profile ? parse_profile(*o.profile) : Profile::Desk);
    if (!o.config_file.empty()) {
        c.apply_json(read_text_file(o.config_file));
        if (o.profile) {
            // An explicit flag wins over a profile named in the file.
            const RunConfig scale = RunConfig::for_profile(parse_profile(*o.profile));
            if (c.profile != scale.profile) {
                c.apply_json(json{{"profile", *o.profile}}.dump());
            }
        }
    }
    if (o.seed) c.seed = *o.seed;
    if (o.resolution) c.resolution = *o.resolution;
    if (o.k) c.k = *o.k;
    if (o.out) c.out = *o.out;
    if (o.port) c.port = *o.port;
    c.validate();
    return c;
}

std::string utc_now()
{
    const std::time_t t = std::time(nullptr);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return buf;
}

void append_run_log(const RunConfig& c, const std::string& command, int code, const json& detail, double seconds)
{
    std::filesystem::create_directories(c.out);
    std::ofstream log(c.path("run_log.jsonl"), std::ios::app);
    json line = {{"time", utc_now()},         {"command", command}, {"config_hash", c.hash()},
                 {"seed", c.seed},            {"profile", std::string(to_string(c.profile))},
                 {"exit_code", code},         {"seconds", seconds}};
    line[code == 0 ? "summary" : "error"] = detail;
    log << line.dump() << '\n';
}

std::string read_png_base64(const std::string& path)
{
    return base64_encode(read_file_bytes(path));
}

HttpServer* g_server = nullptr;

void on_signal(int)
{
    if (g_server != nullptr) {
        g_server->stop();
    }
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"maskshape: body-shape reconstruction from binary masks"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Show help for every subcommand");

    Overrides o;
    app.add_option("--config", o.config_file, "JSON run config")->check(CLI::ExistingFile);
    app.add_option("--seed", o.seed, "Base seed");
    app.add_option("--profile", o.profile, "Scale profile")->check(CLI::IsMember({"desk", "full"}));
    app.add_option("--resolution", o.resolution, "Mask resolution")->check(CLI::IsMember({64, 128}));
    app.add_option("--k", o.k, "Shape space dimension")->check(CLI::PositiveNumber);
    app.add_option("--out", o.out, "Run directory");
    app.add_option("--port", o.port, "Service port");

    app.add_subcommand("gen-data", "Generate the original body population");
    app.add_subcommand("fit-space", "Fit the PCA shape space");
    app.add_subcommand("augment", "Build the augmented dataset");
    app.add_subcommand("render", "Render frontal and lateral masks");
    auto* train = app.add_subcommand("train", "Train one network");
    std::string network;
    train->add_option("network", network, "frontal, lateral or joint")
        ->required()
        ->check(CLI::IsMember({"frontal", "lateral", "joint"}));
    app.add_subcommand("eval", "Evaluate on the held-out split");
    auto* reconstruct = app.add_subcommand("reconstruct", "Reconstruct a body from mask PNGs");
    std::string frontal_png, lateral_png, mesh_out;
    bool with_joints = false;
    reconstruct->add_option("--frontal", frontal_png, "Frontal mask PNG")->check(CLI::ExistingFile);
    reconstruct->add_option("--lateral", lateral_png, "Lateral mask PNG")->check(CLI::ExistingFile);
    reconstruct->add_option("--mesh", mesh_out, "Write the reconstructed OBJ here");
    reconstruct->add_flag("--joints", with_joints, "Include skeleton joints");
    auto* serve = app.add_subcommand("serve", "Serve reconstruction over HTTP");
    std::string host = "127.0.0.1";
    serve->add_option("--host", host, "Bind address");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    RunConfig config;
    try {
        config = build_config(o);
    } catch (const std::exception& e) {
        std::cerr << "maskshape: invalid configuration: " << e.what() << '\n';
        return kExitUsage;
    }

    const CLI::App* sub = app.get_subcommands().front();
    std::string command = sub->get_name();
    if (sub == train) {
        command += " " + network;
    }
    const Logger log = [](const std::string& line) { std::cerr << line << '\n'; };
    const auto t0 = std::chrono::steady_clock::now();
    const auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };

    try {
        std::string summary;
        const std::string name = sub->get_name();
        if (name == "gen-data") {
            summary = stage_gen_data(config, log);
        } else if (name == "fit-space") {
            summary = stage_fit_space(config, log);
        } else if (name == "augment") {
            summary = stage_augment(config, log);
        } else if (name == "render") {
            summary = stage_render(config, log);
        } else if (name == "train") {
            const Pipeline p = network == "frontal" ? Pipeline::Frontal
                               : network == "lateral" ? Pipeline::Lateral
                                                      : Pipeline::Joint;
            summary = stage_train(config, p, log);
        } else if (name == "eval") {
            summary = stage_eval(config, log);
        } else if (name == "reconstruct") {
            if (frontal_png.empty() && lateral_png.empty()) {
                std::cerr << "maskshape reconstruct: give --frontal, --lateral or both\n";
                return kExitUsage;
            }
            json request = {{"return_mesh", !mesh_out.empty()}, {"return_joints", with_joints}};
            if (!frontal_png.empty()) request["frontal"] = read_png_base64(frontal_png);
            if (!lateral_png.empty()) request["lateral"] = read_png_base64(lateral_png);
            const ReconstructService service = ReconstructService::from_run(config);
            const HttpReply reply = service.reconstruct(request.dump());
            json body = json::parse(reply.body);
            if (reply.status != 200) {
                throw std::runtime_error(body.value("error", "reconstruction failed"));
            }
            if (!mesh_out.empty()) {
                write_text_file(mesh_out, body["mesh"].get<std::string>());
                body.erase("mesh");
                body["mesh_file"] = mesh_out;
            }
            summary = body.dump();
        } else if (name == "serve") {
            HttpServer server(ReconstructService::from_run(config));
            const int port = server.bind(host, config.port);
            append_run_log(config, command, 0, json{{"listening", host + ":" + std::to_string(port)}}, elapsed());
            std::cerr << "serving on http://" << host << ':' << port << '\n';
            g_server = &server;
            std::signal(SIGINT, on_signal);
            std::signal(SIGTERM, on_signal);
            server.run();
            g_server = nullptr;
            return 0;
        }
        std::cout << summary << '\n';
        append_run_log(config, command, 0, json::parse(summary), elapsed());
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "maskshape " << command << ": " << e.what() << '\n';
        try {
            append_run_log(config, command, kExitRuntime, e.what(), elapsed());
        } catch (const std::exception&) {
        }
        return kExitRuntime;
    }
}
