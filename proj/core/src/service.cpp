#include "maskshape/service.hpp"

#include "maskshape/image_io.hpp"

#include <httplib.h>
#include <json.hpp>

#include <chrono>
#include <optional>

namespace maskshape {

using nlohmann::json;

namespace {

HttpReply error_reply(int status, const std::string& message)
{
    return {status, "application/json", json{{"error", message}}.dump()};
}

/// Thrown while reading a request; carries the reply to send.
struct BadRequest
{
    HttpReply reply;
};

BinaryMask bitset_mask(const json& j, View view)
{
    const int r = j.at("resolution").get<int>();
    const auto& bits = j.at("bits").get_ref<const std::string&>();
    if (r < kMinResolution || bits.size() != static_cast<std::size_t>(r) * static_cast<std::size_t>(r)) {
        throw std::invalid_argument("bitset size does not match its resolution");
    }
    BinaryMask m(r, view);
    for (std::size_t i = 0; i < bits.size(); ++i) {
        if (bits[i] != '0' && bits[i] != '1') {
            throw std::invalid_argument("bitset characters must be 0 or 1");
        }
        m.bits[i] = bits[i] == '1' ? 1 : 0;
    }
    return m;
}

std::optional<BinaryMask> read_mask(const json& request, const char* key, View view)
{
    if (!request.contains(key) || request[key].is_null()) {
        return std::nullopt;
    }
    const json& field = request[key];
    try {
        if (field.is_string()) {
            return decode_mask_png(base64_decode(field.get_ref<const std::string&>()), view);
        }
        if (field.is_object()) {
            return bitset_mask(field, view);
        }
    } catch (const std::exception&) {
    }
    throw BadRequest{error_reply(400, "undecodable mask")};
}

bool read_flag(const json& request, const char* key)
{
    if (!request.contains(key)) {
        return false;
    }
    if (!request[key].is_boolean()) {
        throw BadRequest{error_reply(400, std::string(key) + " must be a boolean")};
    }
    return request[key].get<bool>();
}

} // namespace

ReconstructService::ReconstructService(std::shared_ptr<ModelSet> models) : models_(std::move(models))
{
    if (models_) {
        joints_ = std::make_shared<const JointRegressor>(space_joint_regressor(models_->space));
    }
}

ReconstructService ReconstructService::from_run(const RunConfig& config)
{
    if (!std::filesystem::exists(config.space_dir())) {
        return ReconstructService(nullptr);
    }
    const ShapeSpace space = load_shape_space(config.space_dir());
    return ReconstructService(std::shared_ptr<ModelSet>(load_models(space, config.checkpoint_dir())));
}

bool ReconstructService::ready() const
{
    return models_ && models_->frontal && models_->lateral && models_->joint;
}

HttpReply ReconstructService::health() const
{
    return {200, "application/json", json{{"status", "ok"}}.dump()};
}

HttpReply ReconstructService::template_mask(std::string_view view) const
{
    View v;
    try {
        v = parse_view(view);
    } catch (const std::exception&) {
        return error_reply(400, "unsupported view '" + std::string(view) + "' (expected frontal or lateral)");
    }
    if (!models_ || models_->resolution() == 0) {
        return error_reply(503, "models not loaded");
    }
    const Mesh mean = decode(models_->space, Coefficients::Zero(models_->space.k()));
    const auto png = encode_mask_png(render_view(mean, v, models_->resolution()));
    return {200, "image/png", std::string(png.begin(), png.end())};
}

HttpReply ReconstructService::reconstruct(std::string_view body) const
{
    const auto t0 = std::chrono::steady_clock::now();
    try {
        const json request = json::parse(body, nullptr, false);
        if (request.is_discarded() || !request.is_object()) {
            return error_reply(400, "request body must be a JSON object");
        }
        const auto frontal = read_mask(request, "frontal", View::Frontal);
        const auto lateral = read_mask(request, "lateral", View::Lateral);
        const bool want_mesh = read_flag(request, "return_mesh");
        const bool want_joints = read_flag(request, "return_joints");
        if (!frontal && !lateral) {
            return error_reply(400, "no mask provided");
        }
        if (!models_) {
            return error_reply(503, "models not loaded");
        }

        const Prediction p = predict(*models_, frontal ? &*frontal : nullptr, lateral ? &*lateral : nullptr);
        json reply = {{"pipeline", std::string(to_string(p.pipeline))},
                      {"coefficients", std::vector<double>(p.coefficients.begin(), p.coefficients.end())}};
        if (want_mesh || want_joints) {
            const Mesh mesh = decode(models_->space, p.coefficients);
            if (want_mesh) {
                reply["mesh"] = obj_text(mesh);
            }
            if (want_joints) {
                json joints = json::array();
                const JointSet set = joints_->predict(mesh);
                for (std::size_t j = 0; j < set.size(); ++j) {
                    joints.push_back({{"name", kJointNames[j]}, {"position", {set[j].x(), set[j].y(), set[j].z()}}});
                }
                reply["joints"] = std::move(joints);
            }
        }
        reply["timing_ms"] = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        return {200, "application/json", reply.dump()};
    } catch (const BadRequest& bad) {
        return bad.reply;
    } catch (const ModelsUnavailable& e) {
        return error_reply(503, e.what());
    } catch (const std::invalid_argument& e) {
        return error_reply(400, e.what());
    }
}

struct HttpServer::Impl
{
    ReconstructService service;
    httplib::Server server;

    explicit Impl(ReconstructService s) : service(std::move(s)) {}
};

namespace {

void send(httplib::Response& res, const HttpReply& reply)
{
    res.status = reply.status;
    res.set_content(reply.body, reply.content_type);
}

} // namespace

HttpServer::HttpServer(ReconstructService service) : impl_(std::make_unique<Impl>(std::move(service)))
{
    auto& s = impl_->server;
    const ReconstructService* svc = &impl_->service;
    s.Post("/api/reconstruct",
           [svc](const httplib::Request& req, httplib::Response& res) { send(res, svc->reconstruct(req.body)); });
    s.Get("/api/template", [svc](const httplib::Request& req, httplib::Response& res) {
        send(res, svc->template_mask(req.get_param_value("view")));
    });
    s.Get("/api/health", [svc](const httplib::Request&, httplib::Response& res) { send(res, svc->health()); });
    s.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
        std::string what = "internal error";
        try {
            std::rethrow_exception(ep);
        } catch (const std::exception& e) {
            what = e.what();
        } catch (...) {
        }
        send(res, error_reply(500, what));
    });
}

HttpServer::~HttpServer()
{
    stop();
}

int HttpServer::bind(const std::string& host, int port)
{
    const int bound = port == 0 ? impl_->server.bind_to_any_port(host) : (impl_->server.bind_to_port(host, port) ? port : -1);
    if (bound < 0) {
        throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
    }
    return bound;
}

void HttpServer::run()
{
    impl_->server.listen_after_bind();
}

void HttpServer::stop()
{
    impl_->server.stop();
}

} // namespace maskshape
