#pragma once

#include "maskshape/pipeline.hpp"

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>

namespace maskshape {

struct HttpReply
{
    int status = 200;
    std::string content_type = "application/json";
    std::string body;
};

/**
 * Request handlers for the reconstruction service, independent of any socket.
 *
 * Model state is read-only after construction. The networks serialize their
 * forward passes internally, so handlers may run on any number of threads.
 */
class ReconstructService
{
public:
    /// `models` may be null or partially loaded; missing networks answer 503.
    explicit ReconstructService(std::shared_ptr<ModelSet> models);

    /// Loads the space and whatever checkpoints exist under `config`.
    static ReconstructService from_run(const RunConfig& config);

    /**
     * Body: {"frontal": mask, "lateral": mask, "return_mesh": bool,
     * "return_joints": bool}. A mask is a base64 PNG string or
     * {"resolution": R, "bits": "0101..."} with R*R row-major characters.
     */
    HttpReply reconstruct(std::string_view body) const;

    /// PNG of the mean body's mask for "frontal" or "lateral".
    HttpReply template_mask(std::string_view view) const;

    HttpReply health() const;

    bool ready() const;

private:
    std::shared_ptr<ModelSet> models_;
    std::shared_ptr<const JointRegressor> joints_;
};

/// httplib server wrapping a ReconstructService.
class HttpServer
{
public:
    explicit HttpServer(ReconstructService service);
    ~HttpServer();
    HttpServer(const HttpServer&) = delete;
    HttpServer& operator=(const HttpServer&) = delete;

    /// Binds to `host:port`; port 0 picks a free port. Returns the bound port.
    int bind(const std::string& host, int port);
    /// Serves until stop(); call after bind().
    void run();
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

} // namespace maskshape
