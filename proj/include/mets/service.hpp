#pragma once

#include <memory>
#include <string>

#include <json.hpp>

#include "mets/artifact.hpp"

namespace mets {

struct ServiceResponse
{
    int status = 200;
    std::string body;
};

/// Read-only request handling over an immutable artifact. Safe to call from
/// many threads at once.
class RiskService
{
public:
    explicit RiskService(std::shared_ptr<const ModelArtifact> artifact);

    /// Dispatches one request. Unknown routes give 404, wrong methods 405.
    ServiceResponse handle(const std::string& method, const std::string& path, const std::string& body) const;

    nlohmann::json health() const;
    nlohmann::json meta() const;
    nlohmann::json subjects() const;

private:
    ServiceResponse history(const std::string& subject_id) const;
    ServiceResponse assess(const std::string& body, bool whatif) const;

    std::shared_ptr<const ModelArtifact> artifact_;
    Predictor predictor_;
};

/// HTTP front end for RiskService.
class HttpServer
{
public:
    explicit HttpServer(std::shared_ptr<const ModelArtifact> artifact);
    ~HttpServer();
    HttpServer(const HttpServer&) = delete;
    HttpServer& operator=(const HttpServer&) = delete;

    /// Binds the socket; port 0 picks a free port. Returns the bound port.
    int bind(const std::string& host, int port);
    /// Serves until stop(); requires bind().
    void run();
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace mets
