#include "mets/service.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>

#include <httplib.h>

#include "mets/errors.hpp"

namespace mets {

namespace {

using nlohmann::json;

ServiceResponse error_response(int status, const std::string& message)
{
    return {status, json{{"error", message}}.dump()};
}

ServiceResponse ok(const json& doc)
{
    return {200, doc.dump()};
}

bool starts_with(const std::string& s, const std::string& prefix)
{
    return s.compare(0, prefix.size(), prefix) == 0;
}

// Percent-decoding of one path segment.
std::string decode_segment(const std::string& s)
{
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i)
    {
        if (s[i] == '%' && i + 2 < s.size())
        {
            const std::string hex = s.substr(i + 1, 2);
            if (hex.size() == 2 && std::isxdigit(static_cast<unsigned char>(hex[0]))
                && std::isxdigit(static_cast<unsigned char>(hex[1])))
            {
                out.push_back(static_cast<char>(std::stoi(hex, nullptr, 16)));
                i += 2;
                continue;
            }
        }
        out.push_back(s[i]);
    }
    return out;
}

}  // namespace

RiskService::RiskService(std::shared_ptr<const ModelArtifact> artifact)
    : artifact_(std::move(artifact)), predictor_(artifact_)
{
}

json RiskService::health() const
{
    return {{"status", "ok"}, {"label", artifact_->label}, {"content_hash", artifact_->content_hash}};
}

json RiskService::meta() const
{
    const ModelArtifact& a = *artifact_;
    double max_rhat = 0.0;
    double min_ess = std::numeric_limits<double>::infinity();
    for (const auto& d : a.draws.diagnostics)
    {
        max_rhat = std::max(max_rhat, d.rhat);
        min_ess = std::min(min_ess, d.ess);
    }
    json diagnostics = {{"scalars", a.draws.diagnostics.size()},
                        {"max_rhat", a.draws.diagnostics.empty() ? json(nullptr) : json(max_rhat)},
                        {"min_ess", a.draws.diagnostics.empty() ? json(nullptr) : json(min_ess)},
                        {"phi_acceptance", std::vector<double>(a.draws.phi_acceptance.data(),
                                                               a.draws.phi_acceptance.data()
                                                                   + a.draws.phi_acceptance.size())}};
    json ic = nullptr;
    if (a.ic)
    {
        ic = {{"waic", a.ic->waic},
              {"waic_se", a.ic->waic_se},
              {"looic", a.ic->looic},
              {"looic_se", a.ic->looic_se},
              {"pareto_k_above_0.7", a.ic->bad_k_count()},
              {"n", a.ic->n}};
    }
    return {{"label", a.label},
            {"format_version", a.format_version},
            {"content_hash", a.content_hash},
            {"created_at", a.created_at},
            {"prediction_seed", a.prediction_seed},
            {"prediction_seed_note",
             "each response uses a seed derived from prediction_seed and the resolved request, so repeated "
             "requests return identical numbers"},
            {"model", a.config.to_json()},
            {"schema", a.schema.to_json()},
            {"sampler", a.settings.to_json()},
            {"threshold", {{"t_star", a.t_star ? json(*a.t_star) : json(nullptr)},
                           {"youden", a.youden ? json(*a.youden) : json(nullptr)}}},
            {"mets_thresholds", kMetsThresholds.to_json()},
            {"credible_interval", {{"blocks_per_chain", kCiBlocks}, {"levels", {0.025, 0.975}}}},
            {"posterior",
             {{"chains", a.draws.chains},
              {"per_chain", a.draws.per_chain},
              {"draws", a.draws.size()},
              {"thin_factor", a.thin_factor}}},
            {"diagnostics", std::move(diagnostics)},
            {"information_criteria", std::move(ic)},
            {"subjects", a.subject_ids.size()}};
}

json RiskService::subjects() const
{
    return {{"subjects", artifact_->subject_ids}};
}

ServiceResponse RiskService::history(const std::string& subject_id) const
{
    if (!artifact_->subject_index(subject_id))
    {
        return error_response(404, "unknown subject '" + subject_id + "'");
    }
    json visits = json::array();
    std::string sex;
    for (const auto& r : artifact_->history)
    {
        if (r.subject_id == subject_id)
        {
            visits.push_back(visit_record_json(r, artifact_->schema));
            sex = r.sex == Sex::male ? "M" : "F";
        }
    }
    return ok({{"subject_id", subject_id}, {"sex", sex}, {"visits", std::move(visits)}});
}

ServiceResponse RiskService::assess(const std::string& body, bool whatif) const
{
    json request;
    try
    {
        request = json::parse(body);
    }
    catch (const json::exception&)
    {
        return error_response(422, "request body is not valid JSON");
    }
    if (!request.is_object())
    {
        return error_response(422, "request body must be a JSON object");
    }
    if (!artifact_->t_star)
    {
        return error_response(409, "artifact has no threshold; run the threshold command first");
    }
    if (!artifact_->has_posterior())
    {
        return error_response(409, "artifact holds no posterior draws");
    }
    if (!request.contains("subject_id") || !request["subject_id"].is_string())
    {
        return error_response(422, "subject_id must be a string");
    }
    const std::string subject_id = request["subject_id"].get<std::string>();
    if (!artifact_->subject_index(subject_id))
    {
        return error_response(404, "unknown subject '" + subject_id + "'");
    }
    try
    {
        auto raw = predictor_.parse_covariates(request.value("covariates", json::object()));
        if (whatif)
        {
            predictor_.apply_overrides(raw, request.value("overrides", json::object()));
        }
        std::optional<Date> date;
        if (request.contains("visit_date") && !request["visit_date"].is_null())
        {
            if (!request["visit_date"].is_string())
            {
                return error_response(422, "visit_date must be an ISO date string");
            }
            date = parse_date(request["visit_date"].get<std::string>());
        }
        return ok(predictor_.assess(subject_id, std::move(raw), date).to_json());
    }
    catch (const ValidationError& ex)
    {
        return error_response(422, ex.what());
    }
    catch (const InvalidArgument& ex)
    {
        return error_response(422, ex.what());
    }
    catch (const Error& ex)
    {
        return error_response(500, ex.what());
    }
}

ServiceResponse RiskService::handle(const std::string& method, const std::string& path, const std::string& body) const
{
    const bool get = method == "GET";
    const bool post = method == "POST";
    auto only = [&](bool allowed, auto&& fn) -> ServiceResponse {
        if (!allowed)
        {
            return error_response(405, "method not allowed");
        }
        return fn();
    };
    if (path == "/health")
    {
        return only(get, [&] { return ok(health()); });
    }
    if (path == "/model/meta")
    {
        return only(get, [&] { return ok(meta()); });
    }
    if (path == "/subjects")
    {
        return only(get, [&] { return ok(subjects()); });
    }
    const std::string prefix = "/subjects/";
    const std::string suffix = "/history";
    if (starts_with(path, prefix) && path.size() > prefix.size() + suffix.size()
        && path.compare(path.size() - suffix.size(), suffix.size(), suffix) == 0)
    {
        const std::string id = decode_segment(path.substr(prefix.size(), path.size() - prefix.size() - suffix.size()));
        return only(get, [&] { return history(id); });
    }
    if (path == "/predict")
    {
        return only(post, [&] { return assess(body, false); });
    }
    if (path == "/whatif")
    {
        return only(post, [&] { return assess(body, true); });
    }
    return error_response(404, "no route for " + path);
}

struct HttpServer::Impl
{
    explicit Impl(std::shared_ptr<const ModelArtifact> artifact) : service(std::move(artifact)) {}

    RiskService service;
    httplib::Server server;
    bool bound = false;
};

HttpServer::HttpServer(std::shared_ptr<const ModelArtifact> artifact)
    : impl_(std::make_unique<Impl>(std::move(artifact)))
{
    auto handler = [this](const httplib::Request& req, httplib::Response& res) {
        const ServiceResponse r = impl_->service.handle(req.method, req.path, req.body);
        res.status = r.status;
        res.set_header("Access-Control-Allow-Origin", "*");
        res.set_content(r.body, "application/json");
    };
    auto& s = impl_->server;
    s.Get(R"(/.*)", handler);
    s.Post(R"(/.*)", handler);
    s.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) {
        res.status = 204;
        res.set_header("Access-Control-Allow-Origin", "*");
        res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
        res.set_header("Access-Control-Allow-Headers", "Content-Type");
    });
}

HttpServer::~HttpServer()
{
    stop();
}

int HttpServer::bind(const std::string& host, int port)
{
    int bound = -1;
    if (port == 0)
    {
        bound = impl_->server.bind_to_any_port(host);
    }
    else if (impl_->server.bind_to_port(host, port))
    {
        bound = port;
    }
    if (bound <= 0)
    {
        throw Error("cannot bind " + host + ":" + std::to_string(port));
    }
    impl_->bound = true;
    return bound;
}

void HttpServer::run()
{
    if (!impl_->bound)
    {
        throw Error("server is not bound");
    }
    impl_->server.listen_after_bind();
}

void HttpServer::stop()
{
    if (impl_)
    {
        impl_->server.stop();
    }
}

}  // namespace mets
