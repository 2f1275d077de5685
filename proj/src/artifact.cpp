#include "mets/artifact.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>

#include <openssl/evp.h>

#include "mets/csv.hpp"
#include "mets/errors.hpp"

namespace mets {

namespace {

using nlohmann::json;

double number(const json& v)
{
    // Non-finite doubles serialize as null.
    return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
}

json matrix_json(const Eigen::MatrixXd& m)
{
    json data = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i)
    {
        for (Eigen::Index j = 0; j < m.cols(); ++j)
        {
            data.push_back(m(i, j));
        }
    }
    return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

Eigen::MatrixXd matrix_from(const json& doc)
{
    const auto rows = doc.at("rows").get<Eigen::Index>();
    const auto cols = doc.at("cols").get<Eigen::Index>();
    const json& data = doc.at("data");
    if (rows < 0 || cols < 0 || static_cast<Eigen::Index>(data.size()) != rows * cols)
    {
        throw ValidationError("matrix size does not match its data");
    }
    Eigen::MatrixXd m(rows, cols);
    std::size_t at = 0;
    for (Eigen::Index i = 0; i < rows; ++i)
    {
        for (Eigen::Index j = 0; j < cols; ++j)
        {
            m(i, j) = number(data[at++]);
        }
    }
    return m;
}

json vector_json(const Eigen::VectorXd& v)
{
    json out = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i)
    {
        out.push_back(v(i));
    }
    return out;
}

Eigen::VectorXd vector_from(const json& doc)
{
    Eigen::VectorXd v(static_cast<Eigen::Index>(doc.size()));
    for (std::size_t i = 0; i < doc.size(); ++i)
    {
        v(static_cast<Eigen::Index>(i)) = number(doc[i]);
    }
    return v;
}

json draw_json(const Draw& d)
{
    return {{"chain", d.chain},
            {"beta", matrix_json(d.beta)},
            {"lambda", vector_json(d.lambda)},
            {"tau", vector_json(d.tau)},
            {"b", matrix_json(d.b)},
            {"mu_b", vector_json(d.mu_b)},
            {"Sigma_Y", matrix_json(d.Sigma_Y)},
            {"Sigma_b", matrix_json(d.Sigma_b)},
            {"phi", vector_json(d.phi)},
            {"y_last", matrix_json(d.y_last)},
            {"log_joint", d.log_joint}};
}

Draw draw_from(const json& doc)
{
    Draw d;
    d.chain = doc.at("chain").get<int>();
    d.beta = matrix_from(doc.at("beta"));
    d.lambda = vector_from(doc.at("lambda"));
    d.tau = vector_from(doc.at("tau"));
    d.b = matrix_from(doc.at("b"));
    d.mu_b = vector_from(doc.at("mu_b"));
    d.Sigma_Y = matrix_from(doc.at("Sigma_Y"));
    d.Sigma_b = matrix_from(doc.at("Sigma_b"));
    d.phi = vector_from(doc.at("phi"));
    d.y_last = matrix_from(doc.at("y_last"));
    d.log_joint = number(doc.at("log_joint"));
    return d;
}

json optional_json(const std::optional<double>& v)
{
    return v ? json(*v) : json(nullptr);
}

std::optional<double> optional_from(const json& v)
{
    if (v.is_null())
    {
        return std::nullopt;
    }
    return v.get<double>();
}

std::string created_timestamp()
{
    // Reproducible-build convention: honor SOURCE_DATE_EPOCH, else the Unix epoch.
    std::time_t t = 0;
    if (const char* env = std::getenv("SOURCE_DATE_EPOCH"))
    {
        char* end = nullptr;
        const long long v = std::strtoll(env, &end, 10);
        if (end != env && *end == '\0' && v >= 0)
        {
            t = static_cast<std::time_t>(v);
        }
    }
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

bool is_cbor_path(const std::filesystem::path& path)
{
    return path.extension() == ".cbor";
}

DesignData single_outcome(const DesignData& data, int k)
{
    DesignData d = data;
    d.Y = data.Y.col(k);
    d.observed = data.observed.col(k);
    d.finalize();
    return d;
}

// Marginal of one diagonal block of an inverse-Wishart: IW(nu - (K - 1), Psi_kk).
ModelConfig single_outcome_config(const ModelConfig& full, int k)
{
    ModelConfig c = full;
    c.K = 1;
    c.nu_Y = full.nu_Y - (full.K - 1);
    c.nu_b = full.nu_b - (full.K - 1);
    c.Psi_Y = SpdMatrix(Eigen::MatrixXd::Constant(1, 1, full.Psi_Y(k, k)));
    c.Psi_b = SpdMatrix(Eigen::MatrixXd::Constant(1, 1, full.Psi_b(k, k)));
    c.validate();
    return c;
}

std::vector<std::optional<double>> covariates_from(const json& doc, const CovariateSchema& schema)
{
    std::vector<std::optional<double>> out(schema.size());
    for (std::size_t p = 0; p < schema.size(); ++p)
    {
        if (doc.contains(schema[p].name))
        {
            out[p] = optional_from(doc.at(schema[p].name));
        }
    }
    return out;
}

}  // namespace

std::string sha256_hex(const std::string& bytes)
{
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    {
        throw Error("SHA-256 digest failed");
    }
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i)
    {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xF]);
    }
    return out;
}

json visit_record_json(const VisitRecord& record, const CovariateSchema& schema)
{
    json targets = json::object();
    for (int k = 0; k < kNumTargets; ++k)
    {
        targets[std::string(kTargetColumns[static_cast<std::size_t>(k)])] =
            optional_json(record.targets[static_cast<std::size_t>(k)]);
    }
    json covariates = json::object();
    for (std::size_t p = 0; p < schema.size(); ++p)
    {
        if (schema.is_input_column(p))
        {
            covariates[schema[p].name] = p < record.covariates.size() ? optional_json(record.covariates[p]) : json();
        }
    }
    return {{"subject_id", record.subject_id},
            {"visit_index", record.visit_index},
            {"visit_date", format_date(record.visit_date)},
            {"sex", record.sex == Sex::male ? "M" : "F"},
            {"targets", std::move(targets)},
            {"covariates", std::move(covariates)}};
}

VisitRecord visit_record_from_json(const json& doc, const CovariateSchema& schema)
{
    VisitRecord r;
    r.subject_id = doc.at("subject_id").get<std::string>();
    r.visit_index = doc.at("visit_index").get<int>();
    r.visit_date = parse_date(doc.at("visit_date").get<std::string>());
    r.sex = doc.at("sex").get<std::string>() == "M" ? Sex::male : Sex::female;
    const json& targets = doc.at("targets");
    for (int k = 0; k < kNumTargets; ++k)
    {
        r.targets[static_cast<std::size_t>(k)] =
            optional_from(targets.at(std::string(kTargetColumns[static_cast<std::size_t>(k)])));
    }
    r.covariates = covariates_from(doc.at("covariates"), schema);
    // The sex-derived binary is implied by the record.
    for (std::size_t p = 0; p < schema.size(); ++p)
    {
        if (schema[p].from_sex)
        {
            r.covariates[p] = r.sex == Sex::male ? 1.0 : 0.0;
        }
    }
    return r;
}

std::optional<std::size_t> ModelArtifact::subject_index(const std::string& id) const
{
    const auto it = std::find(subject_ids.begin(), subject_ids.end(), id);
    if (it == subject_ids.end())
    {
        return std::nullopt;
    }
    return static_cast<std::size_t>(it - subject_ids.begin());
}

json ModelArtifact::to_json(bool with_hash) const
{
    json draw_list = json::array();
    for (const Draw& d : draws.draws)
    {
        draw_list.push_back(draw_json(d));
    }
    json diag = json::array();
    for (const auto& s : draws.diagnostics)
    {
        diag.push_back({{"name", s.name}, {"rhat", s.rhat}, {"ess", s.ess}});
    }
    json hist = json::array();
    for (const auto& r : history)
    {
        hist.push_back(visit_record_json(r, schema));
    }
    json doc = {
        {"format", "mets-risk-model"},
        {"format_version", format_version},
        {"label", label},
        {"model", config.to_json()},
        {"schema", schema.to_json()},
        {"standardization", standardization.to_json()},
        {"sampler", settings.to_json()},
        {"posterior",
         {{"chains", draws.chains},
          {"per_chain", draws.per_chain},
          {"thin_factor", thin_factor},
          {"draws", std::move(draw_list)},
          {"diagnostics", std::move(diag)},
          {"phi_step", vector_json(draws.phi_step)},
          {"phi_acceptance", vector_json(draws.phi_acceptance)}}},
        {"subject_ids", subject_ids},
        {"history", std::move(hist)},
        {"threshold", {{"t_star", optional_json(t_star)}, {"youden", optional_json(youden)}}},
        {"information_criteria", ic ? ic->to_json() : json(nullptr)},
        {"prediction_seed", prediction_seed},
        {"created_at", created_at},
    };
    if (with_hash)
    {
        doc["content_hash"] = content_hash;
    }
    return doc;
}

ModelArtifact ModelArtifact::from_json(const json& doc)
{
    ModelArtifact a;
    try
    {
        if (doc.value("format", std::string()) != "mets-risk-model")
        {
            throw ValidationError("not a model artifact");
        }
        a.format_version = doc.at("format_version").get<int>();
        if (a.format_version != kArtifactFormatVersion)
        {
            throw ValidationError("unsupported artifact format version " + std::to_string(a.format_version));
        }
        a.label = doc.at("label").get<std::string>();
        a.config = ModelConfig::from_json(doc.at("model"));
        a.schema = CovariateSchema::from_json(doc.at("schema"));
        a.standardization = Standardization::from_json(doc.at("standardization"));
        a.settings = SamplerSettings::from_json(doc.at("sampler"));
        const json& post = doc.at("posterior");
        a.draws.chains = post.at("chains").get<int>();
        a.draws.per_chain = post.at("per_chain").get<int>();
        a.thin_factor = post.at("thin_factor").get<int>();
        for (const json& d : post.at("draws"))
        {
            a.draws.draws.push_back(draw_from(d));
        }
        if (a.draws.draws.size() != static_cast<std::size_t>(a.draws.chains) * static_cast<std::size_t>(a.draws.per_chain))
        {
            throw ValidationError("draw count does not match chains x per_chain");
        }
        for (const json& s : post.at("diagnostics"))
        {
            a.draws.diagnostics.push_back(
                {s.at("name").get<std::string>(), number(s.at("rhat")), number(s.at("ess"))});
        }
        a.draws.phi_step = vector_from(post.at("phi_step"));
        a.draws.phi_acceptance = vector_from(post.at("phi_acceptance"));
        a.subject_ids = doc.at("subject_ids").get<std::vector<std::string>>();
        for (const json& r : doc.at("history"))
        {
            a.history.push_back(visit_record_from_json(r, a.schema));
        }
        a.t_star = optional_from(doc.at("threshold").at("t_star"));
        a.youden = optional_from(doc.at("threshold").at("youden"));
        if (!doc.at("information_criteria").is_null())
        {
            a.ic = IcReport::from_json(doc.at("information_criteria"));
        }
        a.prediction_seed = doc.at("prediction_seed").get<std::uint64_t>();
        a.created_at = doc.at("created_at").get<std::string>();
        a.content_hash = doc.value("content_hash", std::string());
    }
    catch (const json::exception& ex)
    {
        throw ValidationError(std::string("malformed artifact: ") + ex.what());
    }
    return a;
}

std::string ModelArtifact::compute_hash() const
{
    return "sha256:" + sha256_hex(to_json(false).dump());
}

std::string serialize_artifact(ModelArtifact& artifact, bool cbor)
{
    artifact.content_hash = artifact.compute_hash();
    const json doc = artifact.to_json(true);
    if (cbor)
    {
        const auto bytes = json::to_cbor(doc);
        return std::string(bytes.begin(), bytes.end());
    }
    return doc.dump() + "\n";
}

void save_artifact(ModelArtifact& artifact, const std::filesystem::path& path)
{
    const std::string bytes = serialize_artifact(artifact, is_cbor_path(path));
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
    {
        throw Error("cannot write " + path.string());
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out)
    {
        throw Error("failed writing " + path.string());
    }
}

ModelArtifact parse_artifact(const std::string& bytes, bool cbor)
{
    json doc;
    try
    {
        doc = cbor ? json::from_cbor(bytes) : json::parse(bytes);
    }
    catch (const json::exception& ex)
    {
        throw ValidationError(std::string("unreadable artifact: ") + ex.what());
    }
    ModelArtifact a = ModelArtifact::from_json(doc);
    if (a.content_hash.empty())
    {
        throw ValidationError("artifact has no content hash");
    }
    const std::string actual = a.compute_hash();
    if (actual != a.content_hash)
    {
        throw ValidationError("artifact content hash mismatch: stored " + a.content_hash + ", computed " + actual);
    }
    return a;
}

ModelArtifact load_artifact(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
    {
        throw ValidationError("cannot open artifact " + path.string());
    }
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_artifact(bytes, is_cbor_path(path));
}

PosteriorDraws thin_draws(const PosteriorDraws& draws, int limit, int* factor)
{
    if (limit < 1)
    {
        throw InvalidArgument("draw limit must be positive");
    }
    if (draws.chains > limit && !draws.draws.empty())
    {
        throw InvalidArgument("more chains than the draw limit");
    }
    int f = 1;
    while (static_cast<long>(draws.chains) * (draws.per_chain / f) > limit)
    {
        ++f;
    }
    if (factor != nullptr)
    {
        *factor = f;
    }
    if (f == 1)
    {
        return draws;
    }
    PosteriorDraws out;
    out.chains = draws.chains;
    out.per_chain = draws.per_chain / f;
    out.diagnostics = draws.diagnostics;
    out.y_missing_mean = draws.y_missing_mean;
    out.phi_step = draws.phi_step;
    out.phi_acceptance = draws.phi_acceptance;
    std::vector<Eigen::Index> rows;
    for (int c = 0; c < draws.chains; ++c)
    {
        // Keep samples f-1, 2f-1, ... so the final draw of each chain survives
        // whenever per_chain is a multiple of f.
        for (int s = 0; s < out.per_chain; ++s)
        {
            const int src = s * f + (f - 1);
            out.draws.push_back(draws.at(c, src));
            rows.push_back(static_cast<Eigen::Index>(c) * draws.per_chain + src);
        }
    }
    if (draws.loglik.rows() == static_cast<Eigen::Index>(draws.size()))
    {
        out.loglik.resize(static_cast<Eigen::Index>(rows.size()), draws.loglik.cols());
        for (std::size_t i = 0; i < rows.size(); ++i)
        {
            out.loglik.row(static_cast<Eigen::Index>(i)) = draws.loglik.row(rows[i]);
        }
    }
    return out;
}

ModelArtifact fit_artifact(const Cohort& cohort, const FitOptions& options)
{
    options.settings.validate();
    if (cohort.records.empty())
    {
        throw ValidationError("no training visits");
    }
    const Cohort imputed = impute_covariates(cohort, options.imputation);
    const Cohort standardized =
        transform_and_standardize(imputed, std::vector<bool>(imputed.records.size(), true));

    ModelArtifact a;
    a.schema = cohort.schema;
    a.standardization = *standardized.standardization;
    a.settings = options.settings;
    a.history = imputed.records;
    a.prediction_seed = options.prediction_seed.value_or(derive_seed(options.settings.seed, "prediction"));
    a.created_at = created_timestamp();

    const DesignData data = build_design(standardized, &a.subject_ids);

    json model = ModelConfig::from_schema(cohort.schema, options.tcar).to_json();
    if (!options.model_overrides.is_object())
    {
        throw ValidationError("model overrides must be a JSON object");
    }
    model.merge_patch(options.model_overrides);
    a.config = ModelConfig::from_json(model);
    if (a.config.P != static_cast<int>(cohort.schema.size()) || a.config.K != kNumTargets)
    {
        throw ValidationError("model config dimensions do not match the covariate schema");
    }

    if (options.univariate)
    {
        a.label = "univariate";
        std::vector<IcReport> parts;
        for (int k = 0; k < kNumTargets; ++k)
        {
            const PosteriorDraws post =
                fit(single_outcome(data, k), single_outcome_config(a.config, k), options.settings);
            parts.push_back(ic_report(std::string(kTargetColumns[static_cast<std::size_t>(k)]), post.loglik));
        }
        a.ic = sum_reports(a.label, parts);
        return a;
    }

    a.label = a.config.tcar ? "tcar" : "baseline";
    PosteriorDraws post = fit(data, a.config, options.settings);
    if (post.loglik.rows() >= kMinLooDraws && post.loglik.cols() > 0)
    {
        a.ic = ic_report(a.label, post.loglik);
    }
    a.draws = thin_draws(post, kServingDrawLimit, &a.thin_factor);
    a.draws.loglik.resize(0, 0);
    return a;
}

// ---------------------------------------------------------------------------
// Predictor

Predictor::Predictor(std::shared_ptr<const ModelArtifact> artifact) : artifact_(std::move(artifact))
{
    if (!artifact_)
    {
        throw InvalidArgument("predictor needs an artifact");
    }
    const auto& ids = artifact_->subject_ids;
    last_row_.assign(ids.size(), artifact_->history.size());
    for (std::size_t i = 0; i < ids.size(); ++i)
    {
        subject_index_.emplace(ids[i], i);
    }
    for (std::size_t r = 0; r < artifact_->history.size(); ++r)
    {
        const auto it = subject_index_.find(artifact_->history[r].subject_id);
        if (it == subject_index_.end())
        {
            throw ValidationError("history row of unknown subject " + artifact_->history[r].subject_id);
        }
        const std::size_t prev = last_row_[it->second];
        if (prev == artifact_->history.size() || artifact_->history[prev].visit_date <= artifact_->history[r].visit_date)
        {
            last_row_[it->second] = r;
        }
    }
}

void Predictor::check_subject(const std::string& subject_id) const
{
    if (subject_index_.find(subject_id) == subject_index_.end())
    {
        throw InvalidArgument("unknown subject '" + subject_id + "'");
    }
}

const VisitRecord* Predictor::last_visit(const std::string& subject_id) const
{
    const auto it = subject_index_.find(subject_id);
    if (it == subject_index_.end() || last_row_[it->second] >= artifact_->history.size())
    {
        return nullptr;
    }
    return &artifact_->history[last_row_[it->second]];
}

double Predictor::parse_value(std::size_t index, const json& value) const
{
    const CovariateEntry& e = artifact_->schema[index];
    if (e.kind == CovariateKind::binary)
    {
        if (value.is_number())
        {
            const double v = value.get<double>();
            if (v == 0.0 || v == 1.0)
            {
                return v;
            }
        }
        else if (value.is_boolean())
        {
            return value.get<bool>() ? 1.0 : 0.0;
        }
        else if (value.is_string())
        {
            const auto s = value.get<std::string>();
            if (s == e.levels[1] || s == "1")
            {
                return 1.0;
            }
            if (s == e.levels[0] || s == "0")
            {
                return 0.0;
            }
        }
        throw ValidationError("covariate '" + e.name + "' must be 0/1, '" + e.levels[0] + "' or '" + e.levels[1] + "'");
    }
    if (!value.is_number())
    {
        throw ValidationError("covariate '" + e.name + "' must be a number");
    }
    const double v = value.get<double>();
    if (!std::isfinite(v) || (e.log_transformed && !(v > 0.0)))
    {
        throw ValidationError("covariate '" + e.name + "' is out of range");
    }
    return v;
}

std::vector<std::optional<double>> Predictor::parse_covariates(const json& object) const
{
    std::vector<std::optional<double>> raw(artifact_->schema.size());
    apply_overrides(raw, object);
    return raw;
}

void Predictor::apply_overrides(std::vector<std::optional<double>>& raw, const json& overrides) const
{
    if (overrides.is_null())
    {
        return;
    }
    if (!overrides.is_object())
    {
        throw ValidationError("covariates must be a JSON object");
    }
    const auto& schema = artifact_->schema;
    raw.resize(schema.size());
    for (const auto& [name, value] : overrides.items())
    {
        const auto index = schema.index_of(name);
        if (!index)
        {
            throw ValidationError("unknown covariate '" + name + "'");
        }
        if (!schema.is_input_column(*index))
        {
            throw ValidationError("covariate '" + name + "' is derived and cannot be set");
        }
        raw[*index] = parse_value(*index, value);
    }
}

std::uint64_t Predictor::request_seed(const std::string& subject_id, const std::vector<std::optional<double>>& raw,
                                      std::optional<Date> visit_date) const
{
    std::string key = subject_id;
    key += '|';
    key += visit_date ? format_date(*visit_date) : std::string("-");
    for (const auto& v : raw)
    {
        key += '|';
        key += v ? csv::format_double(*v) : std::string("NA");
    }
    return derive_seed(artifact_->prediction_seed, key);
}

RiskAssessment Predictor::assess(const std::string& subject_id, std::vector<std::optional<double>> raw,
                                 std::optional<Date> visit_date) const
{
    check_subject(subject_id);
    const ModelArtifact& a = *artifact_;
    if (!a.has_posterior())
    {
        throw Error("artifact '" + a.label + "' holds no posterior draws");
    }
    const std::size_t subject = subject_index_.at(subject_id);
    const VisitRecord* last = last_visit(subject_id);
    if (last == nullptr)
    {
        throw ValidationError("subject '" + subject_id + "' has no training history");
    }
    const auto& schema = a.schema;
    raw.resize(schema.size());
    std::string missing;
    for (std::size_t p = 0; p < schema.size(); ++p)
    {
        if (schema[p].from_sex)
        {
            raw[p] = last->sex == Sex::male ? 1.0 : 0.0;
        }
        else if (!schema.is_input_column(p))
        {
            raw[p].reset();
        }
        else if (!raw[p])
        {
            missing += missing.empty() ? "" : ", ";
            missing += schema[p].name;
        }
    }
    if (!missing.empty())
    {
        throw ValidationError("missing covariates: " + missing);
    }

    PredictionInput input;
    input.subject = static_cast<int>(subject);
    input.subject_id = subject_id;
    input.sex = last->sex;
    if (a.config.tcar)
    {
        if (!visit_date)
        {
            throw ValidationError("visit_date is required by a t-CAR model");
        }
        const auto days = (*visit_date - last->visit_date).count();
        if (days <= 0)
        {
            throw ValidationError("visit_date must follow the last training visit (" + format_date(last->visit_date) + ")");
        }
        input.delta_t = static_cast<double>(days) / 365.25;
    }

    const std::uint64_t seed = request_seed(subject_id, raw, visit_date);
    VisitRecord rec;
    rec.subject_id = subject_id;
    rec.sex = last->sex;
    rec.covariates = raw;
    const VisitRecord model_scale = apply_standardization({rec}, schema, a.standardization).front();
    input.x.resize(static_cast<Eigen::Index>(schema.size()));
    for (std::size_t p = 0; p < schema.size(); ++p)
    {
        input.x(static_cast<Eigen::Index>(p)) = model_scale.covariates[p].value();
    }

    RngStream rng(seed);
    RiskAssessment out = predict_next_visit(a.draws, a.standardization, input, rng);
    if (a.t_star)
    {
        out.color = classify(out, *a.t_star);
    }
    return out;
}

std::vector<std::pair<double, int>> score_labeled_visits(const ModelArtifact& artifact,
                                                         const std::vector<VisitRecord>& visits)
{
    if (!artifact.has_posterior())
    {
        throw Error("artifact '" + artifact.label + "' holds no posterior draws");
    }
    const auto& schema = artifact.schema;
    const std::vector<VisitRecord> scaled = apply_standardization(visits, schema, artifact.standardization);

    // Last training visit per subject.
    std::map<std::string, const VisitRecord*> last_train;
    for (const auto& r : artifact.history)
    {
        auto& slot = last_train[r.subject_id];
        if (slot == nullptr || slot->visit_date <= r.visit_date)
        {
            slot = &r;
        }
    }
    const std::vector<VisitRecord> history_scaled =
        apply_standardization(artifact.history, schema, artifact.standardization);

    std::vector<std::pair<double, int>> scored;
    scored.reserve(visits.size());
    for (std::size_t v = 0; v < visits.size(); ++v)
    {
        const VisitRecord& rec = visits[v];
        const auto subject = artifact.subject_index(rec.subject_id);
        if (!subject)
        {
            throw InvalidArgument("unknown subject '" + rec.subject_id + "'");
        }
        for (int k = 1; k < kNumTargets; ++k)
        {
            if (!rec.targets[static_cast<std::size_t>(k)])
            {
                throw ValidationError("labeled visit of '" + rec.subject_id + "' lacks "
                                      + std::string(kTargetColumns[static_cast<std::size_t>(k)]));
            }
        }
        PredictionInput input;
        input.subject = static_cast<int>(*subject);
        input.subject_id = rec.subject_id;
        input.sex = rec.sex;
        input.x.resize(static_cast<Eigen::Index>(schema.size()));
        for (std::size_t p = 0; p < schema.size(); ++p)
        {
            const auto& value = scaled[v].covariates[p];
            if (!value)
            {
                throw ValidationError("labeled visit of '" + rec.subject_id + "' lacks covariate " + schema[p].name);
            }
            input.x(static_cast<Eigen::Index>(p)) = *value;
        }

        if (artifact.config.tcar)
        {
            // Previous visit among the training history and the scored visits.
            const VisitRecord* prev = nullptr;
            const VisitRecord* prev_scaled = nullptr;
            auto consider = [&](const VisitRecord& cand, const VisitRecord& cand_scaled) {
                if (cand.subject_id == rec.subject_id && cand.visit_date < rec.visit_date
                    && (prev == nullptr || prev->visit_date < cand.visit_date))
                {
                    prev = &cand;
                    prev_scaled = &cand_scaled;
                }
            };
            for (std::size_t r = 0; r < artifact.history.size(); ++r)
            {
                consider(artifact.history[r], history_scaled[r]);
            }
            for (std::size_t r = 0; r < visits.size(); ++r)
            {
                consider(visits[r], scaled[r]);
            }
            if (prev != nullptr)
            {
                input.delta_t = static_cast<double>((rec.visit_date - prev->visit_date).count()) / 365.25;
                const auto lt = last_train.find(rec.subject_id);
                const bool is_last_training = lt != last_train.end() && lt->second == prev;
                if (!is_last_training)
                {
                    input.y_prev.resize(kNumTargets);
                    for (int k = 0; k < kNumTargets; ++k)
                    {
                        const auto& y = prev_scaled->targets[static_cast<std::size_t>(k)];
                        input.y_prev(k) = y ? *y : std::numeric_limits<double>::quiet_NaN();
                    }
                }
            }
        }

        RngStream rng(derive_seed(artifact.prediction_seed, "score|" + rec.subject_id + "|" + format_date(rec.visit_date)));
        const RiskAssessment a = predict_next_visit(artifact.draws, artifact.standardization, input, rng);
        scored.emplace_back(a.p_mean, mets_indicator(rec.targets, rec.sex));
    }
    return scored;
}

}  // namespace mets
