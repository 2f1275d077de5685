#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mets/evaluate.hpp"
#include "mets/ingest.hpp"
#include "mets/model.hpp"
#include "mets/predict.hpp"
#include "mets/sampler.hpp"

namespace mets {

inline constexpr int kArtifactFormatVersion = 1;
/// Upper bound on stored (served) posterior draws.
inline constexpr int kServingDrawLimit = 2000;

struct ModelArtifact
{
    int format_version = kArtifactFormatVersion;
    /// "baseline", "tcar" or "univariate-sum".
    std::string label = "baseline";
    ModelConfig config;
    CovariateSchema schema;
    Standardization standardization;
    SamplerSettings settings;
    /// Retained draws after thinning to at most kServingDrawLimit.
    PosteriorDraws draws;
    int thin_factor = 1;
    std::vector<std::string> subject_ids;
    /// Training visits in clinical units with imputed covariates.
    std::vector<VisitRecord> history;
    std::optional<double> t_star;
    std::optional<double> youden;
    std::optional<IcReport> ic;
    std::uint64_t prediction_seed = 0;
    std::string created_at;
    /// "sha256:<hex>" of the canonical JSON without this field.
    std::string content_hash;

    bool has_posterior() const { return !draws.draws.empty(); }
    std::optional<std::size_t> subject_index(const std::string& id) const;

    /// Canonical document; includes content_hash only when requested.
    nlohmann::json to_json(bool with_hash = true) const;
    static ModelArtifact from_json(const nlohmann::json& doc);
    std::string compute_hash() const;
};

std::string sha256_hex(const std::string& bytes);

/// Visit in clinical units: targets and covariates keyed by column name.
nlohmann::json visit_record_json(const VisitRecord& record, const CovariateSchema& schema);
VisitRecord visit_record_from_json(const nlohmann::json& doc, const CovariateSchema& schema);

/// Writes JSON, or CBOR when the extension is ".cbor". Refreshes the hash.
void save_artifact(ModelArtifact& artifact, const std::filesystem::path& path);
std::string serialize_artifact(ModelArtifact& artifact, bool cbor);
/// Throws ValidationError when the stored hash does not match the content.
ModelArtifact load_artifact(const std::filesystem::path& path);
ModelArtifact parse_artifact(const std::string& bytes, bool cbor);

/// Keeps every k-th draw of each chain so the total is at most `limit`.
PosteriorDraws thin_draws(const PosteriorDraws& draws, int limit, int* factor = nullptr);

struct FitOptions
{
    SamplerSettings settings;
    /// Overrides merged into the schema-derived model config (JSON keys of ModelConfig).
    nlohmann::json model_overrides = nlohmann::json::object();
    bool tcar = false;
    /// Five independent single-outcome fits; stores only the summed IC report.
    bool univariate = false;
    ImputationOptions imputation;
    std::optional<std::uint64_t> prediction_seed;
};

/// Impute, standardize, fit and package. `cohort` is in clinical units.
ModelArtifact fit_artifact(const Cohort& cohort, const FitOptions& options);

/// Scores visits of known subjects against an artifact's posterior.
class Predictor
{
public:
    explicit Predictor(std::shared_ptr<const ModelArtifact> artifact);

    const ModelArtifact& artifact() const { return *artifact_; }

    /// Raw covariates per schema entry (derived entries may be empty). The
    /// sex-derived binary comes from the subject. Throws InvalidArgument for an
    /// unknown subject and ValidationError for incomplete covariates.
    RiskAssessment assess(const std::string& subject_id, std::vector<std::optional<double>> raw,
                          std::optional<Date> visit_date) const;

    /// Parses {"name": value} in raw units; binary entries accept 0/1 or their levels.
    std::vector<std::optional<double>> parse_covariates(const nlohmann::json& object) const;
    /// Applies overrides on top of parsed covariates.
    void apply_overrides(std::vector<std::optional<double>>& raw, const nlohmann::json& overrides) const;

    /// Most recent training visit of a known subject (raw covariates), or null.
    const VisitRecord* last_visit(const std::string& subject_id) const;

    /// Seed for one request: depends only on the resolved inputs.
    std::uint64_t request_seed(const std::string& subject_id, const std::vector<std::optional<double>>& raw,
                               std::optional<Date> visit_date) const;

private:
    double parse_value(std::size_t index, const nlohmann::json& value) const;
    void check_subject(const std::string& subject_id) const;

    std::shared_ptr<const ModelArtifact> artifact_;
    std::map<std::string, std::size_t> subject_index_;
    /// Index into artifact history of each subject's last training visit.
    std::vector<std::size_t> last_row_;
};

/// In-sample scores of labeled visits: p from the posterior predictive of
/// each visit, label from the conservative MetS rule on observed values.
std::vector<std::pair<double, int>> score_labeled_visits(const ModelArtifact& artifact,
                                                         const std::vector<VisitRecord>& visits);

}  // namespace mets
