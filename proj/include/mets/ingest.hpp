#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace mets {

using Date = std::chrono::sys_days;

Date parse_date(std::string_view iso);
std::string format_date(Date date);

enum class Sex
{
    male,
    female
};

// Outcome components, in CSV column order.
enum Target : int
{
    kWaist = 0,
    kPmax = 1,
    kGlucose = 2,
    kTriglycerides = 3,
    kHdl = 4,
};
inline constexpr int kNumTargets = 5;

/// CSV column names of the five targets, indexed by Target.
extern const std::array<std::string_view, kNumTargets> kTargetColumns;

enum class CovariateKind
{
    numeric,
    binary,
    interaction
};

/// Shrinkage group of a covariate; each group shares one global scale.
enum class CovariateGroup : int
{
    numerical = 0,
    binary = 1,
    interactions = 2
};
inline constexpr int kNumGroups = 3;

struct CovariateEntry
{
    std::string name;
    CovariateKind kind = CovariateKind::numeric;
    bool log_transformed = false;
    CovariateGroup group = CovariateGroup::numerical;
    /// Interaction base covariate (the other factor is the male indicator).
    std::string base;
    /// Binary levels; levels[1] encodes 1. Numeric strings "0"/"1" are always accepted.
    std::array<std::string, 2> levels{"0", "1"};
    /// Binary entry derived from the sex column (male = 1) instead of its own column.
    bool from_sex = false;
};

class CovariateSchema
{
public:
    CovariateSchema() = default;
    explicit CovariateSchema(std::vector<CovariateEntry> entries);

    static CovariateSchema from_json(const nlohmann::json& doc);
    static CovariateSchema load(const std::filesystem::path& path);
    nlohmann::json to_json() const;

    const std::vector<CovariateEntry>& entries() const noexcept { return entries_; }
    const CovariateEntry& operator[](std::size_t i) const { return entries_[i]; }
    std::size_t size() const noexcept { return entries_.size(); }
    std::optional<std::size_t> index_of(std::string_view name) const;
    /// Index of the interaction base of entry i.
    std::size_t base_index(std::size_t i) const { return base_index_[i]; }
    std::array<std::size_t, kNumGroups> group_counts() const;

    /// True for entries read from their own CSV column.
    bool is_input_column(std::size_t i) const;

    bool operator==(const CovariateSchema& other) const;

private:
    std::vector<CovariateEntry> entries_;
    std::vector<std::size_t> base_index_;
};

struct VisitRecord
{
    std::string subject_id;
    int visit_index = 0;
    Date visit_date{};
    Sex sex = Sex::male;
    /// Clinical units before transformation; log-standardized afterwards.
    std::array<std::optional<double>, kNumTargets> targets{};
    /// Aligned with schema entries. Binary values are 0/1; interactions are
    /// filled by transform_and_standardize.
    std::vector<std::optional<double>> covariates;
};

struct Moments
{
    double mean = 0.0;
    double sd = 1.0;
};

/// Training-set moments of every transformed numeric variable.
struct Standardization
{
    std::array<Moments, kNumTargets> targets{};
    /// Per schema entry; engaged for numeric entries only.
    std::vector<std::optional<Moments>> covariates;

    double standardize_target(int k, double clinical) const;
    double unstandardize_target(int k, double standardized) const;

    nlohmann::json to_json() const;
    static Standardization from_json(const nlohmann::json& doc);
};

struct Cohort
{
    std::vector<VisitRecord> records;
    CovariateSchema schema;
    std::optional<Standardization> standardization;

    std::size_t subject_count() const;
};

struct LoadResult
{
    Cohort cohort;
    std::size_t dropped = 0;
};

struct ReadOptions
{
    /// When false, target columns may be absent or blank (next-visit files).
    bool require_targets = true;
};

LoadResult read_cohort(std::istream& in, const CovariateSchema& schema, ReadOptions options = {});
LoadResult load_cohort(const std::filesystem::path& path, const CovariateSchema& schema,
                       ReadOptions options = {});

void write_cohort(std::ostream& out, const Cohort& cohort);

/// Log-transforms targets and flagged covariates, then standardizes numeric
/// variables with moments from the flagged training rows (sample sd).
Cohort transform_and_standardize(const Cohort& cohort, const std::vector<bool>& train_mask);

/// Applies stored moments to raw-unit records (used for new visits).
std::vector<VisitRecord> apply_standardization(const std::vector<VisitRecord>& records,
                                               const CovariateSchema& schema,
                                               const Standardization& standardization);

/// Maps a raw covariate value to model scale using stored moments; binaries pass through.
double standardize_covariate(const CovariateSchema& schema, const Standardization& standardization,
                             std::size_t index, double raw);

struct Split
{
    Cohort train;
    Cohort test;
    /// Parallel to test.records: waist observed at the held-out visit.
    std::vector<bool> test_complete;
    std::vector<std::string> warnings;

    std::size_t complete_test_count() const;
};

/// Moves each subject's most recent visit to the test partition.
Split split_last_visit(const Cohort& cohort);

/// Per-record flag: true for every visit except each subject's last one.
std::vector<bool> training_mask(const Cohort& cohort);

struct ImputationOptions
{
    int iterations = 10;
    std::uint64_t seed = 1;
    int donors = 5;
};

/// Chained predictive mean matching over the input covariates. Targets are
/// never used as predictors; every filled value is an observed value of the
/// same column.
Cohort impute_covariates(const Cohort& cohort, const ImputationOptions& options = {});

}  // namespace mets
