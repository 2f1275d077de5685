#include "mets/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>
#include <tuple>
#include <unordered_map>

#include <Eigen/Dense>

#include "mets/csv.hpp"
#include "mets/errors.hpp"
#include "mets/rng.hpp"

namespace mets {

const std::array<std::string_view, kNumTargets> kTargetColumns = {
    "waist_cm", "pmax_mmhg", "glucose_mgdl", "triglycerides_mgdl", "hdl_mgdl"};

namespace {

constexpr std::array<std::string_view, 3> kKeyColumns = {"subject_id", "visit_date", "sex"};

std::string lower(std::string_view s)
{
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

std::string_view trim(std::string_view s)
{
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t'))
    {
        s.remove_prefix(1);
    }
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t'))
    {
        s.remove_suffix(1);
    }
    return s;
}

std::optional<double> parse_number(std::string_view text)
{
    text = trim(text);
    if (text.empty())
    {
        return std::nullopt;
    }
    double value = 0.0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc() || ptr != text.data() + text.size() || !std::isfinite(value))
    {
        throw ValidationError("not a finite number: '" + std::string(text) + "'");
    }
    return value;
}

std::string kind_name(CovariateKind kind)
{
    switch (kind)
    {
    case CovariateKind::numeric: return "numeric";
    case CovariateKind::binary: return "binary";
    case CovariateKind::interaction: return "interaction";
    }
    return "numeric";
}

std::string group_name(CovariateGroup group)
{
    switch (group)
    {
    case CovariateGroup::numerical: return "numerical";
    case CovariateGroup::binary: return "binary";
    case CovariateGroup::interactions: return "interactions";
    }
    return "numerical";
}

CovariateKind parse_kind(const std::string& s)
{
    const std::string k = lower(s);
    if (k == "numeric" || k == "numerical")
    {
        return CovariateKind::numeric;
    }
    if (k == "binary")
    {
        return CovariateKind::binary;
    }
    if (k == "interaction")
    {
        return CovariateKind::interaction;
    }
    throw ValidationError("unknown covariate kind '" + s + "'");
}

CovariateGroup parse_group(const std::string& s)
{
    const std::string g = lower(s);
    if (g == "numerical" || g == "numeric")
    {
        return CovariateGroup::numerical;
    }
    if (g == "binary")
    {
        return CovariateGroup::binary;
    }
    if (g == "interactions" || g == "interaction")
    {
        return CovariateGroup::interactions;
    }
    throw ValidationError("unknown covariate group '" + s + "'");
}

CovariateGroup default_group(CovariateKind kind)
{
    switch (kind)
    {
    case CovariateKind::numeric: return CovariateGroup::numerical;
    case CovariateKind::binary: return CovariateGroup::binary;
    case CovariateKind::interaction: return CovariateGroup::interactions;
    }
    return CovariateGroup::numerical;
}

bool is_male(Sex sex) { return sex == Sex::male; }

Sex parse_sex(std::string_view text)
{
    const std::string s = lower(trim(text));
    if (s == "m" || s == "male")
    {
        return Sex::male;
    }
    if (s == "f" || s == "female")
    {
        return Sex::female;
    }
    throw ValidationError("sex must be M or F, got '" + std::string(text) + "'");
}

double parse_binary(const CovariateEntry& entry, std::string_view text)
{
    const std::string_view t = trim(text);
    if (t == entry.levels[1] || t == "1")
    {
        return 1.0;
    }
    if (t == entry.levels[0] || t == "0")
    {
        return 0.0;
    }
    throw ValidationError("covariate '" + entry.name + "': unknown level '" + std::string(t) + "'");
}

Moments sample_moments(const std::vector<double>& values, const std::string& name)
{
    if (values.size() < 2)
    {
        throw ValidationError("variable '" + name + "' has fewer than two training values");
    }
    const double n = static_cast<double>(values.size());
    const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : values)
    {
        ss += (v - mean) * (v - mean);
    }
    const double sd = std::sqrt(ss / (n - 1.0));
    if (!(sd > 0.0))
    {
        throw ValidationError("variable '" + name + "' has zero sd on the training rows");
    }
    return {mean, sd};
}

double log_checked(double value, const std::string& name)
{
    if (!(value > 0.0))
    {
        throw ValidationError("variable '" + name + "' must be positive for the log transform");
    }
    return std::log(value);
}

void fill_interactions(VisitRecord& record, const CovariateSchema& schema)
{
    for (std::size_t p = 0; p < schema.size(); ++p)
    {
        if (schema[p].kind != CovariateKind::interaction)
        {
            continue;
        }
        const auto& base = record.covariates[schema.base_index(p)];
        record.covariates[p] = base ? std::optional<double>(*base * (is_male(record.sex) ? 1.0 : 0.0))
                                    : std::nullopt;
    }
}

}  // namespace

Date parse_date(std::string_view iso)
{
    iso = trim(iso);
    int y = 0;
    unsigned m = 0;
    unsigned d = 0;
    char tail = 0;
    const std::string text(iso);
    if (text.size() != 10 || std::sscanf(text.c_str(), "%4d-%2u-%2u%c", &y, &m, &d, &tail) != 3)
    {
        throw ValidationError("invalid ISO date '" + text + "'");
    }
    const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
    if (!ymd.ok())
    {
        throw ValidationError("invalid calendar date '" + text + "'");
    }
    return Date(ymd);
}

std::string format_date(Date date)
{
    const std::chrono::year_month_day ymd(date);
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
    return buf;
}

CovariateSchema::CovariateSchema(std::vector<CovariateEntry> entries) : entries_(std::move(entries))
{
    std::set<std::string> seen;
    std::set<std::string> reserved(kKeyColumns.begin(), kKeyColumns.end());
    reserved.insert(kTargetColumns.begin(), kTargetColumns.end());
    for (const auto& e : entries_)
    {
        if (e.name.empty())
        {
            throw ValidationError("covariate with empty name");
        }
        if (!seen.insert(e.name).second)
        {
            throw ValidationError("duplicate covariate '" + e.name + "'");
        }
        if (reserved.count(e.name) != 0 && !e.from_sex)
        {
            throw ValidationError("covariate name '" + e.name + "' clashes with a fixed column");
        }
        if (e.log_transformed && e.kind != CovariateKind::numeric)
        {
            throw ValidationError("covariate '" + e.name + "': only numeric covariates can be log-transformed");
        }
        if (e.from_sex && e.kind != CovariateKind::binary)
        {
            throw ValidationError("covariate '" + e.name + "': sex-derived entries must be binary");
        }
    }
    base_index_.assign(entries_.size(), 0);
    for (std::size_t i = 0; i < entries_.size(); ++i)
    {
        const auto& e = entries_[i];
        if (e.kind != CovariateKind::interaction)
        {
            base_index_[i] = i;
            continue;
        }
        const auto base = index_of(e.base);
        if (!base)
        {
            throw ValidationError("interaction '" + e.name + "' references unknown base '" + e.base + "'");
        }
        const auto& b = entries_[*base];
        if (b.kind == CovariateKind::interaction || b.from_sex)
        {
            throw ValidationError("interaction '" + e.name + "' needs a numeric or binary base other than sex");
        }
        base_index_[i] = *base;
    }
}

CovariateSchema CovariateSchema::from_json(const nlohmann::json& doc)
{
    const nlohmann::json& list = doc.is_object() && doc.contains("covariates") ? doc.at("covariates") : doc;
    if (!list.is_array())
    {
        throw ValidationError("schema must be an array of covariate entries");
    }
    std::vector<CovariateEntry> entries;
    try
    {
        for (const auto& item : list)
        {
            CovariateEntry e;
            e.name = item.at("name").get<std::string>();
            e.kind = parse_kind(item.value("kind", std::string("numeric")));
            e.log_transformed = item.value("log_transformed", false);
            e.group = item.contains("group") ? parse_group(item.at("group").get<std::string>())
                                             : default_group(e.kind);
            e.base = item.value("base", std::string());
            if (item.contains("levels"))
            {
                const auto levels = item.at("levels").get<std::vector<std::string>>();
                if (levels.size() != 2)
                {
                    throw ValidationError("covariate '" + e.name + "': binary levels must have two entries");
                }
                e.levels = {levels[0], levels[1]};
            }
            e.from_sex = item.value("source", std::string()) == "sex"
                         || (e.kind == CovariateKind::binary && (e.name == "sex" || e.name == "sex_male"));
            entries.push_back(std::move(e));
        }
    }
    catch (const nlohmann::json::exception& ex)
    {
        throw ValidationError(std::string("malformed schema: ") + ex.what());
    }
    return CovariateSchema(std::move(entries));
}

CovariateSchema CovariateSchema::load(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
    {
        throw ValidationError("cannot open schema file " + path.string());
    }
    nlohmann::json doc;
    try
    {
        doc = nlohmann::json::parse(in);
    }
    catch (const nlohmann::json::exception& ex)
    {
        throw ValidationError("schema file " + path.string() + ": " + ex.what());
    }
    return from_json(doc);
}

nlohmann::json CovariateSchema::to_json() const
{
    nlohmann::json list = nlohmann::json::array();
    for (const auto& e : entries_)
    {
        nlohmann::json item = {{"name", e.name},
                               {"kind", kind_name(e.kind)},
                               {"log_transformed", e.log_transformed},
                               {"group", group_name(e.group)}};
        if (e.kind == CovariateKind::interaction)
        {
            item["base"] = e.base;
        }
        if (e.kind == CovariateKind::binary)
        {
            item["levels"] = {e.levels[0], e.levels[1]};
        }
        if (e.from_sex)
        {
            item["source"] = "sex";
        }
        list.push_back(std::move(item));
    }
    return list;
}

std::optional<std::size_t> CovariateSchema::index_of(std::string_view name) const
{
    for (std::size_t i = 0; i < entries_.size(); ++i)
    {
        if (entries_[i].name == name)
        {
            return i;
        }
    }
    return std::nullopt;
}

std::array<std::size_t, kNumGroups> CovariateSchema::group_counts() const
{
    std::array<std::size_t, kNumGroups> counts{};
    for (const auto& e : entries_)
    {
        ++counts[static_cast<int>(e.group)];
    }
    return counts;
}

bool CovariateSchema::is_input_column(std::size_t i) const
{
    return entries_[i].kind != CovariateKind::interaction && !entries_[i].from_sex;
}

bool CovariateSchema::operator==(const CovariateSchema& other) const
{
    return to_json() == other.to_json();
}

double Standardization::standardize_target(int k, double clinical) const
{
    const auto& m = targets.at(static_cast<std::size_t>(k));
    return (std::log(clinical) - m.mean) / m.sd;
}

double Standardization::unstandardize_target(int k, double standardized) const
{
    const auto& m = targets.at(static_cast<std::size_t>(k));
    return std::exp(m.mean + m.sd * standardized);
}

nlohmann::json Standardization::to_json() const
{
    nlohmann::json doc;
    doc["targets"] = nlohmann::json::array();
    for (const auto& m : targets)
    {
        doc["targets"].push_back({{"mean", m.mean}, {"sd", m.sd}});
    }
    doc["covariates"] = nlohmann::json::array();
    for (const auto& m : covariates)
    {
        doc["covariates"].push_back(m ? nlohmann::json{{"mean", m->mean}, {"sd", m->sd}} : nlohmann::json());
    }
    return doc;
}

Standardization Standardization::from_json(const nlohmann::json& doc)
{
    Standardization s;
    const auto& t = doc.at("targets");
    if (t.size() != kNumTargets)
    {
        throw ValidationError("standardization must list five targets");
    }
    for (int k = 0; k < kNumTargets; ++k)
    {
        s.targets[k] = {t[k].at("mean").get<double>(), t[k].at("sd").get<double>()};
    }
    for (const auto& c : doc.at("covariates"))
    {
        if (c.is_null())
        {
            s.covariates.emplace_back();
        }
        else
        {
            s.covariates.emplace_back(Moments{c.at("mean").get<double>(), c.at("sd").get<double>()});
        }
    }
    return s;
}

std::size_t Cohort::subject_count() const
{
    std::set<std::string> ids;
    for (const auto& r : records)
    {
        ids.insert(r.subject_id);
    }
    return ids.size();
}

LoadResult read_cohort(std::istream& in, const CovariateSchema& schema, ReadOptions options)
{
    std::string line;
    std::vector<std::string> fields;
    std::size_t line_no = 0;
    while (std::getline(in, line))
    {
        ++line_no;
        if (!trim(line).empty() && trim(line) != "\r")
        {
            break;
        }
    }
    if (line_no == 0 || trim(line).empty())
    {
        throw ValidationError("CSV input is empty (header row required)");
    }
    if (!csv::split_line(line, fields))
    {
        throw ValidationError("line " + std::to_string(line_no) + ": unbalanced quotes in header");
    }

    // Column lookup.
    constexpr int kAbsent = -1;
    std::array<int, 3> key_col{kAbsent, kAbsent, kAbsent};
    std::array<int, kNumTargets> target_col{};
    target_col.fill(kAbsent);
    std::vector<int> cov_col(schema.size(), kAbsent);
    std::set<std::string> header_seen;
    for (std::size_t c = 0; c < fields.size(); ++c)
    {
        const std::string name(trim(fields[c]));
        if (!header_seen.insert(name).second)
        {
            throw ValidationError("duplicate column '" + name + "' in header");
        }
        const auto key = std::find(kKeyColumns.begin(), kKeyColumns.end(), name);
        if (key != kKeyColumns.end())
        {
            key_col[static_cast<std::size_t>(key - kKeyColumns.begin())] = static_cast<int>(c);
            continue;
        }
        const auto tgt = std::find(kTargetColumns.begin(), kTargetColumns.end(), name);
        if (tgt != kTargetColumns.end())
        {
            target_col[static_cast<std::size_t>(tgt - kTargetColumns.begin())] = static_cast<int>(c);
            continue;
        }
        const auto idx = schema.index_of(name);
        if (!idx || !schema.is_input_column(*idx))
        {
            throw ValidationError("unknown covariate column '" + name + "'");
        }
        cov_col[*idx] = static_cast<int>(c);
    }
    for (std::size_t i = 0; i < kKeyColumns.size(); ++i)
    {
        if (key_col[i] == kAbsent)
        {
            throw ValidationError("missing required column '" + std::string(kKeyColumns[i]) + "'");
        }
    }
    if (options.require_targets)
    {
        for (int k = 0; k < kNumTargets; ++k)
        {
            if (target_col[k] == kAbsent)
            {
                throw ValidationError("missing required column '" + std::string(kTargetColumns[k]) + "'");
            }
        }
        for (std::size_t p = 0; p < schema.size(); ++p)
        {
            if (schema.is_input_column(p) && cov_col[p] == kAbsent)
            {
                throw ValidationError("missing covariate column '" + schema[p].name + "'");
            }
        }
    }

    LoadResult result;
    result.cohort.schema = schema;
    const std::size_t width = fields.size();
    while (std::getline(in, line))
    {
        ++line_no;
        if (trim(line).empty() || trim(line) == "\r")
        {
            continue;
        }
        const std::string where = "line " + std::to_string(line_no) + ": ";
        if (!csv::split_line(line, fields))
        {
            throw ValidationError(where + "unbalanced quotes");
        }
        if (fields.size() != width)
        {
            throw ValidationError(where + "expected " + std::to_string(width) + " fields, found "
                                  + std::to_string(fields.size()));
        }
        try
        {
            VisitRecord rec;
            rec.subject_id = std::string(trim(fields[key_col[0]]));
            if (rec.subject_id.empty())
            {
                throw ValidationError("empty subject_id");
            }
            rec.visit_date = parse_date(fields[key_col[1]]);
            rec.sex = parse_sex(fields[key_col[2]]);
            for (int k = 0; k < kNumTargets; ++k)
            {
                if (target_col[k] == kAbsent)
                {
                    continue;
                }
                rec.targets[k] = parse_number(fields[target_col[k]]);
                if (rec.targets[k] && !(*rec.targets[k] > 0.0))
                {
                    throw ValidationError("non-positive value for " + std::string(kTargetColumns[k]));
                }
            }
            rec.covariates.assign(schema.size(), std::nullopt);
            for (std::size_t p = 0; p < schema.size(); ++p)
            {
                const auto& e = schema[p];
                if (e.from_sex)
                {
                    rec.covariates[p] = is_male(rec.sex) ? 1.0 : 0.0;
                    continue;
                }
                if (cov_col[p] == kAbsent)
                {
                    continue;
                }
                const std::string_view text = trim(fields[cov_col[p]]);
                if (text.empty())
                {
                    continue;
                }
                rec.covariates[p] = e.kind == CovariateKind::binary ? parse_binary(e, text) : parse_number(text);
            }
            if (options.require_targets)
            {
                bool complete = true;
                for (int k = kPmax; k < kNumTargets; ++k)
                {
                    complete = complete && rec.targets[k].has_value();
                }
                if (!complete)
                {
                    ++result.dropped;
                    continue;
                }
            }
            result.cohort.records.push_back(std::move(rec));
        }
        catch (const ValidationError& ex)
        {
            throw ValidationError(where + ex.what());
        }
    }

    auto& recs = result.cohort.records;
    std::stable_sort(recs.begin(), recs.end(), [](const VisitRecord& a, const VisitRecord& b) {
        return std::tie(a.subject_id, a.visit_date) < std::tie(b.subject_id, b.visit_date);
    });
    for (std::size_t i = 0; i < recs.size(); ++i)
    {
        const bool same_subject = i > 0 && recs[i].subject_id == recs[i - 1].subject_id;
        if (same_subject && recs[i].visit_date == recs[i - 1].visit_date)
        {
            throw ValidationError("duplicate visit (" + recs[i].subject_id + ", " + format_date(recs[i].visit_date)
                                  + ")");
        }
        if (same_subject && recs[i].sex != recs[i - 1].sex)
        {
            throw ValidationError("subject " + recs[i].subject_id + " has inconsistent sex across visits");
        }
        recs[i].visit_index = same_subject ? recs[i - 1].visit_index + 1 : 1;
    }
    return result;
}

LoadResult load_cohort(const std::filesystem::path& path, const CovariateSchema& schema, ReadOptions options)
{
    std::ifstream in(path);
    if (!in)
    {
        throw ValidationError("cannot open data file " + path.string());
    }
    return read_cohort(in, schema, options);
}

void write_cohort(std::ostream& out, const Cohort& cohort)
{
    if (cohort.standardization)
    {
        throw InvalidArgument("write_cohort expects clinical-unit records");
    }
    const auto& schema = cohort.schema;
    std::vector<std::string> row(kKeyColumns.begin(), kKeyColumns.end());
    row.insert(row.end(), kTargetColumns.begin(), kTargetColumns.end());
    for (std::size_t p = 0; p < schema.size(); ++p)
    {
        if (schema.is_input_column(p))
        {
            row.push_back(schema[p].name);
        }
    }
    csv::write_row(out, row);
    for (const auto& r : cohort.records)
    {
        row.clear();
        row.push_back(r.subject_id);
        row.push_back(format_date(r.visit_date));
        row.push_back(is_male(r.sex) ? "M" : "F");
        for (const auto& t : r.targets)
        {
            row.push_back(t ? csv::format_double(*t) : std::string());
        }
        for (std::size_t p = 0; p < schema.size(); ++p)
        {
            if (!schema.is_input_column(p))
            {
                continue;
            }
            const auto& v = r.covariates[p];
            if (!v)
            {
                row.emplace_back();
            }
            else if (schema[p].kind == CovariateKind::binary)
            {
                row.push_back(schema[p].levels[*v > 0.5 ? 1 : 0]);
            }
            else
            {
                row.push_back(csv::format_double(*v));
            }
        }
        csv::write_row(out, row);
    }
}

Cohort transform_and_standardize(const Cohort& cohort, const std::vector<bool>& train_mask)
{
    if (cohort.standardization)
    {
        throw InvalidArgument("cohort is already standardized");
    }
    if (train_mask.size() != cohort.records.size())
    {
        throw InvalidArgument("train_mask length differs from record count");
    }
    if (std::none_of(train_mask.begin(), train_mask.end(), [](bool b) { return b; }))
    {
        throw InvalidArgument("train_mask selects no records");
    }
    const auto& schema = cohort.schema;
    Cohort out = cohort;
    for (auto& r : out.records)
    {
        for (int k = 0; k < kNumTargets; ++k)
        {
            if (r.targets[k])
            {
                r.targets[k] = log_checked(*r.targets[k], std::string(kTargetColumns[k]));
            }
        }
        for (std::size_t p = 0; p < schema.size(); ++p)
        {
            if (schema[p].log_transformed && r.covariates[p])
            {
                r.covariates[p] = log_checked(*r.covariates[p], schema[p].name);
            }
        }
    }

    Standardization st;
    st.covariates.assign(schema.size(), std::nullopt);
    std::vector<double> values;
    for (int k = 0; k < kNumTargets; ++k)
    {
        values.clear();
        for (std::size_t i = 0; i < out.records.size(); ++i)
        {
            if (train_mask[i] && out.records[i].targets[k])
            {
                values.push_back(*out.records[i].targets[k]);
            }
        }
        st.targets[k] = sample_moments(values, std::string(kTargetColumns[k]));
    }
    for (std::size_t p = 0; p < schema.size(); ++p)
    {
        if (schema[p].kind != CovariateKind::numeric)
        {
            continue;
        }
        values.clear();
        for (std::size_t i = 0; i < out.records.size(); ++i)
        {
            if (train_mask[i] && out.records[i].covariates[p])
            {
                values.push_back(*out.records[i].covariates[p]);
            }
        }
        st.covariates[p] = sample_moments(values, schema[p].name);
    }

    for (auto& r : out.records)
    {
        for (int k = 0; k < kNumTargets; ++k)
        {
            if (r.targets[k])
            {
                r.targets[k] = (*r.targets[k] - st.targets[k].mean) / st.targets[k].sd;
            }
        }
        for (std::size_t p = 0; p < schema.size(); ++p)
        {
            if (st.covariates[p] && r.covariates[p])
            {
                r.covariates[p] = (*r.covariates[p] - st.covariates[p]->mean) / st.covariates[p]->sd;
            }
        }
        fill_interactions(r, schema);
    }
    out.standardization = std::move(st);
    return out;
}

double standardize_covariate(const CovariateSchema& schema, const Standardization& standardization,
                             std::size_t index, double raw)
{
    const auto& e = schema[index];
    switch (e.kind)
    {
    case CovariateKind::binary:
        if (raw != 0.0 && raw != 1.0)
        {
            throw ValidationError("binary covariate '" + e.name + "' must be 0 or 1");
        }
        return raw;
    case CovariateKind::interaction:
        throw InvalidArgument("interaction '" + e.name + "' is derived, not an input");
    case CovariateKind::numeric: break;
    }
    if (!std::isfinite(raw))
    {
        throw ValidationError("covariate '" + e.name + "' must be finite");
    }
    const double x = e.log_transformed ? log_checked(raw, e.name) : raw;
    const auto& m = standardization.covariates.at(index);
    if (!m)
    {
        throw InvalidArgument("no stored moments for covariate '" + e.name + "'");
    }
    return (x - m->mean) / m->sd;
}

std::vector<VisitRecord> apply_standardization(const std::vector<VisitRecord>& records,
                                               const CovariateSchema& schema,
                                               const Standardization& standardization)
{
    std::vector<VisitRecord> out = records;
    for (auto& r : out)
    {
        if (r.covariates.size() != schema.size())
        {
            throw InvalidArgument("record covariates do not match the schema");
        }
        for (int k = 0; k < kNumTargets; ++k)
        {
            if (r.targets[k])
            {
                if (!(*r.targets[k] > 0.0))
                {
                    throw ValidationError("non-positive value for " + std::string(kTargetColumns[k]));
                }
                r.targets[k] = standardization.standardize_target(k, *r.targets[k]);
            }
        }
        for (std::size_t p = 0; p < schema.size(); ++p)
        {
            if (schema[p].kind != CovariateKind::interaction && r.covariates[p])
            {
                r.covariates[p] = standardize_covariate(schema, standardization, p, *r.covariates[p]);
            }
        }
        fill_interactions(r, schema);
    }
    return out;
}

std::vector<bool> training_mask(const Cohort& cohort)
{
    const auto& recs = cohort.records;
    std::vector<bool> mask(recs.size(), true);
    for (std::size_t i = 0; i < recs.size(); ++i)
    {
        const bool last = i + 1 == recs.size() || recs[i + 1].subject_id != recs[i].subject_id;
        if (last)
        {
            mask[i] = false;
        }
    }
    return mask;
}

std::size_t Split::complete_test_count() const
{
    return static_cast<std::size_t>(std::count(test_complete.begin(), test_complete.end(), true));
}

Split split_last_visit(const Cohort& cohort)
{
    const auto& recs = cohort.records;
    for (std::size_t i = 1; i < recs.size(); ++i)
    {
        const auto& a = recs[i - 1];
        const auto& b = recs[i];
        if (std::tie(a.subject_id, a.visit_date) >= std::tie(b.subject_id, b.visit_date))
        {
            throw InvalidArgument("records must be sorted by (subject_id, visit_date)");
        }
    }
    Split split;
    split.train.schema = cohort.schema;
    split.test.schema = cohort.schema;
    split.train.standardization = cohort.standardization;
    split.test.standardization = cohort.standardization;
    const auto mask = training_mask(cohort);
    std::size_t visits = 0;
    for (std::size_t i = 0; i < recs.size(); ++i)
    {
        ++visits;
        if (mask[i])
        {
            split.train.records.push_back(recs[i]);
            continue;
        }
        if (visits < 2)
        {
            throw ValidationError("subject " + recs[i].subject_id + " has a single visit");
        }
        if (visits < 4)
        {
            split.warnings.push_back("subject " + recs[i].subject_id + " has only " + std::to_string(visits)
                                     + " visits");
        }
        split.test.records.push_back(recs[i]);
        split.test_complete.push_back(recs[i].targets[kWaist].has_value());
        visits = 0;
    }
    return split;
}

Cohort impute_covariates(const Cohort& cohort, const ImputationOptions& options)
{
    if (options.iterations < 0 || options.donors < 1)
    {
        throw InvalidArgument("imputation needs iterations >= 0 and donors >= 1");
    }
    const auto& schema = cohort.schema;
    Cohort out = cohort;
    auto& recs = out.records;
    const std::size_t n = recs.size();
    if (n == 0)
    {
        return out;
    }

    std::vector<std::size_t> columns;
    std::vector<std::size_t> missing_count;
    for (std::size_t p = 0; p < schema.size(); ++p)
    {
        if (!schema.is_input_column(p))
        {
            continue;
        }
        std::size_t miss = 0;
        for (const auto& r : recs)
        {
            miss += r.covariates[p] ? 0 : 1;
        }
        if (2 * miss >= n)
        {
            throw ValidationError("covariate '" + schema[p].name + "' is at least 50% missing; drop it first");
        }
        columns.push_back(p);
        missing_count.push_back(miss);
    }

    // Visit order: ascending missingness, schema order among ties.
    std::vector<std::size_t> order(columns.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return missing_count[a] < missing_count[b]; });

    const std::size_t m = columns.size();
    // observed[c][i]: original observation flag.
    std::vector<std::vector<char>> observed(m, std::vector<char>(n, 0));
    Eigen::MatrixXd values(n, m);
    RngStream rng(options.seed, 0);
    auto uniform_index = [&rng](std::size_t size) {
        return std::min(size - 1, static_cast<std::size_t>(rng.uniform() * static_cast<double>(size)));
    };
    for (std::size_t c = 0; c < m; ++c)
    {
        std::vector<double> pool;
        for (std::size_t i = 0; i < n; ++i)
        {
            const auto& v = recs[i].covariates[columns[c]];
            if (v)
            {
                observed[c][i] = 1;
                values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = *v;
                pool.push_back(*v);
            }
        }
        for (std::size_t i = 0; i < n; ++i)
        {
            if (!observed[c][i])
            {
                values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = pool[uniform_index(pool.size())];
            }
        }
    }

    // Subject grouping for the leave-one-out subject-mean predictor.
    std::vector<std::size_t> subject(n);
    {
        std::unordered_map<std::string, std::size_t> ids;
        for (std::size_t i = 0; i < n; ++i)
        {
            subject[i] = ids.emplace(recs[i].subject_id, ids.size()).first->second;
        }
    }
    const std::size_t n_subjects = *std::max_element(subject.begin(), subject.end()) + 1;

    for (int iter = 0; iter < options.iterations; ++iter)
    {
        for (std::size_t oc : order)
        {
            if (missing_count[oc] == 0)
            {
                continue;
            }
            const auto col = static_cast<Eigen::Index>(oc);
            std::vector<double> sub_sum(n_subjects, 0.0);
            std::vector<double> sub_cnt(n_subjects, 0.0);
            double global_sum = 0.0;
            double global_cnt = 0.0;
            for (std::size_t i = 0; i < n; ++i)
            {
                if (observed[oc][i])
                {
                    sub_sum[subject[i]] += values(static_cast<Eigen::Index>(i), col);
                    sub_cnt[subject[i]] += 1.0;
                    global_sum += values(static_cast<Eigen::Index>(i), col);
                    global_cnt += 1.0;
                }
            }
            const double global_mean = global_sum / global_cnt;

            // Predictors: intercept, other columns, subject mean of this column, male indicator.
            const Eigen::Index q = static_cast<Eigen::Index>(m) + 2;
            Eigen::MatrixXd design(static_cast<Eigen::Index>(n), q);
            for (std::size_t i = 0; i < n; ++i)
            {
                const auto row = static_cast<Eigen::Index>(i);
                design(row, 0) = 1.0;
                Eigen::Index j = 1;
                for (std::size_t c = 0; c < m; ++c)
                {
                    if (c != oc)
                    {
                        design(row, j++) = values(row, static_cast<Eigen::Index>(c));
                    }
                }
                double s = sub_sum[subject[i]];
                double cnt = sub_cnt[subject[i]];
                if (observed[oc][i])
                {
                    s -= values(row, col);
                    cnt -= 1.0;
                }
                design(row, j++) = cnt > 0.0 ? s / cnt : global_mean;
                design(row, j) = is_male(recs[i].sex) ? 1.0 : 0.0;
            }
            Eigen::MatrixXd xtx = Eigen::MatrixXd::Zero(q, q);
            Eigen::VectorXd xty = Eigen::VectorXd::Zero(q);
            for (std::size_t i = 0; i < n; ++i)
            {
                if (observed[oc][i])
                {
                    const auto row = static_cast<Eigen::Index>(i);
                    xtx.selfadjointView<Eigen::Lower>().rankUpdate(design.row(row).transpose());
                    xty += design.row(row).transpose() * values(row, col);
                }
            }
            xtx = xtx.selfadjointView<Eigen::Lower>();
            const double ridge = 1e-8 * std::max(1.0, xtx.diagonal().maxCoeff());
            xtx.diagonal().array() += ridge;
            const Eigen::VectorXd coef = xtx.ldlt().solve(xty);
            const Eigen::VectorXd fitted = design * coef;

            std::vector<std::size_t> donors;
            for (std::size_t i = 0; i < n; ++i)
            {
                if (observed[oc][i])
                {
                    donors.push_back(i);
                }
            }
            std::stable_sort(donors.begin(), donors.end(), [&](std::size_t a, std::size_t b) {
                return fitted(static_cast<Eigen::Index>(a)) < fitted(static_cast<Eigen::Index>(b));
            });
            std::vector<double> donor_fit(donors.size());
            for (std::size_t d = 0; d < donors.size(); ++d)
            {
                donor_fit[d] = fitted(static_cast<Eigen::Index>(donors[d]));
            }
            const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(options.donors), donors.size());
            for (std::size_t i = 0; i < n; ++i)
            {
                if (observed[oc][i])
                {
                    continue;
                }
                const double target = fitted(static_cast<Eigen::Index>(i));
                // Grow a window of k nearest donors around the insertion point.
                std::size_t hi = static_cast<std::size_t>(
                    std::lower_bound(donor_fit.begin(), donor_fit.end(), target) - donor_fit.begin());
                std::size_t lo = hi;
                while (hi - lo < k)
                {
                    if (lo == 0)
                    {
                        ++hi;
                    }
                    else if (hi == donor_fit.size())
                    {
                        --lo;
                    }
                    else if (target - donor_fit[lo - 1] <= donor_fit[hi] - target)
                    {
                        --lo;
                    }
                    else
                    {
                        ++hi;
                    }
                }
                const std::size_t pick = donors[lo + uniform_index(k)];
                values(static_cast<Eigen::Index>(i), col) = values(static_cast<Eigen::Index>(pick), col);
            }
        }
    }

    for (std::size_t c = 0; c < m; ++c)
    {
        for (std::size_t i = 0; i < n; ++i)
        {
            recs[i].covariates[columns[c]] = values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c));
        }
    }
    return out;
}

}  // namespace mets
