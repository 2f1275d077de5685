#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <set>
#include <sstream>

#include "mets/errors.hpp"
#include "mets/ingest.hpp"
#include "support.hpp"

using namespace mets;

namespace {

const char* kHeader =
    "subject_id,visit_date,sex,waist_cm,pmax_mmhg,glucose_mgdl,triglycerides_mgdl,hdl_mgdl,bmi,ferritin,"
    "physical_activity\n";

LoadResult read_text(const std::string& body, ReadOptions options = {})
{
    std::istringstream in(std::string(kHeader) + body);
    return read_cohort(in, test::small_schema(), options);
}

std::string error_of(const std::string& body)
{
    try
    {
        read_text(body);
    }
    catch (const ValidationError& ex)
    {
        return ex.what();
    }
    return {};
}

VisitRecord make_record(const std::string& id, int day, Sex sex, std::vector<std::optional<double>> cov)
{
    VisitRecord r;
    r.subject_id = id;
    r.visit_date = parse_date("2015-01-01") + std::chrono::days(day);
    r.sex = sex;
    r.targets = {90.0, 120.0, 90.0, 100.0, 55.0};
    r.covariates = std::move(cov);
    return r;
}

// Gives every target a distinct value per record so only covariates can be degenerate.
void vary_targets(Cohort& c)
{
    for (std::size_t i = 0; i < c.records.size(); ++i)
    {
        for (int k = 0; k < kNumTargets; ++k)
        {
            c.records[i].targets[k] = *c.records[i].targets[k] * (1.0 + 0.01 * static_cast<double>((i + 1) * (k + 1)));
        }
    }
}

}  // namespace

TEST_CASE("load drops rows missing a non-waist target")
{
    const auto res = read_text("A,2015-01-01,M,90,120,,100,50,25,40,Active\n"
                               "A,2016-01-01,M,91,121,95,101,51,25.5,41,Active\n"
                               "A,2017-01-01,M,92,122,96,102,52,26,42,Inactive\n");
    CHECK(res.cohort.records.size() == 2);
    CHECK(res.dropped == 1);
    CHECK(res.cohort.records[0].visit_index == 1);
    CHECK(res.cohort.records[1].visit_index == 2);
}

TEST_CASE("missing waist is kept as absent")
{
    const auto res = read_text("A,2015-01-01,F,,120,90,100,50,25,40,Active\n"
                               "A,2016-01-01,F,91,121,95,101,51,25.5,41,Active\n"
                               "A,2017-01-01,F,92,122,96,102,52,26,42,0\n");
    REQUIRE(res.cohort.records.size() == 3);
    CHECK(res.dropped == 0);
    CHECK_FALSE(res.cohort.records[0].targets[kWaist].has_value());
    CHECK(res.cohort.records[1].targets[kWaist] == 91.0);
    // Female: the sex-derived column is 0; level strings and 0/1 both parse.
    CHECK(res.cohort.records[0].covariates[3] == 0.0);
    CHECK(res.cohort.records[0].covariates[2] == 1.0);
    CHECK(res.cohort.records[2].covariates[2] == 0.0);
}

TEST_CASE("duplicate visit key is rejected with the key in the message")
{
    const std::string msg = error_of("B7,2015-01-01,M,90,120,90,100,50,25,40,Active\n"
                                     "B7,2015-01-01,M,91,121,95,101,51,25.5,41,Active\n");
    CHECK(msg.find("B7") != std::string::npos);
    CHECK(msg.find("2015-01-01") != std::string::npos);
}

TEST_CASE("load errors")
{
    CHECK(error_of("A,2015-01-01,M,90,-120,90,100,50,25,40,Active\n").find("non-positive") != std::string::npos);
    CHECK(error_of("A,2015-01-01,M,90,120,90,100,50,25,40,Active,extra\n").find("line 2") != std::string::npos);
    CHECK(error_of("A,2015-13-01,M,90,120,90,100,50,25,40,Active\n").find("line 2") != std::string::npos);
    CHECK(error_of("A,2015-01-01,X,90,120,90,100,50,25,40,Active\n").find("sex") != std::string::npos);
    CHECK(error_of("A,2015-01-01,M,90,120,90,100,50,25,40,Sometimes\n").find("level") != std::string::npos);

    std::istringstream unknown("subject_id,visit_date,sex,waist_cm,pmax_mmhg,glucose_mgdl,triglycerides_mgdl,"
                               "hdl_mgdl,bmi,ferritin,physical_activity,shoe_size\n");
    CHECK_THROWS_WITH_AS(read_cohort(unknown, test::small_schema()), doctest::Contains("shoe_size"), ValidationError);

    std::istringstream inconsistent(std::string(kHeader) + "A,2015-01-01,M,90,120,90,100,50,25,40,1\n"
                                    + "A,2016-01-01,F,90,120,90,100,50,25,40,1\n");
    CHECK_THROWS_AS(read_cohort(inconsistent, test::small_schema()), ValidationError);
}

TEST_CASE("rows are ordered by subject and date")
{
    const auto res = read_text("B,2016-01-01,M,90,120,90,100,50,25,40,1\n"
                               "A,2017-01-01,F,90,120,90,100,50,25,40,1\n"
                               "B,2015-01-01,M,90,120,90,100,50,25,40,1\n"
                               "A,2014-06-30,F,90,120,90,100,50,25,40,1\n");
    const auto& r = res.cohort.records;
    REQUIRE(r.size() == 4);
    CHECK(r[0].subject_id == "A");
    CHECK(format_date(r[0].visit_date) == "2014-06-30");
    CHECK(r[1].visit_index == 2);
    CHECK(r[2].subject_id == "B");
    CHECK(format_date(r[2].visit_date) == "2015-01-01");
    CHECK(r[3].visit_index == 2);
}

TEST_CASE("next-visit files may omit targets")
{
    std::istringstream in("subject_id,visit_date,sex,bmi,ferritin,physical_activity\nA,2015-01-01,M,25,40,1\n");
    const auto res = read_cohort(in, test::small_schema(), ReadOptions{false});
    REQUIRE(res.cohort.records.size() == 1);
    CHECK_FALSE(res.cohort.records[0].targets[kGlucose].has_value());
}

TEST_CASE("write and read round trip")
{
    const auto res = read_text("A,2015-01-01,M,,120.5,90,100,50,25.25,40,Active\n"
                               "A,2016-01-01,M,91,121,95,101,51,,41,Inactive\n");
    std::ostringstream out;
    write_cohort(out, res.cohort);
    std::istringstream in(out.str());
    const auto back = read_cohort(in, test::small_schema());
    REQUIRE(back.cohort.records.size() == 2);
    for (std::size_t i = 0; i < 2; ++i)
    {
        CHECK(back.cohort.records[i].targets == res.cohort.records[i].targets);
        CHECK(back.cohort.records[i].covariates == res.cohort.records[i].covariates);
    }
}

TEST_CASE("schema validation")
{
    const auto s = test::small_schema();
    CHECK(s.size() == 5);
    CHECK(s[3].from_sex);
    CHECK(s.base_index(4) == 0);
    CHECK(s.group_counts() == std::array<std::size_t, 3>{2, 2, 1});
    CHECK(CovariateSchema::from_json(s.to_json()) == s);

    auto bad = [](const char* text) { return CovariateSchema::from_json(nlohmann::json::parse(text)); };
    CHECK_THROWS_AS(bad(R"([{"name": "x"}, {"name": "x"}])"), ValidationError);
    CHECK_THROWS_AS(bad(R"([{"name": "x", "kind": "interaction", "base": "y"}])"), ValidationError);
    CHECK_THROWS_AS(bad(R"([{"name": "x", "kind": "binary", "log_transformed": true}])"), ValidationError);
    CHECK_THROWS_AS(bad(R"([{"name": "glucose_mgdl"}])"), ValidationError);
    CHECK_THROWS_AS(bad(R"([{"name": "x", "group": "other"}])"), ValidationError);
}

TEST_CASE("log then sample-sd standardization of {1, e, e^2}")
{
    Cohort c;
    c.schema = CovariateSchema(std::vector<CovariateEntry>{{"ferritin", CovariateKind::numeric, true}});
    for (int i = 0; i < 3; ++i)
    {
        c.records.push_back(make_record("S" + std::to_string(i), 0, Sex::male, {std::exp(static_cast<double>(i))}));
    }
    vary_targets(c);
    const Cohort s = transform_and_standardize(c, {true, true, true});
    CHECK(*s.records[0].covariates[0] == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(*s.records[1].covariates[0] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(*s.records[2].covariates[0] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("zero training sd is an error")
{
    Cohort c;
    c.schema = CovariateSchema(std::vector<CovariateEntry>{{"bmi"}});
    for (int i = 0; i < 3; ++i)
    {
        c.records.push_back(make_record("S" + std::to_string(i), 0, Sex::male, {25.0}));
    }
    vary_targets(c);
    CHECK_THROWS_WITH_AS(transform_and_standardize(c, {true, true, true}), doctest::Contains("zero sd"),
                         ValidationError);
}

TEST_CASE("moments come from training rows only; a test row at the train mean maps to 0")
{
    Cohort c;
    c.schema = CovariateSchema(std::vector<CovariateEntry>{{"bmi"}});
    const std::vector<double> v = {20.0, 24.0, 28.0, 24.0, 500.0};
    for (std::size_t i = 0; i < v.size(); ++i)
    {
        auto r = make_record("S", static_cast<int>(i), Sex::male, {v[i]});
        c.records.push_back(r);
    }
    vary_targets(c);
    const Cohort s = transform_and_standardize(c, {true, true, true, false, false});
    CHECK(s.standardization->covariates[0]->mean == doctest::Approx(24.0));
    CHECK(s.standardization->covariates[0]->sd == doctest::Approx(4.0));
    CHECK(*s.records[3].covariates[0] == doctest::Approx(0.0));
    CHECK(*s.records[4].covariates[0] == doctest::Approx(119.0));
}

TEST_CASE("interactions multiply the standardized base by the raw male indicator")
{
    Cohort c;
    c.schema = test::small_schema();
    std::mt19937_64 gen(5);
    std::uniform_real_distribution<double> u(18.0, 35.0);
    for (int i = 0; i < 20; ++i)
    {
        auto r = make_record("S" + std::to_string(i), 0, i % 2 ? Sex::male : Sex::female,
                             {u(gen), 10.0 + u(gen), static_cast<double>(i % 3 == 0), i % 2 ? 1.0 : 0.0, std::nullopt});
        r.targets[kPmax] = 100.0 + u(gen);
        r.targets[kTriglycerides] = 50.0 + 3.0 * u(gen);
        r.targets[kGlucose] = 70.0 + u(gen);
        r.targets[kHdl] = 30.0 + u(gen);
        r.targets[kWaist] = 70.0 + u(gen);
        c.records.push_back(r);
    }
    const Cohort s = transform_and_standardize(c, std::vector<bool>(20, true));
    for (const auto& r : s.records)
    {
        CHECK(*r.covariates[4] == doctest::Approx(*r.covariates[0] * *r.covariates[3]));
        CHECK((*r.covariates[2] == 0.0 || *r.covariates[2] == 1.0));
    }
}

TEST_CASE("standardization properties over random cohorts")
{
    std::mt19937_64 gen(101);
    for (int rep = 0; rep < 30; ++rep)
    {
        std::lognormal_distribution<double> ln(std::uniform_real_distribution<double>(0.0, 5.0)(gen), 0.4);
        Cohort c;
        c.schema = test::small_schema();
        const int n = 10 + rep * 3;
        std::vector<bool> mask(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i)
        {
            auto r = make_record("S" + std::to_string(i / 3), i % 3, (i / 3) % 2 ? Sex::male : Sex::female,
                                 {ln(gen), ln(gen), static_cast<double>(i % 2), 0.0, std::nullopt});
            r.covariates[3] = r.sex == Sex::male ? 1.0 : 0.0;
            for (int k = 0; k < kNumTargets; ++k)
            {
                r.targets[k] = ln(gen);
            }
            if (i % 4 == 1)
            {
                r.targets[kWaist].reset();
            }
            c.records.push_back(r);
            mask[static_cast<std::size_t>(i)] = i % 5 != 0;
        }
        const Cohort s = transform_and_standardize(c, mask);
        const auto& st = *s.standardization;
        for (int k = 0; k < kNumTargets; ++k)
        {
            std::vector<double> col;
            for (std::size_t i = 0; i < s.records.size(); ++i)
            {
                const auto& v = s.records[i].targets[k];
                if (v)
                {
                    // Round trip back to clinical units.
                    CHECK(std::abs(st.unstandardize_target(k, *v) / *c.records[i].targets[k] - 1.0) < 1e-12);
                    if (mask[i])
                    {
                        col.push_back(*v);
                    }
                }
            }
            CHECK(std::abs(test::mean_of(col)) < 1e-10);
            CHECK(std::abs(std::sqrt(test::variance_of(col)) - 1.0) < 1e-10);
        }
        for (std::size_t p : {std::size_t{0}, std::size_t{1}})
        {
            std::vector<double> col;
            for (std::size_t i = 0; i < s.records.size(); ++i)
            {
                const double z = *s.records[i].covariates[p];
                const double raw = *c.records[i].covariates[p];
                CHECK(std::abs(standardize_covariate(s.schema, st, p, raw) - z) < 1e-12);
                const auto& m = *st.covariates[p];
                const double back = p == 1 ? std::exp(m.mean + m.sd * z) : m.mean + m.sd * z;
                CHECK(std::abs(back / raw - 1.0) < 1e-12);
                if (mask[i])
                {
                    col.push_back(z);
                }
            }
            CHECK(std::abs(test::mean_of(col)) < 1e-10);
            CHECK(std::abs(std::sqrt(test::variance_of(col)) - 1.0) < 1e-10);
        }
        CHECK(Standardization::from_json(st.to_json()).to_json() == st.to_json());
    }
}

TEST_CASE("split of a subject with four visits")
{
    Cohort c;
    c.schema = CovariateSchema(std::vector<CovariateEntry>{{"bmi"}});
    for (int v = 0; v < 4; ++v)
    {
        c.records.push_back(make_record("A", 365 * v, Sex::male, {25.0}));
    }
    const Split s = split_last_visit(c);
    CHECK(s.train.records.size() == 3);
    CHECK(s.test.records.size() == 1);
    CHECK(format_date(s.test.records[0].visit_date) == format_date(c.records[3].visit_date));
    CHECK(s.warnings.empty());
}

TEST_CASE("split errors and warnings")
{
    Cohort c;
    c.schema = CovariateSchema(std::vector<CovariateEntry>{{"bmi"}});
    c.records.push_back(make_record("A", 0, Sex::male, {25.0}));
    c.records.push_back(make_record("A", 100, Sex::male, {25.0}));
    c.records.push_back(make_record("B", 0, Sex::female, {25.0}));
    CHECK_THROWS_WITH_AS(split_last_visit(c), doctest::Contains("single visit"), ValidationError);
    c.records.push_back(make_record("B", 30, Sex::female, {25.0}));
    const Split s = split_last_visit(c);
    CHECK(s.warnings.size() == 2);
}

namespace {

// 2,228 subjects with the given visit total; the last visit has waist observed for 710 of them.
Cohort published_shape(int visits)
{
    Cohort c;
    c.schema = CovariateSchema(std::vector<CovariateEntry>{{"bmi"}});
    const int subjects = 2228;
    for (int i = 0; i < subjects; ++i)
    {
        const int count = i < visits - 5 * subjects ? 6 : 5;
        char id[16];
        std::snprintf(id, sizeof id, "D%05d", i);
        for (int v = 0; v < count; ++v)
        {
            auto r = make_record(id, 200 * v, Sex::male, {25.0});
            if (v == count - 1 && i >= 710)
            {
                r.targets[kWaist].reset();
            }
            c.records.push_back(r);
        }
    }
    return c;
}

}  // namespace

TEST_CASE("split of a cohort shaped like the published one")
{
    // The reported partition sizes, 9,338 train and 2,228 test, sum to 11,566.
    const Split s = split_last_visit(published_shape(11566));
    CHECK(s.train.records.size() == 9338);
    CHECK(s.test.records.size() == 2228);
    CHECK(s.complete_test_count() == 710);

    // The reported visit total of 11,556 leaves 9,328 training rows.
    CHECK(split_last_visit(published_shape(11556)).train.records.size() == 9328);
}

TEST_CASE("split properties over random cohorts")
{
    std::mt19937_64 gen(77);
    for (int rep = 0; rep < 40; ++rep)
    {
        Cohort c;
        c.schema = CovariateSchema(std::vector<CovariateEntry>{{"bmi"}});
        const int subjects = 1 + rep % 9;
        for (int i = 0; i < subjects; ++i)
        {
            const int n = 2 + static_cast<int>(gen() % 6);
            int day = 0;
            for (int v = 0; v < n; ++v)
            {
                day += 1 + static_cast<int>(gen() % 400);
                c.records.push_back(make_record("S" + std::to_string(i), day, Sex::female, {25.0}));
            }
        }
        const Split s = split_last_visit(c);
        CHECK(s.train.records.size() + s.test.records.size() == c.records.size());
        CHECK(s.test.records.size() == static_cast<std::size_t>(subjects));
        std::set<std::pair<std::string, int>> seen;
        for (const auto& r : s.train.records)
        {
            seen.insert({r.subject_id, static_cast<int>(r.visit_date.time_since_epoch().count())});
        }
        for (const auto& t : s.test.records)
        {
            CHECK(seen.insert({t.subject_id, static_cast<int>(t.visit_date.time_since_epoch().count())}).second);
            for (const auto& r : s.train.records)
            {
                if (r.subject_id == t.subject_id)
                {
                    CHECK(r.visit_date < t.visit_date);
                }
            }
        }
        CHECK(seen.size() == c.records.size());
    }
}

TEST_CASE("imputation leaves a complete cohort unchanged")
{
    Cohort c;
    c.schema = test::small_schema();
    for (int i = 0; i < 12; ++i)
    {
        c.records.push_back(make_record("S" + std::to_string(i / 3), i % 3, Sex::male,
                                        {20.0 + i, 30.0 + 2 * i, static_cast<double>(i % 2), 1.0, std::nullopt}));
    }
    const Cohort out = impute_covariates(c);
    for (std::size_t i = 0; i < c.records.size(); ++i)
    {
        CHECK(out.records[i].covariates == c.records[i].covariates);
    }
}

namespace {

// Subject-level signal plus visit noise; returns the cohort and the full truth.
std::pair<Cohort, std::vector<double>> mcar_cohort(std::uint64_t seed, double rate)
{
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> n01;
    std::uniform_real_distribution<double> u01;
    Cohort c;
    c.schema = CovariateSchema(std::vector<CovariateEntry>{{"bmi"}, {"age"}});
    std::vector<double> truth;
    for (int s = 0; s < 60; ++s)
    {
        const double level = 25.0 + 4.0 * n01(gen);
        const double age = 40.0 + 10.0 * n01(gen);
        for (int v = 0; v < 5; ++v)
        {
            const double bmi = level + 0.8 * n01(gen);
            truth.push_back(bmi);
            auto r = make_record("S" + std::to_string(s), 200 * v, s % 2 ? Sex::male : Sex::female,
                                 {bmi, age + 0.5 * v});
            if (u01(gen) < rate)
            {
                r.covariates[0].reset();
            }
            c.records.push_back(r);
        }
    }
    return {c, truth};
}

}  // namespace

TEST_CASE("PMM fills only with observed values and is deterministic")
{
    for (std::uint64_t seed = 1; seed <= 5; ++seed)
    {
        auto [c, truth] = mcar_cohort(seed, 0.2);
        std::set<double> support;
        for (const auto& r : c.records)
        {
            if (r.covariates[0])
            {
                support.insert(*r.covariates[0]);
            }
        }
        const Cohort a = impute_covariates(c, {10, seed, 5});
        const Cohort b = impute_covariates(c, {10, seed, 5});
        for (std::size_t i = 0; i < c.records.size(); ++i)
        {
            REQUIRE(a.records[i].covariates[0].has_value());
            CHECK(support.count(*a.records[i].covariates[0]) == 1);
            CHECK(a.records[i].covariates == b.records[i].covariates);
            if (c.records[i].covariates[0])
            {
                CHECK(a.records[i].covariates[0] == c.records[i].covariates[0]);
            }
        }
    }
}

TEST_CASE("PMM under MCAR beats global-mean imputation")
{
    double pmm_error = 0.0;
    double mean_error = 0.0;
    for (std::uint64_t seed = 1; seed <= 50; ++seed)
    {
        auto [c, truth] = mcar_cohort(1000 + seed, 0.2);
        double sum = 0.0;
        double cnt = 0.0;
        for (const auto& r : c.records)
        {
            if (r.covariates[0])
            {
                sum += *r.covariates[0];
                cnt += 1.0;
            }
        }
        const Cohort out = impute_covariates(c, {10, seed, 5});
        for (std::size_t i = 0; i < c.records.size(); ++i)
        {
            if (!c.records[i].covariates[0])
            {
                pmm_error += std::abs(*out.records[i].covariates[0] - truth[i]);
                mean_error += std::abs(sum / cnt - truth[i]);
            }
        }
    }
    CHECK(pmm_error <= mean_error);
}

TEST_CASE("imputation rejects mostly-missing covariates")
{
    auto [c, truth] = mcar_cohort(9, 0.0);
    for (std::size_t i = 0; i < c.records.size() / 2; ++i)
    {
        c.records[i].covariates[0].reset();
    }
    CHECK_THROWS_AS(impute_covariates(c), ValidationError);
}

TEST_CASE("dates")
{
    CHECK(format_date(parse_date("2020-02-29")) == "2020-02-29");
    CHECK_THROWS_AS(parse_date("2021-02-29"), ValidationError);
    CHECK_THROWS_AS(parse_date("2021/02/01"), ValidationError);
    CHECK((parse_date("2016-01-01") - parse_date("2015-01-01")).count() == 365);
}
