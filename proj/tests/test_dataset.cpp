#include "helpers.hpp"
#include "mastitis/dataset.hpp"
#include "mastitis/herd_csv.hpp"
#include "mastitis/oracles.hpp"
#include "mastitis/synth.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <regex>

using namespace mastitis;
using testing_support::simple_herd;
using testing_support::slurp;
using testing_support::TempDir;

namespace {

double feature(const FeatureVector& x, const char* name) { return x.values[default_catalog().index_of(name)]; }

FeatureVector vector_on(const Herd& h, Date d) {
    const HerdContext ctx(h);
    return engineer_features(h.cows[0], ctx.milk(0), d, default_catalog(), ctx);
}

void replace_in_file(const std::filesystem::path& p, const std::string& from, const std::string& to) {
    auto s = slurp(p);
    s = std::regex_replace(s, std::regex(from), to, std::regex_constants::format_first_only);
    std::ofstream(p, std::ios::binary) << s;
}

}  // namespace

TEST(EngineerFeatures, ConstantYieldHasZeroSkew) {
    const auto h = simple_herd(40);
    const auto x = vector_on(h, h.milk.back().date);
    EXPECT_EQ(feature(x, "yield"), 20.0);
    EXPECT_EQ(feature(x, "yield_skew30"), 0.0);
    EXPECT_EQ(x.values.size(), default_catalog().size());
}

TEST(EngineerFeatures, SkewMatchesDirectFormulaOracle) {
    const std::vector<double> series{11, 12, 13, 14, 60};
    const auto h = simple_herd(5, Date(2020, 1, 1), [&](int d) { return series[std::size_t(d)]; });
    const auto x = vector_on(h, Date(2020, 1, 5));
    EXPECT_NEAR(feature(x, "yield_skew30"), oracle::skewness(series), 1e-12);
    EXPECT_EQ(feature(x, "yield"), 60.0);
}

TEST(EngineerFeatures, SkewWindowIsThirtyDays) {
    // Day 0 is a spike; 30 days later it has left the window.
    const auto h = simple_herd(31, Date(2020, 1, 1), [](int d) { return d == 0 ? 90.0 : 20.0 + (d % 3); });
    std::vector<double> in_window;
    for (int d = 1; d <= 30; ++d) in_window.push_back(20.0 + (d % 3));
    EXPECT_NEAR(feature(vector_on(h, Date(2020, 1, 31)), "yield_skew30"), oracle::skewness(in_window), 1e-12);
}

TEST(EngineerFeatures, DaysSinceCalving) {
    auto h = simple_herd(60);
    h.cows[0].calving_date = Date(2020, 1, 1);
    EXPECT_EQ(feature(vector_on(h, Date(2020, 2, 10)), "days_since_calving"), 40.0);
}

TEST(EngineerFeatures, CarriesSparseValuesForward) {
    const auto h = simple_herd(10);  // components on days 0 and 7
    const auto x = vector_on(h, Date(2020, 1, 10));
    EXPECT_EQ(feature(x, "scc"), 100.0);
    EXPECT_EQ(feature(x, "fat_pct"), 4.0);
    EXPECT_EQ(feature(x, "bcs"), 3.0);
    EXPECT_EQ(feature(x, "weight"), 600.0);
}

TEST(EngineerFeatures, Errors) {
    const auto h = simple_herd(10);
    EXPECT_THROW(vector_on(h, Date(2019, 1, 1)), FeatureError);  // before calving
    EXPECT_THROW(vector_on(h, Date(2020, 3, 1)), FeatureError);  // nothing in the last 30 days
}

TEST(EngineerFeatures, ClampsAndCounts) {
    auto h = simple_herd(10);
    h.cows[0].body[0].weight = 5000;
    const auto x = vector_on(h, Date(2020, 1, 10));
    EXPECT_EQ(feature(x, "weight"), default_catalog().spec("weight").upper_bound);
    EXPECT_EQ(x.clamped, 1u);
}

TEST(LabelInstances, InfectionInsideHorizon) {
    auto h = simple_herd(60);
    const Date d = Date(2020, 1, 20);
    h.cows[0].infections.push_back({d + 3, d + 10});
    auto find_day = [&](const std::vector<LabeledInstance>& v) {
        for (const auto& i : v)
            if (i.x.as_of == d) return i;
        throw std::runtime_error("day missing");
    };
    const auto seven = find_day(label_instances(h, 7, default_catalog()));
    EXPECT_EQ(seven.label, Label::Sick);
    EXPECT_EQ(seven.onset, d + 3);
    EXPECT_EQ(find_day(label_instances(h, 2, default_catalog())).label, Label::Healthy);
}

TEST(LabelInstances, NoInfectionsAllHealthy) {
    const auto v = label_instances(simple_herd(60), 7, default_catalog());
    ASSERT_FALSE(v.empty());
    for (const auto& i : v) EXPECT_EQ(i.label, Label::Healthy);
}

TEST(LabelInstances, EpisodeDaysExcluded) {
    auto h = simple_herd(80);
    const Date onset = Date(2020, 2, 1), end = Date(2020, 2, 10);
    h.cows[0].infections.push_back({onset, end});
    for (const auto& i : label_instances(h, 7, default_catalog()))
        EXPECT_FALSE(i.x.as_of >= onset && i.x.as_of < end + kPostEpisodeExclusionDays) << i.x.as_of.iso();
}

TEST(LabelInstances, LabelsMonotoneInHorizon) {
    SynthConfig cfg;
    cfg.n_cows = 30;
    cfg.n_days = 200;
    const auto herd = generate_herd(cfg, 2);
    const HerdContext ctx(herd);
    std::map<std::pair<std::string, long>, Label> previous;
    for (int h = 1; h <= 7; ++h) {
        std::map<std::pair<std::string, long>, Label> now;
        for (const auto& i : label_instances(herd, ctx, h, default_catalog()))
            now[{i.x.cow_id, i.x.as_of.days_since_epoch()}] = i.label;
        for (const auto& [key, label] : previous)
            if (label == Label::Sick && now.count(key)) {
                EXPECT_EQ(now[key], Label::Sick);
            }
        previous = std::move(now);
    }
}

TEST(LabelInstances, Errors) {
    EXPECT_THROW(label_instances(Herd{}, 7, default_catalog()), std::invalid_argument);
    EXPECT_THROW(label_instances(simple_herd(60), 0, default_catalog()), std::invalid_argument);
    EXPECT_THROW(label_instances(simple_herd(60), 8, default_catalog()), std::invalid_argument);
}

TEST(Episodes, OnsetIsFirstOfTwoHighReadings) {
    const Date d0 = Date(2020, 1, 1);
    const std::vector<std::pair<Date, double>> scc{
        {d0, 120}, {d0 + 7, 250}, {d0 + 14, 260}, {d0 + 21, 180}, {d0 + 28, 230}, {d0 + 35, 150}};
    const auto e = detail::detect_episodes(scc, d0 + 60);
    ASSERT_EQ(e.size(), 1u);
    EXPECT_EQ(e[0].onset, d0 + 7);
    EXPECT_EQ(e[0].end, d0 + 21);
}

TEST(Generator, Deterministic) {
    SynthConfig cfg;
    cfg.n_cows = 20;
    cfg.n_days = 120;
    EXPECT_EQ(generate_herd(cfg, 1), generate_herd(cfg, 1));
    EXPECT_NE(generate_herd(cfg, 1), generate_herd(cfg, 2));
}

TEST(Generator, ZeroInfectionRateMeansNoEvents) {
    SynthConfig cfg;
    cfg.n_cows = 40;
    cfg.n_days = 200;
    cfg.infection_rate = 0;
    for (const auto& c : generate_herd(cfg, 1).cows) EXPECT_TRUE(c.infections.empty()) << c.cow_id;
}

TEST(Generator, RejectsShortRuns) {
    SynthConfig cfg;
    cfg.n_days = 10;
    EXPECT_THROW(generate_herd(cfg, 1), std::invalid_argument);
    EXPECT_THROW(synth_config_from_json({{"n_days", 10}}), std::invalid_argument);
    EXPECT_THROW(synth_config_from_json({{"n_dayz", 100}}), std::invalid_argument);
}

TEST(Generator, RecordsAreValid) {
    SynthConfig cfg;
    cfg.n_cows = 30;
    EXPECT_NO_THROW(validate_herd(generate_herd(cfg, 4)));
}

TEST(Generator, PinnedHerdPositiveFraction) {
    const auto herd = generate_herd(SynthConfig{}, 1);
    const auto v = label_instances(herd, 7, default_catalog());
    std::size_t pos = 0;
    for (const auto& i : v) pos += i.label == Label::Sick;
    const double frac = double(pos) / double(v.size());
    EXPECT_GE(frac, 0.005);
    EXPECT_LE(frac, 0.10);
}

TEST(HerdCsv, RoundTrip) {
    TempDir dir("csv");
    SynthConfig cfg;
    cfg.n_cows = 25;
    cfg.n_days = 150;
    const auto herd = generate_herd(cfg, 1);
    save_csv(herd, dir.path());
    for (auto f : {"cows.csv", "milk.csv", "events.csv", "body.csv"}) EXPECT_TRUE(std::filesystem::exists(dir / f));
    EXPECT_EQ(load_csv(dir.path()), herd);
}

TEST(HerdCsv, MissingColumnNamed) {
    TempDir dir("csv");
    save_csv(simple_herd(20), dir.path());
    replace_in_file(dir / "milk.csv", "cow_id,date,", "cow_id,day,");
    try {
        load_csv(dir.path());
        FAIL();
    } catch (const CsvSchemaError& e) {
        EXPECT_EQ(e.column(), "date");
    }
}

TEST(HerdCsv, NegativeYieldReportsRow) {
    TempDir dir("csv");
    save_csv(simple_herd(20), dir.path());
    // Third data row.
    replace_in_file(dir / "milk.csv", "C1,2020-01-03,10,", "C1,2020-01-03,-10,");
    try {
        load_csv(dir.path());
        FAIL();
    } catch (const CsvSchemaError& e) {
        EXPECT_EQ(e.row(), 3u);
        EXPECT_EQ(e.column(), "yield_am");
    }
}
