#include "helpers.hpp"
#include "mastitis/evalkit.hpp"

#include <gtest/gtest.h>

using namespace mastitis;
using testing_support::slurp;
using testing_support::TempDir;

namespace {

/// Feature 0 carries the answer; feature 1 is noise for sampling tests.
struct ReadsFeatureZero {
    double score(std::span<const double> x) const { return x[0]; }
};

struct Constant {
    double value;
    double score(std::span<const double>) const { return value; }
};

LabeledInstance instance(std::string cow, Date as_of, double f0, std::optional<Date> onset) {
    LabeledInstance i;
    i.x.cow_id = std::move(cow);
    i.x.as_of = as_of;
    i.x.values = {f0, 0.0};
    i.label = onset ? Label::Sick : Label::Healthy;
    i.onset = onset;
    return i;
}

/// `n` infections, each with the seven pre-onset days, plus healthy days.
/// `flagged(k, days_out)` decides whether that day scores as sick.
std::vector<LabeledInstance> infections(int n, const std::function<bool(int, int)>& flagged) {
    std::vector<LabeledInstance> v;
    const Date base(2021, 3, 1);
    for (int k = 0; k < n; ++k) {
        const Date onset = base + 20 * k;
        const auto cow = "C" + std::to_string(k);
        for (int out = 1; out <= 7; ++out) v.push_back(instance(cow, onset - out, flagged(k, out) ? 0.9 : 0.1, onset));
        v.push_back(instance(cow, onset - 15, 0.05, std::nullopt));
    }
    return v;
}

FeatureCatalog two_features() {
    FeatureSpec a;
    a.name = "risk";
    a.actionable = true;
    a.min_change = 0.05;
    a.lower_bound = 0;
    a.upper_bound = 1;
    FeatureSpec b = a;
    b.name = "noise";
    return FeatureCatalog({a, b}, "t");
}

}  // namespace

TEST(HorizonRecall, PerfectModelFindsEverything) {
    const auto v = infections(5, [](int, int) { return true; });
    const auto curve = horizon_recall(ReadsFeatureZero{}, v);
    ASSERT_EQ(curve.points.size(), 7u);
    for (int h = 1; h <= 7; ++h) {
        EXPECT_EQ(curve.points[std::size_t(h - 1)].horizon_days, h);
        EXPECT_EQ(curve.points[std::size_t(h - 1)].proportion_found, 1.0);
        EXPECT_EQ(curve.points[std::size_t(h - 1)].n_infections, 5u);
    }
}

TEST(HorizonRecall, ConstantHealthyFindsNothing) {
    const auto v = infections(5, [](int, int) { return true; });
    for (const auto& p : horizon_recall(Constant{0.1}, v).points) EXPECT_EQ(p.proportion_found, 0.0);
}

TEST(HorizonRecall, CountsAnyDayAtLeastHOut) {
    // Infection k is first flagged k+1 days before onset (k = 0..6) and stays flagged after.
    const auto v = infections(7, [](int k, int out) { return out <= k + 1; });
    const auto curve = horizon_recall(ReadsFeatureZero{}, v);
    for (int h = 1; h <= 7; ++h) EXPECT_DOUBLE_EQ(curve.points[std::size_t(h - 1)].proportion_found, double(8 - h) / 7);
}

TEST(HorizonRecall, NonIncreasingForArbitraryScores) {
    Rng rng(3);
    const auto v = infections(40, [&](int, int) { return rng.bernoulli(0.3); });
    const auto curve = horizon_recall(ReadsFeatureZero{}, v);
    for (std::size_t i = 1; i < curve.points.size(); ++i)
        EXPECT_LE(curve.points[i].proportion_found, curve.points[i - 1].proportion_found);
}

TEST(HorizonRecall, MissingHorizonRejected) {
    auto v = infections(2, [](int, int) { return true; });
    std::erase_if(v, [](const LabeledInstance& i) { return i.onset && *i.onset - i.x.as_of == 6; });
    EXPECT_THROW(horizon_recall(ReadsFeatureZero{}, v), std::invalid_argument);
}

TEST(Auc, HandCases) {
    EXPECT_EQ(auc(std::vector<double>{0.1, 0.4, 0.35, 0.8}, std::vector<int>{0, 0, 1, 1}), 0.75);
    EXPECT_EQ(auc(std::vector<double>{0.5, 0.5}, std::vector<int>{0, 1}), 0.5);
    EXPECT_EQ(auc(std::vector<double>{0.1, 0.9}, std::vector<int>{0, 1}), 1.0);
    EXPECT_THROW(auc(std::vector<double>{0.1}, std::vector<int>{1}), std::invalid_argument);
}

TEST(Sampling, OnlyConfidentlyHealthy) {
    std::vector<LabeledInstance> v;
    for (int i = 0; i <= 100; ++i) v.push_back(instance("C", Date(2021, 1, 1) + i, i / 100.0, std::nullopt));
    const auto s = sample_high_confidence_healthy(ReadsFeatureZero{}, v, 0.8, 1000, 1);
    EXPECT_EQ(s.size(), 21u);  // 0.00 .. 0.20 inclusive
    for (const auto& i : s) EXPECT_LE(i.x.values[0], 0.2);
}

TEST(Sampling, SeededUniformWithoutReplacement) {
    std::vector<LabeledInstance> v;
    for (int i = 0; i < 500; ++i) v.push_back(instance("C" + std::to_string(i), Date(2021, 1, 1), 0.01, std::nullopt));
    const auto a = sample_high_confidence_healthy(ReadsFeatureZero{}, v, 0.8, 50, 9);
    const auto b = sample_high_confidence_healthy(ReadsFeatureZero{}, v, 0.8, 50, 9);
    const auto c = sample_high_confidence_healthy(ReadsFeatureZero{}, v, 0.8, 50, 10);
    ASSERT_EQ(a.size(), 50u);
    std::set<std::string> ids;
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].x.cow_id, b[i].x.cow_id);
        ids.insert(a[i].x.cow_id);
    }
    EXPECT_EQ(ids.size(), 50u);
    bool differs = false;
    for (std::size_t i = 0; i < a.size(); ++i) differs = differs || a[i].x.cow_id != c[i].x.cow_id;
    EXPECT_TRUE(differs);
}

TEST(Sampling, ConfidenceRange) {
    std::vector<LabeledInstance> v{instance("C", Date(2021, 1, 1), 0.1, std::nullopt)};
    EXPECT_THROW(sample_high_confidence_healthy(ReadsFeatureZero{}, v, 0.5, 1, 1), std::invalid_argument);
    EXPECT_THROW(sample_high_confidence_healthy(ReadsFeatureZero{}, v, 1.0, 1, 1), std::invalid_argument);
}

TEST(ScoreShift, PerfectFlipToy) {
    const auto catalog = two_features();
    DistanceWeights w;
    w.w = {1, 1};
    w.mad = {1, 1};
    std::vector<FeatureVector> xs;
    for (double r : {0.0, 0.1, 0.2}) xs.push_back(instance("C", Date(2021, 1, 1), r, std::nullopt).x);
    const auto s = score_shift_summary(ReadsFeatureZero{}, xs, CfxConfig{}, catalog, w);
    EXPECT_EQ(s.flip_rate, 1.0);
    ASSERT_EQ(s.pairs.size(), 3u);
    for (const auto& [before, after] : s.pairs) {
        EXPECT_LE(before, 0.2);
        EXPECT_GE(after, 0.55);
    }
    ASSERT_TRUE(s.counterfactual.has_value());
    EXPECT_GE(s.counterfactual->min, 0.55);
}

TEST(ScoreShift, UnflippableModel) {
    const auto catalog = two_features();
    DistanceWeights w;
    w.w = {1, 1};
    w.mad = {1, 1};
    std::vector<FeatureVector> xs{instance("C", Date(2021, 1, 1), 0.1, std::nullopt).x};
    const auto s = score_shift_summary(Constant{0.1}, xs, CfxConfig{}, catalog, w);
    EXPECT_EQ(s.flip_rate, 0.0);
    EXPECT_TRUE(s.pairs.empty());
    EXPECT_FALSE(s.original.has_value());
}

TEST(Quantiles, Interpolated) {
    const auto q = quantiles({4, 1, 3, 2, 5});
    EXPECT_EQ(q, (Quantiles{1, 2, 3, 4, 5}));
    EXPECT_EQ(quantiles({0, 1}).median, 0.5);
}

TEST(Report, RoundTrip) {
    TempDir dir("report");
    HorizonCurve curve;
    for (int h = 1; h <= 7; ++h) curve.points.push_back({h, 1.0 / (h + 2), 13});
    ScoreShiftSummary s;
    s.n_samples = 3;
    s.pairs = {{0.01, 0.61}, {0.123456789, 0.7}};
    summarise(s);
    export_report(curve, s, dir.path());
    EXPECT_EQ(read_horizon_curve(dir / "horizon_curve.csv"), curve);
    EXPECT_EQ(read_score_pairs(dir / "score_shift.csv"), s.pairs);
    const auto j = nlohmann::json::parse(slurp(dir / "summary.json"));
    EXPECT_DOUBLE_EQ(j["flip_rate"].get<double>(), 2.0 / 3);
    EXPECT_EQ(j["quantiles"]["counterfactual"]["max"], 0.7);
}

TEST(Report, EmptySummaryHasHeadersOnly) {
    TempDir dir("report");
    ScoreShiftSummary s;
    summarise(s);
    export_report(HorizonCurve{}, s, dir.path());
    EXPECT_EQ(slurp(dir / "score_shift.csv"), "score_original,score_cf\n");
    EXPECT_EQ(slurp(dir / "horizon_curve.csv"), "horizon,proportion,n\n");
    EXPECT_TRUE(nlohmann::json::parse(slurp(dir / "summary.json"))["quantiles"]["original"].is_null());
}

TEST(Report, SevenPointCurveHasSevenRows) {
    TempDir dir("report");
    HorizonCurve curve;
    for (int h = 1; h <= 7; ++h) curve.points.push_back({h, 0.5, 2});
    export_report(curve, ScoreShiftSummary{}, dir.path());
    const auto text = slurp(dir / "horizon_curve.csv");
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 8);
}
