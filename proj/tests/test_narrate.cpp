#include "helpers.hpp"
#include "mastitis/narrate.hpp"

#include <gtest/gtest.h>

using namespace mastitis;
using testing_support::fixture;

namespace {

CounterfactualResult found(std::initializer_list<std::pair<const char*, double>> changes,
                           const DistanceWeights& weights) {
    const auto c = default_catalog();
    CounterfactualResult r;
    r.status = CfxStatus::Found;
    for (const auto& [name, d] : changes) {
        const auto j = c.index_of(name);
        r.delta[j] = d;
        r.contribution[j] = weights[j] * std::abs(d);
    }
    return r;
}

DistanceWeights weights_with(std::initializer_list<std::pair<const char*, double>> w) {
    const auto c = default_catalog();
    DistanceWeights out;
    out.w.assign(c.size(), 1.0);
    out.mad.assign(c.size(), 1.0);
    for (const auto& [name, v] : w) out.w[c.index_of(name)] = v;
    return out;
}

}  // namespace

TEST(Narrate, WorkedExampleSentence) {
    const auto r = found({{"yield", 1.5}}, weights_with({}));
    EXPECT_EQ(render("42", r, default_catalog(), default_style(NumberStyle::Words)), fixture("narration_yield.txt"));
}

TEST(Narrate, IntroductionSentence) { EXPECT_EQ(render_intro_example(), fixture("narration_intro.txt")); }

TEST(Narrate, TwoClausesOrderedByContribution) {
    // bcs MAD 0.25 and scc MAD 25: the scc clause carries 2.0, bcs 1.0.
    const auto w = weights_with({{"scc", 1.0 / 25}, {"bcs", 4.0}});
    const auto r = found({{"scc", 50}, {"bcs", -0.25}}, w);
    EXPECT_EQ(render("7", r, default_catalog(), default_style(NumberStyle::Digits)), fixture("narration_cow7.txt"));
}

TEST(Narrate, ContributionOrderNotCatalogOrder) {
    const auto w = weights_with({{"scc", 1.0 / 100}, {"bcs", 4.0}});
    const auto s = render("7", found({{"scc", 50}, {"bcs", -0.25}}, w), default_catalog(), default_style());
    EXPECT_LT(s.find("Body condition score"), s.find("Somatic cell count"));
}

TEST(Narrate, ThreeClausesUseCommaThenAnd) {
    const auto s = render("3", found({{"yield", 2}, {"weight", 10}, {"bcs", 0.25}}, weights_with({{"yield", 3}, {"weight", 0.2}})),
                          default_catalog(), default_style());
    EXPECT_EQ(s,
              "If cow #3 had an increase of 2 units with respect to Yield, an increase of 10 units with respect to "
              "Weight and an increase of 0.25 units with respect to Body condition score she would be likely to "
              "succumb to mastitis.");
}

TEST(Narrate, SingleClauseHasNoConjunction) {
    const auto s = render("1", found({{"weight", -20}}, weights_with({})), default_catalog(), default_style());
    EXPECT_EQ(s.find(" and "), std::string::npos);
    EXPECT_NE(s.find("a decrease of 20 units with respect to Weight"), std::string::npos);
}

TEST(Narrate, AmountsAreTheQuantisedDeltasVerbatim) {
    const auto s = render("1", found({{"fat_pct", 0.15}}, weights_with({})), default_catalog(), default_style());
    EXPECT_NE(s.find(" 0.15 units"), std::string::npos);
}

TEST(Narrate, NotFoundRefused) {
    CounterfactualResult r;
    EXPECT_THROW(render("1", r, default_catalog(), default_style()), NarrationError);
    EXPECT_THROW(render_absolute("1", {}, default_style()), NarrationError);
}

TEST(Narrate, SingleAbsoluteFeatureHasNoConjunction) {
    const auto s = render_absolute("42", {{"scc", 150}}, default_style());
    EXPECT_EQ(s, "If cow #42 had a somatic cell count of 150 she would be likely to succumb to mastitis.");
}

TEST(Narrate, StyleCoversEveryCatalogFeature) {
    EXPECT_NO_THROW(default_style().validate(default_catalog()));
    auto style = default_style();
    style.display_names.erase("bcs");
    EXPECT_THROW(style.validate(default_catalog()), std::invalid_argument);
}

TEST(NumberText, WordsForSmallIntegersAndHalves) {
    EXPECT_EQ(number_text(1.5, NumberStyle::Words), "one and a half");
    EXPECT_EQ(number_text(0.5, NumberStyle::Words), "a half");
    EXPECT_EQ(number_text(20, NumberStyle::Words), "twenty");
    EXPECT_EQ(number_text(0.25, NumberStyle::Words), "0.25");
    EXPECT_EQ(number_text(21, NumberStyle::Words), "21");
    EXPECT_EQ(number_text(1.5, NumberStyle::Digits), "1.5");
}
