#pragma once

// Counterfactual results as one plain-English sentence for the farmer:
//
//   If cow #42 had an increase of one and a half units with respect to Yield
//   she would be likely to succumb to mastitis.
//
// Clauses are ordered by their share of the weighted distance, largest first.

#include "mastitis/cfx.hpp"
#include "mastitis/core.hpp"
#include "mastitis/featcat.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace mastitis {

enum class NumberStyle { Words, Digits };

struct NarrationStyle {
    NumberStyle number_style = NumberStyle::Digits;
    std::map<std::string, std::string> display_names;
    std::map<std::string, std::string> value_suffix;  // absolute phrasing only, e.g. "%"
    std::string increase = "an increase";
    std::string decrease = "a decrease";

    const std::string& display_name(const std::string& feature) const {
        auto it = display_names.find(feature);
        if (it == display_names.end()) throw std::invalid_argument("no display name for feature '" + feature + "'");
        return it->second;
    }

    void validate(const FeatureCatalog& catalog) const {
        for (const auto& s : catalog.specs()) display_name(s.name);
    }
};

class NarrationError : public std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

inline NarrationStyle default_style(NumberStyle numbers = NumberStyle::Digits) {
    NarrationStyle s;
    s.number_style = numbers;
    s.display_names = {
        {"scc", "Somatic cell count"},
        {"yield", "Yield"},
        {"fat_pct", "Fat percentage"},
        {"protein_pct", "Protein percentage"},
        {"lactose_pct", "Lactose percentage"},
        {"urea", "Urea"},
        {"bcs", "Body condition score"},
        {"weight", "Weight"},
        {"genetic_merit", "Genetic merit"},
        {"parity", "Parity"},
        {"days_since_calving", "Days since calving"},
        {"calendar_month", "Calendar month"},
        {"infections_stage_farm", "Infections at this lactation stage on the farm"},
        {"infections_stage_cow", "Infections at this lactation stage for the cow"},
        {"infections_cow", "Infections for the cow"},
        {"prop_infected_farm_year", "Proportion infected for the farm and calving year"},
        {"yield_skew30", "Yield skewness over 30 days"},
        {"fat_skew30", "Fat skewness over 30 days"},
        {"protein_skew30", "Protein skewness over 30 days"},
        {"lactose_skew30", "Lactose skewness over 30 days"},
        {"scc_skew30", "Somatic cell count skewness over 30 days"},
        {"urea_skew30", "Urea skewness over 30 days"},
    };
    s.value_suffix = {{"fat_pct", "%"}, {"protein_pct", "%"}, {"lactose_pct", "%"}};
    return s;
}

/// Words for integers up to 20 and their halves; digits otherwise.
inline std::string number_text(double v, NumberStyle style) {
    static const std::array<const char*, 21> words{
        "zero",    "one",     "two",       "three",    "four",     "five",    "six",
        "seven",   "eight",   "nine",      "ten",      "eleven",   "twelve",  "thirteen",
        "fourteen", "fifteen", "sixteen",  "seventeen", "eighteen", "nineteen", "twenty"};
    if (style == NumberStyle::Words && v >= 0 && v <= 20) {
        const double whole = std::floor(v);
        const double frac = v - whole;
        if (frac == 0.0) return words[std::size_t(whole)];
        if (frac == 0.5 && whole < 20) return whole == 0 ? "a half" : std::string(words[std::size_t(whole)]) + " and a half";
    }
    return format_double(v);
}

namespace detail {

inline std::string join_clauses(const std::vector<std::string>& clauses) {
    std::string out;
    for (std::size_t i = 0; i < clauses.size(); ++i) {
        if (i > 0) out += i + 1 == clauses.size() ? " and " : ", ";
        out += clauses[i];
    }
    return out;
}

inline std::string sentence(const std::string& cow_id, const std::vector<std::string>& clauses) {
    return "If cow #" + cow_id + " had " + join_clauses(clauses) + " she would be likely to succumb to mastitis.";
}

inline std::string lower_first(std::string s) {
    if (!s.empty() && s[0] >= 'A' && s[0] <= 'Z') s[0] = char(s[0] - 'A' + 'a');
    return s;
}

}  // namespace detail

inline std::string render(const std::string& cow_id, const CounterfactualResult& result, const FeatureCatalog& catalog,
                          const NarrationStyle& style) {
    if (result.status != CfxStatus::Found) throw NarrationError("no counterfactual was found, nothing to narrate");
    if (result.delta.empty()) throw NarrationError("counterfactual has no changes");

    std::vector<std::size_t> order;
    for (const auto& [j, d] : result.delta) order.push_back(j);
    auto share = [&](std::size_t j) {
        auto it = result.contribution.find(j);
        return it == result.contribution.end() ? 0.0 : it->second;
    };
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return share(a) > share(b); });

    std::vector<std::string> clauses;
    for (auto j : order) {
        const double d = result.delta.at(j);
        clauses.push_back((d >= 0 ? style.increase : style.decrease) + " of " + number_text(std::abs(d), style.number_style) +
                          " units with respect to " + style.display_name(catalog[j].name));
    }
    return detail::sentence(cow_id, clauses);
}

/// Absolute phrasing: "If cow #42 had a somatic cell count of 150 ...".
/// Features appear in the order given.
inline std::string render_absolute(const std::string& cow_id, const std::vector<std::pair<std::string, double>>& values,
                                   const NarrationStyle& style) {
    if (values.empty()) throw NarrationError("nothing to narrate");
    std::vector<std::string> clauses;
    for (const auto& [name, v] : values) {
        const auto noun = detail::lower_first(style.display_name(name));
        const bool vowel = std::string("aeio").find(noun.front()) != std::string::npos;
        auto suffix = style.value_suffix.find(name);
        clauses.push_back(std::string(vowel ? "an " : "a ") + noun + " of " + number_text(v, style.number_style) +
                          (suffix == style.value_suffix.end() ? "" : suffix->second));
    }
    return detail::sentence(cow_id, clauses);
}

inline std::string render_intro_example() {
    return render_absolute("42", {{"scc", 150.0}, {"protein_pct", 5.0}}, default_style(NumberStyle::Digits));
}

}  // namespace mastitis
