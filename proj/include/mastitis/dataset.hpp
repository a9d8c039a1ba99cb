#pragma once

// Herd records, feature engineering and horizon labelling.

#include "mastitis/core.hpp"
#include "mastitis/featcat.hpp"
#include "mastitis/stats.hpp"

#include <algorithm>
#include <array>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace mastitis {

struct MilkRecording {
    std::string cow_id;
    Date date;
    double yield_am = 0.0;
    double yield_pm = 0.0;
    std::optional<double> fat_pct;
    std::optional<double> protein_pct;
    std::optional<double> lactose_pct;
    std::optional<double> scc;
    std::optional<double> urea;

    double daily_yield() const { return clean_decimal(yield_am + yield_pm); }
    bool operator==(const MilkRecording&) const = default;
};

struct BodyRecording {
    Date date;
    std::optional<double> weight;
    std::optional<double> bcs;
    bool operator==(const BodyRecording&) const = default;
};

/// Sub-clinical episode: onset is the first day the cow counts as infected,
/// end the first day she no longer does.
struct InfectionEvent {
    Date onset;
    Date end;
    bool operator==(const InfectionEvent&) const = default;
};

struct CowRecord {
    std::string cow_id;
    std::string farm_id;
    int parity = 1;
    Date calving_date;
    double genetic_merit = 0.0;
    std::vector<BodyRecording> body;         // sorted by date
    std::vector<InfectionEvent> infections;  // sorted by onset
    bool operator==(const CowRecord&) const = default;
};

struct Herd {
    std::vector<CowRecord> cows;
    std::vector<MilkRecording> milk;
    bool operator==(const Herd&) const = default;
};

/// Throws std::invalid_argument naming the first broken record invariant.
inline void validate_herd(const Herd& herd) {
    std::unordered_map<std::string, int> ids;
    for (const auto& c : herd.cows) {
        if (!ids.emplace(c.cow_id, 0).second) throw std::invalid_argument("duplicate cow_id " + c.cow_id);
        if (c.parity < 1) throw std::invalid_argument("cow " + c.cow_id + ": parity must be positive");
        for (std::size_t i = 1; i < c.infections.size(); ++i)
            if (c.infections[i].onset < c.infections[i - 1].onset)
                throw std::invalid_argument("cow " + c.cow_id + ": infection events not sorted");
        for (const auto& b : c.body)
            if (b.bcs && (*b.bcs < 1.0 || *b.bcs > 5.0))
                throw std::invalid_argument("cow " + c.cow_id + ": bcs outside [1,5] on " + b.date.iso());
    }
    for (const auto& m : herd.milk) {
        if (m.yield_am < 0 || m.yield_pm < 0)
            throw std::invalid_argument("cow " + m.cow_id + ": negative yield on " + m.date.iso());
        for (auto pct : {m.fat_pct, m.protein_pct, m.lactose_pct})
            if (pct && (*pct < 0 || *pct > 15))
                throw std::invalid_argument("cow " + m.cow_id + ": percentage outside [0,15] on " + m.date.iso());
        if (m.scc && *m.scc < 0) throw std::invalid_argument("cow " + m.cow_id + ": negative scc on " + m.date.iso());
    }
}

struct FeatureVector {
    std::vector<double> values;  // catalog order
    std::string cow_id;
    Date as_of;
    std::size_t clamped = 0;  // entries pulled back inside catalog bounds
};

enum class Label { Healthy, Sick };

struct LabeledInstance {
    FeatureVector x;
    Label label = Label::Healthy;
    int horizon_days = 7;
    std::optional<Date> onset;  // the event inside the horizon, when Sick
};

/// Raised when a cow-day cannot be turned into a feature vector.
class FeatureError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Measured milk characteristics carrying a Current value and a Skew30 companion.
enum class MilkTrait { Yield, Fat, Protein, Lactose, Scc, Urea };
inline constexpr std::array<MilkTrait, 6> kMilkTraits{MilkTrait::Yield,   MilkTrait::Fat, MilkTrait::Protein,
                                                     MilkTrait::Lactose, MilkTrait::Scc, MilkTrait::Urea};

inline std::string_view trait_feature(MilkTrait t) {
    switch (t) {
        case MilkTrait::Yield: return "yield";
        case MilkTrait::Fat: return "fat_pct";
        case MilkTrait::Protein: return "protein_pct";
        case MilkTrait::Lactose: return "lactose_pct";
        case MilkTrait::Scc: return "scc";
        case MilkTrait::Urea: return "urea";
    }
    return "";
}

inline std::string_view trait_skew_feature(MilkTrait t) {
    switch (t) {
        case MilkTrait::Yield: return "yield_skew30";
        case MilkTrait::Fat: return "fat_skew30";
        case MilkTrait::Protein: return "protein_skew30";
        case MilkTrait::Lactose: return "lactose_skew30";
        case MilkTrait::Scc: return "scc_skew30";
        case MilkTrait::Urea: return "urea_skew30";
    }
    return "";
}

inline std::optional<double> trait_value(const MilkRecording& m, MilkTrait t) {
    switch (t) {
        case MilkTrait::Yield: return m.daily_yield();
        case MilkTrait::Fat: return m.fat_pct;
        case MilkTrait::Protein: return m.protein_pct;
        case MilkTrait::Lactose: return m.lactose_pct;
        case MilkTrait::Scc: return m.scc;
        case MilkTrait::Urea: return m.urea;
    }
    return std::nullopt;
}

inline constexpr int kHistoryWindowDays = 30;
inline constexpr int kLactationStageDays = 50;
inline constexpr int kPostEpisodeExclusionDays = 7;

inline int lactation_stage(long days_in_milk) { return int(std::clamp(days_in_milk, 0L, 300L) / kLactationStageDays); }

/// Herd-wide lookups needed by history-derived features and imputation.
/// Holds references into the herd it was built from, which must outlive it.
class HerdContext {
public:
    HerdContext() = default;

    explicit HerdContext(const Herd& herd) {
        for (std::size_t i = 0; i < herd.cows.size(); ++i) cow_index_.emplace(herd.cows[i].cow_id, i);
        cows_ = &herd.cows;
        milk_by_cow_.resize(herd.cows.size());
        for (const auto& m : herd.milk) {
            auto it = cow_index_.find(m.cow_id);
            if (it == cow_index_.end()) throw std::invalid_argument("milk recording for unknown cow " + m.cow_id);
            milk_by_cow_[it->second].push_back(m);
        }
        for (auto& v : milk_by_cow_)
            std::stable_sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.date < b.date; });

        std::array<std::vector<double>, 6> trait_pool;
        std::vector<double> weights, bcs;
        for (const auto& m : herd.milk)
            for (std::size_t t = 0; t < kMilkTraits.size(); ++t)
                if (auto v = trait_value(m, kMilkTraits[t])) trait_pool[t].push_back(*v);
        for (const auto& c : herd.cows)
            for (const auto& b : c.body) {
                if (b.weight) weights.push_back(*b.weight);
                if (b.bcs) bcs.push_back(*b.bcs);
            }
        for (std::size_t t = 0; t < kMilkTraits.size(); ++t)
            if (!trait_pool[t].empty()) trait_median_[t] = median(trait_pool[t]);
        if (!weights.empty()) weight_median_ = median(weights);
        if (!bcs.empty()) bcs_median_ = median(bcs);

        for (const auto& c : herd.cows) {
            auto& farm = farms_[c.farm_id];
            farm.calving_year_sizes[c.calving_date.year()] += 1;
            for (const auto& e : c.infections)
                farm.onsets.push_back({e.onset, lactation_stage(e.onset - c.calving_date), c.calving_date.year(), &c});
        }
    }

    std::optional<std::size_t> cow_index(std::string_view id) const {
        auto it = cow_index_.find(std::string(id));
        if (it == cow_index_.end()) return std::nullopt;
        return it->second;
    }
    const CowRecord& cow(std::size_t i) const { return (*cows_)[i]; }
    std::size_t cow_count() const { return cows_ ? cows_->size() : 0; }
    std::span<const MilkRecording> milk(std::size_t i) const { return milk_by_cow_[i]; }

    std::optional<double> trait_median(MilkTrait t) const { return trait_median_[std::size_t(t)]; }
    std::optional<double> weight_median() const { return weight_median_; }
    std::optional<double> bcs_median() const { return bcs_median_; }

    struct FarmOnset {
        Date onset;
        int stage;
        int calving_year;
        const CowRecord* cow;
    };
    struct FarmHistory {
        std::vector<FarmOnset> onsets;
        std::map<int, int> calving_year_sizes;
    };
    const FarmHistory* farm(const std::string& id) const {
        auto it = farms_.find(id);
        return it == farms_.end() ? nullptr : &it->second;
    }

private:
    const std::vector<CowRecord>* cows_ = nullptr;
    std::unordered_map<std::string, std::size_t> cow_index_;
    std::vector<std::vector<MilkRecording>> milk_by_cow_;
    std::array<std::optional<double>, 6> trait_median_{};
    std::optional<double> weight_median_, bcs_median_;
    std::map<std::string, FarmHistory> farms_;
};

namespace detail {

/// Most recent value within the 30-day window, else the median of everything
/// observed so far, else the population median.
template <class Observed>
double impute_current(const Observed& observed, Date as_of, std::optional<double> population, const char* what) {
    // observed: vector<pair<Date,double>> sorted by date, all <= as_of
    if (!observed.empty() && as_of - observed.back().first < kHistoryWindowDays) return observed.back().second;
    if (!observed.empty()) {
        std::vector<double> vals;
        vals.reserve(observed.size());
        for (const auto& [d, v] : observed) vals.push_back(v);
        return median(std::move(vals));
    }
    if (population) return *population;
    throw FeatureError(std::string("no observation available to impute ") + what);
}

}  // namespace detail

/// Feature vector for one cow-day. `milk` holds that cow's recordings sorted
/// by date; only recordings on or before `as_of` are used.
inline FeatureVector engineer_features(const CowRecord& cow, std::span<const MilkRecording> milk, Date as_of,
                                       const FeatureCatalog& catalog, const HerdContext& context = {}) {
    if (as_of < cow.calving_date)
        throw FeatureError("cow " + cow.cow_id + ": " + as_of.iso() + " is before calving date");
    const auto end = std::upper_bound(milk.begin(), milk.end(), as_of,
                                      [](Date d, const MilkRecording& m) { return d < m.date; });
    const Date window_start = as_of - (kHistoryWindowDays - 1);
    const auto begin_window = std::lower_bound(milk.begin(), end, window_start,
                                               [](const MilkRecording& m, Date d) { return m.date < d; });
    if (begin_window == end)
        throw FeatureError("cow " + cow.cow_id + ": no milk recording in the 30 days up to " + as_of.iso());

    std::unordered_map<std::string_view, double> named;
    std::vector<std::pair<Date, double>> observed;
    std::vector<double> window;
    for (auto trait : kMilkTraits) {
        observed.clear();
        window.clear();
        for (auto it = milk.begin(); it != end; ++it)
            if (auto v = trait_value(*it, trait)) {
                observed.emplace_back(it->date, *v);
                if (it->date >= window_start) window.push_back(*v);
            }
        if (catalog.find(trait_feature(trait)))
            named[trait_feature(trait)] =
                detail::impute_current(observed, as_of, context.trait_median(trait), trait_feature(trait).data());
        named[trait_skew_feature(trait)] = skewness(window);
    }

    std::vector<std::pair<Date, double>> weights, bcs;
    for (const auto& b : cow.body) {
        if (as_of < b.date) break;
        if (b.weight) weights.emplace_back(b.date, *b.weight);
        if (b.bcs) bcs.emplace_back(b.date, *b.bcs);
    }
    if (catalog.find("weight")) named["weight"] = detail::impute_current(weights, as_of, context.weight_median(), "weight");
    if (catalog.find("bcs")) named["bcs"] = detail::impute_current(bcs, as_of, context.bcs_median(), "bcs");

    const long dim = as_of - cow.calving_date;
    const int stage = lactation_stage(dim);
    named["genetic_merit"] = cow.genetic_merit;
    named["parity"] = cow.parity;
    named["days_since_calving"] = double(dim);
    named["calendar_month"] = double(as_of.month());

    double own = 0, own_stage = 0;
    for (const auto& e : cow.infections) {
        if (as_of < e.onset) break;
        own += 1;
        if (lactation_stage(e.onset - cow.calving_date) == stage) own_stage += 1;
    }
    named["infections_cow"] = own;
    named["infections_stage_cow"] = own_stage;

    double farm_stage = 0, prop = 0;
    if (const auto* farm = context.farm(cow.farm_id)) {
        std::vector<const CowRecord*> infected_same_year;
        for (const auto& o : farm->onsets) {
            if (as_of < o.onset) continue;
            if (o.stage == stage) farm_stage += 1;
            if (o.calving_year == cow.calving_date.year() &&
                std::find(infected_same_year.begin(), infected_same_year.end(), o.cow) == infected_same_year.end())
                infected_same_year.push_back(o.cow);
        }
        const auto it = farm->calving_year_sizes.find(cow.calving_date.year());
        if (it != farm->calving_year_sizes.end() && it->second > 0)
            prop = double(infected_same_year.size()) / double(it->second);
    } else {
        farm_stage = own_stage;
        prop = own > 0 ? 1.0 : 0.0;
    }
    named["infections_stage_farm"] = farm_stage;
    named["prop_infected_farm_year"] = prop;

    FeatureVector fv;
    fv.cow_id = cow.cow_id;
    fv.as_of = as_of;
    fv.values.reserve(catalog.size());
    for (const auto& spec : catalog.specs()) {
        auto it = named.find(spec.name);
        if (it == named.end()) throw FeatureError("no feature engineering rule for '" + spec.name + "'");
        double v = it->second;
        if (v < spec.lower_bound || v > spec.upper_bound) {
            v = std::clamp(v, spec.lower_bound, spec.upper_bound);
            ++fv.clamped;
        }
        fv.values.push_back(v);
    }
    return fv;
}

/// One instance per cow-day with at least a week of milk history and a fully
/// observed horizon. Sick iff an onset falls in (day, day + horizon]. Days inside
/// an episode, or within a week after it ends, are left out.
inline std::vector<LabeledInstance> label_instances(const Herd& herd, const HerdContext& context, int horizon_days,
                                                    const FeatureCatalog& catalog) {
    if (horizon_days < 1 || horizon_days > 7) throw std::invalid_argument("horizon_days must be in 1..7");
    if (herd.cows.empty() || herd.milk.empty()) throw std::invalid_argument("label_instances: empty herd");
    std::vector<LabeledInstance> out;
    for (std::size_t ci = 0; ci < context.cow_count(); ++ci) {
        const auto& cow = context.cow(ci);
        const auto milk = context.milk(ci);
        if (milk.empty()) continue;
        const Date first = std::max(milk.front().date, cow.calving_date);
        const Date last = milk.back().date;
        for (Date d = first + 6; d + horizon_days <= last; d = d + 1) {
            bool excluded = false;
            std::optional<Date> onset;
            for (const auto& e : cow.infections) {
                if (e.onset <= d && d < e.end + kPostEpisodeExclusionDays) excluded = true;
                if (d < e.onset && e.onset <= d + horizon_days && !onset) onset = e.onset;
            }
            if (excluded) continue;
            LabeledInstance inst;
            try {
                inst.x = engineer_features(cow, milk, d, catalog, context);
            } catch (const FeatureError&) {
                continue;  // gap in recordings longer than the history window
            }
            inst.label = onset ? Label::Sick : Label::Healthy;
            inst.horizon_days = horizon_days;
            inst.onset = onset;
            out.push_back(std::move(inst));
        }
    }
    if (out.empty()) throw std::invalid_argument("label_instances: no cow-day has sufficient history");
    return out;
}

inline std::vector<LabeledInstance> label_instances(const Herd& herd, int horizon_days, const FeatureCatalog& catalog) {
    const HerdContext context(herd);
    return label_instances(herd, context, horizon_days, catalog);
}

}  // namespace mastitis
