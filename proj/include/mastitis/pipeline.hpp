#pragma once

// Glue shared by the command line and the service: temporal splits, the
// latest feature vector per cow, and distance weights from training rows.

#include "mastitis/cfx.hpp"
#include "mastitis/dataset.hpp"
#include "mastitis/evalkit.hpp"
#include "mastitis/featcat.hpp"
#include "mastitis/gbm.hpp"

#include <algorithm>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace mastitis {

struct DateSpan {
    Date first, last;
};

inline DateSpan milk_date_span(const Herd& herd) {
    if (herd.milk.empty()) throw std::invalid_argument("herd has no milk recordings");
    DateSpan s{herd.milk.front().date, herd.milk.front().date};
    for (const auto& m : herd.milk) {
        s.first = std::min(s.first, m.date);
        s.last = std::max(s.last, m.date);
    }
    return s;
}

/// Three quarters of the way through the recorded period.
inline Date default_split_date(const Herd& herd) {
    const auto s = milk_date_span(herd);
    return s.first + (s.last - s.first) * 3 / 4;
}

struct TemporalSplit {
    std::vector<LabeledInstance> train, test;
    Date split;
};

/// Instances dated before `split` train, the rest test. Never random.
inline TemporalSplit temporal_split(std::vector<LabeledInstance> instances, Date split) {
    TemporalSplit out;
    out.split = split;
    for (auto& inst : instances) (inst.x.as_of < split ? out.train : out.test).push_back(std::move(inst));
    return out;
}

inline bool has_both_classes(const std::vector<LabeledInstance>& v) {
    bool sick = false, healthy = false;
    for (const auto& i : v) (i.label == Label::Sick ? sick : healthy) = true;
    return sick && healthy;
}

inline DistanceWeights weights_from_instances(const std::vector<LabeledInstance>& rows, const FeatureCatalog& catalog) {
    std::vector<double> matrix;
    matrix.reserve(rows.size() * catalog.size());
    for (const auto& r : rows) matrix.insert(matrix.end(), r.x.values.begin(), r.x.values.end());
    return mad_weights(matrix, rows.size(), catalog);
}

/// Each cow's feature vector on its latest recorded day, keyed by cow id.
/// Cows whose latest day cannot be featurised are left out.
inline std::map<std::string, FeatureVector> latest_vectors(const HerdContext& context, const FeatureCatalog& catalog) {
    std::map<std::string, FeatureVector> out;
    for (std::size_t i = 0; i < context.cow_count(); ++i) {
        const auto milk = context.milk(i);
        if (milk.empty()) continue;
        try {
            out.emplace(context.cow(i).cow_id, engineer_features(context.cow(i), milk, milk.back().date, catalog, context));
        } catch (const FeatureError&) {
        }
    }
    return out;
}

/// Feature vector of `cow_id` on `date`; throws std::out_of_range for an
/// unknown cow and FeatureError when the day cannot be featurised.
inline FeatureVector features_on(const HerdContext& context, const std::string& cow_id, Date date,
                                 const FeatureCatalog& catalog) {
    const auto idx = context.cow_index(cow_id);
    if (!idx) throw std::out_of_range("unknown cow " + cow_id);
    return engineer_features(context.cow(*idx), context.milk(*idx), date, catalog, context);
}

/// Labelled instances of a herd, split in time.
inline TemporalSplit prepare(const Herd& herd, const FeatureCatalog& catalog, std::optional<Date> split = std::nullopt) {
    const HerdContext context(herd);
    return temporal_split(label_instances(herd, context, kMaxHorizon, catalog),
                          split ? *split : default_split_date(herd));
}

struct EvalOptions {
    std::size_t sample_n = 200;
    double min_healthy_confidence = 0.8;
    std::uint64_t sample_seed = 1;
    CfxConfig cfx;
};

struct EvalOutcome {
    double test_auc = 0.0;
    HorizonCurve curve;
    ScoreShiftSummary shift;
    std::vector<LabeledInstance> samples;
    std::size_t eligible_pool = 0;
};

/// Horizon curve and AUC on the test rows, then counterfactuals for a sample
/// of confidently healthy test rows. Distances use MAD weights of the
/// training rows.
inline EvalOutcome evaluate(const Ensemble& model, const TemporalSplit& split, const FeatureCatalog& catalog,
                            const EvalOptions& options) {
    if (split.train.size() < 2) throw std::invalid_argument("fewer than two training rows to weight distances");
    if (!has_both_classes(split.test)) throw std::invalid_argument("test rows do not contain both classes");
    EvalOutcome out;
    out.test_auc = auc(model, split.test);
    out.curve = horizon_recall(model, split.test);
    const double ceiling = clean_decimal(1.0 - options.min_healthy_confidence);
    for (const auto& i : split.test) out.eligible_pool += model.score(i.x.values) <= ceiling;
    out.samples = sample_high_confidence_healthy(model, split.test, options.min_healthy_confidence, options.sample_n,
                                                 options.sample_seed);
    std::vector<FeatureVector> xs;
    for (const auto& s : out.samples) xs.push_back(s.x);
    out.shift = score_shift_summary(model, xs, options.cfx, catalog, weights_from_instances(split.train, catalog));
    return out;
}

}  // namespace mastitis
