#pragma once

// Evaluation at desk scale: how many infections the model flags h days ahead,
// and how far counterfactuals move the score of confidently healthy cows.

#include "mastitis/cfx.hpp"
#include "mastitis/core.hpp"
#include "mastitis/dataset.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mastitis {

inline constexpr int kMaxHorizon = 7;

struct HorizonPoint {
    int horizon_days = 1;
    double proportion_found = 0.0;
    std::size_t n_infections = 0;
    bool operator==(const HorizonPoint&) const = default;
};

struct HorizonCurve {
    std::vector<HorizonPoint> points;
    bool operator==(const HorizonCurve&) const = default;
};

/// Per-infection recall. Positive instances are grouped by (cow, onset); an
/// infection is found at horizon h when any of its instances dated h to 7
/// days before onset scores at or above the threshold. Every horizon is
/// measured against the same set of infections, so the curve cannot rise.
template <Scorer M>
HorizonCurve horizon_recall(const M& model, std::span<const LabeledInstance> instances, double threshold = 0.5) {
    std::map<std::pair<std::string, long>, std::array<bool, kMaxHorizon + 1>> flagged;
    std::array<std::size_t, kMaxHorizon + 1> per_horizon{};
    for (const auto& inst : instances) {
        if (inst.label != Label::Sick || !inst.onset) continue;
        const long out = *inst.onset - inst.x.as_of;
        if (out < 1 || out > kMaxHorizon) continue;
        auto& days = flagged[{inst.x.cow_id, inst.onset->days_since_epoch()}];
        ++per_horizon[std::size_t(out)];
        if (model.score(inst.x.values) >= threshold) days[std::size_t(out)] = true;
    }
    for (int h = 1; h <= kMaxHorizon; ++h)
        if (per_horizon[std::size_t(h)] == 0)
            throw std::invalid_argument("horizon_recall: no positive instance " + std::to_string(h) + " days before onset");

    HorizonCurve curve;
    for (int h = 1; h <= kMaxHorizon; ++h) {
        std::size_t found = 0;
        for (const auto& [key, days] : flagged)
            if (std::any_of(days.begin() + h, days.end(), [](bool b) { return b; })) ++found;
        curve.points.push_back({h, double(found) / double(flagged.size()), flagged.size()});
    }
    return curve;
}

/// Area under the ROC curve by the rank-sum statistic; tied scores share ranks.
inline double auc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw std::invalid_argument("auc: length mismatch");
    std::vector<std::size_t> order(scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
    double rank_sum = 0.0, pos = 0.0, neg = 0.0;
    for (std::size_t k = 0; k < order.size();) {
        std::size_t j = k;
        while (j < order.size() && scores[order[j]] == scores[order[k]]) ++j;
        const double mid_rank = double(k + j + 1) / 2.0;
        for (std::size_t q = k; q < j; ++q) {
            if (labels[order[q]]) {
                rank_sum += mid_rank;
                pos += 1;
            } else {
                neg += 1;
            }
        }
        k = j;
    }
    if (pos == 0 || neg == 0) throw std::invalid_argument("auc: needs both classes");
    return (rank_sum - pos * (pos + 1) / 2.0) / (pos * neg);
}

template <Scorer M>
double auc(const M& model, std::span<const LabeledInstance> instances) {
    std::vector<double> scores;
    std::vector<int> labels;
    for (const auto& inst : instances) {
        scores.push_back(model.score(inst.x.values));
        labels.push_back(inst.label == Label::Sick ? 1 : 0);
    }
    return auc(scores, labels);
}

/// Uniform sample without replacement of instances with
/// P(Sick) <= 1 - min_healthy_confidence; everything when fewer qualify.
template <Scorer M>
std::vector<LabeledInstance> sample_high_confidence_healthy(const M& model, std::span<const LabeledInstance> instances,
                                                            double min_healthy_confidence, std::size_t n,
                                                            std::uint64_t seed) {
    if (!(min_healthy_confidence > 0.5 && min_healthy_confidence < 1))
        throw std::invalid_argument("min_healthy_confidence must be in (0.5,1)");
    const double ceiling = clean_decimal(1.0 - min_healthy_confidence);
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < instances.size(); ++i)
        if (model.score(instances[i].x.values) <= ceiling) pool.push_back(i);

    Rng rng(seed);
    const std::size_t take = std::min(n, pool.size());
    for (std::size_t i = 0; i < take; ++i) std::swap(pool[i], pool[std::size_t(rng.integer(long(i), long(pool.size() - 1)))]);
    std::vector<LabeledInstance> out;
    out.reserve(take);
    for (std::size_t i = 0; i < take; ++i) out.push_back(instances[pool[i]]);
    return out;
}

struct Quantiles {
    double min = 0, q25 = 0, median = 0, q75 = 0, max = 0;
    bool operator==(const Quantiles&) const = default;
};

/// Linearly interpolated quantiles of a nonempty sample.
inline Quantiles quantiles(std::vector<double> v) {
    if (v.empty()) throw std::invalid_argument("quantiles of empty sample");
    std::sort(v.begin(), v.end());
    auto at = [&](double p) {
        const double pos = p * double(v.size() - 1);
        const auto lo = std::size_t(std::floor(pos));
        const auto hi = std::min(lo + 1, v.size() - 1);
        return v[lo] + (pos - double(lo)) * (v[hi] - v[lo]);
    };
    return {v.front(), at(0.25), at(0.5), at(0.75), v.back()};
}

struct ScoreShiftSummary {
    std::vector<std::pair<double, double>> pairs;  // (P(Sick) before, P(Sick) after) for Found results
    std::size_t n_samples = 0;
    double flip_rate = 0.0;
    std::optional<Quantiles> original, counterfactual;
    std::vector<CounterfactualResult> results;  // one per sample, in order
};

inline void summarise(ScoreShiftSummary& s) {
    std::size_t found = s.pairs.size();
    s.flip_rate = s.n_samples ? double(found) / double(s.n_samples) : 0.0;
    s.original.reset();
    s.counterfactual.reset();
    if (found) {
        std::vector<double> a, b;
        for (auto [x, y] : s.pairs) {
            a.push_back(x);
            b.push_back(y);
        }
        s.original = quantiles(a);
        s.counterfactual = quantiles(b);
    }
}

template <Scorer M>
ScoreShiftSummary score_shift_summary(const M& model, std::span<const FeatureVector> samples, const CfxConfig& config,
                                      const FeatureCatalog& catalog, const DistanceWeights& weights) {
    ScoreShiftSummary s;
    s.n_samples = samples.size();
    for (const auto& x : samples) {
        CounterfactualResult r;
        try {
            r = find_counterfactual(model, x, catalog, weights, config);
        } catch (const AlreadySickError&) {
            r.score_original = model.score(x.values);
            r.x_cf = x;
        }
        if (r.status == CfxStatus::Found) s.pairs.emplace_back(r.score_original, r.score_cf);
        s.results.push_back(std::move(r));
    }
    summarise(s);
    return s;
}

// ---------------------------------------------------------------------------
// Report files: horizon_curve.csv, score_shift.csv, summary.json
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const Quantiles& q) {
    return {{"min", q.min}, {"q25", q.q25}, {"median", q.median}, {"q75", q.q75}, {"max", q.max}};
}

inline nlohmann::json to_json(const HorizonCurve& curve) {
    auto arr = nlohmann::json::array();
    for (const auto& p : curve.points)
        arr.push_back({{"horizon", p.horizon_days}, {"proportion", p.proportion_found}, {"n", p.n_infections}});
    return arr;
}

inline void export_report(const HorizonCurve& curve, const ScoreShiftSummary& summary, const std::filesystem::path& dir,
                          const nlohmann::json& extra = nlohmann::json::object()) {
    std::filesystem::create_directories(dir);
    auto open = [&](const char* name) {
        std::ofstream out(dir / name, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write " + (dir / name).string());
        return out;
    };
    {
        auto out = open("horizon_curve.csv");
        out << "horizon,proportion,n\n";
        for (const auto& p : curve.points)
            out << p.horizon_days << ',' << format_double(p.proportion_found) << ',' << p.n_infections << '\n';
    }
    {
        auto out = open("score_shift.csv");
        out << "score_original,score_cf\n";
        for (auto [a, b] : summary.pairs) out << format_double(a) << ',' << format_double(b) << '\n';
    }
    nlohmann::json j = extra;
    j["flip_rate"] = summary.flip_rate;
    j["n_samples"] = summary.n_samples;
    j["n_found"] = summary.pairs.size();
    j["quantiles"] = {{"original", summary.original ? to_json(*summary.original) : nlohmann::json(nullptr)},
                      {"counterfactual", summary.counterfactual ? to_json(*summary.counterfactual) : nlohmann::json(nullptr)}};
    j["horizon_curve"] = to_json(curve);
    auto out = open("summary.json");
    out << j.dump(2) << '\n';
    if (!out) throw std::runtime_error("cannot write " + (dir / "summary.json").string());
}

namespace detail {

inline std::vector<std::vector<std::string>> read_csv_rows(const std::filesystem::path& path, std::string_view header) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || trim(line) != header)
        throw std::runtime_error(path.filename().string() + ": unexpected header");
    std::vector<std::vector<std::string>> rows;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        std::vector<std::string> cells;
        for (auto c : split(trim(line), ',')) cells.emplace_back(c);
        rows.push_back(std::move(cells));
    }
    return rows;
}

}  // namespace detail

inline HorizonCurve read_horizon_curve(const std::filesystem::path& path) {
    HorizonCurve c;
    for (const auto& r : detail::read_csv_rows(path, "horizon,proportion,n")) {
        if (r.size() != 3) throw std::runtime_error("horizon_curve.csv: expected 3 cells");
        c.points.push_back({int(parse_long(r[0])), parse_double(r[1]), std::size_t(parse_long(r[2]))});
    }
    return c;
}

inline std::vector<std::pair<double, double>> read_score_pairs(const std::filesystem::path& path) {
    std::vector<std::pair<double, double>> out;
    for (const auto& r : detail::read_csv_rows(path, "score_original,score_cf")) {
        if (r.size() != 2) throw std::runtime_error("score_shift.csv: expected 2 cells");
        out.emplace_back(parse_double(r[0]), parse_double(r[1]));
    }
    return out;
}

}  // namespace mastitis
