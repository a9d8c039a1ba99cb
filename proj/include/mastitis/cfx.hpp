#pragma once

// Counterfactual search: the smallest policy-compliant change that would make
// the model call a cow Sick.
//
// Cardinality is handled by enumerating every subset of the perturbable
// features up to max_changes and solving a continuous problem per subset with
// COBYLA. Candidates are then snapped onto the min_change grid, re-verified on
// the model itself and shrunk greedily while they still flip. Grid mode adds
// an exact branch-and-bound over the grid, bounded by the best candidate so
// far, which makes the answer provably minimal on the grid.

#include "mastitis/cobyla.hpp"
#include "mastitis/core.hpp"
#include "mastitis/dataset.hpp"
#include "mastitis/featcat.hpp"
#include "mastitis/gbm.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <concepts>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mastitis {

/// Anything that maps a feature vector to P(Sick).
template <class M>
concept Scorer = requires(const M& m, std::span<const double> x) {
    { m.score(x) } -> std::convertible_to<double>;
};

struct DistanceWeights {
    std::vector<double> w;    // 1 / MAD, catalog order
    std::vector<double> mad;  // raw MAD
    std::vector<std::size_t> fallback_applied;

    std::size_t size() const { return w.size(); }
    double operator[](std::size_t j) const { return w[j]; }
};

/// Scale used in place of a zero MAD, as a fraction of the feature's range.
inline constexpr double kZeroMadFraction = 1e-6;

/// Per-column median absolute deviation of a row-major matrix.
inline DistanceWeights mad_weights(std::span<const double> row_major, std::size_t n_rows,
                                   const FeatureCatalog& catalog) {
    const std::size_t n_cols = catalog.size();
    if (n_rows == 0 || row_major.empty()) throw std::invalid_argument("mad_weights: empty training matrix");
    if (n_rows < 2) throw std::invalid_argument("mad_weights: need at least 2 rows");
    if (row_major.size() != n_rows * n_cols)
        throw std::invalid_argument("mad_weights: matrix width does not match the catalog");

    DistanceWeights out;
    out.w.resize(n_cols);
    out.mad.resize(n_cols);
    std::vector<double> column(n_rows);
    for (std::size_t j = 0; j < n_cols; ++j) {
        for (std::size_t i = 0; i < n_rows; ++i) column[i] = row_major[i * n_cols + j];
        const double med = median(column);
        for (auto& v : column) v = std::abs(v - med);
        const double mad = median(column);
        out.mad[j] = mad;
        if (mad > 0.0) {
            out.w[j] = 1.0 / mad;
        } else {
            out.w[j] = 1.0 / (kZeroMadFraction * catalog[j].range());
            out.fallback_applied.push_back(j);
        }
    }
    return out;
}

inline DistanceWeights mad_weights(const TrainingSet& data, const FeatureCatalog& catalog) {
    if (data.rows() > 0 && data.n_features != catalog.size())
        throw std::invalid_argument("mad_weights: matrix width does not match the catalog");
    return mad_weights(data.values, data.rows(), catalog);
}

inline double weighted_manhattan(std::span<const double> x, std::span<const double> x_prime,
                                 std::span<const double> weights) {
    if (x.size() != x_prime.size() || x.size() != weights.size())
        throw DimensionError("weighted_manhattan: dimension mismatch");
    double sum = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) sum += weights[j] * std::abs(x[j] - x_prime[j]);
    return sum;
}

inline double weighted_manhattan(std::span<const double> x, std::span<const double> x_prime,
                                 const DistanceWeights& weights) {
    return weighted_manhattan(x, x_prime, std::span<const double>(weights.w));
}

/// Sparse change: feature index -> signed change in feature units.
using DeltaMap = std::map<std::size_t, double>;

/// Weighted distance of a change, summed in catalog order.
inline double delta_distance(const DeltaMap& delta, const DistanceWeights& weights) {
    double sum = 0.0;
    for (const auto& [j, d] : delta) sum += weights[j] * std::abs(d);
    return sum;
}

struct CfxConfig {
    int max_changes = 3;
    double flip_threshold = 0.5;
    double flip_margin = 0.05;
    int n_restarts = 3;
    bool grid_mode = false;
    /// Features whose change takes longer than this to act are left out.
    int max_actionable_days = 365;
    std::uint64_t seed = 0;

    double target() const { return flip_threshold + flip_margin; }

    void validate() const {
        if (max_changes < 1) throw std::invalid_argument("max_changes must be >= 1");
        if (!(flip_threshold > 0 && flip_threshold < 1)) throw std::invalid_argument("flip_threshold must be in (0,1)");
        if (!(flip_margin >= 0)) throw std::invalid_argument("flip_margin must be >= 0");
        if (!(target() < 1)) throw std::invalid_argument("flip_threshold + flip_margin must be < 1");
        if (n_restarts < 0) throw std::invalid_argument("n_restarts must be >= 0");
        if (max_actionable_days < 0) throw std::invalid_argument("max_actionable_days must be >= 0");
    }
};

struct SearchLimits {
    std::optional<std::chrono::steady_clock::time_point> deadline;
    std::size_t max_grid_candidates = 10'000'000;
};

enum class CfxStatus { Found, NotFound };

inline std::string_view to_string(CfxStatus s) { return s == CfxStatus::Found ? "found" : "not_found"; }

struct CounterfactualResult {
    DeltaMap delta;
    FeatureVector x_cf;
    double score_original = 0.0;
    double score_cf = 0.0;
    double distance = 0.0;
    std::size_t subsets_searched = 0;
    CfxStatus status = CfxStatus::NotFound;
    std::map<std::size_t, double> contribution;  // w_j |delta_j|
};

/// The query cow is already on the Sick side of the threshold.
class AlreadySickError : public std::domain_error {
    using std::domain_error::domain_error;
};

class SearchSpaceError : public std::length_error {
    using std::length_error::length_error;
};

class CfxTimeout : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Grid spacing used when quantising or enumerating a feature.
inline double grid_step(const FeatureSpec& spec) { return spec.min_change ? *spec.min_change : spec.range() / 50.0; }

/// Three significant digits.
inline double round_significant(double v) {
    if (v == 0.0 || !std::isfinite(v)) return v;
    const double mag = std::pow(10.0, std::floor(std::log10(std::abs(v))) - 2.0);
    return clean_decimal(std::round(v / mag) * mag);
}

namespace detail {

inline constexpr double kGridEps = 1e-9;

inline bool within(const FeatureSpec& s, double v) {
    return v >= s.lower_bound - kGridEps && v <= s.upper_bound + kGridEps;
}

}  // namespace detail

/// Snaps raw changes onto the policy grid. With `x`, steps that would leave
/// the catalog bounds are pulled back one grid step at a time.
inline DeltaMap quantize_deltas(const DeltaMap& raw, const FeatureCatalog& catalog,
                                std::span<const double> x = {}) {
    DeltaMap out;
    for (const auto& [j, d] : raw) {
        const auto& spec = catalog[j];
        if (!std::isfinite(d) || d == 0.0) continue;
        double q = 0.0;
        if (spec.min_change) {
            const double step = *spec.min_change;
            const double mag = std::abs(d);
            if (mag < 0.25 * step) continue;
            double k = std::max(1.0, std::ceil(mag / step - detail::kGridEps));
            const double sign = d < 0 ? -1.0 : 1.0;
            if (!x.empty())
                while (k >= 1 && !detail::within(spec, x[j] + clean_decimal(sign * k * step))) k -= 1;
            if (k < 1) continue;
            q = clean_decimal(sign * k * step);
        } else {
            q = round_significant(d);
            if (!x.empty() && !detail::within(spec, x[j] + q)) q = std::clamp(x[j] + q, spec.lower_bound, spec.upper_bound) - x[j];
            if (q == 0.0) continue;
        }
        out[j] = q;
    }
    return out;
}

namespace detail {

inline std::vector<double> apply_delta(std::span<const double> x, const DeltaMap& delta, const FeatureCatalog& catalog) {
    std::vector<double> out(x.begin(), x.end());
    for (const auto& [j, d] : delta) out[j] = std::clamp(x[j] + d, catalog[j].lower_bound, catalog[j].upper_bound);
    return out;
}

struct Candidate {
    DeltaMap delta;
    double distance = std::numeric_limits<double>::infinity();
    double score = 0.0;
    bool valid = false;
};

/// Strict order: distance, then fewer features, then support in catalog
/// order, then the change values themselves.
inline bool better(const Candidate& a, const Candidate& b) {
    if (!b.valid) return a.valid;
    if (!a.valid) return false;
    if (a.distance != b.distance) return a.distance < b.distance;
    if (a.delta.size() != b.delta.size()) return a.delta.size() < b.delta.size();
    auto ia = a.delta.begin(), ib = b.delta.begin();
    for (; ia != a.delta.end(); ++ia, ++ib)
        if (ia->first != ib->first) return ia->first < ib->first;
    for (ia = a.delta.begin(), ib = b.delta.begin(); ia != a.delta.end(); ++ia, ++ib)
        if (ia->second != ib->second) return ia->second < ib->second;
    return false;
}

/// All subsets of `items` with 1..max_size members, by size then lexicographically.
inline std::vector<std::vector<std::size_t>> subsets_up_to(const std::vector<std::size_t>& items, int max_size) {
    std::vector<std::vector<std::size_t>> out;
    std::vector<std::size_t> pick;
    const std::size_t n = items.size();
    for (std::size_t size = 1; size <= std::min<std::size_t>(n, std::size_t(max_size)); ++size) {
        std::vector<std::size_t> idx(size);
        for (std::size_t i = 0; i < size; ++i) idx[i] = i;
        while (true) {
            pick.clear();
            for (auto i : idx) pick.push_back(items[i]);
            out.push_back(pick);
            std::size_t i = size;
            while (i > 0 && idx[i - 1] == n - size + i - 1) --i;
            if (i == 0) break;
            ++idx[i - 1];
            for (std::size_t k = i; k < size; ++k) idx[k] = idx[k - 1] + 1;
        }
    }
    return out;
}

/// Nonzero grid changes for feature j at value v that stay within bounds,
/// cheapest first (+k before -k).
inline std::vector<double> grid_changes(const FeatureSpec& spec, double v) {
    const double step = grid_step(spec);
    std::vector<double> out;
    const long up = long(std::floor((spec.upper_bound - v) / step + kGridEps));
    const long down = long(std::floor((v - spec.lower_bound) / step + kGridEps));
    for (long k = 1; k <= std::max(up, down); ++k) {
        const double plus = clean_decimal(double(k) * step);
        if (k <= up && within(spec, v + plus)) out.push_back(plus);
        if (k <= down && within(spec, v - plus)) out.push_back(-plus);
    }
    return out;
}

template <Scorer M>
class Search {
public:
    Search(const M& model, std::span<const double> x, const FeatureCatalog& catalog, const DistanceWeights& weights,
           const CfxConfig& config, const SearchLimits& limits)
        : model_(model), x_(x), catalog_(catalog), weights_(weights), config_(config), limits_(limits) {}

    double score(const DeltaMap& delta) {
        tick();
        return model_.score(apply_delta(x_, delta, catalog_));
    }

    Candidate verify(DeltaMap delta) {
        Candidate c;
        if (delta.empty()) return c;
        c.score = score(delta);
        c.valid = c.score >= config_.target();
        c.distance = delta_distance(delta, weights_);
        c.delta = std::move(delta);
        return c;
    }

    /// Coordinate descent on the grid: each round tries every cheaper value
    /// (either sign, or no change) for each feature in the support and takes
    /// the best that keeps the flip, until nothing improves.
    Candidate polish(Candidate c) {
        while (true) {
            Candidate best_move;
            for (const auto& [j, d] : c.delta) {
                auto options = grid_changes(catalog_[j], x_[j]);
                options.insert(options.begin(), 0.0);
                for (double v : options) {
                    if (std::abs(v) >= std::abs(d)) break;
                    DeltaMap next = c.delta;
                    if (v == 0.0) next.erase(j);
                    else next[j] = v;
                    auto trial = verify(std::move(next));
                    if (trial.valid && better(trial, c) && better(trial, best_move)) best_move = std::move(trial);
                }
            }
            if (!best_move.valid) return c;
            c = std::move(best_move);
        }
    }

    /// Local search across supports: swap one changed feature for an unused
    /// one at any grid value, polishing after each improvement.
    Candidate refine(Candidate c, const std::vector<std::size_t>& features) {
        c = polish(std::move(c));
        while (true) {
            Candidate best_move;
            for (const auto& [j, d] : c.delta)
                for (auto k : features) {
                    if (c.delta.count(k)) continue;
                    for (double v : grid_changes(catalog_[k], x_[k])) {
                        DeltaMap next = c.delta;
                        next.erase(j);
                        next[k] = v;
                        tick();
                        auto trial = verify(std::move(next));
                        if (trial.valid && better(trial, c) && better(trial, best_move)) best_move = std::move(trial);
                    }
                }
            if (!best_move.valid) return c;
            c = polish(std::move(best_move));
        }
    }

    /// Continuous COBYLA solves over one subset; returns the best verified grid candidate.
    Candidate solve_subset(const std::vector<std::size_t>& subset, double target, std::uint64_t seed) {
        const std::size_t n = subset.size();
        std::vector<double> range(n), wr(n);
        double rho_end = 0.25;
        for (std::size_t s = 0; s < n; ++s) {
            const auto& spec = catalog_[subset[s]];
            range[s] = spec.range();
            wr[s] = weights_[subset[s]] * range[s];
            rho_end = std::min(rho_end, 0.1 * grid_step(spec) / range[s]);
        }
        auto to_delta = [&](std::span<const double> u) {
            DeltaMap d;
            for (std::size_t s = 0; s < n; ++s) d[subset[s]] = u[s] * range[s];
            return d;
        };

        std::optional<std::vector<double>> best_feasible;
        double best_feasible_cost = std::numeric_limits<double>::infinity();
        auto cost = [&](std::span<const double> u) {
            double sum = 0.0;
            for (std::size_t s = 0; s < n; ++s) sum += wr[s] * std::abs(u[s]);
            return sum;
        };

        cobyla::OptProblem problem;
        problem.objective = cost;
        problem.constraints.push_back([&](std::span<const double> u) {
            tick();
            std::vector<double> xs(x_.begin(), x_.end());
            bool inside = true;
            for (std::size_t s = 0; s < n; ++s) {
                const auto& spec = catalog_[subset[s]];
                const double v = x_[subset[s]] + u[s] * range[s];
                inside = inside && v >= spec.lower_bound && v <= spec.upper_bound;
                xs[subset[s]] = std::clamp(v, spec.lower_bound, spec.upper_bound);
            }
            const double g = model_.score(xs) - target;
            if (g >= 0 && inside) {
                const double c = cost(u);
                if (c < best_feasible_cost) {
                    best_feasible_cost = c;
                    best_feasible.emplace(u.begin(), u.end());
                }
            }
            return g;
        });
        for (std::size_t s = 0; s < n; ++s) {
            const auto& spec = catalog_[subset[s]];
            const double hi = (spec.upper_bound - x_[subset[s]]) / range[s];
            const double lo = (spec.lower_bound - x_[subset[s]]) / range[s];
            problem.constraints.push_back([s, hi](std::span<const double> u) { return hi - u[s]; });
            problem.constraints.push_back([s, lo](std::span<const double> u) { return u[s] - lo; });
        }
        problem.rho_begin = 0.25;
        problem.rho_end = std::max(1e-6, rho_end);
        problem.max_evals = 150 * (n + 1);

        Rng rng(seed);
        Candidate best;
        std::vector<DeltaMap> tried;
        auto consider = [&](std::span<const double> u) {
            auto q = quantize_deltas(to_delta(u), catalog_, x_);
            if (q.empty() || std::find(tried.begin(), tried.end(), q) != tried.end()) return;
            tried.push_back(q);
            auto c = verify(std::move(q));
            if (!c.valid) return;
            c = polish(std::move(c));
            if (better(c, best)) best = std::move(c);
        };

        for (int start = 0; start <= config_.n_restarts; ++start) {
            problem.x0.assign(n, 0.0);
            if (start > 0)
                for (std::size_t s = 0; s < n; ++s) {
                    const auto& spec = catalog_[subset[s]];
                    const double lo = (spec.lower_bound - x_[subset[s]]) / range[s];
                    const double hi = (spec.upper_bound - x_[subset[s]]) / range[s];
                    problem.x0[s] = rng.uniform(std::max(lo, -0.5), std::min(hi, 0.5));
                }
            best_feasible.reset();
            best_feasible_cost = std::numeric_limits<double>::infinity();
            const auto result = cobyla::minimize(problem);
            consider(result.x_best);
            if (best_feasible) consider(*best_feasible);
        }
        // Tree models are flat almost everywhere, so the starts above can sit
        // on a plateau the linear models never leave. Each corner of the box
        // gives a start that is often already past the threshold.
        for (std::size_t corner = 0; corner < (std::size_t(1) << n); ++corner) {
            for (std::size_t s = 0; s < n; ++s) {
                const auto& spec = catalog_[subset[s]];
                problem.x0[s] = ((corner >> s) & 1) ? (spec.upper_bound - x_[subset[s]]) / range[s]
                                                   : (spec.lower_bound - x_[subset[s]]) / range[s];
            }
            best_feasible.reset();
            best_feasible_cost = std::numeric_limits<double>::infinity();
            const auto result = cobyla::minimize(problem);
            consider(result.x_best);
            if (best_feasible) consider(*best_feasible);
        }
        return best;
    }

    /// Exact search over the grid for subsets of exactly this support, pruned
    /// against `best`.
    void grid_subset(const std::vector<std::size_t>& subset, Candidate& best) {
        const std::size_t n = subset.size();
        std::vector<std::vector<double>> changes(n);
        std::vector<std::vector<double>> costs(n);
        for (std::size_t s = 0; s < n; ++s) {
            const auto j = subset[s];
            changes[s] = grid_changes(catalog_[j], x_[j]);
            if (changes[s].empty()) return;
            std::stable_sort(changes[s].begin(), changes[s].end(),
                             [](double a, double b) { return std::abs(a) < std::abs(b); });
            for (double d : changes[s]) costs[s].push_back(weights_[j] * std::abs(d));
        }
        DeltaMap delta;
        descend(subset, changes, costs, 0, 0.0, delta, best);
    }

    const FeatureCatalog& catalog() const { return catalog_; }

private:
    bool could_win_tie(const std::vector<std::size_t>& subset, const Candidate& best) const {
        if (!best.valid) return true;
        if (subset.size() != best.delta.size()) return subset.size() < best.delta.size();
        auto it = best.delta.begin();
        for (std::size_t s = 0; s < subset.size(); ++s, ++it)
            if (subset[s] != it->first) return subset[s] < it->first;
        return true;
    }

    void descend(const std::vector<std::size_t>& subset, const std::vector<std::vector<double>>& changes,
                 const std::vector<std::vector<double>>& costs, std::size_t level, double prefix, DeltaMap& delta,
                 Candidate& best) {
        if (level == subset.size()) {
            auto c = verify(delta);
            if (c.valid && better(c, best)) best = std::move(c);
            return;
        }
        for (std::size_t i = 0; i < changes[level].size(); ++i) {
            const double partial = prefix + costs[level][i];
            double bound = partial;
            for (std::size_t l = level + 1; l < subset.size(); ++l) bound += costs[l].front();
            if (best.valid) {
                // Candidates are cheapest first, so nothing later can do better.
                if (bound > best.distance) break;
                if (bound == best.distance && !could_win_tie(subset, best)) break;
            }
            delta[subset[level]] = changes[level][i];
            descend(subset, changes, costs, level + 1, partial, delta, best);
            delta.erase(subset[level]);
        }
    }

    void tick() {
        if (limits_.deadline && (++ticks_ & 63) == 0 && std::chrono::steady_clock::now() > *limits_.deadline)
            throw CfxTimeout("counterfactual search exceeded its time limit");
    }

    const M& model_;
    std::span<const double> x_;
    const FeatureCatalog& catalog_;
    const DistanceWeights& weights_;
    const CfxConfig& config_;
    const SearchLimits& limits_;
    std::size_t ticks_ = 0;
};

inline std::uint64_t instance_seed(std::span<const double> x, std::uint64_t seed) {
    std::uint64_t h = fnv1a(std::to_string(seed));
    for (double v : x) h = fnv1a(format_double(v) + ";", h);
    return h;
}

inline void check_query(std::span<const double> x, const FeatureCatalog& catalog, const DistanceWeights& weights,
                        const CfxConfig& config) {
    config.validate();
    if (x.size() != catalog.size()) throw DimensionError("feature vector does not match the catalog");
    if (weights.size() != catalog.size()) throw DimensionError("distance weights do not match the catalog");
}

template <Scorer M>
CounterfactualResult finish(const M& model, const FeatureVector& x, const FeatureCatalog& catalog,
                            const DistanceWeights& weights, double score_original, std::size_t subsets,
                            const Candidate& best) {
    CounterfactualResult r;
    r.score_original = score_original;
    r.subsets_searched = subsets;
    r.x_cf = x;
    if (!best.valid) return r;
    r.status = CfxStatus::Found;
    r.delta = best.delta;
    r.x_cf.values = apply_delta(x.values, best.delta, catalog);
    r.score_cf = model.score(r.x_cf.values);
    r.distance = best.distance;
    for (const auto& [j, d] : best.delta) r.contribution[j] = weights[j] * std::abs(d);
    return r;
}

}  // namespace detail

template <Scorer M>
CounterfactualResult find_counterfactual(const M& model, const FeatureVector& x, const FeatureCatalog& catalog,
                                         const DistanceWeights& weights, const CfxConfig& config = {},
                                         const SearchLimits& limits = {}) {
    detail::check_query(x.values, catalog, weights, config);
    const double score_original = model.score(x.values);
    if (score_original >= config.flip_threshold)
        throw AlreadySickError("cow is already predicted to succumb (score " + format_double(score_original) + ")");

    const auto features = perturbable_features(catalog, config.max_actionable_days);
    const auto subsets = detail::subsets_up_to(features, config.max_changes);
    detail::Search<M> search(model, x.values, catalog, weights, config, limits);
    const std::uint64_t base_seed = detail::instance_seed(x.values, config.seed);

    detail::Candidate best;
    for (const auto& subset : subsets) {
        std::uint64_t seed = base_seed;
        for (auto j : subset) seed = fnv1a(std::to_string(j) + ",", seed);
        auto c = search.solve_subset(subset, config.target(), seed);
        // Quantisation can undo a marginal flip: try once more with extra headroom.
        if (!c.valid) c = search.solve_subset(subset, config.target() + config.flip_margin, seed);
        if (detail::better(c, best)) best = std::move(c);
    }
    if (best.valid) best = search.refine(std::move(best), features);
    if (config.grid_mode)
        for (const auto& subset : subsets) search.grid_subset(subset, best);
    return detail::finish(model, x, catalog, weights, score_original, subsets.size(), best);
}

/// Exhaustive grid search; the oracle for grid mode.
template <Scorer M>
CounterfactualResult brute_force_counterfactual(const M& model, const FeatureVector& x, const FeatureCatalog& catalog,
                                                const DistanceWeights& weights, const CfxConfig& config = {},
                                                std::size_t max_candidates = 10'000'000) {
    detail::check_query(x.values, catalog, weights, config);
    const double score_original = model.score(x.values);
    if (score_original >= config.flip_threshold)
        throw AlreadySickError("cow is already predicted to succumb (score " + format_double(score_original) + ")");

    const auto features = perturbable_features(catalog, config.max_actionable_days);
    const auto subsets = detail::subsets_up_to(features, config.max_changes);
    std::map<std::size_t, std::vector<double>> grids;
    for (auto j : features) grids[j] = detail::grid_changes(catalog[j], x.values[j]);

    double total = 0.0;
    for (const auto& subset : subsets) {
        double count = 1.0;
        for (auto j : subset) count *= double(grids[j].size());
        total += count;
    }
    if (total > double(max_candidates))
        throw SearchSpaceError("grid search space of " + format_double(total) + " candidates exceeds the limit");

    detail::Candidate best;
    std::vector<double> xs = x.values;
    for (const auto& subset : subsets) {
        std::vector<std::size_t> odometer(subset.size(), 0);
        bool empty = false;
        for (auto j : subset) empty = empty || grids[j].empty();
        if (empty) continue;
        while (true) {
            detail::Candidate c;
            xs = x.values;
            double distance = 0.0;
            for (std::size_t s = 0; s < subset.size(); ++s) {
                const auto j = subset[s];
                const double d = grids[j][odometer[s]];
                c.delta[j] = d;
                xs[j] = std::clamp(x.values[j] + d, catalog[j].lower_bound, catalog[j].upper_bound);
                distance += weights[j] * std::abs(d);
            }
            c.distance = distance;
            c.score = model.score(xs);
            c.valid = c.score >= config.target();
            if (detail::better(c, best)) best = std::move(c);

            std::size_t s = 0;
            while (s < subset.size() && ++odometer[s] == grids[subset[s]].size()) odometer[s++] = 0;
            if (s == subset.size()) break;
        }
    }
    return detail::finish(model, x, catalog, weights, score_original, subsets.size(), best);
}

/// Wire format shared by the service and the command line.
inline nlohmann::json to_json(const CounterfactualResult& r, const FeatureCatalog& catalog,
                              std::span<const double> original) {
    nlohmann::json j;
    j["status"] = std::string(to_string(r.status));
    j["score_original"] = r.score_original;
    j["subsets_searched"] = r.subsets_searched;
    nlohmann::json orig = nlohmann::json::object();
    for (std::size_t i = 0; i < catalog.size() && i < original.size(); ++i) orig[catalog[i].name] = original[i];
    j["original"] = orig;
    if (r.status == CfxStatus::Found) {
        j["score_cf"] = r.score_cf;
        j["distance"] = r.distance;
        nlohmann::json deltas = nlohmann::json::array();
        for (const auto& [idx, d] : r.delta)
            deltas.push_back({{"feature", catalog[idx].name}, {"value", d}, {"unit", catalog[idx].unit},
                              {"contribution", r.contribution.at(idx)}});
        j["deltas"] = deltas;
        nlohmann::json cf = nlohmann::json::object();
        for (std::size_t i = 0; i < catalog.size(); ++i) cf[catalog[i].name] = r.x_cf.values[i];
        j["counterfactual"] = cf;
    } else {
        j["score_cf"] = nullptr;
        j["distance"] = nullptr;
        j["deltas"] = nlohmann::json::array();
        j["counterfactual"] = nullptr;
    }
    return j;
}

}  // namespace mastitis
