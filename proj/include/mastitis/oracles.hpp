#pragma once

// Independent reference implementations and the checks that compare the
// library against them. Each oracle is written the slow, obvious way on
// purpose and shares no code with the path it checks.

#include "mastitis/cfx.hpp"
#include "mastitis/cobyla.hpp"
#include "mastitis/core.hpp"
#include "mastitis/featcat.hpp"
#include "mastitis/stats.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace mastitis::oracle {

/// g1 from raw power sums in long double.
inline double skewness(std::span<const double> v) {
    const auto n = static_cast<long double>(v.size());
    if (v.size() < 3) return 0.0;
    long double s1 = 0, s2 = 0, s3 = 0;
    for (double x : v) {
        const long double y = x;
        s1 += y;
        s2 += y * y;
        s3 += y * y * y;
    }
    const long double mean = s1 / n;
    const long double m2 = s2 / n - mean * mean;
    const long double m3 = s3 / n - 3 * mean * s2 / n + 2 * mean * mean * mean;
    if (m2 <= 1e-24L * (mean * mean + 1)) return 0.0;
    return double(m3 / std::pow(m2, 1.5L));
}

/// Median by full sort.
inline double sorted_median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const auto n = v.size();
    return n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2.0;
}

inline double mad(const std::vector<double>& column) {
    const double m = sorted_median(column);
    std::vector<double> dev;
    for (double x : column) dev.push_back(std::abs(x - m));
    return sorted_median(dev);
}

// ---------------------------------------------------------------------------
// Toy problem for grid-mode equivalence: five features, at most seven grid
// positions each, and a piecewise-constant score like a tree ensemble.
// ---------------------------------------------------------------------------

inline FeatureCatalog toy_catalog() {
    const double steps[] = {0.5, 1.0, 0.25, 2.0, 0.5};
    const double uppers[] = {3.5, 7.0, 1.75, 14.0, 3.0};
    std::vector<FeatureSpec> specs;
    for (int j = 0; j < 5; ++j) {
        FeatureSpec s;
        s.name = "f" + std::to_string(j);
        s.unit = "units";
        s.actionable = true;
        s.actionable_time_days = 30;
        s.confidence = Confidence::High;
        s.min_change = steps[j];
        s.lower_bound = 0.0;
        s.upper_bound = uppers[j];
        specs.push_back(s);
    }
    return FeatureCatalog(std::move(specs), "toy-1");
}

/// Sum of axis-aligned stumps plus a small interaction, squashed to (0,1).
struct ToyModel {
    struct Stump {
        std::size_t feature;
        double threshold, left, right;
    };
    std::vector<Stump> stumps;
    double bias = 0.0;

    static ToyModel random(const FeatureCatalog& catalog, Rng& rng) {
        ToyModel m;
        for (int k = 0; k < 12; ++k) {
            const auto j = std::size_t(rng.integer(0, long(catalog.size() - 1)));
            const auto& s = catalog[j];
            m.stumps.push_back({j, rng.uniform(s.lower_bound, s.upper_bound), rng.normal(0, 0.8), rng.normal(0, 0.8)});
        }
        m.bias = rng.normal(-1.0, 0.5);
        return m;
    }

    double score(std::span<const double> x) const {
        double z = bias;
        for (const auto& s : stumps) z += x[s.feature] <= s.threshold ? s.left : s.right;
        if (x[0] > 2.0 && x[1] > 4.0) z += 0.7;
        return sigmoid(z);
    }
};

// ---------------------------------------------------------------------------
// The check suite
// ---------------------------------------------------------------------------

enum class Fault { None, WrongMadFallback };

struct Check {
    std::string property;
    bool passed = true;
    std::string detail;
};

struct Report {
    std::vector<Check> checks;
    bool passed() const {
        return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.passed; });
    }
};

/// The MAD weights the suite checks. The injected fault swaps the zero-MAD
/// fallback for 1/range, which a correct oracle must catch.
inline DistanceWeights weights_under_test(std::span<const double> rows, std::size_t n_rows,
                                          const FeatureCatalog& catalog, Fault fault) {
    auto w = mad_weights(rows, n_rows, catalog);
    if (fault == Fault::WrongMadFallback)
        for (auto j : w.fallback_applied) w.w[j] = 1.0 / catalog[j].range();
    return w;
}

/// Brute-force minimum of 10(y-x^2)^2 + (1-x)^2 over x + y <= 1 on a 1e-3 grid.
inline double rosenbrock_grid_minimum() {
    double best = std::numeric_limits<double>::infinity();
    for (long i = -2000; i <= 2000; ++i) {
        const double x = double(i) * 1e-3;
        for (long k = -2000; k <= 2000; ++k) {
            const double y = double(k) * 1e-3;
            if (x + y > 1.0 + 1e-12) break;
            best = std::min(best, 10 * (y - x * x) * (y - x * x) + (1 - x) * (1 - x));
        }
    }
    return best;
}

namespace detail {

inline Check check_skewness(std::size_t n_vectors, Rng& rng) {
    Check c{"skewness", true, {}};
    double worst = 0.0;
    for (std::size_t k = 0; k < n_vectors; ++k) {
        std::vector<double> v(std::size_t(rng.integer(3, 40)));
        const double scale = std::pow(10.0, rng.uniform(-2, 3));
        for (auto& x : v) x = scale * (rng.bernoulli(0.3) ? std::exp(rng.normal()) : rng.normal());
        const double got = mastitis::skewness(v), want = oracle::skewness(v);
        worst = std::max(worst, std::abs(got - want));
        if (!(std::abs(got - want) <= 1e-12)) {
            c.passed = false;
            c.detail = "vector " + std::to_string(k) + ": " + format_double(got) + " vs " + format_double(want);
            return c;
        }
    }
    c.detail = std::to_string(n_vectors) + " vectors, max |diff| " + format_double(worst);
    return c;
}

inline FeatureCatalog unit_catalog(std::size_t n) {
    std::vector<FeatureSpec> specs;
    for (std::size_t j = 0; j < n; ++j) {
        FeatureSpec s;
        s.name = "c" + std::to_string(j);
        s.lower_bound = -1000;
        s.upper_bound = 1000;
        specs.push_back(s);
    }
    return FeatureCatalog(std::move(specs), "unit");
}

inline Check check_mad(std::size_t n_vectors, Rng& rng, Fault fault) {
    Check c{"mad", true, {}};
    const auto catalog = unit_catalog(1);
    double worst = 0.0;
    for (std::size_t k = 0; k < n_vectors; ++k) {
        std::vector<double> v(std::size_t(rng.integer(2, 60)));
        const bool rounded = rng.bernoulli(0.3);  // ties exercise the even-length median
        for (auto& x : v) x = rounded ? std::round(rng.normal(0, 3)) : rng.normal(0, 50);
        const auto w = weights_under_test(v, v.size(), catalog, fault);
        const double want = oracle::mad(v);
        worst = std::max(worst, std::abs(w.mad[0] - want));
        if (!(std::abs(w.mad[0] - want) <= 1e-12)) {
            c.passed = false;
            c.detail = "vector " + std::to_string(k) + ": " + format_double(w.mad[0]) + " vs " + format_double(want);
            return c;
        }
        const double want_w = want > 0 ? 1.0 / want : 1.0 / (1e-6 * catalog[0].range());
        if (w.w[0] != want_w) {
            c.property = want > 0 ? "mad" : "mad_fallback";
            c.passed = false;
            c.detail = "vector " + std::to_string(k) + ": weight " + format_double(w.w[0]) + ", expected " +
                       format_double(want_w);
            return c;
        }
    }
    c.detail = std::to_string(n_vectors) + " vectors, max |diff| " + format_double(worst);
    return c;
}

inline Check check_mad_fallback(Fault fault) {
    Check c{"mad_fallback", true, {}};
    const auto catalog = unit_catalog(2);
    const std::vector<double> rows = {7, 1, 7, 2, 7, 3};  // column 0 constant
    const auto w = weights_under_test(rows, 3, catalog, fault);
    const double want = 1.0 / (1e-6 * 2000.0);
    if (w.fallback_applied != std::vector<std::size_t>{0} || w.w[0] != want || w.w[1] != 1.0) {
        c.passed = false;
        c.detail = "constant column weight " + format_double(w.w[0]) + ", expected " + format_double(want);
    }
    return c;
}

inline Check check_manhattan() {
    Check c{"weighted_manhattan", true, {}};
    const std::vector<double> a{0, 0}, b{1, 2};
    const double unit = weighted_manhattan(a, b, std::vector<double>{1, 1});
    const double mixed = weighted_manhattan(a, b, std::vector<double>{2, 0.5});
    const double self = weighted_manhattan(b, b, std::vector<double>{2, 0.5});
    if (unit != 3.0 || mixed != 3.0 || self != 0.0) {
        c.passed = false;
        c.detail = format_double(unit) + ", " + format_double(mixed) + ", " + format_double(self);
    }
    return c;
}

inline Check check_grid_mode(std::size_t n_instances, Rng& rng) {
    Check c{"grid_vs_brute_force", true, {}};
    const auto catalog = toy_catalog();
    std::vector<double> matrix;
    for (int i = 0; i < 200; ++i)
        for (std::size_t j = 0; j < catalog.size(); ++j)
            matrix.push_back(rng.uniform(catalog[j].lower_bound, catalog[j].upper_bound));
    const auto weights = mad_weights(matrix, 200, catalog);
    CfxConfig cfg;
    cfg.grid_mode = true;
    cfg.n_restarts = 1;

    std::size_t done = 0, found = 0, attempts = 0;
    while (done < n_instances) {
        if (++attempts > 100 * n_instances + 100) {
            c.passed = false;
            c.detail = "could not draw enough healthy toy instances";
            return c;
        }
        const auto model = ToyModel::random(catalog, rng);
        FeatureVector x;
        x.cow_id = "toy";
        for (std::size_t j = 0; j < catalog.size(); ++j) {
            const double step = *catalog[j].min_change;
            const auto k = rng.integer(0, long(std::floor(catalog[j].range() / step)));
            x.values.push_back(clean_decimal(double(k) * step));
        }
        if (model.score(x.values) >= cfg.flip_threshold) continue;
        const auto fast = find_counterfactual(model, x, catalog, weights, cfg);
        const auto slow = brute_force_counterfactual(model, x, catalog, weights, cfg);
        ++done;
        if (fast.status != slow.status || (fast.status == CfxStatus::Found && fast.distance != slow.distance)) {
            c.passed = false;
            c.detail = "instance " + std::to_string(done) + ": grid " + format_double(fast.distance) + " (" +
                       std::string(to_string(fast.status)) + "), brute force " + format_double(slow.distance) + " (" +
                       std::string(to_string(slow.status)) + ")";
            return c;
        }
        found += fast.status == CfxStatus::Found;
    }
    c.detail = std::to_string(n_instances) + " instances, " + std::to_string(found) + " with a flip, distances equal";
    return c;
}

inline Check check_cobyla() {
    Check c{"cobyla", true, {}};
    auto fail = [&](const std::string& what) {
        c.passed = false;
        c.detail = what;
        return c;
    };
    using cobyla::OptProblem;
    {
        OptProblem p;
        p.x0 = {0.0};
        p.rho_begin = 0.5;
        p.rho_end = 1e-8;
        p.objective = [](std::span<const double> x) { return (x[0] - 1) * (x[0] - 1); };
        const auto r = cobyla::minimize(p);
        if (!(std::abs(r.x_best[0] - 1) <= 1e-6)) return fail("quadratic: x = " + format_double(r.x_best[0]));
    }
    {
        OptProblem p;
        p.x0 = {0.0, 0.0};
        p.objective = [](std::span<const double> x) { return x[0] + x[1]; };
        p.constraints = {[](std::span<const double> x) { return 1 - x[0] * x[0] - x[1] * x[1]; }};
        const auto r = cobyla::minimize(p);
        const double h = -std::sqrt(0.5);
        if (!(std::abs(r.x_best[0] - h) <= 1e-5 && std::abs(r.x_best[1] - h) <= 1e-5))
            return fail("circle: x = (" + format_double(r.x_best[0]) + ", " + format_double(r.x_best[1]) + ")");
    }
    {
        auto f = [](double x, double y) { return 10 * (y - x * x) * (y - x * x) + (1 - x) * (1 - x); };
        OptProblem p;
        p.x0 = {-1.0, 1.0};
        p.objective = [&](std::span<const double> x) { return f(x[0], x[1]); };
        p.constraints = {[](std::span<const double> x) { return 1 - x[0] - x[1]; }};
        const auto r = cobyla::minimize(p);
        const double grid = rosenbrock_grid_minimum();
        if (!(r.max_violation <= 1e-6 && std::abs(r.f_best - grid) <= 1e-3))
            return fail("rosenbrock: f = " + format_double(r.f_best) + ", grid " + format_double(grid));
        c.detail = "rosenbrock f " + format_double(r.f_best) + " vs grid " + format_double(grid);
    }
    return c;
}

}  // namespace detail

/// `n` scales the suite: n toy instances for the grid-mode comparison and
/// 20n random vectors for each numeric oracle. n = 0 checks nothing random.
inline Report run_checks(std::size_t n, std::uint64_t seed, Fault fault = Fault::None) {
    Report report;
    Rng rng(seed);
    report.checks.push_back(detail::check_skewness(20 * n, rng));
    report.checks.push_back(detail::check_mad(20 * n, rng, fault));
    report.checks.push_back(detail::check_mad_fallback(fault));
    report.checks.push_back(detail::check_manhattan());
    report.checks.push_back(detail::check_grid_mode(n, rng));
    report.checks.push_back(detail::check_cobyla());
    return report;
}

}  // namespace mastitis::oracle
