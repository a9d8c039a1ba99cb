#pragma once

// Feature schema and per-feature counterfactual policy.
//
// The catalog order is the vector layout used by every other component:
// feature vectors, model split indices, distance weights and reports.

#include "mastitis/core.hpp"

#include <cstddef>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

namespace mastitis {

enum class Confidence { Low, Medium, High, VeryHigh };

/// Where a feature value comes from when a vector is engineered.
enum class FeatureKind { Current, Skew30, Static, HistoryDerived };

inline std::string_view to_string(Confidence c) {
    switch (c) {
        case Confidence::Low: return "low";
        case Confidence::Medium: return "medium";
        case Confidence::High: return "high";
        case Confidence::VeryHigh: return "very_high";
    }
    return "?";
}

inline std::string_view to_string(FeatureKind k) {
    switch (k) {
        case FeatureKind::Current: return "current";
        case FeatureKind::Skew30: return "skew30";
        case FeatureKind::Static: return "static";
        case FeatureKind::HistoryDerived: return "history";
    }
    return "?";
}

struct FeatureSpec {
    std::string name;
    std::string unit;
    bool actionable = false;
    std::optional<int> actionable_time_days;
    Confidence confidence = Confidence::Low;
    std::optional<double> min_change;
    double lower_bound = 0.0;
    double upper_bound = 1.0;
    bool immutable = false;
    FeatureKind kind = FeatureKind::Current;

    double range() const { return upper_bound - lower_bound; }
    bool operator==(const FeatureSpec&) const = default;
};

/// Raised for malformed or invariant-violating catalogs. `line` is 0 when the
/// catalog was not read from a file.
class CatalogError : public std::runtime_error {
public:
    CatalogError(std::string feature, std::size_t line, const std::string& what)
        : std::runtime_error(describe(feature, line, what)), feature_(std::move(feature)), line_(line) {}

    const std::string& feature() const { return feature_; }
    std::size_t line() const { return line_; }

private:
    static std::string describe(const std::string& feature, std::size_t line, const std::string& what) {
        std::string s = "catalog";
        if (line > 0) s += " line " + std::to_string(line);
        if (!feature.empty()) s += " feature '" + feature + "'";
        return s + ": " + what;
    }

    std::string feature_;
    std::size_t line_;
};

/// Throws CatalogError when a single row breaks a field invariant.
inline void check_feature_spec(const FeatureSpec& s, std::size_t line) {
    if (s.name.empty()) throw CatalogError("", line, "empty feature name");
    if (!(s.lower_bound < s.upper_bound))
        throw CatalogError(s.name, line, "field 'lower' must be below field 'upper'");
    if (s.min_change) {
        if (!(*s.min_change > 0.0)) throw CatalogError(s.name, line, "field 'min_change' must be positive");
        if (!(*s.min_change < s.range()))
            throw CatalogError(s.name, line, "field 'min_change' must be smaller than upper - lower");
    }
    if (s.actionable_time_days && *s.actionable_time_days < 0)
        throw CatalogError(s.name, line, "field 'actionable_time_days' must be nonnegative");
    if (s.immutable && s.actionable)
        throw CatalogError(s.name, line, "field 'immutable' conflicts with 'actionable'");
}

class FeatureCatalog {
public:
    FeatureCatalog() = default;
    FeatureCatalog(std::vector<FeatureSpec> specs, std::string version)
        : specs_(std::move(specs)), version_(std::move(version)) {
        validate();
    }

    const std::vector<FeatureSpec>& specs() const { return specs_; }
    const std::string& version() const { return version_; }
    std::size_t size() const { return specs_.size(); }
    const FeatureSpec& operator[](std::size_t i) const { return specs_[i]; }

    std::optional<std::size_t> find(std::string_view name) const {
        for (std::size_t i = 0; i < specs_.size(); ++i)
            if (specs_[i].name == name) return i;
        return std::nullopt;
    }

    std::size_t index_of(std::string_view name) const {
        if (auto i = find(name)) return *i;
        throw std::out_of_range("unknown feature '" + std::string(name) + "'");
    }

    const FeatureSpec& spec(std::string_view name) const { return specs_[index_of(name)]; }

    bool operator==(const FeatureCatalog&) const = default;

private:
    void validate() const {
        std::unordered_set<std::string> seen;
        for (const auto& s : specs_) check_feature_spec(s, 0);
        for (const auto& s : specs_)
            if (!seen.insert(s.name).second) throw CatalogError(s.name, 0, "duplicate feature name");
    }

    std::vector<FeatureSpec> specs_;
    std::string version_;
};

inline const std::string& default_catalog_version() {
    static const std::string v = "mastitis-catalog-1";
    return v;
}

/// The canonical catalog: the sixteen herd-management features followed by a
/// 30-day skewness companion for each milk characteristic.
inline FeatureCatalog default_catalog() {
    using C = Confidence;
    using K = FeatureKind;
    auto f = [](std::string name, std::string unit, K kind, bool actionable, std::optional<int> days, C conf,
                std::optional<double> step, double lo, double hi, bool immutable) {
        return FeatureSpec{std::move(name), std::move(unit), actionable, days, conf, step, lo, hi, immutable, kind};
    };
    std::vector<FeatureSpec> specs{
        f("scc", "x1000 cells/ml", K::Current, false, {}, C::VeryHigh, 25.0, 0.0, 10000.0, false),
        f("yield", "kg", K::Current, true, {}, C::Low, 2.0, 0.0, 80.0, false),
        f("fat_pct", "percentage units", K::Current, true, 2, C::Low, 0.05, 1.5, 8.0, false),
        f("protein_pct", "percentage units", K::Current, true, 2, C::Low, 0.05, 1.5, 6.0, false),
        f("lactose_pct", "percentage units", K::Current, false, {}, C::Low, {}, 3.0, 6.0, false),
        f("urea", "mg/dl", K::Current, true, {}, C::Low, 1.0, 0.0, 100.0, false),
        f("bcs", "units", K::Current, true, 14, C::VeryHigh, 0.25, 1.0, 5.0, false),
        f("weight", "kg", K::Current, true, 7, C::Medium, 10.0, 300.0, 900.0, false),
        f("genetic_merit", "index points", K::Static, true, 1825, C::VeryHigh, {}, -200.0, 400.0, false),
        f("parity", "calvings", K::Static, false, {}, C::VeryHigh, {}, 1.0, 15.0, true),
        f("days_since_calving", "days", K::Static, false, {}, C::VeryHigh, {}, 0.0, 1000.0, true),
        f("calendar_month", "month", K::Static, false, {}, C::Low, {}, 1.0, 12.0, true),
        f("infections_stage_farm", "infections", K::HistoryDerived, false, {}, C::VeryHigh, {}, 0.0, 10000.0, true),
        f("infections_stage_cow", "infections", K::HistoryDerived, false, {}, C::VeryHigh, {}, 0.0, 50.0, true),
        f("infections_cow", "infections", K::HistoryDerived, false, {}, C::VeryHigh, {}, 0.0, 100.0, true),
        f("prop_infected_farm_year", "proportion", K::HistoryDerived, false, {}, C::VeryHigh, {}, 0.0, 1.0, true),
        f("yield_skew30", "skewness", K::Skew30, false, {}, C::Low, {}, -10.0, 10.0, true),
        f("fat_skew30", "skewness", K::Skew30, false, {}, C::Low, {}, -10.0, 10.0, true),
        f("protein_skew30", "skewness", K::Skew30, false, {}, C::Low, {}, -10.0, 10.0, true),
        f("lactose_skew30", "skewness", K::Skew30, false, {}, C::Low, {}, -10.0, 10.0, true),
        f("scc_skew30", "skewness", K::Skew30, false, {}, C::Low, {}, -10.0, 10.0, true),
        f("urea_skew30", "skewness", K::Skew30, false, {}, C::Low, {}, -10.0, 10.0, true),
    };
    return FeatureCatalog(std::move(specs), default_catalog_version());
}

/// Features a counterfactual may change: actionable ones, plus mutable
/// features carrying very high confidence for the farmer (SCC).
inline std::vector<std::size_t> eligible_features(const FeatureCatalog& catalog) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < catalog.size(); ++i) {
        const auto& s = catalog[i];
        if (s.actionable || (s.confidence == Confidence::VeryHigh && !s.immutable)) out.push_back(i);
    }
    return out;
}

/// Eligible features whose change can take effect within `max_actionable_days`.
/// Features without a stated actionable time always qualify.
inline std::vector<std::size_t> perturbable_features(const FeatureCatalog& catalog, int max_actionable_days) {
    std::vector<std::size_t> out;
    for (auto i : eligible_features(catalog)) {
        const auto& t = catalog[i].actionable_time_days;
        if (!t || *t <= max_actionable_days) out.push_back(i);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Policy file
//
//   # version: <catalog version>
//   name,unit,kind,actionable,actionable_time_days,confidence,min_change,lower,upper,immutable
//   scc,x1000 cells/ml,current,no,,very_high,25,0,10000,no
//
// '#' starts a comment line; optional fields may be left empty.
// ---------------------------------------------------------------------------

inline constexpr std::string_view kPolicyHeader =
    "name,unit,kind,actionable,actionable_time_days,confidence,min_change,lower,upper,immutable";

inline std::string serialize_catalog(const FeatureCatalog& catalog) {
    std::ostringstream os;
    os << "# version: " << catalog.version() << '\n' << kPolicyHeader << '\n';
    for (const auto& s : catalog.specs()) {
        os << s.name << ',' << s.unit << ',' << to_string(s.kind) << ',' << (s.actionable ? "yes" : "no") << ',';
        if (s.actionable_time_days) os << *s.actionable_time_days;
        os << ',' << to_string(s.confidence) << ',';
        if (s.min_change) os << format_double(*s.min_change);
        os << ',' << format_double(s.lower_bound) << ',' << format_double(s.upper_bound) << ','
           << (s.immutable ? "yes" : "no") << '\n';
    }
    return os.str();
}

inline FeatureCatalog parse_catalog(std::string_view text) {
    std::vector<FeatureSpec> specs;
    std::string version;
    bool header_seen = false;
    std::unordered_set<std::string> seen;
    std::size_t line_no = 0;
    std::istringstream in{std::string(text)};
    std::string raw;
    while (std::getline(in, raw)) {
        ++line_no;
        const auto line = trim(raw);
        if (line.empty()) continue;
        if (line.front() == '#') {
            constexpr std::string_view tag = "# version:";
            if (line.substr(0, tag.size()) == tag) version = std::string(trim(line.substr(tag.size())));
            continue;
        }
        if (!header_seen) {
            if (line != kPolicyHeader) throw CatalogError("", line_no, "unexpected header row");
            header_seen = true;
            continue;
        }
        const auto cells = split(line, ',');
        if (cells.size() != 10) throw CatalogError("", line_no, "expected 10 columns");
        FeatureSpec s;
        s.name = std::string(trim(cells[0]));
        auto field = [&](std::string_view what, auto&& fn) {
            try {
                fn();
            } catch (const CatalogError&) {
                throw;
            } catch (const std::exception& e) {
                throw CatalogError(s.name, line_no, "field '" + std::string(what) + "': " + e.what());
            }
        };
        auto yes_no = [](std::string_view v) {
            if (v == "yes") return true;
            if (v == "no") return false;
            throw std::invalid_argument("expected yes/no, got '" + std::string(v) + "'");
        };
        s.unit = std::string(trim(cells[1]));
        field("kind", [&] {
            const auto v = trim(cells[2]);
            if (v == "current") s.kind = FeatureKind::Current;
            else if (v == "skew30") s.kind = FeatureKind::Skew30;
            else if (v == "static") s.kind = FeatureKind::Static;
            else if (v == "history") s.kind = FeatureKind::HistoryDerived;
            else throw std::invalid_argument("unknown kind '" + std::string(v) + "'");
        });
        field("actionable", [&] { s.actionable = yes_no(trim(cells[3])); });
        field("actionable_time_days", [&] {
            if (auto v = trim(cells[4]); !v.empty()) s.actionable_time_days = int(parse_long(v));
        });
        field("confidence", [&] {
            const auto v = trim(cells[5]);
            if (v == "low") s.confidence = Confidence::Low;
            else if (v == "medium") s.confidence = Confidence::Medium;
            else if (v == "high") s.confidence = Confidence::High;
            else if (v == "very_high") s.confidence = Confidence::VeryHigh;
            else throw std::invalid_argument("unknown confidence '" + std::string(v) + "'");
        });
        field("min_change", [&] {
            if (auto v = trim(cells[6]); !v.empty()) s.min_change = parse_double(v);
        });
        field("lower", [&] { s.lower_bound = parse_double(trim(cells[7])); });
        field("upper", [&] { s.upper_bound = parse_double(trim(cells[8])); });
        field("immutable", [&] { s.immutable = yes_no(trim(cells[9])); });
        check_feature_spec(s, line_no);
        if (!seen.insert(s.name).second) throw CatalogError(s.name, line_no, "duplicate feature name");
        specs.push_back(std::move(s));
    }
    if (!header_seen) throw CatalogError("", line_no, "missing header row");
    if (version.empty()) throw CatalogError("", 0, "missing '# version:' line");
    return FeatureCatalog(std::move(specs), std::move(version));
}

inline void save_catalog(const FeatureCatalog& catalog, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write policy file " + path);
    out << serialize_catalog(catalog);
}

inline FeatureCatalog load_catalog(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read policy file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_catalog(ss.str());
}

}  // namespace mastitis
