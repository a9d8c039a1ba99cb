#pragma once

// Gradient-boosted regression trees with a logistic link.
//
// Stage-wise fit of depth-limited trees to the logistic loss. Splits are exact
// greedy over presorted columns, scored by the second-order gain; leaves take
// one Newton step -G / (H + lambda). Sick is the positive class.

#include "mastitis/core.hpp"
#include "mastitis/dataset.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mastitis {

struct TreeNode {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    bool default_left = true;  // taken when the feature value is NaN
    double value = 0.0;        // leaf log-odds contribution

    bool is_leaf() const { return feature < 0; }
    bool operator==(const TreeNode&) const = default;
};

/// Flat tree; node 0 is the root and children always follow their parent.
struct Tree {
    std::vector<TreeNode> nodes;

    double evaluate(std::span<const double> x) const {
        int i = 0;
        while (!nodes[std::size_t(i)].is_leaf()) {
            const auto& n = nodes[std::size_t(i)];
            const double v = x[std::size_t(n.feature)];
            i = std::isnan(v) ? (n.default_left ? n.left : n.right) : (v < n.threshold ? n.left : n.right);
        }
        return nodes[std::size_t(i)].value;
    }

    int depth() const { return depth_from(0); }

    bool operator==(const Tree&) const = default;

private:
    int depth_from(int i) const {
        const auto& n = nodes[std::size_t(i)];
        if (n.is_leaf()) return 0;
        return 1 + std::max(depth_from(n.left), depth_from(n.right));
    }
};

struct TrainConfig {
    int n_trees = 100;
    int max_depth = 3;
    int min_samples_leaf = 100;
    double learning_rate = 0.1;
    double subsample_fraction = 0.8;
    std::uint64_t seed = 7;
    double positive_class_weight = 0.0;  // 0 balances the classes: n_negative / n_positive
    double lambda = 1.0;

    void validate() const {
        if (n_trees < 0) throw std::invalid_argument("n_trees must be >= 0");
        if (max_depth < 1) throw std::invalid_argument("max_depth must be >= 1");
        if (min_samples_leaf < 1) throw std::invalid_argument("min_samples_leaf must be >= 1");
        if (!(learning_rate > 0 && learning_rate <= 1)) throw std::invalid_argument("learning_rate must be in (0,1]");
        if (!(subsample_fraction > 0 && subsample_fraction <= 1))
            throw std::invalid_argument("subsample_fraction must be in (0,1]");
        if (!(positive_class_weight >= 0)) throw std::invalid_argument("positive_class_weight must be >= 0");
        if (!(lambda >= 0)) throw std::invalid_argument("lambda must be >= 0");
    }
    bool operator==(const TrainConfig&) const = default;
};

class DimensionError : public std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// P(Sick) = sigmoid(base_score + learning_rate * sum of tree outputs).
struct Ensemble {
    std::vector<Tree> trees;
    double learning_rate = 0.1;
    double base_score = 0.0;
    std::size_t n_features = 0;
    std::string catalog_version;
    TrainConfig config;

    double margin(std::span<const double> x) const {
        if (x.size() != n_features)
            throw DimensionError("model expects " + std::to_string(n_features) + " features, got " +
                                 std::to_string(x.size()));
        double sum = 0.0;
        for (const auto& t : trees) sum += t.evaluate(x);
        return base_score + learning_rate * sum;
    }

    double score(std::span<const double> x) const {
        // Clamp keeps the output strictly inside (0,1) in double precision.
        return std::clamp(sigmoid(margin(x)), 1e-15, 1.0 - 1e-15);
    }

    bool operator==(const Ensemble&) const = default;
};

inline double predict_score(const Ensemble& model, const FeatureVector& x) { return model.score(x.values); }

inline Label classify(const Ensemble& model, std::span<const double> x, double threshold) {
    if (!(threshold > 0 && threshold < 1)) throw std::invalid_argument("threshold must be in (0,1)");
    return model.score(x) >= threshold ? Label::Sick : Label::Healthy;
}

inline Label classify(const Ensemble& model, const FeatureVector& x, double threshold) {
    return classify(model, std::span<const double>(x.values), threshold);
}

/// Per-stage weighted logistic loss on the training rows (entry 0 is the prior).
struct TrainReport {
    std::vector<double> loss_per_stage;
    double positive_rate = 0.0;
    double positive_class_weight = 0.0;  // as applied
};

/// Row-major design matrix with 0/1 labels.
struct TrainingSet {
    std::vector<double> values;
    std::vector<int> labels;
    std::size_t n_features = 0;

    std::size_t rows() const { return labels.size(); }
    std::span<const double> row(std::size_t i) const { return {values.data() + i * n_features, n_features}; }

    void add(std::span<const double> x, int label) {
        if (n_features == 0 && labels.empty()) n_features = x.size();
        if (x.size() != n_features) throw DimensionError("inconsistent row width in training set");
        values.insert(values.end(), x.begin(), x.end());
        labels.push_back(label);
    }

    static TrainingSet from(std::span<const LabeledInstance> instances) {
        TrainingSet set;
        for (const auto& inst : instances) set.add(inst.x.values, inst.label == Label::Sick ? 1 : 0);
        return set;
    }
};

namespace detail {

struct SplitCandidate {
    double gain = 0.0;
    int feature = -1;
    double threshold = 0.0;
    bool default_left = true;
};

struct NodeStats {
    double g = 0.0, h = 0.0;
    std::size_t count = 0;
};

inline double weighted_logloss(const TrainingSet& data, const std::vector<double>& margins, double pos_weight) {
    double loss = 0.0, wsum = 0.0;
    for (std::size_t i = 0; i < data.rows(); ++i) {
        const double w = data.labels[i] ? pos_weight : 1.0;
        const double m = margins[i];
        // log(1 + exp(-m)) for positives, log(1 + exp(m)) for negatives.
        const double z = data.labels[i] ? -m : m;
        loss += w * (z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)));
        wsum += w;
    }
    return loss / wsum;
}

}  // namespace detail

inline Ensemble train(const TrainingSet& data, const TrainConfig& config, const std::string& catalog_version,
                      TrainReport* report = nullptr) {
    config.validate();
    const std::size_t n = data.rows();
    const std::size_t nf = data.n_features;
    if (n == 0) throw std::invalid_argument("train: empty input");
    const auto positives = std::size_t(std::count(data.labels.begin(), data.labels.end(), 1));
    if (positives == 0 || positives == n) throw std::invalid_argument("train: input contains a single class");

    Ensemble model;
    model.learning_rate = config.learning_rate;
    model.n_features = nf;
    model.catalog_version = catalog_version;
    model.config = config;
    const double rate = double(positives) / double(n);
    model.base_score = std::log(rate / (1.0 - rate));
    const double pos_weight =
        config.positive_class_weight > 0 ? config.positive_class_weight : double(n - positives) / double(positives);

    // Presorted row order per feature; ties keep row order.
    std::vector<std::vector<std::uint32_t>> order(nf);
    std::vector<std::vector<double>> sorted_values(nf);
    for (std::size_t f = 0; f < nf; ++f) {
        auto& o = order[f];
        o.resize(n);
        std::iota(o.begin(), o.end(), 0u);
        std::stable_sort(o.begin(), o.end(),
                         [&](std::uint32_t a, std::uint32_t b) { return data.values[a * nf + f] < data.values[b * nf + f]; });
        sorted_values[f].reserve(n);
        for (auto i : o) sorted_values[f].push_back(data.values[std::size_t(i) * nf + f]);
    }

    std::vector<double> margins(n, model.base_score), grad(n), hess(n);
    std::vector<int> node_of(n);
    Rng rng(config.seed);
    if (report) {
        report->positive_rate = rate;
        report->positive_class_weight = pos_weight;
        report->loss_per_stage.assign(1, detail::weighted_logloss(data, margins, pos_weight));
    }

    for (int t = 0; t < config.n_trees; ++t) {
        for (std::size_t i = 0; i < n; ++i) {
            const double w = data.labels[i] ? pos_weight : 1.0;
            const double p = sigmoid(margins[i]);
            grad[i] = w * (p - data.labels[i]);
            hess[i] = std::max(w * p * (1.0 - p), 1e-16);
            node_of[i] = config.subsample_fraction >= 1.0 || rng.uniform() < config.subsample_fraction ? 0 : -1;
        }

        Tree tree;
        tree.nodes.emplace_back();
        std::vector<detail::NodeStats> stats(1);
        for (std::size_t i = 0; i < n; ++i)
            if (node_of[i] == 0) {
                stats[0].g += grad[i];
                stats[0].h += hess[i];
                ++stats[0].count;
            }
        std::vector<int> frontier{0};

        for (int depth = 0; depth < config.max_depth && !frontier.empty(); ++depth) {
            std::vector<int> slot(tree.nodes.size(), -1);  // node -> frontier position
            for (std::size_t k = 0; k < frontier.size(); ++k) slot[std::size_t(frontier[k])] = int(k);
            std::vector<detail::SplitCandidate> best(frontier.size());

            const double lambda = config.lambda;
            auto score = [lambda](double g, double h) { return g * g / (h + lambda); };
            std::vector<detail::NodeStats> left(frontier.size());
            std::vector<double> last_value(frontier.size());
            std::vector<char> started(frontier.size());
            for (std::size_t f = 0; f < nf; ++f) {
                std::fill(left.begin(), left.end(), detail::NodeStats{});
                std::fill(started.begin(), started.end(), false);
                const auto& col = order[f];
                for (std::size_t r = 0; r < n; ++r) {
                    const auto i = col[r];
                    const int node = node_of[i];
                    if (node < 0) continue;
                    const int k = slot[std::size_t(node)];
                    if (k < 0) continue;
                    const double v = sorted_values[f][r];
                    auto& l = left[std::size_t(k)];
                    if (started[std::size_t(k)] && v > last_value[std::size_t(k)]) {
                        const auto& total = stats[std::size_t(node)];
                        const std::size_t right_count = total.count - l.count;
                        if (l.count >= std::size_t(config.min_samples_leaf) &&
                            right_count >= std::size_t(config.min_samples_leaf)) {
                            const double gl = l.g, hl = l.h, gr = total.g - l.g, hr = total.h - l.h;
                            const double gain = 0.5 * (score(gl, hl) + score(gr, hr) - score(total.g, total.h));
                            auto& b = best[std::size_t(k)];
                            if (gain > b.gain + 1e-12) {
                                const double thr = 0.5 * (last_value[std::size_t(k)] + v);
                                b = {gain, int(f), thr > last_value[std::size_t(k)] ? thr : v, hl >= hr};
                            }
                        }
                    }
                    l.g += grad[i];
                    l.h += hess[i];
                    ++l.count;
                    last_value[std::size_t(k)] = v;
                    started[std::size_t(k)] = true;
                }
            }

            std::vector<int> next;
            for (std::size_t k = 0; k < frontier.size(); ++k) {
                const auto& b = best[k];
                if (b.feature < 0) continue;
                const int node = frontier[k];
                const int l = int(tree.nodes.size());
                tree.nodes.emplace_back();
                tree.nodes.emplace_back();
                stats.resize(tree.nodes.size());
                auto& parent = tree.nodes[std::size_t(node)];
                parent.feature = b.feature;
                parent.threshold = b.threshold;
                parent.default_left = b.default_left;
                parent.left = l;
                parent.right = l + 1;
                next.push_back(l);
                next.push_back(l + 1);
            }
            if (next.empty()) break;
            for (std::size_t i = 0; i < n; ++i) {
                const int node = node_of[i];
                if (node < 0) continue;
                const auto& p = tree.nodes[std::size_t(node)];
                if (p.is_leaf() || slot[std::size_t(node)] < 0) continue;
                const int child = data.values[i * nf + std::size_t(p.feature)] < p.threshold ? p.left : p.right;
                node_of[i] = child;
                auto& s = stats[std::size_t(child)];
                s.g += grad[i];
                s.h += hess[i];
                ++s.count;
            }
            frontier = std::move(next);
        }

        for (std::size_t j = 0; j < tree.nodes.size(); ++j)
            if (tree.nodes[j].is_leaf()) tree.nodes[j].value = -stats[j].g / (stats[j].h + config.lambda);

        for (std::size_t i = 0; i < n; ++i) margins[i] += config.learning_rate * tree.evaluate(data.row(i));
        model.trees.push_back(std::move(tree));
        if (report)
            report->loss_per_stage.push_back(detail::weighted_logloss(data, margins, pos_weight));
    }
    return model;
}

inline Ensemble train(std::span<const LabeledInstance> instances, const TrainConfig& config,
                      const std::string& catalog_version, TrainReport* report = nullptr) {
    if (instances.empty()) throw std::invalid_argument("train: empty input");
    return train(TrainingSet::from(instances), config, catalog_version, report);
}

// ---------------------------------------------------------------------------
// Model file
//
// {
//   "format": "mastitis-gbm", "format_version": 1,
//   "catalog_version": text, "n_features": int,
//   "base_score": real, "learning_rate": real,
//   "config": {n_trees, max_depth, min_samples_leaf, learning_rate,
//              subsample_fraction, seed, positive_class_weight, lambda},
//   "trees": [ { "feature": [int], "threshold": [real], "left": [int],
//                "right": [int], "default_left": [bool], "value": [real] } ]
// }
//
// Parallel arrays per tree, one entry per node, node 0 the root. feature = -1
// marks a leaf; the row goes left when value < threshold. Reals are written
// in shortest round-trip form so predictions survive a reload bit for bit.
// ---------------------------------------------------------------------------

class ModelFormatError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

class CatalogVersionError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline constexpr int kModelFormatVersion = 1;

inline nlohmann::json to_json(const TrainConfig& c) {
    return {{"n_trees", c.n_trees},
            {"max_depth", c.max_depth},
            {"min_samples_leaf", c.min_samples_leaf},
            {"learning_rate", c.learning_rate},
            {"subsample_fraction", c.subsample_fraction},
            {"seed", c.seed},
            {"positive_class_weight", c.positive_class_weight},
            {"lambda", c.lambda}};
}

/// Missing keys keep their defaults.
inline TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.n_trees = j.value("n_trees", c.n_trees);
    c.max_depth = j.value("max_depth", c.max_depth);
    c.min_samples_leaf = j.value("min_samples_leaf", c.min_samples_leaf);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.subsample_fraction = j.value("subsample_fraction", c.subsample_fraction);
    c.seed = j.value("seed", c.seed);
    c.positive_class_weight = j.value("positive_class_weight", c.positive_class_weight);
    c.lambda = j.value("lambda", c.lambda);
    return c;
}

inline nlohmann::json to_json(const Ensemble& m) {
    nlohmann::json trees = nlohmann::json::array();
    for (const auto& t : m.trees) {
        nlohmann::json feature = nlohmann::json::array(), threshold = nlohmann::json::array(),
                       left = nlohmann::json::array(), right = nlohmann::json::array(),
                       def = nlohmann::json::array(), value = nlohmann::json::array();
        for (const auto& n : t.nodes) {
            feature.push_back(n.feature);
            threshold.push_back(n.threshold);
            left.push_back(n.left);
            right.push_back(n.right);
            def.push_back(n.default_left);
            value.push_back(n.value);
        }
        trees.push_back({{"feature", feature},
                         {"threshold", threshold},
                         {"left", left},
                         {"right", right},
                         {"default_left", def},
                         {"value", value}});
    }
    return {{"format", "mastitis-gbm"},
            {"format_version", kModelFormatVersion},
            {"catalog_version", m.catalog_version},
            {"n_features", m.n_features},
            {"base_score", m.base_score},
            {"learning_rate", m.learning_rate},
            {"config", to_json(m.config)},
            {"trees", trees}};
}

inline Ensemble ensemble_from_json(const nlohmann::json& j) {
    try {
        if (j.at("format").get<std::string>() != "mastitis-gbm") throw ModelFormatError("not a mastitis-gbm model");
        if (j.at("format_version").get<int>() != kModelFormatVersion)
            throw ModelFormatError("unsupported model format_version");
        Ensemble m;
        m.catalog_version = j.at("catalog_version").get<std::string>();
        m.n_features = j.at("n_features").get<std::size_t>();
        m.base_score = j.at("base_score").get<double>();
        m.learning_rate = j.at("learning_rate").get<double>();
        m.config = train_config_from_json(j.at("config"));
        for (const auto& jt : j.at("trees")) {
            const auto feature = jt.at("feature").get<std::vector<int>>();
            const auto threshold = jt.at("threshold").get<std::vector<double>>();
            const auto left = jt.at("left").get<std::vector<int>>();
            const auto right = jt.at("right").get<std::vector<int>>();
            const auto def = jt.at("default_left").get<std::vector<bool>>();
            const auto value = jt.at("value").get<std::vector<double>>();
            const auto count = feature.size();
            if (count == 0 || threshold.size() != count || left.size() != count || right.size() != count ||
                def.size() != count || value.size() != count)
                throw ModelFormatError("tree arrays have inconsistent lengths");
            Tree t;
            for (std::size_t i = 0; i < count; ++i) {
                TreeNode n{feature[i], threshold[i], left[i], right[i], def[i], value[i]};
                if (!n.is_leaf()) {
                    if (std::size_t(n.feature) >= m.n_features) throw ModelFormatError("split feature out of range");
                    if (n.left <= int(i) || n.right <= int(i) || std::size_t(n.left) >= count ||
                        std::size_t(n.right) >= count)
                        throw ModelFormatError("child index out of range");
                }
                t.nodes.push_back(n);
            }
            m.trees.push_back(std::move(t));
        }
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw ModelFormatError(std::string("malformed model document: ") + e.what());
    }
}

inline std::string serialize_model(const Ensemble& m) { return to_json(m).dump() + "\n"; }

inline std::string model_hash(const Ensemble& m) { return hex64(fnv1a(serialize_model(m))); }

inline void save_model(const Ensemble& m, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write model file " + path);
    out << serialize_model(m);
}

/// Throws ModelFormatError for unreadable files and CatalogVersionError when
/// `expected_catalog_version` is non-empty and differs from the file.
inline Ensemble load_model(const std::string& path, const std::string& expected_catalog_version = {}) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ModelFormatError("cannot read model file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(ss.str());
    } catch (const nlohmann::json::exception& e) {
        throw ModelFormatError("model file " + path + " does not parse: " + e.what());
    }
    auto m = ensemble_from_json(j);
    if (!expected_catalog_version.empty() && m.catalog_version != expected_catalog_version)
        throw CatalogVersionError("model catalog_version '" + m.catalog_version + "' does not match catalog '" +
                                  expected_catalog_version + "'");
    return m;
}

}  // namespace mastitis
