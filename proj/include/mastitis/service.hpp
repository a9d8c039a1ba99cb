#pragma once

// HTTP service over one herd snapshot and one model.
//
//   GET  /api/herd           every cow's current risk, highest first
//   GET  /api/cows/{id}      feature vector, 30-day history, score
//   POST /api/explain        counterfactual + narration (audited)
//   POST /api/whatif         score a modified vector
//   POST /api/model/reload   swap in another model file
//
// Requests read one immutable State; a reload builds a new State and swaps
// the pointer, so no response can mix two models. Errors share one envelope:
// {"code", "message", "details"}.

#include "mastitis/cfx.hpp"
#include "mastitis/core.hpp"
#include "mastitis/dataset.hpp"
#include "mastitis/featcat.hpp"
#include "mastitis/gbm.hpp"
#include "mastitis/herd_csv.hpp"
#include "mastitis/narrate.hpp"
#include "mastitis/pipeline.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace mastitis {

struct ServiceConfig {
    std::filesystem::path data_dir;
    std::optional<std::filesystem::path> model_path;
    std::optional<std::filesystem::path> policy_file;
    std::optional<std::filesystem::path> audit_path;  // default: <data_dir>/audit.jsonl
    std::optional<std::filesystem::path> static_dir;
    std::uint64_t seed = 0;
    double request_timeout_seconds = 10.0;
};

struct ApiResponse {
    int status = 200;
    nlohmann::json body;
};

inline ApiResponse api_error(int status, const std::string& code, const std::string& message,
                             nlohmann::json details = nlohmann::json::object()) {
    return {status, {{"code", code}, {"message", message}, {"details", std::move(details)}}};
}

/// Herd data that never changes while the service runs.
struct HerdSnapshot {
    Herd herd;
    std::unique_ptr<HerdContext> context;  // points into `herd`
    std::map<std::string, FeatureVector> vectors;
    DistanceWeights weights;
};

struct LoadedModel {
    Ensemble model;
    std::string hash;
    std::string path;
};

struct ServiceState {
    std::shared_ptr<const FeatureCatalog> catalog;
    std::shared_ptr<const HerdSnapshot> snapshot;
    std::shared_ptr<const LoadedModel> model;  // null until a model loads
};

class Service {
public:
    explicit Service(ServiceConfig config) : config_(std::move(config)) {
        auto catalog = std::make_shared<const FeatureCatalog>(
            config_.policy_file ? load_catalog(config_.policy_file->string()) : default_catalog());
        auto snap = std::make_shared<HerdSnapshot>();
        snap->herd = load_csv(config_.data_dir);
        snap->context = std::make_unique<HerdContext>(snap->herd);
        snap->vectors = latest_vectors(*snap->context, *catalog);
        snap->weights = distance_weights(*snap, *catalog);

        auto state = std::make_shared<ServiceState>();
        state->catalog = catalog;
        state->snapshot = snap;
        if (config_.model_path) state->model = load(config_.model_path->string(), *catalog);
        state_ = state;

        audit_path_ = config_.audit_path ? *config_.audit_path : config_.data_dir / "audit.jsonl";
        install_routes();
    }

    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    std::shared_ptr<const ServiceState> state() const {
        std::lock_guard lock(state_mutex_);
        return state_;
    }

    httplib::Server& server() { return server_; }
    const std::filesystem::path& audit_path() const { return audit_path_; }

    // -- handlers, usable without a socket ---------------------------------

    ApiResponse herd() const {
        const auto s = state();
        if (!s->model) return no_model();
        auto rows = nlohmann::json::array();
        std::vector<std::pair<double, std::string>> order;
        for (const auto& [id, x] : s->snapshot->vectors) order.emplace_back(s->model->model.score(x.values), id);
        std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
        for (const auto& [score, id] : order) {
            const auto& x = s->snapshot->vectors.at(id);
            nlohmann::json top = nlohmann::json::object();
            for (const char* name : {"scc", "yield", "bcs", "weight"})
                if (auto j = s->catalog->find(name)) top[name] = x.values[*j];
            rows.push_back({{"cow_id", id},
                            {"as_of_date", x.as_of.iso()},
                            {"score", score},
                            {"class", class_name(score)},
                            {"top_feature_values", top}});
        }
        return {200, {{"model_hash", s->model->hash}, {"cows", rows}}};
    }

    ApiResponse cow(const std::string& id) const {
        const auto s = state();
        if (!s->model) return no_model();
        auto it = s->snapshot->vectors.find(id);
        if (it == s->snapshot->vectors.end()) return unknown_cow(id);
        const auto& x = it->second;
        const auto& catalog = *s->catalog;
        const double score = s->model->model.score(x.values);
        const auto eligible = eligible_features(catalog);

        auto features = nlohmann::json::array();
        for (std::size_t j = 0; j < catalog.size(); ++j) {
            const auto& spec = catalog[j];
            features.push_back({{"name", spec.name},
                                {"value", x.values[j]},
                                {"unit", spec.unit},
                                {"actionable", spec.actionable},
                                {"eligible", std::find(eligible.begin(), eligible.end(), j) != eligible.end()},
                                {"min_change", spec.min_change ? nlohmann::json(*spec.min_change) : nlohmann::json(nullptr)},
                                {"lower", spec.lower_bound},
                                {"upper", spec.upper_bound}});
        }

        // Raw milk series over the 30 days ending at the snapshot date.
        const auto& ctx = *s->snapshot->context;
        const auto milk = ctx.milk(*ctx.cow_index(id));
        auto dates = nlohmann::json::array();
        std::map<std::string, nlohmann::json> series;
        for (auto t : kMilkTraits) series[std::string(trait_feature(t))] = nlohmann::json::array();
        const Date first = x.as_of - (kHistoryWindowDays - 1);
        auto m = std::lower_bound(milk.begin(), milk.end(), first, [](const auto& r, Date d) { return r.date < d; });
        for (Date d = first; d <= x.as_of; d = d + 1) {
            dates.push_back(d.iso());
            const MilkRecording* rec = nullptr;
            while (m != milk.end() && m->date < d) ++m;
            if (m != milk.end() && m->date == d) rec = &*m;
            for (auto t : kMilkTraits) {
                const auto v = rec ? trait_value(*rec, t) : std::nullopt;
                series[std::string(trait_feature(t))].push_back(v ? nlohmann::json(*v) : nlohmann::json(nullptr));
            }
        }
        nlohmann::json history = {{"dates", dates}};
        for (auto& [k, v] : series) history[k] = std::move(v);

        return {200,
                {{"cow_id", id},
                 {"as_of_date", x.as_of.iso()},
                 {"score", score},
                 {"class", class_name(score)},
                 {"model_hash", s->model->hash},
                 {"features", features},
                 {"history", history}}};
    }

    ApiResponse explain(const nlohmann::json& request) const {
        const auto s = state();
        if (!s->model) return no_model();
        if (!request.is_object() || !request.contains("cow_id") || !request["cow_id"].is_string())
            return api_error(422, "invalid_request", "cow_id (string) is required");
        const std::string id = request["cow_id"];

        CfxConfig cfg;
        cfg.seed = config_.seed;
        if (request.contains("config")) {
            auto err = apply_overrides(request["config"], cfg);
            if (err) return *err;
        }
        auto it = s->snapshot->vectors.find(id);
        if (it == s->snapshot->vectors.end()) return unknown_cow(id);
        const auto& x = it->second;
        const auto& model = s->model->model;
        if (model.score(x.values) >= cfg.flip_threshold)
            return api_error(409, "already_sick", "cow " + id + " is already predicted to succumb to mastitis",
                             {{"score", model.score(x.values)}});

        SearchLimits limits;
        limits.deadline = std::chrono::steady_clock::now() +
                          std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                              std::chrono::duration<double>(config_.request_timeout_seconds));
        CounterfactualResult result;
        try {
            result = find_counterfactual(model, x, *s->catalog, s->snapshot->weights, cfg, limits);
        } catch (const CfxTimeout& e) {
            return api_error(504, "timeout", e.what());
        }

        nlohmann::json body = {{"cow_id", id},
                               {"model_hash", s->model->hash},
                               {"result", to_json(result, *s->catalog, x.values)}};
        body["narration"] = result.status == CfxStatus::Found
                                ? nlohmann::json(render(id, result, *s->catalog, default_style(NumberStyle::Digits)))
                                : nlohmann::json(nullptr);
        audit({{"timestamp", utc_timestamp()},
               {"cow_id", id},
               {"model_hash", s->model->hash},
               {"result_hash", hex64(fnv1a(body["result"].dump()))}});
        return {200, body};
    }

    ApiResponse whatif(const nlohmann::json& request) const {
        const auto s = state();
        if (!s->model) return no_model();
        if (!request.is_object() || !request.contains("cow_id") || !request["cow_id"].is_string())
            return api_error(422, "invalid_request", "cow_id (string) is required");
        const std::string id = request["cow_id"];
        auto it = s->snapshot->vectors.find(id);
        if (it == s->snapshot->vectors.end()) return unknown_cow(id);
        const auto& catalog = *s->catalog;

        std::vector<double> v = it->second.values;
        const auto overrides = request.value("overrides", nlohmann::json::object());
        if (!overrides.is_object()) return api_error(422, "invalid_request", "overrides must be an object");
        for (const auto& [name, spec_json] : overrides.items()) {
            const auto j = catalog.find(name);
            if (!j) return api_error(422, "unknown_feature", "unknown feature '" + name + "'", {{"feature", name}});
            const auto& spec = catalog[*j];
            double value = 0.0;
            if (spec_json.is_number()) {
                value = spec_json.get<double>();
            } else if (spec_json.is_object() && spec_json.size() == 1 && spec_json.contains("value") &&
                       spec_json["value"].is_number()) {
                value = spec_json["value"].get<double>();
            } else if (spec_json.is_object() && spec_json.size() == 1 && spec_json.contains("delta") &&
                       spec_json["delta"].is_number()) {
                value = it->second.values[*j] + spec_json["delta"].get<double>();
            } else {
                return api_error(422, "invalid_override",
                                 "override for '" + name + "' must be a number, {\"value\": x} or {\"delta\": d}",
                                 {{"feature", name}});
            }
            if (!(value >= spec.lower_bound && value <= spec.upper_bound))
                return api_error(422, "out_of_bounds",
                                 "feature '" + name + "' value " + format_double(value) + " outside [" +
                                     format_double(spec.lower_bound) + ", " + format_double(spec.upper_bound) + "]",
                                 {{"feature", name}, {"value", value}});
            v[*j] = value;
        }
        const double score = s->model->model.score(v);
        nlohmann::json vec = nlohmann::json::object();
        for (std::size_t j = 0; j < catalog.size(); ++j) vec[catalog[j].name] = v[j];
        return {200,
                {{"cow_id", id}, {"score", score}, {"class", class_name(score)}, {"model_hash", s->model->hash}, {"vector", vec}}};
    }

    ApiResponse reload(const nlohmann::json& request) {
        if (!request.is_object() || !request.contains("model_path") || !request["model_path"].is_string())
            return api_error(422, "invalid_request", "model_path (string) is required");
        const std::string path = request["model_path"];
        std::lock_guard reload_lock(reload_mutex_);
        const auto current = state();
        std::shared_ptr<const LoadedModel> loaded;
        try {
            loaded = load(path, *current->catalog);
        } catch (const CatalogVersionError& e) {
            return api_error(422, "catalog_mismatch", e.what(), {{"model_path", path}});
        } catch (const std::exception& e) {
            return api_error(500, "model_load_failed", e.what(), {{"model_path", path}});
        }
        auto next = std::make_shared<ServiceState>(*current);
        next->model = loaded;
        {
            std::lock_guard lock(state_mutex_);
            state_ = next;
        }
        return {200, {{"model_hash", loaded->hash}, {"catalog_version", loaded->model.catalog_version}, {"model_path", path}}};
    }

private:
    static std::shared_ptr<const LoadedModel> load(const std::string& path, const FeatureCatalog& catalog) {
        auto m = std::make_shared<LoadedModel>();
        m->model = load_model(path, catalog.version());
        if (m->model.n_features != catalog.size())
            throw CatalogVersionError("model has " + std::to_string(m->model.n_features) + " features, catalog has " +
                                      std::to_string(catalog.size()));
        m->hash = model_hash(m->model);
        m->path = path;
        return m;
    }

    static DistanceWeights distance_weights(const HerdSnapshot& snap, const FeatureCatalog& catalog) {
        // Every featurisable cow-day in the herd serves as the reference sample.
        std::vector<LabeledInstance> rows;
        try {
            rows = label_instances(snap.herd, *snap.context, 1, catalog);
        } catch (const std::invalid_argument&) {
        }
        if (rows.size() < 2) {
            for (const auto& [id, x] : snap.vectors) rows.push_back({x, Label::Healthy, 1, std::nullopt});
        }
        if (rows.size() < 2) {
            // Too little data for a MAD: unit scale per feature range.
            DistanceWeights w;
            for (const auto& s : catalog.specs()) {
                w.mad.push_back(0.0);
                w.w.push_back(1.0 / s.range());
            }
            return w;
        }
        return weights_from_instances(rows, catalog);
    }

    static std::string class_name(double score) { return score >= 0.5 ? "sick" : "healthy"; }

    static ApiResponse no_model() { return api_error(503, "model_not_loaded", "no model is loaded"); }

    static ApiResponse unknown_cow(const std::string& id) {
        return api_error(404, "unknown_cow", "no cow with id '" + id + "'", {{"cow_id", id}});
    }

    static std::optional<ApiResponse> apply_overrides(const nlohmann::json& o, CfxConfig& cfg) {
        if (!o.is_object()) return api_error(422, "invalid_config", "config must be an object");
        try {
            for (const auto& [key, value] : o.items()) {
                if (key == "max_changes") cfg.max_changes = value.get<int>();
                else if (key == "flip_threshold") cfg.flip_threshold = value.get<double>();
                else if (key == "flip_margin") cfg.flip_margin = value.get<double>();
                else if (key == "n_restarts") cfg.n_restarts = value.get<int>();
                else if (key == "grid_mode") cfg.grid_mode = value.get<bool>();
                else return api_error(422, "invalid_config", "unknown config key '" + key + "'", {{"key", key}});
            }
            cfg.validate();
        } catch (const nlohmann::json::exception& e) {
            return api_error(422, "invalid_config", e.what());
        } catch (const std::invalid_argument& e) {
            return api_error(422, "invalid_config", e.what());
        }
        if (cfg.grid_mode) return api_error(422, "invalid_config", "grid_mode is not available over HTTP");
        return std::nullopt;
    }

    static std::string utc_timestamp() {
        const auto now = std::chrono::time_point_cast<std::chrono::seconds>(std::chrono::system_clock::now());
        const auto days = std::chrono::floor<std::chrono::days>(now);
        const std::chrono::hh_mm_ss hms(now - days);
        char buf[16];
        std::snprintf(buf, sizeof buf, "T%02d:%02d:%02dZ", int(hms.hours().count()), int(hms.minutes().count()),
                      int(hms.seconds().count()));
        return Date(std::chrono::sys_days(days)).iso() + buf;
    }

    void audit(const nlohmann::json& record) const {
        std::lock_guard lock(audit_mutex_);
        std::ofstream out(audit_path_, std::ios::app | std::ios::binary);
        out << record.dump() << '\n';
    }

    static void reply(httplib::Response& res, const ApiResponse& r) {
        res.status = r.status;
        res.set_content(r.body.dump(), "application/json");
    }

    static std::optional<nlohmann::json> body_json(const httplib::Request& req, httplib::Response& res) {
        try {
            return nlohmann::json::parse(req.body.empty() ? std::string("{}") : req.body);
        } catch (const nlohmann::json::exception& e) {
            reply(res, api_error(400, "bad_json", std::string("request body is not valid JSON: ") + e.what()));
            return std::nullopt;
        }
    }

    void install_routes() {
        server_.Get("/api/herd", [this](const httplib::Request&, httplib::Response& res) { reply(res, herd()); });
        server_.Get(R"(/api/cows/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
            reply(res, cow(req.matches[1].str()));
        });
        server_.Post("/api/explain", [this](const httplib::Request& req, httplib::Response& res) {
            if (auto j = body_json(req, res)) reply(res, explain(*j));
        });
        server_.Post("/api/whatif", [this](const httplib::Request& req, httplib::Response& res) {
            if (auto j = body_json(req, res)) reply(res, whatif(*j));
        });
        server_.Post("/api/model/reload", [this](const httplib::Request& req, httplib::Response& res) {
            if (auto j = body_json(req, res)) reply(res, reload(*j));
        });
        server_.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
            std::string what = "unexpected error";
            try {
                if (ep) std::rethrow_exception(ep);
            } catch (const std::exception& e) {
                what = e.what();
            } catch (...) {
            }
            reply(res, api_error(500, "internal_error", what));
        });
        if (config_.static_dir && std::filesystem::is_directory(*config_.static_dir))
            server_.set_mount_point("/", config_.static_dir->string());
    }

    ServiceConfig config_;
    std::filesystem::path audit_path_;
    mutable std::mutex state_mutex_;
    mutable std::mutex audit_mutex_;
    std::mutex reload_mutex_;
    std::shared_ptr<const ServiceState> state_;
    httplib::Server server_;
};

}  // namespace mastitis
