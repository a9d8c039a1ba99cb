// mastitis: synthesise a herd, train, evaluate, explain, check oracles, serve.
//
// Exit codes: 0 success, 2 usage or configuration error, 3 domain
// precondition (the cow is already predicted to succumb), 1 anything else.

#include "mastitis/cfx.hpp"
#include "mastitis/evalkit.hpp"
#include "mastitis/featcat.hpp"
#include "mastitis/gbm.hpp"
#include "mastitis/herd_csv.hpp"
#include "mastitis/narrate.hpp"
#include "mastitis/oracles.hpp"
#include "mastitis/pipeline.hpp"
#include "mastitis/service.hpp"
#include "mastitis/synth.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <chrono>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

namespace fs = std::filesystem;
using namespace mastitis;

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 2;
constexpr int kPrecondition = 3;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

nlohmann::json read_json_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw UsageError("cannot open " + path);
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw UsageError(path + ": " + e.what());
    }
}

FeatureCatalog catalog_from(const std::string& policy_file) {
    return policy_file.empty() ? default_catalog() : load_catalog(policy_file);
}

Herd herd_from(const std::string& dir) {
    if (!fs::is_directory(dir)) throw UsageError("data directory " + dir + " does not exist");
    return load_csv(dir);
}

std::optional<Date> date_opt(const std::string& s) {
    if (s.empty()) return std::nullopt;
    return Date::parse(s);
}

void print_curve(const HorizonCurve& curve) {
    std::cout << "horizon_recall";
    for (const auto& p : curve.points) std::cout << " h" << p.horizon_days << '=' << format_double(p.proportion_found);
    std::cout << " (infections " << (curve.points.empty() ? 0 : curve.points.front().n_infections) << ")\n";
}

// -- synth --------------------------------------------------------------------

struct SynthArgs {
    std::string config, out;
    std::uint64_t seed = 1;
};

int cmd_synth(const SynthArgs& a) {
    SynthConfig config;
    try {
        if (!a.config.empty()) config = synth_config_from_json(read_json_file(a.config));
        config.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(std::string("invalid synth config: ") + e.what());
    } catch (const nlohmann::json::exception& e) {
        throw UsageError(std::string("invalid synth config: ") + e.what());
    }
    const auto herd = generate_herd(config, a.seed);
    save_csv(herd, a.out);
    std::size_t events = 0;
    for (const auto& c : herd.cows) events += c.infections.size();
    std::cout << "wrote " << herd.cows.size() << " cows, " << herd.milk.size() << " milk recordings, " << events
              << " infection events to " << a.out << '\n';
    return kOk;
}

// -- train --------------------------------------------------------------------

struct TrainArgs {
    std::string data_dir, config, out_model, split_date, policy_file, metrics;
};

int cmd_train(const TrainArgs& a) {
    const auto catalog = catalog_from(a.policy_file);
    TrainConfig config;
    if (!a.config.empty()) {
        try {
            config = train_config_from_json(read_json_file(a.config));
            config.validate();
        } catch (const std::exception& e) {
            throw UsageError(std::string("invalid train config: ") + e.what());
        }
    }
    const auto herd = herd_from(a.data_dir);
    const auto split = prepare(herd, catalog, date_opt(a.split_date));
    if (!has_both_classes(split.train))
        throw UsageError("training rows before " + split.split.iso() + " contain a single class; choose another --split-date");

    TrainReport report;
    const auto model = train(split.train, config, catalog.version(), &report);
    save_model(model, a.out_model);

    nlohmann::json metrics = {{"split_date", split.split.iso()},
                              {"n_train", split.train.size()},
                              {"n_test", split.test.size()},
                              {"positive_class_weight", report.positive_class_weight},
                              {"train_auc", auc(model, split.train)},
                              {"model_hash", model_hash(model)}};
    std::cout << "split " << split.split.iso() << ": " << split.train.size() << " train rows, " << split.test.size()
              << " test rows\n";
    std::cout << "train_auc " << format_double(metrics["train_auc"].get<double>()) << '\n';
    if (has_both_classes(split.test)) {
        metrics["test_auc"] = auc(model, split.test);
        std::cout << "test_auc " << format_double(metrics["test_auc"].get<double>()) << '\n';
        try {
            const auto curve = horizon_recall(model, split.test);
            metrics["horizon_curve"] = to_json(curve);
            print_curve(curve);
        } catch (const std::invalid_argument& e) {
            std::cout << "horizon_recall unavailable: " << e.what() << '\n';
        }
    } else {
        std::cout << "test rows contain a single class; no test metrics\n";
    }
    if (!a.metrics.empty()) std::ofstream(a.metrics, std::ios::binary) << metrics.dump(2) << '\n';
    std::cout << "model " << a.out_model << " hash " << model_hash(model) << '\n';
    return kOk;
}

// -- eval ---------------------------------------------------------------------

struct EvalArgs {
    std::string model, data_dir, report_dir, split_date, policy_file;
    std::size_t sample_n = 200;
    double confidence = 0.8;
    std::uint64_t sample_seed = 1, seed = 0;
};

int cmd_eval(const EvalArgs& a) {
    const auto catalog = catalog_from(a.policy_file);
    Ensemble model;
    try {
        model = load_model(a.model, catalog.version());
    } catch (const CatalogVersionError& e) {
        throw UsageError(e.what());
    }
    const auto herd = herd_from(a.data_dir);
    const auto split = prepare(herd, catalog, date_opt(a.split_date));

    EvalOptions options;
    options.sample_n = a.sample_n;
    options.min_healthy_confidence = a.confidence;
    options.sample_seed = a.sample_seed;
    options.cfx.seed = a.seed;
    const auto t0 = std::chrono::steady_clock::now();
    const auto out = evaluate(model, split, catalog, options);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    export_report(out.curve, out.shift, a.report_dir,
                  {{"model_hash", model_hash(model)},
                   {"split_date", split.split.iso()},
                   {"test_auc", out.test_auc},
                   {"min_healthy_confidence", a.confidence},
                   {"sample_seed", a.sample_seed},
                   {"eligible_pool", out.eligible_pool}});
    std::cout << "test_auc " << format_double(out.test_auc) << '\n';
    print_curve(out.curve);
    std::cout << "sampled " << out.shift.n_samples << " of " << out.eligible_pool << " test rows with P(Sick) <= "
              << format_double(clean_decimal(1 - a.confidence)) << '\n';
    std::cout << "flip_rate " << format_double(out.shift.flip_rate) << " (" << out.shift.pairs.size() << '/'
              << out.shift.n_samples << ")\n";
    std::cout << "report written to " << a.report_dir << " in " << format_double(std::round(seconds * 10) / 10)
              << " s\n";
    return kOk;
}

// -- explain ------------------------------------------------------------------

struct ExplainArgs {
    std::string model, data_dir, cow, date, policy_file;
    std::uint64_t seed = 0;
    bool words = false;
};

int cmd_explain(const ExplainArgs& a) {
    const auto catalog = catalog_from(a.policy_file);
    Ensemble model;
    try {
        model = load_model(a.model, catalog.version());
    } catch (const CatalogVersionError& e) {
        throw UsageError(e.what());
    }
    const auto herd = herd_from(a.data_dir);
    const HerdContext context(herd);
    const auto idx = context.cow_index(a.cow);
    if (!idx) throw UsageError("unknown cow '" + a.cow + "'");
    const auto milk = context.milk(*idx);
    if (milk.empty()) throw UsageError("cow '" + a.cow + "' has no milk recordings");
    const Date when = a.date.empty() ? milk.back().date : Date::parse(a.date);
    FeatureVector x;
    try {
        x = features_on(context, a.cow, when, catalog);
    } catch (const FeatureError& e) {
        throw UsageError(e.what());
    }

    const auto training = prepare(herd, catalog);
    const auto weights = weights_from_instances(training.train.size() >= 2 ? training.train : training.test, catalog);
    CfxConfig cfg;
    cfg.seed = a.seed;
    CounterfactualResult r;
    try {
        r = find_counterfactual(model, x, catalog, weights, cfg);
    } catch (const AlreadySickError&) {
        std::cerr << "cow " << a.cow << " is already predicted to succumb to mastitis (P(Sick) "
                  << format_double(model.score(x.values)) << ")\n";
        return kPrecondition;
    }
    if (r.status == CfxStatus::Found)
        std::cout << render(a.cow, r, catalog, default_style(a.words ? NumberStyle::Words : NumberStyle::Digits)) << '\n';
    else
        std::cout << "No change of at most " << cfg.max_changes << " features would make cow #" << a.cow
                  << " likely to succumb to mastitis.\n";
    auto doc = to_json(r, catalog, x.values);
    doc["cow_id"] = a.cow;
    doc["as_of_date"] = when.iso();
    doc["model_hash"] = model_hash(model);
    std::cout << doc.dump(2) << '\n';
    return kOk;
}

// -- oracle-check ---------------------------------------------------------------

struct OracleArgs {
    std::size_t n = 50;
    std::uint64_t seed = 1;
    std::string inject_fault;
};

int cmd_oracle_check(const OracleArgs& a) {
    oracle::Fault fault = oracle::Fault::None;
    if (a.inject_fault == "mad-fallback") fault = oracle::Fault::WrongMadFallback;
    else if (!a.inject_fault.empty()) throw UsageError("unknown fault '" + a.inject_fault + "'");
    if (a.n == 0) std::cerr << "warning: --n 0 draws no random cases; only the fixed checks run\n";
    const auto report = oracle::run_checks(a.n, a.seed, fault);
    for (const auto& c : report.checks)
        std::cout << (c.passed ? "PASS " : "FAIL ") << c.property << (c.detail.empty() ? "" : ": " + c.detail) << '\n';
    return report.passed() ? kOk : 1;
}

// -- serve --------------------------------------------------------------------

struct ServeArgs {
    std::string data_dir, model, policy_file, host = "127.0.0.1", static_dir, audit;
    int port = 8080;
    std::uint64_t seed = 0;
    double timeout = 10.0;
};

httplib::Server* g_server = nullptr;

int cmd_serve(const ServeArgs& a) {
    ServiceConfig config;
    config.data_dir = a.data_dir;
    if (!a.model.empty()) config.model_path = a.model;
    if (!a.policy_file.empty()) config.policy_file = a.policy_file;
    if (!a.static_dir.empty()) config.static_dir = a.static_dir;
    if (!a.audit.empty()) config.audit_path = a.audit;
    config.seed = a.seed;
    config.request_timeout_seconds = a.timeout;
    if (!fs::is_directory(config.data_dir)) throw UsageError("data directory " + a.data_dir + " does not exist");

    Service service(config);
    g_server = &service.server();
    std::signal(SIGINT, [](int) { if (g_server) g_server->stop(); });
    std::signal(SIGTERM, [](int) { if (g_server) g_server->stop(); });
    std::cout << "serving " << service.state()->snapshot->vectors.size() << " cows on http://" << a.host << ':' << a.port
              << (service.state()->model ? "" : " (no model loaded)") << std::endl;
    if (!service.server().listen(a.host, a.port)) {
        std::cerr << "cannot listen on " << a.host << ':' << a.port << '\n';
        return 1;
    }
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Mastitis risk prediction with counterfactual explanations"};
    app.require_subcommand(1);

    SynthArgs synth;
    auto* s = app.add_subcommand("synth", "Generate a synthetic herd as four CSV tables");
    s->add_option("--config", synth.config, "JSON generator config (n_cows, n_days, ...)")->check(CLI::ExistingFile);
    s->add_option("--seed", synth.seed, "Random seed")->capture_default_str();
    s->add_option("--out", synth.out, "Output directory")->required();

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "Train a model on rows dated before the split date");
    t->add_option("--data-dir", tr.data_dir, "Herd CSV directory")->required();
    t->add_option("--config", tr.config, "JSON training config")->check(CLI::ExistingFile);
    t->add_option("--out-model", tr.out_model, "Model file to write")->required();
    t->add_option("--split-date", tr.split_date, "First test day, YYYY-MM-DD (default: 3/4 through the data)");
    t->add_option("--policy-file", tr.policy_file, "Feature catalog CSV (default: built-in)")->check(CLI::ExistingFile);
    t->add_option("--metrics", tr.metrics, "Also write metrics JSON here");

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "Horizon curve and counterfactual score-shift report");
    e->add_option("--model", ev.model, "Model file")->required()->check(CLI::ExistingFile);
    e->add_option("--data-dir", ev.data_dir, "Herd CSV directory")->required();
    e->add_option("--report-dir", ev.report_dir, "Report output directory")->required();
    e->add_option("--split-date", ev.split_date, "First test day, YYYY-MM-DD (default: 3/4 through the data)");
    e->add_option("--sample-n", ev.sample_n, "Confidently healthy rows to explain")->capture_default_str();
    e->add_option("--confidence", ev.confidence, "Sample rows with P(Healthy) at least this")->capture_default_str();
    e->add_option("--sample-seed", ev.sample_seed, "Sampling seed")->capture_default_str();
    e->add_option("--seed", ev.seed, "Counterfactual restart seed")->capture_default_str();
    e->add_option("--policy-file", ev.policy_file, "Feature catalog CSV (default: built-in)")->check(CLI::ExistingFile);

    ExplainArgs ex;
    auto* x = app.add_subcommand("explain", "Narrate a counterfactual for one cow");
    x->add_option("--model", ex.model, "Model file")->required()->check(CLI::ExistingFile);
    x->add_option("--data-dir", ex.data_dir, "Herd CSV directory")->required();
    x->add_option("--cow", ex.cow, "Cow id")->required();
    x->add_option("--date", ex.date, "Day to explain, YYYY-MM-DD (default: the cow's last recording)");
    x->add_option("--seed", ex.seed, "Counterfactual restart seed")->capture_default_str();
    x->add_flag("--words", ex.words, "Spell out small numbers");
    x->add_option("--policy-file", ex.policy_file, "Feature catalog CSV (default: built-in)")->check(CLI::ExistingFile);

    OracleArgs oc;
    auto* o = app.add_subcommand("oracle-check", "Compare the library against independent oracles");
    o->add_option("--n", oc.n, "Toy instances for grid mode; numeric oracles use 20n vectors")->capture_default_str();
    o->add_option("--seed", oc.seed, "Random seed")->capture_default_str();
    o->add_option("--inject-fault", oc.inject_fault)->group("");

    ServeArgs sv;
    auto* v = app.add_subcommand("serve", "Run the HTTP service");
    v->add_option("--data-dir", sv.data_dir, "Herd CSV directory")->required();
    v->add_option("--model", sv.model, "Model file (optional; load later via /api/model/reload)");
    v->add_option("--port", sv.port, "TCP port")->capture_default_str();
    v->add_option("--host", sv.host, "Bind address")->capture_default_str();
    v->add_option("--policy-file", sv.policy_file, "Feature catalog CSV (default: built-in)")->check(CLI::ExistingFile);
    v->add_option("--seed", sv.seed, "Counterfactual restart seed")->capture_default_str();
    v->add_option("--static-dir", sv.static_dir, "Directory served at /");
    v->add_option("--audit-log", sv.audit, "Audit log path (default: <data-dir>/audit.jsonl)");
    v->add_option("--timeout", sv.timeout, "Explain timeout in seconds")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int code = app.exit(err);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (*s) return cmd_synth(synth);
        if (*t) return cmd_train(tr);
        if (*e) return cmd_eval(ev);
        if (*x) return cmd_explain(ex);
        if (*o) return cmd_oracle_check(oc);
        if (*v) return cmd_serve(sv);
    } catch (const UsageError& err) {
        std::cerr << "error: " << err.what() << '\n';
        return kUsage;
    } catch (const CatalogError& err) {
        std::cerr << "error: " << err.what() << '\n';
        return kUsage;
    } catch (const CsvSchemaError& err) {
        std::cerr << "error: " << err.what() << '\n';
        return kUsage;
    } catch (const std::invalid_argument& err) {
        std::cerr << "error: " << err.what() << '\n';
        return kUsage;
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << '\n';
        return 1;
    }
    return kUsage;
}
