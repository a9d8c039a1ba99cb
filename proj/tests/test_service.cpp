#include "helpers.hpp"
#include "mastitis/service.hpp"

#include <gtest/gtest.h>

#include <atomic>
#include <thread>

using namespace mastitis;
using nlohmann::json;
using testing_support::SmallPipeline;
using testing_support::TempDir;

namespace {

int count_lines(const std::filesystem::path& p) {
    const auto text = testing_support::slurp(p);
    return int(std::count(text.begin(), text.end(), '\n'));
}

/// Herd CSVs plus a handful of model files in one directory.
struct Fixture {
    TempDir dir{"service"};
    std::string model_a, model_b, sick, wrong_catalog, corrupt;

    Fixture() {
        const auto& p = SmallPipeline::get();
        save_csv(p.herd, dir.path());
        model_a = (dir / "model_a.json").string();
        save_model(p.model, model_a);

        TrainConfig tc;
        tc.n_trees = 15;
        tc.min_samples_leaf = 30;
        model_b = (dir / "model_b.json").string();
        save_model(train(p.split.train, tc, p.catalog.version()), model_b);

        Ensemble always;
        always.base_score = 5.0;
        always.n_features = p.catalog.size();
        always.catalog_version = p.catalog.version();
        sick = (dir / "sick.json").string();
        save_model(always, sick);

        always.catalog_version = "someone-elses-catalog";
        wrong_catalog = (dir / "wrong.json").string();
        save_model(always, wrong_catalog);

        corrupt = (dir / "corrupt.json").string();
        std::ofstream(corrupt) << "{\"format_version\": 1, \"trees\": [";
    }

    ServiceConfig config(bool with_model = true) const {
        ServiceConfig c;
        c.data_dir = dir.path();
        if (with_model) c.model_path = model_a;
        return c;
    }
};

const Fixture& fixture() {
    static const Fixture f;
    return f;
}

/// A healthy cow whose default explanation is found on the fixture herd.
const std::string kExplainable = "C0007";

/// Id of the lowest-risk cow in the snapshot.
std::string calmest_cow(const Service& s) {
    const auto cows = s.herd().body["cows"];
    return cows.back()["cow_id"];
}

}  // namespace

TEST(HerdEndpoint, OneEntryPerCowSortedDescending) {
    Service s(fixture().config());
    const auto r = s.herd();
    ASSERT_EQ(r.status, 200);
    const auto& cows = r.body["cows"];
    EXPECT_EQ(cows.size(), s.state()->snapshot->vectors.size());
    EXPECT_GT(cows.size(), 40u);
    for (std::size_t i = 1; i < cows.size(); ++i) EXPECT_GE(cows[i - 1]["score"].get<double>(), cows[i]["score"].get<double>());
    for (const auto& c : cows) {
        const double score = c["score"];
        EXPECT_EQ(score, s.state()->model->model.score(s.state()->snapshot->vectors.at(c["cow_id"]).values));
        EXPECT_EQ(c["class"], score >= 0.5 ? "sick" : "healthy");
        EXPECT_TRUE(c["top_feature_values"].contains("scc"));
    }
}

TEST(HerdEndpoint, ThreeCowSnapshot) {
    const auto& p = SmallPipeline::get();
    Herd three;
    for (std::size_t i = 0; i < 3; ++i) three.cows.push_back(p.herd.cows[i]);
    for (const auto& m : p.herd.milk)
        if (m.cow_id == three.cows[0].cow_id || m.cow_id == three.cows[1].cow_id || m.cow_id == three.cows[2].cow_id)
            three.milk.push_back(m);
    TempDir dir("three");
    save_csv(three, dir.path());
    ServiceConfig c;
    c.data_dir = dir.path();
    c.model_path = fixture().model_a;
    Service s(c);
    const auto r = s.herd();
    ASSERT_EQ(r.status, 200);
    ASSERT_EQ(r.body["cows"].size(), 3u);
    EXPECT_GE(r.body["cows"][0]["score"].get<double>(), r.body["cows"][1]["score"].get<double>());
    EXPECT_GE(r.body["cows"][1]["score"].get<double>(), r.body["cows"][2]["score"].get<double>());
}

TEST(HerdEndpoint, EmptyHerdIsAnEmptyList) {
    TempDir dir("empty");
    save_csv(Herd{}, dir.path());
    ServiceConfig c;
    c.data_dir = dir.path();
    c.model_path = fixture().model_a;
    Service s(c);
    const auto r = s.herd();
    EXPECT_EQ(r.status, 200);
    EXPECT_TRUE(r.body["cows"].is_array());
    EXPECT_TRUE(r.body["cows"].empty());
}

TEST(HerdEndpoint, NoModelIs503) {
    Service s(fixture().config(false));
    const auto r = s.herd();
    EXPECT_EQ(r.status, 503);
    EXPECT_EQ(r.body["code"], "model_not_loaded");
    EXPECT_TRUE(r.body.contains("message"));
    EXPECT_TRUE(r.body.contains("details"));
}

TEST(CowEndpoint, VectorMatchesCatalog) {
    Service s(fixture().config());
    const auto id = calmest_cow(s);
    const auto r = s.cow(id);
    ASSERT_EQ(r.status, 200);
    const auto& catalog = *s.state()->catalog;
    ASSERT_EQ(r.body["features"].size(), catalog.size());
    for (std::size_t j = 0; j < catalog.size(); ++j) {
        EXPECT_EQ(r.body["features"][j]["name"], catalog[j].name);
        EXPECT_EQ(r.body["features"][j]["unit"], catalog[j].unit);
    }
    EXPECT_EQ(r.body["score"].get<double>(), s.state()->model->model.score(s.state()->snapshot->vectors.at(id).values));
    EXPECT_EQ(r.body["history"]["dates"].size(), 30u);
}

TEST(CowEndpoint, UnknownIs404) {
    Service s(fixture().config());
    const auto r = s.cow("no-such-cow");
    EXPECT_EQ(r.status, 404);
    EXPECT_EQ(r.body["code"], "unknown_cow");
}

TEST(CowEndpoint, SparseSccHistoryHasNulls) {
    Service s(fixture().config());
    const auto r = s.cow(calmest_cow(s));
    const auto& scc = r.body["history"]["scc"];
    ASSERT_EQ(scc.size(), 30u);
    int nulls = 0, numbers = 0;
    for (const auto& v : scc) (v.is_null() ? nulls : numbers) += 1;
    EXPECT_GT(nulls, 0);
    EXPECT_GT(numbers, 0);
}

TEST(ExplainEndpoint, HealthyCowGetsDeltasScoresAndSentence) {
    Service s(fixture().config());
    const auto id = kExplainable;
    const auto r = s.explain({{"cow_id", id}});
    ASSERT_EQ(r.status, 200) << r.body.dump();
    const auto& result = r.body["result"];
    ASSERT_EQ(result["status"], "found") << result.dump();
    EXPECT_FALSE(result["deltas"].empty());
    EXPECT_LE(result["deltas"].size(), 3u);
    EXPECT_LT(result["score_original"].get<double>(), 0.5);
    EXPECT_GE(result["score_cf"].get<double>(), 0.55);
    const std::string sentence = r.body["narration"];
    EXPECT_EQ(sentence.rfind("If cow #" + id + " ", 0), 0u) << sentence;
    EXPECT_EQ(r.body["model_hash"], s.state()->model->hash);
}

TEST(ExplainEndpoint, IdenticalStateGivesIdenticalResult) {
    Service s(fixture().config());
    const auto id = kExplainable;
    EXPECT_EQ(s.explain({{"cow_id", id}}).body, s.explain({{"cow_id", id}}).body);
}

TEST(ExplainEndpoint, SickCowIs409) {
    auto c = fixture().config();
    c.model_path = fixture().sick;
    Service s(c);
    const auto r = s.explain({{"cow_id", calmest_cow(s)}});
    EXPECT_EQ(r.status, 409);
    EXPECT_EQ(r.body["code"], "already_sick");
}

TEST(ExplainEndpoint, UnknownCowIs404) {
    Service s(fixture().config());
    EXPECT_EQ(s.explain({{"cow_id", "nobody"}}).status, 404);
}

TEST(ExplainEndpoint, InvalidOverridesAre422) {
    Service s(fixture().config());
    const auto id = calmest_cow(s);
    for (const auto& cfg : {json{{"max_changes", 0}}, json{{"flip_threshold", 1.5}}, json{{"bogus", 1}},
                            json{{"max_changes", "three"}}, json{{"grid_mode", true}}}) {
        const auto r = s.explain({{"cow_id", id}, {"config", cfg}});
        EXPECT_EQ(r.status, 422) << cfg.dump();
        EXPECT_EQ(r.body["code"], "invalid_config");
    }
    EXPECT_EQ(s.explain({{"id", id}}).status, 422);
}

TEST(ExplainEndpoint, AuditIsTheOnlySideEffect) {
    TempDir audit_dir("audit");
    auto c = fixture().config();
    c.audit_path = audit_dir / "audit.jsonl";
    const auto id = [&] {
        Service s(c);
        const auto id = calmest_cow(s);
        s.cow(id);
        s.whatif({{"cow_id", id}});
        EXPECT_FALSE(std::filesystem::exists(*c.audit_path));
        s.explain({{"cow_id", id}});
        EXPECT_EQ(count_lines(*c.audit_path), 1);
        return id;
    }();
    // A restarted service appends to the same log.
    Service s(c);
    const auto r = s.explain({{"cow_id", id}});
    ASSERT_EQ(count_lines(*c.audit_path), 2);
    std::ifstream in(*c.audit_path);
    std::string line;
    std::getline(in, line);
    const auto rec = json::parse(line);
    EXPECT_EQ(rec["cow_id"], id);
    EXPECT_EQ(rec["model_hash"], s.state()->model->hash);
    EXPECT_EQ(rec["result_hash"], hex64(fnv1a(r.body["result"].dump())));
    EXPECT_EQ(rec["timestamp"].get<std::string>().size(), 20u);
}

TEST(WhatIfEndpoint, EmptyOverridesMatchCowScore) {
    Service s(fixture().config());
    const auto cows = s.herd().body["cows"];
    ASSERT_FALSE(cows.empty());
    for (const auto& c : cows) {
        const std::string id = c["cow_id"];
        EXPECT_EQ(s.whatif({{"cow_id", id}, {"overrides", json::object()}}).body["score"], s.cow(id).body["score"]);
    }
}

TEST(WhatIfEndpoint, CounterfactualVectorReproducesScoreCf) {
    Service s(fixture().config());
    const auto id = kExplainable;
    const auto result = s.explain({{"cow_id", id}}).body["result"];
    ASSERT_EQ(result["status"], "found");
    json overrides = json::object();
    for (const auto& [name, v] : result["counterfactual"].items()) overrides[name] = v;
    const auto r = s.whatif({{"cow_id", id}, {"overrides", overrides}});
    ASSERT_EQ(r.status, 200) << r.body.dump();
    EXPECT_EQ(r.body["score"].get<double>(), result["score_cf"].get<double>());

    // Same vector through the delta form.
    json deltas = json::object();
    for (const auto& d : result["deltas"]) deltas[d["feature"].get<std::string>()] = {{"delta", d["value"]}};
    EXPECT_EQ(s.whatif({{"cow_id", id}, {"overrides", deltas}}).body["score"].get<double>(), result["score_cf"].get<double>());
}

TEST(WhatIfEndpoint, OutOfBoundsWeightNamesTheFeature) {
    Service s(fixture().config());
    const auto r = s.whatif({{"cow_id", calmest_cow(s)}, {"overrides", {{"weight", 10000}}}});
    EXPECT_EQ(r.status, 422);
    EXPECT_EQ(r.body["code"], "out_of_bounds");
    EXPECT_EQ(r.body["details"]["feature"], "weight");
    EXPECT_NE(r.body["message"].get<std::string>().find("weight"), std::string::npos);
}

TEST(WhatIfEndpoint, OtherErrors) {
    Service s(fixture().config());
    const auto id = calmest_cow(s);
    auto r = s.whatif({{"cow_id", id}, {"overrides", {{"horns", 2}}}});
    EXPECT_EQ(r.status, 422);
    EXPECT_EQ(r.body["code"], "unknown_feature");
    EXPECT_EQ(r.body["details"]["feature"], "horns");
    r = s.whatif({{"cow_id", id}, {"overrides", {{"scc", "high"}}}});
    EXPECT_EQ(r.body["code"], "invalid_override");
    EXPECT_EQ(s.whatif({{"cow_id", "nobody"}}).status, 404);
}

TEST(ReloadEndpoint, SameFileSameHash) {
    Service s(fixture().config());
    const auto before = s.state()->model->hash;
    const auto r = s.reload({{"model_path", fixture().model_a}});
    ASSERT_EQ(r.status, 200);
    EXPECT_EQ(r.body["model_hash"], before);
    EXPECT_EQ(s.herd().body["model_hash"], before);
}

TEST(ReloadEndpoint, SwapsModel) {
    Service s(fixture().config());
    const auto r = s.reload({{"model_path", fixture().model_b}});
    ASSERT_EQ(r.status, 200);
    EXPECT_NE(r.body["model_hash"], model_hash(load_model(fixture().model_a)));
    EXPECT_EQ(s.herd().body["model_hash"], r.body["model_hash"]);
}

TEST(ReloadEndpoint, WrongCatalogKeepsOldModel) {
    Service s(fixture().config());
    const auto before = s.state()->model->hash;
    const auto r = s.reload({{"model_path", fixture().wrong_catalog}});
    EXPECT_EQ(r.status, 422);
    EXPECT_EQ(r.body["code"], "catalog_mismatch");
    EXPECT_EQ(s.herd().status, 200);
    EXPECT_EQ(s.herd().body["model_hash"], before);
}

TEST(ReloadEndpoint, ParseFailureKeepsOldModel) {
    Service s(fixture().config());
    const auto before = s.state()->model->hash;
    for (const auto& path : {fixture().corrupt, (fixture().dir / "missing.json").string()}) {
        const auto r = s.reload({{"model_path", path}});
        EXPECT_EQ(r.status, 500);
        EXPECT_EQ(r.body["code"], "model_load_failed");
        EXPECT_EQ(s.herd().body["model_hash"], before);
    }
}

TEST(ReloadEndpoint, LoadsIntoAnEmptyService) {
    Service s(fixture().config(false));
    EXPECT_EQ(s.reload({{"model_path", fixture().model_a}}).status, 200);
    EXPECT_EQ(s.herd().status, 200);
}

// ---------------------------------------------------------------------------
// Over a socket
// ---------------------------------------------------------------------------

class Live : public ::testing::Test {
protected:
    void SetUp() override {
        service_ = std::make_unique<Service>(fixture().config());
        port_ = service_->server().bind_to_any_port("127.0.0.1");
        ASSERT_GT(port_, 0);
        thread_ = std::thread([this] { service_->server().listen_after_bind(); });
        service_->server().wait_until_ready();
    }
    void TearDown() override {
        service_->server().stop();
        if (thread_.joinable()) thread_.join();
    }
    httplib::Client client() const {
        httplib::Client c("127.0.0.1", port_);
        c.set_read_timeout(30, 0);
        return c;
    }

    std::unique_ptr<Service> service_;
    int port_ = 0;
    std::thread thread_;
};

TEST_F(Live, RoutesAndEnvelope) {
    auto c = client();
    auto r = c.Get("/api/herd");
    ASSERT_TRUE(r);
    EXPECT_EQ(r->status, 200);
    EXPECT_EQ(r->get_header_value("Content-Type"), "application/json");

    r = c.Get("/api/cows/nobody");
    ASSERT_TRUE(r);
    EXPECT_EQ(r->status, 404);
    EXPECT_EQ(json::parse(r->body)["code"], "unknown_cow");

    r = c.Post("/api/explain", "{not json", "application/json");
    ASSERT_TRUE(r);
    EXPECT_EQ(r->status, 400);
    EXPECT_EQ(json::parse(r->body)["code"], "bad_json");

    r = c.Post("/api/model/reload", json{{"model_path", fixture().wrong_catalog}}.dump(), "application/json");
    ASSERT_TRUE(r);
    EXPECT_EQ(r->status, 422);
}

TEST_F(Live, NoTornReadsDuringReloads) {
    const std::map<std::string, Ensemble> models = {
        {model_hash(load_model(fixture().model_a)), load_model(fixture().model_a)},
        {model_hash(load_model(fixture().model_b)), load_model(fixture().model_b)}};
    const auto vectors = service_->state()->snapshot->vectors;
    std::vector<std::string> ids;
    for (const auto& [id, x] : vectors) ids.push_back(id);

    constexpr int kReaders = 4, kPerReader = 250;
    std::atomic<int> served{0}, consistent{0}, reloads{0};
    std::atomic<bool> done{false};
    std::set<std::string> seen;
    std::mutex seen_mutex;

    std::thread reloader([&] {
        auto c = client();
        for (int i = 0; !done; ++i) {
            const auto& path = i % 2 ? fixture().model_a : fixture().model_b;
            auto r = c.Post("/api/model/reload", json{{"model_path", path}}.dump(), "application/json");
            if (r && r->status == 200) ++reloads;
        }
    });
    std::vector<std::thread> readers;
    for (int t = 0; t < kReaders; ++t)
        readers.emplace_back([&, t] {
            auto c = client();
            for (int i = 0; i < kPerReader; ++i) {
                const auto& id = ids[std::size_t(t * kPerReader + i) % ids.size()];
                httplib::Result r = i % 2 ? c.Get("/api/cows/" + id)
                                          : c.Post("/api/whatif", json{{"cow_id", id}}.dump(), "application/json");
                if (!r || r->status != 200) continue;
                ++served;
                const auto body = json::parse(r->body);
                const std::string hash = body["model_hash"];
                auto m = models.find(hash);
                if (m != models.end() && body["score"].get<double>() == m->second.score(vectors.at(id).values)) ++consistent;
                std::lock_guard lock(seen_mutex);
                seen.insert(hash);
            }
        });
    for (auto& r : readers) r.join();
    done = true;
    reloader.join();

    EXPECT_EQ(served.load(), kReaders * kPerReader);
    EXPECT_EQ(consistent.load(), served.load());
    EXPECT_GT(reloads.load(), 1);
    EXPECT_EQ(seen.size(), 2u);
}
