#pragma once

#include "mastitis/dataset.hpp"
#include "mastitis/gbm.hpp"
#include "mastitis/herd_csv.hpp"
#include "mastitis/pipeline.hpp"
#include "mastitis/synth.hpp"

#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>

namespace testing_support {

namespace fs = std::filesystem;

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = fs::temp_directory_path() / ("mastitis-" + tag + "-" + std::to_string(rd()));
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& s) const { return path_ / s; }

private:
    fs::path path_;
};

inline std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline std::string fixture(const std::string& name) {
    auto s = slurp(fs::path(MASTITIS_FIXTURES) / name);
    while (!s.empty() && (s.back() == '\n' || s.back() == '\r')) s.pop_back();
    return s;
}

/// One cow with daily milk for `days` days from `start`, constant unless
/// `yield` says otherwise; weekly components and SCC.
inline mastitis::Herd simple_herd(int days, mastitis::Date start = mastitis::Date(2020, 1, 1),
                                  std::function<double(int)> yield = nullptr) {
    using namespace mastitis;
    Herd h;
    CowRecord c;
    c.cow_id = "C1";
    c.farm_id = "F1";
    c.parity = 2;
    c.calving_date = start - 10;
    c.genetic_merit = 50;
    c.body.push_back({start, 600.0, 3.0});
    h.cows.push_back(c);
    for (int d = 0; d < days; ++d) {
        MilkRecording m;
        m.cow_id = "C1";
        m.date = start + d;
        const double y = yield ? yield(d) : 20.0;
        m.yield_am = y / 2;
        m.yield_pm = y / 2;
        if (d % 7 == 0) {
            m.fat_pct = 4.0;
            m.protein_pct = 3.4;
            m.lactose_pct = 4.8;
            m.scc = 100;
            m.urea = 25;
        }
        h.milk.push_back(m);
    }
    return h;
}

/// A small synthetic herd with a trained model, built once per process.
struct SmallPipeline {
    mastitis::Herd herd;
    mastitis::FeatureCatalog catalog = mastitis::default_catalog();
    mastitis::TemporalSplit split;
    mastitis::Ensemble model;

    static const SmallPipeline& get() {
        static const SmallPipeline p = [] {
            SmallPipeline s;
            mastitis::SynthConfig cfg;
            cfg.n_cows = 60;
            cfg.n_days = 365;
            s.herd = mastitis::generate_herd(cfg, 3);
            s.split = mastitis::prepare(s.herd, s.catalog);
            mastitis::TrainConfig tc;
            tc.n_trees = 40;
            tc.min_samples_leaf = 30;
            s.model = mastitis::train(s.split.train, tc, s.catalog.version());
            return s;
        }();
        return p;
    }
};

}  // namespace testing_support
