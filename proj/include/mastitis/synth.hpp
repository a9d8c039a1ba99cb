#pragma once

// Synthetic herd generator with a planted infection process.
//
// Each cow contributes one lactation. Daily yield follows a Wood curve, milk
// composition and SCC are sampled weekly, weight weekly and BCS fortnightly.
// A latent udder-stress state (AR(1)) nudges SCC up and yield down. The daily
// hazard of a latent infection rises with the last recorded SCC, stress, low
// BCS, a falling yield, early lactation and parity. An infection incubates for
// 4-10 days (SCC climbing towards the healthy ceiling, slightly lower yield and
// lactose) before SCC climbs steeply. The recorded onset is
// the first of two consecutive weekly SCC readings above 200, the usual
// sub-clinical convention. Healthy readings stay below 190 so that a herd
// without infections has no events.

#include "mastitis/core.hpp"
#include "mastitis/dataset.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

namespace mastitis {

struct SynthConfig {
    int n_cows = 300;
    int n_days = 730;
    int n_farms = 7;
    Date start_date{2018, 1, 1};
    int lactation_days = 305;
    double infection_rate = 1.0;   // multiplier on the baseline daily hazard
    double signal_strength = 1.0;  // scales how strongly risk factors move the hazard
    double base_hazard = 0.0012;

    void validate() const {
        if (n_cows < 1) throw std::invalid_argument("n_cows must be >= 1");
        if (n_days < 60) throw std::invalid_argument("n_days must be >= 60");
        if (n_farms < 1) throw std::invalid_argument("n_farms must be >= 1");
        if (lactation_days < 60) throw std::invalid_argument("lactation_days must be >= 60");
        if (!(infection_rate >= 0)) throw std::invalid_argument("infection_rate must be >= 0");
        if (!(signal_strength >= 0)) throw std::invalid_argument("signal_strength must be >= 0");
        if (!(base_hazard >= 0 && base_hazard < 1)) throw std::invalid_argument("base_hazard must be in [0,1)");
    }
};

inline constexpr double kSubclinicalScc = 200.0;

namespace detail {

inline std::string padded_id(char prefix, int i, int width) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%c%0*d", prefix, width, i);
    return buf;
}

inline double round_to(double v, double step) { return clean_decimal(std::round(v / step) * step); }

/// Episodes from measured SCC: two consecutive readings above the threshold
/// confirm an episode whose onset is the first of the pair. It ends at the
/// first later reading at or below the threshold.
inline std::vector<InfectionEvent> detect_episodes(const std::vector<std::pair<Date, double>>& scc, Date last_day) {
    std::vector<InfectionEvent> events;
    std::size_t i = 1;
    while (i < scc.size()) {
        if (scc[i - 1].second > kSubclinicalScc && scc[i].second > kSubclinicalScc) {
            InfectionEvent e{scc[i - 1].first, last_day + 1};
            std::size_t j = i + 1;
            while (j < scc.size() && scc[j].second > kSubclinicalScc) ++j;
            if (j < scc.size()) e.end = scc[j].first;
            events.push_back(e);
            i = j + 2;  // a new episode needs two fresh readings after recovery
        } else {
            ++i;
        }
    }
    return events;
}

}  // namespace detail

/// Reads a generator config; absent keys keep their defaults, unknown keys
/// are rejected so a typo cannot silently change the herd.
inline SynthConfig synth_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw std::invalid_argument("synth config must be a JSON object");
    SynthConfig c;
    for (const auto& [key, v] : j.items()) {
        if (key == "n_cows") c.n_cows = v.get<int>();
        else if (key == "n_days") c.n_days = v.get<int>();
        else if (key == "n_farms") c.n_farms = v.get<int>();
        else if (key == "start_date") c.start_date = Date::parse(v.get<std::string>());
        else if (key == "lactation_days") c.lactation_days = v.get<int>();
        else if (key == "infection_rate") c.infection_rate = v.get<double>();
        else if (key == "signal_strength") c.signal_strength = v.get<double>();
        else if (key == "base_hazard") c.base_hazard = v.get<double>();
        else throw std::invalid_argument("unknown synth config key '" + key + "'");
    }
    c.validate();
    return c;
}

/// Deterministic in (config, seed).
inline Herd generate_herd(const SynthConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng(seed);
    Herd herd;
    herd.cows.reserve(std::size_t(config.n_cows));
    const Date end_date = config.start_date + (config.n_days - 1);
    const double strength = config.signal_strength;

    for (int c = 0; c < config.n_cows; ++c) {
        CowRecord cow;
        cow.cow_id = detail::padded_id('C', c + 1, 4);
        cow.farm_id = detail::padded_id('F', c % config.n_farms + 1, 2);
        const double u = rng.uniform();
        cow.parity = u < 0.3 ? 1 : u < 0.55 ? 2 : u < 0.75 ? 3 : u < 0.88 ? 4 : u < 0.96 ? 5 : 6;
        cow.genetic_merit = std::clamp(std::round(rng.normal(110.0, 45.0)), -200.0, 400.0);
        cow.calving_date = config.start_date + rng.integer(0, config.n_days - 60);
        const Date last_day = std::min(cow.calving_date + (config.lactation_days - 1), end_date);
        const int n = int(last_day - cow.calving_date) + 1;

        // Cow-level traits.
        const double peak = std::clamp(rng.normal(cow.parity == 1 ? 26.0 : 32.0, 4.0), 15.0, 50.0);
        const double wood_b = 0.22, wood_c = 0.0042;
        const double peak_t = wood_b / wood_c;
        const double wood_a = peak / (std::pow(peak_t, wood_b) * std::exp(-wood_c * peak_t));
        const double base_scc = std::exp(rng.normal(std::log(70.0), 0.3)) * (1.0 + 0.08 * (cow.parity - 1));
        const double fat0 = rng.normal(4.1, 0.3), protein0 = rng.normal(3.45, 0.18);
        const double lactose0 = rng.normal(4.8, 0.1), urea0 = rng.normal(26.0, 5.0);
        const double bcs0 = std::clamp(rng.normal(3.2, 0.3), 2.0, 4.25);
        const double bcs_loss = std::clamp(rng.normal(0.5, 0.2), 0.0, 1.0);
        const double weight0 = rng.normal(560.0 + 15.0 * (cow.parity - 1), 45.0);
        const double susceptibility = rng.normal(0.0, 0.4);
        const int sample_offset = int(rng.integer(0, 6));

        double stress = rng.normal(0.0, 0.7);
        double last_scc = base_scc;
        bool infected = false;
        int infected_day = 0, incubation_length = 1, infection_length = 0, immune_until = -1;
        double infection_peak = 0.0;
        std::vector<double> yield_hist;
        std::vector<std::pair<Date, double>> scc_readings;

        for (int t = 0; t < n; ++t) {
            const Date day = cow.calving_date + t;
            stress = 0.93 * stress + rng.normal(0.0, 0.26);
            const double bcs_true = bcs0 - bcs_loss * std::min(t, 70) / 70.0 + 0.3 * bcs_loss * std::max(0, t - 120) / 185.0;

            // Incubation ramps 0..1 before SCC takes off; intensity is the
            // established infection, rising fast and fading over the last 10 days.
            double incubation = 0.0, infection_level = 0.0;
            if (infected) {
                const int k = t - infected_day;
                if (k >= incubation_length + infection_length) {
                    infected = false;
                    immune_until = t + 21;
                } else if (k < incubation_length) {
                    incubation = double(k + 1) / incubation_length;
                } else {
                    const int j = k - incubation_length;
                    const double rise = 1.0 - std::exp(-0.6 * (j + 1));
                    const double fall = j > infection_length - 10 ? (infection_length - j) / 10.0 : 1.0;
                    incubation = 1.0;
                    infection_level = rise * fall;
                }
            }

            const double wood = wood_a * std::pow(double(t + 1), wood_b) * std::exp(-wood_c * (t + 1));
            const double daily = std::max(1.0, wood * (1.0 - 0.04 * std::max(0.0, stress) - 0.06 * incubation - 0.10 * infection_level) *
                                                   std::exp(rng.normal(0.0, 0.04)));
            yield_hist.push_back(daily);

            // Latent infection hazard.
            if (!infected && t > immune_until && t < n - 1) {
                const double low_bcs = std::max(0.0, (3.0 - bcs_true) / 0.5);
                double yield_drop = 0.0;
                if (t >= 7) yield_drop = std::max(0.0, (yield_hist[std::size_t(t - 7)] - daily) / yield_hist[std::size_t(t - 7)]) * 10.0;
                const double early = t < 60 ? 1.0 : 0.0;
                const double risk = 1.5 * std::log(last_scc / 100.0) + 0.5 * stress + 0.5 * low_bcs + 0.35 * yield_drop +
                                    0.4 * early + 0.15 * (cow.parity - 1) + susceptibility;
                const double hazard = config.base_hazard * config.infection_rate * std::exp(strength * risk);
                if (rng.bernoulli(std::min(hazard, 0.5))) {
                    infected = true;
                    infected_day = t;
                    incubation_length = int(rng.integer(4, 10));
                    infection_length = int(rng.integer(18, 40));
                    infection_peak = std::exp(rng.normal(std::log(900.0), 0.5));
                }
            }

            MilkRecording m;
            m.cow_id = cow.cow_id;
            m.date = day;
            const double am_share = std::clamp(rng.normal(0.56, 0.02), 0.5, 0.62);
            m.yield_am = detail::round_to(daily * am_share, 0.1);
            m.yield_pm = detail::round_to(daily * (1.0 - am_share), 0.1);
            if (t % 7 == sample_offset) {
                const double healthy_scc =
                    std::min(190.0, base_scc * (1.0 + 2.75 * incubation) * std::exp(0.35 * stress + 0.0015 * t + rng.normal(0.0, 0.15)));
                double scc = healthy_scc;
                if (infection_level > 0) {
                    const double sick = base_scc + (infection_peak - base_scc) * infection_level;
                    scc = std::max(healthy_scc, sick * std::exp(rng.normal(0.0, 0.15)));
                }
                m.scc = std::round(scc);
                last_scc = *m.scc;
                scc_readings.emplace_back(day, *m.scc);
                m.fat_pct = detail::round_to(fat0 + 0.003 * std::max(0, t - 60) + 0.1 * infection_level + rng.normal(0, 0.12), 0.01);
                m.protein_pct = detail::round_to(protein0 + 0.0015 * std::max(0, t - 60) + rng.normal(0, 0.06), 0.01);
                m.lactose_pct = detail::round_to(lactose0 - 0.0006 * t - 0.03 * incubation - 0.2 * infection_level + rng.normal(0, 0.04), 0.01);
                m.urea = detail::round_to(std::max(5.0, urea0 + 4.0 * std::sin(day.days_since_epoch() / 58.0) + rng.normal(0, 3.0)), 0.1);
            }
            herd.milk.push_back(std::move(m));

            if (t % 7 == sample_offset) {
                BodyRecording b;
                b.date = day;
                b.weight = std::round(weight0 * (1.0 + 0.12 * (bcs_true - bcs0)) + rng.normal(0.0, 6.0));
                if ((t / 7) % 2 == 0) b.bcs = std::clamp(std::round(4.0 * (bcs_true + rng.normal(0.0, 0.1))) / 4.0, 1.0, 5.0);
                cow.body.push_back(b);
            }
        }
        cow.infections = detail::detect_episodes(scc_readings, last_day);
        herd.cows.push_back(std::move(cow));
    }
    return herd;
}

}  // namespace mastitis
