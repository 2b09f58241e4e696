#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "belltest/counts.hpp"
#include "belltest/dataset.hpp"
#include "belltest/efficiency.hpp"
#include "belltest/errors.hpp"
#include "belltest/rng.hpp"

namespace belltest {

enum class OutcomeModel { singlet, product, local_timetag };
enum class SignRule { deterministic, malus };
enum class SettingsMode { switched, fixed };

inline std::string to_string(OutcomeModel m) {
    switch (m) {
        case OutcomeModel::singlet: return "singlet";
        case OutcomeModel::product: return "product";
        case OutcomeModel::local_timetag: return "local-timetag";
    }
    return "singlet";
}

inline std::string to_string(SignRule r) {
    return r == SignRule::deterministic ? "deterministic" : "malus";
}

// Product state: each photon carries a fixed polarization axis and the two
// stations are independent.
struct ProductModelParams {
    double p1_rad = 0;
    double p2_rad = 0;
};

// Local time-tag model: outcomes and per-station delays are functions of a
// hidden polarization angle shared by the pair, with the delay spread
// vanishing when the hidden angle aligns with the analyzer axis.
struct LocalModelParams {
    std::int64_t t0_ps = 1'000'000; // maximum delay scale
    int exponent = 2;               // d in the delay law T0*|sin 2(theta-s)|^(2d)
    SignRule sign_rule = SignRule::deterministic;
};

// Detection efficiencies: per-outcome detector efficiencies and optional
// per-setting modulator transmissions (empty vector = 1 for every setting).
struct DetectionParams {
    double eta1_plus = 1.0;
    double eta1_minus = 1.0;
    double eta2_plus = 1.0;
    double eta2_minus = 1.0;
    std::vector<double> kappa1;
    std::vector<double> kappa2;
};

struct SimConfig {
    std::int64_t n_pairs = 0;
    double mean_interval_ps = 30'000'000; // mean emission spacing (30 us)
    double jitter_ps = 1000;              // per-station Gaussian tag jitter (1 ns)
    std::int64_t tick_ps = 1;             // time-tag quantization

    SettingsMode settings_mode = SettingsMode::switched;
    SettingQuad angles;          // switched mode: station 1 draws a/a', station 2 b/b'
    double fixed_a_rad = 0;      // fixed mode settings
    double fixed_b_rad = 0;
    bool single_detector = false; // fixed mode: keep only +1 outcomes (fixed-run style)

    OutcomeModel outcome_model = OutcomeModel::singlet;
    ProductModelParams product;
    LocalModelParams local;
    std::optional<DetectionParams> efficiency;

    std::uint64_t seed = 1;
};

inline nlohmann::json to_json(const SimConfig& c) {
    nlohmann::json j;
    j["n_pairs"] = c.n_pairs;
    j["mean_interval_ps"] = c.mean_interval_ps;
    j["jitter_ps"] = c.jitter_ps;
    j["tick_ps"] = c.tick_ps;
    j["settings_mode"] = c.settings_mode == SettingsMode::switched ? "switched" : "fixed";
    if (c.settings_mode == SettingsMode::switched) {
        j["angles_rad"] = {c.angles.a, c.angles.ap, c.angles.b, c.angles.bp};
    } else {
        j["fixed_angles_rad"] = {c.fixed_a_rad, c.fixed_b_rad};
        j["single_detector"] = c.single_detector;
    }
    j["outcome_model"] = to_string(c.outcome_model);
    if (c.outcome_model == OutcomeModel::product) {
        j["product_axes_rad"] = {c.product.p1_rad, c.product.p2_rad};
    }
    if (c.outcome_model == OutcomeModel::local_timetag) {
        j["local"] = {{"t0_ps", c.local.t0_ps},
                      {"exponent", c.local.exponent},
                      {"sign_rule", to_string(c.local.sign_rule)}};
    }
    if (c.efficiency) {
        j["efficiency"] = {{"eta1", {c.efficiency->eta1_plus, c.efficiency->eta1_minus}},
                           {"eta2", {c.efficiency->eta2_plus, c.efficiency->eta2_minus}}};
        if (!c.efficiency->kappa1.empty()) j["efficiency"]["kappa1"] = c.efficiency->kappa1;
        if (!c.efficiency->kappa2.empty()) j["efficiency"]["kappa2"] = c.efficiency->kappa2;
    }
    j["seed"] = c.seed;
    return j;
}

// --------------------------------------------------------------------------
// Outcome models
// --------------------------------------------------------------------------

struct QuantumModel {
    OutcomeModel kind = OutcomeModel::singlet;
    ProductModelParams product;
};

// Moments used by the joint-outcome sampler. Singlet: E1h = E2h = 0 and
// Eh = -cos 2(a-b); product state: Malus-law moments about the photon axes,
// Eh = E1h * E2h.
inline std::array<double, 3> quantum_moments(const QuantumModel& m, double a_rad, double b_rad) {
    if (m.kind == OutcomeModel::singlet) {
        return {0.0, 0.0, -std::cos(2.0 * (a_rad - b_rad))};
    }
    if (m.kind == OutcomeModel::product) {
        const double e1 = std::cos(2.0 * (a_rad - m.product.p1_rad));
        const double e2 = std::cos(2.0 * (b_rad - m.product.p2_rad));
        return {e1, e2, e1 * e2};
    }
    throw ParamError("quantum_moments: not a quantum outcome model");
}

// Draws one outcome pair from P(xy|ab); consumes exactly one uniform.
inline std::pair<int, int> sample_pair_quantum(double a_rad, double b_rad,
                                               const QuantumModel& model, Rng& rng) {
    const auto [e1, e2, eh] = quantum_moments(model, a_rad, b_rad);
    const auto p = outcome_probabilities(e1, e2, eh); // (++, +-, -+, --)
    const double u = rng.uniform();
    double acc = 0;
    static constexpr std::pair<int, int> outcomes[4] = {{+1, +1}, {+1, -1}, {-1, +1}, {-1, -1}};
    for (int k = 0; k < 3; ++k) {
        acc += p[static_cast<std::size_t>(k)];
        if (u < acc) return outcomes[k];
    }
    return outcomes[3];
}

struct LocalEvent {
    int outcome = +1;
    double delay_ps = 0;
};

// One station-side event of the local model. theta is the hidden polarization
// angle seen by this photon; the delay is uniform in
// [0, T0 * |sin 2(theta - setting)|^(2d)], so aligned photons leave promptly.
inline LocalEvent local_timetag_event(double theta_rad, double setting_rad,
                                      const LocalModelParams& p, Rng& rng) {
    const double rel = theta_rad - setting_rad;
    LocalEvent ev;
    if (p.sign_rule == SignRule::deterministic) {
        ev.outcome = std::cos(2.0 * rel) >= 0.0 ? +1 : -1;
    } else {
        const double c = std::cos(rel);
        ev.outcome = rng.uniform() < c * c ? +1 : -1;
    }
    const double s = std::abs(std::sin(2.0 * rel));
    const double bound = static_cast<double>(p.t0_ps) * std::pow(s, 2.0 * p.exponent);
    ev.delay_ps = rng.uniform() * bound;
    return ev;
}

// --------------------------------------------------------------------------
// Generator
// --------------------------------------------------------------------------

namespace detail::sim {

inline void validate_config(const SimConfig& c) {
    if (c.n_pairs < 1) throw ParamError("simulate: n_pairs must be >= 1");
    if (!(c.mean_interval_ps > 0)) throw ParamError("simulate: mean_interval_ps must be positive");
    if (c.jitter_ps < 0) throw ParamError("simulate: jitter_ps must be >= 0");
    if (c.tick_ps < 1) throw ParamError("simulate: tick_ps must be >= 1");
    if (c.single_detector && c.settings_mode != SettingsMode::fixed) {
        throw ParamError("simulate: single_detector requires fixed settings");
    }
    if (c.outcome_model == OutcomeModel::local_timetag) {
        if (c.local.t0_ps <= 0) throw ParamError("simulate: local model t0_ps must be positive");
        if (c.local.exponent < 1) throw ParamError("simulate: local model exponent must be >= 1");
    }
    if (c.efficiency) {
        const DetectionParams& e = *c.efficiency;
        for (const double v : {e.eta1_plus, e.eta1_minus, e.eta2_plus, e.eta2_minus}) {
            if (!(v > 0.0 && v <= 1.0)) throw ParamError("simulate: efficiencies must be in (0,1]");
        }
        for (const auto* ks : {&e.kappa1, &e.kappa2}) {
            for (const double v : *ks) {
                if (!(v > 0.0 && v <= 1.0)) throw ParamError("simulate: kappa must be in (0,1]");
            }
        }
    }
    // moment validity for the quantum models, checked before any generation
    if (c.outcome_model == OutcomeModel::singlet || c.outcome_model == OutcomeModel::product) {
        QuantumModel qm{c.outcome_model, c.product};
        auto check = [&](double a, double b) {
            const auto [e1, e2, eh] = quantum_moments(qm, a, b);
            outcome_probabilities(e1, e2, eh);
        };
        if (c.settings_mode == SettingsMode::switched) {
            for (const double a : {c.angles.a, c.angles.ap}) {
                for (const double b : {c.angles.b, c.angles.bp}) check(a, b);
            }
        } else {
            check(c.fixed_a_rad, c.fixed_b_rad);
        }
    }
}

inline std::int64_t quantize(double t, std::int64_t tick) {
    if (tick == 1) return std::llround(t);
    return std::llround(t / static_cast<double>(tick)) * tick;
}

} // namespace detail::sim

// Event-by-event generation of a two-station dataset: a Poisson pair source,
// per-pair settings, outcomes and delays from the configured model, Gaussian
// tag jitter and optional detection losses. Deterministic for a fixed config:
// pair-level draws come from the source stream and each station consumes its
// own generator, so the two streams are independent and insertion-order
// stable.
inline Dataset simulate(const SimConfig& cfg) {
    detail::sim::validate_config(cfg);

    Rng src = Rng::for_stream(cfg.seed, 0);
    Rng st1 = Rng::for_stream(cfg.seed, 1);
    Rng st2 = Rng::for_stream(cfg.seed, 2);

    Dataset d;
    d.station1.station_id = 1;
    d.station2.station_id = 2;
    d.station1.tick_ps = d.station2.tick_ps = cfg.tick_ps;
    if (cfg.settings_mode == SettingsMode::switched) {
        d.station1.angles = {wrap_angle(cfg.angles.a), wrap_angle(cfg.angles.ap)};
        d.station2.angles = {wrap_angle(cfg.angles.b), wrap_angle(cfg.angles.bp)};
        d.style = DatasetStyle::switched;
    } else {
        d.station1.angles = {wrap_angle(cfg.fixed_a_rad)};
        d.station2.angles = {wrap_angle(cfg.fixed_b_rad)};
        d.style = cfg.single_detector ? DatasetStyle::fixed_run : DatasetStyle::switched;
    }
    d.station1.events.reserve(static_cast<std::size_t>(cfg.n_pairs));
    d.station2.events.reserve(static_cast<std::size_t>(cfg.n_pairs));

    const QuantumModel qm{cfg.outcome_model, cfg.product};
    const bool quantum = cfg.outcome_model != OutcomeModel::local_timetag;
    constexpr double half_pi = 1.57079632679489661923;

    double t_emit = 0;
    for (std::int64_t n = 0; n < cfg.n_pairs; ++n) {
        t_emit += src.exponential(cfg.mean_interval_ps);

        std::int32_t s1 = 0, s2 = 0;
        if (cfg.settings_mode == SettingsMode::switched) {
            s1 = static_cast<std::int32_t>(st1.below(2));
            s2 = static_cast<std::int32_t>(st2.below(2));
        }
        const double a = d.station1.angles[static_cast<std::size_t>(s1)];
        const double b = d.station2.angles[static_cast<std::size_t>(s2)];

        int x = +1, y = +1;
        double delay1 = 0, delay2 = 0;
        if (quantum) {
            const auto [qx, qy] = sample_pair_quantum(a, b, qm, src);
            x = qx;
            y = qy;
        } else {
            const double theta = src.uniform() * two_pi;
            const LocalEvent e1 = local_timetag_event(theta, a, cfg.local, st1);
            const LocalEvent e2 = local_timetag_event(theta + half_pi, b, cfg.local, st2);
            x = e1.outcome;
            y = e2.outcome;
            delay1 = e1.delay_ps;
            delay2 = e2.delay_ps;
        }

        const double j1 = st1.gauss() * cfg.jitter_ps;
        const double j2 = st2.gauss() * cfg.jitter_ps;

        bool keep1 = true, keep2 = true;
        if (cfg.efficiency) {
            const DetectionParams& eff = *cfg.efficiency;
            const double k1 =
                eff.kappa1.empty() ? 1.0 : eff.kappa1[static_cast<std::size_t>(s1)];
            const double k2 =
                eff.kappa2.empty() ? 1.0 : eff.kappa2[static_cast<std::size_t>(s2)];
            keep1 = st1.uniform() < k1 * (x > 0 ? eff.eta1_plus : eff.eta1_minus);
            keep2 = st2.uniform() < k2 * (y > 0 ? eff.eta2_plus : eff.eta2_minus);
        }
        if (cfg.single_detector) {
            keep1 = keep1 && x > 0;
            keep2 = keep2 && y > 0;
        }

        if (keep1) {
            d.station1.events.push_back({detail::sim::quantize(t_emit + delay1 + j1, cfg.tick_ps),
                                         s1, x});
        }
        if (keep2) {
            d.station2.events.push_back({detail::sim::quantize(t_emit + delay2 + j2, cfg.tick_ps),
                                         s2, y});
        }
    }

    for (StationStream* s : {&d.station1, &d.station2}) {
        std::stable_sort(s->events.begin(), s->events.end(),
                         [](const EventRecord& u, const EventRecord& v) { return u.t_ps < v.t_ps; });
    }

    d.meta["generator"] = "belltest simulate";
    d.meta["sim_config"] = to_json(cfg).dump();
    return d;
}

} // namespace belltest
