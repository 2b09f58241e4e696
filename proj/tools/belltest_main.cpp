// belltest: coincidence analysis and event-by-event simulation for
// two-station photon-pair datasets.
//
// Subcommands: simulate, histogram, offset, coincidences, sweep, chsh,
// hypothesis, efficiency-fit, report. Every run writes its outputs plus a
// run_report.json manifest under --out. Exit codes: 0 ok, 2 argument/parse
// error, 3 data error, 4 hypothesis failure under --strict.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "belltest/belltest.hpp"

using namespace belltest;
using nlohmann::json;

namespace {

constexpr double kPi = 3.14159265358979323846;

double deg2rad(double d) { return d * kPi / 180.0; }
double rad2deg(double r) { return r * 180.0 / kPi; }

std::vector<double> parse_csv_doubles(const std::string& text, std::size_t expected,
                                      const std::string& what) {
    const auto fields = csv::split(text);
    if (fields.size() != expected) {
        throw ParamError(what + ": expected " + std::to_string(expected) +
                         " comma-separated values, got '" + text + "'");
    }
    std::vector<double> out;
    for (const auto f : fields) out.push_back(csv::parse_double(f, what));
    return out;
}

SettingQuad parse_angles(const std::string& text) {
    if (text == "chsh-default") {
        return {0.0, deg2rad(45.0), deg2rad(22.5), deg2rad(67.5)};
    }
    const auto v = parse_csv_doubles(text, 4, "--angles");
    return {deg2rad(v[0]), deg2rad(v[1]), deg2rad(v[2]), deg2rad(v[3])};
}

std::vector<std::int64_t> parse_window_grid(const std::string& text) {
    std::int64_t start = 0, stop = 0, step = 0;
    std::vector<std::string_view> parts;
    std::string_view sv = text;
    std::size_t pos = 0;
    while (true) {
        const std::size_t c = sv.find(':', pos);
        if (c == std::string_view::npos) {
            parts.push_back(sv.substr(pos));
            break;
        }
        parts.push_back(sv.substr(pos, c - pos));
        pos = c + 1;
    }
    if (parts.size() != 3) {
        throw ParamError("--window-grid: expected START:STOP:STEP, got '" + text + "'");
    }
    start = csv::parse_int<std::int64_t>(parts[0], "--window-grid start");
    stop = csv::parse_int<std::int64_t>(parts[1], "--window-grid stop");
    step = csv::parse_int<std::int64_t>(parts[2], "--window-grid step");
    if (step <= 0 || stop < start || start < 0) {
        throw ParamError("--window-grid: need start >= 0, stop >= start, step > 0");
    }
    std::vector<std::int64_t> grid;
    for (std::int64_t w = start; w <= stop; w += step) grid.push_back(w);
    return grid;
}

json angles_json(const SettingQuad& q) {
    return {{"a_deg", rad2deg(q.a)},
            {"ap_deg", rad2deg(q.ap)},
            {"b_deg", rad2deg(q.b)},
            {"bp_deg", rad2deg(q.bp)}};
}

json to_json(const Estimates& e) {
    return {{"e1", e.e1}, {"e2", e.e2}, {"e", e.e}, {"nc", e.nc}, {"bound", e.bound}};
}

json to_json(const ChshResult& r) {
    return {{"s", r.s},
            {"abs_s", std::abs(r.s)},
            {"bound", r.bound},
            {"err_2p5", 2.5 * r.bound},
            {"err_5", 5.0 * r.bound},
            {"nc_total", r.nc_total},
            {"angles", angles_json(r.angles)},
            {"per_pair",
             {{"ab", to_json(r.per_pair.ab)},
              {"abp", to_json(r.per_pair.abp)},
              {"apb", to_json(r.per_pair.apb)},
              {"apbp", to_json(r.per_pair.apbp)}}}};
}

json to_json(const HypothesisReport& r) {
    json cmp = json::array();
    for (const auto& c : r.comparisons) {
        cmp.push_back({{"label", c.label},
                       {"lhs", c.lhs},
                       {"rhs", c.rhs},
                       {"difference", c.difference},
                       {"combined_bound", c.combined_bound},
                       {"threshold_5x_combined", c.threshold},
                       {"single_cell_bound", c.single_cell_bound},
                       {"threshold_5x_single", 5.0 * c.single_cell_bound},
                       {"sigma_combined", c.sigma_combined},
                       {"sigma_single", c.sigma_single},
                       {"pass", c.pass},
                       {"warning", c.warning}});
    }
    return {{"comparisons", cmp},
            {"overall_pass", r.overall_pass},
            {"any_warning", r.any_warning},
            {"acausal", r.acausal},
            {"criterion", "per-comparison |difference| <= 5*sqrt(1/Nc + 1/Nc'); overall pass is "
                          "the conjunction over the four comparisons"}};
}

json to_json(const SweepTable& t) {
    json rows = json::array();
    for (const SweepRow& r : t.rows) {
        json row = {{"w_ps", r.w_ps},
                    {"valid", r.valid},
                    {"low_counts", r.low_counts},
                    {"nc_total", r.nc_total}};
        if (r.valid) {
            row["s"] = r.chsh.s;
            row["s_bound"] = r.chsh.bound;
            row["per_pair"] = to_json(r.chsh).at("per_pair");
        }
        rows.push_back(std::move(row));
    }
    return {{"angles", angles_json(t.angles)},
            {"delta_g_ps", t.delta_g_ps},
            {"policy", to_string(t.policy)},
            {"nc_floor", t.nc_floor},
            {"acausal", t.acausal()},
            {"rows", rows}};
}

json to_json(const Histogram& h) {
    json rows = json::array();
    for (std::size_t k = 0; k < h.counts.size(); ++k) {
        rows.push_back({h.center_ps(k), h.counts[k]});
    }
    return {{"bin_ps", h.bin_ps},
            {"range_ps", h.range_ps},
            {"total", h.total()},
            {"rows_are", "[bin_center_ps, count]"},
            {"rows", rows}};
}

json to_json(const PairList& p) {
    json rows = json::array();
    for (const MatchedPair& mp : p.pairs) rows.push_back({mp.i1, mp.i2, mp.delta_ps});
    return {{"window_ps", p.window_ps},
            {"offset_ps", p.offset_ps},
            {"policy", to_string(p.policy)},
            {"acausal", p.acausal()},
            {"n_pairs", p.pairs.size()},
            {"rows_are", "[i1, i2, delta_ps]"},
            {"rows", rows}};
}

json to_json(const EffSolution& s) {
    json ehat = json::object();
    const char* names[4] = {"ab", "abp", "apb", "apbp"};
    for (int k = 0; k < 4; ++k) {
        if (static_cast<int>(s.excluded) == k) {
            ehat[names[k]] = nullptr;
        } else {
            ehat[names[k]] = s.ehat[static_cast<std::size_t>(k)];
        }
    }
    return {{"excluded", to_string(s.excluded)},
            {"r1", s.r1},
            {"r2", s.r2},
            {"e1_a", s.e1_a},
            {"e1_ap", s.e1_ap},
            {"e2_b", s.e2_b},
            {"e2_bp", s.e2_bp},
            {"ehat", ehat},
            {"residual", s.residual},
            {"converged", s.converged},
            {"iterations", s.iterations},
            {"roots_found", s.roots_found},
            {"canonicalization", s.canonicalization}};
}

json to_json(const ConsistencyTable& t) {
    json sols = json::array();
    for (const EffSolution& s : t.solutions) sols.push_back(to_json(s));
    json out = {{"solutions", sols}, {"n_converged", t.n_converged}, {"ok", t.ok}};
    if (t.ok) {
        out["discrepancy"] = t.discrepancy;
    } else {
        out["discrepancy"] = nullptr;
        out["error"] = "insufficient converged solutions";
    }
    return out;
}

// Accumulates the manifest for run_report.json.
class RunContext {
public:
    RunContext(std::string command, std::filesystem::path out_dir)
        : command_(std::move(command)), out_dir_(std::move(out_dir)),
          start_(std::chrono::steady_clock::now()) {
        std::filesystem::create_directories(out_dir_);
    }

    const std::filesystem::path& dir() const { return out_dir_; }

    std::filesystem::path file(const std::string& name) {
        outputs_.push_back(name);
        return out_dir_ / name;
    }

    void write_json(const std::string& name, const json& j) {
        std::ofstream out(file(name), std::ios::binary);
        out << j.dump(2) << '\n';
    }

    void set_config(json cfg) { config_ = std::move(cfg); }
    void set_acausal(bool v) { acausal_ = v; }
    void add_verdict(const std::string& key, json v) { verdicts_[key] = std::move(v); }

    void finish() {
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        json report = {{"command", command_},
                       {"config", config_},
                       {"acausal", acausal_},
                       {"outputs", outputs_},
                       {"wall_time_s", secs}};
        if (!verdicts_.empty()) report["verdicts"] = verdicts_;
        std::ofstream out(out_dir_ / "run_report.json", std::ios::binary);
        out << report.dump(2) << '\n';
    }

private:
    std::string command_;
    std::filesystem::path out_dir_;
    std::vector<std::string> outputs_;
    json config_ = json::object();
    json verdicts_ = json::object();
    bool acausal_ = false;
    std::chrono::steady_clock::time_point start_;
};

std::vector<RotatedRun> load_rotated_counts(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("missing file: " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw ParseError(path.string() + ": empty file");
    if (csv::trim(line) != "a_deg,b_deg,c_pp") {
        throw ParseError(path.string() + ": expected header 'a_deg,b_deg,c_pp'");
    }
    std::vector<RotatedRun> runs;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        const auto sv = csv::trim(line);
        if (sv.empty()) continue;
        const auto f = csv::split(sv);
        const std::string where = path.filename().string() + " line " + std::to_string(lineno);
        if (f.size() != 3) throw ParseError(where + ": expected 3 fields");
        RotatedRun r;
        r.a_rad = deg2rad(csv::parse_double(f[0], where + " a_deg"));
        r.b_rad = deg2rad(csv::parse_double(f[1], where + " b_deg"));
        r.c_pp = csv::parse_int<std::int64_t>(f[2], where + " c_pp");
        runs.push_back(r);
    }
    return runs;
}

std::vector<std::pair<SettingQuad, CountsTable>> load_full_counts(
    const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("missing file: " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw ParseError(path.string() + ": empty file");
    if (csv::trim(line) != "a_deg,b_deg,c_pp,c_pm,c_mp,c_mm") {
        throw ParseError(path.string() + ": expected header 'a_deg,b_deg,c_pp,c_pm,c_mp,c_mm'");
    }
    std::vector<std::pair<SettingQuad, CountsTable>> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        const auto sv = csv::trim(line);
        if (sv.empty()) continue;
        const auto f = csv::split(sv);
        const std::string where = path.filename().string() + " line " + std::to_string(lineno);
        if (f.size() != 6) throw ParseError(where + ": expected 6 fields");
        SettingQuad q{};
        q.a = deg2rad(csv::parse_double(f[0], where));
        q.b = deg2rad(csv::parse_double(f[1], where));
        CountsTable c;
        c.pp = csv::parse_int<std::int64_t>(f[2], where);
        c.pm = csv::parse_int<std::int64_t>(f[3], where);
        c.mp = csv::parse_int<std::int64_t>(f[4], where);
        c.mm = csv::parse_int<std::int64_t>(f[5], where);
        rows.emplace_back(q, c);
    }
    return rows;
}

PairGridEstimates grid_from_full_counts(
    const std::vector<std::pair<SettingQuad, CountsTable>>& rows, const SettingQuad& quad) {
    auto find = [&](double a, double b) -> const CountsTable& {
        for (const auto& [key, c] : rows) {
            if (std::abs(std::remainder(key.a - a, kPi)) <= 1e-9 &&
                std::abs(std::remainder(key.b - b, kPi)) <= 1e-9) {
                return c;
            }
        }
        throw DataError("counts file has no row for a=" + std::to_string(rad2deg(a)) +
                        ", b=" + std::to_string(rad2deg(b)) + " (degrees)");
    };
    PairGridEstimates g;
    g.angles = quad;
    g.ab = estimates_from_counts(find(quad.a, quad.b));
    g.abp = estimates_from_counts(find(quad.a, quad.bp));
    g.apb = estimates_from_counts(find(quad.ap, quad.b));
    g.apbp = estimates_from_counts(find(quad.ap, quad.bp));
    return g;
}

// Shared input plumbing for chsh/hypothesis: either a dataset directory with
// a window, or a counts CSV (rotated ++ runs or full tables).
struct GridSource {
    std::string data_dir;
    std::string counts_file;
    bool rotated_runs = false;
    std::int64_t window_ps = 25'000;
    std::int64_t delta_g_ps = 0;
    std::string policy = "greedy";
    std::string angles = "chsh-default";

    void add_options(CLI::App* cmd) {
        cmd->add_option("--data", data_dir, "dataset directory (meta.json + stationK.csv)");
        cmd->add_option("--counts", counts_file, "counts CSV instead of a dataset");
        cmd->add_flag("--rotated-runs", rotated_runs,
                      "counts file holds per-setting ++ counts (a_deg,b_deg,c_pp)");
        cmd->add_option("--window", window_ps, "coincidence window W in ps");
        cmd->add_option("--delta-g", delta_g_ps, "global offset added to station 1 tags (ps)");
        cmd->add_option("--policy", policy, "matching policy: greedy|sequential");
        cmd->add_option("--angles", angles, "A,AP,B,BP in degrees, or 'chsh-default'");
    }

    json config() const {
        json j = {{"angles", angles}};
        if (!counts_file.empty()) {
            j["counts"] = counts_file;
            j["rotated_runs"] = rotated_runs;
        } else {
            j["data"] = data_dir;
            j["window_ps"] = window_ps;
            j["delta_g_ps"] = delta_g_ps;
            j["policy"] = policy;
        }
        return j;
    }

    PairGridEstimates load_grid() const {
        const SettingQuad quad = parse_angles(angles);
        if (!counts_file.empty()) {
            if (rotated_runs) {
                return grid_from_rotated_runs(load_rotated_counts(counts_file), quad);
            }
            return grid_from_full_counts(load_full_counts(counts_file), quad);
        }
        if (data_dir.empty()) {
            throw ParamError("need --data DIR or --counts FILE");
        }
        const Dataset d = load_dataset(data_dir);
        const PairList p = match_coincidences(d.station1, d.station2, window_ps,
                                              policy_from_string(policy), delta_g_ps);
        return grid_from_counts(count_coincidences(p, d.station1, d.station2), d, quad);
    }

    bool acausal() const { return counts_file.empty() && delta_g_ps != 0; }
};

void write_singles_csv(const SweepTable& t, const std::filesystem::path& path) {
    csv::Writer w(path.string());
    w.line("W_ps,E1_ab,err25_E1_ab,E1_abp,err25_E1_abp,E1_apb,err25_E1_apb,"
           "E1_apbp,err25_E1_apbp,E2_ab,err25_E2_ab,E2_apb,err25_E2_apb,"
           "E2_abp,err25_E2_abp,E2_apbp,err25_E2_apbp");
    char buf[64];
    auto fmt = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.10g", v);
        return std::string(buf);
    };
    for (const SweepRow& r : t.rows) {
        std::string line = csv::format_int(r.w_ps);
        const PairGridEstimates& g = r.chsh.per_pair;
        const Estimates* cells[4] = {&g.ab, &g.abp, &g.apb, &g.apbp};
        const Estimates* cells2[4] = {&g.ab, &g.apb, &g.abp, &g.apbp};
        for (int k = 0; k < 4; ++k) {
            line += ',';
            line += fmt(r.valid ? cells[k]->e1 : std::nan(""));
            line += ',';
            line += fmt(r.valid ? 2.5 * cells[k]->bound : std::nan(""));
        }
        for (int k = 0; k < 4; ++k) {
            line += ',';
            line += fmt(r.valid ? cells2[k]->e2 : std::nan(""));
            line += ',';
            line += fmt(r.valid ? 2.5 * cells2[k]->bound : std::nan(""));
        }
        w.line(line);
    }
    w.flush();
}

// ---------------------------------------------------------------------------
// Subcommand implementations
// ---------------------------------------------------------------------------

struct SimulateArgs {
    std::string model = "singlet";
    std::int64_t pairs = 0;
    std::uint64_t seed = 1;
    std::string out;
    std::string angles = "chsh-default";
    std::string fixed;
    bool single_detector = false;
    double mean_interval_ps = 30e6;
    double jitter_ps = 1000;
    std::int64_t tick_ps = 1;
    std::int64_t t0_ps = 1'000'000;
    int exponent = 2;
    std::string sign_rule = "deterministic";
    double p1_deg = 0, p2_deg = 0;
    std::string eta1, eta2;
    double kappa1 = 1.0, kappa2 = 1.0;
};

int run_simulate(const SimulateArgs& a) {
    SimConfig cfg;
    cfg.n_pairs = a.pairs;
    cfg.seed = a.seed;
    cfg.mean_interval_ps = a.mean_interval_ps;
    cfg.jitter_ps = a.jitter_ps;
    cfg.tick_ps = a.tick_ps;
    if (!a.fixed.empty()) {
        const auto v = parse_csv_doubles(a.fixed, 2, "--fixed");
        cfg.settings_mode = SettingsMode::fixed;
        cfg.fixed_a_rad = deg2rad(v[0]);
        cfg.fixed_b_rad = deg2rad(v[1]);
        cfg.single_detector = a.single_detector;
    } else {
        cfg.settings_mode = SettingsMode::switched;
        cfg.angles = parse_angles(a.angles);
        if (a.single_detector) throw ParamError("--single-detector requires --fixed A,B");
    }
    if (a.model == "singlet") {
        cfg.outcome_model = OutcomeModel::singlet;
    } else if (a.model == "product") {
        cfg.outcome_model = OutcomeModel::product;
        cfg.product = {deg2rad(a.p1_deg), deg2rad(a.p2_deg)};
    } else if (a.model == "local") {
        cfg.outcome_model = OutcomeModel::local_timetag;
        cfg.local.t0_ps = a.t0_ps;
        cfg.local.exponent = a.exponent;
        if (a.sign_rule == "deterministic") {
            cfg.local.sign_rule = SignRule::deterministic;
        } else if (a.sign_rule == "malus") {
            cfg.local.sign_rule = SignRule::malus;
        } else {
            throw ParamError("--sign-rule must be deterministic or malus");
        }
    } else {
        throw ParamError("--model must be singlet, product or local");
    }
    if (!a.eta1.empty() || !a.eta2.empty() || a.kappa1 != 1.0 || a.kappa2 != 1.0) {
        DetectionParams eff;
        if (!a.eta1.empty()) {
            const auto v = parse_csv_doubles(a.eta1, 2, "--eta1");
            eff.eta1_plus = v[0];
            eff.eta1_minus = v[1];
        }
        if (!a.eta2.empty()) {
            const auto v = parse_csv_doubles(a.eta2, 2, "--eta2");
            eff.eta2_plus = v[0];
            eff.eta2_minus = v[1];
        }
        const std::size_t n1 = cfg.settings_mode == SettingsMode::switched ? 2 : 1;
        if (a.kappa1 != 1.0) eff.kappa1.assign(n1, a.kappa1);
        if (a.kappa2 != 1.0) eff.kappa2.assign(n1, a.kappa2);
        cfg.efficiency = eff;
    }

    RunContext ctx("simulate", a.out);
    ctx.set_config(to_json(cfg));
    const Dataset d = simulate(cfg);
    save_dataset(ctx.dir(), d);
    ctx.file("meta.json");
    ctx.file("station1.csv");
    ctx.file("station2.csv");
    ctx.add_verdict("events_station1", d.station1.events.size());
    ctx.add_verdict("events_station2", d.station2.events.size());
    ctx.finish();
    std::cout << "wrote dataset with " << d.station1.events.size() << " + "
              << d.station2.events.size() << " events to " << ctx.dir().string() << "\n";
    return 0;
}

int run_histogram(const std::string& data, std::int64_t bin, std::int64_t range,
                  std::int64_t delta_g, const std::string& out) {
    RunContext ctx("histogram", out);
    ctx.set_config({{"data", data}, {"bin_ps", bin}, {"range_ps", range}, {"delta_g_ps", delta_g}});
    ctx.set_acausal(delta_g != 0);
    Dataset d = load_dataset(data);
    if (delta_g != 0) d.station1 = apply_offset(d.station1, delta_g);
    const Histogram h = difference_histogram(d.station1, d.station2, bin, range);
    write_csv(h, ctx.file("histogram.csv"));
    ctx.write_json("histogram.json", to_json(h));
    ctx.finish();
    std::cout << "histogram total " << h.total() << " pairs in [-" << range << ", " << range
              << "] ps\n";
    return 0;
}

int run_offset(const std::string& data, std::int64_t bin, std::int64_t range, bool apply,
               const std::string& apply_out, const std::string& out) {
    RunContext ctx("offset", out);
    ctx.set_config({{"data", data},
                    {"bin_ps", bin},
                    {"range_ps", range},
                    {"apply", apply},
                    {"apply_out", apply_out}});
    const Dataset d = load_dataset(data);
    const Histogram h = difference_histogram(d.station1, d.station2, bin, range);
    const std::int64_t delta = estimate_global_offset(h);
    write_csv(h, ctx.file("histogram.csv"));
    ctx.write_json("histogram.json", to_json(h));
    ctx.write_json("offset.json", {{"delta_g_ps", delta},
                                   {"bin_ps", bin},
                                   {"range_ps", range},
                                   {"note", "offset that moves the difference-histogram peak to "
                                            "zero when added to station 1 tags"}});
    ctx.add_verdict("delta_g_ps", delta);
    if (apply) {
        if (apply_out.empty()) throw ParamError("--apply requires --apply-out DIR");
        Dataset shifted = d;
        shifted.station1 = apply_offset(d.station1, delta);
        shifted.meta["applied_delta_g_ps"] = std::to_string(delta);
        save_dataset(apply_out, shifted);
        ctx.set_acausal(delta != 0);
        ctx.add_verdict("applied_to", apply_out);
    }
    ctx.finish();
    std::cout << "estimated Delta_G = " << delta << " ps\n";
    return 0;
}

int run_coincidences(const std::string& data, std::int64_t window, const std::string& policy,
                     std::int64_t delta_g, const std::string& out) {
    RunContext ctx("coincidences", out);
    ctx.set_config({{"data", data},
                    {"window_ps", window},
                    {"policy", policy},
                    {"delta_g_ps", delta_g}});
    ctx.set_acausal(delta_g != 0);
    const Dataset d = load_dataset(data);
    const PairList p =
        match_coincidences(d.station1, d.station2, window, policy_from_string(policy), delta_g);
    const CountsBySetting counts = count_coincidences(p, d.station1, d.station2);
    write_csv(p, ctx.file("pairs.csv"));
    ctx.write_json("pairs.json", to_json(p));
    write_counts_csv(counts, d, ctx.file("counts.csv"));
    json jc = json::array();
    for (const auto& [key, c] : counts) {
        jc.push_back({{"a_rad", d.station1.angles[static_cast<std::size_t>(key.first)]},
                      {"b_rad", d.station2.angles[static_cast<std::size_t>(key.second)]},
                      {"c_pp", c.pp},
                      {"c_pm", c.pm},
                      {"c_mp", c.mp},
                      {"c_mm", c.mm},
                      {"n_c", c.total()}});
    }
    ctx.write_json("counts.json", jc);
    ctx.add_verdict("n_coincidences", p.pairs.size());
    ctx.finish();
    std::cout << p.pairs.size() << " coincidences at W=" << window << " ps\n";
    return 0;
}

int run_sweep(const std::string& data, const std::string& angles, const std::string& grid_text,
              std::int64_t delta_g, const std::string& policy, std::int64_t nc_floor,
              const std::string& out) {
    RunContext ctx("sweep", out);
    ctx.set_config({{"data", data},
                    {"angles", angles},
                    {"window_grid", grid_text},
                    {"delta_g_ps", delta_g},
                    {"policy", policy},
                    {"nc_floor", nc_floor}});
    ctx.set_acausal(delta_g != 0);
    const Dataset d = load_dataset(data);
    const SweepTable t = window_sweep(d, parse_angles(angles), parse_window_grid(grid_text),
                                      delta_g, policy_from_string(policy), nc_floor);
    write_csv(t, ctx.file("sweep.csv"));
    ctx.write_json("sweep.json", to_json(t));
    ctx.finish();
    std::cout << "sweep over " << t.rows.size() << " windows written\n";
    return 0;
}

int run_chsh(const GridSource& src, const std::string& out) {
    RunContext ctx("chsh", out);
    ctx.set_config(src.config());
    ctx.set_acausal(src.acausal());
    const PairGridEstimates g = src.load_grid();
    const ChshResult r = chsh(g);
    ctx.write_json("chsh.json", to_json(r));
    ctx.add_verdict("s", r.s);
    ctx.add_verdict("abs_s", std::abs(r.s));
    ctx.finish();
    std::printf("S = %.3f  |S| = %.3f  bound = %.4f  Nc = %lld\n", r.s, std::abs(r.s), r.bound,
                static_cast<long long>(r.nc_total));
    return 0;
}

int run_hypothesis(const GridSource& src, bool strict, const std::string& out) {
    RunContext ctx("hypothesis", out);
    json cfg = src.config();
    cfg["strict"] = strict;
    ctx.set_config(cfg);
    ctx.set_acausal(src.acausal());
    const PairGridEstimates g = src.load_grid();
    const HypothesisReport r = hypothesis_test(g, src.acausal());
    ctx.write_json("hypothesis.json", to_json(r));
    ctx.add_verdict("overall_pass", r.overall_pass);
    ctx.add_verdict("any_warning", r.any_warning);
    ctx.finish();
    for (const auto& c : r.comparisons) {
        std::printf("%-24s diff=%+.4f  sigma(combined)=%.2f  sigma(single)=%.2f  %s\n",
                    c.label.c_str(), c.difference, c.sigma_combined, c.sigma_single,
                    c.pass ? (c.warning ? "pass (warning: >4 sigma)" : "pass") : "FAIL");
    }
    std::printf("hypothesis: %s\n",
                r.overall_pass ? (r.any_warning ? "PASS with warnings" : "PASS") : "FAIL");
    if (strict && !r.overall_pass) return 4;
    return 0;
}

int run_efficiency_fit(const GridSource& src, const std::string& estimates_file,
                       const std::string& out) {
    RunContext ctx("efficiency-fit", out);
    json cfg = src.config();
    if (!estimates_file.empty()) cfg = {{"estimates", estimates_file}};
    ctx.set_config(cfg);
    ctx.set_acausal(estimates_file.empty() && src.acausal());

    std::array<MeasuredTriple, 4> measured{};
    if (!estimates_file.empty()) {
        std::ifstream in(estimates_file, std::ios::binary);
        if (!in) throw LoadError("missing file: " + estimates_file);
        std::string line;
        if (!std::getline(in, line) || csv::trim(line) != "pair,E1,E2,E") {
            throw ParseError(estimates_file + ": expected header 'pair,E1,E2,E'");
        }
        bool seen[4] = {false, false, false, false};
        std::size_t lineno = 1;
        while (std::getline(in, line)) {
            ++lineno;
            const auto sv = csv::trim(line);
            if (sv.empty()) continue;
            const auto f = csv::split(sv);
            const std::string where = estimates_file + " line " + std::to_string(lineno);
            if (f.size() != 4) throw ParseError(where + ": expected 4 fields");
            const std::string name(csv::trim(f[0]));
            int idx = -1;
            if (name == "ab") idx = 0;
            else if (name == "abp") idx = 1;
            else if (name == "apb") idx = 2;
            else if (name == "apbp") idx = 3;
            else throw ParseError(where + ": pair must be ab, abp, apb or apbp");
            measured[static_cast<std::size_t>(idx)] = {
                all_pairs[static_cast<std::size_t>(idx)], csv::parse_double(f[1], where),
                csv::parse_double(f[2], where), csv::parse_double(f[3], where)};
            seen[idx] = true;
        }
        for (int k = 0; k < 4; ++k) {
            if (!seen[k]) {
                throw DataError("efficiency-fit: estimates file is missing pair " +
                                to_string(all_pairs[static_cast<std::size_t>(k)]));
            }
        }
    } else {
        const PairGridEstimates g = src.load_grid();
        measured = {MeasuredTriple{PairId::ab, g.ab.e1, g.ab.e2, g.ab.e},
                    MeasuredTriple{PairId::abp, g.abp.e1, g.abp.e2, g.abp.e},
                    MeasuredTriple{PairId::apb, g.apb.e1, g.apb.e2, g.apb.e},
                    MeasuredTriple{PairId::apbp, g.apbp.e1, g.apbp.e2, g.apbp.e}};
    }

    const ConsistencyTable t = consistency_table(measured);
    write_csv(t, ctx.file("consistency.csv"));
    ctx.write_json("consistency.json", to_json(t));
    if (t.ok) ctx.add_verdict("discrepancy", t.discrepancy);
    ctx.add_verdict("n_converged", t.n_converged);
    ctx.finish();
    if (!t.ok) {
        std::cerr << "efficiency-fit: fewer than two exclusion systems converged\n";
        return 3;
    }
    std::printf("consistency discrepancy over shared unknowns: %.6g\n", t.discrepancy);
    return 0;
}

int run_report(const std::string& data, const std::string& angles, const std::string& grid_text,
               std::int64_t window, std::int64_t delta_g, const std::string& policy,
               bool allow_acausal, bool strict, const std::string& out) {
    if (delta_g != 0 && !allow_acausal) {
        throw ParamError("report: nonzero --delta-g makes the analysis acausal; pass "
                         "--allow-acausal to proceed");
    }
    RunContext ctx("report", out);
    ctx.set_config({{"data", data},
                    {"angles", angles},
                    {"window_grid", grid_text},
                    {"window_ps", window},
                    {"delta_g_ps", delta_g},
                    {"policy", policy},
                    {"allow_acausal", allow_acausal},
                    {"strict", strict}});
    ctx.set_acausal(delta_g != 0);
    const Dataset d = load_dataset(data);
    const SettingQuad quad = parse_angles(angles);
    const MatchPolicy pol = policy_from_string(policy);

    // 1. S as a function of W;  2. singles as a function of W
    const SweepTable t = window_sweep(d, quad, parse_window_grid(grid_text), delta_g, pol);
    write_csv(t, ctx.file("sweep.csv"));
    ctx.write_json("sweep.json", to_json(t));
    write_singles_csv(t, ctx.file("singles.csv"));

    // 3. coincidence counts and 4. correlations at the reference window
    const PairList p = match_coincidences(d.station1, d.station2, window, pol, delta_g);
    const CountsBySetting counts = count_coincidences(p, d.station1, d.station2);
    write_counts_csv(counts, d, ctx.file("counts.csv"));
    write_correlations_csv(counts, d, ctx.file("correlations.csv"));

    const PairGridEstimates g = grid_from_counts(counts, d, quad);
    const ChshResult r = chsh(g);
    ctx.write_json("chsh.json", to_json(r));
    const HypothesisReport hyp = hypothesis_test(g, delta_g != 0);
    ctx.write_json("hypothesis.json", to_json(hyp));
    ctx.add_verdict("abs_s_at_window", std::abs(r.s));
    ctx.add_verdict("hypothesis_pass", hyp.overall_pass);
    ctx.add_verdict("hypothesis_warnings", hyp.any_warning);
    ctx.finish();
    std::printf("report written: |S|(W=%lld ps) = %.3f, hypothesis %s\n",
                static_cast<long long>(window), std::abs(r.s),
                hyp.overall_pass ? "PASS" : "FAIL");
    if (strict && !hyp.overall_pass) return 4;
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"coincidence analysis and event-by-event simulation for two-station "
                 "photon-pair experiments"};
    app.require_subcommand(1);

    // simulate
    SimulateArgs sim;
    auto* c_sim = app.add_subcommand("simulate", "generate a synthetic dataset");
    c_sim->add_option("--model", sim.model, "singlet|product|local")->capture_default_str();
    c_sim->add_option("--pairs", sim.pairs, "number of emitted pairs")->required();
    c_sim->add_option("--seed", sim.seed, "RNG seed")->capture_default_str();
    c_sim->add_option("--out", sim.out, "output dataset directory")->required();
    c_sim->add_option("--angles", sim.angles, "switched-mode angles (degrees)")
        ->capture_default_str();
    c_sim->add_option("--fixed", sim.fixed, "fixed settings A,B in degrees");
    c_sim->add_flag("--single-detector", sim.single_detector,
                    "keep only +1 outcomes (fixed-run style)");
    c_sim->add_option("--mean-interval-ps", sim.mean_interval_ps)->capture_default_str();
    c_sim->add_option("--jitter-ps", sim.jitter_ps)->capture_default_str();
    c_sim->add_option("--tick-ps", sim.tick_ps)->capture_default_str();
    c_sim->add_option("--t0-ps", sim.t0_ps, "local model: max delay")->capture_default_str();
    c_sim->add_option("--exponent", sim.exponent, "local model: delay exponent d")
        ->capture_default_str();
    c_sim->add_option("--sign-rule", sim.sign_rule, "local model: deterministic|malus")
        ->capture_default_str();
    c_sim->add_option("--p1-deg", sim.p1_deg, "product model: station-1 axis")->capture_default_str();
    c_sim->add_option("--p2-deg", sim.p2_deg, "product model: station-2 axis")->capture_default_str();
    c_sim->add_option("--eta1", sim.eta1, "detector efficiencies P,M for station 1");
    c_sim->add_option("--eta2", sim.eta2, "detector efficiencies P,M for station 2");
    c_sim->add_option("--kappa1", sim.kappa1, "modulator transmission, station 1")
        ->capture_default_str();
    c_sim->add_option("--kappa2", sim.kappa2, "modulator transmission, station 2")
        ->capture_default_str();

    // histogram
    std::string h_data, h_out = ".";
    std::int64_t h_bin = 500, h_range = 1'000'000, h_delta = 0;
    auto* c_hist = app.add_subcommand("histogram", "time-tag difference histogram");
    c_hist->add_option("--data", h_data)->required();
    c_hist->add_option("--bin", h_bin, "bin width in ps")->capture_default_str();
    c_hist->add_option("--range", h_range, "half-range in ps")->capture_default_str();
    c_hist->add_option("--delta-g", h_delta)->capture_default_str();
    c_hist->add_option("--out", h_out)->capture_default_str();

    // offset
    std::string o_data, o_out = ".", o_apply_out;
    std::int64_t o_bin = 500, o_range = 1'000'000;
    bool o_apply = false;
    auto* c_off = app.add_subcommand("offset", "estimate the global offset Delta_G");
    c_off->add_option("--data", o_data)->required();
    c_off->add_option("--bin", o_bin)->capture_default_str();
    c_off->add_option("--range", o_range)->capture_default_str();
    c_off->add_flag("--apply", o_apply, "write a dataset with the offset applied");
    c_off->add_option("--apply-out", o_apply_out, "directory for the shifted dataset");
    c_off->add_option("--out", o_out)->capture_default_str();

    // coincidences
    std::string n_data, n_policy = "greedy", n_out = ".";
    std::int64_t n_window = 0, n_delta = 0;
    auto* c_coin = app.add_subcommand("coincidences", "match pairs and count per setting");
    c_coin->add_option("--data", n_data)->required();
    c_coin->add_option("--window", n_window, "coincidence window W in ps")->required();
    c_coin->add_option("--policy", n_policy)->capture_default_str();
    c_coin->add_option("--delta-g", n_delta)->capture_default_str();
    c_coin->add_option("--out", n_out)->capture_default_str();

    // sweep
    std::string s_data, s_angles = "chsh-default", s_grid = "1000:10000:1000",
                s_policy = "greedy", s_out = ".";
    std::int64_t s_delta = 0, s_floor = 100;
    auto* c_sweep = app.add_subcommand("sweep", "S and singles as a function of W");
    c_sweep->add_option("--data", s_data)->required();
    c_sweep->add_option("--angles", s_angles)->capture_default_str();
    c_sweep->add_option("--window-grid", s_grid, "START:STOP:STEP in ps")->capture_default_str();
    c_sweep->add_option("--delta-g", s_delta)->capture_default_str();
    c_sweep->add_option("--policy", s_policy)->capture_default_str();
    c_sweep->add_option("--nc-floor", s_floor, "low-count flag threshold")->capture_default_str();
    c_sweep->add_option("--out", s_out)->capture_default_str();

    // chsh
    GridSource chsh_src;
    std::string chsh_out = ".";
    auto* c_chsh = app.add_subcommand("chsh", "CHSH function S for one window");
    chsh_src.add_options(c_chsh);
    c_chsh->add_option("--out", chsh_out)->capture_default_str();

    // hypothesis
    GridSource hyp_src;
    std::string hyp_out = ".";
    bool hyp_strict = false;
    auto* c_hyp = app.add_subcommand("hypothesis", "remote-setting dependence test");
    hyp_src.add_options(c_hyp);
    c_hyp->add_flag("--strict", hyp_strict, "exit 4 when the test fails");
    c_hyp->add_option("--out", hyp_out)->capture_default_str();

    // efficiency-fit
    GridSource eff_src;
    std::string eff_estimates, eff_out = ".";
    auto* c_eff = app.add_subcommand("efficiency-fit",
                                     "solve the detector-efficiency consistency systems");
    eff_src.add_options(c_eff);
    c_eff->add_option("--estimates", eff_estimates, "CSV pair,E1,E2,E instead of a dataset");
    c_eff->add_option("--out", eff_out)->capture_default_str();

    // report
    std::string r_data, r_angles = "chsh-default", r_grid = "1000:10000:1000",
                r_policy = "greedy", r_out = ".";
    std::int64_t r_window = 10'000, r_delta = 0;
    bool r_allow = false, r_strict = false;
    auto* c_rep = app.add_subcommand("report", "full analysis: sweep, singles, counts, "
                                               "correlations, hypothesis");
    c_rep->add_option("--data", r_data)->required();
    c_rep->add_option("--angles", r_angles)->capture_default_str();
    c_rep->add_option("--window-grid", r_grid)->capture_default_str();
    c_rep->add_option("--window", r_window, "reference window for counts/correlations")
        ->capture_default_str();
    c_rep->add_option("--delta-g", r_delta)->capture_default_str();
    c_rep->add_option("--policy", r_policy)->capture_default_str();
    c_rep->add_flag("--allow-acausal", r_allow, "permit a nonzero --delta-g");
    c_rep->add_flag("--strict", r_strict, "exit 4 when the hypothesis test fails");
    c_rep->add_option("--out", r_out)->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e); // help text, exit 0
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (c_sim->parsed()) return run_simulate(sim);
        if (c_hist->parsed()) return run_histogram(h_data, h_bin, h_range, h_delta, h_out);
        if (c_off->parsed()) return run_offset(o_data, o_bin, o_range, o_apply, o_apply_out, o_out);
        if (c_coin->parsed()) return run_coincidences(n_data, n_window, n_policy, n_delta, n_out);
        if (c_sweep->parsed())
            return run_sweep(s_data, s_angles, s_grid, s_delta, s_policy, s_floor, s_out);
        if (c_chsh->parsed()) return run_chsh(chsh_src, chsh_out);
        if (c_hyp->parsed()) return run_hypothesis(hyp_src, hyp_strict, hyp_out);
        if (c_eff->parsed()) return run_efficiency_fit(eff_src, eff_estimates, eff_out);
        if (c_rep->parsed())
            return run_report(r_data, r_angles, r_grid, r_window, r_delta, r_policy, r_allow,
                              r_strict, r_out);
    } catch (const ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const ParamError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) { // Load/Data/Range/Model errors
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 2;
}
