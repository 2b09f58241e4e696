#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "belltest/csv.hpp"
#include "belltest/errors.hpp"

namespace belltest {

// One detection: integer picosecond time tag, index into the station's angle
// table, and which detector fired (+1/-1).
struct EventRecord {
    std::int64_t t_ps = 0;
    std::int32_t setting = 0;
    std::int32_t outcome = +1;

    friend bool operator==(const EventRecord&, const EventRecord&) = default;
};

// switched: per-event random settings; fixed_run: one setting pair per run and
// only +1 outcomes (single-detector experiments); swept: station 1 fixed,
// station 2 stepped through many angles.
enum class DatasetStyle { switched, fixed_run, swept };

inline std::string to_string(DatasetStyle s) {
    switch (s) {
        case DatasetStyle::switched: return "switched";
        case DatasetStyle::fixed_run: return "fixed-run";
        case DatasetStyle::swept: return "swept";
    }
    return "switched";
}

inline DatasetStyle style_from_string(const std::string& s) {
    if (s == "switched") return DatasetStyle::switched;
    if (s == "fixed-run") return DatasetStyle::fixed_run;
    if (s == "swept") return DatasetStyle::swept;
    throw ParseError("meta.json: unknown style '" + s + "'");
}

struct StationStream {
    int station_id = 1;
    std::vector<double> angles;      // radians, each in [0, 2*pi)
    std::vector<EventRecord> events; // non-decreasing in t_ps
    std::int64_t tick_ps = 1;        // time-tag resolution

    friend bool operator==(const StationStream&, const StationStream&) = default;
};

struct Dataset {
    StationStream station1;
    StationStream station2;
    DatasetStyle style = DatasetStyle::switched;
    std::map<std::string, std::string> meta; // free-form provenance strings
    std::vector<std::string> warnings;       // transient load diagnostics

    friend bool operator==(const Dataset& a, const Dataset& b) {
        return a.station1 == b.station1 && a.station2 == b.station2 &&
               a.style == b.style && a.meta == b.meta; // warnings are not data
    }
};

constexpr double two_pi = 6.283185307179586476925287;

inline double wrap_angle(double a) {
    a = std::fmod(a, two_pi);
    if (a < 0) a += two_pi;
    return a;
}

// Locate an angle in a station's table; -1 when absent. Exact setting indices
// are preferred by callers that have them; this is the float fallback.
inline int angle_index(const StationStream& s, double angle_rad, double tol = 1e-9) {
    for (std::size_t i = 0; i < s.angles.size(); ++i) {
        const double d = std::remainder(s.angles[i] - angle_rad, two_pi);
        if (std::abs(d) <= tol) return static_cast<int>(i);
    }
    return -1;
}

inline void validate_stream(const StationStream& s, const std::string& name) {
    if (s.tick_ps <= 0) throw ParseError(name + ": tick_ps must be positive");
    for (std::size_t i = 0; i < s.angles.size(); ++i) {
        const double a = s.angles[i];
        if (!(a >= 0.0 && a < two_pi)) {
            throw ParseError(name + ": angle[" + std::to_string(i) + "] out of [0, 2pi)");
        }
    }
    const auto n_angles = static_cast<std::int32_t>(s.angles.size());
    for (std::size_t i = 0; i < s.events.size(); ++i) {
        const EventRecord& e = s.events[i];
        if (e.outcome != +1 && e.outcome != -1) {
            throw ParseError(name + " event " + std::to_string(i) + ": outcome must be \xc2\xb1" "1");
        }
        if (e.setting < 0 || e.setting >= n_angles) {
            throw ParseError(name + " event " + std::to_string(i) + ": setting index out of range");
        }
        if (i > 0 && s.events[i - 1].t_ps > e.t_ps) {
            throw ParseError(name + ": events not sorted by t_ps");
        }
    }
}

inline void validate_dataset(const Dataset& d) {
    validate_stream(d.station1, "station1");
    validate_stream(d.station2, "station2");
    if (d.style == DatasetStyle::fixed_run) {
        for (const StationStream* s : {&d.station1, &d.station2}) {
            const std::string name = "station" + std::to_string(s->station_id);
            if (s->angles.size() != 1) {
                throw ParseError("fixed-run dataset: " + name + " must have exactly one angle");
            }
            for (const EventRecord& e : s->events) {
                if (e.outcome != +1) {
                    throw ParseError("fixed-run dataset: " + name + " contains outcome != +1");
                }
            }
        }
    }
}

namespace detail {

inline std::vector<EventRecord> parse_station_csv(const std::filesystem::path& path,
                                                  std::int32_t n_angles,
                                                  bool& resorted) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("missing file: " + path.string());

    const std::string fname = path.filename().string();
    std::string line;
    std::size_t lineno = 0;
    auto where = [&](std::size_t data_row) {
        return fname + " line " + std::to_string(lineno) +
               " (data row " + std::to_string(data_row) + ")";
    };

    if (!std::getline(in, line)) throw ParseError(fname + ": empty file, expected header");
    ++lineno;
    if (csv::trim(line) != "t_ps,setting,outcome") {
        throw ParseError(fname + " line 1: expected header 't_ps,setting,outcome'");
    }

    std::vector<EventRecord> events;
    std::size_t data_row = 0;
    bool sorted = true;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string_view sv = csv::trim(line);
        if (sv.empty()) continue;
        ++data_row;
        const auto fields = csv::split(sv);
        if (fields.size() != 3) {
            throw ParseError(where(data_row) + ": expected 3 fields, got " +
                             std::to_string(fields.size()));
        }
        EventRecord e;
        e.t_ps = csv::parse_int<std::int64_t>(fields[0], where(data_row) + " t_ps");
        e.setting = csv::parse_int<std::int32_t>(fields[1], where(data_row) + " setting");
        const auto out = csv::parse_int<std::int64_t>(fields[2], where(data_row) + " outcome");
        if (out != +1 && out != -1) {
            throw ParseError(where(data_row) + ": outcome must be \xc2\xb1" "1");
        }
        e.outcome = static_cast<std::int32_t>(out);
        if (e.setting < 0 || e.setting >= n_angles) {
            throw ParseError(where(data_row) + ": setting index " + std::to_string(e.setting) +
                             " out of range (station has " + std::to_string(n_angles) + " angles)");
        }
        if (!events.empty() && events.back().t_ps > e.t_ps) sorted = false;
        events.push_back(e);
    }
    if (!sorted) {
        std::stable_sort(events.begin(), events.end(),
                         [](const EventRecord& a, const EventRecord& b) { return a.t_ps < b.t_ps; });
        resorted = true;
    }
    return events;
}

} // namespace detail

// Reads the canonical on-disk layout: meta.json + station1.csv + station2.csv.
// Unsorted event files are re-sorted and flagged in Dataset::warnings.
inline Dataset load_dataset(const std::filesystem::path& dir) {
    const auto meta_path = dir / "meta.json";
    std::ifstream meta_in(meta_path, std::ios::binary);
    if (!meta_in) throw LoadError("missing file: " + meta_path.string());

    nlohmann::json meta;
    try {
        meta_in >> meta;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("meta.json: " + std::string(e.what()));
    }

    Dataset d;
    try {
        d.style = style_from_string(meta.at("style").get<std::string>());
        const auto tick = meta.at("tick_ps").get<std::int64_t>();
        d.station1.tick_ps = d.station2.tick_ps = tick;
        d.station1.angles = meta.at("angles_station1").get<std::vector<double>>();
        d.station2.angles = meta.at("angles_station2").get<std::vector<double>>();
        if (meta.contains("provenance")) {
            for (const auto& [k, v] : meta.at("provenance").items()) {
                d.meta[k] = v.get<std::string>();
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("meta.json: " + std::string(e.what()));
    }
    d.station1.station_id = 1;
    d.station2.station_id = 2;

    for (StationStream* s : {&d.station1, &d.station2}) {
        bool resorted = false;
        const auto csv_path = dir / ("station" + std::to_string(s->station_id) + ".csv");
        s->events = detail::parse_station_csv(csv_path, static_cast<std::int32_t>(s->angles.size()),
                                              resorted);
        if (resorted) {
            d.warnings.push_back(csv_path.filename().string() +
                                 ": events were not sorted by t_ps; re-sorted on load");
        }
    }

    validate_dataset(d);
    return d;
}

// Canonical writer; load_dataset(save_dataset(d)) == d.
inline void save_dataset(const std::filesystem::path& dir, const Dataset& d) {
    validate_dataset(d);
    std::filesystem::create_directories(dir);

    nlohmann::json meta;
    meta["style"] = to_string(d.style);
    meta["tick_ps"] = d.station1.tick_ps;
    meta["angles_station1"] = d.station1.angles;
    meta["angles_station2"] = d.station2.angles;
    meta["provenance"] = nlohmann::json::object();
    for (const auto& [k, v] : d.meta) meta["provenance"][k] = v;

    std::ofstream meta_out(dir / "meta.json", std::ios::binary);
    if (!meta_out) throw LoadError("cannot write " + (dir / "meta.json").string());
    meta_out << meta.dump(2) << '\n';

    for (const StationStream* s : {&d.station1, &d.station2}) {
        csv::Writer w((dir / ("station" + std::to_string(s->station_id) + ".csv")).string());
        w.line("t_ps,setting,outcome");
        std::string row;
        for (const EventRecord& e : s->events) {
            row.clear();
            row += csv::format_int(e.t_ps);
            row += ',';
            row += csv::format_int(e.setting);
            row += ',';
            row += csv::format_int(e.outcome);
            w.line(row);
        }
        w.flush();
    }
}

// Shifts every time tag by delta_ps (the global-offset move applied to one
// station). Order is preserved; overflow is a hard error.
inline StationStream apply_offset(const StationStream& s, std::int64_t delta_ps) {
    StationStream out = s;
    for (EventRecord& e : out.events) {
        std::int64_t shifted = 0;
        if (__builtin_add_overflow(e.t_ps, delta_ps, &shifted)) {
            throw RangeError("apply_offset: time tag overflow");
        }
        e.t_ps = shifted;
    }
    return out;
}

} // namespace belltest
