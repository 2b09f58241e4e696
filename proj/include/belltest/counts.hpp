#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <utility>

namespace belltest {

// Coincidence counts for one setting pair, indexed by the two outcomes.
struct CountsTable {
    std::int64_t pp = 0; // x=+1, y=+1
    std::int64_t pm = 0; // x=+1, y=-1
    std::int64_t mp = 0; // x=-1, y=+1
    std::int64_t mm = 0; // x=-1, y=-1

    std::int64_t total() const { return pp + pm + mp + mm; }

    std::int64_t& at(int x, int y) {
        if (x > 0) return y > 0 ? pp : pm;
        return y > 0 ? mp : mm;
    }
    std::int64_t at(int x, int y) const {
        if (x > 0) return y > 0 ? pp : pm;
        return y > 0 ? mp : mm;
    }

    friend bool operator==(const CountsTable&, const CountsTable&) = default;
};

// Setting pair by index into the two stations' angle tables.
using SettingKey = std::pair<std::int32_t, std::int32_t>;
using CountsBySetting = std::map<SettingKey, CountsTable>;

// The CHSH angle quadruple (radians).
struct SettingQuad {
    double a = 0;
    double ap = 0;
    double b = 0;
    double bp = 0;
};

} // namespace belltest
