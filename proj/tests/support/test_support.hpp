#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "belltest/coincidence.hpp"
#include "belltest/dataset.hpp"
#include "belltest/stats.hpp"

namespace testsupport {

inline double deg(double d) { return d * 3.14159265358979323846 / 180.0; }

// Published single-detector ++ counts for 36 polarizer settings (degrees):
// nine station-2 angles crossed with four station-1 angles.
inline std::vector<belltest::RotatedRun> rotated_counts_table() {
    struct Row {
        double b;
        std::array<std::int64_t, 4> c; // a = 0, 45, 90, 135
    };
    static constexpr Row rows[] = {
        {0.0, {5068, 2693, 96, 2584}},    {22.5, {4879, 4394, 798, 844}},
        {45.0, {2502, 4819, 2087, 131}},  {67.5, {776, 3797, 3753, 748}},
        {90.0, {73, 2239, 4380, 2042}},   {112.5, {806, 611, 3591, 3837}},
        {135.0, {2348, 128, 2098, 4413}}, {157.5, {4453, 1005, 643, 4300}},
        {180.0, {5256, 2676, 81, 2630}},
    };
    static constexpr double a_deg[] = {0, 45, 90, 135};
    std::vector<belltest::RotatedRun> runs;
    for (const Row& r : rows) {
        for (int k = 0; k < 4; ++k) {
            runs.push_back({deg(a_deg[k]), deg(r.b), r.c[static_cast<std::size_t>(k)]});
        }
    }
    return runs;
}

inline belltest::StationStream make_stream(std::vector<std::int64_t> tags, int station_id = 1) {
    belltest::StationStream s;
    s.station_id = station_id;
    s.angles = {0.0};
    std::sort(tags.begin(), tags.end());
    for (const auto t : tags) s.events.push_back({t, 0, +1});
    return s;
}

// O(N1*N2) recount of the difference histogram, sharing only the bin
// assignment rule with the implementation under test.
inline belltest::Histogram brute_histogram(const belltest::StationStream& s1,
                                           const belltest::StationStream& s2,
                                           std::int64_t bin_ps, std::int64_t range_ps) {
    belltest::Histogram h;
    h.bin_ps = bin_ps;
    h.range_ps = range_ps;
    h.counts.assign(static_cast<std::size_t>(2 * h.half_bins() + 1), 0);
    for (const auto& a : s1.events) {
        for (const auto& b : s2.events) {
            const std::int64_t d = a.t_ps - b.t_ps;
            if (std::abs(d) > range_ps) continue;
            ++h.counts[belltest::detail::histogram_bin(d, bin_ps, h.half_bins())];
        }
    }
    return h;
}

// Exact maximum matching by exhaustive recursion; only for tiny instances.
inline int exhaustive_max_matching(const std::vector<std::int64_t>& t1,
                                   const std::vector<std::int64_t>& t2, std::int64_t w) {
    std::vector<bool> used2(t2.size(), false);
    auto rec = [&](auto&& self, std::size_t i) -> int {
        if (i == t1.size()) return 0;
        int best = self(self, i + 1); // leave event i unmatched
        for (std::size_t j = 0; j < t2.size(); ++j) {
            if (used2[j] || std::abs(t1[i] - t2[j]) > w) continue;
            used2[j] = true;
            best = std::max(best, 1 + self(self, i + 1));
            used2[j] = false;
        }
        return best;
    };
    return rec(rec, 0);
}

// Unique scratch directory under the system temp dir.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::mt19937_64 rng(std::random_device{}());
        path_ = std::filesystem::temp_directory_path() /
                ("belltest_" + tag + "_" + std::to_string(rng()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

} // namespace testsupport
