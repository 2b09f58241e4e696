#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "belltest/counts.hpp"
#include "belltest/csv.hpp"
#include "belltest/dataset.hpp"
#include "belltest/errors.hpp"

namespace belltest {

// Histogram of time-tag differences t1 - t2. Bins are centered on integer
// multiples of bin_ps (so a zero-lag peak sits in a bin whose center is
// exactly 0): bin k has center (k - half_bins()) * bin_ps. A pair enters the
// histogram iff |t1 - t2| <= range_ps; differences round to the nearest bin
// center with ties toward zero, edge bins absorbing the remainder.
struct Histogram {
    std::int64_t bin_ps = 500;          // default: sub-ns resolution scale
    std::int64_t range_ps = 1'000'000;  // default: 1 us half-range
    std::vector<std::int64_t> counts;

    std::int64_t half_bins() const { return range_ps / bin_ps; }
    std::int64_t center_ps(std::size_t k) const {
        return (static_cast<std::int64_t>(k) - half_bins()) * bin_ps;
    }
    std::int64_t total() const {
        std::int64_t n = 0;
        for (const auto c : counts) n += c;
        return n;
    }
};

namespace detail {

inline std::size_t histogram_bin(std::int64_t d, std::int64_t bin, std::int64_t half) {
    const std::int64_t mag = std::abs(d);
    std::int64_t j = (2 * mag + bin - 1) / (2 * bin); // nearest multiple, ties toward zero
    if (j > half) j = half;                           // edge bins absorb the rim
    return static_cast<std::size_t>(d < 0 ? half - j : half + j);
}

} // namespace detail

// All cross-station differences with |t1 - t2| <= range_ps, accumulated with a
// sliding-window sweep over the two sorted streams (never the full N1 x N2
// product).
inline Histogram difference_histogram(const StationStream& s1, const StationStream& s2,
                                      std::int64_t bin_ps = 500,
                                      std::int64_t range_ps = 1'000'000) {
    if (bin_ps <= 0) throw ParamError("difference_histogram: bin_ps must be positive");
    if (range_ps < bin_ps) throw ParamError("difference_histogram: range_ps must be >= bin_ps");

    Histogram h;
    h.bin_ps = bin_ps;
    h.range_ps = range_ps;
    h.counts.assign(static_cast<std::size_t>(2 * h.half_bins() + 1), 0);

    const auto& e1 = s1.events;
    const auto& e2 = s2.events;
    std::size_t lo = 0;
    for (const EventRecord& a : e1) {
        while (lo < e2.size() && e2[lo].t_ps < a.t_ps - range_ps) ++lo;
        for (std::size_t m = lo; m < e2.size() && e2[m].t_ps <= a.t_ps + range_ps; ++m) {
            const std::int64_t d = a.t_ps - e2[m].t_ps;
            ++h.counts[detail::histogram_bin(d, bin_ps, h.half_bins())];
        }
    }
    return h;
}

// Global offset Delta_G = -(center of the maximal bin). Ties resolve to the
// smallest |Delta_G|, then to the negative candidate.
inline std::int64_t estimate_global_offset(const Histogram& h) {
    bool found = false;
    std::int64_t best_count = 0;
    std::int64_t best_center = 0;
    for (std::size_t k = 0; k < h.counts.size(); ++k) {
        const std::int64_t c = h.counts[k];
        if (c == 0) continue;
        const std::int64_t center = h.center_ps(k);
        bool better = false;
        if (!found || c > best_count) {
            better = true;
        } else if (c == best_count) {
            if (std::abs(center) < std::abs(best_center)) better = true;
            // equal magnitude: prefer the positive center, i.e. negative Delta_G
            else if (std::abs(center) == std::abs(best_center) && center > best_center) better = true;
        }
        if (better) {
            found = true;
            best_count = c;
            best_center = center;
        }
    }
    if (!found) throw DataError("estimate_global_offset: histogram has no counts");
    return -best_center;
}

enum class MatchPolicy { greedy_delta, sequential };

inline std::string to_string(MatchPolicy p) {
    return p == MatchPolicy::greedy_delta ? "greedy-delta" : "sequential";
}

inline MatchPolicy policy_from_string(const std::string& s) {
    if (s == "greedy" || s == "greedy-delta") return MatchPolicy::greedy_delta;
    if (s == "sequential") return MatchPolicy::sequential;
    throw ParamError("unknown matching policy '" + s + "'");
}

struct MatchedPair {
    std::int32_t i1 = 0; // index into station 1 events
    std::int32_t i2 = 0; // index into station 2 events
    std::int64_t delta_ps = 0;

    friend bool operator==(const MatchedPair&, const MatchedPair&) = default;
};

// Coincidence pairs under the at-most-once constraint: no event index appears
// twice, and |delta_ps| <= window_ps for every pair. offset_ps records the
// Delta_G that was added to station 1 tags before matching; any nonzero value
// marks downstream reports as acausal.
struct PairList {
    std::vector<MatchedPair> pairs;
    std::int64_t window_ps = 0;
    std::int64_t offset_ps = 0;
    MatchPolicy policy = MatchPolicy::greedy_delta;

    bool acausal() const { return offset_ps != 0; }
};

namespace detail {

struct Candidate {
    std::int64_t delta_ps;
    std::int32_t i1;
    std::int32_t i2;
};

template <typename Fn>
void for_each_window_pair(const StationStream& s1, const StationStream& s2,
                          std::int64_t window_ps, std::int64_t offset_ps, Fn&& fn) {
    const auto& e1 = s1.events;
    const auto& e2 = s2.events;
    std::size_t lo = 0;
    for (std::size_t n = 0; n < e1.size(); ++n) {
        const std::int64_t t1 = e1[n].t_ps + offset_ps;
        while (lo < e2.size() && e2[lo].t_ps < t1 - window_ps) ++lo;
        for (std::size_t m = lo; m < e2.size() && e2[m].t_ps <= t1 + window_ps; ++m) {
            fn(static_cast<std::int32_t>(n), static_cast<std::int32_t>(m), t1 - e2[m].t_ps);
        }
    }
}

} // namespace detail

// Pairs events across stations within the window. greedy_delta accepts
// candidates in order of increasing |delta| (ties: smaller t1, then smaller
// t2), skipping candidates whose endpoint is already used; sequential walks
// station 1 in time order and takes the earliest unused station-2 partner.
// Both are deterministic for fixed inputs.
inline PairList match_coincidences(const StationStream& s1, const StationStream& s2,
                                   std::int64_t window_ps,
                                   MatchPolicy policy = MatchPolicy::greedy_delta,
                                   std::int64_t offset_ps = 0) {
    if (window_ps < 0) throw ParamError("match_coincidences: window_ps must be >= 0");

    PairList out;
    out.window_ps = window_ps;
    out.offset_ps = offset_ps;
    out.policy = policy;

    if (policy == MatchPolicy::greedy_delta) {
        std::vector<detail::Candidate> cands;
        detail::for_each_window_pair(s1, s2, window_ps, offset_ps,
                                     [&](std::int32_t i1, std::int32_t i2, std::int64_t d) {
                                         cands.push_back({d, i1, i2});
                                     });
        const auto& e1 = s1.events;
        const auto& e2 = s2.events;
        std::sort(cands.begin(), cands.end(),
                  [&](const detail::Candidate& x, const detail::Candidate& y) {
                      const std::int64_t ax = std::abs(x.delta_ps);
                      const std::int64_t ay = std::abs(y.delta_ps);
                      if (ax != ay) return ax < ay;
                      const std::int64_t tx1 = e1[x.i1].t_ps;
                      const std::int64_t ty1 = e1[y.i1].t_ps;
                      if (tx1 != ty1) return tx1 < ty1;
                      const std::int64_t tx2 = e2[x.i2].t_ps;
                      const std::int64_t ty2 = e2[y.i2].t_ps;
                      if (tx2 != ty2) return tx2 < ty2;
                      if (x.i1 != y.i1) return x.i1 < y.i1;
                      return x.i2 < y.i2;
                  });
        std::vector<bool> used1(e1.size(), false), used2(e2.size(), false);
        for (const auto& c : cands) {
            if (used1[c.i1] || used2[c.i2]) continue;
            used1[c.i1] = used2[c.i2] = true;
            out.pairs.push_back({c.i1, c.i2, c.delta_ps});
        }
        std::sort(out.pairs.begin(), out.pairs.end(),
                  [](const MatchedPair& a, const MatchedPair& b) { return a.i1 < b.i1; });
    } else {
        const auto& e1 = s1.events;
        const auto& e2 = s2.events;
        std::vector<bool> used2(e2.size(), false);
        std::size_t lo = 0;
        for (std::size_t n = 0; n < e1.size(); ++n) {
            const std::int64_t t1 = e1[n].t_ps + offset_ps;
            while (lo < e2.size() && e2[lo].t_ps < t1 - window_ps) ++lo;
            for (std::size_t m = lo; m < e2.size() && e2[m].t_ps <= t1 + window_ps; ++m) {
                if (used2[m]) continue;
                used2[m] = true;
                out.pairs.push_back({static_cast<std::int32_t>(n), static_cast<std::int32_t>(m),
                                     t1 - e2[m].t_ps});
                break;
            }
        }
    }
    return out;
}

// Eq.-style coincidence counts: one CountsTable per (setting1, setting2) index
// pair; the grand total over all tables equals the number of matched pairs.
inline CountsBySetting count_coincidences(const PairList& p, const StationStream& s1,
                                          const StationStream& s2) {
    CountsBySetting counts;
    for (const MatchedPair& mp : p.pairs) {
        const EventRecord& a = s1.events[static_cast<std::size_t>(mp.i1)];
        const EventRecord& b = s2.events[static_cast<std::size_t>(mp.i2)];
        ++counts[{a.setting, b.setting}].at(a.outcome, b.outcome);
    }
    return counts;
}

// Exact maximum-cardinality matching on the bipartite in-window graph
// (augmenting-path search). Test-scale oracle for the pairing ambiguity;
// greedy_delta can never exceed it.
inline std::int64_t oracle_max_matching(const StationStream& s1, const StationStream& s2,
                                        std::int64_t window_ps) {
    if (window_ps < 0) throw ParamError("oracle_max_matching: window_ps must be >= 0");
    const std::size_t n1 = s1.events.size();
    const std::size_t n2 = s2.events.size();
    if (n1 > 64 || n2 > 64) {
        throw ParamError("oracle_max_matching: instance too large (limit 64 events per station)");
    }

    std::vector<std::vector<int>> adj(n1);
    detail::for_each_window_pair(s1, s2, window_ps, 0,
                                 [&](std::int32_t i1, std::int32_t i2, std::int64_t) {
                                     adj[static_cast<std::size_t>(i1)].push_back(i2);
                                 });

    std::vector<int> match2(n2, -1);
    std::vector<bool> visited;
    auto augment = [&](auto&& self, int u) -> bool {
        for (const int v : adj[static_cast<std::size_t>(u)]) {
            if (visited[static_cast<std::size_t>(v)]) continue;
            visited[static_cast<std::size_t>(v)] = true;
            if (match2[static_cast<std::size_t>(v)] < 0 ||
                self(self, match2[static_cast<std::size_t>(v)])) {
                match2[static_cast<std::size_t>(v)] = u;
                return true;
            }
        }
        return false;
    };

    std::int64_t matched = 0;
    for (std::size_t u = 0; u < n1; ++u) {
        visited.assign(n2, false);
        if (augment(augment, static_cast<int>(u))) ++matched;
    }
    return matched;
}

inline void write_csv(const Histogram& h, const std::filesystem::path& path) {
    csv::Writer w(path.string());
    w.line("bin_center_ps,count");
    for (std::size_t k = 0; k < h.counts.size(); ++k) {
        w.line(csv::format_int(h.center_ps(k)) + "," + csv::format_int(h.counts[k]));
    }
    w.flush();
}

inline void write_csv(const PairList& p, const std::filesystem::path& path) {
    csv::Writer w(path.string());
    w.line("i1,i2,delta_ps");
    for (const MatchedPair& mp : p.pairs) {
        w.line(csv::format_int(mp.i1) + "," + csv::format_int(mp.i2) + "," +
               csv::format_int(mp.delta_ps));
    }
    w.flush();
}

} // namespace belltest
