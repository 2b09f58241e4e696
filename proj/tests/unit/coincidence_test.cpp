#include <gtest/gtest.h>

#include <fstream>
#include <random>
#include <set>

#include "belltest/coincidence.hpp"
#include "support/test_support.hpp"

using namespace belltest;
using testsupport::make_stream;

TEST(DifferenceHistogram, HandEnumeratedExample) {
    const StationStream s1 = make_stream({0, 10, 20});
    const StationStream s2 = make_stream({3, 13, 23});
    const Histogram h = difference_histogram(s1, s2, 2, 10);

    // all nine differences: -3 (x3), 7 (x2), and -13, -13, -23, 17 out of range
    EXPECT_EQ(h.total(), 5);

    std::int64_t best_center = 0, best_count = -1;
    for (std::size_t k = 0; k < h.counts.size(); ++k) {
        if (h.counts[k] > best_count) {
            best_count = h.counts[k];
            best_center = h.center_ps(k);
        }
    }
    EXPECT_EQ(best_count, 3); // the three -3 ps differences share one bin
    EXPECT_EQ(best_center, -2); // nearest bin-2 center to -3, tie toward zero

    const Histogram oracle = testsupport::brute_histogram(s1, s2, 2, 10);
    EXPECT_EQ(h.counts, oracle.counts);
}

TEST(DifferenceHistogram, IdenticalStreamsPeakAtZero) {
    const StationStream s = make_stream({100, 200, 300, 400});
    const Histogram h = difference_histogram(s, s, 1, 50);
    std::size_t best = 0;
    for (std::size_t k = 1; k < h.counts.size(); ++k) {
        if (h.counts[k] > h.counts[best]) best = k;
    }
    EXPECT_EQ(h.center_ps(best), 0);
    EXPECT_EQ(h.counts[best], 4);
}

TEST(DifferenceHistogram, EmptyStreamGivesZeroHistogram) {
    const StationStream s1 = make_stream({0, 10});
    const StationStream s2 = make_stream({});
    const Histogram h = difference_histogram(s1, s2, 2, 10);
    EXPECT_EQ(h.total(), 0);
    EXPECT_THROW(estimate_global_offset(h), DataError);
}

TEST(DifferenceHistogram, ParameterValidation) {
    const StationStream s = make_stream({0});
    EXPECT_THROW(difference_histogram(s, s, 0, 10), ParamError);
    EXPECT_THROW(difference_histogram(s, s, -2, 10), ParamError);
    EXPECT_THROW(difference_histogram(s, s, 20, 10), ParamError);
}

TEST(DifferenceHistogram, SweepAgreesWithBruteForceRecount) {
    std::mt19937_64 rng(7);
    for (const std::size_t n : {1u, 13u, 200u, 1000u}) {
        std::vector<std::int64_t> t1, t2;
        for (std::size_t i = 0; i < n; ++i) {
            t1.push_back(static_cast<std::int64_t>(rng() % 2'000'000));
            t2.push_back(static_cast<std::int64_t>(rng() % 2'000'000));
        }
        const StationStream s1 = make_stream(t1);
        const StationStream s2 = make_stream(t2);
        for (const auto [bin, range] : {std::pair<std::int64_t, std::int64_t>{500, 1'000'000},
                                        {999, 10'000},
                                        {1, 100}}) {
            const Histogram h = difference_histogram(s1, s2, bin, range);
            const Histogram oracle = testsupport::brute_histogram(s1, s2, bin, range);
            EXPECT_EQ(h.counts, oracle.counts);
        }
    }
}

TEST(GlobalOffset, NegatesPeakCenter) {
    // peak at difference -3 with 1 ps bins -> Delta_G = +3
    const StationStream s1 = make_stream({1000, 2000, 3000});
    const StationStream s2 = make_stream({1003, 2003, 3003});
    const Histogram h = difference_histogram(s1, s2, 1, 100);
    EXPECT_EQ(estimate_global_offset(h), 3);

    // applying the offset moves the peak to zero
    const Histogram centered =
        difference_histogram(apply_offset(s1, 3), s2, 1, 100);
    std::size_t best = 0;
    for (std::size_t k = 1; k < centered.counts.size(); ++k) {
        if (centered.counts[k] > centered.counts[best]) best = k;
    }
    EXPECT_EQ(centered.center_ps(best), 0);
}

TEST(GlobalOffset, ZeroPeakGivesZero) {
    const StationStream s = make_stream({10, 20, 30});
    EXPECT_EQ(estimate_global_offset(difference_histogram(s, s, 1, 50)), 0);
}

TEST(GlobalOffset, TieBreakPrefersNegativeDelta) {
    Histogram h;
    h.bin_ps = 1;
    h.range_ps = 10;
    h.counts.assign(21, 0);
    h.counts[5] = 4;  // center -5
    h.counts[15] = 4; // center +5
    // equal counts, equal |Delta_G|: choose the negative Delta_G (-5)
    EXPECT_EQ(estimate_global_offset(h), -5);

    h.counts[12] = 4; // center +2 also maximal, smaller magnitude wins
    EXPECT_EQ(estimate_global_offset(h), -2);
}

TEST(DifferenceHistogram, CsvExport) {
    const StationStream s1 = make_stream({0, 10});
    const StationStream s2 = make_stream({3});
    const Histogram h = difference_histogram(s1, s2, 1, 10);
    testsupport::TempDir tmp("histcsv");
    write_csv(h, tmp.path() / "histogram.csv");
    std::ifstream in(tmp.path() / "histogram.csv");
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "bin_center_ps,count");
    std::size_t rows = 0;
    bool saw_peak = false;
    while (std::getline(in, line)) {
        if (line == "-3,1" || line == "7,1") saw_peak = true;
        ++rows;
    }
    EXPECT_EQ(rows, h.counts.size());
    EXPECT_TRUE(saw_peak);
}

TEST(Matching, UniqueMaximumExample) {
    const StationStream s1 = make_stream({0, 1000, 5000});
    const StationStream s2 = make_stream({100, 4950});
    for (const MatchPolicy policy : {MatchPolicy::greedy_delta, MatchPolicy::sequential}) {
        const PairList p = match_coincidences(s1, s2, 200, policy);
        ASSERT_EQ(p.pairs.size(), 2u) << to_string(policy);
        EXPECT_EQ(p.pairs[0].i1, 0);
        EXPECT_EQ(p.pairs[0].i2, 0);
        EXPECT_EQ(p.pairs[1].i1, 2);
        EXPECT_EQ(p.pairs[1].i2, 1);
    }
}

TEST(Matching, GreedyPrefersSmallerDelta) {
    const StationStream s1 = make_stream({0});
    const StationStream s2 = make_stream({-50, 60});
    const PairList p = match_coincidences(s1, s2, 100, MatchPolicy::greedy_delta);
    ASSERT_EQ(p.pairs.size(), 1u);
    EXPECT_EQ(p.pairs[0].i2, 0); // |0-(-50)| < |0-60|
    EXPECT_EQ(p.pairs[0].delta_ps, 50);
}

TEST(Matching, GreedyTieBreaksOnSmallerT1) {
    const StationStream s1 = make_stream({0, 10});
    const StationStream s2 = make_stream({5});
    const PairList p = match_coincidences(s1, s2, 10, MatchPolicy::greedy_delta);
    ASSERT_EQ(p.pairs.size(), 1u);
    EXPECT_EQ(p.pairs[0].i1, 0); // both deltas are 5; smaller t1 wins
}

TEST(Matching, SequentialTakesEarliestUnused) {
    const StationStream s1 = make_stream({0});
    const StationStream s2 = make_stream({-50, 60});
    const PairList p = match_coincidences(s1, s2, 100, MatchPolicy::sequential);
    ASSERT_EQ(p.pairs.size(), 1u);
    EXPECT_EQ(p.pairs[0].i2, 0); // earliest in-window partner
}

TEST(Matching, WindowAndAtMostOnceInvariants) {
    std::mt19937_64 rng(21);
    for (int rep = 0; rep < 200; ++rep) {
        std::vector<std::int64_t> t1, t2;
        const auto n1 = rng() % 30, n2 = rng() % 30;
        for (std::size_t i = 0; i < n1; ++i) t1.push_back(static_cast<std::int64_t>(rng() % 5000));
        for (std::size_t i = 0; i < n2; ++i) t2.push_back(static_cast<std::int64_t>(rng() % 5000));
        const StationStream s1 = make_stream(t1);
        const StationStream s2 = make_stream(t2);
        const auto w = static_cast<std::int64_t>(rng() % 400);
        for (const MatchPolicy policy : {MatchPolicy::greedy_delta, MatchPolicy::sequential}) {
            const PairList p = match_coincidences(s1, s2, w, policy);
            std::set<std::int32_t> seen1, seen2;
            for (const MatchedPair& mp : p.pairs) {
                EXPECT_LE(std::abs(mp.delta_ps), w);
                EXPECT_EQ(mp.delta_ps,
                          s1.events[static_cast<std::size_t>(mp.i1)].t_ps -
                              s2.events[static_cast<std::size_t>(mp.i2)].t_ps);
                EXPECT_TRUE(seen1.insert(mp.i1).second) << "duplicate station-1 index";
                EXPECT_TRUE(seen2.insert(mp.i2).second) << "duplicate station-2 index";
            }
        }
    }
}

TEST(Matching, GreedyCountMonotoneInWindow) {
    std::mt19937_64 rng(33);
    for (int rep = 0; rep < 30; ++rep) {
        std::vector<std::int64_t> t1, t2;
        for (int i = 0; i < 60; ++i) {
            t1.push_back(static_cast<std::int64_t>(rng() % 100'000));
            t2.push_back(static_cast<std::int64_t>(rng() % 100'000));
        }
        const StationStream s1 = make_stream(t1);
        const StationStream s2 = make_stream(t2);
        std::size_t prev = 0;
        for (const std::int64_t w : {0, 10, 100, 500, 2000, 10'000, 100'000}) {
            const std::size_t n = match_coincidences(s1, s2, w).pairs.size();
            EXPECT_GE(n, prev);
            prev = n;
        }
    }
}

TEST(Matching, OffsetIsRecordedAndApplied) {
    const StationStream s1 = make_stream({0, 1000});
    const StationStream s2 = make_stream({300, 1290});
    // without the offset nothing matches at W=20
    EXPECT_TRUE(match_coincidences(s1, s2, 20).pairs.empty());
    const PairList p = match_coincidences(s1, s2, 20, MatchPolicy::greedy_delta, 295);
    EXPECT_EQ(p.offset_ps, 295);
    EXPECT_TRUE(p.acausal());
    ASSERT_EQ(p.pairs.size(), 2u);
    EXPECT_EQ(p.pairs[0].delta_ps, -5); // (0+295) - 300
    EXPECT_EQ(p.pairs[1].delta_ps, 5);  // (1000+295) - 1290
}

TEST(Oracle, SpecExamples) {
    EXPECT_EQ(oracle_max_matching(make_stream({0, 100}), make_stream({50}), 100), 1);
    // clusters separated by more than 2W: oracle equals greedy
    const StationStream s1 = make_stream({0, 10'000});
    const StationStream s2 = make_stream({40, 10'030});
    EXPECT_EQ(oracle_max_matching(s1, s2, 100), 2);
    EXPECT_EQ(match_coincidences(s1, s2, 100).pairs.size(), 2u);
    // both policies agree with the oracle here
    const StationStream a = make_stream({0, 90});
    const StationStream b = make_stream({95});
    EXPECT_EQ(oracle_max_matching(a, b, 100), 1);
    EXPECT_EQ(match_coincidences(a, b, 100, MatchPolicy::greedy_delta).pairs.size(), 1u);
    EXPECT_EQ(match_coincidences(a, b, 100, MatchPolicy::sequential).pairs.size(), 1u);
}

TEST(Oracle, MatchesExhaustiveSearchOnTinyInstances) {
    std::mt19937_64 rng(4);
    for (int rep = 0; rep < 300; ++rep) {
        std::vector<std::int64_t> t1, t2;
        const auto n1 = rng() % 7, n2 = rng() % 7;
        for (std::size_t i = 0; i < n1; ++i) t1.push_back(static_cast<std::int64_t>(rng() % 200));
        for (std::size_t i = 0; i < n2; ++i) t2.push_back(static_cast<std::int64_t>(rng() % 200));
        std::sort(t1.begin(), t1.end());
        std::sort(t2.begin(), t2.end());
        const auto w = static_cast<std::int64_t>(rng() % 60);
        EXPECT_EQ(oracle_max_matching(make_stream(t1), make_stream(t2), w),
                  testsupport::exhaustive_max_matching(t1, t2, w));
    }
}

TEST(Oracle, RejectsLargeInstances) {
    std::vector<std::int64_t> t(65);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<std::int64_t>(i) * 10;
    EXPECT_THROW(oracle_max_matching(make_stream(t), make_stream({0}), 5), ParamError);
}

TEST(Oracle, GreedyNeverExceedsOracle) {
    std::mt19937_64 rng(12);
    for (int rep = 0; rep < 300; ++rep) {
        std::vector<std::int64_t> t1, t2;
        const auto n1 = rng() % 13, n2 = rng() % 13;
        for (std::size_t i = 0; i < n1; ++i) t1.push_back(static_cast<std::int64_t>(rng() % 500));
        for (std::size_t i = 0; i < n2; ++i) t2.push_back(static_cast<std::int64_t>(rng() % 500));
        const StationStream s1 = make_stream(t1);
        const StationStream s2 = make_stream(t2);
        const auto w = static_cast<std::int64_t>(rng() % 100);
        EXPECT_LE(static_cast<std::int64_t>(match_coincidences(s1, s2, w).pairs.size()),
                  oracle_max_matching(s1, s2, w));
    }
}

TEST(CountCoincidences, SinglePairLandsInOneCell) {
    StationStream s1;
    s1.angles = {0.0, 0.5};
    s1.events = {{100, 1, +1}};
    StationStream s2;
    s2.station_id = 2;
    s2.angles = {0.2};
    s2.events = {{120, 0, -1}};
    const PairList p = match_coincidences(s1, s2, 50);
    ASSERT_EQ(p.pairs.size(), 1u);
    const CountsBySetting counts = count_coincidences(p, s1, s2);
    ASSERT_EQ(counts.size(), 1u);
    const CountsTable& c = counts.at({1, 0});
    EXPECT_EQ(c.pm, 1);
    EXPECT_EQ(c.total(), 1);
}

TEST(CountCoincidences, FixedRunPopulatesOnlyPlusPlus) {
    StationStream s1, s2;
    s1.angles = {0.0};
    s2.angles = {0.0};
    s2.station_id = 2;
    for (int i = 0; i < 20; ++i) {
        s1.events.push_back({i * 1000, 0, +1});
        s2.events.push_back({i * 1000 + 5, 0, +1});
    }
    const CountsBySetting counts =
        count_coincidences(match_coincidences(s1, s2, 50), s1, s2);
    const CountsTable& c = counts.at({0, 0});
    EXPECT_EQ(c.pp, 20);
    EXPECT_EQ(c.pm + c.mp + c.mm, 0);
}

TEST(CountCoincidences, GrandTotalEqualsPairCount) {
    std::mt19937_64 rng(5);
    StationStream s1, s2;
    s1.angles = {0.0, 0.8};
    s2.angles = {0.4, 1.2};
    s2.station_id = 2;
    std::int64_t t = 0;
    for (int i = 0; i < 5000; ++i) {
        t += static_cast<std::int64_t>(rng() % 800);
        s1.events.push_back({t, static_cast<std::int32_t>(rng() % 2), (rng() % 2) != 0u ? 1 : -1});
        s2.events.push_back({t + static_cast<std::int64_t>(rng() % 90), static_cast<std::int32_t>(rng() % 2),
                             (rng() % 2) != 0u ? 1 : -1});
    }
    std::stable_sort(s2.events.begin(), s2.events.end(),
                     [](const EventRecord& a, const EventRecord& b) { return a.t_ps < b.t_ps; });
    const PairList p = match_coincidences(s1, s2, 60);
    const CountsBySetting counts = count_coincidences(p, s1, s2);
    std::int64_t total = 0;
    for (const auto& [key, c] : counts) total += c.total();
    EXPECT_EQ(total, static_cast<std::int64_t>(p.pairs.size()));
    EXPECT_GT(total, 0);
}
