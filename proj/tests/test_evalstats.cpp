#include "support/fixtures.hpp"

#include "stalt/analysis.hpp"
#include "stalt/error.hpp"
#include "stalt/evalstats.hpp"
#include "stalt/metrics.hpp"
#include "stalt/score_csv.hpp"

#include <doctest.h>

#include <numeric>

using namespace stalt;
using namespace stalt::evalstats;

namespace {

LabeledScores make(std::vector<double> s, std::vector<int> y) {
    LabeledScores d;
    d.scores = std::move(s);
    for (int v : y) d.labels.push_back(v != 0);
    return d;
}

std::vector<int> ints(const LabeledScores& d) { return {d.labels.begin(), d.labels.end()}; }

// Random labeled set with both classes and deliberate ties (scores on a coarse lattice).
LabeledScores random_set(std::mt19937_64& rng, std::size_t n) {
    std::uniform_int_distribution<int> lattice(0, 9);
    std::bernoulli_distribution coin(0.5);
    LabeledScores d;
    for (std::size_t i = 0; i < n; ++i) {
        const bool y = coin(rng);
        d.labels.push_back(y);
        d.scores.push_back(lattice(rng) * 0.5 + (y ? 1.0 : 0.0));
    }
    d.labels[0] = true;
    d.labels[1] = false;
    return d;
}

// StALT scores for the seed-7 hotspot cohort, computed once.
const LabeledScores& synthetic_cohort() {
    static const LabeledScores data = [] {
        fixtures::TempDir dir("cohort");
        const auto synth = analysis::synth_cohort(analysis::synth_preset("hotspot"), dir.path());
        const auto configs = metrics::parse_metric_list("stalt");
        const auto table = metrics::score_dataset(synth.manifest.records, configs);
        return metrics::labeled_scores(table, "stalt");
    }();
    return data;
}

}  // namespace

TEST_SUITE("evalstats") {

TEST_CASE("auroc examples") {
    CHECK(auroc(make({0.9, 0.8, 0.3, 0.2}, {1, 1, 0, 0})) == 1.0);
    CHECK(auroc(make({0.5, 0.5}, {1, 0})) == 0.5);
    CHECK(auroc(make({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1})) == 0.75);
    CHECK_THROWS_WITH_AS(auroc(make({1, 2}, {1, 1})), "degenerate labels", Error);
}

TEST_CASE("auroc equals the pairwise count with ties") {
    std::mt19937_64 rng(41);
    std::uniform_int_distribution<std::size_t> size(2, 200);
    for (int k = 0; k < 50; ++k) {
        const auto d = random_set(rng, size(rng));
        CHECK(std::abs(auroc(d) - oracle::auroc_pairs(d.scores, ints(d))) <= 1e-12);
    }
}

TEST_CASE("auroc complement symmetry on tie-free scores") {
    std::mt19937_64 rng(42);
    std::normal_distribution<double> n(0, 1);
    auto d = make({}, {});
    for (int i = 0; i < 60; ++i) {
        d.scores.push_back(n(rng));
        d.labels.push_back(i % 3 == 0);
    }
    auto flipped = d;
    flipped.labels.flip();
    CHECK(std::abs(auroc(d) + auroc(flipped) - 1.0) <= 1e-12);
}

TEST_CASE("fpr95 examples") {
    CHECK(fpr_at_tpr(make({4, 3, 2, 1}, {1, 1, 0, 0})) == 0.0);
    CHECK(fpr_at_tpr(make({1, 1, 1, 1}, {1, 0, 1, 0})) == 1.0);
    CHECK(fpr_at_tpr(make({4, 3, 2, 1}, {1, 0, 1, 0}), 0.95) == 0.5);
}

TEST_CASE("aupr examples") {
    CHECK(aupr(make({0.3, 0.2, 0.1}, {1, 1, 1})) == 1.0);
    CHECK(aupr(make({0.9, 0.8, 0.7}, {1, 0, 1})) == doctest::Approx((1.0 + 2.0 / 3.0) / 2.0).epsilon(1e-15));
    CHECK(aupr(make({0.9, 0.8, 0.7}, {0, 1, 0})) == 0.5);
    CHECK_THROWS_WITH_AS(aupr(make({1, 2}, {0, 0})), "no positive labels", Error);
}

TEST_CASE("fpr95 and aupr match exhaustive threshold enumeration") {
    std::mt19937_64 rng(43);
    std::uniform_int_distribution<std::size_t> size(2, 50);
    for (int k = 0; k < 50; ++k) {
        const auto d = random_set(rng, size(rng));
        CHECK(fpr_at_tpr(d, 0.95) == oracle::fpr_at_tpr(d.scores, ints(d), 0.95));
        CHECK(std::abs(aupr(d) - oracle::average_precision(d.scores, ints(d))) <= 1e-12);
    }
}

TEST_CASE("monotone transforms leave the ranking metrics unchanged") {
    std::mt19937_64 rng(44);
    for (int k = 0; k < 20; ++k) {
        const auto d = random_set(rng, 40);
        for (auto f : {+[](double x) { return 2 * x + 3; }, +[](double x) { return std::exp(x); }}) {
            auto t = d;
            for (auto& x : t.scores) x = f(x);
            CHECK(auroc(t) == auroc(d));
            CHECK(fpr_at_tpr(t) == fpr_at_tpr(d));
            CHECK(aupr(t) == aupr(d));
        }
    }
}

TEST_CASE("hedges g") {
    const std::vector<double> a{2, 4}, b{0, 2};
    const double j = 4.0 / 7.0;
    CHECK(hedges_g(a, b) == doctest::Approx(j * std::sqrt(2.0)).epsilon(1e-15));
    CHECK(std::abs(hedges_g(a, b) - 0.80812) <= 1e-5);
    CHECK(hedges_g(b, a) == -hedges_g(a, b));
    CHECK(hedges_g(std::vector<double>{1, 3}, std::vector<double>{0, 4}) == 0.0);
    CHECK_THROWS_WITH_AS(hedges_g(std::vector<double>{1}, b), "group too small", Error);
    CHECK_THROWS_WITH_AS(hedges_g(std::vector<double>{1, 1}, std::vector<double>{2, 2}), "degenerate variance", Error);

    std::mt19937_64 rng(45);
    std::normal_distribution<double> n(0, 1);
    std::vector<double> x(13), y(9);
    for (auto& v : x) v = n(rng) + 0.5;
    for (auto& v : y) v = n(rng);
    CHECK(oracle::rel_err(hedges_g(x, y), oracle::hedges_g(x, y)) <= 1e-12);
}

TEST_CASE("splitmix64 reference outputs") {
    // First outputs for state 0 from the reference implementation.
    SplitMix64 g(0);
    CHECK(g.next() == 0xe220a8397b1dcdafULL);
    CHECK(g.next() == 0x6e789e6aa1b965f4ULL);
    CHECK(g.next() == 0x06c45d188009454fULL);
    SplitMix64 b(99);
    for (int i = 0; i < 1000; ++i) CHECK(b.below(7) < 7);
    for (int i = 0; i < 1000; ++i) {
        const double u = b.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
}

TEST_CASE("quantiles interpolate linearly") {
    const std::vector<double> v{1, 2, 3, 4};
    CHECK(quantile_sorted(v, 0.0) == 1.0);
    CHECK(quantile_sorted(v, 1.0) == 4.0);
    CHECK(quantile_sorted(v, 0.5) == 2.5);
    CHECK(quantile_sorted(v, 0.25) == doctest::Approx(1.75).epsilon(1e-15));
}

TEST_CASE("bootstrap intervals") {
    SUBCASE("zero variance gives a point interval") {
        const auto d = make({3, 3, 3, 3}, {1, 0, 1, 0});
        const auto ci = bootstrap_ci([](const LabeledScores& s) { return mean_difference(s); }, d, {.resamples = 200});
        CHECK(ci.lo == 0.0);
        CHECK(ci.hi == 0.0);
    }
    SUBCASE("same seed twice and serial vs parallel agree bitwise") {
        const auto& d = synthetic_cohort();
        const Statistic g = [](const LabeledScores& s) { return hedges_g(s); };
        const auto a = bootstrap_ci(g, d, {.resamples = 500, .seed = 3});
        const auto b = bootstrap_ci(g, d, {.resamples = 500, .seed = 3});
        const auto c = bootstrap_ci(g, d, {.resamples = 500, .seed = 3, .workers = 4});
        CHECK(a.lo == b.lo);
        CHECK(a.hi == b.hi);
        CHECK(a.lo == c.lo);
        CHECK(a.hi == c.hi);
        CHECK(a.lo <= a.hi);
    }
    SUBCASE("the g interval on the synthetic cohort contains the estimate") {
        const auto& d = synthetic_cohort();
        const double g = hedges_g(d);
        const auto ci = bootstrap_ci([](const LabeledScores& s) { return hedges_g(s); }, d, {.seed = 7});
        CHECK(ci.lo <= g);
        CHECK(g <= ci.hi);
        CHECK(ci.resamples == 4000);
    }
    SUBCASE("intervals cover the estimate for almost every seed") {
        const auto& d = synthetic_cohort();
        const double g = hedges_g(d);
        int covered = 0;
        for (std::uint64_t seed = 0; seed < 100; ++seed) {
            const auto ci = bootstrap_ci([](const LabeledScores& s) { return hedges_g(s); }, d,
                                         {.resamples = 1000, .seed = seed});
            if (ci.lo <= g && g <= ci.hi) ++covered;
        }
        CHECK(covered >= 95);
    }
    SUBCASE("a statistic that is never defined exhausts the cap") {
        const auto d = make({1, 2, 3}, {1, 0, 1});
        CHECK_THROWS_WITH_AS(
            bootstrap_ci([](const LabeledScores&) -> double { throw Error("nope"); }, d, {.resamples = 10}),
            "statistic undefined on resamples", Error);
    }
    SUBCASE("single-class resamples are redrawn") {
        // With one negative among 12, about 37% of resamples lack it.
        std::vector<double> s(12);
        std::iota(s.begin(), s.end(), 0.0);
        std::vector<int> y(12, 1);
        y[0] = 0;
        const auto ci = bootstrap_ci([](const LabeledScores& x) { return auroc(x); }, make(s, y), {.resamples = 300});
        CHECK(ci.lo <= ci.hi);
        CHECK(ci.hi <= 1.0);
    }
}

TEST_CASE("length stratification") {
    SUBCASE("equal lengths fill one bin") {
        auto d = make({1, 2, 3, 4, 5, 6, 7, 8}, {1, 0, 1, 0, 1, 0, 1, 0});
        d.lengths.assign(8, 50);
        const auto bins = length_stratified_auroc(d, 4);
        REQUIRE(bins.size() == 4);
        CHECK(bins[0].n == 8);
        CHECK(bins[0].auroc.has_value());
        for (std::size_t b = 1; b < 4; ++b) {
            CHECK(bins[b].n == 0);
            CHECK_FALSE(bins[b].auroc.has_value());
        }
    }
    SUBCASE("lengths 1..8 split into halves") {
        auto d = make({8, 7, 6, 5, 4, 3, 2, 1}, {1, 0, 1, 0, 1, 0, 1, 0});
        d.lengths = {8, 7, 6, 5, 4, 3, 2, 1};
        const auto bins = length_stratified_auroc(d, 2);
        REQUIRE(bins.size() == 2);
        CHECK(bins[0].min_length == 1);
        CHECK(bins[0].max_length == 4);
        CHECK(bins[0].n == 4);
        CHECK(bins[1].min_length == 5);
        CHECK(bins[1].max_length == 8);
    }
    SUBCASE("label-independent scores give chance AUROC in every bin") {
        std::mt19937_64 rng(46);
        std::normal_distribution<double> n(0, 1);
        std::uniform_int_distribution<std::uint64_t> len(10, 500);
        std::bernoulli_distribution coin(0.5);
        LabeledScores d;
        for (int i = 0; i < 400; ++i) {
            d.scores.push_back(n(rng));
            d.labels.push_back(coin(rng));
            d.lengths.push_back(len(rng));
        }
        for (const auto& b : length_stratified_auroc(d, 4)) {
            REQUIRE(b.auroc.has_value());
            CHECK(std::abs(*b.auroc - 0.5) <= 0.1);
        }
    }
    SUBCASE("lengths are required") {
        CHECK_THROWS_WITH_AS(length_stratified_auroc(make({1, 2}, {1, 0})), "lengths required for stratification",
                             Error);
    }
}

TEST_CASE("group gap report") {
    SUBCASE("identical groups give equal g") {
        auto d = make({1, 2, 3, 4, 1, 2, 3, 4}, {0, 0, 1, 1, 0, 0, 1, 1});
        d.groups = {"x", "x", "x", "x", "y", "y", "y", "y"};
        const auto gaps = group_gap_report(d, {.resamples = 200});
        REQUIRE(gaps.size() == 2);
        REQUIRE(gaps[0].g.has_value());
        CHECK(*gaps[0].g == *gaps[1].g);
        CHECK(gaps[0].group == "x");
    }
    SUBCASE("a group with one correct record is too small") {
        auto d = make({1, 2, 3, 4, 1, 2, 3}, {0, 0, 1, 1, 0, 0, 1});
        d.groups = {"x", "x", "x", "x", "y", "y", "y"};
        const auto gaps = group_gap_report(d, {.resamples = 200});
        CHECK_FALSE(gaps[1].g.has_value());
        CHECK(gaps[1].reason == "group too small");
        CHECK(gaps[1].n_correct == 1);
    }
    SUBCASE("tags are required") {
        CHECK_THROWS_WITH_AS(group_gap_report(make({1, 2}, {1, 0})), "group tags required", Error);
    }
}

TEST_CASE("evaluate collects everything") {
    const auto& d = synthetic_cohort();
    EvalOptions options;
    options.bootstrap.resamples = 300;
    const auto r = evaluate("stalt", d, options);
    CHECK(r.n_correct + r.n_incorrect == d.size());
    CHECK(r.auroc == auroc(d));
    CHECK(r.hedges_g.has_value());
    REQUIRE(r.auroc_ci.has_value());
    CHECK(r.auroc_ci->lo <= r.auroc);
    CHECK(r.auroc <= r.auroc_ci->hi);
    CHECK(r.note.empty());
}

}  // TEST_SUITE
