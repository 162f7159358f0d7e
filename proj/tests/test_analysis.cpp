#include "support/fixtures.hpp"

#include "stalt/analysis.hpp"
#include "stalt/delta.hpp"
#include "stalt/error.hpp"

#include <doctest.h>

using namespace stalt;
using namespace stalt::analysis;
using fixtures::TempDir;

namespace {

Grid column(std::vector<double> v) {
    Grid g(v.size(), 1);
    g.values = std::move(v);
    return g;
}

std::vector<LabeledGrid> random_cohort(std::mt19937_64& rng, std::size_t n, std::size_t cols) {
    std::uniform_int_distribution<std::size_t> rows(1, 40);
    std::uniform_real_distribution<double> u(0, 5);
    std::vector<LabeledGrid> out;
    for (std::size_t i = 0; i < n; ++i) {
        Grid g(rows(rng), cols);
        for (auto& v : g.values) v = u(rng);
        out.push_back({g, i % 3 != 0});
    }
    return out;
}

}  // namespace

TEST_SUITE("analysis") {

TEST_CASE("resampling") {
    SUBCASE("constant grid stays constant") {
        const auto r = resample_grid(Grid(7, 3, 2.5), 100);
        CHECK(r.rows == 100);
        for (double v : r.values) CHECK(v == 2.5);
    }
    SUBCASE("equal length is the identity") {
        std::mt19937_64 rng(51);
        std::uniform_real_distribution<double> u(-3, 3);
        Grid g(17, 4);
        for (auto& v : g.values) v = u(rng);
        CHECK(resample_grid(g, 17) == g);
    }
    SUBCASE("linear column") {
        CHECK(resample_grid(column({0, 1, 2}), 5).values == std::vector<double>{0, 0.5, 1, 1.5, 2});
    }
    SUBCASE("single row is replicated") {
        CHECK(resample_grid(column({4}), 3).values == std::vector<double>{4, 4, 4});
    }
    SUBCASE("endpoints hit the first and last rows") {
        const auto r = resample_grid(column({1, 9, 4, 7}), 10);
        CHECK(r(0, 0) == 1.0);
        CHECK(r(9, 0) == 7.0);
    }
    SUBCASE("errors") {
        CHECK_THROWS_AS(resample_grid(Grid(), 10), Error);
        CHECK_THROWS_AS(resample_grid(Grid(3, 2), 1), Error);
    }
}

TEST_CASE("difference heatmap") {
    SUBCASE("identical cohorts give zero") {
        std::vector<LabeledGrid> recs{{Grid(5, 2, 1.0), true}, {Grid(5, 2, 1.0), false}};
        for (double v : difference_heatmap(recs, Quantity::dtime, 10).values.values) CHECK(v == 0.0);
    }
    SUBCASE("constant cohorts differ by the constant gap") {
        std::vector<LabeledGrid> recs{{Grid(5, 3, 2.0), true}, {Grid(9, 3, 0.5), false}};
        const auto h = difference_heatmap(recs, Quantity::dlayer, 20);
        CHECK(h.values.rows == 20);
        CHECK(h.values.cols == 3);
        CHECK(h.first_layer == 1);
        CHECK(h.n_correct == 1);
        CHECK(h.n_incorrect == 1);
        for (double v : h.values.values) CHECK(v == 1.5);
    }
    SUBCASE("label flip negates every cell exactly") {
        std::mt19937_64 rng(52);
        auto recs = random_cohort(rng, 25, 4);
        const auto h = difference_heatmap(recs, Quantity::dtime, 50);
        for (auto& r : recs) r.correct = !r.correct;
        const auto f = difference_heatmap(recs, Quantity::dtime, 50);
        for (std::size_t i = 0; i < h.values.size(); ++i) CHECK(f.values.values[i] == -h.values.values[i]);
    }
    SUBCASE("worker count does not change the result") {
        std::mt19937_64 rng(53);
        const auto recs = random_cohort(rng, 30, 3);
        CHECK(difference_heatmap(recs, Quantity::dtime, 40, 1).values ==
              difference_heatmap(recs, Quantity::dtime, 40, 4).values);
    }
    SUBCASE("errors") {
        std::vector<LabeledGrid> one{{Grid(5, 2, 1.0), true}};
        CHECK_THROWS_WITH_AS(difference_heatmap(one, Quantity::dtime, 10), "cohort empty", Error);
        std::vector<LabeledGrid> mixed{{Grid(5, 2, 1.0), true}, {Grid(5, 3, 1.0), false}};
        CHECK_THROWS_WITH_AS(difference_heatmap(mixed, Quantity::dtime, 10), "incompatible layer axes", Error);
    }
}

TEST_CASE("heatmap serialisation") {
    std::vector<LabeledGrid> recs{{Grid(3, 2, 2.0), true}, {Grid(3, 2, 1.0), false}};
    const auto h = difference_heatmap(recs, Quantity::dlayer, 4);
    const auto csv = heatmap_csv(h);
    CHECK(csv.rfind("bin,layer,value\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 4 * 2);
    CHECK(csv.find("\n0,1,1\n") != std::string::npos);
    const auto j = nlohmann::json::parse(heatmap_json(h));
    CHECK(j["quantity"] == "dlayer");
    CHECK(j["n_correct"] == 1);
}

TEST_CASE("synthetic spec checks") {
    SynthSpec s;
    CHECK_NOTHROW(s.check());
    s.multiplier = 1.0;
    CHECK_THROWS_WITH_AS(s.check(), doctest::Contains("unsatisfiable spec"), Error);
    s = {};
    s.correct_fraction = 1.0;
    CHECK_THROWS_AS(s.check(), Error);
    s = {};
    s.hotspot_layers = {9};
    CHECK_THROWS_AS(s.check(), Error);
    s = {};
    s.t_min = 50;
    s.t_max = 10;
    CHECK_THROWS_AS(s.check(), Error);
    CHECK(synth_preset("two-group").two_group);
    CHECK_THROWS_AS(synth_preset("nope"), Error);
}

TEST_CASE("synthetic cohort") {
    TempDir a("synth-a"), b("synth-b");
    auto spec = synth_preset("hotspot");
    spec.n = 10;
    const auto ra = synth_cohort(spec, a.path());
    const auto rb = synth_cohort(spec, b.path());

    SUBCASE("byte-identical reruns") {
        CHECK(fixtures::slurp(ra.manifest_path) == fixtures::slurp(rb.manifest_path));
        CHECK(fixtures::slurp(ra.gold_path) == fixtures::slurp(rb.gold_path));
        for (const auto& r : ra.manifest.records) {
            const auto rel = *r.tensor_refs.trajectory;
            CHECK(fixtures::slurp(a / rel) == fixtures::slurp(b / rel));
        }
    }
    SUBCASE("records are valid and shaped as specified") {
        const auto loaded = trajstore::load_manifest(ra.manifest_path);
        REQUIRE(loaded.records.size() == 10);
        const auto report = trajstore::validate_dataset(loaded.records, {.deep = true});
        for (const auto& e : report.errors) MESSAGE(e.record_id << " " << e.check << ": " << e.message);
        CHECK(report.valid());
        for (const auto& r : loaded.records) {
            CHECK(r.label.has_value());
            CHECK(r.gold.has_value());
            auto in = trajstore::open_input(r.resolve(*r.tensor_refs.trajectory));
            const auto shape = trajstore::read_trajectory_header(in);
            CHECK(shape.layers == 9);
            CHECK(shape.width == 16);
            CHECK(shape.tokens >= 24);
            CHECK(shape.tokens <= 96);
            const auto stats = trajstore::load_token_stats(r);
            REQUIRE(stats.has_value());
            for (std::size_t t = 0; t < stats->size(); ++t) {
                CHECK(stats->max_prob[t] >= std::exp(stats->chosen_logprob[t]) - 1e-6);
                CHECK(stats->entropy[t] >= 0.0);
            }
        }
    }
    SUBCASE("long traces spill token stats into sidecars") {
        TempDir c("synth-c");
        auto long_spec = spec;
        long_spec.n = 2;
        long_spec.t_min = 600;
        long_spec.t_max = 610;
        long_spec.layers = 2;
        long_spec.width = 2;
        long_spec.hotspot_layers = {1};
        const auto rc = synth_cohort(long_spec, c.path());
        for (const auto& r : rc.manifest.records) {
            CHECK_FALSE(r.token_stats.has_value());
            REQUIRE(r.tensor_refs.token_stats.has_value());
        }
        CHECK(trajstore::validate_dataset(trajstore::load_manifest(rc.manifest_path).records).valid());
    }
}

TEST_CASE("synthetic hotspots carry the largest positive temporal-delta differences") {
    TempDir dir("synth-heat");
    auto spec = synth_preset("hotspot");
    spec.n = 80;
    const auto r = synth_cohort(spec, dir.path());
    std::vector<LabeledGrid> grids;
    for (const auto& rec : r.manifest.records) {
        const auto traj = trajstore::read_trajectory_file(rec.resolve(*rec.tensor_refs.trajectory));
        grids.push_back({*delta::compute(traj, {true, false, false, false}).dt, *rec.label});
    }
    const auto h = difference_heatmap(grids, Quantity::dtime, 50);
    // Column means of the correct-minus-incorrect difference per layer.
    std::vector<double> col(h.values.cols, 0.0);
    for (std::size_t b = 0; b < h.values.rows; ++b) {
        for (std::size_t c = 0; c < h.values.cols; ++c) col[c] += h.values(b, c);
    }
    const auto best = std::max_element(col.begin(), col.end()) - col.begin();
    const auto layer = h.first_layer + static_cast<std::size_t>(best);
    CHECK((layer == 4 || layer == 5));
    const auto cell = std::max_element(h.values.values.begin(), h.values.values.end()) - h.values.values.begin();
    const auto cell_layer = h.first_layer + static_cast<std::size_t>(cell) % h.values.cols;
    CHECK((cell_layer == 4 || cell_layer == 5));
}

}  // TEST_SUITE
