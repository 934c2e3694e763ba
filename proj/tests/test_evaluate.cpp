#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include "eatseg/errors.hpp"
#include "eatseg/evaluate.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace eatseg;

namespace {

Mask to_mask(const std::vector<int>& v, int rows, int cols) {
    Mask m(rows, cols);
    for (std::size_t i = 0; i < v.size(); ++i) m.px[i] = static_cast<std::uint8_t>(v[i]);
    return m;
}

std::vector<char> read_bytes(const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

FoldEvaluation fold_with_counts(int fold, const std::string& prefix, const std::vector<std::pair<int, int>>& counts) {
    FoldEvaluation f;
    f.fold = fold;
    for (std::size_t i = 0; i < counts.size(); ++i) {
        const std::string id = prefix + std::to_string(i / 2);
        f.counts.push_back({id, static_cast<int>(i), counts[i].first, counts[i].second, {}, false});
        SliceMetrics m;
        m.patient_id = id;
        m.slice_index = static_cast<int>(i);
        m.dsc = m.jaccard = m.precision = m.recall = 0.5 + 0.1 * fold;
        f.pericardium.push_back(m);
        f.eat.push_back(m);
    }
    return f;
}

}  // namespace

TEST(Overlap, WorkedExamples) {
    const Mask a = to_mask({1, 1, 0, 0}, 2, 2);
    const SliceMetrics same = overlap_metrics(a, a);
    EXPECT_EQ(same.dsc, 1.0);
    EXPECT_EQ(same.jaccard, 1.0);
    EXPECT_EQ(same.precision, 1.0);
    EXPECT_EQ(same.recall, 1.0);

    // Ten predicted pixels, ten reference pixels, five shared.
    std::vector<int> p(20, 0), t(20, 0);
    for (int i = 0; i < 10; ++i) p[i] = 1;
    for (int i = 5; i < 15; ++i) t[i] = 1;
    const SliceMetrics half = overlap_metrics(to_mask(p, 4, 5), to_mask(t, 4, 5));
    EXPECT_DOUBLE_EQ(half.dsc, 0.5);
    EXPECT_DOUBLE_EQ(half.jaccard, 1.0 / 3.0);
    EXPECT_DOUBLE_EQ(half.precision, 0.5);
    EXPECT_DOUBLE_EQ(half.recall, 0.5);
    EXPECT_EQ(half.tp, 5);
    EXPECT_EQ(half.fp, 5);
    EXPECT_EQ(half.fn, 5);

    const Mask empty(2, 2);
    EXPECT_EQ(overlap_metrics(empty, empty).dsc, 1.0);
    EXPECT_EQ(overlap_metrics(empty, empty).jaccard, 1.0);
    EXPECT_EQ(overlap_metrics(a, empty).dsc, 0.0);
    EXPECT_EQ(overlap_metrics(empty, a).recall, 0.0);
    EXPECT_THROW(overlap_metrics(a, Mask(3, 3)), Error);
}

TEST(Overlap, MatchesSetOracleAndDiceJaccardIdentity) {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0, 1);
    for (int trial = 0; trial < 1000; ++trial) {
        const int n = 1 + static_cast<int>(u(rng) * 8);
        const auto p = oracle::random_mask(rng, n * n, u(rng) * u(rng));
        const auto t = oracle::random_mask(rng, n * n, u(rng));
        const SliceMetrics m = overlap_metrics(to_mask(p, n, n), to_mask(t, n, n));
        const oracle::Overlap o = oracle::overlap(p, t);
        ASSERT_NEAR(m.dsc, o.dsc, 1e-9);
        ASSERT_NEAR(m.jaccard, o.jaccard, 1e-9);
        ASSERT_NEAR(m.precision, o.precision, 1e-9);
        ASSERT_NEAR(m.recall, o.recall, 1e-9);
        ASSERT_NEAR(m.dsc, 2 * m.jaccard / (1 + m.jaccard), 1e-9);
    }
}

TEST(Pearson, WorkedExamples) {
    const std::vector<double> xs{1, 2, 3, 4}, ys{1, 2, 3, 5};
    const PearsonResult r = pearson(xs, ys);
    EXPECT_NEAR(r.r, 6.5 / std::sqrt(43.75), 1e-12);
    EXPECT_NEAR(r.r, 0.98270, 1e-5);
    EXPECT_EQ(r.n, 4u);
    // Two degrees of freedom: the two-sided tail has the closed form 1 - t / sqrt(t^2 + 2).
    const double t = r.r * std::sqrt(2.0 / (1.0 - r.r * r.r));
    EXPECT_NEAR(r.p, 1.0 - t / std::sqrt(t * t + 2.0), 1e-9);

    EXPECT_NEAR(pearson(xs, xs).r, 1.0, 1e-15);
    const std::vector<double> neg{-1, -2, -3, -4};
    EXPECT_NEAR(pearson(xs, neg).r, -1.0, 1e-15);
    EXPECT_EQ(pearson(xs, neg).p, 0.0);
}

TEST(Pearson, Errors) {
    const std::vector<double> xs{1, 2, 3}, flat{2, 2, 2}, two{1, 2};
    try {
        pearson(xs, flat);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::undefined_correlation);
    }
    EXPECT_THROW(pearson(two, two), Error);
    EXPECT_THROW(pearson(xs, two), Error);
}

TEST(Pearson, MatchesRawMomentOracle) {
    std::mt19937_64 rng(12);
    std::uniform_int_distribution<int> len(3, 30);
    std::normal_distribution<double> g(0, 1);
    for (int trial = 0; trial < 1000; ++trial) {
        const int n = len(rng);
        std::vector<double> x(n), y(n);
        for (int i = 0; i < n; ++i) {
            x[i] = 50 + 10 * g(rng);
            y[i] = 0.5 * x[i] + 5 * g(rng);
        }
        ASSERT_NEAR(pearson(x, y).r, oracle::pearson_r(x, y), 1e-9);
    }
}

TEST(BlandAltman, WorkedExamples) {
    const std::vector<double> ref{10, 10}, pred{12, 8};
    const BlandAltmanResult b = bland_altman(pred, ref);
    EXPECT_DOUBLE_EQ(b.mean_diff, 0.0);
    EXPECT_NEAR(b.sd_diff, std::sqrt(8.0), 1e-12);
    EXPECT_NEAR(b.loa_high, 5.5437, 5e-5);
    EXPECT_NEAR(b.loa_low, -5.5437, 5e-5);
    ASSERT_EQ(b.points.size(), 2u);
    EXPECT_DOUBLE_EQ(b.points[0].mean, 11.0);
    EXPECT_DOUBLE_EQ(b.points[0].diff, 2.0);

    const std::vector<double> shifted{20, 30, 40}, base{10, 20, 30};
    const BlandAltmanResult s = bland_altman(shifted, base);
    EXPECT_DOUBLE_EQ(s.mean_diff, 10.0);
    EXPECT_DOUBLE_EQ(s.sd_diff, 0.0);
    EXPECT_DOUBLE_EQ(s.loa_low, s.loa_high);

    const std::vector<double> one{1};
    EXPECT_THROW(bland_altman(one, one), Error);
}

TEST(BlandAltman, MatchesOracle) {
    std::mt19937_64 rng(13);
    std::uniform_int_distribution<int> len(2, 40);
    std::uniform_real_distribution<double> u(0, 500);
    for (int trial = 0; trial < 1000; ++trial) {
        const int n = len(rng);
        std::vector<double> p(n), r(n);
        for (int i = 0; i < n; ++i) {
            r[i] = u(rng);
            p[i] = r[i] + u(rng) / 10 - 20;
        }
        const BlandAltmanResult b = bland_altman(p, r);
        const oracle::Agreement o = oracle::bland_altman(p, r);
        ASSERT_NEAR(b.mean_diff, o.bias, 1e-9);
        ASSERT_NEAR(b.sd_diff, o.sd, 1e-9);
        ASSERT_NEAR(b.loa_low, o.low, 1e-9);
        ASSERT_NEAR(b.loa_high, o.high, 1e-9);
    }
}

TEST(Summaries, SliceAndPatientAggregation) {
    std::vector<SliceMetrics> m(3);
    m[0].patient_id = "a";
    m[0].dsc = 1.0;
    m[1].patient_id = "a";
    m[1].dsc = 0.0;
    m[2].patient_id = "b";
    m[2].dsc = 1.0;
    EXPECT_DOUBLE_EQ(summarize(m, Aggregation::per_slice).dsc, 2.0 / 3.0);
    EXPECT_EQ(summarize(m, Aggregation::per_slice).n, 3u);
    EXPECT_DOUBLE_EQ(summarize(m, Aggregation::per_patient).dsc, 0.75);
    EXPECT_EQ(summarize(m, Aggregation::per_patient).n, 2u);
    const std::vector<MetricSummary> folds{{0.9, 0, 0, 0, 10}, {0.7, 0, 0, 0, 30}};
    EXPECT_DOUBLE_EQ(mean_of(folds).dsc, 0.8);
}

TEST(EvaluateFold, DerivesEatFromPredictedPericardium) {
    SliceEvalInput s;
    s.patient_id = "a";
    s.pericardium_truth = to_mask({1, 1, 1, 0}, 2, 2);
    s.pericardium_pred = to_mask({1, 1, 0, 0}, 2, 2);
    s.adipose = to_mask({0, 1, 1, 1}, 2, 2);
    s.eat_truth = to_mask({0, 1, 1, 0}, 2, 2);
    const FoldEvaluation f = evaluate_fold(3, {s});
    EXPECT_EQ(f.fold, 3);
    ASSERT_EQ(f.counts.size(), 1u);
    EXPECT_EQ(f.counts[0].predicted, 1);
    EXPECT_EQ(f.counts[0].ground_truth, 2);
    EXPECT_DOUBLE_EQ(f.eat[0].dsc, 2.0 / 3.0);
    EXPECT_DOUBLE_EQ(f.pericardium[0].dsc, 0.8);
    EXPECT_FALSE(f.pearson.has_value());
}

TEST(Report, EachFoldIsCorrectedWithTheOtherFoldsBias) {
    std::vector<FoldEvaluation> folds{fold_with_counts(0, "a", {{15, 10}, {25, 20}, {31, 30}}),
                                      fold_with_counts(1, "b", {{12, 10}, {18, 20}, {36, 30}})};
    const EvalReport r = build_report(folds);
    ASSERT_TRUE(r.folds[0].correction && r.folds[1].correction);
    EXPECT_DOUBLE_EQ(r.folds[0].correction->bias, 2.0);  // fold 1: (2 - 2 + 6) / 3
    EXPECT_DOUBLE_EQ(r.folds[1].correction->bias, 11.0 / 3.0);
    EXPECT_EQ(r.folds[0].correction->fitted_on, "folds:1");
    EXPECT_EQ(r.folds[0].correction->fitted_patients, (std::vector<std::string>{"b0", "b1"}));
    EXPECT_DOUBLE_EQ(*r.folds[0].counts[0].corrected, 13.0);
    EXPECT_DOUBLE_EQ(r.pericardium.dsc, 0.55);
    ASSERT_TRUE(r.bland_altman && r.bland_altman_corrected && r.pearson);
    EXPECT_DOUBLE_EQ(r.bland_altman->mean_diff, (5 + 5 + 1 + 2 - 2 + 6) / 6.0);
    EXPECT_EQ(r.bland_altman->points.size(), 6u);
}

TEST(Report, PlotsAndCsv) {
    testutil::TempDir dir("plots");
    const EvalReport r = build_report({fold_with_counts(0, "a", {{15, 10}, {25, 20}, {31, 30}}),
                                       fold_with_counts(1, "b", {{12, 10}, {18, 20}, {36, 30}})});
    const auto files = emit_plots(r, dir / "one");
    ASSERT_EQ(files.size(), 2u);
    for (const auto& f : files) EXPECT_GT(std::filesystem::file_size(f), 0u);
    emit_plots(r, dir / "two");
    EXPECT_EQ(read_bytes(dir / "one" / "bland_altman.png"), read_bytes(dir / "two" / "bland_altman.png"));
    EXPECT_EQ(read_bytes(dir / "one" / "count_scatter.png"), read_bytes(dir / "two" / "count_scatter.png"));

    write_metrics_csv(r, dir / "m.csv");
    std::ifstream is(dir / "m.csv");
    std::string line;
    int rows = 0;
    while (std::getline(is, line)) ++rows;
    EXPECT_EQ(rows, 1 + 12);

    try {
        emit_plots(EvalReport{}, dir / "none");
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("nothing to plot"), std::string::npos);
    }
}
