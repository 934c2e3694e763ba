#include "eatseg/evaluate.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include "eatseg/errors.hpp"

namespace eatseg {

const char* to_string(MaskTarget t) { return t == MaskTarget::pericardium ? "pericardium" : "eat"; }

SliceMetrics overlap_metrics(const Mask& pred, const Mask& truth) {
    require(pred.same_shape(truth), ErrorKind::invalid_argument,
            "overlap_metrics: prediction is " + std::to_string(pred.rows) + "x" + std::to_string(pred.cols) +
                ", truth " + std::to_string(truth.rows) + "x" + std::to_string(truth.cols));
    SliceMetrics m;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred.px[i] != 0, t = truth.px[i] != 0;
        m.tp += p && t;
        m.fp += p && !t;
        m.fn += !p && t;
    }
    const double tp = static_cast<double>(m.tp), fp = static_cast<double>(m.fp), fn = static_cast<double>(m.fn);
    if (m.tp + m.fp + m.fn == 0) {
        m.dsc = m.jaccard = m.precision = m.recall = 1.0;
        return m;
    }
    m.dsc = 2 * tp / (2 * tp + fp + fn);
    m.jaccard = tp / (tp + fp + fn);
    m.precision = m.tp + m.fp > 0 ? tp / (tp + fp) : 0.0;
    m.recall = m.tp + m.fn > 0 ? tp / (tp + fn) : 0.0;
    return m;
}

PearsonResult pearson(std::span<const double> xs, std::span<const double> ys) {
    require(xs.size() == ys.size(), ErrorKind::invalid_argument,
            "pearson: series lengths differ (" + std::to_string(xs.size()) + " vs " + std::to_string(ys.size()) + ")");
    require(xs.size() >= 3, ErrorKind::invalid_argument, "pearson: need at least 3 pairs");
    const double n = static_cast<double>(xs.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0, syy = 0, sxy = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double dx = xs[i] - mx, dy = ys[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    require(sxx > 0 && syy > 0, ErrorKind::undefined_correlation, "pearson: constant series, correlation undefined");
    PearsonResult res;
    res.n = xs.size();
    res.r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
    const double df = n - 2;
    if (std::abs(res.r) >= 1.0) {
        res.p = 0.0;
    } else {
        const double t = std::abs(res.r) * std::sqrt(df / (1 - res.r * res.r));
        boost::math::students_t dist(df);
        res.p = 2 * boost::math::cdf(boost::math::complement(dist, t));
    }
    return res;
}

BlandAltmanResult bland_altman(std::span<const double> pred, std::span<const double> ref) {
    require(pred.size() == ref.size(), ErrorKind::invalid_argument, "bland_altman: series lengths differ");
    require(pred.size() >= 2, ErrorKind::invalid_argument, "bland_altman: need at least 2 pairs");
    BlandAltmanResult b;
    double sum = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        b.points.push_back({(pred[i] + ref[i]) / 2, pred[i] - ref[i]});
        sum += pred[i] - ref[i];
    }
    const double n = static_cast<double>(pred.size());
    b.mean_diff = sum / n;
    double ss = 0;
    for (const auto& p : b.points) ss += (p.diff - b.mean_diff) * (p.diff - b.mean_diff);
    b.sd_diff = std::sqrt(ss / (n - 1));
    b.loa_low = b.mean_diff - kLoaMultiplier * b.sd_diff;
    b.loa_high = b.mean_diff + kLoaMultiplier * b.sd_diff;
    for (const auto& p : b.points) b.outlier_count += p.diff < b.loa_low || p.diff > b.loa_high;
    return b;
}

namespace {

MetricSummary average(std::span<const SliceMetrics> ms) {
    MetricSummary s;
    for (const auto& m : ms) {
        s.dsc += m.dsc;
        s.jaccard += m.jaccard;
        s.precision += m.precision;
        s.recall += m.recall;
    }
    s.n = ms.size();
    if (s.n) {
        const double k = 1.0 / static_cast<double>(s.n);
        s.dsc *= k;
        s.jaccard *= k;
        s.precision *= k;
        s.recall *= k;
    }
    return s;
}

}  // namespace

MetricSummary summarize(std::span<const SliceMetrics> metrics, Aggregation agg) {
    if (agg == Aggregation::per_slice) return average(metrics);
    std::map<std::string, std::vector<SliceMetrics>> by_patient;
    for (const auto& m : metrics) by_patient[m.patient_id].push_back(m);
    std::vector<SliceMetrics> means;
    for (const auto& [id, ms] : by_patient) {
        const MetricSummary s = average(ms);
        SliceMetrics m;
        m.patient_id = id;
        m.dsc = s.dsc;
        m.jaccard = s.jaccard;
        m.precision = s.precision;
        m.recall = s.recall;
        means.push_back(m);
    }
    return average(means);
}

MetricSummary mean_of(std::span<const MetricSummary> folds) {
    MetricSummary s;
    for (const auto& f : folds) {
        s.dsc += f.dsc;
        s.jaccard += f.jaccard;
        s.precision += f.precision;
        s.recall += f.recall;
        s.n += f.n;
    }
    if (!folds.empty()) {
        const double k = 1.0 / static_cast<double>(folds.size());
        s.dsc *= k;
        s.jaccard *= k;
        s.precision *= k;
        s.recall *= k;
    }
    return s;
}

namespace {

std::optional<PearsonResult> try_pearson(const std::vector<SliceCount>& counts) {
    std::vector<double> x, y;
    for (const auto& c : counts) {
        x.push_back(static_cast<double>(c.predicted));
        y.push_back(static_cast<double>(c.ground_truth));
    }
    try {
        return pearson(x, y);
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::undefined_correlation || e.kind() == ErrorKind::invalid_argument)
            return std::nullopt;
        throw;
    }
}

}  // namespace

FoldEvaluation evaluate_fold(int fold, const std::vector<SliceEvalInput>& slices, Aggregation agg) {
    FoldEvaluation f;
    f.fold = fold;
    const std::size_t n = slices.size();
    f.pericardium.resize(n);
    f.eat.resize(n);
    f.counts.resize(n);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t k = 0; k < static_cast<std::ptrdiff_t>(n); ++k) {
        const SliceEvalInput& s = slices[k];
        SliceMetrics pm = overlap_metrics(s.pericardium_pred, s.pericardium_truth);
        const Mask eat_pred = derive_eat(s.pericardium_pred, s.adipose);
        SliceMetrics em = overlap_metrics(eat_pred, s.eat_truth);
        pm.patient_id = em.patient_id = s.patient_id;
        pm.slice_index = em.slice_index = s.slice_index;
        pm.target = MaskTarget::pericardium;
        em.target = MaskTarget::eat;
        f.pericardium[k] = std::move(pm);
        f.eat[k] = std::move(em);
        f.counts[k] = {s.patient_id, s.slice_index, count_eat_pixels(eat_pred), count_eat_pixels(s.eat_truth), {}, false};
    }
    f.pericardium_mean = summarize(f.pericardium, agg);
    f.eat_mean = summarize(f.eat, agg);
    f.pearson = try_pearson(f.counts);
    return f;
}

EvalReport build_report(std::vector<FoldEvaluation> folds, Aggregation agg) {
    EvalReport r;
    r.aggregation = agg;
    std::vector<MetricSummary> peri, eat;
    std::vector<SliceCount> pooled;
    for (auto& f : folds) {
        f.pericardium_mean = summarize(f.pericardium, agg);
        f.eat_mean = summarize(f.eat, agg);
        peri.push_back(f.pericardium_mean);
        eat.push_back(f.eat_mean);
        pooled.insert(pooled.end(), f.counts.begin(), f.counts.end());
    }
    r.pericardium = mean_of(peri);
    r.eat = mean_of(eat);
    r.pearson = try_pearson(pooled);

    std::vector<double> pred, ref, corrected, corrected_ref;
    for (const auto& c : pooled) {
        pred.push_back(static_cast<double>(c.predicted));
        ref.push_back(static_cast<double>(c.ground_truth));
    }
    if (pooled.size() >= 2) r.bland_altman = bland_altman(pred, ref);

    if (folds.size() >= 2) {
        for (std::size_t f = 0; f < folds.size(); ++f) {
            std::vector<SliceCount> others;
            std::string label = "folds";
            for (std::size_t g = 0; g < folds.size(); ++g) {
                if (g == f) continue;
                others.insert(others.end(), folds[g].counts.begin(), folds[g].counts.end());
                label += ":" + std::to_string(folds[g].fold);
            }
            if (others.empty() || folds[f].counts.empty()) continue;
            BiasCorrection bc = fit_bias(others, label);
            EatQuantification q = aggregate_counts(folds[f].counts);
            apply_correction(q, bc);
            folds[f].counts = q.per_slice;
            folds[f].correction = std::move(bc);
            for (const auto& c : folds[f].counts) {
                corrected.push_back(*c.corrected);
                corrected_ref.push_back(static_cast<double>(c.ground_truth));
            }
        }
        if (corrected.size() >= 2) r.bland_altman_corrected = bland_altman(corrected, corrected_ref);
    }
    r.folds = std::move(folds);
    return r;
}

nlohmann::json to_json(const SliceMetrics& m) {
    return {{"patient_id", m.patient_id}, {"slice_index", m.slice_index}, {"target", to_string(m.target)},
            {"dsc", m.dsc},               {"jaccard", m.jaccard},         {"precision", m.precision},
            {"recall", m.recall}};
}

nlohmann::json to_json(const MetricSummary& m) {
    return {{"dsc", m.dsc}, {"jaccard", m.jaccard}, {"precision", m.precision}, {"recall", m.recall}, {"n", m.n}};
}

nlohmann::json to_json(const PearsonResult& p) { return {{"r", p.r}, {"p", p.p}, {"n", p.n}}; }

nlohmann::json to_json(const BlandAltmanResult& b) {
    return {{"mean_diff", b.mean_diff}, {"sd_diff", b.sd_diff},         {"loa_low", b.loa_low},
            {"loa_high", b.loa_high},   {"outlier_count", b.outlier_count}, {"n", b.points.size()}};
}

nlohmann::json to_json(const EvalReport& r) {
    auto opt = [](const auto& o) -> nlohmann::json { return o ? to_json(*o) : nlohmann::json(nullptr); };
    nlohmann::json folds = nlohmann::json::array();
    for (const auto& f : r.folds) {
        nlohmann::json jf{{"fold", f.fold},
                          {"pericardium", to_json(f.pericardium_mean)},
                          {"eat", to_json(f.eat_mean)},
                          {"pearson", opt(f.pearson)},
                          {"correction", opt(f.correction)}};
        std::int64_t pred = 0, truth = 0;
        for (const auto& c : f.counts) {
            pred += c.predicted;
            truth += c.ground_truth;
        }
        jf["eat_pixels"] = {{"predicted", pred}, {"ground_truth", truth}};
        folds.push_back(jf);
    }
    return {{"aggregation", r.aggregation == Aggregation::per_slice ? "per_slice" : "per_patient"},
            {"pericardium", to_json(r.pericardium)},
            {"eat", to_json(r.eat)},
            {"pearson", opt(r.pearson)},
            {"bland_altman", opt(r.bland_altman)},
            {"bland_altman_corrected", opt(r.bland_altman_corrected)},
            {"folds", folds}};
}

void write_metrics_csv(const EvalReport& r, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::trunc);
    require(static_cast<bool>(os), ErrorKind::io, "cannot write " + path.string());
    os.precision(10);
    os << "fold,patient_id,slice_index,target,dsc,jaccard,precision,recall\n";
    for (const auto& f : r.folds)
        for (const auto* set : {&f.pericardium, &f.eat})
            for (const auto& m : *set)
                os << f.fold << ',' << m.patient_id << ',' << m.slice_index << ',' << to_string(m.target) << ','
                   << m.dsc << ',' << m.jaccard << ',' << m.precision << ',' << m.recall << '\n';
    require(static_cast<bool>(os), ErrorKind::io, "short write to " + path.string());
}

}  // namespace eatseg
