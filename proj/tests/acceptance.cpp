// Acceptance run: one PASS / FAIL / SKIP line per criterion, tolerances pinned below.
// Exit status is nonzero when any criterion fails.

#include <omp.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "eatseg/augment.hpp"
#include "eatseg/evaluate.hpp"
#include "eatseg/model.hpp"
#include "eatseg/phantom.hpp"
#include "eatseg/pipeline.hpp"
#include "eatseg/preprocess.hpp"
#include "eatseg/quantify.hpp"
#include "eatseg/run_config.hpp"
#include "eatseg/training.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace eatseg;

namespace {

constexpr double kOracleTol = 1e-9;
constexpr double kGradRelTol = 1e-4;
constexpr double kRateTol = 0.02;
constexpr std::int64_t kExpectedParams = 5'944'121;
constexpr double kParamTarget = 5.8e6, kParamTol = 0.10;
constexpr double kPericardiumDsc = 0.95, kEatDsc = 0.90;
constexpr double kZeroBias = 1e-9;

struct Outcome {
    enum Status { pass, fail, skip } status = pass;
    std::string detail;
};

class Check {
public:
    void expect(bool ok, const std::string& what) {
        if (!ok && failures_.empty()) failures_ = what;
    }
    void note(const std::string& s) { notes_ += (notes_.empty() ? "" : "; ") + s; }
    Outcome done() const { return failures_.empty() ? Outcome{Outcome::pass, notes_} : Outcome{Outcome::fail, failures_}; }

private:
    std::string failures_, notes_;
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

Mask to_mask(const std::vector<int>& v, int n) {
    Mask m(n, n);
    for (std::size_t i = 0; i < v.size(); ++i) m.px[i] = static_cast<std::uint8_t>(v[i]);
    return m;
}

Outcome dice_loss_matches_oracle() {
    Check c;
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double worst = 0, worst_grad = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const auto t = oracle::random_mask(rng, 256, 0.3);
        std::vector<double> p(256);
        for (auto& v : p) v = u(rng);
        std::vector<std::uint8_t> t8(t.begin(), t.end());
        const DiceLossConfig cfg;
        std::vector<double> g(256);
        const double loss = dice_loss_with_grad<double>(p, t8, cfg, g);
        worst = std::max(worst, std::abs(loss - oracle::dice_loss(p, t, 1.0)));
        for (int i = 0; i < 256; i += 17) {
            const double h = 1e-6;
            auto plus = p, minus = p;
            plus[i] += h;
            minus[i] -= h;
            const double fd = (oracle::dice_loss(plus, t, 1.0) - oracle::dice_loss(minus, t, 1.0)) / (2 * h);
            worst_grad = std::max(worst_grad, std::abs(g[i] - fd) / std::max(std::abs(fd), 1e-12));
        }
    }
    c.expect(worst <= kOracleTol, "loss differs from oracle by " + fmt("%.3g", worst));
    c.expect(worst_grad <= kGradRelTol, "gradient relative error " + fmt("%.3g", worst_grad));
    c.note("max |loss err| " + fmt("%.2g", worst) + ", max grad rel err " + fmt("%.2g", worst_grad));
    return c.done();
}

Outcome metrics_match_oracles() {
    Check c;
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> dens(0.0, 0.6);
    double worst_overlap = 0, worst_identity = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const int n = 4 + trial % 13;
        const auto a = oracle::random_mask(rng, n * n, trial % 50 == 0 ? 0.0 : dens(rng));
        const auto b = oracle::random_mask(rng, n * n, trial % 70 == 0 ? 0.0 : dens(rng));
        const SliceMetrics m = overlap_metrics(to_mask(a, n), to_mask(b, n));
        const oracle::Overlap o = oracle::overlap(a, b);
        worst_overlap = std::max({worst_overlap, std::abs(m.dsc - o.dsc), std::abs(m.jaccard - o.jaccard),
                                  std::abs(m.precision - o.precision), std::abs(m.recall - o.recall)});
        worst_identity = std::max(worst_identity, std::abs(m.dsc - 2 * m.jaccard / (1 + m.jaccard)));
    }
    std::normal_distribution<double> g(50.0, 20.0);
    std::uniform_int_distribution<int> len(3, 60);
    double worst_r = 0, worst_ba = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const int n = len(rng);
        std::vector<double> x(n), y(n);
        for (int i = 0; i < n; ++i) {
            x[i] = g(rng);
            y[i] = 0.7 * x[i] + g(rng);
        }
        worst_r = std::max(worst_r, std::abs(pearson(x, y).r - oracle::pearson_r(x, y)));
        const BlandAltmanResult ba = bland_altman(x, y);
        const oracle::Agreement o = oracle::bland_altman(x, y);
        worst_ba = std::max({worst_ba, std::abs(ba.mean_diff - o.bias), std::abs(ba.sd_diff - o.sd),
                             std::abs(ba.loa_low - o.low), std::abs(ba.loa_high - o.high)});
    }
    c.expect(worst_overlap <= kOracleTol, "overlap error " + fmt("%.3g", worst_overlap));
    c.expect(worst_identity <= kOracleTol, "DSC-Jaccard identity error " + fmt("%.3g", worst_identity));
    c.expect(worst_r <= kOracleTol, "Pearson error " + fmt("%.3g", worst_r));
    c.expect(worst_ba <= kOracleTol, "Bland-Altman error " + fmt("%.3g", worst_ba));
    c.note("overlap " + fmt("%.2g", worst_overlap) + ", r " + fmt("%.2g", worst_r) + ", BA " + fmt("%.2g", worst_ba));
    return c.done();
}

Outcome depth_channel() {
    Check c;
    const LoadedStudy ls = testutil::random_study("d", 7, 32, 3);
    PreprocessConfig pre;
    pre.target_size = 32;
    const auto samples = build_samples({ls}, pre);
    double prev = -1;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const float want = static_cast<float>(static_cast<double>(i) / (samples.size() - 1));
        const float* ch = samples[i].input.plane(0, 1);
        bool constant = true;
        for (std::size_t k = 0; k < samples[i].input.plane_size(); ++k) constant &= ch[k] == want;
        c.expect(constant, "depth channel of slice " + std::to_string(i) + " is not the constant rank/(n-1)");
        c.expect(samples[i].normalized_depth > prev, "depth is not increasing");
        prev = samples[i].normalized_depth;
    }
    SegModelConfig mc;
    mc.input_size = 32;
    const SegModel model = SegModel::build(mc, 42);
    Tensor a(1, 2, 32, 32), b(1, 2, 32, 32);
    std::copy_n(samples[3].input.plane(0, 0), 32 * 32, a.plane(0, 0));
    std::copy_n(samples[3].input.plane(0, 0), 32 * 32, b.plane(0, 0));
    std::fill_n(b.plane(0, 1), 32 * 32, 1.0f);
    const Tensor ya = model.forward(a), yb = model.forward(b);
    double diff = 0;
    for (std::size_t i = 0; i < ya.numel(); ++i) diff = std::max(diff, double(std::abs(ya.data()[i] - yb.data()[i])));
    c.expect(diff > 0, "model output ignores the depth channel");
    c.note(std::to_string(samples.size()) + " slices, output change " + fmt("%.3g", diff));
    return c.done();
}

Outcome augmentation() {
    Check c;
    const int n = 32;
    Mask blob(n, n);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) blob.at(y, x) = (x - 12) * (x - 12) + (y - 17) * (y - 17) < 60;
    TrainSample s;
    s.patient_id = "a";
    s.input = Tensor(1, 2, n, n);
    for (std::size_t i = 0; i < blob.size(); ++i) s.input.plane(0, 0)[i] = blob.px[i];
    std::fill_n(s.input.plane(0, 1), n * n, 0.25f);
    s.target = s.adipose = s.eat = blob;

    ImagePlane img(n, n);
    std::mt19937_64 g(7);
    std::uniform_real_distribution<float> u(-1, 1);
    for (auto& v : img.px) v = u(g);
    const SamplingMap flip = hflip_map(n);
    c.expect(warp_image(warp_image(img, flip), flip) == img, "double flip is not the identity");
    c.expect(mesh_deform(img, DisplacementGrid{4, std::vector<double>(16), std::vector<double>(16)}) == img,
             "zero mesh is not the identity");

    AugmentPolicy always;
    always.p_hflip = always.p_affine = always.p_mesh_deform = 1.0;
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
        AugmentRng rng(seed);
        const AugmentResult r = augment_sample(s, always, rng);
        ImagePlane ch0(n, n);
        std::copy_n(s.input.plane(0, 0), n * n, ch0.px.begin());
        const ImagePlane warped = warp_image(ch0, outcome_map(r.outcome, n));
        bool agree = r.sample.target == warp_mask(blob, outcome_map(r.outcome, n));
        for (std::size_t i = 0; i < warped.size(); ++i) agree &= r.sample.target.px[i] == (warped.px[i] >= 0.5f);
        c.expect(agree, "mask and image disagree under seed " + std::to_string(seed));
    }

    const AugmentPolicy p;
    AugmentRng rng(99);
    int flips = 0, affines = 0, meshes = 0;
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) {
        const AugmentOutcome o = draw_outcome(p, 128, rng);
        flips += o.flipped;
        affines += o.affine.has_value();
        meshes += o.mesh_applied;
    }
    const double rf = double(flips) / draws, ra = double(affines) / draws, rm = double(meshes) / draws;
    c.expect(std::abs(rf - p.p_hflip) <= kRateTol, "flip rate " + fmt("%.4f", rf));
    c.expect(std::abs(ra - p.p_affine) <= kRateTol, "affine rate " + fmt("%.4f", ra));
    c.expect(std::abs(rm - p.p_mesh_deform) <= kRateTol, "mesh rate " + fmt("%.4f", rm));
    c.note("rates flip " + fmt("%.3f", rf) + " affine " + fmt("%.3f", ra) + " mesh " + fmt("%.3f", rm));
    return c.done();
}

Outcome parameter_count() {
    Check c;
    const SegModelConfig cfg;
    const SegModel m = SegModel::build(cfg, 1);
    std::int64_t instantiated = 0;
    for (const Parameter* p : m.parameters()) instantiated += static_cast<std::int64_t>(p->value.size());
    c.expect(count_parameters(cfg) == kExpectedParams, "layout count " + std::to_string(count_parameters(cfg)));
    c.expect(instantiated == kExpectedParams, "instantiated count " + std::to_string(instantiated));
    c.expect(std::abs(instantiated - kParamTarget) <= kParamTol * kParamTarget, "outside the parameter budget");
    c.note(std::to_string(instantiated) + " parameters");
    return c.done();
}

RunConfig phantom_run(int image, int slices, int target, int epochs) {
    return load_run_config(std::nullopt, {"phantom.image_size=" + std::to_string(image),
                                          "phantom.slices_per_patient=" + std::to_string(slices),
                                          "preprocess.target_size=" + std::to_string(target),
                                          "model.input_size=" + std::to_string(target),
                                          "train.epochs=" + std::to_string(epochs)});
}

Outcome phantom_segmentation() {
    Check c;
    testutil::TempDir dir("acc_phantom");
    const RunConfig cfg = phantom_run(128, 12, 32, 100);
    const auto t0 = std::chrono::steady_clock::now();
    const DatasetManifest m = generate_phantom(cfg.phantom, dir / "data");
    const PipelineResult r = run_pipeline(cfg, m);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    c.expect(r.report.pericardium.dsc >= kPericardiumDsc, "pericardium DSC " + fmt("%.4f", r.report.pericardium.dsc));
    c.expect(r.report.eat.dsc >= kEatDsc, "EAT DSC " + fmt("%.4f", r.report.eat.dsc));
    c.note("pericardium DSC " + fmt("%.4f", r.report.pericardium.dsc) + ", EAT DSC " + fmt("%.4f", r.report.eat.dsc) +
           (r.report.pearson ? ", r " + fmt("%.3f", r.report.pearson->r) : "") + ", 32x32 input, " +
           fmt("%.0f s", secs));
    return c.done();
}

Outcome eat_derivation() {
    Check c;
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 500; ++trial) {
        const Mask a = to_mask(oracle::random_mask(rng, 144, 0.5), 12);
        const Mask b = to_mask(oracle::random_mask(rng, 144, 0.3), 12);
        const Mask e = derive_eat(a, b);
        bool subset = true;
        for (std::size_t i = 0; i < e.size(); ++i) subset &= e.px[i] <= a.px[i] && e.px[i] <= b.px[i];
        c.expect(subset, "random case " + std::to_string(trial) + " leaves an input");
    }
    PhantomConfig pc;
    pc.image_size = 128;
    const PreprocessConfig pre;
    int slices = 0;
    for (const auto& p : generate_phantom_studies(pc))
        for (std::size_t s = 0; s < p.data.masks.size(); ++s, ++slices) {
            const Mask fat = adipose_mask(p.data.study.slices[s].pixels, pre);
            const Mask e = derive_eat(p.data.masks[s].pericardium, fat);
            bool subset = true;
            for (std::size_t i = 0; i < e.size(); ++i)
                subset &= e.px[i] <= fat.px[i] && e.px[i] <= p.data.masks[s].pericardium.px[i];
            c.expect(subset, "phantom EAT leaves an input");
            c.expect(e == p.data.masks[s].eat, "perfect pericardium does not recover the planted EAT");
        }
    c.note("500 random cases, " + std::to_string(slices) + " phantom slices");
    return c.done();
}

Outcome reproducibility() {
    Check c;
    testutil::TempDir dir("acc_repro");
    const RunConfig cfg = phantom_run(64, 4, 32, 3);
    const DatasetManifest m = generate_phantom(cfg.phantom, dir / "data");
    const int threads = omp_get_max_threads();
    omp_set_num_threads(1);
    const std::string a = metrics_json(run_pipeline(cfg, m)).dump();
    omp_set_num_threads(std::max(threads, 4));
    const std::string b = metrics_json(run_pipeline(cfg, m)).dump();
    omp_set_num_threads(threads);
    c.expect(a == b, "metrics differ between runs");
    c.note(std::to_string(a.size()) + " identical bytes, 1 vs " + std::to_string(std::max(threads, 4)) + " threads");
    return c.done();
}

Outcome clinical_dataset() { return {Outcome::skip, "clinical dataset not available"}; }

Outcome bias_correction() {
    Check c;
    // Self-check: a bias applied to the data it came from zeroes the mean difference.
    std::mt19937_64 rng(5);
    std::normal_distribution<double> noise(8.0, 5.0);
    std::vector<SliceCount> counts;
    for (int i = 0; i < 40; ++i) {
        const std::int64_t truth = 200 + 7 * i;
        counts.push_back({"p" + std::to_string(i % 4), i, truth + std::llround(noise(rng)), truth, {}, false});
    }
    const BiasCorrection self = fit_bias(counts, "all");
    double mean = 0;
    for (const auto& s : counts) mean += adjusted_count(double(s.predicted), self, {}, false).value - s.ground_truth;
    mean /= counts.size();
    c.expect(std::abs(mean) <= kZeroBias, "self-corrected mean difference " + fmt("%.3g", mean));

    // Cross-fold: every predicted EAT slice gets 10 to 12 extra fat pixels from outside the pericardium.
    PhantomConfig pc;
    pc.image_size = 128;
    const PreprocessConfig pre;
    std::vector<FoldEvaluation> folds;
    int fold = 0;
    for (const auto& p : generate_phantom_studies(pc)) {
        std::vector<SliceEvalInput> in;
        for (std::size_t s = 0; s < p.data.masks.size(); ++s) {
            const Mask fat = adipose_mask(p.data.study.slices[s].pixels, pre);
            Mask pred = p.data.masks[s].pericardium;
            int extra = 10 + static_cast<int>(s % 3);
            for (std::size_t i = 0; i < fat.size() && extra > 0; ++i)
                if (fat.px[i] && !pred.px[i]) {
                    pred.px[i] = 1;
                    --extra;
                }
            in.push_back({p.data.study.patient_id, p.data.study.slices[s].slice_index, pred,
                          p.data.masks[s].pericardium, fat, p.data.masks[s].eat});
        }
        FoldEvaluation f = evaluate_fold(fold / 2, in);
        if (fold % 2 == 0) {
            folds.push_back(std::move(f));
        } else {
            auto& dst = folds.back();
            dst.pericardium.insert(dst.pericardium.end(), f.pericardium.begin(), f.pericardium.end());
            dst.eat.insert(dst.eat.end(), f.eat.begin(), f.eat.end());
            dst.counts.insert(dst.counts.end(), f.counts.begin(), f.counts.end());
        }
        ++fold;
    }
    const EvalReport report = build_report(std::move(folds));
    c.expect(report.bland_altman && report.bland_altman_corrected, "no Bland-Altman results");
    if (report.bland_altman && report.bland_altman_corrected) {
        const double before = report.bland_altman->mean_diff, after = report.bland_altman_corrected->mean_diff;
        c.expect(std::abs(after) <= std::abs(before), "correction increased |mean difference|");
        for (const auto& f : report.folds) {
            c.expect(f.correction.has_value(), "fold without a correction");
            double raw = 0, corrected = 0;
            for (const auto& s : f.counts) {
                raw += double(s.predicted - s.ground_truth);
                corrected += s.corrected.value_or(double(s.predicted)) - double(s.ground_truth);
            }
            c.expect(std::abs(corrected) <= std::abs(raw), "fold " + std::to_string(f.fold) + " got worse");
        }
        c.note("self-check mean " + fmt("%.2g", mean) + ", cross-fold mean diff " + fmt("%.3f", before) + " -> " +
               fmt("%.3f", after));
    }
    return c.done();
}

}  // namespace

int main() {
    const std::vector<std::pair<int, std::function<Outcome()>>> criteria{
        {1, dice_loss_matches_oracle}, {2, metrics_match_oracles}, {3, depth_channel},
        {4, augmentation},             {5, parameter_count},       {6, phantom_segmentation},
        {7, eat_derivation},           {8, reproducibility},       {9, clinical_dataset},
        {10, bias_correction},
    };
    int failed = 0;
    for (const auto& [id, run] : criteria) {
        Outcome o;
        try {
            o = run();
        } catch (const std::exception& e) {
            o = {Outcome::fail, std::string("exception: ") + e.what()};
        }
        const char* tag = o.status == Outcome::pass ? "PASS" : o.status == Outcome::fail ? "FAIL" : "SKIP";
        failed += o.status == Outcome::fail;
        std::printf("criterion %2d %s  %s\n", id, tag, o.detail.c_str());
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
