// Command-line entry point: phantom | preprocess | train | predict | quantify | evaluate | report.
//
// Every subcommand builds its RunConfig from built-in defaults, then --config,
// then --set key.path=value overrides, then the subcommand's own flags, and
// archives the result as effective_config.json next to its outputs.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include "CLI11.hpp"

#include "eatseg/errors.hpp"
#include "eatseg/evaluate.hpp"
#include "eatseg/image_io.hpp"
#include "eatseg/phantom.hpp"
#include "eatseg/pipeline.hpp"
#include "eatseg/quantify.hpp"
#include "eatseg/run_config.hpp"
#include "eatseg/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace eatseg;

namespace {

constexpr int kExitUsage = 2, kExitValidation = 3, kExitRuntime = 4;

int exit_code(ErrorKind k) {
    switch (k) {
        case ErrorKind::io:
        case ErrorKind::divergence:
        case ErrorKind::format:
            return kExitRuntime;
        default:
            return kExitValidation;
    }
}

struct Common {
    std::string config;
    std::vector<std::string> sets;
    std::string out;
};

void add_common(CLI::App* cmd, Common& c, const char* out_help) {
    cmd->add_option("--config", c.config, "Run config JSON")->check(CLI::ExistingFile);
    cmd->add_option("--set", c.sets, "Override a config value, e.g. --set train.epochs=50 (repeatable)");
    cmd->add_option("--out", c.out, out_help);
}

RunConfig build_config(const Common& c, std::vector<std::string> extra) {
    std::vector<std::string> all = c.sets;
    all.insert(all.end(), extra.begin(), extra.end());
    if (!c.out.empty()) all.push_back("paths.output_dir=" + json(c.out).dump());
    return load_run_config(c.config.empty() ? std::nullopt : std::optional<fs::path>(c.config), all);
}

void write_json(const fs::path& p, const json& j) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream os(p, std::ios::trunc);
    require(static_cast<bool>(os), ErrorKind::io, "cannot write " + p.string());
    os << j.dump(2) << '\n';
}

json read_json(const fs::path& p) {
    std::ifstream is(p);
    require(static_cast<bool>(is), ErrorKind::missing_asset, p.string() + " not found");
    try {
        return json::parse(is);
    } catch (const json::parse_error& e) {
        fail(ErrorKind::parse, p.string() + ": " + e.what());
    }
}

fs::path manifest_path(const fs::path& p) { return fs::is_directory(p) ? p / "manifest.json" : p; }

DatasetManifest require_manifest(const RunConfig& cfg) {
    require(!cfg.paths.manifest.empty(), ErrorKind::invalid_argument,
            "no dataset manifest given (use --manifest or paths.manifest)");
    return load_manifest(manifest_path(cfg.paths.manifest));
}

std::string slice_stem(const std::string& pid, int slice) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s/slice_%03d", pid.c_str(), slice);
    return buf;
}

void print_epoch(int fold, const EpochLog& e) {
    std::printf("fold %d epoch %4d  train %.5f  val %.5f  %.2fs\n", fold, e.epoch, e.train_loss, e.val_loss, e.seconds);
    std::fflush(stdout);
}

// Predictions as written by `predict`: binary masks plus the fold of each patient.
struct Predictions {
    std::map<std::pair<std::string, int>, Mask> masks;
    std::map<std::string, int> fold_of;
    int fold_count = 0;
};

Predictions load_predictions(const fs::path& dir) {
    const json index = read_json(dir / "predictions.json");
    Predictions p;
    try {
        p.fold_count = index.at("fold_count").get<int>();
        for (const auto& e : index.at("slices")) {
            const std::string pid = e.at("patient_id").get<std::string>();
            const int slice = e.at("slice_index").get<int>();
            const auto raw = io::read_png_gray(dir / e.at("mask").get<std::string>());
            Mask m(raw.rows, raw.cols);
            for (std::size_t i = 0; i < m.size(); ++i) m.px[i] = raw.px[i] ? 1 : 0;
            p.masks[{pid, slice}] = std::move(m);
            p.fold_of[pid] = e.at("fold").get<int>();
        }
    } catch (const json::exception& e) {
        fail(ErrorKind::parse, (dir / "predictions.json").string() + ": " + e.what());
    }
    return p;
}

std::vector<FoldEvaluation> evaluate_predictions(const RunConfig& cfg, const fs::path& pred_dir, const fs::path& truth) {
    const Predictions preds = load_predictions(pred_dir);
    const PreparedDataset data = prepare_dataset(load_manifest(manifest_path(truth)), cfg.preprocess);
    std::vector<std::vector<SliceEvalInput>> per_fold(preds.fold_count);
    for (const auto& s : data.samples) {
        auto it = preds.masks.find({s.patient_id, s.slice_index});
        if (it == preds.masks.end()) continue;
        require(it->second.same_shape(s.target), ErrorKind::invalid_argument,
                "prediction for " + s.patient_id + " slice " + std::to_string(s.slice_index) +
                    " does not match preprocess.target_size");
        per_fold[preds.fold_of.at(s.patient_id)].push_back(
            {s.patient_id, s.slice_index, it->second, s.target, s.adipose, s.eat});
    }
    std::vector<FoldEvaluation> folds;
    std::size_t matched = 0;
    for (int f = 0; f < preds.fold_count; ++f) {
        matched += per_fold[f].size();
        folds.push_back(evaluate_fold(f, per_fold[f], cfg.quantify.aggregation));
    }
    require(matched == preds.masks.size(), ErrorKind::not_found,
            std::to_string(preds.masks.size() - matched) + " predicted slices have no reference in " + truth.string());
    return folds;
}

void write_quantification(const EvalReport& report, const DatasetManifest* manifest, const fs::path& out) {
    std::vector<SliceCount> all;
    for (const auto& f : report.folds) all.insert(all.end(), f.counts.begin(), f.counts.end());
    std::optional<double> area, thickness;
    if (manifest && manifest->pixel_spacing_mm) area = *manifest->pixel_spacing_mm * *manifest->pixel_spacing_mm;
    if (manifest) thickness = manifest->slice_thickness_mm;
    const EatQuantification q = aggregate_counts(all, area, thickness);
    write_quantification_csv(q, out / "quantification.csv");
    json j = to_json(q);
    json corrections = json::array();
    for (const auto& f : report.folds)
        if (f.correction) corrections.push_back({{"fold", f.fold}, {"correction", to_json(*f.correction)}});
    j["corrections"] = corrections;
    write_json(out / "quantification.json", j);
}

void write_evaluation(const EvalReport& report, const fs::path& out) {
    write_json(out / "eval_report.json", to_json(report));
    write_metrics_csv(report, out / "slice_metrics.csv");
    emit_plots(report, out);
}

// ---- subcommands ----

int cmd_phantom(const Common& c, std::optional<int> patients, std::optional<int> slices, std::optional<int> size,
                std::optional<std::uint64_t> seed, std::optional<double> noise) {
    std::vector<std::string> extra;
    if (patients) extra.push_back("phantom.patients=" + std::to_string(*patients));
    if (slices) extra.push_back("phantom.slices_per_patient=" + std::to_string(*slices));
    if (size) extra.push_back("phantom.image_size=" + std::to_string(*size));
    if (seed) extra.push_back("phantom.seed=" + std::to_string(*seed));
    if (noise) extra.push_back("phantom.noise_sd=" + json(*noise).dump());
    const RunConfig cfg = build_config(c, extra);
    const fs::path out = resolve_output_dir(cfg);
    const DatasetManifest m = generate_phantom(cfg.phantom, out);
    archive_config(cfg, out);
    std::printf("wrote %zu slices of %d patients to %s\n", m.entries.size(), cfg.phantom.patients,
                (out / "manifest.json").c_str());
    return 0;
}

int cmd_preprocess(const Common& c, const std::string& manifest) {
    std::vector<std::string> extra;
    if (!manifest.empty()) extra.push_back("paths.manifest=" + json(manifest).dump());
    const RunConfig cfg = build_config(c, extra);
    const fs::path out = resolve_output_dir(cfg);
    const PreparedDataset data = prepare_dataset(require_manifest(cfg), cfg.preprocess);
    const FoldSplit split = split_samples(data.samples, cfg.train.fold_count, cfg.seed);
    write_json(out / "filter_report.json", to_json(data.filter));
    write_json(out / "folds.json", to_json(split));
    std::ofstream os(out / "samples.csv", std::ios::trunc);
    require(static_cast<bool>(os), ErrorKind::io, "cannot write samples.csv");
    os << "patient_id,slice_index,normalized_depth,pericardium_pixels,eat_pixels,fold\n";
    for (const auto& s : data.samples)
        os << s.patient_id << ',' << s.slice_index << ',' << s.normalized_depth << ',' << count_eat_pixels(s.target)
           << ',' << count_eat_pixels(s.eat) << ',' << split.assignments.at(s.patient_id) << '\n';
    archive_config(cfg, out);
    std::printf("%zu samples retained, %zu slices removed\n", data.samples.size(), data.filter.removed.size());
    return 0;
}

int cmd_train(const Common& c, const std::string& manifest, std::optional<int> fold) {
    std::vector<std::string> extra;
    if (!manifest.empty()) extra.push_back("paths.manifest=" + json(manifest).dump());
    const RunConfig cfg = build_config(c, extra);
    const fs::path out = resolve_output_dir(cfg);
    const PreparedDataset data = prepare_dataset(require_manifest(cfg), cfg.preprocess);
    const FoldSplit split = split_samples(data.samples, cfg.train.fold_count, cfg.seed);
    require(!fold || (*fold >= 0 && *fold < split.fold_count), ErrorKind::invalid_argument,
            "--fold must lie in [0, " + std::to_string(split.fold_count) + ")");
    archive_config(cfg, out);
    write_json(out / "folds.json", to_json(split));
    for (int f = 0; f < split.fold_count; ++f) {
        if (fold && f != *fold) continue;
        TrainOptions opt;
        opt.fold = f;
        opt.out_dir = out / ("fold" + std::to_string(f));
        opt.on_epoch = [f](const EpochLog& e) { print_epoch(f, e); };
        const auto res = train_fold(select_patients(data.samples, split.patients_not_in(f)),
                                    select_patients(data.samples, split.patients_in(f)), cfg.model, cfg.train,
                                    cfg.augment, opt);
        std::printf("fold %d: best epoch %d, val loss %.5f -> %s\n", f, res.record.best_epoch,
                    res.record.best_val_loss, res.record.checkpoint.c_str());
    }
    return 0;
}

int cmd_predict(const Common& c, const std::string& manifest, const std::string& run_dir) {
    std::vector<std::string> extra;
    if (!manifest.empty()) extra.push_back("paths.manifest=" + json(manifest).dump());
    const RunConfig cfg = build_config(c, extra);
    const fs::path out = resolve_output_dir(cfg);
    const fs::path run = run_dir.empty() ? out : fs::path(run_dir);
    const FoldSplit split = fold_split_from_json(read_json(run / "folds.json"));
    const PreparedDataset data = prepare_dataset(require_manifest(cfg), cfg.preprocess);
    json slices = json::array();
    for (int f = 0; f < split.fold_count; ++f) {
        const fs::path ckpt = run / ("fold" + std::to_string(f)) / "best.ckpt";
        require(fs::exists(ckpt), ErrorKind::missing_asset, "checkpoint " + ckpt.string() + " not found");
        const LoadedCheckpoint lc = load_checkpoint(ckpt, cfg.model);
        const auto val = select_patients(data.samples, split.patients_in(f));
        const auto prob = predict(lc.model, val, cfg.train.batch_size);
        for (std::size_t i = 0; i < val.size(); ++i) {
            Mask m = binarize_prediction(prob[i], cfg.quantify.threshold);
            for (auto& v : m.px) v = v ? 255 : 0;
            const std::string rel = slice_stem(val[i].patient_id, val[i].slice_index) + "_pericardium.png";
            io::write_png_gray8(out / rel, m);
            slices.push_back({{"patient_id", val[i].patient_id},
                              {"slice_index", val[i].slice_index},
                              {"fold", f},
                              {"mask", rel}});
        }
        std::printf("fold %d: %zu slices predicted with epoch %d weights\n", f, val.size(), lc.info.epoch);
    }
    write_json(out / "predictions.json",
               {{"fold_count", split.fold_count}, {"threshold", cfg.quantify.threshold}, {"slices", slices}});
    archive_config(cfg, out);
    return 0;
}

int cmd_evaluate(const Common& c, const std::string& pred, const std::string& truth, bool quantify_only) {
    const RunConfig cfg = build_config(c, {});
    const fs::path out = resolve_output_dir(cfg);
    EvalReport report = build_report(evaluate_predictions(cfg, pred, truth), cfg.quantify.aggregation);
    const DatasetManifest m = load_manifest(manifest_path(truth));
    if (quantify_only) {
        write_quantification(report, &m, out);
    } else {
        write_evaluation(report, out);
    }
    archive_config(cfg, out);
    std::printf("pericardium DSC %.4f  EAT DSC %.4f  EAT Jaccard %.4f\n", report.pericardium.dsc, report.eat.dsc,
                report.eat.jaccard);
    if (report.pearson) std::printf("Pearson r %.4f (p = %.3g)\n", report.pearson->r, report.pearson->p);
    if (report.bland_altman)
        std::printf("Bland-Altman bias %.3f, LoA [%.3f, %.3f]\n", report.bland_altman->mean_diff,
                    report.bland_altman->loa_low, report.bland_altman->loa_high);
    return 0;
}

int cmd_report(const Common& c, const std::string& manifest) {
    std::vector<std::string> extra;
    if (!manifest.empty()) extra.push_back("paths.manifest=" + json(manifest).dump());
    const RunConfig cfg = build_config(c, extra);
    const fs::path out = resolve_output_dir(cfg);
    DatasetManifest m;
    if (cfg.paths.manifest.empty()) {
        std::printf("no manifest given; generating the configured phantom under %s\n", (out / "phantom").c_str());
        m = generate_phantom(cfg.phantom, out / "phantom");
    } else {
        m = require_manifest(cfg);
    }
    archive_config(cfg, out);
    const PipelineResult r = run_pipeline(cfg, m, out / "training", print_epoch);
    write_json(out / "metrics.json", metrics_json(r));
    write_evaluation(r.report, out);
    write_quantification(r.report, &m, out);
    std::printf("pericardium DSC %.4f  EAT DSC %.4f\n", r.report.pericardium.dsc, r.report.eat.dsc);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Epicardial adipose tissue segmentation and quantification"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "eatseg 1.0");

    Common common;
    std::string manifest, pred, truth, run_dir;
    std::optional<int> patients, slices, image_size, fold;
    std::optional<std::uint64_t> seed;
    std::optional<double> noise;

    auto* phantom = app.add_subcommand("phantom", "Generate a synthetic dataset");
    add_common(phantom, common, "Dataset directory");
    phantom->add_option("--patients", patients, "Number of patients");
    phantom->add_option("--slices", slices, "Slices per patient");
    phantom->add_option("--image-size", image_size, "Slice width and height in pixels");
    phantom->add_option("--seed", seed, "Generator seed");
    phantom->add_option("--noise-sd", noise, "Gaussian HU noise");

    auto* preprocess = app.add_subcommand("preprocess", "Filter slices, build samples and the fold split");
    add_common(preprocess, common, "Output directory");
    preprocess->add_option("--manifest", manifest, "Dataset manifest or its directory");

    auto* train = app.add_subcommand("train", "Train one fold (or all) and write checkpoints");
    add_common(train, common, "Run directory");
    train->add_option("--manifest", manifest, "Dataset manifest or its directory");
    train->add_option("--fold", fold, "Fold to train; all folds when omitted");

    auto* pred_cmd = app.add_subcommand("predict", "Predict held-out folds with their best checkpoints");
    add_common(pred_cmd, common, "Prediction directory");
    pred_cmd->add_option("--manifest", manifest, "Dataset manifest or its directory");
    pred_cmd->add_option("--run", run_dir, "Training run directory (defaults to --out)");

    auto* quant = app.add_subcommand("quantify", "EAT pixel counts with cross-fold bias correction");
    add_common(quant, common, "Output directory");
    quant->add_option("--pred", pred, "Prediction directory")->required();
    quant->add_option("--truth", truth, "Reference dataset manifest or its directory")->required();

    auto* eval = app.add_subcommand("evaluate", "Overlap metrics, Pearson, Bland-Altman and plots");
    add_common(eval, common, "Report directory");
    eval->add_option("--pred", pred, "Prediction directory")->required();
    eval->add_option("--truth", truth, "Reference dataset manifest or its directory")->required();

    auto* report = app.add_subcommand("report", "Full chain: cross-validation, evaluation and quantification");
    add_common(report, common, "Run directory");
    report->add_option("--manifest", manifest, "Dataset manifest; a phantom is generated when omitted");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitUsage;
    }

    try {
        if (*phantom) return cmd_phantom(common, patients, slices, image_size, seed, noise);
        if (*preprocess) return cmd_preprocess(common, manifest);
        if (*train) return cmd_train(common, manifest, fold);
        if (*pred_cmd) return cmd_predict(common, manifest, run_dir);
        if (*quant) return cmd_evaluate(common, pred, truth, true);
        if (*eval) return cmd_evaluate(common, pred, truth, false);
        if (*report) return cmd_report(common, manifest);
    } catch (const Error& e) {
        std::fprintf(stderr, "eatseg: error [%s]: %s\n", to_string(e.kind()), e.what());
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        std::fprintf(stderr, "eatseg: error [runtime]: %s\n", e.what());
        return kExitRuntime;
    }
    return kExitUsage;
}
