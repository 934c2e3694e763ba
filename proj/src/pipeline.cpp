#include "eatseg/pipeline.hpp"

#include <set>

#include "eatseg/quantify.hpp"

namespace eatseg {

PreparedDataset prepare_dataset(const DatasetManifest& manifest, const PreprocessConfig& cfg) {
    validate(cfg);
    std::vector<LoadedStudy> studies;
    for (const auto& id : manifest.patient_ids()) studies.push_back(load_study(manifest, id, cfg.band()));
    PreparedDataset out;
    out.manifest = manifest;
    if (cfg.drop_empty_label_slices) {
        FilteredDataset f = filter_empty_slices(std::move(studies));
        studies = std::move(f.studies);
        out.filter = std::move(f.report);
    } else {
        for (const auto& s : studies) out.filter.retained += s.study.slices.size();
    }
    out.samples = build_samples(studies, cfg);
    return out;
}

FoldSplit split_samples(const std::vector<TrainSample>& samples, int fold_count, std::uint64_t seed) {
    std::set<std::string> ids;
    for (const auto& s : samples) ids.insert(s.patient_id);
    return split_folds({ids.begin(), ids.end()}, fold_count, seed);
}

nlohmann::json to_json(const FoldSplit& split) {
    nlohmann::json folds = nlohmann::json::array();
    for (int f = 0; f < split.fold_count; ++f) folds.push_back(split.patients_in(f));
    return {{"fold_count", split.fold_count}, {"assignments", split.assignments}, {"folds", folds}};
}

FoldSplit fold_split_from_json(const nlohmann::json& j) {
    FoldSplit s;
    try {
        s.fold_count = j.at("fold_count").get<int>();
        s.assignments = j.at("assignments").get<std::map<std::string, int>>();
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::parse, std::string("fold split: ") + e.what());
    }
    for (const auto& [id, f] : s.assignments)
        require(f >= 0 && f < s.fold_count, ErrorKind::parse, "fold split: patient " + id + " has fold out of range");
    return s;
}

std::vector<SliceEvalInput> make_eval_inputs(const std::vector<TrainSample>& samples,
                                             const std::vector<ImagePlane>& prob, double threshold) {
    require(samples.size() == prob.size(), ErrorKind::invalid_argument,
            "make_eval_inputs: sample and prediction counts differ");
    std::vector<SliceEvalInput> out;
    out.reserve(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const TrainSample& s = samples[i];
        out.push_back({s.patient_id, s.slice_index, binarize_prediction(prob[i], threshold), s.target, s.adipose, s.eat});
    }
    return out;
}

PipelineResult run_pipeline(const RunConfig& cfg, const DatasetManifest& manifest,
                            const std::optional<std::filesystem::path>& out_dir,
                            const std::function<void(int, const EpochLog&)>& on_epoch) {
    validate(cfg);
    PreparedDataset data = prepare_dataset(manifest, cfg.preprocess);
    PipelineResult r;
    r.filter = data.filter;
    r.split = split_samples(data.samples, cfg.train.fold_count, cfg.seed);
    TrainConfig train = cfg.train;
    train.seed = cfg.seed;
    CrossValidationResult cv = cross_validate(data.samples, r.split, cfg.model, train, cfg.augment, out_dir, on_epoch);

    std::vector<FoldEvaluation> folds;
    for (std::size_t f = 0; f < cv.folds.size(); ++f) {
        const auto val = select_patients(data.samples, r.split.patients_in(static_cast<int>(f)));
        const auto prob = predict(cv.folds[f].best_model, val, cfg.train.batch_size);
        folds.push_back(evaluate_fold(static_cast<int>(f), make_eval_inputs(val, prob, cfg.quantify.threshold),
                                      cfg.quantify.aggregation));
        r.records.push_back(cv.folds[f].record);
    }
    r.report = build_report(std::move(folds), cfg.quantify.aggregation);
    return r;
}

nlohmann::json metrics_json(const PipelineResult& r) {
    nlohmann::json records = nlohmann::json::array();
    for (const auto& rec : r.records) records.push_back(to_json(rec, false));
    return {{"evaluation", to_json(r.report)},
            {"split", to_json(r.split)},
            {"filter", to_json(r.filter)},
            {"training", records}};
}

}  // namespace eatseg
