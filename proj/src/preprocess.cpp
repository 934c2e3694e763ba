#include "eatseg/preprocess.hpp"

#include <algorithm>
#include <cmath>

#include "eatseg/errors.hpp"

namespace eatseg {

void to_json(nlohmann::json& j, const PreprocessConfig& c) {
    j = nlohmann::json{{"adipose_hu_low", c.adipose_hu_low},
                       {"adipose_hu_high", c.adipose_hu_high},
                       {"target_size", c.target_size},
                       {"global_mean", c.global_mean},
                       {"drop_empty_label_slices", c.drop_empty_label_slices},
                       {"threshold_mode", c.mode == ThresholdMode::binary ? "binary" : "intensity"}};
}

void from_json(const nlohmann::json& j, PreprocessConfig& c) {
    const PreprocessConfig d;
    c.adipose_hu_low = j.value("adipose_hu_low", d.adipose_hu_low);
    c.adipose_hu_high = j.value("adipose_hu_high", d.adipose_hu_high);
    c.target_size = j.value("target_size", d.target_size);
    c.global_mean = j.value("global_mean", d.global_mean);
    c.drop_empty_label_slices = j.value("drop_empty_label_slices", d.drop_empty_label_slices);
    const std::string mode = j.value("threshold_mode", std::string("binary"));
    require(mode == "binary" || mode == "intensity", ErrorKind::parse,
            "preprocess.threshold_mode: expected \"binary\" or \"intensity\"");
    c.mode = mode == "binary" ? ThresholdMode::binary : ThresholdMode::intensity;
}

void validate(const PreprocessConfig& cfg) {
    require(cfg.adipose_hu_low < cfg.adipose_hu_high, ErrorKind::configuration,
            "preprocess: adipose_hu_low must be below adipose_hu_high");
    require(cfg.target_size > 0, ErrorKind::configuration, "preprocess: target_size must be positive");
    require(std::isfinite(cfg.global_mean), ErrorKind::configuration, "preprocess: global_mean must be finite");
}

ImagePlane threshold_adipose(const HuPlane& hu, const PreprocessConfig& cfg) {
    ImagePlane out(hu.rows, hu.cols);
    const double span = cfg.adipose_hu_high - cfg.adipose_hu_low;
    for (std::size_t i = 0; i < hu.size(); ++i) {
        const double v = hu.px[i];
        const bool inside = v >= cfg.adipose_hu_low && v <= cfg.adipose_hu_high;
        if (!inside) continue;
        out.px[i] = cfg.mode == ThresholdMode::binary ? 1.f : static_cast<float>((v - cfg.adipose_hu_low) / span);
    }
    return out;
}

ImagePlane threshold_adipose(const CtSlice& slice, const PreprocessConfig& cfg) {
    return threshold_adipose(slice.pixels, cfg);
}

Mask adipose_mask(const HuPlane& hu, const PreprocessConfig& cfg) {
    Mask out(hu.rows, hu.cols);
    for (std::size_t i = 0; i < hu.size(); ++i)
        out.px[i] = (hu.px[i] >= cfg.adipose_hu_low && hu.px[i] <= cfg.adipose_hu_high) ? 1 : 0;
    return out;
}

ImagePlane normalize_and_center(const ImagePlane& image, const PreprocessConfig& cfg) {
    ImagePlane out = image;
    const float mean = static_cast<float>(cfg.global_mean);
    for (float& v : out.px) v -= mean;
    return out;
}

namespace {

void require_square(int rows, int cols, int target) {
    require(rows == cols, ErrorKind::invalid_argument,
            "resize: input must be square, got " + std::to_string(rows) + "x" + std::to_string(cols));
    require(rows > 0 && target > 0, ErrorKind::invalid_argument, "resize: sizes must be positive");
}

ImagePlane bilinear(const ImagePlane& src, int target) {
    ImagePlane out(target, target);
    const double scale = static_cast<double>(src.rows) / target;
    auto coord = [&](int i, int n, int& i0, int& i1, float& f) {
        double s = (i + 0.5) * scale - 0.5;
        s = std::clamp(s, 0.0, static_cast<double>(n - 1));
        i0 = static_cast<int>(std::floor(s));
        i1 = std::min(i0 + 1, n - 1);
        f = static_cast<float>(s - i0);
    };
    for (int r = 0; r < target; ++r) {
        int r0, r1;
        float fr;
        coord(r, src.rows, r0, r1, fr);
        for (int c = 0; c < target; ++c) {
            int c0, c1;
            float fc;
            coord(c, src.cols, c0, c1, fc);
            const float top = src.at(r0, c0) * (1.f - fc) + src.at(r0, c1) * fc;
            const float bot = src.at(r1, c0) * (1.f - fc) + src.at(r1, c1) * fc;
            out.at(r, c) = top * (1.f - fr) + bot * fr;
        }
    }
    return out;
}

template <typename T>
Plane<T> nearest(const Plane<T>& src, int target) {
    Plane<T> out(target, target);
    const double scale = static_cast<double>(src.rows) / target;
    for (int r = 0; r < target; ++r) {
        const int sr = std::min(static_cast<int>((r + 0.5) * scale), src.rows - 1);
        for (int c = 0; c < target; ++c) {
            const int sc = std::min(static_cast<int>((c + 0.5) * scale), src.cols - 1);
            out.at(r, c) = src.at(sr, sc);
        }
    }
    return out;
}

}  // namespace

ImagePlane resize_to_target(const ImagePlane& image, int target_size, bool is_mask) {
    require_square(image.rows, image.cols, target_size);
    if (!is_mask) return image.rows == target_size ? image : bilinear(image, target_size);
    ImagePlane out = nearest(image, target_size);
    for (float& v : out.px) v = v >= 0.5f ? 1.f : 0.f;
    return out;
}

Mask resize_mask(const Mask& mask, int target_size) {
    require_square(mask.rows, mask.cols, target_size);
    Mask out = nearest(mask, target_size);
    for (auto& v : out.px) v = v ? 1 : 0;
    return out;
}

double normalized_depth(int slice_index, int slice_count) {
    require(slice_count >= 1, ErrorKind::invalid_argument, "normalized_depth: slice_count must be >= 1");
    require(slice_index >= 0 && slice_index < slice_count, ErrorKind::invalid_argument,
            "normalized_depth: index " + std::to_string(slice_index) + " outside [0, " +
                std::to_string(slice_count) + ")");
    if (slice_count == 1) return 0.5;
    return static_cast<double>(slice_index) / static_cast<double>(slice_count - 1);
}

TrainSample build_sample(const CtSlice& slice, const MaskPair& mask, const CtStudy& study,
                         const PreprocessConfig& cfg) {
    validate(cfg);
    auto it = std::find_if(study.slices.begin(), study.slices.end(), [&](const CtSlice& s) {
        return s.slice_index == slice.slice_index;
    });
    require(slice.patient_id == study.patient_id && it != study.slices.end(), ErrorKind::invalid_argument,
            "build_sample: slice " + std::to_string(slice.slice_index) + " of patient " + slice.patient_id +
                " is not part of study " + study.patient_id);
    require(mask.pericardium.same_shape(slice.pixels) && mask.eat.same_shape(slice.pixels),
            ErrorKind::invalid_argument, "build_sample: mask dimensions do not match the slice");
    const int rank = static_cast<int>(it - study.slices.begin());
    const int size = cfg.target_size;

    TrainSample s;
    s.patient_id = slice.patient_id;
    s.slice_index = slice.slice_index;
    s.normalized_depth = normalized_depth(rank, static_cast<int>(study.slices.size()));

    const ImagePlane ct = normalize_and_center(resize_to_target(threshold_adipose(slice, cfg), size, false), cfg);
    s.input = Tensor(1, 2, size, size);
    std::copy(ct.px.begin(), ct.px.end(), s.input.plane(0, 0));
    std::fill_n(s.input.plane(0, 1), s.input.plane_size(), static_cast<float>(s.normalized_depth));

    s.target = resize_mask(mask.pericardium, size);
    s.adipose = resize_mask(adipose_mask(slice.pixels, cfg), size);
    s.eat = resize_mask(mask.eat, size);
    return s;
}

FilteredDataset filter_empty_slices(std::vector<LoadedStudy> studies) {
    FilteredDataset out;
    for (auto& ls : studies) {
        LoadedStudy kept;
        kept.study.patient_id = ls.study.patient_id;
        kept.study.scanner = ls.study.scanner;
        for (std::size_t i = 0; i < ls.study.slices.size(); ++i) {
            const bool empty = std::none_of(ls.masks[i].eat.px.begin(), ls.masks[i].eat.px.end(),
                                            [](std::uint8_t v) { return v != 0; });
            if (empty) {
                out.report.removed.push_back({ls.study.patient_id, ls.study.slices[i].slice_index});
                continue;
            }
            kept.study.slices.push_back(std::move(ls.study.slices[i]));
            kept.masks.push_back(std::move(ls.masks[i]));
        }
        out.report.retained += kept.study.slices.size();
        if (kept.study.slices.empty()) {
            out.report.emptied_patients.push_back(kept.study.patient_id);
            continue;
        }
        out.studies.push_back(std::move(kept));
    }
    return out;
}

std::vector<TrainSample> build_samples(const std::vector<LoadedStudy>& studies, const PreprocessConfig& cfg) {
    validate(cfg);
    std::vector<std::pair<std::size_t, std::size_t>> jobs;
    for (std::size_t s = 0; s < studies.size(); ++s)
        for (std::size_t i = 0; i < studies[s].study.slices.size(); ++i) jobs.emplace_back(s, i);
    std::vector<TrainSample> out(jobs.size());
    const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(jobs.size());
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t k = 0; k < n; ++k) {
        const auto [s, i] = jobs[k];
        const LoadedStudy& ls = studies[s];
        out[k] = build_sample(ls.study.slices[i], ls.masks[i], ls.study, cfg);
    }
    return out;
}

nlohmann::json to_json(const FilterReport& r) {
    nlohmann::json removed = nlohmann::json::array();
    for (const auto& x : r.removed) removed.push_back({{"patient_id", x.patient_id}, {"slice_index", x.slice_index}});
    return {{"removed_count", r.removed.size()},
            {"retained_count", r.retained},
            {"removed", removed},
            {"emptied_patients", r.emptied_patients}};
}

}  // namespace eatseg
