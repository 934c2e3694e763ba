#include "eatseg/quantify.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "eatseg/errors.hpp"

namespace eatseg {

Mask derive_eat(const Mask& pericardium_pred, const Mask& adipose_map) {
    require(pericardium_pred.same_shape(adipose_map), ErrorKind::invalid_argument,
            "derive_eat: pericardium is " + std::to_string(pericardium_pred.rows) + "x" +
                std::to_string(pericardium_pred.cols) + ", adipose map " + std::to_string(adipose_map.rows) + "x" +
                std::to_string(adipose_map.cols));
    Mask out(pericardium_pred.rows, pericardium_pred.cols);
    for (std::size_t i = 0; i < out.size(); ++i) out.px[i] = (pericardium_pred.px[i] && adipose_map.px[i]) ? 1 : 0;
    return out;
}

Mask binarize_prediction(const ImagePlane& prob, double threshold) {
    require(threshold >= 0.0 && threshold <= 1.0, ErrorKind::invalid_argument,
            "binarize_prediction: threshold " + std::to_string(threshold) + " outside [0, 1]");
    Mask out(prob.rows, prob.cols);
    for (std::size_t i = 0; i < out.size(); ++i) out.px[i] = prob.px[i] >= threshold ? 1 : 0;
    return out;
}

std::int64_t count_eat_pixels(const Mask& eat) {
    return std::count_if(eat.px.begin(), eat.px.end(), [](std::uint8_t v) { return v != 0; });
}

std::optional<double> EatQuantification::volume_mm3(double count) const {
    if (!pixel_area_mm2 || !slice_thickness_mm) return std::nullopt;
    return count * *pixel_area_mm2 * *slice_thickness_mm;
}

EatQuantification aggregate_counts(std::vector<SliceCount> slices, std::optional<double> pixel_area_mm2,
                                   std::optional<double> slice_thickness_mm) {
    EatQuantification q;
    q.pixel_area_mm2 = pixel_area_mm2;
    q.slice_thickness_mm = slice_thickness_mm;
    for (const auto& s : slices) {
        require(s.predicted >= 0 && s.ground_truth >= 0, ErrorKind::invalid_argument,
                "aggregate_counts: negative count for patient " + s.patient_id);
        auto& t = q.per_patient[s.patient_id];
        t.predicted += s.predicted;
        t.ground_truth += s.ground_truth;
    }
    q.per_slice = std::move(slices);
    return q;
}

BiasCorrection fit_bias(const std::vector<SliceCount>& counts, const std::string& fitted_on) {
    require(!counts.empty(), ErrorKind::invalid_argument, "fit_bias: no slices to fit on");
    double sum = 0;
    std::set<std::string> ids;
    for (const auto& c : counts) {
        sum += static_cast<double>(c.predicted - c.ground_truth);
        ids.insert(c.patient_id);
    }
    BiasCorrection b;
    b.bias = sum / static_cast<double>(counts.size());
    b.fitted_on = fitted_on;
    b.fitted_patients.assign(ids.begin(), ids.end());
    return b;
}

AdjustedCount adjusted_count(double raw_count, const BiasCorrection& correction,
                             const std::vector<std::string>& evaluated_patients, bool clamp) {
    for (const auto& p : evaluated_patients)
        require(!std::binary_search(correction.fitted_patients.begin(), correction.fitted_patients.end(), p),
                ErrorKind::data_leak,
                "adjusted_count: patient " + p + " was used to fit the correction (" + correction.fitted_on + ")");
    AdjustedCount a{raw_count - correction.bias, false};
    if (clamp && a.value < 0.0) {
        a.value = 0.0;
        a.clamped = true;
    }
    return a;
}

void apply_correction(EatQuantification& q, const BiasCorrection& correction, bool clamp) {
    std::vector<std::string> ids;
    for (const auto& [id, _] : q.per_patient) ids.push_back(id);
    adjusted_count(0.0, correction, ids, clamp);
    for (auto& s : q.per_slice) {
        const AdjustedCount a = adjusted_count(static_cast<double>(s.predicted), correction, {}, clamp);
        s.corrected = a.value;
        s.clamped = a.clamped;
    }
}

nlohmann::json to_json(const BiasCorrection& b) {
    return {{"bias", b.bias}, {"source", b.source}, {"fitted_on", b.fitted_on}, {"fitted_patients", b.fitted_patients}};
}

nlohmann::json to_json(const EatQuantification& q) {
    nlohmann::json patients = nlohmann::json::object();
    for (const auto& [id, t] : q.per_patient) {
        nlohmann::json jp{{"predicted", t.predicted}, {"ground_truth", t.ground_truth}};
        if (auto v = q.volume_mm3(static_cast<double>(t.predicted))) jp["predicted_mm3"] = *v;
        if (auto v = q.volume_mm3(static_cast<double>(t.ground_truth))) jp["ground_truth_mm3"] = *v;
        patients[id] = jp;
    }
    std::int64_t pred = 0, truth = 0, clamped = 0;
    double corrected = 0;
    bool has_corrected = false;
    for (const auto& s : q.per_slice) {
        pred += s.predicted;
        truth += s.ground_truth;
        clamped += s.clamped;
        if (s.corrected) {
            corrected += *s.corrected;
            has_corrected = true;
        }
    }
    nlohmann::json j{{"slice_count", q.per_slice.size()},
                     {"predicted_total", pred},
                     {"ground_truth_total", truth},
                     {"per_patient", patients}};
    if (has_corrected) {
        j["corrected_total"] = corrected;
        j["clamped_slices"] = clamped;
    }
    if (q.pixel_area_mm2) j["pixel_area_mm2"] = *q.pixel_area_mm2;
    if (q.slice_thickness_mm) j["slice_thickness_mm"] = *q.slice_thickness_mm;
    return j;
}

void write_quantification_csv(const EatQuantification& q, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::trunc);
    require(static_cast<bool>(os), ErrorKind::io, "cannot write " + path.string());
    os.precision(10);
    os << "patient_id,slice_index,predicted_count,ground_truth_count,corrected_count\n";
    for (const auto& s : q.per_slice) {
        os << s.patient_id << ',' << s.slice_index << ',' << s.predicted << ',' << s.ground_truth << ',';
        if (s.corrected) os << *s.corrected;
        os << '\n';
    }
    require(static_cast<bool>(os), ErrorKind::io, "short write to " + path.string());
}

}  // namespace eatseg
