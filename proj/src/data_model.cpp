#include "eatseg/data_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <set>

#include "json.hpp"

#include "eatseg/errors.hpp"
#include "eatseg/image_io.hpp"

namespace eatseg {
namespace {

using nlohmann::json;

const json& field(const json& obj, const char* key, const std::string& where) {
    require(obj.is_object(), ErrorKind::parse, where + ": expected an object");
    auto it = obj.find(key);
    require(it != obj.end(), ErrorKind::parse, where + "." + key + ": missing required field");
    return *it;
}

std::string string_field(const json& obj, const char* key, const std::string& where) {
    const json& v = field(obj, key, where);
    require(v.is_string(), ErrorKind::parse, where + "." + key + ": expected a string");
    return v.get<std::string>();
}

double number_field(const json& obj, const char* key, const std::string& where) {
    const json& v = field(obj, key, where);
    require(v.is_number(), ErrorKind::parse, where + "." + key + ": expected a number");
    return v.get<double>();
}

int int_field(const json& obj, const char* key, const std::string& where) {
    const json& v = field(obj, key, where);
    require(v.is_number_integer(), ErrorKind::parse, where + "." + key + ": expected an integer");
    return v.get<int>();
}

template <typename T>
std::optional<T> optional_field(const json& obj, const char* key, const std::string& where) {
    auto it = obj.find(key);
    if (it == obj.end() || it->is_null()) return std::nullopt;
    if constexpr (std::is_same_v<T, int>) {
        require(it->is_number_integer(), ErrorKind::parse, where + "." + key + ": expected an integer");
    } else if constexpr (std::is_same_v<T, double>) {
        require(it->is_number(), ErrorKind::parse, where + "." + key + ": expected a number");
    } else {
        require(it->is_string(), ErrorKind::parse, where + "." + key + ": expected a string");
    }
    return it->get<T>();
}

std::string describe(const ManifestEntry& e, std::size_t i) {
    return "entries[" + std::to_string(i) + "] (patient " + e.patient_id + ", slice " + std::to_string(e.slice_index) +
           ")";
}

bool is_raw(const std::filesystem::path& p) {
    const auto ext = p.extension().string();
    return ext == ".raw" || ext == ".i16" || ext == ".bin";
}

// Raw stored samples, before slope/intercept.
Plane<std::int32_t> read_stored(const ManifestEntry& e, const std::filesystem::path& p) {
    Plane<std::int32_t> out;
    if (is_raw(p)) {
        require(e.rows && e.cols, ErrorKind::parse,
                "raw image " + p.string() + " needs \"rows\" and \"cols\" in its manifest entry");
        const HuPlane raw = io::read_raw_i16(p, *e.rows, *e.cols);
        out = Plane<std::int32_t>(raw.rows, raw.cols);
        std::copy(raw.px.begin(), raw.px.end(), out.px.begin());
    } else {
        const auto png = io::read_png_gray(p);
        out = Plane<std::int32_t>(png.rows, png.cols);
        std::copy(png.px.begin(), png.px.end(), out.px.begin());
    }
    return out;
}

Mask read_mask(const ManifestEntry& e, const std::filesystem::path& p) {
    const auto stored = read_stored(e, p);
    Mask m(stored.rows, stored.cols);
    for (std::size_t i = 0; i < m.size(); ++i) m.px[i] = stored.px[i] > 0 ? 1 : 0;
    return m;
}

}  // namespace

std::vector<std::string> DatasetManifest::patient_ids() const {
    std::set<std::string> ids;
    for (const auto& e : entries) ids.insert(e.patient_id);
    return {ids.begin(), ids.end()};
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream is(path);
    require(static_cast<bool>(is), ErrorKind::missing_asset, "manifest " + path.string() + " not found");
    json doc;
    try {
        doc = json::parse(is);
    } catch (const json::exception& e) {
        fail(ErrorKind::parse, "manifest " + path.string() + ": invalid JSON: " + e.what());
    }

    DatasetManifest m;
    m.root = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
    m.hu_slope = number_field(doc, "hu_slope", "manifest");
    m.hu_intercept = number_field(doc, "hu_intercept", "manifest");
    m.pixel_spacing_mm = optional_field<double>(doc, "pixel_spacing_mm", "manifest");
    m.slice_thickness_mm = optional_field<double>(doc, "slice_thickness_mm", "manifest");
    const auto top_rows = optional_field<int>(doc, "rows", "manifest");
    const auto top_cols = optional_field<int>(doc, "cols", "manifest");
    const json& entries = field(doc, "entries", "manifest");
    require(entries.is_array(), ErrorKind::parse, "manifest.entries: expected an array");
    require(!entries.empty(), ErrorKind::parse, "empty manifest: " + path.string() + " lists no entries");

    std::set<std::pair<std::string, int>> seen;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const std::string where = "manifest.entries[" + std::to_string(i) + "]";
        const json& j = entries[i];
        ManifestEntry e;
        e.patient_id = string_field(j, "patient_id", where);
        require(!e.patient_id.empty(), ErrorKind::parse, where + ".patient_id: must not be empty");
        e.slice_index = int_field(j, "slice_index", where);
        require(e.slice_index >= 0, ErrorKind::parse, where + ".slice_index: must be >= 0");
        e.image = m.root / string_field(j, "image", where);
        e.pericardium_mask = m.root / string_field(j, "pericardium_mask", where);
        if (auto eat = optional_field<std::string>(j, "eat_mask", where)) e.eat_mask = m.root / *eat;
        e.scanner = j.contains("scanner") ? string_field(j, "scanner", where) : std::string();
        e.rows = optional_field<int>(j, "rows", where);
        e.cols = optional_field<int>(j, "cols", where);
        if (!e.rows) e.rows = top_rows;
        if (!e.cols) e.cols = top_cols;
        e.depth_mm = optional_field<double>(j, "depth_mm", where);
        require(seen.emplace(e.patient_id, e.slice_index).second, ErrorKind::parse,
                where + ": duplicate slice_index " + std::to_string(e.slice_index) + " for patient " + e.patient_id);

        auto check = [&](const std::filesystem::path& p, const char* what) {
            require(std::filesystem::exists(p), ErrorKind::missing_asset,
                    "missing asset for " + describe(e, i) + ": " + what + " '" + p.string() + "' not found");
        };
        check(e.image, "image");
        check(e.pericardium_mask, "pericardium_mask");
        if (e.eat_mask) check(*e.eat_mask, "eat_mask");
        m.entries.push_back(std::move(e));
    }
    return m;
}

void save_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
    const auto dir = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
    auto rel = [&](const std::filesystem::path& p) { return std::filesystem::relative(p, dir).generic_string(); };
    json entries = json::array();
    for (const auto& e : m.entries) {
        json j{{"patient_id", e.patient_id},
               {"slice_index", e.slice_index},
               {"image", rel(e.image)},
               {"pericardium_mask", rel(e.pericardium_mask)},
               {"scanner", e.scanner}};
        if (e.eat_mask) j["eat_mask"] = rel(*e.eat_mask);
        if (e.rows) j["rows"] = *e.rows;
        if (e.cols) j["cols"] = *e.cols;
        if (e.depth_mm) j["depth_mm"] = *e.depth_mm;
        entries.push_back(std::move(j));
    }
    json doc{{"hu_slope", m.hu_slope}, {"hu_intercept", m.hu_intercept}, {"entries", entries}};
    if (m.pixel_spacing_mm) doc["pixel_spacing_mm"] = *m.pixel_spacing_mm;
    if (m.slice_thickness_mm) doc["slice_thickness_mm"] = *m.slice_thickness_mm;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::trunc);
    require(static_cast<bool>(os), ErrorKind::io, "cannot write manifest " + path.string());
    os << doc.dump(2) << '\n';
}

LoadedStudy load_study(const DatasetManifest& manifest, const std::string& patient_id, AdiposeBand band) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < manifest.entries.size(); ++i)
        if (manifest.entries[i].patient_id == patient_id) idx.push_back(i);
    require(!idx.empty(), ErrorKind::not_found, "patient '" + patient_id + "' not found in manifest");
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return manifest.entries[a].slice_index < manifest.entries[b].slice_index;
    });

    LoadedStudy out;
    out.study.patient_id = patient_id;
    out.study.scanner = manifest.entries[idx.front()].scanner;
    for (std::size_t i : idx) {
        const ManifestEntry& e = manifest.entries[i];
        const auto stored = read_stored(e, e.image);
        CtSlice s;
        s.patient_id = patient_id;
        s.slice_index = e.slice_index;
        s.depth_mm = e.depth_mm;
        s.pixels = HuPlane(stored.rows, stored.cols);
        for (std::size_t k = 0; k < stored.size(); ++k) {
            const double hu = std::round(stored.px[k] * manifest.hu_slope + manifest.hu_intercept);
            s.pixels.px[k] = static_cast<std::int16_t>(std::clamp<double>(
                hu, std::numeric_limits<std::int16_t>::min(), std::numeric_limits<std::int16_t>::max()));
        }
        if (!out.study.slices.empty()) {
            const auto& first = out.study.slices.front().pixels;
            require(s.pixels.same_shape(first), ErrorKind::format,
                    "patient " + patient_id + " slice " + std::to_string(e.slice_index) + " is " +
                        std::to_string(s.pixels.rows) + "x" + std::to_string(s.pixels.cols) +
                        ", other slices are " + std::to_string(first.rows) + "x" + std::to_string(first.cols));
        }

        MaskPair mp;
        mp.pericardium = read_mask(e, e.pericardium_mask);
        require(mp.pericardium.same_shape(s.pixels), ErrorKind::format,
                "pericardium mask of patient " + patient_id + " slice " + std::to_string(e.slice_index) +
                    " does not match its image size");
        if (e.eat_mask) {
            mp.eat = read_mask(e, *e.eat_mask);
            require(mp.eat.same_shape(s.pixels), ErrorKind::format,
                    "EAT mask of patient " + patient_id + " slice " + std::to_string(e.slice_index) +
                        " does not match its image size");
            // Labels are clipped so that eat is a subset of pericardium.
            for (std::size_t k = 0; k < mp.eat.size(); ++k) mp.eat.px[k] &= mp.pericardium.px[k];
        } else {
            mp.eat = Mask(s.pixels.rows, s.pixels.cols);
            for (std::size_t k = 0; k < mp.eat.size(); ++k) {
                const double hu = s.pixels.px[k];
                mp.eat.px[k] = (mp.pericardium.px[k] && hu >= band.low && hu <= band.high) ? 1 : 0;
            }
        }
        out.study.slices.push_back(std::move(s));
        out.masks.push_back(std::move(mp));
    }
    return out;
}

DatasetManifest save_studies(const std::vector<LoadedStudy>& studies, const std::filesystem::path& dir,
                             std::optional<double> pixel_spacing_mm, std::optional<double> slice_thickness_mm) {
    DatasetManifest m;
    m.root = dir;
    m.hu_slope = 1.0;
    m.hu_intercept = 0.0;
    m.pixel_spacing_mm = pixel_spacing_mm;
    m.slice_thickness_mm = slice_thickness_mm;
    for (const auto& ls : studies) {
        require(ls.masks.size() == ls.study.slices.size(), ErrorKind::invalid_argument,
                "save_studies: mask count does not match slice count for " + ls.study.patient_id);
        for (std::size_t i = 0; i < ls.study.slices.size(); ++i) {
            const CtSlice& s = ls.study.slices[i];
            const std::string stem = ls.study.patient_id + "/" + std::to_string(s.slice_index);
            ManifestEntry e;
            e.patient_id = ls.study.patient_id;
            e.slice_index = s.slice_index;
            e.scanner = ls.study.scanner;
            e.rows = s.pixels.rows;
            e.cols = s.pixels.cols;
            e.depth_mm = s.depth_mm;
            e.image = dir / (stem + "_image.raw");
            e.pericardium_mask = dir / (stem + "_pericardium.png");
            e.eat_mask = dir / (stem + "_eat.png");
            io::write_raw_i16(e.image, s.pixels);
            Mask scaled = ls.masks[i].pericardium;
            for (auto& v : scaled.px) v = v ? 255 : 0;
            io::write_png_gray8(e.pericardium_mask, scaled);
            scaled = ls.masks[i].eat;
            for (auto& v : scaled.px) v = v ? 255 : 0;
            io::write_png_gray8(*e.eat_mask, scaled);
            m.entries.push_back(std::move(e));
        }
    }
    save_manifest(m, dir / "manifest.json");
    return m;
}

std::vector<std::string> FoldSplit::patients_in(int fold) const {
    std::vector<std::string> out;
    for (const auto& [id, f] : assignments)
        if (f == fold) out.push_back(id);
    return out;
}

std::vector<std::string> FoldSplit::patients_not_in(int fold) const {
    std::vector<std::string> out;
    for (const auto& [id, f] : assignments)
        if (f != fold) out.push_back(id);
    return out;
}

FoldSplit split_folds(std::vector<std::string> patient_ids, int fold_count, std::uint64_t seed) {
    require(fold_count >= 2, ErrorKind::invalid_argument,
            "split_folds: fold_count must be >= 2, got " + std::to_string(fold_count));
    std::sort(patient_ids.begin(), patient_ids.end());
    require(std::adjacent_find(patient_ids.begin(), patient_ids.end()) == patient_ids.end(),
            ErrorKind::invalid_argument, "split_folds: duplicate patient ids");
    require(patient_ids.size() >= static_cast<std::size_t>(fold_count), ErrorKind::invalid_argument,
            "split_folds: " + std::to_string(patient_ids.size()) + " patients cannot fill " +
                std::to_string(fold_count) + " folds");
    std::mt19937_64 rng(seed);
    // Fisher-Yates with an explicit index draw keeps the permutation independent of
    // the standard library's shuffle implementation.
    for (std::size_t i = patient_ids.size() - 1; i > 0; --i) {
        const std::size_t j = static_cast<std::size_t>(rng() % (i + 1));
        std::swap(patient_ids[i], patient_ids[j]);
    }
    FoldSplit split;
    split.fold_count = fold_count;
    for (std::size_t i = 0; i < patient_ids.size(); ++i)
        split.assignments[patient_ids[i]] = static_cast<int>(i % fold_count);
    return split;
}

}  // namespace eatseg
