#include "eatseg/phantom.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "eatseg/errors.hpp"
#include "eatseg/image_io.hpp"

namespace eatseg {

void to_json(nlohmann::json& j, const PhantomConfig& c) {
    j = nlohmann::json{{"patients", c.patients},
                       {"slices_per_patient", c.slices_per_patient},
                       {"image_size", c.image_size},
                       {"center_jitter_frac", c.center_jitter_frac},
                       {"radius_x_min", c.radius_x_min},
                       {"radius_x_max", c.radius_x_max},
                       {"radius_y_min", c.radius_y_min},
                       {"radius_y_max", c.radius_y_max},
                       {"end_scale", c.end_scale},
                       {"eat_fraction", c.eat_fraction},
                       {"rim_frac", c.rim_frac},
                       {"layer_frac", c.layer_frac},
                       {"para_frac", c.para_frac},
                       {"decoys", c.decoys},
                       {"noise_sd", c.noise_sd},
                       {"seed", c.seed},
                       {"pixel_spacing_mm", c.pixel_spacing_mm},
                       {"slice_thickness_mm", c.slice_thickness_mm}};
}

void from_json(const nlohmann::json& j, PhantomConfig& c) {
    const PhantomConfig d;
#define EATSEG_FIELD(name) c.name = j.value(#name, d.name)
    EATSEG_FIELD(patients);
    EATSEG_FIELD(slices_per_patient);
    EATSEG_FIELD(image_size);
    EATSEG_FIELD(center_jitter_frac);
    EATSEG_FIELD(radius_x_min);
    EATSEG_FIELD(radius_x_max);
    EATSEG_FIELD(radius_y_min);
    EATSEG_FIELD(radius_y_max);
    EATSEG_FIELD(end_scale);
    EATSEG_FIELD(eat_fraction);
    EATSEG_FIELD(rim_frac);
    EATSEG_FIELD(layer_frac);
    EATSEG_FIELD(para_frac);
    EATSEG_FIELD(decoys);
    EATSEG_FIELD(noise_sd);
    EATSEG_FIELD(seed);
    EATSEG_FIELD(pixel_spacing_mm);
    EATSEG_FIELD(slice_thickness_mm);
#undef EATSEG_FIELD
}

void validate(const PhantomConfig& c) {
    auto check = [](bool ok, const std::string& what) { require(ok, ErrorKind::configuration, "phantom: " + what); };
    check(c.patients >= 1, "patients must be at least 1");
    check(c.slices_per_patient >= 1, "slices_per_patient must be at least 1");
    check(c.image_size >= 16, "image_size must be at least 16");
    check(c.eat_fraction > 0.0 && c.eat_fraction < 1.0, "eat_fraction must lie in the open interval (0, 1)");
    check(c.radius_x_min > 0 && c.radius_x_min <= c.radius_x_max, "radius_x range is empty or non-positive");
    check(c.radius_y_min > 0 && c.radius_y_min <= c.radius_y_max, "radius_y range is empty or non-positive");
    check(c.end_scale > 0 && c.end_scale <= 1, "end_scale must lie in (0, 1]");
    check(c.rim_frac > 0 && c.layer_frac > 0 && c.para_frac >= 0, "rim and layer thickness must be positive");
    check(c.center_jitter_frac >= 0 && c.decoys >= 0 && c.noise_sd >= 0, "jitter, decoys and noise must be >= 0");
    const double reach = std::max(c.radius_x_max, c.radius_y_max) + c.layer_frac + c.para_frac + c.center_jitter_frac;
    check(reach < 0.5, "pericardium with its surrounding rings leaves the frame (reach " + std::to_string(reach) +
                           " of the width, limit 0.5)");
    check(c.rim_frac < std::min(c.radius_x_min, c.radius_y_min) * c.end_scale,
          "rim_frac exceeds the smallest pericardium radius");
}

namespace {

constexpr int kSectors = 12;
constexpr double kBodyRx = 0.47, kBodyRy = 0.42, kSubcutaneous = 0.035;

std::uint64_t mix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

struct Ellipse {
    double cx, cy, rx, ry, cos_t, sin_t;

    // Normalized radius and polar angle in the ellipse frame.
    void polar(double x, double y, double& r, double& theta) const {
        const double dx = x - cx, dy = y - cy;
        const double u = (cos_t * dx + sin_t * dy) / rx;
        const double v = (-sin_t * dx + cos_t * dy) / ry;
        r = std::sqrt(u * u + v * v);
        theta = std::atan2(v, u);
    }
};

PhantomPatient make_patient(const PhantomConfig& c, int p) {
    std::mt19937_64 rng(mix(c.seed ^ mix(static_cast<std::uint64_t>(p) + 1)));
    auto unif = [&](double lo, double hi) { return lo + (hi - lo) * (static_cast<double>(rng() >> 11) * 0x1.0p-53); };
    auto fat = [&]() { return static_cast<std::int16_t>(std::lround(unif(-190.0, -40.0))); };

    const double n = c.image_size;
    const double cx = n / 2 + unif(-1, 1) * c.center_jitter_frac * n;
    const double cy = n / 2 + unif(-1, 1) * c.center_jitter_frac * n;
    const double rx0 = unif(c.radius_x_min, c.radius_x_max) * n;
    const double ry0 = unif(c.radius_y_min, c.radius_y_max) * n;
    const double tilt = unif(-20.0, 20.0) * std::numbers::pi / 180.0;

    char id[16];
    std::snprintf(id, sizeof id, "P%03d", p + 1);
    PhantomPatient out;
    out.data.study.patient_id = id;
    out.data.study.scanner = p % 2 == 0 ? "phantom-a" : "phantom-b";

    const int count = c.slices_per_patient;
    const int size = c.image_size;
    for (int k = 0; k < count; ++k) {
        const double t = count > 1 ? static_cast<double>(k) / (count - 1) : 0.5;
        const double f = c.end_scale + (1.0 - c.end_scale) * std::sin(std::numbers::pi * t);
        const Ellipse peri{cx, cy, rx0 * f, ry0 * f, std::cos(tilt), std::sin(tilt)};
        const double rho = std::sqrt(peri.rx * peri.ry);
        const double rim = c.rim_frac * n / rho, layer = c.layer_frac * n / rho, para = c.para_frac * n / rho;
        const Ellipse body{n / 2, n / 2, kBodyRx * n, kBodyRy * n, 1.0, 0.0};
        const double sub = kSubcutaneous / kBodyRy;
        const Ellipse lung_l{cx - 0.27 * n, cy - 0.02 * n, 0.11 * n, 0.2 * n, 1.0, 0.0};
        const Ellipse lung_r{cx + 0.27 * n, cy - 0.02 * n, 0.11 * n, 0.2 * n, 1.0, 0.0};

        std::array<bool, kSectors> eat_sector{}, para_sector{};
        int eat_sectors = 0;
        for (int s = 0; s < kSectors; ++s) {
            eat_sector[s] = unif(0, 1) < c.eat_fraction;
            eat_sectors += eat_sector[s];
        }
        if (eat_sectors == 0) eat_sector[static_cast<int>(unif(0, kSectors)) % kSectors] = true;
        // Every sector without EAT carries paracardial fat so the boundary stays visible.
        for (int s = 0; s < kSectors; ++s) para_sector[s] = !eat_sector[s] || unif(0, 1) < 0.5;

        struct Blob {
            double x, y, r;
        };
        std::vector<Blob> blobs;
        for (int b = 0; b < c.decoys; ++b) {
            for (int attempt = 0; attempt < 32; ++attempt) {
                const double bx = unif(0.15, 0.85) * n, by = unif(0.15, 0.85) * n;
                double r, th, rb, tb;
                peri.polar(bx, by, r, th);
                body.polar(bx, by, rb, tb);
                if (r > 1 + layer + para + 0.1 && rb < 1 - sub - 0.05) {
                    blobs.push_back({bx, by, unif(0.01, 0.02) * n});
                    break;
                }
            }
        }

        CtSlice slice;
        slice.patient_id = id;
        slice.slice_index = k;
        slice.depth_mm = k * c.slice_thickness_mm;
        slice.pixels = HuPlane(size, size);
        MaskPair masks{Mask(size, size), Mask(size, size)};
        Mask planted(size, size);
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                double r, th, rb, tb, rl, rr;
                peri.polar(x, y, r, th);
                body.polar(x, y, rb, tb);
                lung_l.polar(x, y, rl, tb);
                lung_r.polar(x, y, rr, tb);
                const int sector =
                    std::min(static_cast<int>((th + std::numbers::pi) / (2 * std::numbers::pi) * kSectors), kSectors - 1);
                std::int16_t hu = 40;
                bool adipose = false;
                if (rb > 1) {
                    hu = -1000;
                } else if (rb > 1 - sub) {
                    hu = fat();
                    adipose = true;
                } else if (r <= 1) {
                    masks.pericardium.at(y, x) = 1;
                    if (r > 1 - rim && eat_sector[sector]) {
                        hu = fat();
                        adipose = true;
                    } else {
                        hu = r < 0.45 ? 30 : 50;
                    }
                } else if (r <= 1 + layer) {
                    hu = 25;
                } else if (r <= 1 + layer + para && para_sector[sector]) {
                    hu = fat();
                    adipose = true;
                } else if (rl <= 1 || rr <= 1) {
                    hu = -800;
                }
                if (!adipose && rb <= 1 - sub && r > 1 + layer)
                    for (const auto& b : blobs)
                        if ((x - b.x) * (x - b.x) + (y - b.y) * (y - b.y) <= b.r * b.r) {
                            hu = fat();
                            adipose = true;
                        }
                slice.pixels.at(y, x) = hu;
                planted.at(y, x) = adipose ? 1 : 0;
            }
        if (c.noise_sd > 0) {
            std::normal_distribution<double> noise(0.0, c.noise_sd);
            for (auto& v : slice.pixels.px)
                v = static_cast<std::int16_t>(std::clamp<long>(std::lround(v + noise(rng)), -1024, 3071));
        }
        for (std::size_t i = 0; i < masks.eat.size(); ++i) {
            const int v = slice.pixels.px[i];
            masks.eat.px[i] = masks.pericardium.px[i] && v >= -200 && v <= -30 ? 1 : 0;
        }
        out.data.study.slices.push_back(std::move(slice));
        out.data.masks.push_back(std::move(masks));
        out.planted_adipose.push_back(std::move(planted));
    }
    return out;
}

}  // namespace

std::vector<PhantomPatient> generate_phantom_studies(const PhantomConfig& cfg) {
    validate(cfg);
    std::vector<PhantomPatient> out(cfg.patients);
#pragma omp parallel for schedule(dynamic)
    for (int p = 0; p < cfg.patients; ++p) out[p] = make_patient(cfg, p);
    return out;
}

DatasetManifest generate_phantom(const PhantomConfig& cfg, const std::filesystem::path& dir) {
    const auto patients = generate_phantom_studies(cfg);
    DatasetManifest m;
    m.root = dir;
    m.hu_slope = 1.0;
    m.hu_intercept = -1024.0;
    m.pixel_spacing_mm = cfg.pixel_spacing_mm * 512.0 / cfg.image_size;
    m.slice_thickness_mm = cfg.slice_thickness_mm;
    for (const auto& p : patients) {
        const auto& ls = p.data;
        for (std::size_t i = 0; i < ls.study.slices.size(); ++i) {
            const CtSlice& s = ls.study.slices[i];
            char stem[64];
            std::snprintf(stem, sizeof stem, "%s/slice_%03d", s.patient_id.c_str(), s.slice_index);
            ManifestEntry e;
            e.patient_id = s.patient_id;
            e.slice_index = s.slice_index;
            e.scanner = ls.study.scanner;
            e.depth_mm = s.depth_mm;
            e.image = dir / (std::string(stem) + "_ct.png");
            e.pericardium_mask = dir / (std::string(stem) + "_pericardium.png");
            e.eat_mask = dir / (std::string(stem) + "_eat.png");
            Plane<std::uint16_t> stored(s.pixels.rows, s.pixels.cols);
            for (std::size_t k = 0; k < stored.size(); ++k)
                stored.px[k] = static_cast<std::uint16_t>(std::max(0, s.pixels.px[k] + 1024));
            io::write_png_gray16(e.image, stored);
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

}  // namespace eatseg
