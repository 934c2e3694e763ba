#include "eatseg/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "eatseg/errors.hpp"

namespace eatseg {

void to_json(nlohmann::json& j, const AugmentPolicy& p) {
    j = nlohmann::json{{"p_hflip", p.p_hflip},
                       {"p_affine", p.p_affine},
                       {"max_translate_frac", p.max_translate_frac},
                       {"max_scale_delta", p.max_scale_delta},
                       {"max_rotate_deg", p.max_rotate_deg},
                       {"p_mesh_deform", p.p_mesh_deform},
                       {"mesh_grid", p.mesh_grid},
                       {"mesh_magnitude_frac", p.mesh_magnitude_frac}};
}

void from_json(const nlohmann::json& j, AugmentPolicy& p) {
    const AugmentPolicy d;
    p.p_hflip = j.value("p_hflip", d.p_hflip);
    p.p_affine = j.value("p_affine", d.p_affine);
    p.max_translate_frac = j.value("max_translate_frac", d.max_translate_frac);
    p.max_scale_delta = j.value("max_scale_delta", d.max_scale_delta);
    p.max_rotate_deg = j.value("max_rotate_deg", d.max_rotate_deg);
    p.p_mesh_deform = j.value("p_mesh_deform", d.p_mesh_deform);
    p.mesh_grid = j.value("mesh_grid", d.mesh_grid);
    p.mesh_magnitude_frac = j.value("mesh_magnitude_frac", d.mesh_magnitude_frac);
}

void validate(const AugmentPolicy& p) {
    auto prob = [](double v, const char* name) {
        require(v >= 0.0 && v <= 1.0, ErrorKind::configuration,
                std::string("augment.") + name + " must lie in [0, 1]");
    };
    prob(p.p_hflip, "p_hflip");
    prob(p.p_affine, "p_affine");
    prob(p.p_mesh_deform, "p_mesh_deform");
    require(p.max_translate_frac >= 0 && p.max_scale_delta >= 0 && p.max_rotate_deg >= 0 &&
                p.mesh_magnitude_frac >= 0,
            ErrorKind::configuration, "augment: magnitudes must be non-negative");
    require(p.max_scale_delta < 1.0, ErrorKind::configuration, "augment.max_scale_delta must be below 1");
    require(p.mesh_grid >= 2, ErrorKind::configuration, "augment.mesh_grid must be at least 2");
}

double uniform01(AugmentRng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

namespace {

std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

double draw(AugmentRng& rng, AugmentOutcome& o) {
    const double u = uniform01(rng);
    o.rng_draws.push_back(u);
    return u;
}

double symmetric(double u, double half_width) { return (2.0 * u - 1.0) * half_width; }

}  // namespace

std::uint64_t sample_seed(std::uint64_t global_seed, const std::string& patient_id, int slice_index, int epoch) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : patient_id) h = (h ^ ch) * 0x100000001b3ULL;
    h = splitmix(h ^ splitmix(global_seed));
    h = splitmix(h ^ static_cast<std::uint64_t>(static_cast<std::uint32_t>(slice_index)));
    return splitmix(h ^ (static_cast<std::uint64_t>(static_cast<std::uint32_t>(epoch)) << 32));
}

SamplingMap SamplingMap::identity(int size) {
    SamplingMap m;
    m.size = size;
    m.src_x.resize(static_cast<std::size_t>(size) * size);
    m.src_y.resize(m.src_x.size());
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            m.src_x[static_cast<std::size_t>(y) * size + x] = x;
            m.src_y[static_cast<std::size_t>(y) * size + x] = y;
        }
    return m;
}

SamplingMap hflip_map(int size) {
    SamplingMap m = SamplingMap::identity(size);
    for (double& x : m.src_x) x = size - 1 - x;
    return m;
}

SamplingMap compose_affine(const SamplingMap& map, const AffineParams& a) {
    // The affine acts after `map`: out(p) = prev(A^-1 p), so each output pixel
    // is pulled back through the inverse affine and then looked up in `map`.
    const int n = map.size;
    const double c = (n - 1) / 2.0;
    const double th = a.rot_deg * std::numbers::pi / 180.0;
    const double cs = std::cos(th), sn = std::sin(th);
    const SamplingMap prev = map;
    SamplingMap out = map;
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            const double u = x - c - a.tx, v = y - c - a.ty;
            const double qx = (cs * u + sn * v) / a.scale + c;
            const double qy = (-sn * u + cs * v) / a.scale + c;
            const double cx = std::clamp(qx, 0.0, n - 1.0), cy = std::clamp(qy, 0.0, n - 1.0);
            const int x0 = static_cast<int>(std::floor(cx)), y0 = static_cast<int>(std::floor(cy));
            const int x1 = std::min(x0 + 1, n - 1), y1 = std::min(y0 + 1, n - 1);
            const double fx = cx - x0, fy = cy - y0;
            auto lerp = [&](const std::vector<double>& f) {
                auto at = [&](int yy, int xx) { return f[static_cast<std::size_t>(yy) * n + xx]; };
                return (at(y0, x0) * (1 - fx) + at(y0, x1) * fx) * (1 - fy) + (at(y1, x0) * (1 - fx) + at(y1, x1) * fx) * fy;
            };
            const std::size_t i = static_cast<std::size_t>(y) * n + x;
            out.src_x[i] = lerp(prev.src_x);
            out.src_y[i] = lerp(prev.src_y);
        }
    return out;
}

namespace {

void check_grid(const DisplacementGrid& g) {
    require(g.side >= 2, ErrorKind::invalid_argument, "mesh_deform: control grid must be at least 2x2");
    const auto n = static_cast<std::size_t>(g.side) * g.side;
    require(g.dx.size() == n && g.dy.size() == n, ErrorKind::invalid_argument,
            "mesh_deform: displacement count does not match the grid side");
}

}  // namespace

SamplingMap compose_mesh(const SamplingMap& map, const DisplacementGrid& g) {
    check_grid(g);
    const int n = map.size;
    const double cell = n > 1 ? (n - 1.0) / (g.side - 1) : 1.0;
    SamplingMap out = map;
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            const double gx = x / cell, gy = y / cell;
            const int i0 = std::min(static_cast<int>(gx), g.side - 2), j0 = std::min(static_cast<int>(gy), g.side - 2);
            const double fx = gx - i0, fy = gy - j0;
            auto interp = [&](const std::vector<double>& d) {
                auto at = [&](int j, int i) { return d[static_cast<std::size_t>(j) * g.side + i]; };
                return (at(j0, i0) * (1 - fx) + at(j0, i0 + 1) * fx) * (1 - fy) +
                       (at(j0 + 1, i0) * (1 - fx) + at(j0 + 1, i0 + 1) * fx) * fy;
            };
            const double qx = std::clamp(x - interp(g.dx), 0.0, n - 1.0);
            const double qy = std::clamp(y - interp(g.dy), 0.0, n - 1.0);
            const int x0 = static_cast<int>(std::floor(qx)), y0 = static_cast<int>(std::floor(qy));
            const int x1 = std::min(x0 + 1, n - 1), y1 = std::min(y0 + 1, n - 1);
            const double fx2 = qx - x0, fy2 = qy - y0;
            auto lerp = [&](const std::vector<double>& f) {
                auto at = [&](int yy, int xx) { return f[static_cast<std::size_t>(yy) * n + xx]; };
                return (at(y0, x0) * (1 - fx2) + at(y0, x1) * fx2) * (1 - fy2) +
                       (at(y1, x0) * (1 - fx2) + at(y1, x1) * fx2) * fy2;
            };
            const std::size_t i = static_cast<std::size_t>(y) * n + x;
            out.src_x[i] = lerp(map.src_x);
            out.src_y[i] = lerp(map.src_y);
        }
    return out;
}

ImagePlane warp_image(const ImagePlane& image, const SamplingMap& map) {
    require(image.rows == map.size && image.cols == map.size, ErrorKind::invalid_argument,
            "warp_image: image and sampling map sizes differ");
    const int n = map.size;
    ImagePlane out(n, n);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double sx = std::clamp(map.src_x[i], 0.0, n - 1.0), sy = std::clamp(map.src_y[i], 0.0, n - 1.0);
        const int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
        const int x1 = std::min(x0 + 1, n - 1), y1 = std::min(y0 + 1, n - 1);
        const float fx = static_cast<float>(sx - x0), fy = static_cast<float>(sy - y0);
        const float top = image.at(y0, x0) * (1.f - fx) + image.at(y0, x1) * fx;
        const float bot = image.at(y1, x0) * (1.f - fx) + image.at(y1, x1) * fx;
        out.px[i] = top * (1.f - fy) + bot * fy;
    }
    return out;
}

Mask warp_mask(const Mask& mask, const SamplingMap& map) {
    ImagePlane indicator(mask.rows, mask.cols);
    for (std::size_t i = 0; i < mask.size(); ++i) indicator.px[i] = mask.px[i] ? 1.f : 0.f;
    const ImagePlane w = warp_image(indicator, map);
    Mask out(w.rows, w.cols);
    for (std::size_t i = 0; i < w.size(); ++i) out.px[i] = w.px[i] >= 0.5f ? 1 : 0;
    return out;
}

ImagePlane mesh_deform(const ImagePlane& image, const DisplacementGrid& grid) {
    check_grid(grid);
    require(image.rows == image.cols, ErrorKind::invalid_argument, "mesh_deform: image must be square");
    return warp_image(image, compose_mesh(SamplingMap::identity(image.rows), grid));
}

AugmentOutcome draw_outcome(const AugmentPolicy& policy, int size, AugmentRng& rng) {
    AugmentOutcome o;
    const bool flip = draw(rng, o) < policy.p_hflip;
    const bool affine = draw(rng, o) < policy.p_affine;
    const bool mesh = draw(rng, o) < policy.p_mesh_deform;
    o.flipped = flip;
    if (affine) {
        AffineParams a;
        a.translate = draw(rng, o) < 0.5;
        a.scale_on = draw(rng, o) < 0.5;
        a.rotate = draw(rng, o) < 0.5;
        if (!a.translate && !a.scale_on && !a.rotate) {
            const int pick = std::min(static_cast<int>(draw(rng, o) * 3.0), 2);
            (pick == 0 ? a.translate : pick == 1 ? a.scale_on : a.rotate) = true;
        }
        if (a.translate) {
            const double t = policy.max_translate_frac * size;
            a.tx = symmetric(draw(rng, o), t);
            a.ty = symmetric(draw(rng, o), t);
        }
        if (a.scale_on) a.scale = 1.0 + symmetric(draw(rng, o), policy.max_scale_delta);
        if (a.rotate) a.rot_deg = symmetric(draw(rng, o), policy.max_rotate_deg);
        o.affine = a;
    }
    if (mesh) {
        DisplacementGrid g;
        g.side = policy.mesh_grid;
        const double m = policy.mesh_magnitude_frac * size;
        const auto n = static_cast<std::size_t>(g.side) * g.side;
        g.dx.resize(n);
        g.dy.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            g.dx[i] = symmetric(draw(rng, o), m);
            g.dy[i] = symmetric(draw(rng, o), m);
        }
        o.mesh_applied = true;
        o.mesh = std::move(g);
    }
    return o;
}

SamplingMap outcome_map(const AugmentOutcome& o, int size) {
    SamplingMap m = o.flipped ? hflip_map(size) : SamplingMap::identity(size);
    if (o.affine) m = compose_affine(m, *o.affine);
    if (o.mesh) m = compose_mesh(m, *o.mesh);
    return m;
}

AugmentResult augment_sample(const TrainSample& sample, const AugmentPolicy& policy, AugmentRng& rng) {
    const int n = sample.size();
    AugmentResult r{sample, draw_outcome(policy, n, rng)};
    if (!r.outcome.any_fired()) return r;

    const SamplingMap map = outcome_map(r.outcome, n);
    ImagePlane ct(n, n);
    std::copy_n(sample.input.plane(0, 0), ct.size(), ct.px.begin());
    const ImagePlane warped = warp_image(ct, map);
    std::copy(warped.px.begin(), warped.px.end(), r.sample.input.plane(0, 0));
    r.sample.target = warp_mask(sample.target, map);
    if (sample.adipose.size() == ct.size()) r.sample.adipose = warp_mask(sample.adipose, map);
    if (sample.eat.size() == ct.size()) r.sample.eat = warp_mask(sample.eat, map);
    return r;
}

nlohmann::json to_json(const AugmentOutcome& o) {
    nlohmann::json j{{"flipped", o.flipped}, {"mesh_applied", o.mesh_applied}, {"rng_draws", o.rng_draws.size()}};
    if (o.affine)
        j["affine"] = {{"tx", o.affine->tx}, {"ty", o.affine->ty}, {"scale", o.affine->scale}, {"rot_deg", o.affine->rot_deg}};
    else
        j["affine"] = nullptr;
    return j;
}

}  // namespace eatseg
