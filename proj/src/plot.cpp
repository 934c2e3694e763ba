#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <string>

#include "eatseg/errors.hpp"
#include "eatseg/evaluate.hpp"
#include "eatseg/image_io.hpp"

namespace eatseg {
namespace {

using Rgb = std::array<std::uint8_t, 3>;
constexpr Rgb kBlack{0, 0, 0}, kGrey{170, 170, 170}, kBlue{31, 90, 200}, kRed{200, 40, 40};

// 3x5 glyphs, one row per 3 bits, top row first.
const std::array<std::uint16_t, 13> kGlyphs = {
    0b111101101101111, 0b010110010010111, 0b111001111100111, 0b111001111001111, 0b101101111001001,
    0b111100111001111, 0b111100111101111, 0b111001001001001, 0b111101111101111, 0b111101111001111,
    0b000000111000000,  // -
    0b000000000000010,  // .
    0b000101010101000,  // e, drawn as a small cross
};

int glyph_index(char c) {
    if (c >= '0' && c <= '9') return c - '0';
    if (c == '-') return 10;
    if (c == '.') return 11;
    if (c == 'e') return 12;
    return -1;
}

class Canvas {
public:
    Canvas(int w, int h) : w_(w), h_(h), px_(static_cast<std::size_t>(w) * h * 3, 255) {}

    void set(int x, int y, Rgb c) {
        if (x < 0 || y < 0 || x >= w_ || y >= h_) return;
        std::copy(c.begin(), c.end(), px_.begin() + (static_cast<std::size_t>(y) * w_ + x) * 3);
    }

    void line(int x0, int y0, int x1, int y1, Rgb c, int dash = 0) {
        const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
        const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
        int err = dx + dy, step = 0;
        while (true) {
            if (dash == 0 || (step / dash) % 2 == 0) set(x0, y0, c);
            ++step;
            if (x0 == x1 && y0 == y1) break;
            const int e2 = 2 * err;
            if (e2 >= dy) {
                err += dy;
                x0 += sx;
            }
            if (e2 <= dx) {
                err += dx;
                y0 += sy;
            }
        }
    }

    void marker(int x, int y, Rgb c) {
        for (int j = -2; j <= 2; ++j)
            for (int i = -2; i <= 2; ++i)
                if (std::abs(i) + std::abs(j) <= 3) set(x + i, y + j, c);
    }

    void text(int x, int y, const std::string& s, Rgb c, int scale = 2) {
        for (char ch : s) {
            const int g = glyph_index(ch);
            if (g >= 0)
                for (int r = 0; r < 5; ++r)
                    for (int col = 0; col < 3; ++col)
                        if (kGlyphs[g] >> (14 - (r * 3 + col)) & 1)
                            for (int a = 0; a < scale; ++a)
                                for (int b = 0; b < scale; ++b) set(x + col * scale + b, y + r * scale + a, c);
            x += 4 * scale;
        }
    }

    void save(const std::filesystem::path& p) const { io::write_png_rgb(p, w_, h_, px_); }

private:
    int w_, h_;
    std::vector<std::uint8_t> px_;
};

std::string label(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

struct Axes {
    static constexpr int W = 640, H = 480, L = 70, R = 20, T = 20, B = 50;
    double x0, x1, y0, y1;

    Axes(double xmin, double xmax, double ymin, double ymax) {
        auto pad = [](double& lo, double& hi) {
            const double span = hi - lo;
            const double p = span > 0 ? 0.05 * span : std::max(1.0, std::abs(lo) * 0.05);
            lo -= p;
            hi += p;
        };
        pad(xmin, xmax);
        pad(ymin, ymax);
        x0 = xmin, x1 = xmax, y0 = ymin, y1 = ymax;
    }
    int px(double x) const { return L + static_cast<int>(std::lround((x - x0) / (x1 - x0) * (W - L - R))); }
    int py(double y) const { return H - B - static_cast<int>(std::lround((y - y0) / (y1 - y0) * (H - T - B))); }

    void frame(Canvas& c) const {
        c.line(L, T, L, H - B, kBlack);
        c.line(L, H - B, W - R, H - B, kBlack);
        c.line(W - R, T, W - R, H - B, kGrey);
        c.line(L, T, W - R, T, kGrey);
        c.text(L, H - B + 10, label(x0), kBlack);
        const std::string xr = label(x1);
        c.text(W - R - static_cast<int>(xr.size()) * 8, H - B + 10, xr, kBlack);
        const std::string yb = label(y0), yt = label(y1);
        c.text(L - 6 - static_cast<int>(yb.size()) * 8, H - B - 10, yb, kBlack);
        c.text(L - 6 - static_cast<int>(yt.size()) * 8, T, yt, kBlack);
    }
    void hline(Canvas& c, double y, Rgb col, int dash = 0) const { c.line(L, py(y), W - R, py(y), col, dash); }
};

}  // namespace

std::vector<std::filesystem::path> emit_plots(const EvalReport& r, const std::filesystem::path& out_dir) {
    require(r.bland_altman && !r.bland_altman->points.empty(), ErrorKind::invalid_argument, "nothing to plot");
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    require(!ec, ErrorKind::io, "cannot create " + out_dir.string() + ": " + ec.message());

    const BlandAltmanResult& ba = *r.bland_altman;
    double xmin = ba.points[0].mean, xmax = xmin, ymin = std::min(ba.loa_low, 0.0), ymax = std::max(ba.loa_high, 0.0);
    for (const auto& p : ba.points) {
        xmin = std::min(xmin, p.mean);
        xmax = std::max(xmax, p.mean);
        ymin = std::min(ymin, p.diff);
        ymax = std::max(ymax, p.diff);
    }
    Canvas c(Axes::W, Axes::H);
    Axes ax(xmin, xmax, ymin, ymax);
    ax.frame(c);
    ax.hline(c, 0.0, kGrey);
    ax.hline(c, ba.loa_low, kRed, 6);
    ax.hline(c, ba.loa_high, kRed, 6);
    ax.hline(c, ba.mean_diff, kBlue);
    for (const auto& p : ba.points) c.marker(ax.px(p.mean), ax.py(p.diff), kBlack);
    const auto ba_path = out_dir / "bland_altman.png";
    c.save(ba_path);

    std::vector<double> truth, pred;
    for (const auto& f : r.folds)
        for (const auto& s : f.counts) {
            truth.push_back(static_cast<double>(s.ground_truth));
            pred.push_back(static_cast<double>(s.predicted));
        }
    require(!truth.empty(), ErrorKind::invalid_argument, "nothing to plot");
    const double lo = std::min(*std::min_element(truth.begin(), truth.end()), *std::min_element(pred.begin(), pred.end()));
    const double hi = std::max(*std::max_element(truth.begin(), truth.end()), *std::max_element(pred.begin(), pred.end()));
    Canvas s(Axes::W, Axes::H);
    Axes sx(lo, hi, lo, hi);
    sx.frame(s);
    s.line(sx.px(sx.x0), sx.py(sx.x0), sx.px(sx.x1), sx.py(sx.x1), kGrey, 6);
    for (std::size_t i = 0; i < truth.size(); ++i) s.marker(sx.px(truth[i]), sx.py(pred[i]), kBlue);
    const auto sc_path = out_dir / "count_scatter.png";
    s.save(sc_path);
    return {ba_path, sc_path};
}

}  // namespace eatseg
