#pragma once

// Brute-force reference computations written straight from the definitions.
// They share no code with the library.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace oracle {

inline double dice_loss(const std::vector<double>& p, const std::vector<int>& t, double lambda) {
    double inter = 0, sum_p = 0, sum_t = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (t[i]) inter += p[i];
        sum_p += p[i];
        sum_t += t[i];
    }
    return 1.0 - (2.0 * inter + lambda) / (sum_p + sum_t + lambda);
}

struct Overlap {
    double dsc, jaccard, precision, recall;
};

/// Set-based definitions with the empty-set conventions: both empty is a
/// perfect match, exactly one empty a total miss.
inline Overlap overlap(const std::vector<int>& a, const std::vector<int>& b) {
    long inter = 0, uni = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        inter += a[i] && b[i];
        uni += a[i] || b[i];
        na += a[i] != 0;
        nb += b[i] != 0;
    }
    if (na == 0 && nb == 0) return {1, 1, 1, 1};
    if (na == 0 || nb == 0) return {0, 0, 0, 0};
    return {2.0 * inter / double(na + nb), double(inter) / double(uni), double(inter) / double(na),
            double(inter) / double(nb)};
}

/// Raw-moment form of the correlation coefficient, long double accumulators.
inline double pearson_r(const std::vector<double>& x, const std::vector<double>& y) {
    long double n = x.size(), sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sx += x[i];
        sy += y[i];
        sxx += (long double)x[i] * x[i];
        syy += (long double)y[i] * y[i];
        sxy += (long double)x[i] * y[i];
    }
    const long double num = n * sxy - sx * sy;
    const long double den = std::sqrt((n * sxx - sx * sx) * (n * syy - sy * sy));
    return static_cast<double>(num / den);
}

struct Agreement {
    double bias, sd, low, high;
};

inline Agreement bland_altman(const std::vector<double>& pred, const std::vector<double>& ref) {
    const std::size_t n = pred.size();
    double s = 0;
    for (std::size_t i = 0; i < n; ++i) s += pred[i] - ref[i];
    const double bias = s / n;
    double ss = 0;
    for (std::size_t i = 0; i < n; ++i) ss += (pred[i] - ref[i] - bias) * (pred[i] - ref[i] - bias);
    const double sd = std::sqrt(ss / (n - 1));
    return {bias, sd, bias - 1.96 * sd, bias + 1.96 * sd};
}

inline std::vector<int> random_mask(std::mt19937_64& rng, std::size_t n, double density) {
    std::bernoulli_distribution on(density);
    std::vector<int> m(n);
    for (auto& v : m) v = on(rng);
    return m;
}

}  // namespace oracle
