#pragma once

#include <cmath>
#include <span>

namespace mastitis {

/// Sample skewness g1 = m3 / m2^(3/2) using biased central moments.
/// Series shorter than three points, or with zero variance, have skewness 0.
inline double skewness(std::span<const double> series) {
    const auto n = series.size();
    if (n < 3) return 0.0;
    double mean = 0.0;
    for (double v : series) mean += v;
    mean /= double(n);
    double m2 = 0.0, m3 = 0.0;
    for (double v : series) {
        const double d = v - mean;
        m2 += d * d;
        m3 += d * d * d;
    }
    m2 /= double(n);
    m3 /= double(n);
    // Relative cutoff: constant series leave rounding residue around 1e-30 * mean^2.
    if (m2 <= 1e-24 * (mean * mean + 1.0)) return 0.0;
    return m3 / std::pow(m2, 1.5);
}

}  // namespace mastitis
