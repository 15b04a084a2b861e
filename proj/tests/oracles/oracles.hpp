// SPDX-License-Identifier: Apache-2.0
//
// Independent reference implementations used only by tests. Each one is a
// direct, slow transcription of a definition and shares no code with the
// library.
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

namespace oracle {

using ld = long double;

/// softmax(A z + b) in long double.
inline std::array<ld, 4> calibrated_probs(const std::array<std::array<double, 4>, 4>& A, const std::array<double, 4>& b,
                                          const std::array<double, 4>& z) {
  std::array<ld, 4> y{};
  for (int i = 0; i < 4; ++i) {
    y[i] = b[i];
    for (int j = 0; j < 4; ++j) y[i] += static_cast<ld>(A[i][j]) * static_cast<ld>(z[j]);
  }
  ld m = y[0];
  for (ld v : y) m = std::max(m, v);
  ld s = 0;
  std::array<ld, 4> p{};
  for (int i = 0; i < 4; ++i) s += (p[i] = std::exp(y[i] - m));
  for (ld& v : p) v /= s;
  return p;
}

/// W x + bias, W is 4 x F row-major.
inline std::array<ld, 4> head_forward(const std::vector<double>& W, const std::array<double, 4>& bias,
                                      const std::vector<double>& x) {
  const std::size_t F = x.size();
  std::array<ld, 4> out{};
  for (std::size_t r = 0; r < 4; ++r) {
    out[r] = bias[r];
    for (std::size_t i = 0; i < F; ++i) out[r] += static_cast<ld>(W[r * F + i]) * static_cast<ld>(x[i]);
  }
  return out;
}

/// Weighted kappa in the agreement-weight form (p_o - p_e) / (1 - p_e) with
/// w_ij = 1 - |i - j| / (k - 1), or w_ij = [i == j] when unweighted.
inline double kappa_definitional(const std::vector<std::vector<long>>& counts, bool linear) {
  const std::size_t k = counts.size();
  ld n = 0;
  for (const auto& r : counts)
    for (long v : r) n += v;
  std::vector<ld> row(k, 0), col(k, 0);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      row[i] += counts[i][j] / n;
      col[j] += counts[i][j] / n;
    }
  ld po = 0, pe = 0;
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      const ld d = i > j ? static_cast<ld>(i - j) : static_cast<ld>(j - i);
      const ld w = linear ? 1 - d / static_cast<ld>(k - 1) : (i == j ? 1 : 0);
      po += w * counts[i][j] / n;
      pe += w * row[i] * col[j];
    }
  return static_cast<double>((po - pe) / (1 - pe));
}

/// Large-sample non-null variance of unweighted kappa in its closed
/// unweighted form; returns the standard error.
inline double unweighted_kappa_se(const std::vector<std::vector<long>>& counts) {
  const std::size_t k = counts.size();
  ld n = 0;
  for (const auto& r : counts)
    for (long v : r) n += v;
  std::vector<std::vector<ld>> p(k, std::vector<ld>(k));
  std::vector<ld> row(k, 0), col(k, 0);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      p[i][j] = counts[i][j] / n;
      row[i] += p[i][j];
      col[j] += p[i][j];
    }
  ld po = 0, pe = 0;
  for (std::size_t i = 0; i < k; ++i) {
    po += p[i][i];
    pe += row[i] * col[i];
  }
  ld a = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const ld t = (1 - pe) - (row[i] + col[i]) * (1 - po);
    a += p[i][i] * t * t;
  }
  ld b = 0;
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j)
      if (i != j) b += p[i][j] * (col[i] + row[j]) * (col[i] + row[j]);
  b *= (1 - po) * (1 - po);
  const ld c = po * pe - 2 * pe + po;
  const ld var = (a + b - c * c) / (n * std::pow(1 - pe, 4));
  return static_cast<double>(std::sqrt(var));
}

/// AUC by counting every (positive, negative) pair; ties count one half.
inline double auc_pairs(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels) {
  long long twice = 0, np = 0, nn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i]) ++np;
    else ++nn;
  }
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!labels[i]) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j]) continue;
      if (scores[i] > scores[j]) twice += 2;
      else if (scores[i] == scores[j]) twice += 1;
    }
  }
  return static_cast<double>(twice) / (2.0 * static_cast<double>(np) * static_cast<double>(nn));
}

/// Composite Simpson rule in long double.
template <class F>
ld simpson(F f, ld a, ld b, int intervals) {
  if (intervals % 2) ++intervals;
  const ld h = (b - a) / intervals;
  ld s = f(a) + f(b);
  for (int i = 1; i < intervals; ++i) s += f(a + i * h) * (i % 2 ? 4 : 2);
  return s * h / 3;
}

/// Standard normal CDF by quadrature of the density.
inline double normal_cdf(double x) {
  const ld c = 1.0L / std::sqrt(2.0L * 3.14159265358979323846264338327950288L);
  const ld area = simpson([&](ld t) { return c * std::exp(-t * t / 2); }, 0.0L, static_cast<ld>(std::fabs(x)), 20000);
  return static_cast<double>(x >= 0 ? 0.5L + area : 0.5L - area);
}

/// Chi-squared upper tail by quadrature, substituting t = u^2 so the
/// integrand is smooth at the origin.
inline double chi2_sf(double x, double df) {
  const ld k = df;
  const ld norm = std::pow(2.0L, k / 2) * std::tgamma(k / 2);
  const ld cdf = simpson([&](ld u) { return 2 * std::pow(u, k - 1) * std::exp(-u * u / 2) / norm; }, 0.0L,
                         std::sqrt(static_cast<ld>(x)), 40000);
  return static_cast<double>(1 - cdf);
}

/// Signed-rank P(W+ <= observed W+) by enumerating all 2^n sign patterns of
/// the non-zero differences (midranks for ties).
inline double wilcoxon_lower_tail(const std::vector<int>& diffs) {
  std::vector<int> nz;
  for (int d : diffs)
    if (d != 0) nz.push_back(d);
  const std::size_t n = nz.size();
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n; ++i) {
    int below = 0, equal = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (std::abs(nz[j]) < std::abs(nz[i])) ++below;
      if (std::abs(nz[j]) == std::abs(nz[i])) ++equal;
    }
    rank[i] = below + (equal + 1) / 2.0;
  }
  double observed = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (nz[i] > 0) observed += rank[i];
  long long hits = 0;
  const long long total = 1LL << n;
  for (long long mask = 0; mask < total; ++mask) {
    double w = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (mask >> i & 1) w += rank[i];
    if (w <= observed + 1e-9) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(total);
}

}  // namespace oracle
