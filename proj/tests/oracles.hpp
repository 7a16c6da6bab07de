#pragma once

// Reference implementations used only by tests. Each is written with plain
// loops over std::vector and shares no code path with the library it checks.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <random>
#include <vector>

namespace oracle {

using Matrix = std::vector<std::vector<double>>;

inline Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& gen, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  Matrix m(r, std::vector<double>(c));
  for (auto& row : m)
    for (double& v : row) v = d(gen);
  return m;
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  Matrix out(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b[0].size(); ++j)
      for (std::size_t k = 0; k < b.size(); ++k) out[i][j] += a[i][k] * b[k][j];
  return out;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  return dot(a, b) / (std::sqrt(dot(a, a)) * std::sqrt(dot(b, b)));
}

/// Two-pass log-softmax without max subtraction.
inline std::vector<double> naive_log_softmax(const std::vector<double>& row) {
  double s = 0.0;
  for (double v : row) s += std::exp(v);
  std::vector<double> out;
  for (double v : row) out.push_back(v - std::log(s));
  return out;
}

/// Symmetric InfoNCE written as the double sum over the batch.
inline double naive_cl_loss(const Matrix& a, const Matrix& b, double tau) {
  const std::size_t n = a.size();
  double a2b = 0.0, b2a = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double denom = 0.0;
    for (std::size_t k = 0; k < n; ++k) denom += std::exp(cosine(a[i], b[k]) / tau);
    a2b -= std::log(std::exp(cosine(a[i], b[i]) / tau) / denom);
  }
  for (std::size_t j = 0; j < n; ++j) {
    double denom = 0.0;
    for (std::size_t k = 0; k < n; ++k) denom += std::exp(cosine(a[k], b[j]) / tau);
    b2a -= std::log(std::exp(cosine(a[j], b[j]) / tau) / denom);
  }
  return a2b + b2a;
}

/// Mean cross-entropy of softmax(scores / tau).
inline double naive_cls_loss(const Matrix& scores, const std::vector<std::size_t>& targets, double tau) {
  double total = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    double denom = 0.0;
    for (double s : scores[i]) denom += std::exp(s / tau);
    total += -std::log(std::exp(scores[i][targets[i]] / tau) / denom);
  }
  return total / static_cast<double>(scores.size());
}

inline std::size_t argmax(const std::vector<double>& row) {
  std::size_t best = 0;
  for (std::size_t j = 0; j < row.size(); ++j)
    if (row[j] > row[best]) best = j;
  return best;
}

inline double brute_top1(const Matrix& scores, const std::vector<std::size_t>& targets) {
  std::size_t ok = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) ok += argmax(scores[i]) == targets[i] ? 1 : 0;
  return static_cast<double>(ok) / static_cast<double>(scores.size());
}

inline double brute_mean1(const Matrix& scores, const std::vector<std::size_t>& targets) {
  const std::size_t classes = scores[0].size();
  double acc = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    std::size_t n = 0, ok = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (targets[i] != c) continue;
      ++n;
      if (argmax(scores[i]) == c) ++ok;
    }
    if (n) {
      acc += static_cast<double>(ok) / static_cast<double>(n);
      ++present;
    }
  }
  return acc / static_cast<double>(present);
}

/// Central finite-difference gradient of f at x.
inline std::vector<double> fd_gradient(const std::function<double(const std::vector<double>&)>& f,
                                       std::vector<double> x, double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double up = f(x);
    x[i] = orig - h;
    const double down = f(x);
    x[i] = orig;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

inline double max_rel_error(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-3) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    m = std::max(m, std::abs(a[i] - b[i]) / denom);
  }
  return m;
}

/// Singular values of a small matrix via one-sided Jacobi rotations.
inline std::vector<double> singular_values(Matrix a) {
  const std::size_t m = a.size(), n = a[0].size();
  for (int sweep = 0; sweep < 60; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          alpha += a[i][p] * a[i][p];
          beta += a[i][q] * a[i][q];
          gamma += a[i][p] * a[i][q];
        }
        if (std::abs(gamma) < 1e-300) continue;
        off = std::max(off, std::abs(gamma) / std::sqrt(alpha * beta));
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = (zeta >= 0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t), s = c * t;
        for (std::size_t i = 0; i < m; ++i) {
          const double ap = a[i][p], aq = a[i][q];
          a[i][p] = c * ap - s * aq;
          a[i][q] = s * ap + c * aq;
        }
      }
    }
    if (off < 1e-15) break;
  }
  std::vector<double> sv(n);
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) s += a[i][j] * a[i][j];
    sv[j] = std::sqrt(s);
  }
  std::sort(sv.rbegin(), sv.rend());
  return sv;
}

/// Solves A x = b for square A by Gaussian elimination with partial pivoting.
inline std::vector<double> solve(Matrix a, std::vector<double> b) {
  const std::size_t n = a.size();
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
    std::swap(a[col], a[piv]);
    std::swap(b[col], b[piv]);
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = a[r][col] / a[col][col];
      for (std::size_t c = col; c < n; ++c) a[r][c] -= f * a[col][c];
      b[r] -= f * b[col];
    }
  }
  std::vector<double> x(n);
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t c = i + 1; c < n; ++c) s -= a[i][c] * x[c];
    x[i] = s / a[i][i];
  }
  return x;
}

/// Multinomial logistic regression by full-batch gradient descent on
/// standardized features; returns test accuracy.
inline double logistic_probe_accuracy(const Matrix& train_x, const std::vector<std::size_t>& train_y,
                                      const Matrix& test_x, const std::vector<std::size_t>& test_y,
                                      std::size_t classes, int iterations = 300, double lr = 0.5) {
  const std::size_t d = train_x[0].size();
  std::vector<double> mu(d, 0.0), sd(d, 0.0);
  for (const auto& x : train_x)
    for (std::size_t j = 0; j < d; ++j) mu[j] += x[j] / static_cast<double>(train_x.size());
  for (const auto& x : train_x)
    for (std::size_t j = 0; j < d; ++j) sd[j] += (x[j] - mu[j]) * (x[j] - mu[j]) / static_cast<double>(train_x.size());
  for (double& s : sd) s = std::sqrt(s) + 1e-12;
  auto standardize = [&](const std::vector<double>& x) {
    std::vector<double> z(d);
    for (std::size_t j = 0; j < d; ++j) z[j] = (x[j] - mu[j]) / sd[j];
    return z;
  };
  Matrix w(classes, std::vector<double>(d + 1, 0.0));
  Matrix tx;
  for (const auto& x : train_x) tx.push_back(standardize(x));
  for (int it = 0; it < iterations; ++it) {
    Matrix grad(classes, std::vector<double>(d + 1, 0.0));
    for (std::size_t i = 0; i < tx.size(); ++i) {
      std::vector<double> logits(classes);
      for (std::size_t c = 0; c < classes; ++c) {
        logits[c] = w[c][d];
        for (std::size_t j = 0; j < d; ++j) logits[c] += w[c][j] * tx[i][j];
      }
      const double mx = *std::max_element(logits.begin(), logits.end());
      double s = 0.0;
      for (double& l : logits) s += (l = std::exp(l - mx));
      for (std::size_t c = 0; c < classes; ++c) {
        const double err = logits[c] / s - (c == train_y[i] ? 1.0 : 0.0);
        for (std::size_t j = 0; j < d; ++j) grad[c][j] += err * tx[i][j];
        grad[c][d] += err;
      }
    }
    for (std::size_t c = 0; c < classes; ++c)
      for (std::size_t j = 0; j <= d; ++j) w[c][j] -= lr * grad[c][j] / static_cast<double>(tx.size());
  }
  std::size_t ok = 0;
  for (std::size_t i = 0; i < test_x.size(); ++i) {
    const auto z = standardize(test_x[i]);
    std::vector<double> logits(classes);
    for (std::size_t c = 0; c < classes; ++c) {
      logits[c] = w[c][d];
      for (std::size_t j = 0; j < d; ++j) logits[c] += w[c][j] * z[j];
    }
    ok += argmax(logits) == test_y[i] ? 1 : 0;
  }
  return static_cast<double>(ok) / static_cast<double>(test_x.size());
}

}  // namespace oracle
