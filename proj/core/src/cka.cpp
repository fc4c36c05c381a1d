// SPDX-License-Identifier: Apache-2.0
#include "smartfreeze/cka.hpp"

#include <algorithm>
#include <cmath>

#include "smartfreeze/error.hpp"

namespace smartfreeze {

namespace {

// Centered Gram matrix K = Xc Xc^T of an N x p activation matrix.
std::vector<double> centered_gram(const Tensor& x, std::size_t n) {
  const std::size_t p = x.size() / n;
  std::vector<double> xc(x.values().begin(), x.values().end());
  for (std::size_t j = 0; j < p; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += xc[i * p + j];
    mean /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) xc[i * p + j] -= mean;
  }
  std::vector<double> k(n * n, 0.0);
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = a; b < n; ++b) {
      double s = 0.0;
      for (std::size_t j = 0; j < p; ++j) s += xc[a * p + j] * xc[b * p + j];
      k[a * n + b] = k[b * n + a] = s;
    }
  }
  return k;
}

}  // namespace

double cka_linear(const Tensor& x, const Tensor& y) {
  if (x.rank() < 2 || y.rank() < 2) throw ContractError("CKA inputs need a sample axis and features");
  const std::size_t n = x.dim(0);
  if (y.dim(0) != n) throw ContractError("CKA inputs have different sample counts");
  if (n < 2) throw ContractError("CKA needs at least 2 samples");
  // ||Yc^T Xc||_F^2 = <Kx, Ky> and ||Xc^T Xc||_F = ||Kx||_F for Gram matrices.
  const auto kx = centered_gram(x, n);
  const auto ky = centered_gram(y, n);
  double cross = 0.0, xx = 0.0, yy = 0.0;
  for (std::size_t i = 0; i < kx.size(); ++i) {
    cross += kx[i] * ky[i];
    xx += kx[i] * kx[i];
    yy += ky[i] * ky[i];
  }
  if (xx <= 0.0 || yy <= 0.0) throw UndefinedMetricError("CKA undefined for zero-variance activations");
  const double v = cross / (std::sqrt(xx) * std::sqrt(yy));
  return std::clamp(v, 0.0, 1.0);
}

std::vector<double> cka_trace(const Network& trained, const Network& reference,
                              const Tensor& probe, std::span<const std::size_t> layers) {
  for (std::size_t l : layers) {
    if (l >= trained.layers.size() || l >= reference.layers.size()) {
      throw ConfigError("CKA layer " + std::to_string(l) + " missing from one of the networks");
    }
    if (!trained.layers[l].spec.same_architecture(reference.layers[l].spec)) {
      throw ConfigError("CKA layer " + std::to_string(l) + " differs between the networks");
    }
  }
  const auto a = forward(trained, probe);
  const auto b = forward(reference, probe);
  std::vector<double> out;
  for (std::size_t l : layers) out.push_back(cka_linear(a[l], b[l]));
  return out;
}

std::optional<std::size_t> stabilization_index(std::span<const double> series, double tolerance) {
  if (series.empty()) return std::nullopt;
  const double last = series.back();
  std::size_t k = series.size() - 1;
  while (k > 0 && std::abs(series[k - 1] - last) <= tolerance) --k;
  return k;
}

CkaTracker::CkaTracker(Network reference, Tensor probe, std::vector<std::size_t> layers)
    : reference_(std::move(reference)), probe_(std::move(probe)), layers_(std::move(layers)) {
  if (layers_.empty()) throw ConfigError("CKA needs at least one layer");
}

const std::vector<double>& CkaTracker::observe(std::size_t round, const Network& model) {
  rounds_.push_back(round);
  values_.push_back(cka_trace(model, reference_, probe_, layers_));
  return values_.back();
}

std::vector<double> CkaTracker::series(std::size_t position) const {
  std::vector<double> out;
  for (const auto& row : values_) out.push_back(row.at(position));
  return out;
}

std::vector<std::optional<std::size_t>> CkaTracker::stabilization_rounds(double tolerance) const {
  std::vector<std::optional<std::size_t>> out;
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    const auto s = series(k);
    const auto idx = stabilization_index(s, tolerance);
    out.push_back(idx ? std::optional(rounds_[*idx]) : std::nullopt);
  }
  return out;
}

}  // namespace smartfreeze
