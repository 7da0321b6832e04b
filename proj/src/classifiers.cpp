#include <algorithm>
#include <cmath>

#include "busdensity/classifiers.hpp"

namespace busdensity::classifiers {

void Dataset::validate() const {
  if (X.size() != y.size()) throw Error("shape_mismatch", "feature and label counts differ");
  const auto counts = class_counts();
  const auto present = std::count_if(counts.begin(), counts.end(), [](std::size_t c) { return c > 0; });
  if (present < 2) throw Error("single_class", "training data needs at least two distinct classes");
  for (const auto& row : X)
    for (double v : row)
      if (!std::isfinite(v)) throw Error("non_finite", "training features contain non-finite values");
}

std::string Dataset::digest() const {
  std::uint64_t h = fnv1a(X.data(), X.size() * sizeof(FeatureVector));
  h = fnv1a(y.data(), y.size() * sizeof(Density), h);
  return hex64(h);
}

std::array<std::size_t, kNumDensity> Dataset::class_counts() const {
  std::array<std::size_t, kNumDensity> c{};
  for (Density d : y) ++c[index_of(d)];
  return c;
}

DensityDistribution softmax(const std::array<double, kNumDensity>& logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  DensityDistribution out;
  double sum = 0.0;
  for (int k = 0; k < kNumDensity; ++k) {
    out.p[k] = std::exp(logits[k] - mx);
    sum += out.p[k];
  }
  for (double& v : out.p) v /= sum;
  return out;
}

std::string_view model_kind(const Model& m) noexcept {
  switch (m.index()) {
    case 0: return "logreg";
    case 1: return "forest";
    default: return "mlp";
  }
}

DensityDistribution predict_proba(const Model& m, const FeatureVector& x) {
  return std::visit([&](const auto& model) { return predict_proba(model, x); }, m);
}

}  // namespace busdensity::classifiers
