#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "busdensity/common.hpp"
#include "busdensity/features.hpp"

namespace busdensity::classifiers {

using features::FeatureVector;
using features::kNumBins;

/// Training rows. Every classifier requires at least two distinct labels and
/// finite features.
struct Dataset {
  std::vector<FeatureVector> X;
  std::vector<Density> y;

  std::size_t size() const noexcept { return X.size(); }
  void validate() const;
  /// Hex FNV-1a digest over features and labels.
  std::string digest() const;
  std::array<std::size_t, kNumDensity> class_counts() const;
};

// ---------------------------------------------------------------------------
// Multinomial logistic regression

enum class Penalty { none, l1, l2 };

std::string_view penalty_name(Penalty p) noexcept;
std::optional<Penalty> parse_penalty(std::string_view s) noexcept;

struct LogRegConfig {
  /// Inverse regularisation strength; the penalty enters the mean loss as
  /// penalty(W) / (C * n), so C keeps its usual meaning for summed losses.
  double C = 10.0;
  Penalty penalty = Penalty::l1;
  double tolerance = 1e-6;
  int max_iterations = 10'000;
};

struct LogRegModel {
  std::array<FeatureVector, kNumDensity> weights{};
  std::array<double, kNumDensity> bias{};
  LogRegConfig config;
  int iterations = 0;
  bool converged = false;
  std::string training_digest;
};

/// Parameter vector layout used by the objective helpers: 4 x 16 weights
/// (class-major) followed by 4 biases.
inline constexpr std::size_t kLogRegParams = kNumDensity * kNumBins + kNumDensity;
using LogRegParams = std::array<double, kLogRegParams>;

LogRegParams pack(const LogRegModel& m);
void unpack(const LogRegParams& p, LogRegModel& m);

/// Smooth part of the objective (mean cross-entropy plus the L2 term when the
/// penalty is L2). Writes the gradient when `grad` is non-null.
double logreg_smooth_loss(const LogRegParams& params, const Dataset& data, const LogRegConfig& cfg,
                          LogRegParams* grad = nullptr);
/// Full objective: smooth part plus the L1 term when the penalty is L1.
double logreg_objective(const LogRegParams& params, const Dataset& data, const LogRegConfig& cfg);

/// Monotone accelerated proximal gradient with backtracking. Stops when the
/// max-norm of the proximal gradient mapping drops below cfg.tolerance.
/// `objective_trace`, when given, receives the objective after each iteration.
LogRegModel train_logreg(const Dataset& data, const LogRegConfig& cfg = {},
                         std::vector<double>* objective_trace = nullptr);

// ---------------------------------------------------------------------------
// Random forest

struct ForestConfig {
  int n_trees = 200;
  std::optional<int> max_depth;
  int min_samples_leaf = 1;
  int min_samples_split = 2;
  /// Candidate features per node (sqrt of 16).
  int max_features = 4;
  bool bootstrap = true;
  std::uint64_t seed = 0;
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  /// Class counts of the training samples that reached the node.
  std::array<double, kNumDensity> counts{};

  bool is_leaf() const noexcept { return feature < 0; }
};

struct DecisionTree {
  std::vector<TreeNode> nodes;

  const TreeNode& leaf_for(const FeatureVector& x) const;
  DensityDistribution predict(const FeatureVector& x) const;
  int depth() const;
};

struct ForestModel {
  std::vector<DecisionTree> trees;
  ForestConfig config;
  std::string training_digest;
};

/// Grows one Gini CART tree on the given sample indices (duplicates allowed).
DecisionTree grow_tree(const Dataset& data, std::span<const std::size_t> samples,
                       const ForestConfig& cfg, std::uint64_t seed);

/// Tree i is grown from seed (cfg.seed ^ i), so results do not depend on the
/// number of worker threads.
ForestModel train_forest(const Dataset& data, const ForestConfig& cfg = {});

// ---------------------------------------------------------------------------
// Multi-layer perceptron: 16 -> hidden (ReLU) -> 4 (softmax)

struct MlpConfig {
  int hidden = 512;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int batch_size = 64;
  int patience = 25;
  int max_epochs = 200;
  /// L2 weight penalty, alpha / (2 * batch) * ||W||^2.
  double alpha = 1e-4;
  std::uint64_t seed = 0;
};

struct MlpModel {
  int hidden = 0;
  /// Input-major: w1[j * hidden + h].
  std::vector<double> w1;
  std::vector<double> b1;
  /// Class-major: w2[k * hidden + h].
  std::vector<double> w2;
  std::vector<double> b2;
  MlpConfig config;
  int best_epoch = -1;
  double best_validation_loss = 0.0;
  std::vector<double> validation_curve;
  std::vector<double> training_curve;
  std::string training_digest;

  /// Zero-valued parameters with the given hidden width.
  static MlpModel zeros(int hidden);
  std::size_t parameter_count() const { return w1.size() + b1.size() + w2.size() + b2.size(); }
  /// Visits every parameter in a fixed order (w1, b1, w2, b2).
  template <typename Fn>
  void for_each_parameter(Fn&& fn) {
    for (auto* v : {&w1, &b1, &w2, &b2})
      for (double& p : *v) fn(p);
  }
};

/// Glorot-uniform initialisation.
MlpModel init_mlp(const MlpConfig& cfg);

/// Mean cross-entropy over the rows plus the L2 term; accumulates the gradient
/// into `grad` (same shape as the model) when non-null.
double mlp_loss(const MlpModel& model, std::span<const FeatureVector> X, std::span<const Density> y,
                double alpha, MlpModel* grad = nullptr);

/// Adam with constant learning rate, shuffled mini-batches, early stopping on
/// validation loss; returns the best-validation snapshot.
MlpModel train_mlp(const Dataset& train, const Dataset& validation, const MlpConfig& cfg = {});

// ---------------------------------------------------------------------------

using Model = std::variant<LogRegModel, ForestModel, MlpModel>;

std::string_view model_kind(const Model& m) noexcept;

DensityDistribution predict_proba(const LogRegModel& m, const FeatureVector& x);
DensityDistribution predict_proba(const ForestModel& m, const FeatureVector& x);
DensityDistribution predict_proba(const MlpModel& m, const FeatureVector& x);
DensityDistribution predict_proba(const Model& m, const FeatureVector& x);

/// Numerically stable softmax over four logits.
DensityDistribution softmax(const std::array<double, kNumDensity>& logits);

// ---------------------------------------------------------------------------
// Serialisation (JSON container: format, version, kind, hyperparameters,
// seed, training digest, parameters).

inline constexpr int kModelFormatVersion = 1;

std::string serialize_model(const Model& m);
Model deserialize_model(std::string_view text);

void save_model(const Model& m, const std::filesystem::path& path);
/// When `expected_digest` is set and differs from the stored digest, a warning
/// is appended to `warnings` (the model still loads).
Model load_model(const std::filesystem::path& path, const std::string& expected_digest = {},
                 std::vector<std::string>* warnings = nullptr);

template <typename T>
T load_model_as(const std::filesystem::path& path) {
  Model m = load_model(path);
  if (auto* p = std::get_if<T>(&m)) return std::move(*p);
  throw Error("kind_mismatch", path.string() + " holds a " + std::string(model_kind(m)) + " model");
}

}  // namespace busdensity::classifiers
