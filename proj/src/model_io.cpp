#include <fstream>
#include <sstream>

#include <json.hpp>

#include "busdensity/classifiers.hpp"
#include "busdensity/csv.hpp"

namespace busdensity::classifiers {

using nlohmann::json;

namespace {

constexpr const char* kFormatTag = "busdensity-model";

json vec_json(const FeatureVector& v) { return json(std::vector<double>(v.begin(), v.end())); }

json to_json(const LogRegModel& m) {
  json weights = json::array();
  for (const auto& row : m.weights) weights.push_back(vec_json(row));
  return {
      {"hyperparameters",
       {{"C", m.config.C},
        {"penalty", std::string(penalty_name(m.config.penalty))},
        {"tolerance", m.config.tolerance},
        {"max_iterations", m.config.max_iterations}}},
      {"seed", nullptr},
      {"training", {{"iterations", m.iterations}, {"converged", m.converged}}},
      {"parameters", {{"weights", weights}, {"bias", std::vector<double>(m.bias.begin(), m.bias.end())}}},
  };
}

json to_json(const ForestModel& m) {
  json trees = json::array();
  for (const auto& t : m.trees) {
    std::vector<int> feature, left, right;
    std::vector<double> threshold;
    json counts = json::array();
    for (const auto& n : t.nodes) {
      feature.push_back(n.feature);
      threshold.push_back(n.threshold);
      left.push_back(n.left);
      right.push_back(n.right);
      counts.push_back(std::vector<double>(n.counts.begin(), n.counts.end()));
    }
    trees.push_back(
        {{"feature", feature}, {"threshold", threshold}, {"left", left}, {"right", right}, {"counts", counts}});
  }
  const auto& c = m.config;
  return {
      {"hyperparameters",
       {{"n_trees", c.n_trees},
        {"max_depth", c.max_depth ? json(*c.max_depth) : json(nullptr)},
        {"min_samples_leaf", c.min_samples_leaf},
        {"min_samples_split", c.min_samples_split},
        {"max_features", c.max_features},
        {"bootstrap", c.bootstrap}}},
      {"seed", c.seed},
      {"parameters", {{"trees", trees}}},
  };
}

json to_json(const MlpModel& m) {
  const auto& c = m.config;
  return {
      {"hyperparameters",
       {{"hidden", m.hidden},
        {"learning_rate", c.learning_rate},
        {"beta1", c.beta1},
        {"beta2", c.beta2},
        {"epsilon", c.epsilon},
        {"batch_size", c.batch_size},
        {"patience", c.patience},
        {"max_epochs", c.max_epochs},
        {"alpha", c.alpha}}},
      {"seed", c.seed},
      {"training",
       {{"best_epoch", m.best_epoch},
        {"best_validation_loss", m.best_validation_loss},
        {"training_curve", m.training_curve},
        {"validation_curve", m.validation_curve}}},
      {"parameters", {{"w1", m.w1}, {"b1", m.b1}, {"w2", m.w2}, {"b2", m.b2}}},
  };
}

template <std::size_t N>
std::array<double, N> fixed_array(const json& j) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != N) throw Error("bad_model_file", "parameter array has wrong length");
  std::array<double, N> out;
  std::copy(v.begin(), v.end(), out.begin());
  return out;
}

LogRegModel logreg_from(const json& doc) {
  LogRegModel m;
  const auto& h = doc.at("hyperparameters");
  m.config.C = h.at("C").get<double>();
  const auto penalty = parse_penalty(h.at("penalty").get<std::string>());
  if (!penalty) throw Error("bad_model_file", "unknown penalty");
  m.config.penalty = *penalty;
  m.config.tolerance = h.at("tolerance").get<double>();
  m.config.max_iterations = h.at("max_iterations").get<int>();
  m.iterations = doc.at("training").at("iterations").get<int>();
  m.converged = doc.at("training").at("converged").get<bool>();
  const auto& p = doc.at("parameters");
  const auto& w = p.at("weights");
  if (!w.is_array() || w.size() != kNumDensity) throw Error("bad_model_file", "logreg weights must be 4 x 16");
  for (int k = 0; k < kNumDensity; ++k) m.weights[k] = fixed_array<kNumBins>(w[k]);
  m.bias = fixed_array<kNumDensity>(p.at("bias"));
  return m;
}

ForestModel forest_from(const json& doc) {
  ForestModel m;
  const auto& h = doc.at("hyperparameters");
  m.config.n_trees = h.at("n_trees").get<int>();
  if (!h.at("max_depth").is_null()) m.config.max_depth = h.at("max_depth").get<int>();
  m.config.min_samples_leaf = h.at("min_samples_leaf").get<int>();
  m.config.min_samples_split = h.at("min_samples_split").get<int>();
  m.config.max_features = h.at("max_features").get<int>();
  m.config.bootstrap = h.at("bootstrap").get<bool>();
  m.config.seed = doc.at("seed").get<std::uint64_t>();
  for (const auto& t : doc.at("parameters").at("trees")) {
    const auto feature = t.at("feature").get<std::vector<int>>();
    const auto threshold = t.at("threshold").get<std::vector<double>>();
    const auto left = t.at("left").get<std::vector<int>>();
    const auto right = t.at("right").get<std::vector<int>>();
    const auto& counts = t.at("counts");
    const std::size_t n = feature.size();
    if (n == 0 || threshold.size() != n || left.size() != n || right.size() != n || counts.size() != n)
      throw Error("bad_model_file", "inconsistent tree arrays");
    DecisionTree tree;
    tree.nodes.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      auto& node = tree.nodes[i];
      node.feature = feature[i];
      node.threshold = threshold[i];
      node.left = left[i];
      node.right = right[i];
      node.counts = fixed_array<kNumDensity>(counts[i]);
      if (node.feature >= kNumBins) throw Error("bad_model_file", "tree feature index out of range");
      if (!node.is_leaf()) {
        const auto in_range = [&](int c) { return c > static_cast<int>(i) && c < static_cast<int>(n); };
        if (!in_range(node.left) || !in_range(node.right))
          throw Error("bad_model_file", "tree child index out of range");
      }
    }
    m.trees.push_back(std::move(tree));
  }
  return m;
}

MlpModel mlp_from(const json& doc) {
  const auto& h = doc.at("hyperparameters");
  const int hidden = h.at("hidden").get<int>();
  if (hidden < 1) throw Error("bad_model_file", "hidden width must be positive");
  MlpModel m;
  m.hidden = hidden;
  m.config.hidden = hidden;
  m.config.learning_rate = h.at("learning_rate").get<double>();
  m.config.beta1 = h.at("beta1").get<double>();
  m.config.beta2 = h.at("beta2").get<double>();
  m.config.epsilon = h.at("epsilon").get<double>();
  m.config.batch_size = h.at("batch_size").get<int>();
  m.config.patience = h.at("patience").get<int>();
  m.config.max_epochs = h.at("max_epochs").get<int>();
  m.config.alpha = h.at("alpha").get<double>();
  m.config.seed = doc.at("seed").get<std::uint64_t>();
  const auto& tr = doc.at("training");
  m.best_epoch = tr.at("best_epoch").get<int>();
  m.best_validation_loss = tr.at("best_validation_loss").get<double>();
  m.training_curve = tr.at("training_curve").get<std::vector<double>>();
  m.validation_curve = tr.at("validation_curve").get<std::vector<double>>();
  const auto& p = doc.at("parameters");
  m.w1 = p.at("w1").get<std::vector<double>>();
  m.b1 = p.at("b1").get<std::vector<double>>();
  m.w2 = p.at("w2").get<std::vector<double>>();
  m.b2 = p.at("b2").get<std::vector<double>>();
  const auto H = static_cast<std::size_t>(hidden);
  if (m.w1.size() != kNumBins * H || m.b1.size() != H || m.w2.size() != kNumDensity * H ||
      m.b2.size() != kNumDensity)
    throw Error("bad_model_file", "MLP layer shapes are inconsistent");
  return m;
}

}  // namespace

std::string serialize_model(const Model& m) {
  json doc = std::visit([](const auto& model) { return to_json(model); }, m);
  doc["format"] = kFormatTag;
  doc["version"] = kModelFormatVersion;
  doc["library_version"] = std::string(kVersion);
  doc["kind"] = std::string(model_kind(m));
  doc["training_digest"] = std::visit([](const auto& model) { return model.training_digest; }, m);
  return doc.dump(1) + "\n";
}

Model deserialize_model(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw Error("bad_model_file", std::string("model file is not valid JSON: ") + e.what());
  }
  try {
    if (!doc.is_object() || doc.value("format", "") != kFormatTag)
      throw Error("bad_model_file", "missing busdensity-model format tag");
    const int version = doc.at("version").get<int>();
    if (version != kModelFormatVersion)
      throw Error("version_mismatch", "model format version " + std::to_string(version) + ", expected " +
                                          std::to_string(kModelFormatVersion));
    const auto kind = doc.at("kind").get<std::string>();
    Model out;
    if (kind == "logreg")
      out = logreg_from(doc);
    else if (kind == "forest")
      out = forest_from(doc);
    else if (kind == "mlp")
      out = mlp_from(doc);
    else
      throw Error("bad_model_file", "unknown model kind '" + kind + "'");
    const auto digest = doc.at("training_digest").get<std::string>();
    std::visit([&](auto& model) { model.training_digest = digest; }, out);
    return out;
  } catch (const json::exception& e) {
    throw Error("bad_model_file", std::string("malformed model file: ") + e.what());
  }
}

void save_model(const Model& m, const std::filesystem::path& path) { csv::write_text(path, serialize_model(m)); }

Model load_model(const std::filesystem::path& path, const std::string& expected_digest,
                 std::vector<std::string>* warnings) {
  Model m = deserialize_model(csv::read_text(path));
  if (!expected_digest.empty()) {
    const auto stored = std::visit([](const auto& model) { return model.training_digest; }, m);
    if (stored != expected_digest && warnings)
      warnings->push_back("digest_mismatch: model trained on " + stored + ", expected " + expected_digest);
  }
  return m;
}

}  // namespace busdensity::classifiers
