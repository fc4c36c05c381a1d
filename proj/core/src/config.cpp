// SPDX-License-Identifier: Apache-2.0
#include "smartfreeze/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "json.hpp"

#include "smartfreeze/error.hpp"
#include "smartfreeze/progressive.hpp"

namespace smartfreeze {

using nlohmann::json;

namespace {

std::string join_lines(const std::vector<std::string>& lines) {
  std::string out;
  for (const auto& l : lines) {
    if (!out.empty()) out += "; ";
    out += l;
  }
  return out;
}

// Walks one JSON object, remembering which keys were consumed so leftovers
// can be reported as unknown.
class Section {
 public:
  Section(const json* node, std::string path, std::vector<std::string>& errors)
      : node_(node), path_(std::move(path)), errors_(errors) {
    if (node_ != nullptr && !node_->is_object()) {
      fail("", "expected an object");
      node_ = nullptr;
    }
  }

  Section child(const std::string& key) {
    return Section(lookup(key), join(key), errors_);
  }

  const json* lookup(const std::string& key) {
    if (node_ == nullptr) return nullptr;
    seen_.insert(key);
    auto it = node_->find(key);
    return it == node_->end() ? nullptr : &*it;
  }

  bool has(const std::string& key) const {
    return node_ != nullptr && node_->contains(key);
  }

  void real(const std::string& key, double& out,
            const std::function<bool(double)>& ok = {}, const char* rule = "") {
    const json* v = lookup(key);
    if (v == nullptr) return;
    if (!v->is_number()) return fail(key, "expected a number");
    const double d = v->get<double>();
    if (!std::isfinite(d) || (ok && !ok(d))) return fail(key, std::string("out of range: ") + rule);
    out = d;
  }

  template <class Int>
  void integer(const std::string& key, Int& out, std::uint64_t min = 0,
               std::uint64_t max = UINT64_MAX) {
    const json* v = lookup(key);
    if (v == nullptr) return;
    if (!v->is_number_unsigned()) {
      return fail(key, "expected a non-negative integer");
    }
    const auto u = v->get<std::uint64_t>();
    if (u < min || u > max) {
      return fail(key, "out of range: must be in [" + std::to_string(min) + ", " +
                           (max == UINT64_MAX ? std::string("inf") : std::to_string(max)) + "]");
    }
    out = static_cast<Int>(u);
  }

  void text(const std::string& key, std::string& out) {
    const json* v = lookup(key);
    if (v == nullptr) return;
    if (!v->is_string()) return fail(key, "expected a string");
    out = v->get<std::string>();
  }

  bool index_list(const std::string& key, std::vector<std::size_t>& out) {
    const json* v = lookup(key);
    if (v == nullptr) return false;
    if (!v->is_array()) {
      fail(key, "expected an array of non-negative integers");
      return false;
    }
    std::vector<std::size_t> values;
    for (std::size_t i = 0; i < v->size(); ++i) {
      const json& e = (*v)[i];
      if (!e.is_number_unsigned()) {
        fail(key + "[" + std::to_string(i) + "]", "expected a non-negative integer");
        return false;
      }
      values.push_back(e.get<std::size_t>());
    }
    out = std::move(values);
    return true;
  }

  void fail(const std::string& key, const std::string& message) {
    errors_.push_back(join(key) + ": " + message);
  }

  // Reports keys present in the object but never looked up.
  void finish() {
    if (node_ == nullptr) return;
    for (const auto& [key, value] : node_->items()) {
      if (!seen_.contains(key)) fail(key, "unknown key");
    }
  }

  const std::string& path() const noexcept { return path_; }
  bool present() const noexcept { return node_ != nullptr; }

 private:
  std::string join(const std::string& key) const {
    if (key.empty()) return path_.empty() ? "<root>" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

  const json* node_;
  std::string path_;
  std::vector<std::string>& errors_;
  std::set<std::string> seen_;
};

json layer_to_json(const LayerSpec& s) {
  json j{{"kind", to_string(s.kind)}};
  if (s.kind == LayerKind::dense) {
    j["in"] = s.in;
    j["out"] = s.out;
  } else if (s.kind == LayerKind::conv2d) {
    j["in"] = s.in;
    j["out"] = s.out;
    j["kernel"] = s.kernel;
    j["stride"] = s.stride;
    j["pad"] = s.pad;
  }
  return j;
}

void parse_layers(const json& arr, const std::string& path, std::vector<LayerSpec>& out,
                  std::vector<std::string>& errors) {
  if (!arr.is_array() || arr.empty()) {
    errors.push_back(path + ": expected a non-empty array of layers");
    return;
  }
  for (std::size_t i = 0; i < arr.size(); ++i) {
    Section s(&arr[i], path + "[" + std::to_string(i) + "]", errors);
    if (!s.present()) continue;
    std::string kind;
    s.text("kind", kind);
    LayerSpec spec;
    try {
      spec.kind = layer_kind_from_string(kind);
    } catch (const ConfigError&) {
      s.fail("kind", "unknown layer kind '" + kind + "'");
      s.finish();
      continue;
    }
    if (spec.kind == LayerKind::dense || spec.kind == LayerKind::conv2d) {
      if (!s.has("in")) s.fail("in", "missing required field");
      if (!s.has("out")) s.fail("out", "missing required field");
      s.integer("in", spec.in, 1);
      s.integer("out", spec.out, 1);
    }
    if (spec.kind == LayerKind::conv2d) {
      if (!s.has("kernel")) s.fail("kernel", "missing required field");
      s.integer("kernel", spec.kernel, 1);
      s.integer("stride", spec.stride, 1);
      s.integer("pad", spec.pad);
    }
    s.finish();
    out.push_back(spec);
  }
}

void validate_model(const ExperimentConfig& c, std::vector<std::string>& errors) {
  if (c.model.layers.empty()) return;
  try {
    Network shapes{c.model.input_shape, {}};
    for (const auto& spec : c.model.layers) shapes.layers.push_back(Layer{spec, {}, {}});
    const auto outs = shapes.output_shapes();
    if (outs.back().size() != 1 || outs.back()[0] != c.dataset.num_classes) {
      errors.push_back("model.layers: output shape " + shape_to_string(outs.back()) +
                       " does not match dataset.num_classes = " +
                       std::to_string(c.dataset.num_classes));
    }
    if (!c.model.layers.back().has_parameters()) {
      errors.push_back("model.layers: the last layer must be a dense classifier");
    }
    Rng rng(0);
    partition_model(make_network(c.model.input_shape, c.model.layers, rng), c.model.boundaries);
  } catch (const ConfigError& e) {
    errors.push_back(std::string("model: ") + e.what());
  }
  for (std::size_t i = 0; i < c.analysis.layers.size(); ++i) {
    const std::size_t l = c.analysis.layers[i];
    if (l >= c.model.layers.size()) {
      errors.push_back("analysis.layers[" + std::to_string(i) + "]: layer " + std::to_string(l) +
                       " does not exist");
    }
  }
}

}  // namespace

ConfigErrors::ConfigErrors(std::vector<std::string> problems)
    : ConfigError(join_lines(problems)), problems_(std::move(problems)) {}

ModelConfig model_preset(const std::string& name, std::size_t num_classes) {
  using S = LayerSpec;
  ModelConfig m;
  if (name == "reference_cnn") {
    m.input_shape = {1, 8, 8};
    const std::size_t widths[] = {8, 16, 32, 64};
    std::size_t in = 1;
    for (std::size_t b = 0; b < 4; ++b) {
      const std::size_t w = widths[b];
      m.layers.insert(m.layers.end(), {S::conv2d(in, w, 3, 1, 1), S::relu(),
                                       S::conv2d(w, w, 3, 1, 1), S::relu()});
      if (b < 3) m.layers.push_back(S::maxpool2x2());
      in = w;
    }
    m.layers.push_back(S::flatten());
    m.layers.push_back(S::dense(64, num_classes));
    m.boundaries = {5, 10, 15};
  } else if (name == "tiny_mlp") {
    m.input_shape = {2};
    m.layers = {S::dense(2, 16), S::relu(), S::dense(16, 16), S::relu(), S::dense(16, num_classes)};
    m.boundaries = {2};
  } else {
    throw ConfigError("unknown model preset '" + name + "'");
  }
  return m;
}

ExperimentConfig parse_config_text(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigErrors({std::string("<root>: malformed JSON: ") + e.what()});
  }
  std::vector<std::string> errors;
  ExperimentConfig c;
  Section top(&root, "", errors);
  top.integer("seed", c.seed);
  top.text("output_dir", c.output_dir);

  {
    auto d = top.child("dataset");
    d.text("kind", c.dataset.kind);
    if (c.dataset.kind != "blob_images" && c.dataset.kind != "blobs") {
      d.fail("kind", "expected \"blob_images\" or \"blobs\"");
    }
    d.integer("num_classes", c.dataset.num_classes, 2);
    d.integer("train_per_class", c.dataset.train_per_class, 1);
    d.integer("test_per_class", c.dataset.test_per_class, 1);
    d.real("noise", c.dataset.noise, [](double v) { return v >= 0; }, ">= 0");
    d.real("separation", c.dataset.separation, [](double v) { return v > 0; }, "> 0");
    d.finish();
  }

  if (!top.has("model")) {
    top.fail("model", "missing required field");
  } else {
    auto m = top.child("model");
    std::string preset;
    m.text("preset", preset);
    if (!preset.empty()) {
      if (m.has("layers") || m.has("input_shape")) {
        m.fail("preset", "cannot be combined with explicit layers or input_shape");
      }
      try {
        c.model = model_preset(preset, c.dataset.num_classes);
      } catch (const ConfigError& e) {
        m.fail("preset", e.what());
      }
      m.index_list("boundaries", c.model.boundaries);
    } else {
      if (!m.has("input_shape")) m.fail("input_shape", "missing required field");
      if (!m.has("layers")) m.fail("layers", "missing required field");
      if (!m.has("boundaries")) m.fail("boundaries", "missing required field");
      if (m.index_list("input_shape", c.model.input_shape)) {
        for (std::size_t d : c.model.input_shape) {
          if (d == 0) m.fail("input_shape", "dimensions must be positive");
        }
      }
      if (const json* layers = m.lookup("layers")) {
        parse_layers(*layers, m.path() + ".layers", c.model.layers, errors);
      }
      m.index_list("boundaries", c.model.boundaries);
    }
    m.finish();
  }

  {
    auto f = top.child("fleet");
    f.integer("num_clients", c.fleet.num_clients, 1);
    f.real("alpha", c.fleet.alpha, [](double v) { return v > 0; }, "> 0");
    f.real("compute_min", c.fleet.compute_min, [](double v) { return v > 0; }, "> 0");
    f.real("compute_max", c.fleet.compute_max, [](double v) { return v > 0; }, "> 0");
    if (c.fleet.compute_max < c.fleet.compute_min) {
      f.fail("compute_max", "must be >= compute_min");
    }
    if (const json* tiers = f.lookup("memory_tiers")) {
      const std::string base = f.path() + ".memory_tiers";
      if (!tiers->is_array() || tiers->empty()) {
        errors.push_back(base + ": expected a non-empty array");
      } else {
        c.fleet.memory_tiers.clear();
        double total = 0.0;
        for (std::size_t i = 0; i < tiers->size(); ++i) {
          Section t(&(*tiers)[i], base + "[" + std::to_string(i) + "]", errors);
          MemoryTier tier;
          t.text("name", tier.name);
          if (!t.has("capacity_bytes")) t.fail("capacity_bytes", "missing required field");
          if (!t.has("proportion")) t.fail("proportion", "missing required field");
          t.integer("capacity_bytes", tier.capacity_bytes, 1);
          t.real("proportion", tier.proportion, [](double v) { return v >= 0 && v <= 1; }, "[0, 1]");
          t.finish();
          total += tier.proportion;
          c.fleet.memory_tiers.push_back(tier);
        }
        if (std::abs(total - 1.0) > 1e-9) {
          errors.push_back(base + ": proportions sum to " + std::to_string(total) + ", expected 1");
        }
      }
    }
    f.finish();
  }

  {
    auto p = top.child("pace");
    p.integer("window", c.pace.window, 1);
    p.integer("smoothing", c.pace.smoothing, 1);
    p.real("slope_threshold", c.pace.slope_threshold, [](double v) { return v >= 0; }, ">= 0");
    p.integer("patience", c.pace.patience, 1);
    p.integer("stage_round_cap", c.pace.stage_round_cap, 1);
    p.finish();
  }

  {
    auto s = top.child("selector");
    if (const json* l = s.lookup("lambda"); l != nullptr && !l->is_null()) {
      if (!l->is_number() || l->get<double>() < 0) {
        s.fail("lambda", "out of range: >= 0 or null");
      } else {
        c.selector.lambda = l->get<double>();
      }
    }
    s.real("epsilon", c.selector.epsilon, [](double v) { return v >= 0 && v <= 1; }, "[0, 1]");
    if (const json* m = s.lookup("min_eligible"); m != nullptr && !m->is_null()) {
      if (!m->is_number_unsigned() || m->get<std::uint64_t>() == 0) {
        s.fail("min_eligible", "out of range: integer >= 1 or null");
      } else {
        c.selector.min_eligible = m->get<std::size_t>();
      }
    }
    s.integer("min_total_data", c.selector.min_total_data);
    s.integer("cohort_size", c.selector.cohort_size, 1);
    s.real("diversity_floor", c.selector.diversity_floor, [](double v) { return v > 0; }, "> 0");
    s.real("hierarchy_delta", c.selector.hierarchy_delta, [](double v) { return v >= 0; }, ">= 0");
    s.finish();
    if (c.selector.cohort_size > c.fleet.num_clients) {
      errors.push_back("selector.cohort_size: exceeds fleet.num_clients");
    }
    if (c.selector.min_eligible && *c.selector.min_eligible > c.fleet.num_clients) {
      errors.push_back("selector.min_eligible: exceeds fleet.num_clients");
    }
  }

  {
    auto t = top.child("training");
    t.integer("local_epochs", c.training.local_epochs, 1);
    t.integer("batch_size", c.training.batch_size, 1);
    t.integer("probe_epochs", c.training.probe_epochs, 1);
    t.real("rho", c.training.rho, [](double v) { return v > 0; }, "> 0");
    auto o = t.child("sgd");
    o.real("lr", c.training.sgd.lr, [](double v) { return v > 0; }, "> 0");
    o.real("momentum", c.training.sgd.momentum, [](double v) { return v >= 0 && v < 1; }, "[0, 1)");
    o.real("weight_decay", c.training.sgd.weight_decay, [](double v) { return v >= 0; }, ">= 0");
    o.finish();
    t.finish();
  }

  {
    auto b = top.child("baseline");
    b.integer("rounds", c.baseline.rounds, 1);
    b.finish();
  }

  {
    auto a = top.child("analysis");
    a.integer("reference_epochs", c.analysis.reference_epochs, 1);
    a.integer("rounds", c.analysis.rounds, 1);
    a.index_list("layers", c.analysis.layers);
    a.integer("probe_samples", c.analysis.probe_samples, 2);
    a.real("stability_tolerance", c.analysis.stability_tolerance, [](double v) { return v > 0; }, "> 0");
    a.finish();
  }
  top.finish();

  if (c.dataset.kind == "blob_images" && !c.model.input_shape.empty() && c.model.input_shape.size() != 3) {
    errors.push_back("dataset.kind: blob_images needs a C x H x W model input");
  }
  if (c.dataset.kind == "blobs" && !c.model.input_shape.empty() && c.model.input_shape.size() != 1) {
    errors.push_back("dataset.kind: blobs needs a flat model input");
  }
  if (c.dataset.train_per_class * c.dataset.num_classes < c.fleet.num_clients) {
    errors.push_back("fleet.num_clients: more clients than training samples");
  }
  if (errors.empty()) validate_model(c, errors);
  if (!errors.empty()) throw ConfigErrors(std::move(errors));
  return c;
}

ExperimentConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigErrors({"<file>: cannot open " + path.string()});
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

std::string serialize_config(const ExperimentConfig& c) {
  json layers = json::array();
  for (const auto& l : c.model.layers) layers.push_back(layer_to_json(l));
  json tiers = json::array();
  for (const auto& t : c.fleet.memory_tiers) {
    tiers.push_back({{"name", t.name}, {"capacity_bytes", t.capacity_bytes}, {"proportion", t.proportion}});
  }
  json root{
      {"seed", c.seed},
      {"output_dir", c.output_dir},
      {"model", {{"input_shape", c.model.input_shape}, {"layers", layers}, {"boundaries", c.model.boundaries}}},
      {"dataset",
       {{"kind", c.dataset.kind},
        {"num_classes", c.dataset.num_classes},
        {"train_per_class", c.dataset.train_per_class},
        {"test_per_class", c.dataset.test_per_class},
        {"noise", c.dataset.noise},
        {"separation", c.dataset.separation}}},
      {"fleet",
       {{"num_clients", c.fleet.num_clients},
        {"alpha", c.fleet.alpha},
        {"memory_tiers", tiers},
        {"compute_min", c.fleet.compute_min},
        {"compute_max", c.fleet.compute_max}}},
      {"pace",
       {{"window", c.pace.window},
        {"smoothing", c.pace.smoothing},
        {"slope_threshold", c.pace.slope_threshold},
        {"patience", c.pace.patience},
        {"stage_round_cap", c.pace.stage_round_cap}}},
      {"selector",
       {{"lambda", c.selector.lambda ? json(*c.selector.lambda) : json(nullptr)},
        {"epsilon", c.selector.epsilon},
        {"min_eligible", c.selector.min_eligible ? json(*c.selector.min_eligible) : json(nullptr)},
        {"min_total_data", c.selector.min_total_data},
        {"cohort_size", c.selector.cohort_size},
        {"diversity_floor", c.selector.diversity_floor},
        {"hierarchy_delta", c.selector.hierarchy_delta}}},
      {"training",
       {{"local_epochs", c.training.local_epochs},
        {"batch_size", c.training.batch_size},
        {"probe_epochs", c.training.probe_epochs},
        {"rho", c.training.rho},
        {"sgd",
         {{"lr", c.training.sgd.lr},
          {"momentum", c.training.sgd.momentum},
          {"weight_decay", c.training.sgd.weight_decay}}}}},
      {"baseline", {{"rounds", c.baseline.rounds}}},
      {"analysis",
       {{"reference_epochs", c.analysis.reference_epochs},
        {"rounds", c.analysis.rounds},
        {"layers", c.analysis.layers},
        {"probe_samples", c.analysis.probe_samples},
        {"stability_tolerance", c.analysis.stability_tolerance}}},
  };
  return root.dump(2) + "\n";
}

Network build_model(const ModelConfig& model, std::uint64_t seed) {
  Rng rng(derive_seed(seed, {0x1417}));
  return make_network(model.input_shape, model.layers, rng);
}

std::size_t min_eligible_clients(const ExperimentConfig& c) {
  if (c.selector.min_eligible) return *c.selector.min_eligible;
  const auto n = static_cast<double>(c.fleet.num_clients);
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(0.05 * n - 1e-9)));
}

SyntheticSpec synthetic_spec(const ExperimentConfig& c) {
  SyntheticSpec s;
  s.kind = c.dataset.kind;
  s.sample_shape = c.model.input_shape;
  s.num_classes = c.dataset.num_classes;
  s.train_per_class = c.dataset.train_per_class;
  s.test_per_class = c.dataset.test_per_class;
  s.noise = c.dataset.noise;
  s.separation = c.dataset.separation;
  return s;
}

}  // namespace smartfreeze
