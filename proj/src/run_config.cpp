#include "ban/run_config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "ban/error.hpp"
#include "ban/rng.hpp"

namespace ban {

namespace {

struct KeyDefault {
  const char* key;
  const char* value;
};

// Canonical order for dump().
constexpr KeyDefault kDefaults[] = {
    {"seed", "42"},
    {"data_dir", "data"},
    {"threads", "1"},
    // dataset
    {"classes", "circle,square,triangle"},
    {"num_train_images", "500"},
    {"num_test_images", "100"},
    {"image_size", "128"},
    {"min_objects", "1"},
    {"max_objects", "4"},
    {"min_object_size", "16"},
    {"max_object_size", "48"},
    {"noise", "16"},
    {"max_object_overlap", "0.5"},
    // model
    {"backbone_channels", "16,32,64,128"},
    {"contexts", "S,V,B"},
    {"k", "5"},
    {"head_mode", "psroi"},
    {"shared_features", "true"},
    {"regression_dims", "4"},
    {"trunk_channels", "1024"},
    {"roi_feature_channels", "256"},
    // optimisation
    {"lr", "0.001"},
    {"lr_steps", "1400:0.0001"},
    {"momentum", "0.9"},
    {"weight_decay", "0.0001"},
    {"iterations", "2000"},
    {"images_per_batch", "2"},
    {"rois_per_image", "300"},
    {"ohem_keep", "128"},
    // proposals
    {"jitter_per_gt", "16"},
    {"center_jitter", "0.25"},
    {"scale_jitter", "0.3"},
    {"proposal_nms", "0.3"},
    {"random_min_size", "8"},
    {"random_max_fraction", "0.6"},
    // inference
    {"test_rois_per_image", "300"},
    {"detection_nms", "0.3"},
    {"max_detections", "100"},
    // analysis
    {"analyze_images", "100"},
    {"ablation_seeds", "42"},
    {"ablation_iterations", "2000"},
    {"heatmap_scale", "32"},
};

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(trim(item));
  return out;
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const char* end = text.data() + text.size();
  const auto [p, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || p != end || text.empty())
    throw ConfigError("key '" + key + "': cannot parse '" + text + "' as a number");
  return v;
}

}  // namespace

RunConfig::RunConfig() {
  for (const auto& kd : kDefaults) values_[kd.key] = kd.value;
}

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> out;
    for (const auto& kd : kDefaults) out.emplace_back(kd.key);
    return out;
  }();
  return k;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown key '" + key + "'");
  it->second = trim(value);
}

void RunConfig::merge_text(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line.substr(0, line.find('#')));
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key=value");
    try {
      set(trim(t.substr(0, eq)), t.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void RunConfig::merge_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file '" + path.string() + "'");
  std::ostringstream s;
  s << in.rdbuf();
  merge_text(s.str(), path.string());
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown key '" + key + "'");
  return it->second;
}

int RunConfig::get_int(const std::string& key) const { return parse_number<int>(key, get(key)); }
std::uint64_t RunConfig::get_u64(const std::string& key) const { return parse_number<std::uint64_t>(key, get(key)); }
double RunConfig::get_double(const std::string& key) const { return parse_number<double>(key, get(key)); }

bool RunConfig::get_bool(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("key '" + key + "': expected true/false, got '" + v + "'");
}

std::string RunConfig::dump() const {
  std::string out;
  for (const auto& k : keys()) out += k + "=" + values_.at(k) + "\n";
  return out;
}

std::vector<std::string> RunConfig::class_names() const {
  auto names = split(get("classes"), ',');
  if (names.empty()) throw ConfigError("classes must not be empty");
  return names;
}

ModelConfig RunConfig::model() const {
  ModelConfig m;
  m.backbone.channels.clear();
  for (const auto& c : split(get("backbone_channels"), ',')) m.backbone.channels.push_back(parse_number<int>("backbone_channels", c));
  m.head.contexts = parse_contexts(get("contexts"));
  m.head.k = get_int("k");
  const std::string& mode = get("head_mode");
  if (mode == "psroi") m.head.head_mode = PoolMode::PSRoI;
  else if (mode == "roi") m.head.head_mode = PoolMode::RoI;
  else throw ConfigError("head_mode must be psroi or roi, got '" + mode + "'");
  m.head.shared_features = get_bool("shared_features");
  m.head.num_classes = static_cast<int>(class_names().size());
  m.head.regression_dims = get_int("regression_dims");
  m.head.trunk_channels = get_int("trunk_channels");
  m.head.roi_feature_channels = get_int("roi_feature_channels");
  m.backbone.validate();
  m.head.validate();
  return m;
}

SgdConfig RunConfig::sgd() const {
  SgdConfig s;
  s.lr = get_double("lr");
  s.momentum = get_double("momentum");
  s.weight_decay = get_double("weight_decay");
  s.iterations = get_int("iterations");
  s.images_per_batch = get_int("images_per_batch");
  s.rois_per_image = get_int("rois_per_image");
  s.ohem_keep = get_int("ohem_keep");
  s.schedule.clear();
  const std::string steps = get("lr_steps");
  if (!steps.empty() && steps != "none")
    for (const auto& item : split(steps, ',')) {
      const auto colon = item.find(':');
      if (colon == std::string::npos) throw ConfigError("lr_steps entries must be iteration:lr, got '" + item + "'");
      s.schedule.emplace_back(parse_number<int>("lr_steps", trim(item.substr(0, colon))),
                              parse_number<double>("lr_steps", trim(item.substr(colon + 1))));
    }
  s.validate();
  return s;
}

ProposalConfig RunConfig::proposals() const {
  ProposalConfig p;
  p.jitter_per_gt = get_int("jitter_per_gt");
  p.center_jitter = get_double("center_jitter");
  p.scale_jitter = get_double("scale_jitter");
  p.nms_thresh = get_double("proposal_nms");
  p.random_min_size = get_double("random_min_size");
  p.random_max_fraction = get_double("random_max_fraction");
  return p;
}

DetectorConfig RunConfig::detector() const {
  DetectorConfig d;
  d.rois_per_image = get_int("test_rois_per_image");
  d.nms_thresh = get_double("detection_nms");
  d.max_detections = get_int("max_detections");
  d.seed = mix_seed(seed(), fnv1a("detect"));
  d.proposals = proposals();
  return d;
}

SyntheticSpec RunConfig::train_spec() const {
  SyntheticSpec s;
  s.num_images = get_int("num_train_images");
  s.image_size = get_int("image_size");
  s.classes = class_names();
  s.min_objects = get_int("min_objects");
  s.max_objects = get_int("max_objects");
  s.min_size = get_int("min_object_size");
  s.max_size = get_int("max_object_size");
  s.noise = get_int("noise");
  s.max_overlap = get_double("max_object_overlap");
  s.seed = seed();
  s.validate();
  return s;
}

SyntheticSpec RunConfig::test_spec() const {
  SyntheticSpec s = train_spec();
  s.num_images = get_int("num_test_images");
  s.seed = mix_seed(seed(), fnv1a("test"));
  s.validate();
  return s;
}

void RunConfig::validate() const {
  model();
  sgd();
  proposals();
  detector();
  train_spec();
  test_spec();
  if (get_int("threads") < 1) throw ConfigError("threads must be >= 1");
  if (get_int("analyze_images") < 1) throw ConfigError("analyze_images must be >= 1");
  if (get_int("heatmap_scale") < 1) throw ConfigError("heatmap_scale must be >= 1");
  if (get_int("ablation_iterations") < 1) throw ConfigError("ablation_iterations must be >= 1");
  for (const auto& s : split(get("ablation_seeds"), ',')) parse_number<std::uint64_t>("ablation_seeds", s);
}

}  // namespace ban
