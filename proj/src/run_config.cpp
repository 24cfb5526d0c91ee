#include "advforge/run_config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "advforge/random.hpp"

namespace advforge {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    std::size_t v = 0;
    const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (ec != std::errc() || ptr != item.data() + item.size() || v == 0) {
      throw ConfigError(key, "config key '" + key + "': expected a comma-separated list of positive integers, got '" +
                                 text + "'");
    }
    out.push_back(v);
  }
  return out;
}

}  // namespace

const std::map<std::string, std::string>& RunConfig::defaults() {
  // MNIST protocol: eps 0.3, step 0.01, K 40, lambda 0.5/0.5,
  // lr 3e-4 dropped 10x at epoch 150, batch 64.
  static const std::map<std::string, std::string> table = {
      {"seed", "0"},
      {"model.architecture", "lenet"},
      {"model.channels", ""},
      {"model.classes", "10"},
      {"data.source", "mnist"},
      {"data.dir", ""},
      {"data.train_images", ""},
      {"data.train_labels", ""},
      {"data.test_images", ""},
      {"data.test_labels", ""},
      {"data.train_limit", "0"},
      {"data.test_limit", "0"},
      {"data.synthetic_train", "2000"},
      {"data.synthetic_test", "500"},
      {"data.synthetic_side", "16"},
      {"train.regime", "vanilla"},
      {"train.epochs", "10"},
      {"train.batch_size", "64"},
      {"train.lr", "0.0003"},
      {"train.lr_drop_epoch", "150"},
      {"train.lr_drop_factor", "0.1"},
      {"train.lambda1", "0.5"},
      {"train.lambda2", "0.5"},
      {"train.beta1", "0.9"},
      {"train.beta2", "0.999"},
      {"train.adam_eps", "1e-08"},
      {"train.eval_limit", "1000"},
      {"train.checkpoint_every", "0"},
      {"attack.epsilon", "0.3"},
      {"attack.step", "0.01"},
      {"attack.iterations", "40"},
      {"attack.random_start", "true"},
      {"attack.label_source", "ground_truth"},
      {"output.dir", "runs"},
  };
  return table;
}

RunConfig::RunConfig() : values_(defaults()) {}

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig cfg;
  std::stringstream in(text);
  std::string line;
  std::string section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("", "config line " + std::to_string(lineno) + ": malformed section");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("", "config line " + std::to_string(lineno) + ": expected key=value, got '" + line + "'");
    }
    std::string key = trim(line.substr(0, eq));
    if (!section.empty()) key = section + "." + key;
    cfg.set(key, trim(line.substr(eq + 1)));
  }
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", "cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string RunConfig::resolve_key(const std::string& key) {
  if (defaults().contains(key)) return key;
  std::string match;
  for (const auto& [full, value] : defaults()) {
    if (full.size() > key.size() && full.ends_with("." + key)) {
      if (!match.empty()) throw ConfigError(key, "config key '" + key + "' is ambiguous (" + match + ", " + full + ")");
      match = full;
    }
  }
  if (match.empty()) throw ConfigError(key, "unknown config key '" + key + "'");
  return match;
}

void RunConfig::set(const std::string& name, const std::string& value) {
  const std::string key = resolve_key(name);
  const std::string old = values_[key];
  values_[key] = value;
  try {
    // Validate eagerly so the error names the offending key.
    (void)model_config();
    (void)train_config();
  } catch (const ConfigError&) {
    values_[key] = old;
    throw;
  } catch (const std::exception& e) {
    values_[key] = old;
    throw ConfigError(key, "config key '" + key + "': " + e.what());
  }
}

void RunConfig::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError(assignment, "override '" + assignment + "' is not key=value");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

const std::string& RunConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError(key, "unknown config key '" + key + "'");
  return it->second;
}

std::string RunConfig::canonical() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
  return out;
}

std::string RunConfig::hash() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(canonical())));
  return buf;
}

double RunConfig::get_double(const std::string& key) const {
  const std::string& text = get(key);
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ConfigError(key, "config key '" + key + "': expected a number, got '" + text + "'");
  }
}

std::uint64_t RunConfig::get_uint(const std::string& key) const {
  const std::string& text = get(key);
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError(key, "config key '" + key + "': expected a non-negative integer, got '" + text + "'");
  }
  return v;
}

bool RunConfig::get_bool(const std::string& key) const {
  const std::string& text = get(key);
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError(key, "config key '" + key + "': expected true or false, got '" + text + "'");
}

std::uint64_t RunConfig::seed() const { return get_uint("seed"); }

std::uint64_t RunConfig::discriminator_seed() const { return derive_seed(seed(), "discriminator"); }

ModelConfig RunConfig::model_config() const {
  ModelConfig cfg;
  try {
    cfg.architecture = parse_architecture(get("model.architecture"));
  } catch (const std::invalid_argument& e) {
    throw ConfigError("model.architecture", std::string("config key 'model.architecture': ") + e.what());
  }
  cfg.channels = parse_list("model.channels", get("model.channels"));
  cfg.classes = get_uint("model.classes");
  if (cfg.classes < 2) throw ConfigError("model.classes", "config key 'model.classes': need at least 2 classes");
  const std::string& source = get("data.source");
  if (source == "mnist") {
    cfg.input_shape = {1, 28, 28};
  } else if (source == "synthetic") {
    const auto side = get_uint("data.synthetic_side");
    cfg.input_shape = {1, side, side};
  } else {
    throw ConfigError("data.source", "config key 'data.source': expected mnist or synthetic, got '" + source + "'");
  }
  cfg.seed = derive_seed(seed(), "model");
  return cfg;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig cfg;
  try {
    cfg.regime = parse_regime(get("train.regime"));
  } catch (const std::invalid_argument& e) {
    throw ConfigError("train.regime", std::string("config key 'train.regime': ") + e.what());
  }
  cfg.epochs = get_uint("train.epochs");
  cfg.batch_size = get_uint("train.batch_size");
  cfg.lr = static_cast<float>(get_double("train.lr"));
  cfg.lr_drop_epoch = get_uint("train.lr_drop_epoch");
  cfg.lr_drop_factor = static_cast<float>(get_double("train.lr_drop_factor"));
  cfg.lambda1 = static_cast<float>(get_double("train.lambda1"));
  cfg.lambda2 = static_cast<float>(get_double("train.lambda2"));
  cfg.adam.beta1 = static_cast<float>(get_double("train.beta1"));
  cfg.adam.beta2 = static_cast<float>(get_double("train.beta2"));
  cfg.adam.eps = static_cast<float>(get_double("train.adam_eps"));
  cfg.eval_limit = get_uint("train.eval_limit");
  cfg.attack.epsilon = static_cast<float>(get_double("attack.epsilon"));
  cfg.attack.step = static_cast<float>(get_double("attack.step"));
  cfg.attack.iterations = get_uint("attack.iterations");
  cfg.attack.random_start = get_bool("attack.random_start");
  try {
    cfg.attack.label_source = parse_label_source(get("attack.label_source"));
  } catch (const std::invalid_argument& e) {
    throw ConfigError("attack.label_source", std::string("config key 'attack.label_source': ") + e.what());
  }
  cfg.seed = seed();
  struct Check {
    const char* key;
    bool ok;
    const char* what;
  };
  const Check checks[] = {
      {"train.epochs", cfg.epochs >= 1, "must be at least 1"},
      {"train.batch_size", cfg.batch_size >= 1, "must be at least 1"},
      {"train.lr", cfg.lr > 0.0f, "must be positive"},
      {"train.lambda1", cfg.lambda1 >= 0.0f, "must be non-negative"},
      {"train.lambda2", cfg.lambda2 >= 0.0f, "must be non-negative"},
      {"attack.epsilon", cfg.attack.epsilon >= 0.0f && cfg.attack.epsilon <= 1.0f, "must lie in [0, 1]"},
      {"attack.iterations", cfg.attack.iterations >= 1, "must be at least 1"},
      {"attack.step", cfg.attack.iterations <= 1 || cfg.attack.step > 0.0f, "must be positive"},
  };
  for (const auto& c : checks) {
    if (!c.ok) throw ConfigError(c.key, std::string("config key '") + c.key + "' " + c.what);
  }
  return cfg;
}

}  // namespace advforge
