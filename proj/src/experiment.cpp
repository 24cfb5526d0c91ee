#include "advforge/experiment.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>

#include "advforge/random.hpp"

namespace advforge {

namespace {

std::filesystem::path pick(const RunConfig& cfg, const std::string& key, const std::filesystem::path& dir,
                           const char* standard_name) {
  const std::string& explicit_path = cfg.get(key);
  if (!explicit_path.empty()) return explicit_path;
  if (dir.empty()) {
    throw ConfigError("data.dir", "no MNIST location: set data.dir, " + key + " or ADVFORGE_DATA_DIR");
  }
  return dir / standard_name;
}

}  // namespace

std::filesystem::path mnist_directory(const RunConfig& cfg) {
  const std::string& dir = cfg.get("data.dir");
  if (!dir.empty()) return dir;
  if (const char* env = std::getenv("ADVFORGE_DATA_DIR"); env != nullptr) return env;
  return {};
}

Dataset load_dataset(const RunConfig& cfg, Split split) {
  const bool train = split == Split::train;
  const std::size_t limit = cfg.get_uint(train ? "data.train_limit" : "data.test_limit");
  Dataset ds = [&] {
    if (cfg.get("data.source") == "synthetic") {
      const std::size_t n = cfg.get_uint(train ? "data.synthetic_train" : "data.synthetic_test");
      const std::uint64_t seed = derive_seed(cfg.seed(), train ? "data.train" : "data.test");
      return make_synthetic(n, cfg.model_config().classes, cfg.get_uint("data.synthetic_side"), seed, split);
    }
    const auto dir = mnist_directory(cfg);
    const auto images = train ? pick(cfg, "data.train_images", dir, "train-images-idx3-ubyte")
                              : pick(cfg, "data.test_images", dir, "t10k-images-idx3-ubyte");
    const auto labels = train ? pick(cfg, "data.train_labels", dir, "train-labels-idx1-ubyte")
                              : pick(cfg, "data.test_labels", dir, "t10k-labels-idx1-ubyte");
    return load_mnist_idx(images, labels, split);
  }();
  if (limit > 0 && limit < ds.size()) ds = ds.head(limit);
  return ds;
}

std::filesystem::path prepare_run_dir(const RunConfig& cfg, const std::string& command,
                                      const std::filesystem::path& explicit_dir) {
  std::filesystem::path dir = explicit_dir;
  if (dir.empty()) {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm utc{};
    gmtime_r(&now, &utc);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y%m%dT%H%M%SZ", &utc);
    dir = std::filesystem::path(cfg.get("output.dir")) / (command + "-" + cfg.hash() + "-" + stamp);
  }
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "config.cfg");
  out << cfg.canonical();
  if (!out) throw std::runtime_error("cannot write " + (dir / "config.cfg").string());
  return dir;
}

}  // namespace advforge
