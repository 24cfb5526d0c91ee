#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "advforge/tensor_io.hpp"

namespace fs = std::filesystem;

namespace {

struct Outcome {
  int status = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const fs::path& scratch() {
  static const fs::path dir = [] {
    const auto d = fs::temp_directory_path() / "advforge_test_cli";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

Outcome run(const std::string& args) {
  const auto out = scratch() / "stdout.txt";
  const auto err = scratch() / "stderr.txt";
  const std::string cmd = std::string(ADVFORGE_CLI) + " " + args + " >" + out.string() + " 2>" + err.string();
  const int raw = std::system(cmd.c_str());
  return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, slurp(out), slurp(err)};
}

std::size_t line_count(const std::string& text) {
  std::size_t n = 0;
  for (char c : text) n += c == '\n';
  return n;
}

// Tiny synthetic run: 16x16 images, 4 classes.
fs::path write_config() {
  const auto path = scratch() / "tiny.cfg";
  std::ofstream(path) << "seed = 3\n"
                         "[model]\narchitecture = small_cnn\nclasses = 4\nchannels = 4,4,4\n"
                         "[data]\nsource = synthetic\nsynthetic_side = 16\nsynthetic_train = 128\nsynthetic_test = 40\n"
                         "[train]\nregime = cada\nepochs = 2\nbatch_size = 32\nlr = 0.003\neval_limit = 20\n"
                         "[attack]\niterations = 2\nstep = 0.1\n";
  return path;
}

const fs::path& trained_checkpoint() {
  static const fs::path ckpt = [] {
    const auto dir = scratch() / "train";
    const Outcome o = run("train --config " + write_config().string() + " --set epochs=1 --run-dir " + dir.string());
    REQUIRE_MESSAGE(o.status == 0, o.err);
    return dir / "model.advf";
  }();
  return ckpt;
}

std::string tiny() { return "--config " + write_config().string(); }

}  // namespace

TEST_CASE("train writes a checkpoint, a one-record log and the resolved config") {
  const auto& ckpt = trained_checkpoint();
  const auto dir = ckpt.parent_path();
  CHECK(fs::exists(ckpt));
  CHECK(line_count(slurp(dir / "train_log.jsonl")) == 1);
  const std::string cfg = slurp(dir / "config.cfg");
  CHECK(cfg.find("train.epochs=1\n") != std::string::npos);
  CHECK(cfg.find("train.regime=cada\n") != std::string::npos);
  CHECK(advforge::read_archive(ckpt).contains("disc.domain_head.weight"));
}

TEST_CASE("default run directories are named by config hash") {
  const auto base = scratch() / "runs";
  const Outcome o = run("train " + tiny() + " --set epochs=1 --set output.dir=" + base.string());
  REQUIRE(o.status == 0);
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(base)) dirs.push_back(e.path());
  REQUIRE(dirs.size() == 1);
  CHECK(dirs[0].filename().string().rfind("train-", 0) == 0);
  CHECK(dirs[0].filename().string().size() == std::string("train-").size() + 16 + 1 + 16);
}

TEST_CASE("configuration mistakes exit with status 1 and name the key") {
  const Outcome unknown = run("train " + tiny() + " --set train.epoch=1");
  CHECK(unknown.status == 1);
  CHECK(unknown.err.find("train.epoch") != std::string::npos);
  const Outcome bad_value = run("train " + tiny() + " --set attack.epsilon=7");
  CHECK(bad_value.status == 1);
  CHECK(bad_value.err.find("attack.epsilon") != std::string::npos);
  CHECK(run("train --bogus-flag").status == 1);
  CHECK(run("").status == 1);
}

TEST_CASE("a missing data file exits with status 2 and names the path") {
  const Outcome o = run("train --set data.dir=/nonexistent/mnist --run-dir " + (scratch() / "missing").string());
  CHECK(o.status == 2);
  CHECK(o.err.find("/nonexistent/mnist/train-images-idx3-ubyte") != std::string::npos);
  const Outcome ckpt = run("eval " + tiny() + " --checkpoint /nonexistent/model.advf");
  CHECK(ckpt.status == 2);
}

TEST_CASE("help lists every flag with its default") {
  const Outcome train = run("train --help");
  CHECK(train.status == 0);
  CHECK(train.out.find("attack.epsilon=0.3") != std::string::npos);
  CHECK(train.out.find("attack.iterations=40") != std::string::npos);
  CHECK(train.out.find("train.lambda1=0.5") != std::string::npos);
  CHECK(train.out.find("train.lr=0.0003") != std::string::npos);
  CHECK(train.out.find("train.batch_size=64") != std::string::npos);
  const Outcome attack = run("attack --help");
  CHECK(attack.out.find("[0.3]") != std::string::npos);
  CHECK(attack.out.find("[0.01]") != std::string::npos);
  CHECK(attack.out.find("[40]") != std::string::npos);
}

TEST_CASE("attack sidecar echoes the settings and zero budget keeps clean accuracy") {
  const auto& ckpt = trained_checkpoint();
  const auto dir = scratch() / "attack_pgd";
  const Outcome o = run("attack " + tiny() + " --checkpoint " + ckpt.string() +
                        " --attack pgd --epsilon 0.3 --step 0.01 --iters 40 --run-dir " + dir.string());
  REQUIRE_MESSAGE(o.status == 0, o.err);
  const auto sidecar = nlohmann::json::parse(slurp(dir / "attack.json"));
  CHECK(sidecar["config"]["epsilon"].get<double>() == 0.3);
  CHECK(sidecar["config"]["iterations"].get<int>() == 40);
  CHECK(sidecar["n_examples"].get<int>() == 40);
  const auto archive = advforge::read_archive(dir / "adversarial.advf");
  CHECK(archive.at("perturbed").shape() == advforge::Shape{40, 1, 16, 16});

  const auto again = scratch() / "attack_pgd_again";
  REQUIRE(run("attack " + tiny() + " --checkpoint " + ckpt.string() +
              " --attack pgd --epsilon 0.3 --step 0.01 --iters 40 --run-dir " + again.string())
              .status == 0);
  CHECK(slurp(dir / "adversarial.advf") == slurp(again / "adversarial.advf"));

  const auto zero = scratch() / "attack_zero";
  REQUIRE(run("attack " + tiny() + " --checkpoint " + ckpt.string() + " --attack bim --epsilon 0 --run-dir " +
              zero.string())
              .status == 0);
  const auto z = nlohmann::json::parse(slurp(zero / "attack.json"));
  CHECK(z["accuracy"].get<double>() == z["clean_accuracy"].get<double>());

  CHECK(run("attack " + tiny() + " --checkpoint " + ckpt.string() + " --attack deepfool").status == 1);
}

TEST_CASE("eval grids") {
  const auto& ckpt = trained_checkpoint();
  const auto white = scratch() / "eval_white";
  const Outcome o = run("eval " + tiny() + " --checkpoint " + ckpt.string() + " --run-dir " + white.string());
  REQUIRE_MESSAGE(o.status == 0, o.err);
  const auto report = nlohmann::json::parse(slurp(white / "report.json"));
  CHECK(report["cells"].size() == 4);
  CHECK(line_count(slurp(white / "report.csv")) == 2);
  CHECK(o.out.find("defense,clean,fgsm_white_box,bim_white_box,pgd_white_box") != std::string::npos);

  CHECK(run("eval " + tiny() + " --checkpoint " + ckpt.string() + " --grid full").status == 1);

  const auto other = scratch() / "train_other";
  REQUIRE(run("train " + tiny() + " --set epochs=1 --set seed=4 --set regime=vanilla --run-dir " + other.string())
              .status == 0);
  const auto full = scratch() / "eval_full";
  REQUIRE(run("eval " + tiny() + " --checkpoint " + ckpt.string() + " --surrogate " +
              (other / "model.advf").string() + " --model-id cada --surrogate-id vanilla --grid full --run-dir " +
              full.string())
              .status == 0);
  const auto full_report = nlohmann::json::parse(slurp(full / "report.json"));
  CHECK(full_report["cells"].size() == 7);
  CHECK(full_report["surrogate"] == "vanilla");
}

TEST_CASE("export-features writes the requested rows") {
  const auto& ckpt = trained_checkpoint();
  const auto out = scratch() / "features.csv";
  const Outcome o = run("export-features " + tiny() + " --checkpoint " + ckpt.string() + " --limit 10 --out " +
                        out.string());
  REQUIRE_MESSAGE(o.status == 0, o.err);
  const std::string text = slurp(out);
  CHECK(line_count(text) == 11);
  CHECK(text.substr(0, text.find('\n')).find(",f15") != std::string::npos);

  const Outcome too_many = run("export-features " + tiny() + " --checkpoint " + ckpt.string() + " --limit 41");
  CHECK(too_many.status == 1);
  CHECK(too_many.err.find("41") != std::string::npos);
  CHECK(too_many.err.find("40") != std::string::npos);
}
