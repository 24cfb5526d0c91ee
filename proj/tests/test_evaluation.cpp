#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "advforge/data.hpp"
#include "advforge/evaluation.hpp"
#include "advforge/models.hpp"
#include "advforge/ops.hpp"
#include "advforge/training.hpp"

using namespace advforge;

namespace {

std::vector<float> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

Classifier small_model(std::uint64_t seed) {
  ModelConfig cfg;
  cfg.architecture = Architecture::small_cnn;
  cfg.input_shape = {1, 8, 8};
  cfg.classes = 4;
  cfg.channels = {4, 4, 4};
  cfg.seed = seed;
  return build_classifier(cfg);
}

// Classifier whose logits are all zero regardless of input.
Classifier constant_model() {
  Classifier model = small_model(1);
  auto params = model.named_parameters();
  for (auto& p : params) {
    if (p.name.rfind("head.", 0) == 0) p.tensor = Tensor::zeros(p.tensor.shape());
  }
  model.load_parameters(params);
  return model;
}

std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("advforge_test_eval_" + name);
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(item);
  return out;
}

}  // namespace

TEST_CASE("argmax ties go to the lowest index") {
  const Tensor logits = Tensor::from_data({3, 3}, {1, 1, 0, 0, 2, 2, 5, 5, 5});
  CHECK(argmax_rows(logits) == std::vector<int>{0, 1, 0});
}

TEST_CASE("a constant model scores chance on a balanced set") {
  const auto ds = make_synthetic(100, 4, 8, 2);
  CHECK(accuracy(constant_model(), ds) == doctest::Approx(0.25));
}

TEST_CASE("clean grid equals plain accuracy and zero budget equals clean") {
  const Classifier model = small_model(3);
  const auto ds = make_synthetic(60, 4, 8, 4);
  const EvalReport clean = evaluate_grid(model, nullptr, ds, clean_grid());
  REQUIRE(clean.cells.size() == 1);
  CHECK(clean.cells[0].accuracy == accuracy(model, ds));
  CHECK(clean.cells[0].n_examples == 60);

  AttackConfig zero = mnist_eval_preset();
  zero.epsilon = 0.0f;
  zero.iterations = 3;
  const EvalReport grid = evaluate_grid(model, nullptr, ds, white_box_grid(zero));
  REQUIRE(grid.cells.size() == 4);
  for (const auto& cell : grid.cells) CHECK(cell.accuracy == clean.cells[0].accuracy);
}

TEST_CASE("full grid needs a distinct surrogate and records it") {
  const Classifier model = small_model(5);
  const Classifier surrogate = small_model(6);
  const auto ds = make_synthetic(20, 4, 8, 7);
  AttackConfig preset = mnist_eval_preset();
  preset.iterations = 2;
  CHECK_THROWS_AS(evaluate_grid(model, nullptr, ds, full_grid(preset)), std::invalid_argument);
  CHECK_THROWS_AS(evaluate_grid(model, &surrogate, ds, full_grid(preset), "same", "same"), std::invalid_argument);
  const EvalReport report = evaluate_grid(model, &surrogate, ds, full_grid(preset), "target", "source");
  CHECK(report.cells.size() == 7);
  CHECK(report.surrogate_id == "source");
  CHECK(report.cell("pgd/black_box").setting == Setting::black_box);
  CHECK(report.cell("fgsm/white_box").iterations == 1);
  CHECK(report.cell("bim/white_box").iterations == 2);
  CHECK(model.gradient_queries() == 1 + 2 + 2);
  CHECK(surrogate.gradient_queries() == 1 + 2 + 2);
}

TEST_CASE("mnist and cifar presets") {
  const auto m = mnist_eval_preset();
  CHECK(m.epsilon == 0.3f);
  CHECK(m.step == 0.01f);
  CHECK(m.iterations == 40);
  const auto c = cifar_eval_preset();
  CHECK(c.epsilon == 0.031f);
  CHECK(c.iterations == 20);
}

TEST_CASE("evaluation leaves parameters untouched") {
  const Classifier model = small_model(8);
  const auto ds = make_synthetic(20, 4, 8, 9);
  std::vector<std::vector<float>> before;
  for (const auto& p : model.parameters()) before.push_back(values(p));
  AttackConfig preset = mnist_eval_preset();
  preset.iterations = 2;
  evaluate_grid(model, nullptr, ds, white_box_grid(preset));
  std::vector<std::vector<float>> after;
  for (const auto& p : model.parameters()) after.push_back(values(p));
  CHECK(after == before);
}

TEST_CASE("iterative attacks beat single-step on a trained model") {
  const auto train_set = make_synthetic(400, 4, 8, 10);
  const auto test_set = make_synthetic(200, 4, 8, 11);
  const Classifier model = small_model(12);
  TrainConfig tc;
  tc.epochs = 3;
  tc.batch_size = 32;
  tc.lr = 3e-3f;
  tc.eval_limit = 50;
  train(model, std::nullopt, train_set, tc);
  AttackConfig preset{0.15f, 0.02f, 10, false, LabelSource::ground_truth, 0};
  const EvalReport r = evaluate_grid(model, nullptr, test_set, white_box_grid(preset));
  CHECK(r.cell("pgd/white_box").accuracy <= r.cell("fgsm/white_box").accuracy + 0.02);
  CHECK(r.cell("bim/white_box").accuracy <= r.cell("fgsm/white_box").accuracy + 0.02);
}

TEST_CASE("report JSON round trip and CSV layout") {
  EvalReport report{"synthetic/test", "cada", "vanilla-b", {}};
  report.cells.push_back({"clean", Setting::white_box, 0.0f, 0.0f, 0, 0.9916, 10000});
  report.cells.push_back({"fgsm", Setting::white_box, 0.3f, 0.3f, 1, 0.1406, 10000});
  report.cells.push_back({"pgd", Setting::black_box, 0.3f, 0.01f, 40, 0.0075, 10000});
  const auto json_text = to_json(report).dump();
  CHECK(report_from_json(nlohmann::json::parse(json_text)) == report);

  const auto csv_path = temp_file("report.csv");
  write_report(report, csv_path, ReportFormat::csv);
  const auto lines = split(read_text(csv_path), '\n');
  REQUIRE(lines.size() == 2);
  CHECK(lines[0] == "defense,clean,fgsm_white_box,pgd_black_box");
  CHECK(lines[1] == "cada,99.16,14.06,0.75");
  CHECK(split(lines[1], ',').size() == 1 + report.cells.size());

  const auto json_path = temp_file("report.json");
  write_report(report, json_path, ReportFormat::json);
  CHECK(report_from_json(nlohmann::json::parse(read_text(json_path))) == report);
  std::filesystem::remove(csv_path);
  std::filesystem::remove(json_path);
  CHECK_THROWS(write_report(report, "/nonexistent-dir/x/report.json", ReportFormat::json));
}

TEST_CASE("percent formatting") {
  CHECK(format_percent(0.9916) == "99.16");
  CHECK(format_percent(0.0075) == "0.75");
  CHECK(format_percent(1.0) == "100.00");
}

TEST_CASE("feature export writes one row per item and is deterministic") {
  const Classifier model = build_classifier(ModelConfig{.seed = 13});
  const auto ds = decode_idx(
      [] {
        std::vector<std::uint8_t> b{0, 0, 8, 3, 0, 0, 0, 12, 0, 0, 0, 28, 0, 0, 0, 28};
        for (std::size_t i = 0; i < 12 * 28 * 28; ++i) b.push_back(static_cast<std::uint8_t>((i * 7) % 256));
        return b;
      }(),
      [] {
        std::vector<std::uint8_t> b{0, 0, 8, 1, 0, 0, 0, 12};
        for (std::uint8_t i = 0; i < 12; ++i) b.push_back(i % 10);
        return b;
      }());
  const auto a = temp_file("features_a.csv");
  const auto b = temp_file("features_b.csv");
  export_features(model, ds, 10, a);
  export_features(model, ds, 10, b);
  const std::string text = read_text(a);
  CHECK(text == read_text(b));
  const auto lines = split(text, '\n');
  REQUIRE(lines.size() == 11);
  CHECK(split(lines[0], ',').size() == 85);
  CHECK(split(lines[0], ',')[84] == "f83");

  // Re-feed the exported features through the head.
  std::vector<float> z;
  for (std::size_t r = 1; r <= 10; ++r) {
    const auto cells = split(lines[r], ',');
    REQUIRE(cells.size() == 85);
    CHECK(std::stoi(cells[0]) == ds.label(r - 1));
    for (std::size_t k = 1; k < cells.size(); ++k) z.push_back(std::stof(cells[k]));
  }
  NoTapeScope no_tape;
  const auto from_csv = values(model.head(Tensor::from_data({10, 84}, z)));
  const auto direct = values(model.forward(ds.range(0, 10).images));
  for (std::size_t i = 0; i < direct.size(); ++i) CHECK(from_csv[i] == doctest::Approx(direct[i]).epsilon(1e-5));

  CHECK_THROWS_AS(export_features(model, ds, 13, a), std::invalid_argument);
  std::filesystem::remove(a);
  std::filesystem::remove(b);
}
