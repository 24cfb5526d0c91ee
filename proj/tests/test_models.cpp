#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include "advforge/models.hpp"
#include "advforge/ops.hpp"
#include "advforge/random.hpp"
#include "advforge/tensor_io.hpp"

using namespace advforge;

namespace {

std::vector<float> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

Tensor random_images(std::size_t n, const Shape& item, std::uint64_t seed) {
  Shape shape{n};
  shape.insert(shape.end(), item.begin(), item.end());
  Rng rng(seed);
  std::vector<float> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform01();
  return Tensor::from_data(shape, std::move(v));
}

bool same_parameters(const std::vector<NamedTensor>& a, const std::vector<NamedTensor>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].name != b[i].name || a[i].tensor.shape() != b[i].tensor.shape()) return false;
    if (values(a[i].tensor) != values(b[i].tensor)) return false;
  }
  return true;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("advforge_test_models_" + name);
}

std::vector<char> file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("lenet maps a batch of 64 MNIST images to 64x10 logits") {
  const Classifier model = build_classifier(ModelConfig{});
  const Tensor logits = model.forward(random_images(64, {1, 28, 28}, 1));
  CHECK(logits.shape() == Shape{64, 10});
  CHECK(model.feature_width() == 84);
}

TEST_CASE("small_cnn on 3x32x32 inputs has a 512-wide feature vector") {
  ModelConfig cfg;
  cfg.architecture = Architecture::small_cnn;
  cfg.input_shape = {3, 32, 32};
  const Classifier model = build_classifier(cfg);
  CHECK(model.feature_width() == 512);
  CHECK(model.forward(random_images(3, {3, 32, 32}, 2)).shape() == Shape{3, 10});
}

TEST_CASE("classifier initialization is a function of the seed") {
  ModelConfig cfg;
  cfg.seed = 11;
  const Classifier a = build_classifier(cfg);
  const Classifier b = build_classifier(cfg);
  CHECK(same_parameters(a.named_parameters(), b.named_parameters()));
  cfg.seed = 12;
  CHECK_FALSE(same_parameters(a.named_parameters(), build_classifier(cfg).named_parameters()));
}

TEST_CASE("weights are fan-in scaled and biases start at zero") {
  const Classifier model = build_classifier(ModelConfig{});
  for (const auto& p : model.named_parameters()) {
    const auto& s = p.tensor.shape();
    if (p.name.ends_with(".bias")) {
      for (float v : p.tensor.data()) CHECK(v == 0.0f);
      continue;
    }
    const std::size_t fan_in = p.tensor.numel() / s[0];
    const float bound = std::sqrt(6.0f / static_cast<float>(fan_in));
    for (float v : p.tensor.data()) REQUIRE(std::abs(v) <= bound);
  }
}

TEST_CASE("unknown architectures and bad shapes are rejected") {
  CHECK_THROWS_AS(parse_architecture("resnet18"), std::invalid_argument);
  const Classifier model = build_classifier(ModelConfig{});
  CHECK_THROWS_AS(model.forward(random_images(2, {1, 27, 28}, 3)), ShapeError);
  CHECK_THROWS_AS(extract_features(model, random_images(2, {3, 28, 28}, 3)), ShapeError);
}

TEST_CASE("logits equal the head applied to extracted features, bit for bit") {
  const Classifier model = build_classifier(ModelConfig{.seed = 5});
  const Tensor x = random_images(7, {1, 28, 28}, 4);
  const Tensor z = extract_features(model, x);
  CHECK(z.shape() == Shape{7, 84});
  CHECK(values(model.head(z)) == values(model.forward(x)));
}

TEST_CASE("a blank image gives finite features") {
  const Classifier model = build_classifier(ModelConfig{});
  const Tensor z = extract_features(model, Tensor::zeros({1, 1, 28, 28}));
  for (float v : z.data()) CHECK(std::isfinite(v));
}

TEST_CASE("discriminator head shapes and parameter count") {
  const Discriminator disc = build_discriminator(256, 10, 3);
  const Tensor z = random_images(5, {256}, 6);
  const auto out = disc.forward(z);
  CHECK(out.domain.shape() == Shape{5, 1});
  CHECK(out.logits.shape() == Shape{5, 10});
  const std::size_t d = 256;
  const std::size_t c = 10;
  CHECK(disc.parameter_count() == 3 * (d * d + d) + (d + 1) + (c * d + c));
  const auto again = disc.forward(z.clone());
  CHECK(values(again.domain) == values(out.domain));
  CHECK(values(again.logits) == values(out.logits));
}

TEST_CASE("discriminator rejects empty widths and fewer than two classes") {
  CHECK_THROWS_AS(build_discriminator(0, 10, 1), std::invalid_argument);
  CHECK_THROWS_AS(build_discriminator(84, 1, 1), std::invalid_argument);
  CHECK_THROWS_AS(build_discriminator(84, 0, 1), std::invalid_argument);
}

TEST_CASE("the trunk feeds both heads while each head is independent") {
  const Discriminator disc = build_discriminator(16, 4, 9);
  const Tensor z = random_images(3, {16}, 7);
  const auto before = disc.forward(z);

  SUBCASE("trunk perturbation moves both outputs") {
    Tensor w = disc.trunk_parameters().front();
    for (auto& v : w.mutable_data()) v += 0.05f;
    const auto after = disc.forward(z);
    CHECK(values(after.domain) != values(before.domain));
    CHECK(values(after.logits) != values(before.logits));
  }
  SUBCASE("domain head perturbation leaves class logits alone") {
    for (Tensor p : disc.domain_head_parameters()) {
      for (auto& v : p.mutable_data()) v += 0.5f;
    }
    const auto after = disc.forward(z);
    CHECK(values(after.domain) != values(before.domain));
    CHECK(values(after.logits) == values(before.logits));
  }
}

TEST_CASE("frozen views share storage without tracking, clones are independent") {
  const Classifier model = build_classifier(ModelConfig{.seed = 2});
  const Classifier view = model.frozen();
  const Classifier copy = model.clone();
  for (const auto& p : view.parameters()) CHECK_FALSE(p.requires_grad());
  Tensor w = model.parameters().front();
  w.mutable_data()[0] += 1.0f;
  CHECK(view.parameters().front().data()[0] == w.data()[0]);
  CHECK(copy.parameters().front().data()[0] != w.data()[0]);
  view.note_gradient_query();
  CHECK(model.gradient_queries() == 1);
  CHECK(copy.gradient_queries() == 0);
}

TEST_CASE("checkpoint round trip is bit-exact, discriminator included") {
  ModelConfig cfg;
  cfg.seed = 21;
  const Classifier model = build_classifier(cfg);
  const Discriminator disc = build_discriminator(model.feature_width(), 10, 22);
  const auto path = temp_file("roundtrip.advf");
  save_checkpoint(path, model, &disc);

  const LoadedModel loaded = load_checkpoint(path);
  CHECK(to_json(loaded.classifier.config()) == to_json(cfg));
  CHECK(same_parameters(loaded.classifier.named_parameters(), model.named_parameters()));
  REQUIRE(loaded.discriminator.has_value());
  CHECK(same_parameters(loaded.discriminator->named_parameters(), disc.named_parameters()));

  const auto resaved = temp_file("roundtrip2.advf");
  save_checkpoint(resaved, loaded.classifier, &*loaded.discriminator);
  CHECK(file_bytes(path) == file_bytes(resaved));

  const TensorArchive archive = read_archive(path);
  CHECK(archive.contains("conv1.weight"));
  CHECK(archive.contains("disc.class_head.weight"));
  std::filesystem::remove(path);
  std::filesystem::remove(resaved);
}

TEST_CASE("classifier-only checkpoints load without a discriminator") {
  const Classifier model = build_classifier(ModelConfig{.seed = 4});
  const auto path = temp_file("plain.advf");
  save_checkpoint(path, model);
  CHECK_FALSE(load_checkpoint(path).discriminator.has_value());
  std::filesystem::remove(path);
}

TEST_CASE("archive header layout") {
  TensorArchive archive;
  archive.records.push_back({"w", Tensor::from_data({2}, {1.0f, -2.0f})});
  archive.metadata = "{}";
  const auto bytes = encode_archive(archive);
  REQUIRE(bytes.size() == 4 + 4 + 4 + (4 + 1) + (4 + 4) + 8 + (4 + 2));
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "ADVF");
  CHECK(bytes[4] == kArchiveVersion);
  CHECK(bytes[8] == 1);
  // 1.0f little-endian: 00 00 80 3f
  CHECK(bytes[21] == 2);
  CHECK(bytes[25] == 0x00);
  CHECK(bytes[27] == 0x80);
  CHECK(bytes[28] == 0x3f);
}

TEST_CASE("corrupt archives are reported") {
  TensorArchive archive;
  archive.records.push_back({"w", Tensor::from_data({3}, {1, 2, 3})});
  archive.metadata = "{}";
  auto bytes = encode_archive(archive);

  SUBCASE("bad magic") {
    bytes[0] = 'X';
    CHECK_THROWS_WITH_AS(decode_archive(bytes), doctest::Contains("magic"), ArchiveError);
  }
  SUBCASE("truncated") {
    bytes.resize(bytes.size() - 7);
    CHECK_THROWS_WITH_AS(decode_archive(bytes), doctest::Contains("truncated"), ArchiveError);
  }
  SUBCASE("unknown version") {
    bytes[4] = 99;
    CHECK_THROWS_AS(decode_archive(bytes), ArchiveError);
  }
  SUBCASE("trailing bytes") {
    bytes.push_back(0);
    CHECK_THROWS_AS(decode_archive(bytes), ArchiveError);
  }
}

TEST_CASE("loading parameters with the wrong shape names the parameter") {
  Classifier model = build_classifier(ModelConfig{});
  auto params = model.named_parameters();
  params[0].tensor = Tensor::zeros({1});
  CHECK_THROWS_WITH_AS(model.load_parameters(params), doctest::Contains("conv1.weight"), ShapeError);
}
