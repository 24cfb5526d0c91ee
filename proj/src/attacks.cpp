#include "advforge/attacks.hpp"

#include <algorithm>
#include <stdexcept>

#include "advforge/ops.hpp"
#include "json_number.hpp"
#include "advforge/random.hpp"

namespace advforge {

namespace {

const std::vector<int>& resolve_labels(const Classifier& model, const ImageBatch& batch, const AttackConfig& cfg,
                                       std::vector<int>& storage) {
  if (cfg.label_source == LabelSource::ground_truth) return batch.labels;
  storage = predicted_labels(model, batch.images);
  return storage;
}

void check_batch(const Classifier& model, const ImageBatch& batch) {
  const auto& s = batch.images.shape();
  if (s.size() != 4 || Shape(s.begin() + 1, s.end()) != model.config().input_shape) {
    throw ShapeError("attack: batch " + shape_str(s) + " does not match model input " +
                     shape_str(model.config().input_shape));
  }
  if (batch.labels.size() != s[0]) throw ShapeError("attack: label count does not match batch size");
}

// Iterated sign-gradient ascent from `start`, projected around the originals.
Tensor iterate(const Classifier& model, const ImageBatch& batch, const AttackConfig& cfg, std::vector<float> start,
               const std::vector<int>& labels) {
  const auto x = batch.images.data();
  const std::size_t n = x.size();
  std::vector<float> lo(n), hi(n);
  for (std::size_t i = 0; i < n; ++i) {
    lo[i] = std::max(0.0f, x[i] - cfg.epsilon);
    hi[i] = std::min(1.0f, x[i] + cfg.epsilon);
  }
  std::vector<float> cur = std::move(start);
  for (std::size_t t = 0; t < cfg.iterations; ++t) {
    const Tensor xt = Tensor::from_data(batch.images.shape(), cur);
    const auto s = loss_gradient_sign(model, xt, labels);
    for (std::size_t i = 0; i < n; ++i) cur[i] = std::min(std::max(cur[i] + cfg.step * s[i], lo[i]), hi[i]);
  }
  return Tensor::from_data(batch.images.shape(), std::move(cur));
}

}  // namespace

std::string to_string(AttackKind kind) {
  switch (kind) {
    case AttackKind::fgsm:
      return "fgsm";
    case AttackKind::bim:
      return "bim";
    case AttackKind::pgd:
      return "pgd";
  }
  return "unknown";
}

AttackKind parse_attack_kind(const std::string& text) {
  if (text == "fgsm") return AttackKind::fgsm;
  if (text == "bim") return AttackKind::bim;
  if (text == "pgd") return AttackKind::pgd;
  throw std::invalid_argument("unknown attack '" + text + "' (expected fgsm, bim or pgd)");
}

std::string to_string(LabelSource source) {
  return source == LabelSource::ground_truth ? "ground_truth" : "model_predicted";
}

LabelSource parse_label_source(const std::string& text) {
  if (text == "ground_truth") return LabelSource::ground_truth;
  if (text == "model_predicted") return LabelSource::model_predicted;
  throw std::invalid_argument("unknown label source '" + text + "' (expected ground_truth or model_predicted)");
}

void AttackConfig::validate() const {
  if (!(epsilon >= 0.0f && epsilon <= 1.0f)) {
    throw std::invalid_argument("attack epsilon must lie in [0, 1], got " + std::to_string(epsilon));
  }
  if (iterations == 0) throw std::invalid_argument("attack iterations must be at least 1");
  if (iterations > 1 && !(step > 0.0f)) throw std::invalid_argument("attack step must be positive");
}

nlohmann::json to_json(const AttackConfig& cfg) {
  return nlohmann::json{{"epsilon", detail::json_number(cfg.epsilon)},
                        {"step", detail::json_number(cfg.step)},
                        {"iterations", cfg.iterations},
                        {"random_start", cfg.random_start},
                        {"label_source", to_string(cfg.label_source)},
                        {"seed", cfg.seed}};
}

AttackConfig attack_config_from_json(const nlohmann::json& j) {
  AttackConfig cfg;
  cfg.epsilon = j.at("epsilon").get<float>();
  cfg.step = j.at("step").get<float>();
  cfg.iterations = j.at("iterations").get<std::size_t>();
  cfg.random_start = j.at("random_start").get<bool>();
  cfg.label_source = parse_label_source(j.at("label_source").get<std::string>());
  cfg.seed = j.at("seed").get<std::uint64_t>();
  return cfg;
}

std::vector<float> loss_gradient_sign(const Classifier& model, const Tensor& images, const std::vector<int>& labels) {
  const Classifier view = model.frozen();
  Tensor x = images.detach();
  x.set_requires_grad(true);
  Tape tape;
  TapeScope scope(tape);
  const Tensor loss = ops::softmax_cross_entropy(view.forward(x), labels);
  backward(loss);
  model.note_gradient_query();
  const auto g = x.grad();
  std::vector<float> s(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) s[i] = g[i] > 0.0f ? 1.0f : (g[i] < 0.0f ? -1.0f : 0.0f);
  return s;
}

std::vector<int> predicted_labels(const Classifier& model, const Tensor& images) {
  NoTapeScope no_tape;
  const Tensor logits = model.frozen().forward(images);
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  const auto z = logits.data();
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < c; ++k) {
      if (z[i * c + k] > z[i * c + best]) best = k;
    }
    out[i] = static_cast<int>(best);
  }
  return out;
}

AdversarialBatch fgsm(const Classifier& model, const ImageBatch& batch, const AttackConfig& cfg) {
  cfg.validate();
  check_batch(model, batch);
  std::vector<int> predicted;
  const auto& labels = resolve_labels(model, batch, cfg, predicted);
  const auto s = loss_gradient_sign(model, batch.images, labels);
  const auto x = batch.images.data();
  std::vector<float> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::min(std::max(x[i] + cfg.epsilon * s[i], 0.0f), 1.0f);
  return AdversarialBatch{batch, Tensor::from_data(batch.images.shape(), std::move(out)), cfg};
}

AdversarialBatch bim(const Classifier& model, const ImageBatch& batch, const AttackConfig& cfg) {
  cfg.validate();
  check_batch(model, batch);
  std::vector<int> predicted;
  const auto& labels = resolve_labels(model, batch, cfg, predicted);
  const auto x = batch.images.data();
  Tensor adv = iterate(model, batch, cfg, std::vector<float>(x.begin(), x.end()), labels);
  return AdversarialBatch{batch, std::move(adv), cfg};
}

AdversarialBatch pgd(const Classifier& model, const ImageBatch& batch, const AttackConfig& cfg) {
  cfg.validate();
  check_batch(model, batch);
  std::vector<int> predicted;
  const auto& labels = resolve_labels(model, batch, cfg, predicted);
  const auto x = batch.images.data();
  std::vector<float> start(x.begin(), x.end());
  if (cfg.random_start) {
    Rng rng(cfg.seed);
    for (auto& v : start) v = std::min(std::max(v + rng.uniform(-cfg.epsilon, cfg.epsilon), 0.0f), 1.0f);
  }
  Tensor adv = iterate(model, batch, cfg, std::move(start), labels);
  return AdversarialBatch{batch, std::move(adv), cfg};
}

AdversarialBatch run_attack(AttackKind kind, const Classifier& model, const ImageBatch& batch,
                            const AttackConfig& cfg) {
  switch (kind) {
    case AttackKind::fgsm:
      return fgsm(model, batch, cfg);
    case AttackKind::bim:
      return bim(model, batch, cfg);
    case AttackKind::pgd:
      return pgd(model, batch, cfg);
  }
  throw std::invalid_argument("unknown attack kind");
}

AdversarialBatch transfer_attack(const Classifier& surrogate, const Classifier& target, const ImageBatch& batch,
                                 AttackKind kind, const AttackConfig& cfg) {
  if (surrogate.config().input_shape != target.config().input_shape ||
      surrogate.classes() != target.classes()) {
    throw ShapeError("transfer attack: surrogate and target disagree on input shape or class count");
  }
  return run_attack(kind, surrogate, batch, cfg);
}

}  // namespace advforge
