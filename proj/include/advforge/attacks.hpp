#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "advforge/data.hpp"
#include "advforge/models.hpp"

namespace advforge {

enum class AttackKind { fgsm, bim, pgd };
enum class LabelSource { ground_truth, model_predicted };

std::string to_string(AttackKind kind);
AttackKind parse_attack_kind(const std::string& text);
std::string to_string(LabelSource source);
LabelSource parse_label_source(const std::string& text);

/// L-infinity attack settings on the [0, 1] pixel scale.
struct AttackConfig {
  float epsilon = 0.3f;
  float step = 0.01f;
  std::size_t iterations = 40;
  bool random_start = false;
  LabelSource label_source = LabelSource::ground_truth;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const AttackConfig&) const = default;
};

nlohmann::json to_json(const AttackConfig& cfg);
AttackConfig attack_config_from_json(const nlohmann::json& j);

// Slack allowed on the L-infinity bound for float round-off.
inline constexpr float kLinfSlack = 0x1.0p-20f;

struct AdversarialBatch {
  ImageBatch originals;
  Tensor perturbed;
  AttackConfig config;
};

/// Sign of the input gradient of the mean cross-entropy, computed on a frozen
/// view of `model` so parameter gradients are never touched.
std::vector<float> loss_gradient_sign(const Classifier& model, const Tensor& images, const std::vector<int>& labels);

std::vector<int> predicted_labels(const Classifier& model, const Tensor& images);

AdversarialBatch fgsm(const Classifier& model, const ImageBatch& batch, const AttackConfig& cfg);
/// Iterative sign steps, each projected onto [x - eps, x + eps] and [0, 1]
/// around the original x. No random start.
AdversarialBatch bim(const Classifier& model, const ImageBatch& batch, const AttackConfig& cfg);
/// As bim, but starts from clamp(x + u), u ~ U[-eps, eps], when random_start.
AdversarialBatch pgd(const Classifier& model, const ImageBatch& batch, const AttackConfig& cfg);

AdversarialBatch run_attack(AttackKind kind, const Classifier& model, const ImageBatch& batch,
                            const AttackConfig& cfg);

/// Black-box transfer: perturbations use gradients of `surrogate` only.
AdversarialBatch transfer_attack(const Classifier& surrogate, const Classifier& target, const ImageBatch& batch,
                                 AttackKind kind, const AttackConfig& cfg);

}  // namespace advforge
