#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "advforge/attacks.hpp"
#include "advforge/data.hpp"
#include "advforge/models.hpp"

namespace advforge {

enum class Regime { vanilla, at, da, ca, cada };

std::string to_string(Regime regime);
Regime parse_regime(const std::string& text);
bool uses_discriminator(Regime regime);

struct AdamConfig {
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

struct TrainConfig {
  Regime regime = Regime::vanilla;
  float lambda1 = 0.5f;
  float lambda2 = 0.5f;
  float lr = 3e-4f;
  std::size_t lr_drop_epoch = 150;  // 0 disables the drop
  float lr_drop_factor = 0.1f;
  std::size_t epochs = 10;
  std::size_t batch_size = 64;
  // Training-time adversary; regenerated against the current model every step.
  AttackConfig attack{0.3f, 0.01f, 40, true, LabelSource::ground_truth, 0};
  AdamConfig adam;
  std::uint64_t seed = 0;
  // Items of the held-out set used for the per-epoch log (0 = all).
  std::size_t eval_limit = 1000;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);

// ---- Losses ----------------------------------------------------------------

enum class DomainSide { discriminator, generator };

/// Mean cross-entropy of f(x) against the true labels.
Tensor loss_clean(const Classifier& model, const ImageBatch& batch);
/// Mean cross-entropy of h_c(phi(x_adv)); reaches phi, the trunk and h_c.
Tensor loss_adv_class(const Classifier& model, const Discriminator& disc, const AdversarialBatch& adv);
/// Least-squares domain loss. Discriminator side: clean -> 1, adversarial -> 0
/// with phi held constant. Generator side: labels switched, discriminator held
/// constant. Each term is averaged over its own sub-batch.
Tensor loss_domain(const Classifier& model, const Discriminator& disc, const ImageBatch& clean,
                   const AdversarialBatch& adv, DomainSide side);
/// Domain loss from h_d scores already computed for both sub-batches.
Tensor domain_loss_from_scores(const Tensor& clean_scores, const Tensor& adv_scores, DomainSide side);

// ---- Optimizer -------------------------------------------------------------

struct AdamState {
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;
  std::uint64_t step = 0;
};

/// One bias-corrected Adam update of `params` using `grads` (same order and
/// shapes). Initializes `state` on first use.
void adam_step(std::span<Tensor> params, std::span<const std::span<const float>> grads, AdamState& state, float lr,
               const AdamConfig& cfg = {});

class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig cfg);

  void zero_grad();
  void step(float lr);
  const AdamState& state() const { return state_; }
  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  AdamConfig cfg_;
  AdamState state_;
};

float lr_schedule(std::size_t epoch, const TrainConfig& cfg);

// ---- Trainers --------------------------------------------------------------

class NonFiniteLoss : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct StepStats {
  float total = 0.0f;       // objective minimized by the classifier-side update
  float clean = 0.0f;       // L_cls
  float adv_class = 0.0f;   // L_cls^adv (ca, cada) or adversarial CE (at)
  float domain_gen = 0.0f;  // generator-side L_ada (da, cada)
  float domain_disc = 0.0f; // discriminator-side L_ada (da, cada)
};

struct EpochRecord {
  std::size_t epoch = 0;
  double clean_loss = 0.0;
  double adv_loss = 0.0;
  double disc_loss = 0.0;
  double clean_acc = 0.0;
  double adv_acc = 0.0;
  double wall_time = 0.0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
};

nlohmann::json to_json(const EpochRecord& rec);
void write_train_log(std::ostream& out, const TrainLog& log);

/// Per-iteration update schedule for one regime. Holds two independent Adam
/// optimizers: classifier side (f, plus trunk and h_c for ca/cada) and
/// discriminator side (trunk and h_d for da/cada).
class Trainer {
 public:
  Trainer(Classifier model, std::optional<Discriminator> disc, const TrainConfig& cfg);

  /// Generates PGD adversaries against the current model, then runs the
  /// regime's updates.
  StepStats step(const ImageBatch& batch, std::uint64_t attack_seed);

  AdversarialBatch make_adversaries(const ImageBatch& batch, std::uint64_t attack_seed) const;
  /// Step A: trunk + h_d on the discriminator-side domain loss (times lambda2).
  float discriminator_update(const ImageBatch& clean, const AdversarialBatch& adv);
  /// Step B: the classifier-side objective of the regime.
  StepStats classifier_update(const ImageBatch& clean, const AdversarialBatch& adv);

  void set_lr(float lr) { lr_ = lr; }
  float lr() const { return lr_; }

  const Classifier& model() const { return model_; }
  const std::optional<Discriminator>& discriminator() const { return disc_; }
  const Adam& classifier_optimizer() const { return classifier_opt_; }
  const std::optional<Adam>& discriminator_optimizer() const { return disc_opt_; }

 private:
  Classifier model_;
  std::optional<Discriminator> disc_;
  TrainConfig cfg_;
  Adam classifier_opt_;
  std::optional<Adam> disc_opt_;
  float lr_;
};

struct TrainOptions {
  const Dataset* heldout = nullptr;  // per-epoch log; falls back to the training set
  std::filesystem::path checkpoint_dir;
  std::size_t checkpoint_every = 0;  // epochs; 0 disables intermediate checkpoints
  std::function<void(const EpochRecord&)> on_epoch;
  std::function<void(std::size_t, const StepStats&)> on_step;
};

struct TrainResult {
  Classifier model;
  std::optional<Discriminator> discriminator;
  TrainLog log;
};

/// Trains `model` in place (parameters are shared with the returned handle).
/// A discriminator must be supplied exactly for da, ca and cada.
TrainResult train(const Classifier& model, std::optional<Discriminator> disc, const Dataset& data,
                  const TrainConfig& cfg, const TrainOptions& options = {});

}  // namespace advforge
