#include "advforge/training.hpp"

#include <chrono>
#include <cmath>
#include <ostream>

#include "advforge/evaluation.hpp"
#include "advforge/ops.hpp"
#include "json_number.hpp"
#include "advforge/random.hpp"

namespace advforge {

namespace {

void require_finite(float value, const char* what) {
  if (!std::isfinite(value)) {
    throw NonFiniteLoss(std::string("non-finite ") + what + " loss (" + std::to_string(value) + "); aborting");
  }
}

std::vector<Tensor> concat(std::vector<Tensor> a, const std::vector<Tensor>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

std::vector<Tensor> classifier_side_params(const Classifier& model, const std::optional<Discriminator>& disc,
                                           Regime regime) {
  std::vector<Tensor> params = model.parameters();
  if (regime == Regime::ca || regime == Regime::cada) {
    params = concat(std::move(params), disc->trunk_parameters());
    params = concat(std::move(params), disc->class_head_parameters());
  }
  return params;
}

Tensor constant_features(const Classifier& model, const Tensor& images) {
  NoTapeScope no_tape;
  return model.frozen().features(images);
}

}  // namespace

std::string to_string(Regime regime) {
  switch (regime) {
    case Regime::vanilla:
      return "vanilla";
    case Regime::at:
      return "at";
    case Regime::da:
      return "da";
    case Regime::ca:
      return "ca";
    case Regime::cada:
      return "cada";
  }
  return "unknown";
}

Regime parse_regime(const std::string& text) {
  if (text == "vanilla") return Regime::vanilla;
  if (text == "at") return Regime::at;
  if (text == "da") return Regime::da;
  if (text == "ca") return Regime::ca;
  if (text == "cada") return Regime::cada;
  throw std::invalid_argument("unknown regime '" + text + "' (expected vanilla, at, da, ca or cada)");
}

bool uses_discriminator(Regime regime) {
  return regime == Regime::da || regime == Regime::ca || regime == Regime::cada;
}

void TrainConfig::validate() const {
  if (lambda1 < 0.0f || lambda2 < 0.0f) throw std::invalid_argument("loss weights must be non-negative");
  if (!(lr > 0.0f)) throw std::invalid_argument("learning rate must be positive");
  if (epochs < 1) throw std::invalid_argument("epochs must be at least 1");
  if (batch_size < 1) throw std::invalid_argument("batch size must be at least 1");
  attack.validate();
}

nlohmann::json to_json(const TrainConfig& cfg) {
  return nlohmann::json{{"regime", to_string(cfg.regime)},
                        {"lambda1", detail::json_number(cfg.lambda1)},
                        {"lambda2", detail::json_number(cfg.lambda2)},
                        {"lr", detail::json_number(cfg.lr)},
                        {"lr_drop_epoch", cfg.lr_drop_epoch},
                        {"lr_drop_factor", detail::json_number(cfg.lr_drop_factor)},
                        {"epochs", cfg.epochs},
                        {"batch_size", cfg.batch_size},
                        {"attack", to_json(cfg.attack)},
                        {"beta1", detail::json_number(cfg.adam.beta1)},
                        {"beta2", detail::json_number(cfg.adam.beta2)},
                        {"adam_eps", detail::json_number(cfg.adam.eps)},
                        {"seed", cfg.seed},
                        {"eval_limit", cfg.eval_limit}};
}

// ---- Losses ----------------------------------------------------------------

Tensor loss_clean(const Classifier& model, const ImageBatch& batch) {
  return ops::softmax_cross_entropy(model.forward(batch.images), batch.labels);
}

Tensor loss_adv_class(const Classifier& model, const Discriminator& disc, const AdversarialBatch& adv) {
  if (disc.feature_width() != model.feature_width()) {
    throw ShapeError("discriminator width " + std::to_string(disc.feature_width()) +
                     " does not match feature width " + std::to_string(model.feature_width()));
  }
  const Tensor z = model.features(adv.perturbed);
  return ops::softmax_cross_entropy(disc.class_head(disc.trunk(z)), adv.originals.labels);
}

Tensor domain_loss_from_scores(const Tensor& clean_scores, const Tensor& adv_scores, DomainSide side) {
  if (clean_scores.dim(0) != adv_scores.dim(0)) {
    throw ShapeError("domain loss: clean sub-batch " + shape_str(clean_scores.shape()) +
                     " and adversarial sub-batch " + shape_str(adv_scores.shape()) + " differ in size");
  }
  // Discriminator: clean -> 1, adversarial -> 0. Generator: labels switched.
  const Tensor& toward_one = side == DomainSide::discriminator ? clean_scores : adv_scores;
  const Tensor& toward_zero = side == DomainSide::discriminator ? adv_scores : clean_scores;
  return ops::add(ops::mean(ops::square(ops::add_scalar(toward_one, -1.0f))), ops::mean(ops::square(toward_zero)));
}

Tensor loss_domain(const Classifier& model, const Discriminator& disc, const ImageBatch& clean,
                   const AdversarialBatch& adv, DomainSide side) {
  if (clean.size() != adv.originals.size()) {
    throw ShapeError("domain loss: clean and adversarial sub-batches differ in size");
  }
  if (disc.feature_width() != model.feature_width()) {
    throw ShapeError("discriminator width does not match feature width");
  }
  if (side == DomainSide::discriminator) {
    const Tensor zc = constant_features(model, clean.images);
    const Tensor za = constant_features(model, adv.perturbed);
    return domain_loss_from_scores(disc.domain_head(disc.trunk(zc)), disc.domain_head(disc.trunk(za)), side);
  }
  const Discriminator fixed = disc.frozen();
  const Tensor zc = model.features(clean.images);
  const Tensor za = model.features(adv.perturbed);
  return domain_loss_from_scores(fixed.domain_head(fixed.trunk(zc)), fixed.domain_head(fixed.trunk(za)), side);
}

// ---- Optimizer -------------------------------------------------------------

void adam_step(std::span<Tensor> params, std::span<const std::span<const float>> grads, AdamState& state, float lr,
               const AdamConfig& cfg) {
  if (params.size() != grads.size()) throw ShapeError("adam: parameter and gradient counts differ");
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.numel(), 0.0f);
      state.v.emplace_back(p.numel(), 0.0f);
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("adam: state does not match parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].size() != params[i].numel() || state.m[i].size() != params[i].numel()) {
      throw ShapeError("adam: gradient or state shape mismatch for parameter " + std::to_string(i) + " " +
                       shape_str(params[i].shape()));
    }
  }
  ++state.step;
  const double b1 = cfg.beta1, b2 = cfg.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].mutable_data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    const auto g = grads[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double gk = g[k];
      const double mk = b1 * m[k] + (1.0 - b1) * gk;
      const double vk = b2 * v[k] + (1.0 - b2) * gk * gk;
      m[k] = static_cast<float>(mk);
      v[k] = static_cast<float>(vk);
      const double update = static_cast<double>(lr) * (mk / c1) / (std::sqrt(vk / c2) + cfg.eps);
      p[k] = static_cast<float>(static_cast<double>(p[k]) - update);
    }
  }
}

Adam::Adam(std::vector<Tensor> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void Adam::step(float lr) {
  std::vector<std::vector<float>> zeros;
  zeros.reserve(params_.size());  // spans below point into it
  std::vector<std::span<const float>> grads;
  grads.reserve(params_.size());
  for (const auto& p : params_) {
    if (p.has_grad()) {
      grads.push_back(p.grad());
    } else {
      zeros.emplace_back(p.numel(), 0.0f);
      grads.emplace_back(zeros.back());
    }
  }
  adam_step(params_, grads, state_, lr, cfg_);
}

float lr_schedule(std::size_t epoch, const TrainConfig& cfg) {
  if (cfg.lr_drop_epoch > 0 && epoch >= cfg.lr_drop_epoch) return cfg.lr * cfg.lr_drop_factor;
  return cfg.lr;
}

// ---- Trainer ---------------------------------------------------------------

Trainer::Trainer(Classifier model, std::optional<Discriminator> disc, const TrainConfig& cfg)
    : model_(std::move(model)),
      disc_(std::move(disc)),
      cfg_(cfg),
      classifier_opt_([&] {
        if (uses_discriminator(cfg.regime) && !disc_) {
          throw std::invalid_argument("regime " + to_string(cfg.regime) + " requires a discriminator");
        }
        if (!uses_discriminator(cfg.regime) && disc_) {
          throw std::invalid_argument("regime " + to_string(cfg.regime) + " does not use a discriminator");
        }
        return Adam(classifier_side_params(model_, disc_, cfg.regime), cfg.adam);
      }()),
      lr_(cfg.lr) {
  cfg_.validate();
  if (disc_ && disc_->feature_width() != model_.feature_width()) {
    throw ShapeError("discriminator width " + std::to_string(disc_->feature_width()) +
                     " does not match classifier feature width " + std::to_string(model_.feature_width()));
  }
  if (cfg.regime == Regime::da || cfg.regime == Regime::cada) {
    disc_opt_.emplace(concat(disc_->trunk_parameters(), disc_->domain_head_parameters()), cfg.adam);
  }
}

AdversarialBatch Trainer::make_adversaries(const ImageBatch& batch, std::uint64_t attack_seed) const {
  AttackConfig attack = cfg_.attack;
  attack.seed = attack_seed;
  return pgd(model_, batch, attack);
}

float Trainer::discriminator_update(const ImageBatch& clean, const AdversarialBatch& adv) {
  if (!disc_opt_) throw std::logic_error("regime " + to_string(cfg_.regime) + " has no discriminator update");
  disc_opt_->zero_grad();
  Tape tape;
  TapeScope scope(tape);
  const Tensor raw = loss_domain(model_, *disc_, clean, adv, DomainSide::discriminator);
  require_finite(raw.item(), "discriminator");
  backward(ops::scale(raw, cfg_.lambda2));
  disc_opt_->step(lr_);
  return raw.item();
}

StepStats Trainer::classifier_update(const ImageBatch& clean, const AdversarialBatch& adv) {
  StepStats stats;
  classifier_opt_.zero_grad();
  Tape tape;
  TapeScope scope(tape);
  const std::size_t n = clean.size();

  Tensor total;
  switch (cfg_.regime) {
    case Regime::vanilla: {
      total = loss_clean(model_, clean);
      stats.clean = total.item();
      break;
    }
    case Regime::at: {
      const Tensor lc = loss_clean(model_, clean);
      const Tensor la = ops::softmax_cross_entropy(model_.forward(adv.perturbed), adv.originals.labels);
      stats.clean = lc.item();
      stats.adv_class = la.item();
      total = ops::add(lc, la);
      break;
    }
    case Regime::da:
    case Regime::ca:
    case Regime::cada: {
      // One pass of phi over [clean; adversarial].
      const Tensor z = model_.features(ops::concat_rows(clean.images, adv.perturbed));
      const Tensor zc = ops::slice_rows(z, 0, n);
      const Tensor za = ops::slice_rows(z, n, 2 * n);
      const Tensor lc = ops::softmax_cross_entropy(model_.head(zc), clean.labels);
      stats.clean = lc.item();
      total = lc;
      if (cfg_.regime != Regime::da) {
        const Tensor la = ops::softmax_cross_entropy(disc_->class_head(disc_->trunk(za)), adv.originals.labels);
        stats.adv_class = la.item();
        total = ops::add(total, ops::scale(la, cfg_.lambda1));
      }
      if (cfg_.regime != Regime::ca) {
        const Discriminator fixed = disc_->frozen();
        const Tensor ld = domain_loss_from_scores(fixed.domain_head(fixed.trunk(zc)),
                                                  fixed.domain_head(fixed.trunk(za)), DomainSide::generator);
        stats.domain_gen = ld.item();
        total = ops::add(total, ops::scale(ld, cfg_.lambda2));
      }
      break;
    }
  }
  stats.total = total.item();
  require_finite(stats.total, "classifier");
  backward(total);
  classifier_opt_.step(lr_);
  return stats;
}

StepStats Trainer::step(const ImageBatch& batch, std::uint64_t attack_seed) {
  if (cfg_.regime == Regime::vanilla) {
    // No adversary enters the vanilla objective.
    return classifier_update(batch, AdversarialBatch{batch, batch.images, cfg_.attack});
  }
  const AdversarialBatch adv = make_adversaries(batch, attack_seed);
  float disc_loss = 0.0f;
  if (disc_opt_) disc_loss = discriminator_update(batch, adv);
  StepStats stats = classifier_update(batch, adv);
  stats.domain_disc = disc_loss;
  return stats;
}

// ---- Logging ---------------------------------------------------------------

nlohmann::json to_json(const EpochRecord& rec) {
  return nlohmann::json{{"epoch", rec.epoch},         {"clean_loss", rec.clean_loss}, {"adv_loss", rec.adv_loss},
                        {"disc_loss", rec.disc_loss}, {"clean_acc", rec.clean_acc},   {"adv_acc", rec.adv_acc},
                        {"wall_time", rec.wall_time}};
}

void write_train_log(std::ostream& out, const TrainLog& log) {
  for (const auto& rec : log.epochs) out << to_json(rec).dump() << '\n';
}

// ---- Driver ----------------------------------------------------------------

TrainResult train(const Classifier& model, std::optional<Discriminator> disc, const Dataset& data,
                  const TrainConfig& cfg, const TrainOptions& options) {
  cfg.validate();
  Trainer trainer(model, std::move(disc), cfg);
  const Dataset& heldout_full = options.heldout ? *options.heldout : data;
  const Dataset heldout =
      cfg.eval_limit > 0 && cfg.eval_limit < heldout_full.size() ? heldout_full.head(cfg.eval_limit) : heldout_full;

  TrainLog log;
  const std::uint64_t shuffle_seed = derive_seed(cfg.seed, "shuffle");
  const std::uint64_t attack_seed = derive_seed(cfg.seed, "attack");
  std::size_t global_step = 0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    trainer.set_lr(lr_schedule(epoch, cfg));
    double disc_sum = 0.0;
    std::size_t steps = 0;
    const Batches epoch_batches(data, cfg.batch_size, mix_seed(shuffle_seed ^ epoch));
    for (std::size_t b = 0; b < epoch_batches.count(); ++b) {
      const StepStats stats = trainer.step(epoch_batches[b], mix_seed(attack_seed ^ global_step));
      disc_sum += stats.domain_disc;
      ++steps;
      if (options.on_step) options.on_step(global_step, stats);
      ++global_step;
    }

    // Held-out pass: clean and PGD loss/accuracy of the current model.
    EpochRecord rec;
    rec.epoch = epoch;
    rec.disc_loss = steps ? disc_sum / static_cast<double>(steps) : 0.0;
    double clean_loss = 0.0, adv_loss = 0.0;
    std::size_t clean_hits = 0, adv_hits = 0;
    constexpr std::size_t kEvalBatch = 250;
    AttackConfig eval_attack = cfg.attack;
    for (std::size_t b = 0; b < heldout.size(); b += kEvalBatch) {
      const ImageBatch batch = heldout.range(b, b + kEvalBatch);
      eval_attack.seed = mix_seed(derive_seed(cfg.seed, "eval") ^ b);
      const AdversarialBatch adv = pgd(model, batch, eval_attack);
      NoTapeScope no_tape;
      const Classifier view = model.frozen();
      const Tensor lc = view.forward(batch.images);
      const Tensor la = view.forward(adv.perturbed);
      const double w = static_cast<double>(batch.size());
      clean_loss += ops::softmax_cross_entropy(lc, batch.labels).item() * w;
      adv_loss += ops::softmax_cross_entropy(la, batch.labels).item() * w;
      const auto pc = argmax_rows(lc), pa = argmax_rows(la);
      for (std::size_t i = 0; i < batch.size(); ++i) {
        clean_hits += pc[i] == batch.labels[i] ? 1 : 0;
        adv_hits += pa[i] == batch.labels[i] ? 1 : 0;
      }
    }
    const double n = static_cast<double>(std::max<std::size_t>(1, heldout.size()));
    rec.clean_loss = clean_loss / n;
    rec.adv_loss = adv_loss / n;
    rec.clean_acc = static_cast<double>(clean_hits) / n;
    rec.adv_acc = static_cast<double>(adv_hits) / n;
    rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    log.epochs.push_back(rec);
    if (options.on_epoch) options.on_epoch(rec);

    if (options.checkpoint_every > 0 && !options.checkpoint_dir.empty() && epoch % options.checkpoint_every == 0) {
      const auto& d = trainer.discriminator();
      save_checkpoint(options.checkpoint_dir / ("epoch-" + std::to_string(epoch) + ".advf"), model,
                      d ? &*d : nullptr);
    }
  }
  return TrainResult{model, trainer.discriminator(), std::move(log)};
}

}  // namespace advforge
