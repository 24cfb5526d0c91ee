#include "gradient_suite.hpp"

#include "advforge/attacks.hpp"
#include "advforge/ops.hpp"
#include "advforge/random.hpp"
#include "advforge/training.hpp"

namespace reference {

namespace {

using namespace advforge;

constexpr std::size_t kBatch = 2;
constexpr float kLambda1 = 0.5f;
constexpr float kLambda2 = 0.5f;

Tensor random_tensor(Shape shape, float lo, float hi, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor::from_data(std::move(shape), std::move(v));
}

std::vector<float> grad_or_zero(const Tensor& t) {
  if (t.has_grad()) return {t.grad().begin(), t.grad().end()};
  return std::vector<float>(t.numel(), 0.0f);
}

void add_leaves(std::vector<Leaf>& leaves, Net& net, const std::vector<NamedTensor>& params,
                const std::string& prefix) {
  for (const auto& p : params) {
    leaves.push_back({prefix + p.name, &net.params.at(p.name).values, grad_or_zero(p.tensor)});
  }
}

// All tensors one scenario needs, in engine and reference form.
struct Scene {
  ModelConfig cfg;
  Classifier model;
  Discriminator disc;
  Tensor clean;
  Tensor adv;
  std::vector<int> labels;
  Net model_ref;
  Net disc_ref;
  Array clean_ref;
  Array adv_ref;

  explicit Scene(std::uint64_t seed)
      : cfg{Architecture::lenet, {1, 28, 28}, 10, {}, derive_seed(seed, "model")},
        model(build_classifier(cfg)),
        disc(build_discriminator(model.feature_width(), 10, derive_seed(seed, "disc"))),
        clean(random_tensor({kBatch, 1, 28, 28}, 0.0f, 1.0f, derive_seed(seed, "clean"))),
        adv(random_tensor({kBatch, 1, 28, 28}, 0.0f, 1.0f, derive_seed(seed, "adv"))),
        labels{3, 7} {
    clean.set_requires_grad(true);
    adv.set_requires_grad(true);
    model_ref = snapshot(model);
    disc_ref = snapshot(disc);
    clean_ref = to_array(clean);
    adv_ref = to_array(adv);
  }

  ImageBatch clean_batch() const { return {clean, labels}; }
  AdversarialBatch adv_batch() const { return {clean_batch(), adv, AttackConfig{}}; }

  Array ref_features(const Array& x, Trace* t) const { return classifier_features(cfg, model_ref, x, t); }

  double ref_clean(Trace* t) const { return cross_entropy(classifier_head(model_ref, ref_features(clean_ref, t)), labels); }

  double ref_adv_class(Trace* t) const {
    return cross_entropy(discriminator_class(disc_ref, discriminator_trunk(disc_ref, ref_features(adv_ref, t), t)),
                         labels);
  }

  double ref_domain(bool discriminator_side, Trace* t) const {
    const Array sc = discriminator_domain(disc_ref, discriminator_trunk(disc_ref, ref_features(clean_ref, t), t));
    const Array sa = discriminator_domain(disc_ref, discriminator_trunk(disc_ref, ref_features(adv_ref, t), t));
    return discriminator_side ? least_squares_domain(sc, sa) : least_squares_domain(sa, sc);
  }
};

struct Selection {
  bool inputs;
  bool model;
  bool disc;
};

std::vector<Leaf> leaves_for(Scene& s, Selection sel, bool use_adv_input, bool use_clean_input) {
  std::vector<Leaf> leaves;
  if (sel.inputs) {
    if (use_clean_input) leaves.push_back({"x", &s.clean_ref.values, grad_or_zero(s.clean)});
    if (use_adv_input) leaves.push_back({"x_adv", &s.adv_ref.values, grad_or_zero(s.adv)});
  }
  if (sel.model) add_leaves(leaves, s.model_ref, s.model.named_parameters(), "f.");
  if (sel.disc) add_leaves(leaves, s.disc_ref, s.disc.named_parameters(), "disc.");
  return leaves;
}

void run_pair(std::vector<GradientCase>& out, const std::string& name, Scene& s, bool adv_input, bool clean_input,
              bool model_params, bool disc_params, const Objective& objective, std::size_t coordinates, double h,
              std::uint64_t seed) {
  auto inputs = leaves_for(s, {true, false, false}, adv_input, clean_input);
  out.push_back({name + " / input", check_gradients(inputs, objective, coordinates, h, derive_seed(seed, name + "in"))});
  auto params = leaves_for(s, {false, model_params, disc_params}, adv_input, clean_input);
  out.push_back(
      {name + " / parameters", check_gradients(params, objective, coordinates, h, derive_seed(seed, name + "param"))});
}

}  // namespace

std::vector<GradientCase> run_gradient_suite(std::uint64_t seed, std::size_t coordinates, double h) {
  std::vector<GradientCase> out;

  {  // Classifier f = head o phi under the clean classification loss.
    Scene s(derive_seed(seed, "classifier"));
    {
      Tape tape;
      TapeScope scope(tape);
      backward(loss_clean(s.model, s.clean_batch()));
    }
    run_pair(out, "classifier (clean loss)", s, false, true, true, false,
             [&](Trace* t) { return s.ref_clean(t); }, coordinates, h, seed);
  }

  {  // Discriminator on its own: both heads from a shared trunk.
    Scene s(derive_seed(seed, "discriminator"));
    Tensor z = random_tensor({kBatch, s.model.feature_width()}, 0.0f, 2.0f, derive_seed(seed, "z"));
    z.set_requires_grad(true);
    const Tensor mix = random_tensor({kBatch, 1}, -1.0f, 1.0f, derive_seed(seed, "mix"));
    {
      Tape tape;
      TapeScope scope(tape);
      const auto o = s.disc.forward(z);
      backward(ops::add(ops::sum(ops::mul(o.domain, mix)), ops::softmax_cross_entropy(o.logits, s.labels)));
    }
    Array z_ref = to_array(z);
    const Array mix_ref = to_array(mix);
    const Objective objective = [&](Trace* t) {
      const Array hidden = discriminator_trunk(s.disc_ref, z_ref, t);
      const Array d = discriminator_domain(s.disc_ref, hidden);
      double acc = 0.0;
      for (std::size_t i = 0; i < d.values.size(); ++i) acc += d.values[i] * mix_ref.values[i];
      return acc + cross_entropy(discriminator_class(s.disc_ref, hidden), s.labels);
    };
    std::vector<Leaf> in{{"z", &z_ref.values, grad_or_zero(z)}};
    out.push_back({"discriminator / input", check_gradients(in, objective, coordinates, h, derive_seed(seed, "din"))});
    std::vector<Leaf> params;
    add_leaves(params, s.disc_ref, s.disc.named_parameters(), "disc.");
    out.push_back(
        {"discriminator / parameters", check_gradients(params, objective, coordinates, h, derive_seed(seed, "dp"))});
  }

  {  // Adversarial class loss through phi, the trunk and h_c.
    Scene s(derive_seed(seed, "adv_class"));
    {
      Tape tape;
      TapeScope scope(tape);
      backward(loss_adv_class(s.model, s.disc, s.adv_batch()));
    }
    run_pair(out, "adversarial class loss", s, true, false, true, true, [&](Trace* t) { return s.ref_adv_class(t); },
             coordinates, h, seed);
  }

  {  // Domain loss, discriminator side: phi is held constant.
    Scene s(derive_seed(seed, "domain_disc"));
    s.clean.set_requires_grad(false);
    s.adv.set_requires_grad(false);
    {
      Tape tape;
      TapeScope scope(tape);
      backward(loss_domain(s.model, s.disc, s.clean_batch(), s.adv_batch(), DomainSide::discriminator));
    }
    auto params = leaves_for(s, {false, false, true}, false, false);
    out.push_back({"domain loss (discriminator side) / parameters",
                   check_gradients(params, [&](Trace* t) { return s.ref_domain(true, t); }, coordinates, h,
                                   derive_seed(seed, "dd"))});
  }

  {  // Domain loss, generator side: the discriminator is held constant.
    Scene s(derive_seed(seed, "domain_gen"));
    {
      Tape tape;
      TapeScope scope(tape);
      backward(loss_domain(s.model, s.disc, s.clean_batch(), s.adv_batch(), DomainSide::generator));
    }
    run_pair(out, "domain loss (generator side)", s, true, true, true, false,
             [&](Trace* t) { return s.ref_domain(false, t); }, coordinates, h, seed);
  }

  {  // Full classifier-side objective of the combined regime.
    Scene s(derive_seed(seed, "total"));
    {
      Tape tape;
      TapeScope scope(tape);
      const Tensor total =
          ops::add(ops::add(loss_clean(s.model, s.clean_batch()),
                            ops::scale(loss_adv_class(s.model, s.disc, s.adv_batch()), kLambda1)),
                   ops::scale(loss_domain(s.model, s.disc, s.clean_batch(), s.adv_batch(), DomainSide::generator),
                              kLambda2));
      backward(total);
    }
    // The trunk also feeds the (constant) domain path, so only h_c is
    // sampled on the discriminator side; the trunk is covered above.
    std::vector<Leaf> params = leaves_for(s, {false, true, false}, true, true);
    for (const auto& p : s.disc.named_parameters()) {
      if (p.name.rfind("class_head", 0) != 0) continue;
      params.push_back({"disc." + p.name, &s.disc_ref.params.at(p.name).values, grad_or_zero(p.tensor)});
    }
    const Objective objective = [&](Trace* t) {
      return s.ref_clean(t) + kLambda1 * s.ref_adv_class(t) + kLambda2 * s.ref_domain(false, t);
    };
    auto inputs = leaves_for(s, {true, false, false}, true, true);
    out.push_back({"combined objective / input",
                   check_gradients(inputs, objective, coordinates, h, derive_seed(seed, "tin"))});
    out.push_back({"combined objective / parameters",
                   check_gradients(params, objective, coordinates, h, derive_seed(seed, "tp"))});
  }
  return out;
}

}  // namespace reference
