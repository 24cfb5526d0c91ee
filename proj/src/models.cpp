#include "advforge/models.hpp"

#include <cmath>
#include <stdexcept>

#include "advforge/ops.hpp"
#include "advforge/random.hpp"
#include "advforge/tensor_io.hpp"

namespace advforge {

namespace {

constexpr std::size_t kLeNetHidden1 = 120;
constexpr std::size_t kLeNetHidden2 = 84;
constexpr const char* kDiscPrefix = "disc.";

Tensor init_weight(Shape shape, std::size_t fan_in, std::uint64_t seed) {
  const float bound = static_cast<float>(std::sqrt(6.0 / static_cast<double>(fan_in)));
  Rng rng(seed);
  std::vector<float> data(shape_numel(shape));
  for (auto& v : data) v = rng.uniform(-bound, bound);
  return Tensor::from_data(std::move(shape), std::move(data), true);
}

Dense make_dense(std::size_t in, std::size_t out, std::uint64_t seed, const std::string& name) {
  return Dense{init_weight({out, in}, in, derive_seed(seed, name + ".weight")), Tensor::zeros({out}, true)};
}

Conv make_conv(std::size_t cin, std::size_t cout, std::size_t k, std::size_t pad, std::uint64_t seed,
               const std::string& name) {
  return Conv{init_weight({cout, cin, k, k}, cin * k * k, derive_seed(seed, name + ".weight")),
              Tensor::zeros({cout}, true), pad};
}

Dense frozen(const Dense& d) { return Dense{d.weight.detach(), d.bias.detach()}; }
Dense cloned(const Dense& d) {
  Dense c{d.weight.clone(), d.bias.clone()};
  c.weight.set_requires_grad(true);
  c.bias.set_requires_grad(true);
  return c;
}

void append(std::vector<NamedTensor>& out, const std::string& name, const Dense& d) {
  out.push_back({name + ".weight", d.weight});
  out.push_back({name + ".bias", d.bias});
}

std::vector<Tensor> tensors_of(const std::vector<NamedTensor>& named) {
  std::vector<Tensor> out;
  out.reserve(named.size());
  for (const auto& n : named) out.push_back(n.tensor);
  return out;
}

std::size_t count_of(const std::vector<NamedTensor>& named) {
  std::size_t total = 0;
  for (const auto& n : named) total += n.tensor.numel();
  return total;
}

void copy_into(Tensor& dst, const Tensor& src, const std::string& name) {
  if (dst.shape() != src.shape()) {
    throw ShapeError("parameter '" + name + "' has shape " + shape_str(src.shape()) + ", expected " +
                     shape_str(dst.shape()));
  }
  auto out = dst.mutable_data();
  const auto in = src.data();
  std::copy(in.begin(), in.end(), out.begin());
}

void load_named(const std::vector<NamedTensor>& targets, const std::vector<NamedTensor>& sources) {
  for (auto target : targets) {
    bool found = false;
    for (const auto& src : sources) {
      if (src.name == target.name) {
        copy_into(target.tensor, src.tensor, target.name);
        found = true;
        break;
      }
    }
    if (!found) throw std::invalid_argument("missing parameter '" + target.name + "'");
  }
}

}  // namespace

std::string to_string(Architecture arch) {
  switch (arch) {
    case Architecture::lenet:
      return "lenet";
    case Architecture::small_cnn:
      return "small_cnn";
  }
  return "unknown";
}

Architecture parse_architecture(const std::string& text) {
  if (text == "lenet") return Architecture::lenet;
  if (text == "small_cnn") return Architecture::small_cnn;
  throw std::invalid_argument("unknown architecture id '" + text + "' (expected lenet or small_cnn)");
}

std::vector<std::size_t> ModelConfig::resolved_channels() const {
  if (!channels.empty()) return channels;
  if (architecture == Architecture::lenet) return {6, 16};
  return {16, 32, 32};
}

nlohmann::json to_json(const ModelConfig& cfg) {
  // nlohmann::json objects keep keys sorted, so dump() is canonical.
  return nlohmann::json{{"architecture", to_string(cfg.architecture)},
                        {"channels", cfg.resolved_channels()},
                        {"classes", cfg.classes},
                        {"input_shape", cfg.input_shape},
                        {"seed", cfg.seed}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  cfg.architecture = parse_architecture(j.at("architecture").get<std::string>());
  cfg.channels = j.at("channels").get<std::vector<std::size_t>>();
  cfg.classes = j.at("classes").get<std::size_t>();
  cfg.input_shape = j.at("input_shape").get<Shape>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  return cfg;
}

Tensor Dense::operator()(const Tensor& x) const { return ops::linear(x, weight, bias); }

// ---- Classifier -------------------------------------------------------------

Classifier::Classifier(const ModelConfig& cfg) : cfg_(cfg) {
  if (cfg.input_shape.size() != 3 || shape_numel(cfg.input_shape) == 0) {
    throw std::invalid_argument("model input shape must be [channels, height, width], got " +
                                shape_str(cfg.input_shape));
  }
  if (cfg.classes < 2) throw std::invalid_argument("model needs at least 2 classes");
  cfg_.channels = cfg.resolved_channels();
  const auto& widths = cfg_.channels;
  const std::size_t cin = cfg.input_shape[0];
  std::size_t h = cfg.input_shape[1], w = cfg.input_shape[2];
  const std::uint64_t seed = cfg.seed;

  if (cfg.architecture == Architecture::lenet) {
    if (widths.size() != 2) throw std::invalid_argument("lenet expects 2 channel widths");
    convs_.push_back(make_conv(cin, widths[0], 5, 2, seed, "conv1"));
    h /= 2;
    w /= 2;
    if (h < 5 || w < 5) throw std::invalid_argument("lenet input too small: " + shape_str(cfg.input_shape));
    convs_.push_back(make_conv(widths[0], widths[1], 5, 0, seed, "conv2"));
    h = (h - 4) / 2;
    w = (w - 4) / 2;
    if (h == 0 || w == 0) throw std::invalid_argument("lenet input too small: " + shape_str(cfg.input_shape));
    const std::size_t flat = widths[1] * h * w;
    hidden_.push_back(make_dense(flat, kLeNetHidden1, seed, "fc1"));
    hidden_.push_back(make_dense(kLeNetHidden1, kLeNetHidden2, seed, "fc2"));
    feature_width_ = kLeNetHidden2;
  } else {
    if (widths.size() != 3) throw std::invalid_argument("small_cnn expects 3 channel widths");
    std::size_t prev = cin;
    for (std::size_t i = 0; i < widths.size(); ++i) {
      convs_.push_back(make_conv(prev, widths[i], 3, 1, seed, "conv" + std::to_string(i + 1)));
      prev = widths[i];
      h /= 2;
      w /= 2;
    }
    if (h == 0 || w == 0) throw std::invalid_argument("small_cnn input too small: " + shape_str(cfg.input_shape));
    feature_width_ = prev * h * w;
  }
  head_ = make_dense(feature_width_, cfg.classes, seed, "head");
}

Tensor Classifier::features(const Tensor& x) const {
  if (x.rank() != 4 || Shape(x.shape().begin() + 1, x.shape().end()) != cfg_.input_shape) {
    throw ShapeError("classifier expects input [batch]x" + shape_str(cfg_.input_shape) + ", got " +
                     shape_str(x.shape()));
  }
  Tensor h = x;
  for (const auto& c : convs_) {
    h = ops::relu(ops::conv2d(h, c.weight, c.bias, {1, c.padding}));
    h = ops::max_pool2d(h, 2, 2);
  }
  h = ops::flatten(h);
  for (const auto& d : hidden_) h = ops::relu(d(h));
  return h;
}

Tensor Classifier::head(const Tensor& z) const {
  if (z.rank() != 2 || z.dim(1) != feature_width_) {
    throw ShapeError("classifier head expects [batch]x[" + std::to_string(feature_width_) + "], got " +
                     shape_str(z.shape()));
  }
  return head_(z);
}

std::vector<NamedTensor> Classifier::named_parameters() const {
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    const std::string name = "conv" + std::to_string(i + 1);
    out.push_back({name + ".weight", convs_[i].weight});
    out.push_back({name + ".bias", convs_[i].bias});
  }
  for (std::size_t i = 0; i < hidden_.size(); ++i) append(out, "fc" + std::to_string(i + 1), hidden_[i]);
  append(out, "head", head_);
  return out;
}

std::vector<Tensor> Classifier::parameters() const { return tensors_of(named_parameters()); }

std::vector<Tensor> Classifier::feature_parameters() const {
  auto all = parameters();
  all.resize(all.size() - 2);
  return all;
}

std::vector<Tensor> Classifier::head_parameters() const { return {head_.weight, head_.bias}; }

std::size_t Classifier::parameter_count() const { return count_of(named_parameters()); }

Classifier Classifier::frozen() const {
  Classifier view;
  view.cfg_ = cfg_;
  view.feature_width_ = feature_width_;
  view.queries_ = queries_;
  for (const auto& c : convs_) view.convs_.push_back(Conv{c.weight.detach(), c.bias.detach(), c.padding});
  for (const auto& d : hidden_) view.hidden_.push_back(advforge::frozen(d));
  view.head_ = advforge::frozen(head_);
  return view;
}

Classifier Classifier::clone() const {
  Classifier copy;
  copy.cfg_ = cfg_;
  copy.feature_width_ = feature_width_;
  for (const auto& c : convs_) {
    Conv cc{c.weight.clone(), c.bias.clone(), c.padding};
    cc.weight.set_requires_grad(true);
    cc.bias.set_requires_grad(true);
    copy.convs_.push_back(std::move(cc));
  }
  for (const auto& d : hidden_) copy.hidden_.push_back(cloned(d));
  copy.head_ = cloned(head_);
  return copy;
}

void Classifier::load_parameters(const std::vector<NamedTensor>& params) { load_named(named_parameters(), params); }

// ---- Discriminator ----------------------------------------------------------

Discriminator::Discriminator(std::size_t feature_width, std::size_t classes, std::uint64_t seed)
    : width_(feature_width), classes_(classes) {
  if (feature_width < 1) throw std::invalid_argument("discriminator feature width must be positive");
  if (classes < 2) throw std::invalid_argument("discriminator needs at least 2 classes");
  for (std::size_t i = 0; i < 3; ++i) {
    trunk_.push_back(make_dense(width_, width_, seed, "trunk" + std::to_string(i + 1)));
  }
  domain_ = make_dense(width_, 1, seed, "domain_head");
  class_ = make_dense(width_, classes_, seed, "class_head");
}

Tensor Discriminator::trunk(const Tensor& z) const {
  if (z.rank() != 2 || z.dim(1) != width_) {
    throw ShapeError("discriminator expects features [batch]x[" + std::to_string(width_) + "], got " +
                     shape_str(z.shape()));
  }
  Tensor h = z;
  for (const auto& d : trunk_) h = ops::relu(d(h));
  return h;
}

Discriminator::Output Discriminator::forward(const Tensor& z) const {
  const Tensor h = trunk(z);
  return Output{domain_(h), class_(h)};
}

std::vector<NamedTensor> Discriminator::named_parameters() const {
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < trunk_.size(); ++i) append(out, "trunk" + std::to_string(i + 1), trunk_[i]);
  append(out, "domain_head", domain_);
  append(out, "class_head", class_);
  return out;
}

std::vector<Tensor> Discriminator::parameters() const { return tensors_of(named_parameters()); }

std::vector<Tensor> Discriminator::trunk_parameters() const {
  std::vector<Tensor> out;
  for (const auto& d : trunk_) {
    out.push_back(d.weight);
    out.push_back(d.bias);
  }
  return out;
}

std::vector<Tensor> Discriminator::domain_head_parameters() const { return {domain_.weight, domain_.bias}; }
std::vector<Tensor> Discriminator::class_head_parameters() const { return {class_.weight, class_.bias}; }
std::size_t Discriminator::parameter_count() const { return count_of(named_parameters()); }

Discriminator Discriminator::frozen() const {
  Discriminator view;
  view.width_ = width_;
  view.classes_ = classes_;
  for (const auto& d : trunk_) view.trunk_.push_back(advforge::frozen(d));
  view.domain_ = advforge::frozen(domain_);
  view.class_ = advforge::frozen(class_);
  return view;
}

Discriminator Discriminator::clone() const {
  Discriminator copy;
  copy.width_ = width_;
  copy.classes_ = classes_;
  for (const auto& d : trunk_) copy.trunk_.push_back(cloned(d));
  copy.domain_ = cloned(domain_);
  copy.class_ = cloned(class_);
  return copy;
}

void Discriminator::load_parameters(const std::vector<NamedTensor>& params) {
  load_named(named_parameters(), params);
}

// ---- Builders & checkpoints -------------------------------------------------

Classifier build_classifier(const ModelConfig& cfg) { return Classifier(cfg); }

Discriminator build_discriminator(std::size_t feature_width, std::size_t classes, std::uint64_t seed) {
  return Discriminator(feature_width, classes, seed);
}

Tensor extract_features(const Classifier& model, const Tensor& images) { return model.features(images); }

void save_checkpoint(const std::filesystem::path& path, const Classifier& model, const Discriminator* disc) {
  TensorArchive archive;
  for (const auto& p : model.named_parameters()) archive.records.push_back({p.name, p.tensor});
  if (disc != nullptr) {
    for (const auto& p : disc->named_parameters()) archive.records.push_back({kDiscPrefix + p.name, p.tensor});
  }
  archive.metadata = to_json(model.config()).dump();
  write_archive(path, archive);
}

LoadedModel load_checkpoint(const std::filesystem::path& path) {
  const TensorArchive archive = read_archive(path);
  ModelConfig cfg;
  try {
    cfg = model_config_from_json(nlohmann::json::parse(archive.metadata));
  } catch (const nlohmann::json::exception& e) {
    throw ArchiveError("checkpoint " + path.string() + " has invalid model metadata: " + e.what());
  }
  std::vector<NamedTensor> model_params;
  std::vector<NamedTensor> disc_params;
  const std::string prefix = kDiscPrefix;
  for (const auto& r : archive.records) {
    if (r.name.rfind(prefix, 0) == 0) {
      disc_params.push_back({r.name.substr(prefix.size()), r.tensor});
    } else {
      model_params.push_back({r.name, r.tensor});
    }
  }
  LoadedModel loaded{Classifier(cfg), std::nullopt};
  loaded.classifier.load_parameters(model_params);
  if (!disc_params.empty()) {
    Tensor class_w;
    for (const auto& p : disc_params) {
      if (p.name == "class_head.weight") class_w = p.tensor;
    }
    if (!class_w.defined() || class_w.rank() != 2) {
      throw ArchiveError("checkpoint " + path.string() + " has discriminator records without a class head");
    }
    Discriminator disc(class_w.dim(1), class_w.dim(0), 0);
    disc.load_parameters(disc_params);
    loaded.discriminator = std::move(disc);
  }
  return loaded;
}

}  // namespace advforge
