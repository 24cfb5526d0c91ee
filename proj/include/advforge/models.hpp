#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "advforge/tensor.hpp"

namespace advforge {

enum class Architecture { lenet, small_cnn };

std::string to_string(Architecture arch);
Architecture parse_architecture(const std::string& text);

struct ModelConfig {
  Architecture architecture = Architecture::lenet;
  Shape input_shape{1, 28, 28};
  std::size_t classes = 10;
  // Convolution widths. Empty selects the architecture default:
  // lenet {6, 16}, small_cnn {16, 32, 32}.
  std::vector<std::size_t> channels;
  std::uint64_t seed = 0;

  std::vector<std::size_t> resolved_channels() const;
  bool operator==(const ModelConfig&) const = default;
};

nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct Dense {
  Tensor weight;  // [out, in]
  Tensor bias;    // [out]
  Tensor operator()(const Tensor& x) const;
};

struct Conv {
  Tensor weight;  // [cout, cin, k, k]
  Tensor bias;    // [cout]
  std::size_t padding = 0;
};

/// Image classifier f = head o phi.
///
/// phi is every layer before the final fully connected layer; its output is
/// the feature vector z of width feature_width().
class Classifier {
 public:
  explicit Classifier(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  std::size_t feature_width() const { return feature_width_; }
  std::size_t classes() const { return cfg_.classes; }

  Tensor features(const Tensor& x) const;
  Tensor head(const Tensor& z) const;
  Tensor forward(const Tensor& x) const { return head(features(x)); }

  std::vector<NamedTensor> named_parameters() const;
  std::vector<Tensor> parameters() const;
  std::vector<Tensor> feature_parameters() const;
  std::vector<Tensor> head_parameters() const;
  std::size_t parameter_count() const;

  /// View with detached parameters: same storage, no parameter gradients.
  /// Shares the gradient-query counter with the original.
  Classifier frozen() const;
  /// Independent copy of every parameter.
  Classifier clone() const;

  // Number of input-gradient evaluations made through this model (attacks).
  std::uint64_t gradient_queries() const { return queries_->load(); }
  void note_gradient_query() const { queries_->fetch_add(1); }

  void load_parameters(const std::vector<NamedTensor>& params);

 private:
  Classifier() = default;

  ModelConfig cfg_;
  std::size_t feature_width_ = 0;
  std::vector<Conv> convs_;
  std::vector<Dense> hidden_;
  Dense head_;
  std::shared_ptr<std::atomic<std::uint64_t>> queries_ = std::make_shared<std::atomic<std::uint64_t>>(0);
};

/// Class-aware discriminator: three shared fully connected layers of width D
/// followed by a domain head (1 output) and a class head (C outputs).
class Discriminator {
 public:
  Discriminator(std::size_t feature_width, std::size_t classes, std::uint64_t seed);

  struct Output {
    Tensor domain;  // [batch, 1]
    Tensor logits;  // [batch, C]
  };

  std::size_t feature_width() const { return width_; }
  std::size_t classes() const { return classes_; }

  Tensor trunk(const Tensor& z) const;
  Tensor domain_head(const Tensor& hidden) const { return domain_(hidden); }
  Tensor class_head(const Tensor& hidden) const { return class_(hidden); }
  Output forward(const Tensor& z) const;

  std::vector<NamedTensor> named_parameters() const;
  std::vector<Tensor> parameters() const;
  std::vector<Tensor> trunk_parameters() const;
  std::vector<Tensor> domain_head_parameters() const;
  std::vector<Tensor> class_head_parameters() const;
  std::size_t parameter_count() const;

  Discriminator frozen() const;
  Discriminator clone() const;

  void load_parameters(const std::vector<NamedTensor>& params);

 private:
  Discriminator() = default;

  std::size_t width_ = 0;
  std::size_t classes_ = 0;
  std::vector<Dense> trunk_;
  Dense domain_;
  Dense class_;
};

Classifier build_classifier(const ModelConfig& cfg);
Discriminator build_discriminator(std::size_t feature_width, std::size_t classes, std::uint64_t seed);
Tensor extract_features(const Classifier& model, const Tensor& images);

// Checkpoints: classifier records, optional "disc."-prefixed discriminator
// records, metadata = canonical ModelConfig JSON.
struct LoadedModel {
  Classifier classifier;
  std::optional<Discriminator> discriminator;
};

void save_checkpoint(const std::filesystem::path& path, const Classifier& model,
                     const Discriminator* disc = nullptr);
LoadedModel load_checkpoint(const std::filesystem::path& path);

}  // namespace advforge
