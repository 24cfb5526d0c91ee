#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "advforge/attacks.hpp"
#include "advforge/data.hpp"
#include "advforge/models.hpp"

namespace advforge {

/// Index of the largest logit per row; ties go to the lowest class index.
std::vector<int> argmax_rows(const Tensor& logits);

double accuracy(const Classifier& model, const Tensor& images, std::span<const int> labels);
double accuracy(const Classifier& model, const ImageBatch& batch);
double accuracy(const Classifier& model, const AdversarialBatch& adv);
double accuracy(const Classifier& model, const Dataset& ds, std::size_t batch_size = 250);

enum class Setting { white_box, black_box };
std::string to_string(Setting setting);

struct CellSpec {
  std::optional<AttackKind> attack;  // nullopt: clean images
  Setting setting = Setting::white_box;
  AttackConfig config;

  std::string key() const;
};

struct CellResult {
  std::string attack;  // "clean", "fgsm", "bim", "pgd"
  Setting setting = Setting::white_box;
  float epsilon = 0.0f;
  float step = 0.0f;
  std::size_t iterations = 0;
  double accuracy = 0.0;
  std::size_t n_examples = 0;

  std::string key() const;
  bool operator==(const CellResult&) const = default;
};

struct EvalReport {
  std::string dataset_id;
  std::string model_id;
  std::string surrogate_id;  // empty when no black-box cell was requested
  std::vector<CellResult> cells;

  const CellResult& cell(const std::string& key) const;
  bool operator==(const EvalReport&) const = default;
};

struct GridRequest {
  std::vector<CellSpec> cells;
  std::size_t batch_size = 250;
};

/// Attack settings of the published evaluation protocol.
AttackConfig mnist_eval_preset();
AttackConfig cifar_eval_preset();

GridRequest clean_grid();
/// Clean plus FGSM, BIM (no random start) and PGD (random start), white-box.
GridRequest white_box_grid(const AttackConfig& preset);
/// white_box_grid plus the three attacks transferred from a surrogate.
GridRequest full_grid(const AttackConfig& preset);

EvalReport evaluate_grid(const Classifier& model, const Classifier* surrogate, const Dataset& ds,
                         const GridRequest& request, const std::string& model_id = "model",
                         const std::string& surrogate_id = "surrogate");

/// CSV "label,f0,...,f{D-1}" of phi(x) for the first `limit` items.
void export_features(const Classifier& model, const Dataset& ds, std::size_t limit,
                     const std::filesystem::path& out_path);

enum class ReportFormat { json, csv };

nlohmann::json to_json(const EvalReport& report);
EvalReport report_from_json(const nlohmann::json& j);
/// Percent with two decimals, e.g. 0.9916 -> "99.16".
std::string format_percent(double fraction);
std::string table_header(const EvalReport& report);
std::string table_row(const EvalReport& report);
void write_report(const EvalReport& report, const std::filesystem::path& out_path, ReportFormat format);

}  // namespace advforge
