#include "advforge/evaluation.hpp"

#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "advforge/random.hpp"
#include "json_number.hpp"

namespace advforge {

namespace {

std::ofstream open_for_write(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  return out;
}

Setting parse_setting(const std::string& text) {
  if (text == "white_box") return Setting::white_box;
  if (text == "black_box") return Setting::black_box;
  throw std::invalid_argument("unknown setting '" + text + "'");
}

std::string cell_key(const std::string& attack, Setting setting) {
  return attack == "clean" ? attack : attack + "/" + to_string(setting);
}

}  // namespace

std::vector<int> argmax_rows(const Tensor& logits) {
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

static std::size_t count_correct(const Classifier& model, const Tensor& images, std::span<const int> labels) {
  NoTapeScope no_tape;
  const auto pred = argmax_rows(model.frozen().forward(images));
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += pred[i] == labels[i] ? 1 : 0;
  return hits;
}

double accuracy(const Classifier& model, const Tensor& images, std::span<const int> labels) {
  if (labels.empty()) return 0.0;
  return static_cast<double>(count_correct(model, images, labels)) / static_cast<double>(labels.size());
}

double accuracy(const Classifier& model, const ImageBatch& batch) {
  return accuracy(model, batch.images, batch.labels);
}

double accuracy(const Classifier& model, const AdversarialBatch& adv) {
  return accuracy(model, adv.perturbed, adv.originals.labels);
}

double accuracy(const Classifier& model, const Dataset& ds, std::size_t batch_size) {
  if (batch_size == 0) throw std::invalid_argument("evaluation batch size must be positive");
  std::size_t hits = 0;
  for (std::size_t b = 0; b < ds.size(); b += batch_size) {
    const ImageBatch batch = ds.range(b, b + batch_size);
    hits += count_correct(model, batch.images, batch.labels);
  }
  return ds.size() ? static_cast<double>(hits) / static_cast<double>(ds.size()) : 0.0;
}

std::string to_string(Setting setting) { return setting == Setting::white_box ? "white_box" : "black_box"; }

std::string CellSpec::key() const { return cell_key(attack ? to_string(*attack) : "clean", setting); }
std::string CellResult::key() const { return cell_key(attack, setting); }

const CellResult& EvalReport::cell(const std::string& key) const {
  for (const auto& c : cells) {
    if (c.key() == key) return c;
  }
  throw std::out_of_range("report has no cell '" + key + "'");
}

AttackConfig mnist_eval_preset() { return AttackConfig{0.3f, 0.01f, 40, false, LabelSource::ground_truth, 0}; }
AttackConfig cifar_eval_preset() { return AttackConfig{0.031f, 0.003f, 20, false, LabelSource::ground_truth, 0}; }

GridRequest clean_grid() { return GridRequest{{CellSpec{}}}; }

GridRequest white_box_grid(const AttackConfig& preset) {
  GridRequest req = clean_grid();
  AttackConfig single = preset;
  single.step = preset.epsilon;
  single.iterations = 1;
  single.random_start = false;
  AttackConfig iterative = preset;
  iterative.random_start = false;
  AttackConfig projected = preset;
  projected.random_start = true;
  req.cells.push_back({AttackKind::fgsm, Setting::white_box, single});
  req.cells.push_back({AttackKind::bim, Setting::white_box, iterative});
  req.cells.push_back({AttackKind::pgd, Setting::white_box, projected});
  return req;
}

GridRequest full_grid(const AttackConfig& preset) {
  GridRequest req = white_box_grid(preset);
  const std::size_t n = req.cells.size();
  for (std::size_t i = 1; i < n; ++i) {
    CellSpec black = req.cells[i];
    black.setting = Setting::black_box;
    req.cells.push_back(black);
  }
  return req;
}

EvalReport evaluate_grid(const Classifier& model, const Classifier* surrogate, const Dataset& ds,
                         const GridRequest& request, const std::string& model_id, const std::string& surrogate_id) {
  if (request.batch_size == 0) throw std::invalid_argument("evaluation batch size must be positive");
  EvalReport report{ds.id(), model_id, "", {}};
  for (const auto& spec : request.cells) {
    if (spec.setting != Setting::black_box) continue;
    if (surrogate == nullptr) throw std::invalid_argument("black-box cell requested without a surrogate model");
    if (surrogate_id == model_id) throw std::invalid_argument("surrogate id must differ from the model id");
    report.surrogate_id = surrogate_id;
  }

  for (const auto& spec : request.cells) {
    CellResult cell;
    cell.attack = spec.attack ? to_string(*spec.attack) : "clean";
    cell.setting = spec.attack ? spec.setting : Setting::white_box;
    if (spec.attack) {
      cell.epsilon = spec.config.epsilon;
      cell.step = spec.config.step;
      cell.iterations = *spec.attack == AttackKind::fgsm ? 1 : spec.config.iterations;
    }
    std::size_t hits = 0;
    std::size_t batch_index = 0;
    for (std::size_t b = 0; b < ds.size(); b += request.batch_size, ++batch_index) {
      const ImageBatch batch = ds.range(b, b + request.batch_size);
      Tensor inputs = batch.images;
      if (spec.attack) {
        AttackConfig cfg = spec.config;
        cfg.seed = mix_seed(spec.config.seed ^ mix_seed(batch_index));
        const AdversarialBatch adv = spec.setting == Setting::white_box
                                         ? run_attack(*spec.attack, model, batch, cfg)
                                         : transfer_attack(*surrogate, model, batch, *spec.attack, cfg);
        inputs = adv.perturbed;
      }
      hits += count_correct(model, inputs, batch.labels);
    }
    cell.n_examples = ds.size();
    cell.accuracy = ds.size() ? static_cast<double>(hits) / static_cast<double>(ds.size()) : 0.0;
    report.cells.push_back(cell);
  }
  return report;
}

void export_features(const Classifier& model, const Dataset& ds, std::size_t limit,
                     const std::filesystem::path& out_path) {
  if (limit > ds.size()) {
    throw std::invalid_argument("export limit " + std::to_string(limit) + " exceeds dataset size " +
                                std::to_string(ds.size()));
  }
  auto out = open_for_write(out_path);
  const std::size_t width = model.feature_width();
  out << "label";
  for (std::size_t k = 0; k < width; ++k) out << ",f" << k;
  out << '\n';
  constexpr std::size_t kChunk = 250;
  char buf[32];
  for (std::size_t b = 0; b < limit; b += kChunk) {
    const ImageBatch batch = ds.range(b, std::min(limit, b + kChunk));
    NoTapeScope no_tape;
    const Tensor z = model.frozen().features(batch.images);
    const auto values = z.data();
    for (std::size_t i = 0; i < batch.size(); ++i) {
      out << batch.labels[i];
      for (std::size_t k = 0; k < width; ++k) {
        std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(values[i * width + k]));
        out << ',' << buf;
      }
      out << '\n';
    }
  }
  if (!out) throw std::runtime_error("write failed for " + out_path.string());
}

nlohmann::json to_json(const EvalReport& report) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : report.cells) {
    cells.push_back({{"attack", c.attack},
                     {"setting", to_string(c.setting)},
                     {"epsilon", detail::json_number(c.epsilon)},
                     {"step", detail::json_number(c.step)},
                     {"iterations", c.iterations},
                     {"accuracy", c.accuracy},
                     {"n_examples", c.n_examples}});
  }
  return {{"dataset", report.dataset_id},
          {"model", report.model_id},
          {"surrogate", report.surrogate_id},
          {"cells", cells}};
}

EvalReport report_from_json(const nlohmann::json& j) {
  EvalReport report;
  report.dataset_id = j.at("dataset").get<std::string>();
  report.model_id = j.at("model").get<std::string>();
  report.surrogate_id = j.at("surrogate").get<std::string>();
  for (const auto& c : j.at("cells")) {
    CellResult cell;
    cell.attack = c.at("attack").get<std::string>();
    cell.setting = parse_setting(c.at("setting").get<std::string>());
    cell.epsilon = c.at("epsilon").get<float>();
    cell.step = c.at("step").get<float>();
    cell.iterations = c.at("iterations").get<std::size_t>();
    cell.accuracy = c.at("accuracy").get<double>();
    cell.n_examples = c.at("n_examples").get<std::size_t>();
    report.cells.push_back(cell);
  }
  return report;
}

std::string format_percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", fraction * 100.0);
  return buf;
}

std::string table_header(const EvalReport& report) {
  std::string out = "defense";
  for (const auto& c : report.cells) {
    out += ',';
    out += c.attack == "clean" ? "clean" : c.attack + "_" + to_string(c.setting);
  }
  return out;
}

std::string table_row(const EvalReport& report) {
  std::string out = report.model_id;
  for (const auto& c : report.cells) out += "," + format_percent(c.accuracy);
  return out;
}

void write_report(const EvalReport& report, const std::filesystem::path& out_path, ReportFormat format) {
  auto out = open_for_write(out_path);
  if (format == ReportFormat::json) {
    out << to_json(report).dump(2) << '\n';
  } else {
    out << table_header(report) << '\n' << table_row(report) << '\n';
  }
  if (!out) throw std::runtime_error("write failed for " + out_path.string());
}

}  // namespace advforge
