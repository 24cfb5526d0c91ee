#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "advforge/attacks.hpp"
#include "advforge/data.hpp"
#include "advforge/evaluation.hpp"
#include "advforge/experiment.hpp"
#include "advforge/models.hpp"
#include "advforge/random.hpp"
#include "advforge/run_config.hpp"
#include "advforge/runtime.hpp"
#include "advforge/tensor_io.hpp"
#include "advforge/training.hpp"

namespace fs = std::filesystem;
using namespace advforge;

namespace {

enum ExitCode : int { kOk = 0, kConfigError = 1, kDataError = 2, kNonFinite = 3, kInternal = 4 };

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string run_dir;

  void attach(CLI::App& cmd) {
    cmd.add_option("-c,--config", config_path, "Run configuration file (key=value, [section] headers)");
    cmd.add_option("-s,--set", overrides, "Override one config key, e.g. --set train.epochs=1 (repeatable)");
    cmd.add_option("--run-dir", run_dir,
                   "Output directory (default: <output.dir>/<command>-<config hash>-<UTC timestamp>)");
  }

  RunConfig resolve() const {
    RunConfig cfg = config_path.empty() ? RunConfig() : RunConfig::load(config_path);
    for (const auto& o : overrides) cfg.apply_override(o);
    return cfg;
  }
};

std::string defaults_footer() {
  std::string out = "Config keys and defaults:\n";
  for (const auto& [key, value] : RunConfig::defaults()) {
    out += "  " + key + "=" + (value.empty() ? "\"\"" : value) + "\n";
  }
  return out;
}

void check_input_shape(const Classifier& model, const Dataset& ds) {
  if (model.config().input_shape != ds.item_shape()) {
    throw ShapeError("checkpoint expects inputs " + shape_str(model.config().input_shape) + " but dataset " +
                     ds.id() + " has items " + shape_str(ds.item_shape()));
  }
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

// ---- train -------------------------------------------------------------------

int cmd_train(const Common& common) {
  const RunConfig cfg = common.resolve();
  const TrainConfig tc = cfg.train_config();
  const ModelConfig mc = cfg.model_config();
  const Dataset train_set = load_dataset(cfg, Split::train);
  const Dataset test_set = load_dataset(cfg, Split::test);
  const fs::path dir = prepare_run_dir(cfg, "train", common.run_dir);

  const Classifier model = build_classifier(mc);
  std::optional<Discriminator> disc;
  if (uses_discriminator(tc.regime)) {
    disc = build_discriminator(model.feature_width(), mc.classes, cfg.discriminator_seed());
  }

  std::ofstream log_file(dir / "train_log.jsonl");
  TrainOptions opts;
  opts.heldout = &test_set;
  opts.checkpoint_every = cfg.get_uint("train.checkpoint_every");
  if (opts.checkpoint_every > 0) {
    opts.checkpoint_dir = dir / "checkpoints";
    fs::create_directories(opts.checkpoint_dir);
  }
  opts.on_epoch = [&](const EpochRecord& rec) {
    log_file << to_json(rec).dump() << '\n' << std::flush;
    std::printf("epoch %zu/%zu  clean_loss %.4f  adv_loss %.4f  disc %.4f  clean_acc %s%%  pgd_acc %s%%  (%.1fs)\n",
                rec.epoch, tc.epochs, rec.clean_loss, rec.adv_loss, rec.disc_loss,
                format_percent(rec.clean_acc).c_str(), format_percent(rec.adv_acc).c_str(), rec.wall_time);
    std::fflush(stdout);
  };

  std::printf("training %s %s on %s (%zu items), run dir %s\n", to_string(tc.regime).c_str(),
              to_string(mc.architecture).c_str(), train_set.id().c_str(), train_set.size(), dir.c_str());
  const TrainResult result = train(model, std::move(disc), train_set, tc, opts);
  save_checkpoint(dir / "model.advf", result.model, result.discriminator ? &*result.discriminator : nullptr);

  const EpochRecord& last = result.log.epochs.back();
  std::printf("done: clean_acc %s%%  pgd_acc %s%% on %zu held-out items; checkpoint %s\n",
              format_percent(last.clean_acc).c_str(), format_percent(last.adv_acc).c_str(),
              std::min<std::size_t>(test_set.size(), tc.eval_limit ? tc.eval_limit : test_set.size()),
              (dir / "model.advf").c_str());
  return kOk;
}

std::size_t correct(const Classifier& model, const Tensor& images, const std::vector<int>& labels) {
  NoTapeScope no_tape;
  const auto predicted = argmax_rows(model.frozen().forward(images));
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predicted[i] == labels[i] ? 1 : 0;
  return hits;
}

// ---- attack ------------------------------------------------------------------

struct AttackFlags {
  std::string checkpoint;
  std::string attack = "pgd";
  float epsilon = 0.3f;
  float step = 0.01f;
  std::size_t iterations = 40;
  bool random_start = true;
  std::string label_source = "ground_truth";
  CLI::Option* epsilon_opt = nullptr;
  CLI::Option* step_opt = nullptr;
  CLI::Option* iters_opt = nullptr;
  CLI::Option* random_opt = nullptr;
  CLI::Option* labels_opt = nullptr;
};

int cmd_attack(const Common& common, const AttackFlags& flags) {
  RunConfig cfg = common.resolve();
  if (flags.epsilon_opt->count()) cfg.set("attack.epsilon", std::to_string(flags.epsilon));
  if (flags.step_opt->count()) cfg.set("attack.step", std::to_string(flags.step));
  if (flags.iters_opt->count()) cfg.set("attack.iterations", std::to_string(flags.iterations));
  if (flags.random_opt->count()) cfg.set("attack.random_start", flags.random_start ? "true" : "false");
  if (flags.labels_opt->count()) cfg.set("attack.label_source", flags.label_source);
  AttackKind kind;
  try {
    kind = parse_attack_kind(flags.attack);
  } catch (const std::invalid_argument& e) {
    throw ConfigError("--attack", e.what());
  }
  AttackConfig ac = cfg.train_config().attack;
  ac.seed = derive_seed(cfg.seed(), "attack.cli");

  const LoadedModel loaded = load_checkpoint(flags.checkpoint);
  const Dataset ds = load_dataset(cfg, Split::test);
  check_input_shape(loaded.classifier, ds);
  const fs::path dir = prepare_run_dir(cfg, "attack", common.run_dir);

  const std::size_t n = ds.size();
  std::vector<float> originals, perturbed, labels;
  originals.reserve(n * ds.item_numel());
  perturbed.reserve(n * ds.item_numel());
  std::size_t adv_hits = 0;
  std::size_t clean_hits = 0;
  constexpr std::size_t kChunk = 250;
  for (std::size_t b = 0, index = 0; b < n; b += kChunk, ++index) {
    const ImageBatch batch = ds.range(b, b + kChunk);
    AttackConfig chunk = ac;
    chunk.seed = mix_seed(ac.seed ^ mix_seed(index));
    const AdversarialBatch adv = run_attack(kind, loaded.classifier, batch, chunk);
    adv_hits += correct(loaded.classifier, adv.perturbed, batch.labels);
    clean_hits += correct(loaded.classifier, batch.images, batch.labels);
    originals.insert(originals.end(), batch.images.data().begin(), batch.images.data().end());
    perturbed.insert(perturbed.end(), adv.perturbed.data().begin(), adv.perturbed.data().end());
    for (int label : batch.labels) labels.push_back(static_cast<float>(label));
  }

  Shape shape{n};
  shape.insert(shape.end(), ds.item_shape().begin(), ds.item_shape().end());
  const double adv_acc = n ? static_cast<double>(adv_hits) / static_cast<double>(n) : 0.0;
  const double clean_acc = n ? static_cast<double>(clean_hits) / static_cast<double>(n) : 0.0;
  nlohmann::json sidecar{{"attack", to_string(kind)},
                         {"config", to_json(ac)},
                         {"checkpoint", flags.checkpoint},
                         {"dataset", ds.id()},
                         {"n_examples", n},
                         {"accuracy", adv_acc},
                         {"clean_accuracy", clean_acc}};
  TensorArchive archive;
  archive.records.push_back({"originals", Tensor::from_data(shape, std::move(originals))});
  archive.records.push_back({"perturbed", Tensor::from_data(shape, std::move(perturbed))});
  archive.records.push_back({"labels", Tensor::from_data({n}, std::move(labels))});
  archive.metadata = sidecar.dump();
  write_archive(dir / "adversarial.advf", archive);
  write_json(dir / "attack.json", sidecar);

  std::printf("%s eps=%g step=%g K=%zu on %s: accuracy %s%% (clean %s%%); wrote %s\n", to_string(kind).c_str(),
              ac.epsilon, ac.step, kind == AttackKind::fgsm ? std::size_t{1} : ac.iterations, ds.id().c_str(),
              format_percent(adv_acc).c_str(), format_percent(clean_acc).c_str(), dir.c_str());
  return kOk;
}

// ---- eval --------------------------------------------------------------------

struct EvalFlags {
  std::string checkpoint;
  std::string surrogate;
  std::string grid = "white_box";
  std::string model_id;
  std::string surrogate_id;
};

int cmd_eval(const Common& common, const EvalFlags& flags) {
  const RunConfig cfg = common.resolve();
  GridRequest request;
  AttackConfig preset = cfg.train_config().attack;
  preset.seed = derive_seed(cfg.seed(), "eval");
  if (flags.grid == "clean") {
    request = clean_grid();
  } else if (flags.grid == "white_box") {
    request = white_box_grid(preset);
  } else if (flags.grid == "full") {
    if (flags.surrogate.empty()) throw ConfigError("--surrogate", "the full grid has black-box cells and needs --surrogate");
    request = full_grid(preset);
  } else {
    throw ConfigError("--grid", "unknown grid '" + flags.grid + "' (expected clean, white_box or full)");
  }

  const LoadedModel model = load_checkpoint(flags.checkpoint);
  std::optional<LoadedModel> surrogate;
  if (!flags.surrogate.empty()) surrogate = load_checkpoint(flags.surrogate);
  const Dataset ds = load_dataset(cfg, Split::test);
  check_input_shape(model.classifier, ds);
  if (surrogate) check_input_shape(surrogate->classifier, ds);

  std::string model_id = flags.model_id.empty() ? fs::path(flags.checkpoint).stem().string() : flags.model_id;
  std::string surrogate_id = flags.surrogate_id;
  if (surrogate_id.empty() && surrogate) surrogate_id = fs::path(flags.surrogate).stem().string();
  if (surrogate && surrogate_id == model_id) surrogate_id += "-surrogate";

  const fs::path dir = prepare_run_dir(cfg, "eval", common.run_dir);
  const EvalReport report = evaluate_grid(model.classifier, surrogate ? &surrogate->classifier : nullptr, ds,
                                          request, model_id, surrogate_id);
  write_report(report, dir / "report.json", ReportFormat::json);
  write_report(report, dir / "report.csv", ReportFormat::csv);
  std::printf("%s\n%s\n", table_header(report).c_str(), table_row(report).c_str());
  return kOk;
}

// ---- export-features ---------------------------------------------------------

struct ExportFlags {
  std::string checkpoint;
  std::size_t limit = 500;
  std::string out;
};

int cmd_export(const Common& common, const ExportFlags& flags) {
  const RunConfig cfg = common.resolve();
  const LoadedModel model = load_checkpoint(flags.checkpoint);
  const Dataset ds = load_dataset(cfg, Split::test);
  check_input_shape(model.classifier, ds);
  if (flags.limit > ds.size()) {
    throw ConfigError("--limit", "--limit " + std::to_string(flags.limit) + " exceeds the dataset size " +
                                     std::to_string(ds.size()));
  }
  fs::path out = flags.out;
  if (out.empty()) out = prepare_run_dir(cfg, "export-features", common.run_dir) / "features.csv";
  export_features(model.classifier, ds, flags.limit, out);
  std::printf("wrote %zu rows of %zu features to %s\n", flags.limit, model.classifier.feature_width(), out.c_str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"advforge: adversarial attacks and class-aware domain-adaptive training"};
  app.require_subcommand(1);
  app.get_formatter()->column_width(40);

  Common common;
  auto* train_cmd = app.add_subcommand("train", "Train a classifier under one regime (vanilla, at, da, ca, cada)");
  common.attach(*train_cmd);
  train_cmd->footer(defaults_footer());

  AttackFlags attack_flags;
  auto* attack_cmd = app.add_subcommand("attack", "Perturb the test split of a checkpoint's data with fgsm, bim or pgd");
  common.attach(*attack_cmd);
  attack_cmd->add_option("--checkpoint", attack_flags.checkpoint, "Model checkpoint (.advf)")->required();
  attack_cmd->add_option("--attack", attack_flags.attack, "fgsm, bim or pgd")->capture_default_str();
  attack_flags.epsilon_opt =
      attack_cmd->add_option("--epsilon", attack_flags.epsilon, "L-infinity budget on the [0,1] scale")
          ->capture_default_str();
  attack_flags.step_opt =
      attack_cmd->add_option("--step", attack_flags.step, "Per-iteration step")->capture_default_str();
  attack_flags.iters_opt =
      attack_cmd->add_option("--iters", attack_flags.iterations, "Iterations (bim, pgd)")->capture_default_str();
  attack_flags.random_opt = attack_cmd
                                ->add_option("--random-start", attack_flags.random_start,
                                             "Uniform start inside the budget (pgd only)")
                                ->capture_default_str();
  attack_flags.labels_opt = attack_cmd
                                ->add_option("--label-source", attack_flags.label_source,
                                             "ground_truth or model_predicted")
                                ->capture_default_str();

  EvalFlags eval_flags;
  auto* eval_cmd = app.add_subcommand("eval", "Accuracy over the clean/FGSM/BIM/PGD x white/black-box grid");
  common.attach(*eval_cmd);
  eval_cmd->add_option("--checkpoint", eval_flags.checkpoint, "Model checkpoint (.advf)")->required();
  eval_cmd->add_option("--surrogate", eval_flags.surrogate, "Surrogate checkpoint for black-box cells");
  eval_cmd->add_option("--grid", eval_flags.grid, "clean, white_box or full")->capture_default_str();
  eval_cmd->add_option("--model-id", eval_flags.model_id, "Row label (default: checkpoint file stem)");
  eval_cmd->add_option("--surrogate-id", eval_flags.surrogate_id, "Surrogate label (default: its file stem)");
  eval_cmd->footer("Attack settings come from attack.epsilon (0.3), attack.step (0.01) and attack.iterations (40).");

  ExportFlags export_flags;
  auto* export_cmd = app.add_subcommand("export-features", "Write phi(x) of the first test items as CSV");
  common.attach(*export_cmd);
  export_cmd->add_option("--checkpoint", export_flags.checkpoint, "Model checkpoint (.advf)")->required();
  export_cmd->add_option("--limit", export_flags.limit, "Number of test items")->capture_default_str();
  export_cmd->add_option("--out", export_flags.out, "Output CSV (default: <run dir>/features.csv)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigError;
  }

  try {
    if (*train_cmd) return cmd_train(common);
    if (*attack_cmd) return cmd_attack(common, attack_flags);
    if (*eval_cmd) return cmd_eval(common, eval_flags);
    if (*export_cmd) return cmd_export(common, export_flags);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfigError;
  } catch (const IdxError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kDataError;
  } catch (const ArchiveError& e) {
    std::fprintf(stderr, "checkpoint error: %s\n", e.what());
    return kDataError;
  } catch (const ShapeError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kDataError;
  } catch (const NonFiniteLoss& e) {
    std::fprintf(stderr, "training aborted: %s\n", e.what());
    return kNonFinite;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kInternal;
  }
  return kOk;
}
