#pragma once

#include <filesystem>
#include <string>

#include "advforge/data.hpp"
#include "advforge/run_config.hpp"

namespace advforge {

/// Directory holding the MNIST IDX files: data.dir, else $ADVFORGE_DATA_DIR.
std::filesystem::path mnist_directory(const RunConfig& cfg);

/// The train or test split described by `cfg`, truncated to data.*_limit.
/// MNIST file names default to the standard ones inside mnist_directory();
/// data.train_images and friends override them individually.
Dataset load_dataset(const RunConfig& cfg, Split split);

/// Creates "<output.dir>/<command>-<config hash>-<UTC timestamp>" (or the
/// explicit directory when non-empty) and writes the canonical config there.
std::filesystem::path prepare_run_dir(const RunConfig& cfg, const std::string& command,
                                      const std::filesystem::path& explicit_dir = {});

}  // namespace advforge
