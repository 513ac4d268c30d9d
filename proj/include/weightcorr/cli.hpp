#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "weightcorr/data_io.hpp"
#include "weightcorr/measures.hpp"
#include "weightcorr/nn.hpp"
#include "weightcorr/train.hpp"

namespace weightcorr {

enum ExitCode : int {
  kExitOk = 0,
  kExitSelftestFailed = 1,
  kExitConfig = 2,
  kExitIo = 3,
  kExitNumeric = 4,
};

struct DataConfig {
  enum class Source { kSynthetic, kIdx, kCifar };
  Source source = Source::kSynthetic;

  // synthetic
  std::uint64_t seed = 0;
  std::size_t train_size = 1000;
  std::size_t test_size = 1000;
  std::size_t classes = 10;
  std::size_t dims = 32;
  double separation = 3.0;

  // idx / cifar, already resolved against the config directory
  std::filesystem::path train_images;
  std::filesystem::path train_labels;
  std::filesystem::path test_images;
  std::filesystem::path test_labels;
  std::vector<std::filesystem::path> train_batches;
  std::filesystem::path test_batch;

  /// Keep only the first `limit` samples of each split; 0 keeps everything.
  std::size_t limit = 0;
};

struct ExperimentConfig {
  NetworkSpec architecture;
  double init_sigma = 0.1;
  DataConfig data;
  TrainConfig training;
  MeasureConfig measures;
  /// Canonical JSON of the effective config; its digest goes into checkpoints.
  std::string canonical;
};

/// Parses the JSON experiment document. Layer `in` sizes are inferred from the
/// input shape. Relative data paths resolve against `base_dir`. Throws
/// ConfigError naming the line (syntax) or field (schema) at fault.
ExperimentConfig parse_config(std::string_view text, const std::filesystem::path& base_dir);

/// `name_or_path` is either a file or a bare name looked up as
/// configs/<name>.json under the working directory and then the source tree.
ExperimentConfig load_config(const std::string& name_or_path);

struct Datasets {
  Dataset train;
  Dataset test;
};

Datasets load_datasets(const DataConfig& cfg);

/// Runs one command line (without the program name). Returns an ExitCode.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace weightcorr
