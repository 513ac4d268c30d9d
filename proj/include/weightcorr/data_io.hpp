#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "weightcorr/dataset.hpp"
#include "weightcorr/measures.hpp"
#include "weightcorr/nn.hpp"
#include "weightcorr/train.hpp"

namespace weightcorr {

// ---------------------------------------------------------------------------
// Datasets

/// MNIST-style IDX pair. Pixels are scaled by 1/255.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 Split split = Split::kTrain);

/// CIFAR-10 binary batch: 3073-byte records (label, then R, G, B planes of
/// 32x32 bytes). Pixels are scaled by 1/255.
Dataset load_cifar_binary(const std::filesystem::path& path, Split split = Split::kTrain);

struct SyntheticSpec {
  std::uint64_t seed = 0;
  std::size_t n = 0;
  std::size_t classes = 2;
  std::size_t dims = 2;
  /// Pairwise distance between class means.
  double separation = 1.0;
};

/// One unit-variance Gaussian blob per class. Class means sit on a random
/// orthonormal frame drawn from `seed`, so train and test splits of the same
/// spec share the frame and differ only in their samples. Labels cycle
/// 0, 1, ..., classes - 1.
Dataset synthetic_dataset(const SyntheticSpec& spec, Split split = Split::kTrain);

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Provenance {
  std::uint64_t seed = 0;
  std::uint64_t config_digest = 0;
  std::uint32_t epochs = 0;

  bool operator==(const Provenance&) const = default;
};

struct NetworkCheckpoint {
  NetworkSpec spec;
  std::vector<LayerParams> initial;
  std::vector<LayerParams> final_params;
  Provenance provenance;

  static NetworkCheckpoint from_network(const Network& net, Provenance provenance = {});
  Network to_network() const;

  bool operator==(const NetworkCheckpoint&) const = default;
};

/// Layout (all integers little-endian):
///   "WCKP" | u32 version | u32 header_bytes | u64 seed | u64 digest |
///   u32 epochs | u32 c,h,w | u32 layers | layers x (u32 kind,in,out,kernel) |
///   u32 arrays | arrays x (u64 offset, u64 count) | u64 header FNV-1a |
///   payload of f64 | u64 payload FNV-1a
std::vector<std::byte> serialize_checkpoint(const NetworkCheckpoint& ckpt);
NetworkCheckpoint parse_checkpoint(std::span<const std::byte> bytes);

void save_checkpoint(const NetworkCheckpoint& ckpt, const std::filesystem::path& path);
NetworkCheckpoint load_checkpoint(const std::filesystem::path& path);

std::uint64_t fnv1a64(std::span<const std::byte> bytes);
std::uint64_t fnv1a64(std::string_view text);

// ---------------------------------------------------------------------------
// Reports

enum class ReportFormat { kCsv, kJsonLines };

ReportFormat report_format_from_string(std::string_view name);

using Cell = std::variant<std::string, double, std::int64_t>;

struct ReportTable {
  std::vector<std::string> columns;
  std::vector<std::vector<Cell>> rows;
};

/// CSV uses a header row and %.17g floats; an empty cell stands for a
/// missing value. JSON lines emit one object per row with keys in column
/// order.
std::string render_report(const ReportTable& table, ReportFormat format);
void write_report(const ReportTable& table, const std::filesystem::path& path,
                  ReportFormat format);

/// pfn, psn, nop, sosp, wc, pb, pbc, ge.
ReportTable measure_report_table(const MeasureReport& report);
/// One row per epoch.
ReportTable train_report_table(const TrainReport& report);
/// One row per matrix row, columns f0..f{n-1}.
ReportTable matrix_table(const Matrix& m);
/// measure, concordant, discordant, ties, tau.
ReportTable ranking_table(std::span<const RankingRow> rows);

struct CsvDocument {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;
};

/// Plain comma-separated text with a header row. Blank lines and lines
/// starting with '#' are skipped. Quoted fields are not supported.
CsvDocument parse_csv(std::string_view text);
CsvDocument read_csv(const std::filesystem::path& path);

/// Interprets a CSV whose "GE" column holds generalisation errors; an
/// optional "network"/"name" column labels rows and every other column is a
/// numeric measure.
MeasureTable measure_table_from_csv(const CsvDocument& doc);

/// Inverse of measure_report_table for a single row.
MeasureReport measure_report_from_csv(const CsvDocument& doc);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

}  // namespace weightcorr
