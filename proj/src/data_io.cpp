#include "weightcorr/data_io.hpp"

#include <algorithm>
#include <bit>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "weightcorr/errors.hpp"

namespace weightcorr {
namespace {

using Kind = FormatError::Kind;

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed for '" + path.string() + "'");
  return bytes;
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& b, std::size_t at) {
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) |
         (std::uint32_t{b[at + 2]} << 8) | std::uint32_t{b[at + 3]};
}

std::string hex32(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "0x%08X", v);
  return buf;
}

void require_bytes(const std::vector<std::uint8_t>& b, std::size_t needed,
                   const std::filesystem::path& path) {
  if (b.size() < needed) {
    throw FormatError(Kind::kTruncated, "'" + path.string() + "' is truncated: expected " +
                                            std::to_string(needed) + " bytes, found " +
                                            std::to_string(b.size()));
  }
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Little-endian writer/reader for the checkpoint format.
class ByteWriter {
 public:
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
  void raw(std::string_view s) {
    for (char c : s) bytes_.push_back(static_cast<std::byte>(c));
  }
  std::size_t size() const { return bytes_.size(); }
  std::vector<std::byte>& bytes() { return bytes_; }
  void patch_u32(std::size_t at, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_[at + i] = static_cast<std::byte>((v >> (8 * i)) & 0xFF);
  }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) bytes_.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xFF));
  }
  std::vector<std::byte> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::byte> bytes) : bytes_(bytes) {}

  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  double f64() { return std::bit_cast<double>(get(8)); }
  std::size_t pos() const { return pos_; }
  void seek(std::size_t p) { pos_ = p; }

 private:
  std::uint64_t get(int n) {
    if (pos_ + static_cast<std::size_t>(n) > bytes_.size()) {
      throw FormatError(Kind::kTruncated, "checkpoint truncated at byte " + std::to_string(pos_));
    }
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= std::uint64_t(std::to_integer<std::uint8_t>(bytes_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::span<const std::byte> bytes_;
  std::size_t pos_ = 0;
};

constexpr std::string_view kMagic = "WCKP";
constexpr std::uint32_t kMaxLayers = 1u << 16;

std::uint32_t checked_u32(std::size_t v) {
  if (v > 0xFFFFFFFFu) throw UsageError("checkpoint field exceeds 32 bits");
  return static_cast<std::uint32_t>(v);
}

Cell cell_from(double v) { return v; }

std::vector<std::string> split_line(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    std::string field(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start));
    // Trim surrounding whitespace.
    const auto b = field.find_first_not_of(" \t\r");
    const auto e = field.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? std::string() : field.substr(b, e - b + 1));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

double parse_number(const std::string& text, const std::string& where) {
  if (text.empty()) throw FormatError(Kind::kSchema, "empty numeric cell at " + where);
  const char* begin = text.c_str();
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(begin, &end);
  if (end != begin + text.size()) {
    throw FormatError(Kind::kSchema, "non-numeric cell '" + text + "' at " + where);
  }
  return v;
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

}  // namespace

std::string_view to_string(Split split) { return split == Split::kTrain ? "train" : "test"; }

void Dataset::validate() const {
  if (labels.empty()) throw FormatError(Kind::kSchema, "dataset is empty");
  if (sample_shape.size() == 0) throw FormatError(Kind::kSchema, "dataset sample shape is empty");
  if (inputs.size() != labels.size() * sample_shape.size()) {
    throw FormatError(Kind::kCountMismatch, "dataset holds " + std::to_string(inputs.size()) +
                                                " values for " + std::to_string(labels.size()) +
                                                " samples");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) {
      throw FormatError(Kind::kLabelRange, "label " + std::to_string(labels[i]) + " of sample " +
                                               std::to_string(i) + " outside [0, " +
                                               std::to_string(num_classes) + ")");
    }
  }
}

Dataset Dataset::head(std::size_t n) const {
  Dataset d = *this;
  n = std::min(n, size());
  d.labels.resize(n);
  d.inputs.resize(n * sample_shape.size());
  return d;
}

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 Split split) {
  const auto img = read_bytes(images);
  const auto lab = read_bytes(labels);
  require_bytes(img, 16, images);
  require_bytes(lab, 8, labels);
  if (const auto magic = read_be32(img, 0); magic != 0x00000803) {
    throw FormatError(Kind::kBadMagic, "'" + images.string() + "' has magic " + hex32(magic) +
                                           ", expected 0x00000803 (IDX images)");
  }
  if (const auto magic = read_be32(lab, 0); magic != 0x00000801) {
    throw FormatError(Kind::kBadMagic, "'" + labels.string() + "' has magic " + hex32(magic) +
                                           ", expected 0x00000801 (IDX labels)");
  }
  const std::size_t n_images = read_be32(img, 4);
  const std::size_t rows = read_be32(img, 8);
  const std::size_t cols = read_be32(img, 12);
  const std::size_t n_labels = read_be32(lab, 4);
  if (n_images != n_labels) {
    throw FormatError(Kind::kCountMismatch, "image count " + std::to_string(n_images) +
                                                " does not match label count " +
                                                std::to_string(n_labels));
  }
  if (n_images == 0 || rows == 0 || cols == 0) {
    throw FormatError(Kind::kSchema, "'" + images.string() + "' contains no pixels");
  }
  require_bytes(img, 16 + n_images * rows * cols, images);
  require_bytes(lab, 8 + n_labels, labels);

  Dataset d;
  d.split = split;
  d.sample_shape = Shape{1, rows, cols};
  d.inputs.resize(n_images * rows * cols);
  for (std::size_t i = 0; i < d.inputs.size(); ++i) d.inputs[i] = img[16 + i] / 255.0;
  d.labels.resize(n_labels);
  int max_label = 0;
  for (std::size_t i = 0; i < n_labels; ++i) {
    d.labels[i] = lab[8 + i];
    max_label = std::max(max_label, d.labels[i]);
  }
  d.num_classes = std::max<std::size_t>(10, static_cast<std::size_t>(max_label) + 1);
  d.validate();
  return d;
}

Dataset load_cifar_binary(const std::filesystem::path& path, Split split) {
  constexpr std::size_t kPixels = 3 * 32 * 32;
  constexpr std::size_t kRecord = kPixels + 1;
  const auto bytes = read_bytes(path);
  if (bytes.empty() || bytes.size() % kRecord != 0) {
    throw FormatError(Kind::kRecordSize, "'" + path.string() + "' has " +
                                             std::to_string(bytes.size()) +
                                             " bytes, not a positive multiple of 3073");
  }
  const std::size_t n = bytes.size() / kRecord;
  Dataset d;
  d.split = split;
  d.sample_shape = Shape{3, 32, 32};
  d.num_classes = 10;
  d.labels.resize(n);
  d.inputs.resize(n * kPixels);
  for (std::size_t r = 0; r < n; ++r) {
    const std::uint8_t label = bytes[r * kRecord];
    if (label >= 10) {
      throw FormatError(Kind::kLabelRange, "'" + path.string() + "' record " + std::to_string(r) +
                                               " has label " + std::to_string(label) +
                                               ", expected < 10");
    }
    d.labels[r] = label;
    for (std::size_t p = 0; p < kPixels; ++p) {
      d.inputs[r * kPixels + p] = bytes[r * kRecord + 1 + p] / 255.0;
    }
  }
  return d;
}

Dataset synthetic_dataset(const SyntheticSpec& spec, Split split) {
  if (spec.classes < 2) throw UsageError("synthetic_dataset: classes must be >= 2");
  if (spec.dims < spec.classes) {
    throw UsageError("synthetic_dataset: dims must be >= classes for an orthonormal frame");
  }
  if (!(spec.separation >= 0.0)) throw UsageError("synthetic_dataset: separation must be >= 0");
  if (spec.n == 0) throw UsageError("synthetic_dataset: n must be >= 1");

  std::normal_distribution<double> normal(0.0, 1.0);
  std::seed_seq frame_seq{spec.seed, std::uint64_t{0}};
  std::mt19937_64 frame_rng(frame_seq);
  // Gram-Schmidt on Gaussian vectors gives a uniformly random frame.
  std::vector<std::vector<double>> frame;
  while (frame.size() < spec.classes) {
    std::vector<double> v(spec.dims);
    for (double& x : v) x = normal(frame_rng);
    for (const auto& e : frame) {
      const double d = dot(v, e);
      for (std::size_t i = 0; i < v.size(); ++i) v[i] -= d * e[i];
    }
    const double nv = norm2(v);
    if (nv < 1e-8) continue;
    for (double& x : v) x /= nv;
    frame.push_back(std::move(v));
  }
  const double radius = spec.separation / std::sqrt(2.0);

  std::seed_seq sample_seq{spec.seed, std::uint64_t{split == Split::kTrain ? 1u : 2u}};
  std::mt19937_64 rng(sample_seq);
  Dataset d;
  d.split = split;
  d.sample_shape = Shape{spec.dims, 1, 1};
  d.num_classes = spec.classes;
  d.labels.resize(spec.n);
  d.inputs.resize(spec.n * spec.dims);
  for (std::size_t i = 0; i < spec.n; ++i) {
    const std::size_t label = i % spec.classes;
    d.labels[i] = static_cast<int>(label);
    for (std::size_t k = 0; k < spec.dims; ++k) {
      d.inputs[i * spec.dims + k] = radius * frame[label][k] + normal(rng);
    }
  }
  return d;
}

NetworkCheckpoint NetworkCheckpoint::from_network(const Network& net, Provenance provenance) {
  return {net.spec(), net.initial(), net.params(), provenance};
}

Network NetworkCheckpoint::to_network() const { return Network(spec, initial, final_params); }

std::uint64_t fnv1a64(std::span<const std::byte> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (std::byte b : bytes) {
    h ^= std::to_integer<std::uint64_t>(b);
    h *= 0x100000001b3ull;
  }
  return h;
}

std::uint64_t fnv1a64(std::string_view text) {
  return fnv1a64(std::as_bytes(std::span<const char>(text.data(), text.size())));
}

std::vector<std::byte> serialize_checkpoint(const NetworkCheckpoint& ckpt) {
  // Validates the parameter layout before anything is written.
  const Network check(ckpt.spec, ckpt.initial, ckpt.final_params);
  (void)check;

  std::vector<std::span<const double>> arrays;
  for (std::size_t p = 0; p < ckpt.initial.size(); ++p) {
    arrays.push_back(flat(ckpt.initial[p].weights));
    arrays.push_back(ckpt.initial[p].bias);
    arrays.push_back(flat(ckpt.final_params[p].weights));
    arrays.push_back(ckpt.final_params[p].bias);
  }

  ByteWriter w;
  w.raw(kMagic);
  w.u32(kCheckpointVersion);
  const std::size_t header_size_at = w.size();
  w.u32(0);
  w.u64(ckpt.provenance.seed);
  w.u64(ckpt.provenance.config_digest);
  w.u32(ckpt.provenance.epochs);
  w.u32(checked_u32(ckpt.spec.input.channels));
  w.u32(checked_u32(ckpt.spec.input.height));
  w.u32(checked_u32(ckpt.spec.input.width));
  w.u32(checked_u32(ckpt.spec.layers.size()));
  for (const auto& l : ckpt.spec.layers) {
    w.u32(static_cast<std::uint32_t>(l.kind));
    w.u32(checked_u32(l.in));
    w.u32(checked_u32(l.out));
    w.u32(checked_u32(l.kernel));
  }
  w.u32(checked_u32(arrays.size()));
  std::uint64_t offset = 0;
  for (const auto& a : arrays) {
    w.u64(offset);
    w.u64(a.size());
    offset += a.size();
  }
  w.patch_u32(header_size_at, checked_u32(w.size() + 8));
  const std::uint64_t header_hash = fnv1a64(w.bytes());
  w.u64(header_hash);

  const std::size_t payload_start = w.size();
  for (const auto& a : arrays)
    for (double v : a) w.f64(v);
  const std::uint64_t payload_hash =
      fnv1a64(std::span<const std::byte>(w.bytes()).subspan(payload_start));
  w.u64(payload_hash);
  return std::move(w.bytes());
}

NetworkCheckpoint parse_checkpoint(std::span<const std::byte> bytes) {
  if (bytes.size() < 12) {
    throw FormatError(Kind::kTruncated, "checkpoint truncated: " + std::to_string(bytes.size()) +
                                            " bytes");
  }
  for (std::size_t i = 0; i < kMagic.size(); ++i) {
    if (static_cast<char>(bytes[i]) != kMagic[i]) {
      throw FormatError(Kind::kBadMagic, "not a checkpoint file (bad magic)");
    }
  }
  ByteReader r(bytes);
  r.seek(4);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError(Kind::kVersion, "checkpoint version " + std::to_string(version) +
                                          " is not supported by this reader (version " +
                                          std::to_string(kCheckpointVersion) + ")");
  }
  const std::uint32_t header_size = r.u32();
  if (header_size < 20 || header_size > bytes.size()) {
    if (header_size > bytes.size() && header_size < (1u << 28)) {
      throw FormatError(Kind::kTruncated, "checkpoint truncated inside the header");
    }
    throw FormatError(Kind::kCorrupt, "checkpoint header size field is corrupt");
  }
  const std::uint64_t stored_header_hash = [&] {
    ByteReader h(bytes);
    h.seek(header_size - 8);
    return h.u64();
  }();
  if (fnv1a64(bytes.first(header_size - 8)) != stored_header_hash) {
    throw FormatError(Kind::kCorrupt, "checkpoint header checksum mismatch");
  }

  NetworkCheckpoint ckpt;
  ckpt.provenance.seed = r.u64();
  ckpt.provenance.config_digest = r.u64();
  ckpt.provenance.epochs = r.u32();
  ckpt.spec.input.channels = r.u32();
  ckpt.spec.input.height = r.u32();
  ckpt.spec.input.width = r.u32();
  const std::uint32_t num_layers = r.u32();
  if (num_layers == 0 || num_layers > kMaxLayers) {
    throw FormatError(Kind::kCorrupt, "checkpoint layer table is corrupt");
  }
  for (std::uint32_t i = 0; i < num_layers; ++i) {
    LayerSpec l;
    const std::uint32_t kind = r.u32();
    if (kind > static_cast<std::uint32_t>(LayerKind::kFlatten)) {
      throw FormatError(Kind::kCorrupt, "checkpoint layer " + std::to_string(i) +
                                            " has unknown kind " + std::to_string(kind));
    }
    l.kind = static_cast<LayerKind>(kind);
    l.in = r.u32();
    l.out = r.u32();
    l.kernel = r.u32();
    ckpt.spec.layers.push_back(l);
  }

  std::vector<std::size_t> trainable;
  try {
    infer_shapes(ckpt.spec);
  } catch (const UsageError& e) {
    throw FormatError(Kind::kCorrupt, std::string("checkpoint shape table is corrupt: ") + e.what());
  }
  for (std::size_t l = 0; l < ckpt.spec.layers.size(); ++l)
    if (ckpt.spec.layers[l].trainable()) trainable.push_back(l);

  const std::uint32_t num_arrays = r.u32();
  if (num_arrays != 4 * trainable.size()) {
    throw FormatError(Kind::kCorrupt, "checkpoint array table does not match its layer table");
  }
  std::vector<std::pair<std::uint64_t, std::uint64_t>> table(num_arrays);
  std::uint64_t expected_offset = 0;
  for (auto& [offset, count] : table) {
    offset = r.u64();
    count = r.u64();
    if (offset != expected_offset) {
      throw FormatError(Kind::kCorrupt, "checkpoint array offsets are corrupt");
    }
    expected_offset += count;
  }
  if (r.pos() + 8 != header_size) {
    throw FormatError(Kind::kCorrupt, "checkpoint header size does not match its contents");
  }

  const std::size_t payload_start = header_size;
  const std::uint64_t payload_bytes = expected_offset * 8;
  if (bytes.size() < payload_start + payload_bytes + 8) {
    throw FormatError(Kind::kTruncated, "checkpoint payload truncated: expected " +
                                            std::to_string(payload_start + payload_bytes + 8) +
                                            " bytes, found " + std::to_string(bytes.size()));
  }
  if (bytes.size() != payload_start + payload_bytes + 8) {
    throw FormatError(Kind::kCorrupt, "checkpoint has trailing bytes");
  }
  ByteReader payload_hash_reader(bytes);
  payload_hash_reader.seek(payload_start + payload_bytes);
  if (fnv1a64(bytes.subspan(payload_start, payload_bytes)) != payload_hash_reader.u64()) {
    throw FormatError(Kind::kCorrupt, "checkpoint payload checksum mismatch");
  }

  r.seek(payload_start);
  std::size_t a = 0;
  auto read_array = [&](std::size_t expected) {
    if (table[a].second != expected) {
      throw FormatError(Kind::kCorrupt, "checkpoint array " + std::to_string(a) + " holds " +
                                            std::to_string(table[a].second) + " values, layer needs " +
                                            std::to_string(expected));
    }
    std::vector<double> v(expected);
    for (double& x : v) x = r.f64();
    ++a;
    return v;
  };
  auto read_params = [&](const LayerSpec& l) {
    Weights w = l.kind == LayerKind::kDense
                    ? Weights(Matrix(l.in, l.out, read_array(l.in * l.out)))
                    : Weights(FilterTensor(l.kernel, l.in, l.out,
                                           read_array(l.kernel * l.kernel * l.in * l.out)));
    return LayerParams{std::move(w), read_array(l.out)};
  };
  try {
    for (std::size_t idx : trainable) {
      const LayerSpec& l = ckpt.spec.layers[idx];
      ckpt.initial.push_back(read_params(l));
      ckpt.final_params.push_back(read_params(l));
    }
  } catch (const UsageError& e) {
    throw FormatError(Kind::kCorrupt, std::string("checkpoint payload is invalid: ") + e.what());
  }
  return ckpt;
}

void save_checkpoint(const NetworkCheckpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

NetworkCheckpoint load_checkpoint(const std::filesystem::path& path) {
  const auto raw = read_bytes(path);
  return parse_checkpoint(std::as_bytes(std::span<const std::uint8_t>(raw)));
}

ReportFormat report_format_from_string(std::string_view name) {
  if (name == "csv") return ReportFormat::kCsv;
  if (name == "jsonl") return ReportFormat::kJsonLines;
  throw UsageError("unknown report format '" + std::string(name) + "' (expected csv or jsonl)");
}

std::string render_report(const ReportTable& table, ReportFormat format) {
  std::string out;
  if (format == ReportFormat::kCsv) {
    for (std::size_t c = 0; c < table.columns.size(); ++c) {
      if (c) out += ',';
      out += table.columns[c];
    }
    out += '\n';
    for (const auto& row : table.rows) {
      for (std::size_t c = 0; c < row.size(); ++c) {
        if (c) out += ',';
        std::visit(
            [&](const auto& v) {
              using T = std::decay_t<decltype(v)>;
              if constexpr (std::is_same_v<T, std::string>) {
                out += v;
              } else if constexpr (std::is_same_v<T, double>) {
                if (!std::isnan(v)) out += format_double(v);
              } else {
                out += std::to_string(v);
              }
            },
            row[c]);
      }
      out += '\n';
    }
    return out;
  }
  for (const auto& row : table.rows) {
    nlohmann::ordered_json obj = nlohmann::ordered_json::object();
    for (std::size_t c = 0; c < row.size(); ++c) {
      std::visit(
          [&](const auto& v) {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, double>) {
              if (std::isnan(v)) {
                obj[table.columns[c]] = nullptr;
              } else {
                obj[table.columns[c]] = v;
              }
            } else {
              obj[table.columns[c]] = v;
            }
          },
          row[c]);
    }
    out += obj.dump();
    out += '\n';
  }
  return out;
}

void write_report(const ReportTable& table, const std::filesystem::path& path,
                  ReportFormat format) {
  write_text_file(path, render_report(table, format));
}

ReportTable measure_report_table(const MeasureReport& r) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  return {{"pfn", "psn", "nop", "sosp", "wc", "pb", "pbc", "ge"},
          {{cell_from(r.pfn), cell_from(r.psn), cell_from(r.nop), cell_from(r.sosp),
            cell_from(r.wc), cell_from(r.pb), cell_from(r.pbc), cell_from(r.ge.value_or(nan))}}};
}

ReportTable train_report_table(const TrainReport& report) {
  ReportTable t{{"epoch", "train_loss", "train_error", "test_loss", "test_error", "mean_wc",
                 "regularised_loss", "best"},
                {}};
  for (std::size_t e = 0; e < report.history.size(); ++e) {
    const auto& h = report.history[e];
    t.rows.push_back({static_cast<std::int64_t>(e), h.train_loss, h.train_error, h.test_loss,
                      h.test_error, h.mean_wc, h.regularised_loss,
                      static_cast<std::int64_t>(e == report.best_epoch)});
  }
  return t;
}

ReportTable matrix_table(const Matrix& m) {
  ReportTable t;
  for (std::size_t c = 0; c < m.cols(); ++c) t.columns.push_back("f" + std::to_string(c));
  for (std::size_t r = 0; r < m.rows(); ++r) {
    std::vector<Cell> row;
    for (std::size_t c = 0; c < m.cols(); ++c) row.emplace_back(m(r, c));
    t.rows.push_back(std::move(row));
  }
  return t;
}

ReportTable ranking_table(std::span<const RankingRow> rows) {
  ReportTable t{{"measure", "concordant", "discordant", "ties", "tau"}, {}};
  for (const auto& r : rows) {
    t.rows.push_back({r.measure, static_cast<std::int64_t>(r.result.concordant),
                      static_cast<std::int64_t>(r.result.discordant),
                      static_cast<std::int64_t>(r.result.ties), r.result.tau});
  }
  return t;
}

CsvDocument parse_csv(std::string_view text) {
  CsvDocument doc;
  bool have_header = false;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto nl = text.find('\n', start);
    std::string_view line = text.substr(start, nl == text.npos ? text.npos : nl - start);
    ++line_no;
    start = nl == text.npos ? text.size() + 1 : nl + 1;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == line.npos || line.front() == '#') continue;
    auto fields = split_line(line);
    if (!have_header) {
      doc.columns = std::move(fields);
      have_header = true;
      continue;
    }
    if (fields.size() != doc.columns.size()) {
      throw FormatError(Kind::kSchema, "CSV line " + std::to_string(line_no) + " has " +
                                           std::to_string(fields.size()) + " fields, header has " +
                                           std::to_string(doc.columns.size()));
    }
    doc.rows.push_back(std::move(fields));
  }
  if (!have_header) throw FormatError(Kind::kSchema, "CSV has no header row");
  return doc;
}

CsvDocument read_csv(const std::filesystem::path& path) {
  try {
    return parse_csv(read_text_file(path));
  } catch (const FormatError& e) {
    throw FormatError(e.kind(), "'" + path.string() + "': " + e.what());
  }
}

MeasureTable measure_table_from_csv(const CsvDocument& doc) {
  std::optional<std::size_t> ge_col;
  std::optional<std::size_t> name_col;
  std::vector<std::size_t> measure_cols;
  for (std::size_t c = 0; c < doc.columns.size(); ++c) {
    const std::string key = lower(doc.columns[c]);
    if (key == "ge") {
      ge_col = c;
    } else if (key == "network" || key == "name") {
      name_col = c;
    } else {
      measure_cols.push_back(c);
    }
  }
  if (!ge_col) throw FormatError(Kind::kSchema, "measure table has no GE column");
  if (measure_cols.empty()) throw FormatError(Kind::kSchema, "measure table has no measure column");
  if (doc.rows.size() < 2) throw FormatError(Kind::kSchema, "measure table needs at least 2 rows");

  MeasureTable t;
  for (std::size_t c : measure_cols) t.measures.push_back(doc.columns[c]);
  t.values.resize(measure_cols.size());
  for (std::size_t r = 0; r < doc.rows.size(); ++r) {
    const auto& row = doc.rows[r];
    const std::string where_row = "row " + std::to_string(r + 1);
    t.names.push_back(name_col ? row[*name_col] : "row" + std::to_string(r + 1));
    t.ge.push_back(parse_number(row[*ge_col], where_row + ", column GE"));
    for (std::size_t m = 0; m < measure_cols.size(); ++m) {
      t.values[m].push_back(
          parse_number(row[measure_cols[m]], where_row + ", column " + doc.columns[measure_cols[m]]));
    }
  }
  return t;
}

MeasureReport measure_report_from_csv(const CsvDocument& doc) {
  const std::vector<std::string> expected{"pfn", "psn", "nop", "sosp", "wc", "pb", "pbc", "ge"};
  if (doc.columns != expected || doc.rows.size() != 1) {
    throw FormatError(Kind::kSchema, "not a single-row measure report");
  }
  const auto& row = doc.rows.front();
  auto num = [&](std::size_t c) { return parse_number(row[c], "column " + expected[c]); };
  MeasureReport r;
  r.pfn = num(0);
  r.psn = num(1);
  r.nop = num(2);
  r.sosp = num(3);
  r.wc = row[4].empty() ? std::numeric_limits<double>::quiet_NaN() : num(4);
  r.pb = num(5);
  r.pbc = num(6);
  if (!row[7].empty()) r.ge = num(7);
  r.log_pfn = std::log(r.pfn);
  r.log_psn = std::log(r.psn);
  return r;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

}  // namespace weightcorr
