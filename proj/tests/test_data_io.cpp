#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "weightcorr/data_io.hpp"
#include "weightcorr/errors.hpp"

using namespace weightcorr;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() /
            ("wcorr_test_" + std::to_string(std::random_device{}()) + "_" +
             ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
}

void put_be32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) b.push_back(std::uint8_t(v >> s));
}

std::vector<std::uint8_t> idx_images(std::uint32_t n, std::uint32_t rows, std::uint32_t cols,
                                     std::uint32_t magic = 0x00000803) {
  std::vector<std::uint8_t> b;
  put_be32(b, magic);
  put_be32(b, n);
  put_be32(b, rows);
  put_be32(b, cols);
  for (std::uint32_t i = 0; i < n * rows * cols; ++i) b.push_back(std::uint8_t(i * 37 % 256));
  return b;
}

std::vector<std::uint8_t> idx_labels(const std::vector<std::uint8_t>& labels) {
  std::vector<std::uint8_t> b;
  put_be32(b, 0x00000801);
  put_be32(b, std::uint32_t(labels.size()));
  b.insert(b.end(), labels.begin(), labels.end());
  return b;
}

NetworkCheckpoint sample_checkpoint() {
  const NetworkSpec spec{Shape{1, 4, 4},
                         {LayerSpec::conv2d(3, 1, 2), LayerSpec::relu(), LayerSpec::flatten(),
                          LayerSpec::dense(32, 3)}};
  Network net = init_network(spec, 11, 0.3);
  std::mt19937_64 rng(1);
  for (auto& p : net.params()) {
    auto w = flat(p.weights);
    const auto noise = oracle::normals(rng, w.size(), 0.01);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] += noise[i];
    p.bias = oracle::normals(rng, p.bias.size());
  }
  return NetworkCheckpoint::from_network(net, Provenance{11, 0xABCDEF, 7});
}

FormatError::Kind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const FormatError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no FormatError thrown";
  return FormatError::Kind::kSchema;
}

std::string message_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST(LoadIdx, TwoImageFixture) {
  TempDir dir;
  write_bytes(dir / "img", idx_images(2, 2, 3));
  write_bytes(dir / "lab", idx_labels({3, 9}));
  const Dataset d = load_idx(dir / "img", dir / "lab");
  ASSERT_EQ(d.size(), 2u);
  EXPECT_EQ(d.sample_shape, (Shape{1, 2, 3}));
  EXPECT_EQ(d.labels, (std::vector<int>{3, 9}));
  EXPECT_EQ(d.num_classes, 10u);
  for (std::size_t i = 0; i < 12; ++i) EXPECT_EQ(d.inputs[i], double(i * 37 % 256) / 255.0);
}

TEST(LoadIdx, Errors) {
  TempDir dir;
  write_bytes(dir / "bad", idx_images(2, 2, 2, 0x00000999));
  write_bytes(dir / "img", idx_images(2, 2, 2));
  write_bytes(dir / "lab3", idx_labels({1, 2, 3}));
  write_bytes(dir / "lab2", idx_labels({1, 2}));
  auto short_img = idx_images(2, 2, 2);
  short_img.resize(short_img.size() - 1);
  write_bytes(dir / "short", short_img);

  const auto magic = message_of([&] { load_idx(dir / "bad", dir / "lab2"); });
  EXPECT_NE(magic.find("0x00000999"), std::string::npos) << magic;
  EXPECT_EQ(kind_of([&] { load_idx(dir / "bad", dir / "lab2"); }), FormatError::Kind::kBadMagic);

  const auto mismatch = message_of([&] { load_idx(dir / "img", dir / "lab3"); });
  EXPECT_NE(mismatch.find('2'), std::string::npos);
  EXPECT_NE(mismatch.find('3'), std::string::npos);
  EXPECT_EQ(kind_of([&] { load_idx(dir / "img", dir / "lab3"); }), FormatError::Kind::kCountMismatch);
  EXPECT_EQ(kind_of([&] { load_idx(dir / "short", dir / "lab2"); }), FormatError::Kind::kTruncated);
  EXPECT_THROW(load_idx(dir / "missing", dir / "lab2"), IoError);
}

TEST(LoadCifar, OneRecordFixture) {
  TempDir dir;
  std::vector<std::uint8_t> rec{7};
  for (int i = 0; i < 3072; ++i) rec.push_back(std::uint8_t(i % 251));
  write_bytes(dir / "c.bin", rec);
  const Dataset d = load_cifar_binary(dir / "c.bin");
  ASSERT_EQ(d.size(), 1u);
  EXPECT_EQ(d.labels[0], 7);
  EXPECT_EQ(d.sample_shape, (Shape{3, 32, 32}));
  EXPECT_EQ(d.inputs.front(), 0.0);
  EXPECT_EQ(d.inputs.back(), double(3071 % 251) / 255.0);
}

TEST(LoadCifar, Errors) {
  TempDir dir;
  write_bytes(dir / "empty", {});
  std::vector<std::uint8_t> bad(3073, 0);
  bad[0] = 255;
  write_bytes(dir / "label", bad);
  write_bytes(dir / "odd", std::vector<std::uint8_t>(3000, 0));
  EXPECT_EQ(kind_of([&] { load_cifar_binary(dir / "empty"); }), FormatError::Kind::kRecordSize);
  EXPECT_EQ(kind_of([&] { load_cifar_binary(dir / "odd"); }), FormatError::Kind::kRecordSize);
  EXPECT_EQ(kind_of([&] { load_cifar_binary(dir / "label"); }), FormatError::Kind::kLabelRange);
}

TEST(Synthetic, DeterministicAndBalanced) {
  const SyntheticSpec s{5, 300, 3, 6, 4.0};
  const Dataset a = synthetic_dataset(s), b = synthetic_dataset(s);
  EXPECT_EQ(a.inputs, b.inputs);
  EXPECT_EQ(a.labels, b.labels);
  const Dataset t = synthetic_dataset(s, Split::kTest);
  EXPECT_NE(a.inputs, t.inputs);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a.labels[i], int(i % 3));
  EXPECT_THROW(synthetic_dataset(SyntheticSpec{1, 10, 5, 3, 1.0}), UsageError);
}

TEST(Synthetic, ZeroSeparationIsChance) {
  // With identical class means the best classifier guesses; a trained linear
  // model should land near (C - 1) / C on fresh samples.
  const std::size_t c = 4;
  SyntheticSpec s{2, 2000, c, 6, 0.0};
  const Dataset tr = synthetic_dataset(s, Split::kTrain);
  const Dataset te = synthetic_dataset(s, Split::kTest);
  Network net = init_network(NetworkSpec{Shape{6}, {LayerSpec::dense(6, c)}}, 1, 0.01);
  TrainConfig cfg;
  cfg.epochs = 5;
  train(net, tr, te, cfg);
  const double p = double(c - 1) / double(c);
  EXPECT_NEAR(evaluate(net, te).error_rate, p, 4 * std::sqrt(p * (1 - p) / 2000.0) + 0.01);
}

TEST(Synthetic, WellSeparatedIsLinearlyEasy) {
  SyntheticSpec s{3, 200, 4, 8, 10.0};
  const Dataset tr = synthetic_dataset(s, Split::kTrain);
  const Dataset te = synthetic_dataset(s, Split::kTest);
  Network net = init_network(NetworkSpec{Shape{8}, {LayerSpec::dense(8, 4)}}, 1, 0.01);
  TrainConfig cfg;
  cfg.epochs = 20;
  train(net, tr, te, cfg);
  EXPECT_LT(evaluate(net, tr).error_rate, 0.05);
  EXPECT_LT(evaluate(net, te).error_rate, 0.05);
}

TEST(Checkpoint, RoundTrip) {
  TempDir dir;
  const auto ck = sample_checkpoint();
  save_checkpoint(ck, dir / "a.ckpt");
  const auto back = load_checkpoint(dir / "a.ckpt");
  EXPECT_EQ(back, ck);
  EXPECT_EQ(back.to_network().params(), ck.final_params);
}

TEST(Checkpoint, HeaderCorruption) {
  auto bytes = serialize_checkpoint(sample_checkpoint());
  // Somewhere inside the seed field, past magic/version/length.
  bytes[14] ^= std::byte{0x40};
  EXPECT_EQ(kind_of([&] { parse_checkpoint(bytes); }), FormatError::Kind::kCorrupt);
}

TEST(Checkpoint, PayloadCorruption) {
  auto bytes = serialize_checkpoint(sample_checkpoint());
  bytes[bytes.size() - 20] ^= std::byte{0x01};
  EXPECT_EQ(kind_of([&] { parse_checkpoint(bytes); }), FormatError::Kind::kCorrupt);
}

TEST(Checkpoint, OldVersionNamesBoth) {
  auto bytes = serialize_checkpoint(sample_checkpoint());
  for (int i = 4; i < 8; ++i) bytes[i] = std::byte{0};
  EXPECT_EQ(kind_of([&] { parse_checkpoint(bytes); }), FormatError::Kind::kVersion);
  const auto msg = message_of([&] { parse_checkpoint(bytes); });
  EXPECT_NE(msg.find('0'), std::string::npos) << msg;
  EXPECT_NE(msg.find('1'), std::string::npos) << msg;
}

TEST(Checkpoint, TruncatedAndMagic) {
  auto bytes = serialize_checkpoint(sample_checkpoint());
  auto cut = bytes;
  cut.resize(cut.size() / 2);
  EXPECT_EQ(kind_of([&] { parse_checkpoint(cut); }), FormatError::Kind::kTruncated);
  bytes[0] = std::byte{'X'};
  EXPECT_EQ(kind_of([&] { parse_checkpoint(bytes); }), FormatError::Kind::kBadMagic);
}

TEST(Reports, MeasureRowSchemaAndRoundTrip) {
  MeasureReport r;
  r.pfn = 1.0 / 3.0;
  r.psn = 2e-300;
  r.nop = 4522;
  r.sosp = 123.456;
  r.wc = 0.1;
  r.pb = 7.0 / 9.0;
  r.pbc = 1e10 / 3.0;
  const auto text = render_report(measure_report_table(r), ReportFormat::kCsv);
  const auto doc = parse_csv(text);
  EXPECT_EQ(doc.columns, (std::vector<std::string>{"pfn", "psn", "nop", "sosp", "wc", "pb", "pbc", "ge"}));
  ASSERT_EQ(doc.rows.size(), 1u);
  const auto back = measure_report_from_csv(doc);
  EXPECT_EQ(back.pfn, r.pfn);
  EXPECT_EQ(back.psn, r.psn);
  EXPECT_EQ(back.pbc, r.pbc);
  EXPECT_FALSE(back.ge.has_value());
  r.ge = 0.25;
  EXPECT_EQ(measure_report_from_csv(parse_csv(render_report(measure_report_table(r), ReportFormat::kCsv))).ge, 0.25);
}

TEST(Reports, HeatmapShape) {
  const auto text = render_report(matrix_table(Matrix::identity(3)), ReportFormat::kCsv);
  const auto doc = parse_csv(text);
  EXPECT_EQ(doc.columns.size(), 3u);
  ASSERT_EQ(doc.rows.size(), 3u);
  for (const auto& row : doc.rows) EXPECT_EQ(row.size(), 3u);
}

TEST(Reports, JsonLines) {
  MeasureReport r;
  r.nop = 10;
  const auto text = render_report(measure_report_table(r), ReportFormat::kJsonLines);
  EXPECT_EQ(text.back(), '\n');
  EXPECT_NE(text.find("\"pfn\""), std::string::npos);
  EXPECT_NE(text.find("\"ge\":null"), std::string::npos) << text;
  EXPECT_THROW(report_format_from_string("xml"), UsageError);
}

TEST(Csv, MeasureTableErrors) {
  EXPECT_EQ(kind_of([] { measure_table_from_csv(parse_csv("a,b\n1,2\n3,4\n")); }),
            FormatError::Kind::kSchema);
  EXPECT_EQ(kind_of([] { measure_table_from_csv(parse_csv("a,GE\n1,2\nx,4\n")); }),
            FormatError::Kind::kSchema);
  EXPECT_EQ(kind_of([] { parse_csv("a,GE\n1,2,3\n"); }), FormatError::Kind::kSchema);
  const auto t = measure_table_from_csv(parse_csv("# note\nname,m1,GE\nx,1,2\n\ny,3,4\n"));
  EXPECT_EQ(t.names, (std::vector<std::string>{"x", "y"}));
  EXPECT_EQ(t.measures, (std::vector<std::string>{"m1"}));
  EXPECT_EQ(t.ge, (std::vector<double>{2, 4}));
}
