// Acceptance suite: one PASS/FAIL line per criterion, exit status 0 only if
// every criterion passes.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "oracles.hpp"
#include "weightcorr/cli.hpp"
#include "weightcorr/data_io.hpp"
#include "weightcorr/linalg.hpp"
#include "weightcorr/measures.hpp"
#include "weightcorr/train.hpp"
#include "weightcorr/wc_core.hpp"

using namespace weightcorr;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::vector<std::string> notes;

  void check(bool ok, const std::string& what) {
    if (!ok) pass = false;
    notes.push_back((ok ? "  ok   " : "  FAIL ") + what);
  }
  void note(const std::string& what) { notes.push_back("  info " + what); }
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// ---------------------------------------------------------------------------

struct RankRow {
  std::size_t concordant, discordant, ties;
  double tau;
};

// Runs the rank command and reads its CSV back.
std::map<std::string, RankRow> run_rank(const fs::path& table, const std::string& ties) {
  std::ostringstream out, err;
  const int code = run_cli({"rank", table.string(), "--ties", ties, "--format", "csv"}, out, err);
  if (code != 0) throw std::runtime_error("rank exited " + std::to_string(code) + ": " + err.str());
  const CsvDocument doc = parse_csv(out.str());
  std::map<std::string, RankRow> rows;
  for (const auto& r : doc.rows)
    rows[r.at(0)] = RankRow{std::stoul(r.at(1)), std::stoul(r.at(2)), std::stoul(r.at(3)), std::stod(r.at(4))};
  return rows;
}

Outcome ranking(const std::string& table, const std::string& expected_file, double budget) {
  Outcome o;
  const auto t0 = Clock::now();
  const fs::path fixtures(WCORR_TEST_FIXTURES);
  const auto expected = nlohmann::json::parse(read_text_file(fixtures / expected_file));
  const std::string policy = expected.at("ties");
  const auto rows = run_rank(fixtures / table, policy);
  const double elapsed = seconds_since(t0);
  const auto plain = run_rank(fixtures / table, "neither");

  for (const auto& [measure, e] : expected.at("rows").items()) {
    if (!rows.count(measure)) {
      o.check(false, measure + " missing from rank output");
      continue;
    }
    const auto& r = rows.at(measure);
    const std::size_t c = e.at("concordant"), d = e.at("discordant");
    const double printed = e.at("tau");
    char line[200];
    std::snprintf(line, sizeof line, "%-5s %zu/%zu (printed %zu/%zu)", measure.c_str(), r.concordant,
                  r.discordant, c, d);
    o.check(r.concordant == c && r.discordant == d, line);
    std::snprintf(line, sizeof line, "%-5s tau %.4f vs printed %.2f, |diff| %.4f <= 0.006", measure.c_str(),
                  r.tau, printed, std::abs(r.tau - printed));
    o.check(std::abs(r.tau - printed) <= 0.006, line);
    const double truncated = std::trunc(r.tau * 100.0) / 100.0;
    std::snprintf(line, sizeof line, "%-5s tau truncated to 2 digits %.2f vs printed %.2f", measure.c_str(),
                  truncated, printed);
    o.note(std::string(line) + (std::abs(truncated - printed) < 1e-9 ? " (agree)" : " (differ)"));
    const auto& p = plain.at(measure);
    if (p.ties > 0) {
      std::snprintf(line, sizeof line, "%-5s with ties counted as neither: %zu/%zu, %zu tied pair(s)",
                    measure.c_str(), p.concordant, p.discordant, p.ties);
      o.note(line);
    }
  }
  o.check(elapsed < budget, fmt("runtime %.3f s", elapsed));
  return o;
}

// Sigma_rho written out entry by entry.
Matrix correlation_matrix(std::size_t n, double rho) {
  Matrix m(n, n, rho);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Outcome kl_grid() {
  Outcome o;
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  double worst = 0.0;
  std::size_t cases = 0;
  for (std::size_t ni = 2; ni <= 4; ++ni)
    for (std::size_t no = 2; no <= 4; ++no)
      for (int k = 0; k <= 9; ++k) {
        const double rho = k / 10.0;
        const double s2 = 0.5 + 0.25 * double(ni + no);
        const Matrix w0(ni, no, oracle::normals(rng, ni * no)), wf(ni, no, oracle::normals(rng, ni * no));
        const auto b0 = oracle::normals(rng, no), bf = oracle::normals(rng, no);
        const double closed =
            kl_layer(LayerParams{wf, bf}, LayerParams{w0, b0}, LayerCorrelation(rho, no, ni), s2).total;

        const Matrix weights_block = kronecker(correlation_matrix(no, rho), s2 * Matrix::identity(ni));
        const std::size_t dim = ni * no + no;
        Matrix sigma_q = s2 * Matrix::identity(dim);
        for (std::size_t i = 0; i < ni * no; ++i)
          for (std::size_t j = 0; j < ni * no; ++j) sigma_q(i, j) = weights_block(i, j);
        const double ref = gaussian_kl(oracle::stack(wf, bf), sigma_q, oracle::stack(w0, b0),
                                       s2 * Matrix::identity(dim));
        worst = std::max(worst, std::abs(closed - ref) / std::abs(ref));
        ++cases;
      }
  o.check(worst <= 1e-8, fmt("max relative error %.3e <= 1e-8", worst) + " over " +
                             std::to_string(cases) + " grid points");

  // Same check with rho measured from the final weights rather than supplied.
  double worst_measured = 0.0;
  for (int t = 0; t < 30; ++t) {
    const std::size_t ni = 2 + t % 3, no = 2 + (t / 3) % 3;
    const Matrix w0(ni, no, oracle::normals(rng, ni * no)), wf(ni, no, oracle::normals(rng, ni * no));
    const auto b0 = oracle::normals(rng, no), bf = oracle::normals(rng, no);
    const double rho = oracle::wc_dense(wf);
    const double closed = kl_layer(LayerParams{wf, bf}, LayerParams{w0, b0}, 1.0).total;
    const double ref = oracle::gaussian_kl(oracle::stack(wf, bf), oracle::posterior(rho, no, ni, 1.0),
                                           oracle::stack(w0, b0), Matrix::identity(ni * no + no));
    worst_measured = std::max(worst_measured, std::abs(closed - ref) / std::abs(ref));
  }
  o.check(worst_measured <= 1e-8, fmt("measured-rho variant max relative error %.3e", worst_measured));
  const double elapsed = seconds_since(t0);
  o.check(elapsed < 10.0, fmt("runtime %.3f s < 10 s", elapsed));
  return o;
}

Outcome determinant_grid() {
  Outcome o;
  const auto t0 = Clock::now();
  double worst = 0.0;
  for (std::size_t ni = 2; ni <= 4; ++ni)
    for (std::size_t no = 2; no <= 4; ++no)
      for (int k = 0; k <= 9; ++k) {
        const double rho = k / 10.0, s2 = 0.7;
        const double det = determinant(kronecker(correlation_matrix(no, rho), s2 * Matrix::identity(ni)));
        const double closed = std::pow(s2, double(ni * no)) * std::pow(1 - rho, double((no - 1) * ni)) *
                              std::pow(1 + double(no - 1) * rho, double(ni));
        worst = std::max(worst, std::abs(det - closed) / closed);
      }
  o.check(worst <= 1e-8, fmt("max relative error %.3e <= 1e-8", worst));
  const double elapsed = seconds_since(t0);
  o.check(elapsed < 1.0, fmt("runtime %.3f s < 1 s", elapsed));
  return o;
}

bool kink_free(const std::vector<std::vector<double>>& cols) {
  for (std::size_t i = 0; i < cols.size(); ++i)
    for (std::size_t j = i + 1; j < cols.size(); ++j)
      if (oracle::abs_cos(cols[i], cols[j]) < 1e-3) return false;
  return true;
}

Matrix kink_free_matrix(std::mt19937_64& rng, std::size_t r, std::size_t c) {
  while (true) {
    Matrix m(r, c, oracle::normals(rng, r * c));
    std::vector<std::vector<double>> cols;
    for (std::size_t j = 0; j < c; ++j) cols.push_back(m.column(j));
    if (kink_free(cols)) return m;
  }
}

FilterTensor kink_free_filters(std::mt19937_64& rng, std::size_t f, std::size_t in, std::size_t out) {
  while (true) {
    FilterTensor t(f, in, out, oracle::normals(rng, f * f * in * out));
    bool ok = true;
    for (std::size_t z = 0; z < in && ok; ++z) {
      std::vector<std::vector<double>> cols;
      for (std::size_t o = 0; o < out; ++o) {
        const auto s = t.channel_column(o, z);
        cols.emplace_back(s.begin(), s.end());
      }
      ok = kink_free(cols);
    }
    if (ok) return t;
  }
}

Outcome gradients() {
  Outcome o;
  const auto t0 = Clock::now();
  constexpr int kPoints = 100;
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<std::size_t> dim(2, 5);

  double fcn = 0, cnn = 0, wcd_dense = 0, wcd_conv = 0;
  for (int i = 0; i < kPoints; ++i) {
    Matrix w = kink_free_matrix(rng, dim(rng), dim(rng));
    fcn = std::max(fcn, oracle::rel_inf(rho_gradient_fcn(w).data(),
                                        oracle::central_diff(w.data(), [&] { return oracle::wc_dense(w); })));
    const double no = double(w.cols()), ni = double(w.rows());
    wcd_dense = std::max(
        wcd_dense,
        oracle::rel_inf(flat(wcd_gradient(Weights{w})),
                        oracle::central_diff(w.data(), [&] { return oracle::g_plain(oracle::wc_dense(w), no, ni); })));

    FilterTensor t = kink_free_filters(rng, 3, dim(rng) - 1, dim(rng));
    cnn = std::max(cnn, oracle::rel_inf(rho_gradient_cnn(t).data(),
                                        oracle::central_diff(t.data(), [&] { return oracle::wc_conv(t); })));
    const double fo = double(t.out_channels()), fi = double(t.in_channels());
    wcd_conv = std::max(
        wcd_conv,
        oracle::rel_inf(flat(wcd_gradient(Weights{t})),
                        oracle::central_diff(t.data(), [&] { return oracle::g_plain(oracle::wc_conv(t), fo, fi); })));
  }
  o.check(fcn <= 1e-5, fmt("rho_gradient_fcn max rel error %.3e", fcn));
  o.check(cnn <= 1e-5, fmt("rho_gradient_cnn max rel error %.3e", cnn));
  o.check(wcd_dense <= 1e-5, fmt("wcd_gradient (dense) max rel error %.3e", wcd_dense));
  o.check(wcd_conv <= 1e-5, fmt("wcd_gradient (conv) max rel error %.3e", wcd_conv));

  // Every layer kind sits in this net; gradients flow through all of them.
  const NetworkSpec spec{Shape{2, 6, 6},
                         {LayerSpec::conv2d(3, 2, 3), LayerSpec::relu(), LayerSpec::maxpool2(),
                          LayerSpec::tanh(), LayerSpec::flatten(), LayerSpec::dense(27, 5),
                          LayerSpec::relu(), LayerSpec::dense(5, 3)}};
  std::map<std::string, double> per_layer;
  for (int i = 0; i < kPoints; ++i) {
    Network net = init_network(spec, 1000 + std::uint64_t(i), 0.5);
    for (auto& p : net.params()) p.bias = oracle::normals(rng, p.bias.size(), 0.1);
    const std::size_t in = spec.input.size();
    Batch batch{oracle::normals(rng, 3 * in), {0, 1, 2}};
    const auto lg = loss_and_grad(net, batch.view());
    for (std::size_t p = 0; p < net.params().size(); ++p) {
      auto loss = [&] { return loss_and_grad(net, batch.view()).loss; };
      std::vector<double> a, n;
      const auto fw = oracle::central_diff(flat(net.params()[p].weights), loss);
      const auto fb = oracle::central_diff(net.params()[p].bias, loss);
      const auto aw = flat(lg.grads[p].weights);
      a.insert(a.end(), aw.begin(), aw.end());
      a.insert(a.end(), lg.grads[p].bias.begin(), lg.grads[p].bias.end());
      n.insert(n.end(), fw.begin(), fw.end());
      n.insert(n.end(), fb.begin(), fb.end());
      const std::string key = "layer " + std::to_string(net.trainable_layers()[p]) + " (" +
                              std::string(to_string(spec.layers[net.trainable_layers()[p]].kind)) + ")";
      per_layer[key] = std::max(per_layer[key], oracle::rel_inf(a, n));
    }
  }
  for (const auto& [k, v] : per_layer) o.check(v <= 1e-5, "nn " + k + fmt(" max rel error %.3e", v));

  double bracket = 0;
  std::uniform_real_distribution<double> rho_dist(0.01, 0.95);
  for (int i = 0; i < kPoints; ++i) {
    const std::size_t no = dim(rng), ni = dim(rng);
    const double rho = rho_dist(rng), h = 1e-6;
    const double fd = (g_term(LayerCorrelation(rho + h, no, ni)) - g_term(LayerCorrelation(rho - h, no, ni))) / (2 * h);
    bracket = std::max(bracket, std::abs(g_gradient_bracket(LayerCorrelation(rho, no, ni)) - fd) / std::abs(fd));
  }
  o.check(bracket <= 1e-6, fmt("g_gradient_bracket max rel error %.3e <= 1e-6", bracket));
  const double elapsed = seconds_since(t0);
  o.check(elapsed < 30.0, fmt("runtime %.3f s < 30 s", elapsed));
  return o;
}

Outcome monotonicity() {
  Outcome o;
  const auto t0 = Clock::now();
  bool g_ok = true;
  for (std::size_t no = 2; no <= 8; ++no)
    for (std::size_t ni = 1; ni <= 8; ++ni) {
      double prev = -1;
      for (int k = 0; k < 1000; ++k) {
        const double g = g_term(LayerCorrelation(k / 1000.0, no, ni));
        g_ok = g_ok && g > prev;
        prev = g;
      }
    }
  o.check(g_ok, "g_term strictly increasing on rho = 0, 0.001, ..., 0.999 for 2..8 x 1..8 layers");
  bool b_ok = true;
  for (std::size_t m : {10u, 1000u, 60000u})
    for (double delta : {0.01, 0.05, 0.5}) {
      double prev = -1;
      for (int k = 0; k < 2000; ++k) {
        const double b = pac_bayes_bound(k * 0.5, m, delta, 0.1);
        b_ok = b_ok && b > prev;
        prev = b;
      }
    }
  o.check(b_ok, "PAC-Bayes bound strictly increasing in KL = 0, 0.5, ..., 999.5");
  const double elapsed = seconds_since(t0);
  o.check(elapsed < 1.0, fmt("runtime %.3f s < 1 s", elapsed));
  return o;
}

Outcome wcd_direction() {
  Outcome o;
  const auto t0 = Clock::now();
  const ExperimentConfig cfg = load_config(WCORR_CONFIG_DIR "/fcn_synth.json");
  const Datasets data = load_datasets(cfg.data);
  const double alpha = cfg.training.alpha;
  o.note(fmt("alpha = %g", alpha) + ", epochs = " + std::to_string(cfg.training.epochs));

  int lower = 0;
  std::vector<double> ratios;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    TrainConfig tc = cfg.training;
    tc.seed = seed;
    tc.alpha = 0.0;
    Network base = init_network(cfg.architecture, seed, cfg.init_sigma);
    Network wcd = base;
    const auto rb = train(base, data.train, data.test, tc);
    tc.alpha = alpha;
    const auto rw = train(wcd, data.train, data.test, tc);
    const double wc_b = mean_wc(base), wc_w = mean_wc(wcd);
    const double loss_b = rb.history.back().test_loss, loss_w = rw.history.back().test_loss;
    if (wc_w < wc_b) ++lower;
    ratios.push_back(loss_w / loss_b);
    char line[200];
    std::snprintf(line, sizeof line,
                  "seed %llu: mean WC %.4f -> %.4f, test loss %.4f -> %.4f, test error %.3f -> %.3f",
                  static_cast<unsigned long long>(seed), wc_b, wc_w, loss_b, loss_w,
                  rb.history.back().test_error, rw.history.back().test_error);
    o.note(line);
  }
  std::sort(ratios.begin(), ratios.end());
  o.check(lower >= 4, "WC lower with WCD in " + std::to_string(lower) + " of 5 seeds (need >= 4)");
  o.check(ratios[2] <= 1.05, fmt("median test-loss ratio wcd/baseline %.4f <= 1.05", ratios[2]));
  const double elapsed = seconds_since(t0);
  o.check(elapsed < 300.0, fmt("runtime %.1f s < 300 s", elapsed));
  return o;
}

Outcome heatmap_consistency() {
  Outcome o;
  const auto t0 = Clock::now();
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<std::size_t> dim(2, 6);
  double worst = 0;
  for (int t = 0; t < 200; ++t) {
    const std::size_t f = 2 * (t % 3) + 1, in = dim(rng), out = dim(rng);
    const FilterTensor w(f, in, out, oracle::normals(rng, f * f * in * out));
    const auto h = filter_heatmap(w);
    double sum = 0;
    for (std::size_t i = 0; i < out; ++i)
      for (std::size_t j = 0; j < out; ++j)
        if (i != j) sum += h.pairwise(i, j);
    worst = std::max(worst, std::abs(sum / double(out * (out - 1)) - wc_cnn(w)));
  }
  o.check(worst <= 1e-12, fmt("max |offdiag mean - wc_cnn| %.3e <= 1e-12", worst));
  const double elapsed = seconds_since(t0);
  o.check(elapsed < 1.0, fmt("runtime %.3f s < 1 s", elapsed));
  return o;
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* title;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "CIFAR-10 ranking reproduction", [] { return ranking("cifar10_measures.csv", "cifar10_expected.json", 1.0); }},
      {2, "CIFAR-100 ranking reproduction", [] { return ranking("cifar100_measures.csv", "cifar100_expected.json", 1.0); }},
      {3, "KL closed form vs Gaussian oracle", kl_grid},
      {4, "determinant identity", determinant_grid},
      {5, "gradient suite", gradients},
      {6, "monotonicity", monotonicity},
      {7, "WCD direction experiment", wcd_direction},
      {8, "heatmap / wc_cnn consistency", heatmap_consistency},
  };

  int failures = 0;
  std::vector<std::string> summary;
  for (const auto& c : criteria) {
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.check(false, std::string("exception: ") + e.what());
    }
    std::printf("criterion %d: %s - %s\n", c.id, o.pass ? "PASS" : "FAIL", c.title);
    for (const auto& n : o.notes) std::printf("%s\n", n.c_str());
    std::fflush(stdout);
    if (!o.pass) ++failures;
    summary.push_back("criterion " + std::to_string(c.id) + ": " + (o.pass ? "PASS" : "FAIL"));
  }
  std::printf("\n");
  for (const auto& s : summary) std::printf("%s\n", s.c_str());
  return failures == 0 ? 0 : 1;
}
