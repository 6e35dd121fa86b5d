#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "doctest.h"
#include "gfn/evalkit.hpp"
#include "gfn/phantomdata.hpp"
#include "gfn/trainloop.hpp"
#include "oracles.hpp"

using namespace gfn;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string l;
  while (std::getline(ss, l)) out.push_back(l);
  return out;
}

// Scores in tenths so ties are common.
void random_set(std::mt19937_64& rng, std::vector<double>& s, std::vector<int>& y) {
  std::uniform_int_distribution<int> len(2, 12), tenth(0, 10), bit(0, 1);
  do {
    const int n = len(rng);
    s.assign(n, 0);
    y.assign(n, 0);
    for (int i = 0; i < n; ++i) {
      s[i] = tenth(rng) / 10.0;
      y[i] = bit(rng);
    }
  } while (std::count(y.begin(), y.end(), 1) == 0 || std::count(y.begin(), y.end(), 0) == 0);
}

}  // namespace

TEST_CASE("confusion metrics: TP=3 FP=1 TN=4 FN=2") {
  const std::vector<double> s{0.9, 0.8, 0.7, 0.6, 0.2, 0.1, 0.3, 0.2, 0.1, 0.0};
  const std::vector<int> y{1, 1, 1, 0, 1, 1, 0, 0, 0, 0};
  const ConfusionReport r = confusion_metrics(s, y, 0.5);
  CHECK(r.tp == 3);
  CHECK(r.fp == 1);
  CHECK(r.tn == 4);
  CHECK(r.fn == 2);
  CHECK(r.precision == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(r.recall == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(r.f1 == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(r.f1 == doctest::Approx(2 * r.precision * r.recall / (r.precision + r.recall)));
  CHECK(r.specificity == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(r.npv == doctest::Approx(4.0 / 6.0).epsilon(1e-12));
  CHECK(r.accuracy == doctest::Approx(0.7).epsilon(1e-12));
  CHECK(r.ppv == r.precision);
  CHECK(r.undefined.empty());
}

TEST_CASE("0/0 rates are 0 and flagged") {
  // Nothing predicted positive: precision/ppv undefined, F1 = 0/0 when no
  // positives exist either.
  const ConfusionReport r = confusion_metrics({0.1, 0.2}, {0, 0}, 0.5);
  CHECK(r.precision == 0);
  CHECK(r.recall == 0);
  CHECK(r.f1 == 0);
  const std::set<std::string> flags(r.undefined.begin(), r.undefined.end());
  CHECK(flags.contains("precision"));
  CHECK(flags.contains("ppv"));
  CHECK(flags.contains("recall"));
  CHECK(flags.contains("f1"));
  CHECK_FALSE(flags.contains("specificity"));
  CHECK(r.specificity == 1);
}

TEST_CASE("thresholds 0 and 1 hit the degenerate corners") {
  const std::vector<double> s{0.1, 0.4, 0.35, 0.8};
  const std::vector<int> y{0, 0, 1, 1};
  const ConfusionReport all = confusion_metrics(s, y, 0.0);
  CHECK(all.recall == 1);
  CHECK(all.specificity == 0);
  CHECK(all.tn + all.fn == 0);
  const ConfusionReport none = confusion_metrics(s, y, 1.0);
  CHECK(none.recall == 0);
  CHECK(none.specificity == 1);
  CHECK(none.tp + none.fp == 0);
  CHECK_THROWS_AS(confusion_metrics(s, y, 1.5), ConfigError);
  CHECK_THROWS_AS(confusion_metrics({}, {}, 0.5), ConfigError);
  CHECK_THROWS_AS(confusion_metrics(s, {0, 1}, 0.5), ConfigError);
}

TEST_CASE("AUC example: HC 0.1, 0.4 and PD 0.35, 0.8 give 0.75") {
  const Curve c = roc_curve({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1});
  CHECK(c.area == doctest::Approx(0.75).epsilon(1e-15));
  REQUIRE(c.points.size() == 5);
  CHECK(c.points.front().x == 0);
  CHECK(c.points.front().y == 0);
  CHECK(std::isinf(c.points.front().threshold));
  CHECK(c.points.back().x == 1);
  CHECK(c.points.back().y == 1);
  CHECK_THROWS_AS(roc_curve({0.1, 0.2}, {1, 1}), ConfigError);
}

TEST_CASE("trapezoidal AUC equals pairwise concordance on random tied sets") {
  std::mt19937_64 rng(2024);
  for (int k = 0; k < 50; ++k) {
    std::vector<double> s;
    std::vector<int> y;
    random_set(rng, s, y);
    const Curve c = roc_curve(s, y);
    CHECK(std::abs(c.area - oracle::concordance(s, y)) <= 1e-12);
    std::set<double> unique(s.begin(), s.end());
    CHECK(c.points.size() == unique.size() + 1);
  }
}

TEST_CASE("AUC properties: monotone invariance and label flip") {
  std::mt19937_64 rng(7);
  for (int k = 0; k < 20; ++k) {
    std::vector<double> s;
    std::vector<int> y;
    random_set(rng, s, y);
    const double auc = roc_curve(s, y).area;
    std::vector<double> t(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) t[i] = std::exp(3 * s[i]) - 5;
    CHECK(roc_curve(t, y).area == doctest::Approx(auc).epsilon(1e-12));
    std::vector<int> flipped(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) flipped[i] = 1 - y[i];
    CHECK(std::abs(roc_curve(s, flipped).area + auc - 1) <= 1e-12);
  }
}

TEST_CASE("PR curve") {
  const Curve perfect = pr_curve({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0});
  CHECK(perfect.area == doctest::Approx(1.0));
  CHECK(perfect.points.front().x == 0);
  CHECK(perfect.points.front().y == 1);
  CHECK(perfect.points.back().x == 1);
  CHECK(perfect.points.back().y == doctest::Approx(0.5));
  // Step sum, by hand: ranks PD, HC, PD.
  const Curve c = pr_curve({0.9, 0.5, 0.3}, {1, 0, 1});
  CHECK(c.area == doctest::Approx(0.5 * 1.0 + 0.5 * (2.0 / 3.0)));
}

TEST_CASE("export writes the nine metrics and curves, byte-idempotently") {
  const fs::path dir = fs::temp_directory_path() / "gfn_test_export";
  fs::remove_all(dir);
  const std::vector<double> s{0.1, 0.4, 0.35, 0.8, 0.4};
  const std::vector<int> y{0, 0, 1, 1, 1};
  const EvalReport r = evaluate(s, y, {"a", "b", "c", "d", "e"}, 0.5);
  export_report(r, (dir / "one").string());
  export_report(r, (dir / "two").string());
  for (const char* f : {"metrics.json", "roc.csv", "pr.csv", "scores.csv"}) {
    INFO(f);
    CHECK(slurp(dir / "one" / f) == slurp(dir / "two" / f));
  }
  const nlohmann::json m = nlohmann::json::parse(slurp(dir / "one" / "metrics.json"));
  for (const char* k :
       {"accuracy", "precision", "recall", "f1", "specificity", "ppv", "npv", "auc", "aupr"}) {
    CHECK(m.contains(k));
  }
  CHECK(m.at("auc").get<double>() == doctest::Approx(oracle::concordance(s, y)));
  const auto roc = lines(slurp(dir / "one" / "roc.csv"));
  CHECK(roc.front() == "fpr,tpr,threshold");
  CHECK(roc.size() == 1 + 4 + 1);  // header, 4 unique thresholds, anchor
  CHECK(roc[1] == "0,0,inf");
  CHECK(lines(slurp(dir / "one" / "pr.csv")).front() == "recall,precision,threshold");
}

// ---- Grad-CAM -----------------------------------------------------------------------

TEST_CASE("cam weighting: single channel is proportional to its positive part") {
  const Tensor a = oracle::random_tensor({1, 1, 3, 3, 3}, 5);
  Tensor g({1, 1, 3, 3, 3}, Real(0.2));
  const CamMap cam = cam_from_gradients(a, g);
  double mx = 0;
  for (std::size_t i = 0; i < a.size(); ++i) mx = std::max(mx, static_cast<double>(a[i]));
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(cam.coarse[i] == doctest::Approx(std::max(0.0, static_cast<double>(a[i])) / mx));
  }
  CHECK_FALSE(cam.zero);
  // Negative weight flips which part survives.
  g.fill(Real(-1));
  const CamMap neg = cam_from_gradients(a, g);
  double mn = 0;
  for (std::size_t i = 0; i < a.size(); ++i) mn = std::min(mn, static_cast<double>(a[i]));
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(neg.coarse[i] == doctest::Approx(std::max(0.0, -static_cast<double>(a[i])) / -mn));
  }
  g.fill(0);
  const CamMap z = cam_from_gradients(a, g);
  CHECK(z.zero);
}

TEST_CASE("cam weighting matches a direct two-channel evaluation") {
  const Tensor a = oracle::random_tensor({1, 2, 2, 2, 2}, 6);
  const Tensor g = oracle::random_tensor({1, 2, 2, 2, 2}, 7);
  double w[2] = {0, 0};
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < 8; ++i) w[c] += g[c * 8 + i] / 8.0;
  std::vector<double> m(8);
  double mx = 0;
  for (int i = 0; i < 8; ++i) {
    m[i] = std::max(0.0, w[0] * a[i] + w[1] * a[8 + i]);
    mx = std::max(mx, m[i]);
  }
  const CamMap cam = cam_from_gradients(a, g);
  if (mx > 0) {
    for (int i = 0; i < 8; ++i) CHECK(cam.coarse[i] == doctest::Approx(m[i] / mx));
  } else {
    CHECK(cam.zero);
  }
}

TEST_CASE("trilinear upsampling") {
  Tensor c({1, 1, 2, 2, 2}, Real(3));
  const Tensor u = upsample_trilinear(c, 5, 6, 7);
  for (std::size_t i = 0; i < u.size(); ++i) CHECK(u[i] == doctest::Approx(3));
  const Tensor x = oracle::random_tensor({1, 1, 3, 4, 5}, 2);
  const Tensor same = upsample_trilinear(x, 3, 4, 5);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(same[i] == x[i]);
  // 1D ramp 0, 1 upsampled x2 with half-pixel centres: 0, .25, .75, 1.
  Tensor r({1, 1, 1, 1, 2}, std::vector<Real>{0, 1});
  const Tensor r2 = upsample_trilinear(r, 1, 1, 4);
  CHECK(r2[0] == doctest::Approx(0));
  CHECK(r2[1] == doctest::Approx(0.25));
  CHECK(r2[2] == doctest::Approx(0.75));
  CHECK(r2[3] == doctest::Approx(1));
}

TEST_CASE("top-decile enrichment") {
  Tensor cam({1, 1, 1, 1, 100});
  std::vector<bool> mask(100, false);
  for (int i = 0; i < 20; ++i) mask[i] = true;
  for (int i = 0; i < 10; ++i) cam[i] = 1;  // top decile entirely inside the 20% mask
  CHECK(top_decile_enrichment(cam, mask) == doctest::Approx(5.0));
  Tensor flat({1, 1, 1, 1, 100}, Real(0.5));  // every voxel ties at the cut-off
  CHECK(top_decile_enrichment(flat, mask) == doctest::Approx(1.0));
  CHECK_THROWS_AS(top_decile_enrichment(cam, std::vector<bool>(100, false)), ConfigError);
}

namespace {

struct CamFixture {
  NetworkConfig cfg;
  std::unique_ptr<GateFuseNet> net;
  std::array<Tensor, 3> inputs;

  CamFixture() {
    cfg.set_widths("4/8");
    net = std::make_unique<GateFuseNet>(cfg);
    net->init_params(3);
    net->set_mode(NormMode::eval);
    PhantomSpec spec;
    spec.size = 16;
    const SubjectVolumes v = synth_subject(spec, 1, 4);
    inputs = {one_hot(v.roi, 10), v.qsm, v.t1};
  }
};

bool same(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::memcmp(a.ptr(), b.ptr(), a.size() * sizeof(Real)) == 0;
}

}  // namespace

TEST_CASE("grad_cam on a network: shapes, range, bias invariance, zeroed head") {
  CamFixture f;
  const CamMap cam = grad_cam(*f.net, f.inputs);
  CHECK(cam.coarse.shape() == Shape{1, 1, 4, 4, 4});
  CHECK(cam.upsampled.shape() == Shape{1, 1, 16, 16, 16});
  double mx = 0, mn = 1;
  for (std::size_t i = 0; i < cam.upsampled.size(); ++i) {
    mx = std::max(mx, static_cast<double>(cam.upsampled[i]));
    mn = std::min(mn, static_cast<double>(cam.upsampled[i]));
  }
  if (!cam.zero) {
    CHECK(mx == doctest::Approx(1.0));
    CHECK(mn >= 0);
  }
  CHECK(grad_cam(*f.net, f.inputs, 0).coarse.shape() == Shape{1, 1, 8, 8, 8});
  CHECK_THROWS_AS(grad_cam(*f.net, f.inputs, 2), ConfigError);

  f.net->fc.bias.value.fill(Real(3.5));
  const CamMap biased = grad_cam(*f.net, f.inputs);
  CHECK(same(biased.coarse, cam.coarse));
  CHECK(same(biased.upsampled, cam.upsampled));

  f.net->fc.weight.value.fill(0);
  const CamMap dead = grad_cam(*f.net, f.inputs);
  CHECK(dead.zero);
  for (std::size_t i = 0; i < dead.upsampled.size(); ++i) REQUIRE(dead.upsampled[i] == 0);
}
