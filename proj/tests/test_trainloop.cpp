#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "gfn/trainloop.hpp"
#include "oracles.hpp"

using namespace gfn;
namespace fs = std::filesystem;

namespace {

double focal_value(const std::vector<double>& z, const std::vector<int>& y, FocalParams p = {}) {
  Tape t;
  Tensor logits({static_cast<int>(z.size()), 1, 1, 1, 1});
  for (std::size_t i = 0; i < z.size(); ++i) logits[i] = static_cast<Real>(z[i]);
  return focal_loss(t.constant(logits), y, p).value().item();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("focal loss: z=0, y=1 gives 0.5 * 0.25 * ln 2") {
  const double expect = 0.5 * 0.25 * std::log(2.0);
  CHECK(std::abs(expect - 0.086643) < 1e-6);
  CHECK(std::abs(focal_value({0}, {1}) - expect) < 1e-6);
  CHECK(std::abs(focal_value({0}, {0}) - expect) < 1e-6);
}

TEST_CASE("focal loss: confident correct predictions cost nothing") {
  CHECK(focal_value({40}, {1}) < 1e-30);
  CHECK(focal_value({-40}, {0}) < 1e-30);
}

TEST_CASE("focal loss with gamma 0 is half the BCE") {
  const Tensor z = oracle::random_tensor({12, 1, 1, 1, 1}, 3, -6, 6);
  std::vector<double> zs;
  std::vector<int> ys;
  double bce = 0;
  for (int i = 0; i < 12; ++i) {
    zs.push_back(z[i]);
    ys.push_back(i % 3 == 0);
    bce += oracle::bce(z[i], ys.back());
  }
  bce /= 12;
  CHECK(std::abs(focal_value(zs, ys, {0.0, 0.5}) - 0.5 * bce) < 1e-6);
}

TEST_CASE("focal loss is finite on |z| <= 80 and non-increasing in z for y = 1") {
  double prev = INFINITY;
  for (double z = -80; z <= 80; z += 0.5) {
    const double l1 = focal_value({z}, {1});
    const double l0 = focal_value({z}, {0});
    REQUIRE(std::isfinite(l1));
    REQUIRE(std::isfinite(l0));
    CHECK(l1 <= prev);
    prev = l1;
  }
  CHECK(focal_value({-80}, {1}) == doctest::Approx(0.5 * 80).epsilon(1e-6));
}

TEST_CASE("focal modulation down-weights an easy example") {
  const double z = std::log(0.9 / 0.1);  // p = 0.9
  const double focal = focal_value({z}, {1});
  const double weighted_bce = 0.5 * -std::log(0.9);
  CHECK(focal < weighted_bce);
  CHECK(focal == doctest::Approx(weighted_bce * 0.01).epsilon(1e-5));
}

TEST_CASE("focal loss validation") {
  CHECK_THROWS_AS(focal_value({0, 1}, {1}), ConfigError);
  CHECK_THROWS_AS(focal_value({0}, {2}), ConfigError);
  CHECK_THROWS_AS(focal_value({0}, {1}, {-1.0, 0.5}), ConfigError);
  CHECK_THROWS_AS(focal_value({0}, {1}, {2.0, 1.0}), ConfigError);
  CHECK_THROWS_AS(focal_value({NAN}, {1}), NumericError);
}

// ---- AdamW ---------------------------------------------------------------------------

TEST_CASE("AdamW: zero gradient and zero decay leave parameters unchanged") {
  Parameter p("w", oracle::random_tensor({1, 4, 2, 2, 2}, 1));
  const Tensor before = p.value;
  AdamW opt({&p}, {0.9, 0.999, 1e-8, 0.0});
  for (int i = 0; i < 5; ++i) opt.step(1e-3);
  CHECK(std::memcmp(before.ptr(), p.value.ptr(), before.size() * sizeof(Real)) == 0);
  CHECK(opt.steps() == 5);
}

TEST_CASE("AdamW: wd 0.01, lr 0.1, zero gradient scales by 0.999") {
  Parameter p("w", oracle::random_tensor({1, 8, 4, 4, 4}, 2, -3, 3));
  const Tensor before = p.value;
  AdamW opt({&p});
  opt.step(0.1);
  for (std::size_t i = 0; i < p.value.size(); ++i) {
    REQUIRE(p.value[i] == static_cast<Real>(0.999 * static_cast<double>(before[i])));
  }
}

TEST_CASE("AdamW: a constant gradient moves each step by about lr") {
  Parameter p("w", Tensor({1, 3, 1, 1, 1}, std::vector<Real>{1, 1, 1}));
  const std::vector<Real> g{Real(0.5), Real(-2e-3), Real(30)};
  AdamW opt({&p}, {0.9, 0.999, 1e-8, 0.0});
  const double lr = 1e-3;
  for (int step = 0; step < 200; ++step) {
    const Tensor before = p.value;
    for (int i = 0; i < 3; ++i) p.grad[i] = g[i];
    opt.step(lr);
    for (int i = 0; i < 3; ++i) {
      const double delta = static_cast<double>(p.value[i]) - before[i];
      CHECK(delta * g[i] < 0);
      CHECK(std::abs(delta) == doctest::Approx(lr).epsilon(kDoublePrecision ? 1e-5 : 2e-3));
    }
  }
}

TEST_CASE("AdamW: a NaN gradient names the parameter and changes nothing") {
  Parameter a("stage1.conv.weight", Tensor({1, 2, 1, 1, 1}, Real(1)));
  Parameter b("fc.bias", Tensor({1, 2, 1, 1, 1}, Real(1)));
  a.grad.fill(Real(0.1));
  b.grad[1] = NAN;
  AdamW opt({&a, &b});
  try {
    opt.step(0.1);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("fc.bias") != std::string::npos);
  }
  CHECK(a.value[0] == 1);
  CHECK(opt.steps() == 0);
}

TEST_CASE("AdamW steps are bit-reproducible") {
  Parameter p1("w", oracle::random_tensor({1, 6, 2, 2, 2}, 4));
  Parameter p2("w", p1.value);
  AdamW o1({&p1}), o2({&p2});
  for (int s = 0; s < 4; ++s) {
    const Tensor g = oracle::random_tensor(p1.value.shape(), 10 + s);
    p1.grad = g;
    p2.grad = g;
    o1.step(2e-4);
    o2.step(2e-4);
  }
  CHECK(std::memcmp(p1.value.ptr(), p2.value.ptr(), p1.value.size() * sizeof(Real)) == 0);
}

// ---- schedule ------------------------------------------------------------------------

TEST_CASE("cosine schedule endpoints, midpoint and monotonicity") {
  CHECK(cosine_lr(0, 30, 2e-4, 1e-7) == 2e-4);
  CHECK(cosine_lr(30, 30, 2e-4, 1e-7) == 1e-7);
  CHECK(cosine_lr(15, 30, 2e-4, 1e-7) == doctest::Approx((2e-4 + 1e-7) / 2).epsilon(1e-12));
  for (int epochs : {1, 2, 7, 30, 101}) {
    double prev = INFINITY;
    for (int e = 0; e <= epochs; ++e) {
      const double lr = cosine_lr(e, epochs, 2e-4, 1e-7);
      CHECK(lr <= prev);
      CHECK(lr >= 1e-7);
      const double closed = 1e-7 + 0.5 * (2e-4 - 1e-7) * (1 + std::cos(M_PI * e / epochs));
      CHECK(lr == doctest::Approx(closed).epsilon(1e-12));
      prev = lr;
    }
    CHECK(cosine_lr(epochs, epochs, 2e-4, 1e-7) == 1e-7);
  }
  CHECK_THROWS_AS(cosine_lr(31, 30, 2e-4, 1e-7), ConfigError);
}

// ---- splits --------------------------------------------------------------------------

TEST_CASE("split: 100 records 50/50 -> test 20 (10/10), folds of 16 (8/8)") {
  std::vector<int> labels(100);
  for (int i = 0; i < 100; ++i) labels[i] = (i * 7) % 2;
  const Split sp = split_dataset(labels, 11);
  auto count = [&](const std::vector<int>& idx, int cls) {
    return std::count_if(idx.begin(), idx.end(), [&](int i) { return labels[i] == cls; });
  };
  CHECK(sp.test.size() == 20);
  CHECK(count(sp.test, 1) == 10);
  REQUIRE(sp.folds.size() == 5);
  std::set<int> seen(sp.test.begin(), sp.test.end());
  for (const auto& f : sp.folds) {
    CHECK(f.size() == 16);
    CHECK(count(f, 1) == 8);
    for (int i : f) CHECK(seen.insert(i).second);
  }
  CHECK(seen.size() == 100);

  const Split again = split_dataset(labels, 11);
  CHECK(again.test == sp.test);
  CHECK(again.folds == sp.folds);
  CHECK(split_dataset(labels, 12).test != sp.test);

  const auto train = sp.train_indices(2);
  CHECK(train.size() == 64);
  for (int i : sp.folds[2]) CHECK(std::find(train.begin(), train.end(), i) == train.end());
}

TEST_CASE("split errors") {
  CHECK_THROWS_AS(split_dataset(std::vector<int>(20, 1), 1), ConfigError);
  CHECK_THROWS_AS(split_dataset({0, 1, 0, 1, 0, 1, 0, 1, 0}, 1), ConfigError);
  const Split sp = split_dataset(std::vector<int>{0, 1, 0, 1, 0, 1, 0, 1, 0, 1}, 1);
  CHECK_THROWS_AS(sp.train_indices(5), ConfigError);
}

TEST_CASE("train plan JSON") {
  TrainPlan p;
  p.epochs = 12;
  p.focal.gamma = 1.5;
  p.adamw.weight_decay = 0.05;
  const nlohmann::json j = p;
  const TrainPlan back = j.get<TrainPlan>();
  CHECK(nlohmann::json(back) == j);
  CHECK_THROWS_AS(nlohmann::json({{"epoch", 3}}).get<TrainPlan>(), ConfigError);
  CHECK_THROWS_AS(nlohmann::json({{"focal", {{"gama", 3}}}}).get<TrainPlan>(), ConfigError);
  CHECK_THROWS_AS(nlohmann::json({{"epochs", "ten"}}).get<TrainPlan>(), ConfigError);
  TrainPlan bad;
  bad.epochs = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = TrainPlan{};
  bad.folds = 1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

// ---- train_fold ----------------------------------------------------------------------

namespace {

NetworkConfig tiny_config() {
  NetworkConfig cfg;
  cfg.set_widths("4/8");
  return cfg;
}

std::vector<Sample> tiny_samples(int n, std::uint64_t seed) {
  PhantomSpec spec;
  spec.size = 16;
  std::vector<Sample> out;
  for (int i = 0; i < n; ++i) {
    const int y = i % 2;
    out.push_back({"s" + std::to_string(i), y, synth_subject(spec, y, seed + i)});
  }
  return out;
}

TrainPlan tiny_plan(int epochs) {
  TrainPlan plan;
  plan.epochs = epochs;
  plan.batch_size = 2;
  plan.lr = 1e-3;
  plan.seed = 5;
  return plan;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("gfn_test_train_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("train_fold: one epoch is best by definition; files are finalised") {
  GateFuseNet net(tiny_config());
  FoldData data{tiny_samples(5, 1), tiny_samples(4, 50)};
  const fs::path dir = scratch("one");
  TrainOptions opts;
  opts.out_dir = dir.string();
  opts.checkpoint_meta = {{"fold", 0}};
  int calls = 0;
  opts.on_epoch = [&](const EpochLog& e) {
    ++calls;
    CHECK(e.epoch == 1);
  };
  const TrainResult r = train_fold(net, data, tiny_plan(1), opts);
  CHECK_FALSE(r.diverged);
  CHECK(r.best_epoch == 1);
  CHECK(calls == 1);
  REQUIRE(r.log.size() == 1);
  CHECK(r.log[0].lr == 1e-3);
  CHECK(std::isfinite(r.log[0].train_loss));
  CHECK(fs::exists(dir / "best.gfn1"));
  CHECK(fs::exists(dir / "log.csv"));
  CHECK_FALSE(fs::exists(dir / "best.gfn1.partial"));
  CHECK_FALSE(fs::exists(dir / "log.csv.partial"));
  const std::string log = slurp(dir / "log.csv");
  CHECK(log.rfind("epoch,lr,train_loss,val_auc,val_f1,val_acc\n1,", 0) == 0);
  const CheckpointHeader h = read_checkpoint_header((dir / "best.gfn1").string());
  CHECK(h.meta.at("fold") == 0);
  CHECK(h.meta.at("epoch") == 1);

  // The network holds the checkpoint's parameters.
  auto loaded = load_checkpoint((dir / "best.gfn1").string());
  const auto s1 = predict(net, data.val, 2);
  const auto s2 = predict(*loaded, data.val, 2);
  CHECK(s1 == s2);
}

TEST_CASE("train_fold: equal combined scores keep the earliest epoch") {
  // A one-class selection set pins AUC at 0.5 and F1 at 0, so every epoch ties.
  GateFuseNet net(tiny_config());
  std::vector<Sample> val = tiny_samples(4, 70);
  val.erase(std::remove_if(val.begin(), val.end(), [](const Sample& s) { return s.label == 1; }),
            val.end());
  FoldData data{tiny_samples(4, 1), val};
  const TrainResult r = train_fold(net, data, tiny_plan(3), {});
  REQUIRE(r.log.size() == 3);
  for (const EpochLog& e : r.log) {
    CHECK(e.val_auc == 0.5);
    CHECK(e.val_f1 == 0);
  }
  CHECK(r.best_epoch == 1);
  CHECK(r.best_score == 0.25);
}

TEST_CASE("train_fold: without a selection set the last epoch is kept") {
  // Four training records are separated within an epoch or two, so scoring
  // them would tie at the top and pick an early, barely trained epoch.
  GateFuseNet net(tiny_config());
  FoldData data{tiny_samples(4, 1), {}};
  const fs::path dir = scratch("last");
  TrainOptions opts;
  opts.out_dir = dir.string();
  const TrainResult r = train_fold(net, data, tiny_plan(3), opts);
  CHECK_FALSE(r.diverged);
  CHECK(r.best_epoch == 3);
  CHECK(r.log.size() == 3);
  CHECK(read_checkpoint_header((dir / "best.gfn1").string()).meta.at("epoch") == 3);
}

TEST_CASE("train_fold: divergence aborts and keeps the last good checkpoint") {
  GateFuseNet net(tiny_config());
  FoldData data{tiny_samples(4, 1), {}};
  const fs::path dir = scratch("diverge");
  TrainOptions opts;
  opts.out_dir = dir.string();
  opts.on_epoch = [&](const EpochLog& e) {
    if (e.epoch == 1) net.fc.weight.value[0] = NAN;  // poisons epoch 2
  };
  const TrainResult r = train_fold(net, data, tiny_plan(4), opts);
  CHECK(r.diverged);
  CHECK(r.divergence.find("epoch 2") != std::string::npos);
  CHECK(r.best_epoch == 1);
  CHECK(r.log.size() == 1);
  CHECK_FALSE(fs::exists(dir / "best.gfn1"));
  CHECK_FALSE(fs::exists(dir / "log.csv"));
  REQUIRE(fs::exists(dir / "best.gfn1.partial"));
  REQUIRE(fs::exists(dir / "log.csv.partial"));
  auto good = load_checkpoint((dir / "best.gfn1.partial").string());
  CHECK(good->fc.weight.value.all_finite());
  CHECK(net.fc.weight.value.all_finite());
}

TEST_CASE("train_fold is deterministic, augmentation included") {
  FoldData data{tiny_samples(5, 1), tiny_samples(4, 50)};
  TrainPlan plan = tiny_plan(2);
  TrainOptions opts;
  opts.augment.affine_p = 1;
  opts.augment.noise_p = 0.5;
  GateFuseNet a(tiny_config()), b(tiny_config());
  const TrainResult ra = train_fold(a, data, plan, opts);
  const TrainResult rb = train_fold(b, data, plan, opts);
  REQUIRE(ra.log.size() == rb.log.size());
  for (std::size_t i = 0; i < ra.log.size(); ++i) {
    CHECK(ra.log[i].train_loss == rb.log[i].train_loss);
    CHECK(ra.log[i].val_auc == rb.log[i].val_auc);
  }
  const ParamList pa = a.parameters(), pb = b.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    REQUIRE(std::memcmp(pa[i]->value.ptr(), pb[i]->value.ptr(),
                        pa[i]->value.size() * sizeof(Real)) == 0);
  }
}

TEST_CASE("make_batch stacks one-hot ROI, QSM and T1w") {
  const auto samples = tiny_samples(2, 3);
  Tape t;
  const Triple x = make_batch(t, {&samples[0], &samples[1]}, 10);
  CHECK(x[Modality::roi].shape() == Shape{2, 10, 16, 16, 16});
  CHECK(x[Modality::qsm].shape() == Shape{2, 1, 16, 16, 16});
  CHECK(x[Modality::t1].value().at(1, 0, 3, 4, 5) == samples[1].volumes.t1.at(0, 0, 3, 4, 5));
  const Tensor oh = one_hot(samples[1].volumes.roi, 10);
  CHECK(x[Modality::roi].value().at(1, 2, 8, 8, 8) == oh.at(0, 2, 8, 8, 8));
}
