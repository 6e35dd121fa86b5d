#include "gfn/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>

namespace gfn::inline GFN_ABI {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void check_inputs(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.empty()) throw ConfigError("metrics need at least one score");
  if (scores.size() != labels.size()) {
    throw ConfigError("metrics: " + std::to_string(scores.size()) + " scores but " +
                      std::to_string(labels.size()) + " labels");
  }
  for (int y : labels) {
    if (y != 0 && y != 1) throw ConfigError("metrics: labels must be 0 or 1");
  }
  for (double s : scores) {
    if (!std::isfinite(s)) throw ConfigError("metrics: scores must be finite");
  }
}

// Groups of tied scores, highest first, with the positives/negatives in each.
struct Step {
  double score;
  long pos;
  long neg;
};

std::vector<Step> sweep(const std::vector<double>& scores, const std::vector<int>& labels) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<Step> steps;
  for (std::size_t i : order) {
    if (steps.empty() || steps.back().score != scores[i]) steps.push_back({scores[i], 0, 0});
    (labels[i] ? steps.back().pos : steps.back().neg) += 1;
  }
  return steps;
}

std::string num(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

}  // namespace

ConfusionReport confusion_metrics(const std::vector<double>& scores,
                                  const std::vector<int>& labels, double threshold) {
  check_inputs(scores, labels);
  if (!(threshold >= 0 && threshold <= 1)) {
    throw ConfigError("threshold must be in [0, 1], got " + num(threshold));
  }
  ConfusionReport r;
  r.threshold = threshold;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= threshold;
    if (labels[i]) {
      (pred ? r.tp : r.fn) += 1;
    } else {
      (pred ? r.fp : r.tn) += 1;
    }
  }
  auto ratio = [&](long a, long b, const char* name) {
    if (b == 0) {
      r.undefined.push_back(name);
      return 0.0;
    }
    return static_cast<double>(a) / static_cast<double>(b);
  };
  r.accuracy = ratio(r.tp + r.tn, r.tp + r.tn + r.fp + r.fn, "accuracy");
  r.precision = ratio(r.tp, r.tp + r.fp, "precision");
  r.recall = ratio(r.tp, r.tp + r.fn, "recall");
  r.specificity = ratio(r.tn, r.tn + r.fp, "specificity");
  r.ppv = r.precision;
  if (r.tp + r.fp == 0) r.undefined.push_back("ppv");
  r.npv = ratio(r.tn, r.tn + r.fn, "npv");
  // F1 = 2TP / (2TP + FP + FN) agrees with 2PR/(P+R) whenever that is defined.
  r.f1 = ratio(2 * r.tp, 2 * r.tp + r.fp + r.fn, "f1");
  return r;
}

Curve roc_curve(const std::vector<double>& scores, const std::vector<int>& labels) {
  check_inputs(scores, labels);
  const long pos = std::count(labels.begin(), labels.end(), 1);
  const long neg = static_cast<long>(labels.size()) - pos;
  if (pos == 0 || neg == 0) throw ConfigError("ROC needs both classes present");
  Curve c;
  c.points.push_back({0, 0, std::numeric_limits<double>::infinity()});
  long tp = 0, fp = 0;
  for (const Step& s : sweep(scores, labels)) {
    tp += s.pos;
    fp += s.neg;
    const CurvePoint p{static_cast<double>(fp) / neg, static_cast<double>(tp) / pos, s.score};
    const CurvePoint& q = c.points.back();
    c.area += (p.x - q.x) * (p.y + q.y) / 2;
    c.points.push_back(p);
  }
  return c;
}

Curve pr_curve(const std::vector<double>& scores, const std::vector<int>& labels) {
  check_inputs(scores, labels);
  const long pos = std::count(labels.begin(), labels.end(), 1);
  const long neg = static_cast<long>(labels.size()) - pos;
  if (pos == 0 || neg == 0) throw ConfigError("PR curve needs both classes present");
  Curve c;
  c.points.push_back({0, 1, std::numeric_limits<double>::infinity()});
  long tp = 0, fp = 0;
  for (const Step& s : sweep(scores, labels)) {
    tp += s.pos;
    fp += s.neg;
    const CurvePoint p{static_cast<double>(tp) / pos, static_cast<double>(tp) / (tp + fp),
                       s.score};
    c.area += (p.x - c.points.back().x) * p.y;
    c.points.push_back(p);
  }
  return c;
}

EvalReport evaluate(const std::vector<double>& scores, const std::vector<int>& labels,
                    const std::vector<std::string>& ids, double threshold) {
  if (ids.size() != scores.size()) throw ConfigError("evaluate: ids and scores differ in length");
  EvalReport r;
  r.confusion = confusion_metrics(scores, labels, threshold);
  r.roc = roc_curve(scores, labels);
  r.pr = pr_curve(scores, labels);
  r.ids = ids;
  r.scores = scores;
  r.labels = labels;
  return r;
}

json metrics_json(const EvalReport& r) {
  const ConfusionReport& c = r.confusion;
  return json{{"threshold", c.threshold},
              {"n", c.tp + c.fp + c.tn + c.fn},
              {"counts", {{"tp", c.tp}, {"fp", c.fp}, {"tn", c.tn}, {"fn", c.fn}}},
              {"accuracy", c.accuracy},
              {"precision", c.precision},
              {"recall", c.recall},
              {"f1", c.f1},
              {"specificity", c.specificity},
              {"ppv", c.ppv},
              {"npv", c.npv},
              {"auc", r.roc.area},
              {"aupr", r.pr.area},
              {"undefined", c.undefined}};
}

void export_report(const EvalReport& r, const std::string& dir) {
  const fs::path root(dir);
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw IoError("cannot create '" + dir + "': " + ec.message());
  write_file(root / "metrics.json", metrics_json(r).dump(2) + "\n");
  std::string roc = "fpr,tpr,threshold\n";
  for (const CurvePoint& p : r.roc.points) {
    roc += num(p.x) + "," + num(p.y) + "," + num(p.threshold) + "\n";
  }
  write_file(root / "roc.csv", roc);
  std::string pr = "recall,precision,threshold\n";
  for (const CurvePoint& p : r.pr.points) {
    pr += num(p.x) + "," + num(p.y) + "," + num(p.threshold) + "\n";
  }
  write_file(root / "pr.csv", pr);
  std::string sc = "id,label,score\n";
  for (std::size_t i = 0; i < r.scores.size(); ++i) {
    sc += r.ids[i] + "," + std::to_string(r.labels[i]) + "," + num(r.scores[i]) + "\n";
  }
  write_file(root / "scores.csv", sc);
}

// ---- Grad-CAM ---------------------------------------------------------------------

Tensor upsample_trilinear(const Tensor& vol, int d, int h, int w) {
  const Shape s = vol.shape();
  Tensor out({s.n, s.c, d, h, w});
  struct Tap {
    int lo, hi;
    double f;
  };
  auto taps = [](int in, int o) {
    std::vector<Tap> t(o);
    const double r = static_cast<double>(in) / o;
    for (int i = 0; i < o; ++i) {
      const double src = std::clamp((i + 0.5) * r - 0.5, 0.0, static_cast<double>(in - 1));
      const int lo = static_cast<int>(std::floor(src));
      t[i] = {lo, std::min(lo + 1, in - 1), src - lo};
    }
    return t;
  };
  const auto tz = taps(s.d, d), ty = taps(s.h, h), tx = taps(s.w, w);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int z = 0; z < d; ++z)
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x) {
            double v = 0;
            for (int k = 0; k < 8; ++k) {
              const Tap& a = tz[z];
              const Tap& b = ty[y];
              const Tap& e = tx[x];
              const double wz = (k & 4) ? a.f : 1 - a.f;
              const double wy = (k & 2) ? b.f : 1 - b.f;
              const double wx = (k & 1) ? e.f : 1 - e.f;
              const double wt = wz * wy * wx;
              if (wt == 0) continue;
              v += wt * vol.at(n, c, (k & 4) ? a.hi : a.lo, (k & 2) ? b.hi : b.lo,
                               (k & 1) ? e.hi : e.lo);
            }
            out.at(n, c, z, y, x) = static_cast<Real>(v);
          }
  return out;
}

CamMap cam_from_gradients(const Tensor& a, const Tensor& g) {
  const Shape s = a.shape();
  if (s.n != 1 || g.shape() != s) {
    throw ConfigError("cam: activations " + to_string(s) + " and gradients " +
                      to_string(g.shape()) + " must match with n = 1");
  }
  const std::size_t vox = s.spatial();
  CamMap cam;
  cam.coarse = Tensor({1, 1, s.d, s.h, s.w});
  std::vector<double> acc(vox, 0.0);
  for (int c = 0; c < s.c; ++c) {
    double wc = 0;
    for (std::size_t i = 0; i < vox; ++i) wc += g[c * vox + i];
    wc /= static_cast<double>(vox);
    if (wc == 0) continue;
    for (std::size_t i = 0; i < vox; ++i) acc[i] += wc * a[c * vox + i];
  }
  double mx = 0;
  for (std::size_t i = 0; i < vox; ++i) {
    acc[i] = std::max(acc[i], 0.0);
    mx = std::max(mx, acc[i]);
  }
  cam.zero = !(mx > 0);
  for (std::size_t i = 0; i < vox; ++i) {
    cam.coarse[i] = static_cast<Real>(cam.zero ? 0.0 : acc[i] / mx);
  }
  return cam;
}

CamMap grad_cam(GateFuseNet& net, const std::array<Tensor, 3>& inputs, int stage) {
  const NetworkConfig& cfg = net.config();
  const int stages = static_cast<int>(cfg.stage_widths.size());
  if (stage < 0) stage = stages;
  if (stage > stages) {
    throw ConfigError("grad_cam: stage " + std::to_string(stage) + " out of range 0.." +
                      std::to_string(stages));
  }
  for (const Tensor& t : inputs) {
    if (t.shape().n != 1) throw ConfigError("grad_cam: expects a single subject (n = 1)");
  }
  Tape tape;
  Triple x;
  for (Modality m : kModalities) x[m] = tape.constant(inputs[static_cast<int>(m)]);
  ForwardTrace trace;
  const Var logit = net.forward(tape, x, &trace);
  tape.backward(logit);
  const Var act = trace.stages.at(stage)[cfg.anchor];
  CamMap cam = cam_from_gradients(act.value(), tape.grad(act));
  const Shape in = inputs[static_cast<int>(cfg.anchor)].shape();
  cam.upsampled = upsample_trilinear(cam.coarse, in.d, in.h, in.w);
  if (!cam.zero) {
    double umx = 0;
    for (std::size_t i = 0; i < cam.upsampled.size(); ++i) {
      umx = std::max(umx, static_cast<double>(cam.upsampled[i]));
    }
    if (umx > 0) {
      for (std::size_t i = 0; i < cam.upsampled.size(); ++i) {
        cam.upsampled[i] = static_cast<Real>(cam.upsampled[i] / umx);
      }
    }
  }
  return cam;
}

double top_decile_enrichment(const Tensor& cam, const std::vector<bool>& mask) {
  const std::size_t n = cam.size();
  if (mask.size() != n) throw ConfigError("enrichment: mask and map sizes differ");
  const auto in_mask = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
  if (in_mask == 0) throw ConfigError("enrichment: mask is empty");
  std::vector<Real> sorted(cam.data().begin(), cam.data().end());
  const std::size_t k = std::max<std::size_t>(1, (n + 9) / 10);
  std::nth_element(sorted.begin(), sorted.begin() + (k - 1), sorted.end(), std::greater<>());
  const Real cut = sorted[k - 1];
  std::size_t top = 0, hit = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (cam[i] >= cut) {
      ++top;
      if (mask[i]) ++hit;
    }
  }
  const double frac = static_cast<double>(hit) / static_cast<double>(top);
  return frac / (static_cast<double>(in_mask) / static_cast<double>(n));
}

}  // namespace gfn::inline GFN_ABI
