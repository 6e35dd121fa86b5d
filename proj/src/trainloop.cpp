#include "gfn/trainloop.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "gfn/evalkit.hpp"

namespace gfn::inline GFN_ABI {

namespace fs = std::filesystem;
using nlohmann::json;

void FocalParams::validate() const {
  if (!(gamma >= 0)) throw ConfigError("focal.gamma must be >= 0");
  if (!(alpha > 0 && alpha < 1)) throw ConfigError("focal.alpha must be in (0, 1)");
}

Var focal_loss(Var logits, const std::vector<int>& labels, const FocalParams& params) {
  params.validate();
  const Tensor& z = logits.value();
  const Shape s = z.shape();
  if (s.c != 1 || s.spatial() != 1) {
    throw ConfigError("focal_loss expects logits (n,1,1,1,1), got " + to_string(s));
  }
  if (labels.size() != static_cast<std::size_t>(s.n)) {
    throw ConfigError("focal_loss: " + std::to_string(s.n) + " logits but " +
                      std::to_string(labels.size()) + " labels");
  }
  const double a = params.alpha, g = params.gamma;
  double total = 0;
  for (int i = 0; i < s.n; ++i) {
    const double v = z[i];
    if (!std::isfinite(v)) throw NumericError("focal_loss: non-finite logit");
    if (labels[i] == 1) {
      total += a * std::pow(stable_sigmoid(-v), g) * softplus(-v);
    } else if (labels[i] == 0) {
      total += (1 - a) * std::pow(stable_sigmoid(v), g) * softplus(v);
    } else {
      throw ConfigError("focal_loss: labels must be 0 or 1");
    }
  }
  const int iz = logits.id;
  return logits.tape->record(
      "focal_loss", Tensor::scalar(static_cast<Real>(total / s.n)), {iz},
      [iz, labels, a, g](Tape& t, const Tensor& grad) {
        const Tensor& zv = t.value(iz);
        Tensor gz(zv.shape());
        const double scale = grad.item() / static_cast<double>(zv.size());
        for (std::size_t i = 0; i < zv.size(); ++i) {
          const double v = zv[i];
          const double p = stable_sigmoid(v), q = stable_sigmoid(-v);
          double d;
          if (labels[i] == 1) {
            d = -a * std::pow(q, g) * (g * p * softplus(-v) + q);
          } else {
            d = (1 - a) * std::pow(p, g) * (g * q * softplus(v) + p);
          }
          gz[i] = static_cast<Real>(scale * d);
        }
        t.accumulate(iz, gz);
      });
}

// ---- AdamW ---------------------------------------------------------------------------

AdamW::AdamW(ParamList params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  if (!(cfg_.beta1 >= 0 && cfg_.beta1 < 1 && cfg_.beta2 >= 0 && cfg_.beta2 < 1)) {
    throw ConfigError("adamw betas must be in [0, 1)");
  }
  if (!(cfg_.eps > 0)) throw ConfigError("adamw.eps must be > 0");
  if (!(cfg_.weight_decay >= 0)) throw ConfigError("adamw.weight_decay must be >= 0");
  for (const Parameter* p : params_) {
    m_.emplace_back(p->value.size(), 0.0);
    v_.emplace_back(p->value.size(), 0.0);
  }
}

void AdamW::step(double lr) {
  for (const Parameter* p : params_) {
    if (!p->grad.all_finite()) throw NumericError("non-finite gradient in parameter " + p->name);
  }
  ++t_;
  const double c1 = 1 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1 - std::pow(cfg_.beta2, static_cast<double>(t_));
  const double decay = 1 - lr * cfg_.weight_decay;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Parameter& p = *params_[k];
    std::vector<double>& m = m_[k];
    std::vector<double>& v = v_[k];
    for (std::size_t i = 0; i < m.size(); ++i) {
      const double g = p.grad[i];
      m[i] = cfg_.beta1 * m[i] + (1 - cfg_.beta1) * g;
      v[i] = cfg_.beta2 * v[i] + (1 - cfg_.beta2) * g * g;
      double x = static_cast<double>(p.value[i]) * decay;
      if (m[i] != 0) x -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.eps);
      p.value[i] = static_cast<Real>(x);
    }
  }
}

double cosine_lr(int epoch, int epochs, double base, double floor) {
  if (epochs < 1 || epoch < 0 || epoch > epochs) {
    throw ConfigError("cosine_lr: epoch " + std::to_string(epoch) + " outside 0.." +
                      std::to_string(epochs));
  }
  const double half = 0.5 * (base - floor);
  const double c = std::cos(std::numbers::pi * epoch / epochs);
  // Anchor each half on its own endpoint so both ends come out exact.
  if (2 * epoch <= epochs) return base - half * (1 - c);
  return floor + half * (1 + c);
}

// ---- plan ----------------------------------------------------------------------------

void TrainPlan::validate() const {
  if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (!(lr > 0)) throw ConfigError("train.lr must be > 0");
  if (!(lr_floor >= 0 && lr_floor <= lr)) throw ConfigError("train.lr_floor must be in [0, lr]");
  if (folds < 2) throw ConfigError("train.folds must be >= 2");
  if (!(test_fraction > 0 && test_fraction < 1)) {
    throw ConfigError("train.test_fraction must be in (0, 1)");
  }
  if (!(threshold >= 0 && threshold <= 1)) throw ConfigError("train.threshold must be in [0, 1]");
  focal.validate();
  AdamW({}, adamw);
}

void to_json(json& j, const TrainPlan& p) {
  j = json{{"epochs", p.epochs},
           {"batch_size", p.batch_size},
           {"lr", p.lr},
           {"lr_floor", p.lr_floor},
           {"folds", p.folds},
           {"test_fraction", p.test_fraction},
           {"seed", p.seed},
           {"threshold", p.threshold},
           {"focal", {{"gamma", p.focal.gamma}, {"alpha", p.focal.alpha}}},
           {"adamw",
            {{"beta1", p.adamw.beta1},
             {"beta2", p.adamw.beta2},
             {"eps", p.adamw.eps},
             {"weight_decay", p.adamw.weight_decay}}},
           {"augment", p.augment}};
}

namespace {

void reject_unknown(const json& j, const json& defaults, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!defaults.contains(key)) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

}  // namespace

void from_json(const json& j, TrainPlan& p) {
  const json defaults = p;
  reject_unknown(j, defaults, "train");
  try {
    auto get = [](const json& src, const char* key, auto& field) {
      if (src.contains(key)) src.at(key).get_to(field);
    };
    get(j, "epochs", p.epochs);
    get(j, "batch_size", p.batch_size);
    get(j, "lr", p.lr);
    get(j, "lr_floor", p.lr_floor);
    get(j, "folds", p.folds);
    get(j, "test_fraction", p.test_fraction);
    get(j, "seed", p.seed);
    get(j, "threshold", p.threshold);
    get(j, "augment", p.augment);
    if (j.contains("focal")) {
      const json& f = j.at("focal");
      reject_unknown(f, defaults.at("focal"), "train.focal");
      get(f, "gamma", p.focal.gamma);
      get(f, "alpha", p.focal.alpha);
    }
    if (j.contains("adamw")) {
      const json& a = j.at("adamw");
      reject_unknown(a, defaults.at("adamw"), "train.adamw");
      get(a, "beta1", p.adamw.beta1);
      get(a, "beta2", p.adamw.beta2);
      get(a, "eps", p.adamw.eps);
      get(a, "weight_decay", p.adamw.weight_decay);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train: ") + e.what());
  }
}

// ---- splits --------------------------------------------------------------------------

std::vector<int> Split::train_indices(int fold) const {
  if (fold < 0 || fold >= static_cast<int>(folds.size())) {
    throw ConfigError("fold " + std::to_string(fold) + " outside 0.." +
                      std::to_string(static_cast<int>(folds.size()) - 1));
  }
  std::vector<int> out;
  for (int f = 0; f < static_cast<int>(folds.size()); ++f) {
    if (f != fold) out.insert(out.end(), folds[f].begin(), folds[f].end());
  }
  std::sort(out.begin(), out.end());
  return out;
}

Split split_dataset(const std::vector<int>& labels, std::uint64_t seed, int folds,
                    double test_fraction) {
  if (labels.size() < 10) {
    throw ConfigError("split needs at least 10 records, got " + std::to_string(labels.size()));
  }
  if (folds < 2) throw ConfigError("split needs at least 2 folds");
  if (!(test_fraction > 0 && test_fraction < 1)) {
    throw ConfigError("test fraction must be in (0, 1)");
  }
  std::array<std::vector<int>, 2> byclass;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw ConfigError("split: labels must be 0 or 1");
    byclass[labels[i]].push_back(static_cast<int>(i));
  }
  if (byclass[0].empty() || byclass[1].empty()) {
    throw ConfigError("split needs both classes present");
  }
  Rng rng(derive_seed(seed, 1));
  Split sp;
  sp.folds.resize(folds);
  int next = 0;
  for (std::vector<int>& members : byclass) {
    rng.shuffle(members);
    const auto ntest = static_cast<std::size_t>(std::lround(test_fraction * members.size()));
    sp.test.insert(sp.test.end(), members.begin(), members.begin() + ntest);
    for (std::size_t i = ntest; i < members.size(); ++i) {
      sp.folds[next].push_back(members[i]);
      next = (next + 1) % folds;
    }
  }
  std::sort(sp.test.begin(), sp.test.end());
  for (auto& f : sp.folds) std::sort(f.begin(), f.end());
  return sp;
}

// ---- training ------------------------------------------------------------------------

Triple make_batch(Tape& t, const std::vector<const Sample*>& batch, int roi_channels) {
  if (batch.empty()) throw ConfigError("make_batch: empty batch");
  const Shape s = batch.front()->volumes.qsm.shape();
  const int n = static_cast<int>(batch.size());
  Tensor roi({n, roi_channels, s.d, s.h, s.w});
  Tensor qsm({n, 1, s.d, s.h, s.w});
  Tensor t1({n, 1, s.d, s.h, s.w});
  const std::size_t vox = s.spatial();
  for (int i = 0; i < n; ++i) {
    const SubjectVolumes& v = batch[i]->volumes;
    if (v.qsm.shape() != s || v.t1.shape() != s || v.roi.shape() != s) {
      throw ConfigError("make_batch: subject " + batch[i]->id + " has shape " +
                        to_string(v.qsm.shape()) + ", expected " + to_string(s));
    }
    const Tensor oh = one_hot(v.roi, roi_channels);
    std::copy(oh.data().begin(), oh.data().end(), roi.ptr() + i * roi_channels * vox);
    std::copy(v.qsm.data().begin(), v.qsm.data().end(), qsm.ptr() + i * vox);
    std::copy(v.t1.data().begin(), v.t1.data().end(), t1.ptr() + i * vox);
  }
  Triple x;
  x[Modality::roi] = t.constant(std::move(roi));
  x[Modality::qsm] = t.constant(std::move(qsm));
  x[Modality::t1] = t.constant(std::move(t1));
  return x;
}

std::vector<double> predict(GateFuseNet& net, const std::vector<Sample>& samples,
                            int batch_size) {
  if (batch_size < 1) throw ConfigError("predict: batch_size must be >= 1");
  const NormMode before = net.mode();
  net.set_mode(NormMode::eval);
  std::vector<double> scores;
  scores.reserve(samples.size());
  for (std::size_t b = 0; b < samples.size(); b += batch_size) {
    std::vector<const Sample*> batch;
    for (std::size_t i = b; i < std::min(samples.size(), b + batch_size); ++i) {
      batch.push_back(&samples[i]);
    }
    Tape tape;
    const Var logits = net.forward(tape, make_batch(tape, batch, net.config().roi_channels));
    for (std::size_t i = 0; i < batch.size(); ++i) {
      scores.push_back(stable_sigmoid(logits.value()[i]));
    }
  }
  net.set_mode(before);
  return scores;
}

namespace {

struct Snapshot {
  std::vector<Tensor> params;
  std::vector<Tensor> buffers;

  static Snapshot take(GateFuseNet& net) {
    Snapshot s;
    for (Parameter* p : net.parameters()) s.params.push_back(p->value);
    for (auto& [name, t] : net.buffers()) s.buffers.push_back(*t);
    return s;
  }
  void restore(GateFuseNet& net) const {
    const ParamList ps = net.parameters();
    for (std::size_t i = 0; i < ps.size(); ++i) ps[i]->value = params[i];
    const BufferList bs = net.buffers();
    for (std::size_t i = 0; i < bs.size(); ++i) *bs[i].second = buffers[i];
  }
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string log_csv(const std::vector<EpochLog>& log) {
  std::string out = "epoch,lr,train_loss,val_auc,val_f1,val_acc\n";
  for (const EpochLog& e : log) {
    out += std::to_string(e.epoch) + "," + fmt(e.lr) + "," + fmt(e.train_loss) + "," +
           fmt(e.val_auc) + "," + fmt(e.val_f1) + "," + fmt(e.val_acc) + "\n";
  }
  return out;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

void rename_file(const fs::path& from, const fs::path& to) {
  std::error_code ec;
  fs::rename(from, to, ec);
  if (ec) throw IoError("cannot rename '" + from.string() + "' to '" + to.string() + "': " +
                        ec.message());
}

}  // namespace

TrainResult train_fold(GateFuseNet& net, const FoldData& data, const TrainPlan& plan,
                       const TrainOptions& options) {
  plan.validate();
  options.augment.validate();
  if (data.train.empty()) throw ConfigError("train_fold: empty training set");
  // Without a held-out set the training records are only scored for the log:
  // their metrics saturate within a few epochs, so the last epoch is kept.
  const bool held_out = !data.val.empty();
  const std::vector<Sample>& selection = held_out ? data.val : data.train;

  const bool to_disk = !options.out_dir.empty();
  const fs::path dir(options.out_dir);
  const fs::path log_partial = dir / "log.csv.partial";
  const fs::path ckpt_partial = dir / "best.gfn1.partial";
  if (to_disk) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
    fs::remove(dir / "log.csv", ec);
    fs::remove(dir / "best.gfn1", ec);
    fs::remove(ckpt_partial, ec);
  }

  net.init_params(plan.seed);
  const ParamList params = net.parameters();
  AdamW opt(params, plan.adamw);
  Rng order_rng(derive_seed(plan.seed, 2));
  Rng aug_rng(derive_seed(plan.seed, 3));
  const AugmentSpec aug = plan.augment ? options.augment : AugmentSpec::none();

  TrainResult result;
  Snapshot best;
  std::vector<int> order(data.train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  for (int epoch = 1; epoch <= plan.epochs && !result.diverged; ++epoch) {
    EpochLog row;
    row.epoch = epoch;
    row.lr = cosine_lr(epoch - 1, plan.epochs, plan.lr, plan.lr_floor);
    net.set_mode(NormMode::train);
    order_rng.shuffle(order);
    double loss_sum = 0;
    for (std::size_t b = 0; b < order.size(); b += plan.batch_size) {
      const std::size_t end = std::min(order.size(), b + plan.batch_size);
      std::vector<Sample> augmented;
      std::vector<int> labels;
      for (std::size_t i = b; i < end; ++i) {
        const Sample& s = data.train[order[i]];
        augmented.push_back({s.id, s.label, augment(s.volumes, aug, aug_rng)});
        labels.push_back(s.label);
      }
      std::vector<const Sample*> batch;
      for (const Sample& s : augmented) batch.push_back(&s);
      Tape tape;
      const Var logits = net.forward(tape, make_batch(tape, batch, net.config().roi_channels));
      if (!logits.value().all_finite()) {
        result.diverged = true;
        result.divergence = "epoch " + std::to_string(epoch) + ": non-finite logits";
        break;
      }
      const Var loss = focal_loss(logits, labels, plan.focal);
      const double lv = loss.value().item();
      if (!std::isfinite(lv)) {
        result.diverged = true;
        result.divergence = "epoch " + std::to_string(epoch) + ": loss is " + fmt(lv);
        break;
      }
      loss_sum += lv * static_cast<double>(end - b);
      backprop(tape, loss, params);
      try {
        opt.step(row.lr);
      } catch (const NumericError& e) {
        result.diverged = true;
        result.divergence = "epoch " + std::to_string(epoch) + ": " + e.what();
        break;
      }
    }
    if (result.diverged) break;
    row.train_loss = loss_sum / static_cast<double>(order.size());

    const std::vector<double> scores = predict(net, selection, plan.batch_size);
    if (!std::all_of(scores.begin(), scores.end(), [](double s) { return std::isfinite(s); })) {
      result.diverged = true;
      result.divergence = "epoch " + std::to_string(epoch) + ": non-finite validation score";
      break;
    }
    std::vector<int> labels;
    for (const Sample& s : selection) labels.push_back(s.label);
    const ConfusionReport c = confusion_metrics(scores, labels, plan.threshold);
    const bool both = std::count(labels.begin(), labels.end(), 1) > 0 &&
                      std::count(labels.begin(), labels.end(), 0) > 0;
    row.val_auc = both ? roc_curve(scores, labels).area : 0.5;
    row.val_f1 = c.f1;
    row.val_acc = c.accuracy;
    result.log.push_back(row);

    const double score = (row.val_auc + row.val_f1) / 2;
    if (result.best_epoch == 0 || score > result.best_score || !held_out) {
      result.best_epoch = epoch;
      result.best_score = score;
      best = Snapshot::take(net);
      if (to_disk) {
        json meta = options.checkpoint_meta;
        meta["epoch"] = epoch;
        meta["score"] = score;
        save_checkpoint(ckpt_partial.string(), net, meta);
      }
    }
    if (to_disk) write_file(log_partial, log_csv(result.log));
    if (options.on_epoch) options.on_epoch(row);
  }

  if (result.best_epoch > 0) best.restore(net);
  if (to_disk && result.diverged) write_file(log_partial, log_csv(result.log));
  if (to_disk && !result.diverged) {
    rename_file(log_partial, dir / "log.csv");
    rename_file(ckpt_partial, dir / "best.gfn1");
  }
  return result;
}

}  // namespace gfn::inline GFN_ABI
