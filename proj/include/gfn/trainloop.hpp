#pragma once

// Focal loss, AdamW, cosine schedule, stratified splits and the per-fold
// training loop with best-checkpoint selection.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "gfn/netblocks.hpp"
#include "gfn/phantomdata.hpp"
#include "json.hpp"

namespace gfn::inline GFN_ABI {

struct FocalParams {
  double gamma = 2.0;
  double alpha = 0.5;
  void validate() const;
};

/// Mean over the batch of
///   -alpha (1-p)^gamma y log p - (1-alpha) p^gamma (1-y) log(1-p),  p = sigmoid(z),
/// with log p = -softplus(-z) and log(1-p) = -softplus(z). logits (n,1,1,1,1).
Var focal_loss(Var logits, const std::vector<int>& labels, const FocalParams& params = {});

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Decoupled weight decay, then the bias-corrected Adam update. Moments are
/// kept in double, aligned with the parameter list given at construction.
class AdamW {
 public:
  AdamW(ParamList params, AdamWConfig cfg = {});
  /// Throws NumericError naming the first parameter with a non-finite gradient
  /// (before touching any parameter).
  void step(double lr);
  long steps() const { return t_; }

 private:
  ParamList params_;
  AdamWConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  long t_ = 0;
};

/// floor + (base - floor)/2 (1 + cos(pi epoch / epochs)); exactly base at 0
/// and exactly floor at epochs.
double cosine_lr(int epoch, int epochs, double base, double floor);

struct TrainPlan {
  int epochs = 30;
  int batch_size = 4;
  double lr = 2e-4;
  double lr_floor = 1e-7;
  int folds = 5;
  double test_fraction = 0.2;
  std::uint64_t seed = 0;
  double threshold = 0.5;
  FocalParams focal;
  AdamWConfig adamw;
  bool augment = true;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainPlan& p);
void from_json(const nlohmann::json& j, TrainPlan& p);

struct Split {
  std::vector<int> test;
  std::vector<std::vector<int>> folds;

  /// Indices of every fold except `fold`.
  std::vector<int> train_indices(int fold) const;
};

/// Stratified hold-out (round(fraction * class count) per class), then the
/// rest of each class dealt round-robin into `folds` folds after a seeded
/// shuffle. Needs >= 10 records and both classes.
Split split_dataset(const std::vector<int>& labels, std::uint64_t seed, int folds = 5,
                    double test_fraction = 0.2);

// ---- training ---------------------------------------------------------------------

struct EpochLog {
  int epoch = 0;  // 1-based
  double lr = 0;
  double train_loss = 0;
  double val_auc = 0;
  double val_f1 = 0;
  double val_acc = 0;
};

struct TrainResult {
  std::vector<EpochLog> log;
  int best_epoch = 0;  // 0: no usable epoch
  double best_score = 0;
  bool diverged = false;
  std::string divergence;  // diagnostic when diverged
};

struct FoldData {
  std::vector<Sample> train;
  /// Selection set. Empty: the log reports the (unaugmented) training set and
  /// the last epoch is kept.
  std::vector<Sample> val;
};

/// Scores (probabilities) of the network in eval mode, batch by batch.
std::vector<double> predict(GateFuseNet& net, const std::vector<Sample>& samples,
                            int batch_size);

/// Stacks samples into network inputs (ROI one-hot with K channels).
Triple make_batch(Tape& t, const std::vector<const Sample*>& batch, int roi_channels);

struct TrainOptions {
  /// Output directory; log.csv and best.gfn1 are written here. While training
  /// (and after a divergence) they carry a ".partial" suffix.
  std::string out_dir;
  nlohmann::json checkpoint_meta = nlohmann::json::object();
  AugmentSpec augment;
  /// Called after each epoch (progress reporting).
  std::function<void(const EpochLog&)> on_epoch;
};

/// Initialises `net` from plan.seed, trains, and leaves the best epoch's
/// parameters in `net`. Best = max (AUC + F1)/2 on the selection set, ties
/// to the earlier epoch; the last epoch when there is no selection set.
TrainResult train_fold(GateFuseNet& net, const FoldData& data, const TrainPlan& plan,
                       const TrainOptions& options);

}  // namespace gfn::inline GFN_ABI
