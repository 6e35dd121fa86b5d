#pragma once

// Synthetic three-modality subjects (QSM, T1w, ROI label map), the training
// augmentations, centred crop/pad, GFNVOL1 volume files and dataset
// manifests.
//
// Geometry: volumes are (1, 1, D, H, W) tensors; fractional coordinates are
// (x, y, z) = (w, h, d) axes, voxel i has centre (i + 0.5) / size.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "gfn/random.hpp"
#include "gfn/tensor.hpp"
#include "json.hpp"

namespace gfn::inline GFN_ABI {

struct Nucleus {
  std::string name;               // e.g. "SN_L"
  std::array<double, 3> center;   // fractional (x, y, z)
  std::array<double, 3> radii;    // fractional
  double susceptibility = 0.0;    // QSM baseline
  double t1 = 0.5;                // T1w intensity
  bool pd_affected = false;       // SN and GP carry the PD effect
};

/// Ten bilateral deep grey matter nuclei; label k is nuclei[k-1].
std::vector<Nucleus> default_nuclei();

struct PhantomSpec {
  int size = 32;
  std::vector<Nucleus> nuclei = default_nuclei();
  std::array<double, 3> brain_radii{0.42, 0.46, 0.40};
  double brain_t1 = 0.75;

  /// PD: affected nuclei reach susceptibility * (1 + effect * j), j ~ the
  /// subject jitter factor max(0, 1 + effect_jitter * N(0,1)).
  double effect = 0.6;
  double effect_jitter = 0.2;
  /// Per-nucleus baseline spread, relative (both classes).
  double baseline_jitter = 0.1;
  /// Subject-wide multiplicative susceptibility scale spread (both classes).
  double scale_jitter = 0.15;
  /// Nucleus centre displacement, fraction of the volume (both classes).
  double anatomy_jitter = 0.01;
  double qsm_noise = 0.01;
  double t1_noise = 0.02;

  /// Throws ConfigError.
  void validate() const;
  /// Sets every jitter and noise level to zero.
  PhantomSpec& noiseless();
};

void to_json(nlohmann::json& j, const PhantomSpec& s);
void from_json(const nlohmann::json& j, PhantomSpec& s);

struct SubjectVolumes {
  Tensor qsm;  // (1,1,D,H,W)
  Tensor t1;
  Tensor roi;  // integer labels 0..K stored as Real
};

/// Deterministic per (spec, label, seed). Random draws do not depend on the
/// label, so an HC and a PD subject with the same seed differ only inside the
/// affected nuclei.
SubjectVolumes synth_subject(const PhantomSpec& spec, int label, std::uint64_t seed);

/// (1,K,D,H,W): channel k-1 is 1 where roi == k.
Tensor one_hot(const Tensor& roi, int k);

// ---- augmentation --------------------------------------------------------------

struct AugmentSpec {
  double affine_p = 0.2;
  double max_rotation_deg = 5.0;
  double max_translation = 2.0;  // voxels
  double min_scale = 0.9;
  double max_scale = 1.1;
  double bias_p = 0.1;
  double bias_coefficient = 0.3;
  int bias_order = 3;
  bool bias_t1_only = true;
  double noise_p = 0.1;
  double noise_sigma = 0.02;

  void validate() const;
  static AugmentSpec none();
};

void to_json(nlohmann::json& j, const AugmentSpec& s);
void from_json(const nlohmann::json& j, AugmentSpec& s);

struct Affine {
  std::array<double, 3> rotation_deg{0, 0, 0};  // about x, y, z, applied in that order
  std::array<double, 3> translation{0, 0, 0};   // voxels, (x, y, z)
  double scale = 1.0;
};

enum class Interp { nearest, trilinear };

/// out(p) = in(A^-1 (p - c - t) + c) with A = scale * R, c the volume
/// centre. Samples outside the input read 0.
Tensor affine_resample(const Tensor& vol, const Affine& a, Interp interp);

/// Smooth multiplicative field exp(sum c_ijk x^i y^j z^k), i+j+k <= order,
/// coefficients uniform in [-coefficient, coefficient], coordinates in [-1,1].
Tensor bias_field(const Shape& s, int order, double coefficient, Rng& rng);

/// One geometric transform for all three volumes (trilinear for QSM/T1w,
/// nearest for ROI), bias field on T1w, noise on QSM and T1w; each fires
/// independently with its probability.
SubjectVolumes augment(const SubjectVolumes& v, const AugmentSpec& aug, Rng& rng);

/// Centred crop or zero pad per axis; an odd difference puts the extra voxel
/// on the high side.
Tensor crop_or_pad(const Tensor& vol, int d, int h, int w);

// ---- GFNVOL1 files -----------------------------------------------------------------
//
// One JSON header line {"magic":"GFNVOL1","shape":[D,H,W],"voxel_size":[..],
// "dtype":"f32le","modality":"..."} + "\n" + D*H*W float32 little-endian.

struct VolumeHeader {
  std::array<int, 3> shape{0, 0, 0};
  std::array<double, 3> voxel_size{1, 1, 1};
  std::string modality;
};

void save_volume(const std::string& path, const Tensor& vol, const std::string& modality,
                 std::array<double, 3> voxel_size = {1, 1, 1});
Tensor load_volume(const std::string& path, VolumeHeader* header = nullptr);

// ---- datasets ------------------------------------------------------------------------

struct SubjectRecord {
  std::string id;
  int label = 0;  // 0 HC, 1 PD
  std::string qsm, t1w, roi;  // paths relative to the dataset directory
  std::string split;          // "test", "fold0".."fold4", or "train"
};

struct Manifest {
  std::string dir;
  std::vector<SubjectRecord> records;
};

/// Writes subjects/<id>_{qsm,t1w,roi}.gfnvol, manifest.csv and dataset.json
/// under dir. Classes are balanced (PD gets the extra subject when n is odd).
Manifest build_manifest(const PhantomSpec& spec, int n_subjects, std::uint64_t seed,
                        const std::string& dir, int folds = 5);

/// Reads dir/manifest.csv.
Manifest read_manifest(const std::string& dir);

/// Network-ready tensors of one subject.
struct Sample {
  std::string id;
  int label = 0;
  SubjectVolumes volumes;
};

Sample load_sample(const Manifest& m, const SubjectRecord& r);
std::vector<Sample> load_samples(const Manifest& m, const std::vector<int>& indices);

}  // namespace gfn::inline GFN_ABI
