#pragma once

// GateFuseNet: three modality streams (ROI one-hot, QSM, T1w), a Stem per
// stream, a gated-fusion block after the stems and after every Fusion Module,
// and a decision head on the anchor stream.
//
//   stems -> GF -> [bottleneck x3 branches -> GF] x stages -> head -> logit
//
// GF = adaptive multimodal fusion (per-voxel, per-channel attention over the
// three streams, normalised to a convex combination) followed by a learnable
// per-channel sigmoid gate and a residual add into the anchor stream. The two
// other streams pass through GF unchanged.

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gfn/ops.hpp"
#include "json.hpp"

namespace gfn::inline GFN_ABI {

enum class Modality { roi = 0, qsm = 1, t1 = 2 };
inline constexpr std::array<Modality, 3> kModalities{Modality::roi, Modality::qsm,
                                                     Modality::t1};

enum class FusionStrategy { gated, concat, weighted_average, none };

std::string to_string(Modality m);        // "ROI", "QSM", "T1"
std::string to_string(FusionStrategy s);  // "gated", ...
Modality parse_modality(const std::string& s);
FusionStrategy parse_fusion(const std::string& s);

struct NetworkConfig {
  int roi_channels = 10;  // one-hot nuclei labels
  int qsm_channels = 1;
  int t1_channels = 1;
  int stem_width = 16;
  std::vector<int> stage_widths{32, 64, 64};  // one Fusion Module per entry
  int attention_groups = 1;
  double amf_eps = 1e-6;
  int cbam_reduction = 8;
  int cbam_spatial_kernel = 3;
  int bottleneck_groups = 4;
  std::vector<int> decision_dilations{1, 2, 4};
  FusionStrategy fusion = FusionStrategy::gated;
  Modality anchor = Modality::roi;
  double gate_init = 0.0;

  /// Throws ConfigError naming the offending field.
  void validate() const;
  int input_channels(Modality m) const;
  int final_width() const { return stage_widths.back(); }

  /// "a/b/c/...": stem width a, then one Fusion Module per following width.
  void set_widths(const std::string& spec);
  std::string widths_string() const;
};

void to_json(nlohmann::json& j, const NetworkConfig& c);
/// Missing keys keep their defaults; unknown keys are a ConfigError.
void from_json(const nlohmann::json& j, NetworkConfig& c);

/// One Var per modality stream.
struct Triple {
  std::array<Var, 3> v;
  Var& operator[](Modality m) { return v[static_cast<int>(m)]; }
  Var operator[](Modality m) const { return v[static_cast<int>(m)]; }
};

using ParamList = std::vector<Parameter*>;
/// Non-learnable persistent tensors (batch-norm running statistics).
using BufferList = std::vector<std::pair<std::string, Tensor*>>;

struct Conv {
  Parameter weight;
  std::optional<Parameter> bias;
  ConvSpec spec;

  Conv() = default;
  Conv(const std::string& name, int in, int out, int kernel, bool with_bias,
       int stride = 1, int dilation = 1, int groups = 1);
  Var operator()(Tape& t, Var x);
  void collect(ParamList& out);
  int fan_in() const;
};

struct Linear {
  Parameter weight;  // (out, in, 1, 1, 1)
  Parameter bias;    // (1, out, 1, 1, 1)

  Linear() = default;
  Linear(const std::string& name, int in, int out);
  Var operator()(Tape& t, Var x);
  void collect(ParamList& out);
};

/// Three shape-preserving 3^3 convs, each followed by ELU, then 2^3 maxpool.
struct Stem {
  std::array<Conv, 3> convs;

  Stem() = default;
  Stem(const std::string& name, int in, int width);
  Var operator()(Tape& t, Var x);
  void collect(ParamList& out);
};

struct CBAM {
  Linear mlp_in;   // C -> C/r, ReLU
  Linear mlp_out;  // C/r -> C
  Conv spatial;    // 2 -> 1 over (channel mean, channel max)

  struct Trace {
    Var channel_attention;  // (n, C, 1, 1, 1)
    Var spatial_attention;  // (n, 1, d, h, w)
  };

  CBAM() = default;
  CBAM(const std::string& name, int channels, int reduction, int spatial_kernel);
  Var operator()(Tape& t, Var x, Trace* trace = nullptr);
  void collect(ParamList& out);
};

/// 1^3 reduce -> ELU -> grouped 3^3 (stride, dilation) -> ELU -> 1^3 expand
/// -> CBAM -> + residual (strided 1^3 projection when the shape changes)
/// -> ELU.
struct Bottleneck {
  Conv reduce;
  Conv grouped;
  Conv expand;
  CBAM cbam;
  std::optional<Conv> projection;

  Bottleneck() = default;
  Bottleneck(const std::string& name, int in, int out, int stride, int dilation,
             const NetworkConfig& cfg);
  Var operator()(Tape& t, Var x);
  void collect(ParamList& out);
};

struct AMF {
  struct Head {
    Conv conv;  // 3C -> C, no bias
    BatchNormState bn;
  };
  std::array<Head, 3> heads;  // indexed by Modality
  double eps = 1e-6;

  struct Trace {
    std::array<Var, 3> alpha;       // sigmoid outputs
    std::array<Var, 3> normalized;  // alpha / (sum alpha + eps)
  };
  /// Added to each head's pre-sigmoid logits (testing hook).
  using LogitOffsets = std::array<double, 3>;

  AMF() = default;
  AMF(const std::string& name, int channels, const NetworkConfig& cfg);
  Var operator()(Tape& t, const Triple& x, Trace* trace = nullptr,
                 const LogitOffsets* offsets = nullptr);
  void collect(ParamList& out);
  void collect_buffers(BufferList& out);
  void set_mode(NormMode mode);
};

/// anchor + sigmoid(theta) * fused, theta per channel.
struct ChannelGate {
  Parameter theta;  // (1, C, 1, 1, 1)

  ChannelGate() = default;
  ChannelGate(const std::string& name, int channels, double init);
  Var operator()(Tape& t, Var fused, Var anchor);
  void collect(ParamList& out);
};

struct GFBlock {
  FusionStrategy strategy = FusionStrategy::gated;
  Modality anchor = Modality::roi;
  AMF amf;                   // gated
  ChannelGate gate;          // gated
  Conv mix;                  // concat: 1^3 conv 3C -> C
  Parameter modality_logits; // weighted_average: (1, 3, 1, 1, 1)

  struct Trace {
    AMF::Trace amf;
    Var fused;
  };

  GFBlock() = default;
  GFBlock(const std::string& name, int channels, const NetworkConfig& cfg);
  Triple operator()(Tape& t, const Triple& x, Trace* trace = nullptr,
                    const AMF::LogitOffsets* offsets = nullptr);
  void collect(ParamList& out);
  void collect_buffers(BufferList& out);
  void set_mode(NormMode mode);
};

struct FusionModule {
  std::array<Bottleneck, 3> branches;  // first bottleneck of the stage, stride 2
  GFBlock gf;

  FusionModule() = default;
  FusionModule(const std::string& name, int in, int out, const NetworkConfig& cfg);
  void collect(ParamList& out);
};

struct ForwardTrace {
  /// Triple after the initial GF block (index 0) and after each Fusion
  /// Module (index 1..stages).
  std::vector<Triple> stages;
  std::vector<GFBlock::Trace> gf;
  Var pooled;
};

struct ForwardHooks {
  /// Applied to every AMF in the network.
  std::optional<AMF::LogitOffsets> amf_logit_offsets;
};

class GateFuseNet {
 public:
  explicit GateFuseNet(NetworkConfig cfg);
  GateFuseNet(const GateFuseNet&) = delete;
  GateFuseNet& operator=(const GateFuseNet&) = delete;

  const NetworkConfig& config() const { return cfg_; }

  /// inputs: (n, K, D, H, W) ROI one-hot, (n, 1, D, H, W) QSM and T1.
  /// Returns logits (n, 1, 1, 1, 1).
  Var forward(Tape& t, const Triple& inputs, ForwardTrace* trace = nullptr,
              const ForwardHooks* hooks = nullptr);

  /// Every learnable parameter, in a fixed order.
  ParamList parameters();
  BufferList buffers();
  Parameter* find_parameter(const std::string& name);

  void set_mode(NormMode mode);
  NormMode mode() const { return mode_; }

  /// Fan-in scaled uniform weights (variance 1/fan_in), zero biases, unit
  /// BN scale, zero BN shift, gates at gate_init. Deterministic per seed.
  void init_params(std::uint64_t seed);

  std::array<Stem, 3> stems;
  GFBlock stem_gf;
  std::vector<FusionModule> stages;
  std::vector<Bottleneck> head;  // one per decision dilation
  Linear fc;

 private:
  NetworkConfig cfg_;
  NormMode mode_ = NormMode::train;
};

/// Spatial shape of the anchor stream after stage `stage` (0 = stems) for a
/// cubic input of side `size`.
int feature_size(const NetworkConfig& cfg, int size, int stage);

// ---- GFN1 checkpoints --------------------------------------------------------
//
// "GFN1\n" + one-line JSON header + "\n" + float32 little-endian payload.
// Header: {"config": {...}, "tensors": [{"name", "kind", "shape", "offset"}],
// "payload_bytes": N, "meta": {...}}; offsets are bytes into the payload.

void save_checkpoint(const std::string& path, GateFuseNet& net,
                     const nlohmann::json& meta = nlohmann::json::object());

struct CheckpointHeader {
  NetworkConfig config;
  nlohmann::json meta;
  nlohmann::json raw;
};

CheckpointHeader read_checkpoint_header(const std::string& path);

/// Loads tensors into an existing network; names and shapes must match.
void load_checkpoint_into(const std::string& path, GateFuseNet& net);

/// Builds the network from the stored config and loads its tensors.
std::unique_ptr<GateFuseNet> load_checkpoint(const std::string& path);

}  // namespace gfn::inline GFN_ABI
