#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "swiden/layers.hpp"

namespace swiden {

enum class Architecture { Baseline, Switch, SwiDeN, Grn };
enum class SelectorMode { Oracle, Predicted };

std::string to_string(Architecture a);
std::string to_string(SelectorMode m);
Architecture parse_architecture(const std::string& s);
SelectorMode parse_selector_mode(const std::string& s);

struct ConvStage {
  std::size_t num_convs;
  std::size_t out_channels;
};

/// Scaled-down VGG: five stages of 3x3/pad-1 convs (each followed by ReLU)
/// closed by a 2x2/stride-2 max pool, then FC(fc_dim)-ReLU-Dropout twice and
/// a linear classifier.
struct MiniVggSpec {
  std::vector<ConvStage> stages{{1, 8}, {1, 16}, {2, 32}, {2, 64}, {2, 64}};
  std::size_t fc_dim = 128;
  std::size_t in_channels = 3;
  std::size_t input_size = 64;
  double dropout = 0.5;
  /// Zero the label classifier weights after drawing them. Not part of the
  /// canonical spec since it only affects initialization.
  bool zero_classifier = true;

  /// Throws ConfigError unless there are exactly five stages and the feature
  /// map after the last pool is at least 1x1.
  void validate() const;
  std::size_t final_spatial() const;
  std::string canonical() const;
};

/// Style classifier: conv1 -> ReLU -> maxpool 2x2, conv2 (3x3, pad 1) -> ReLU
/// -> global average pool, FC-ReLU-Dropout twice, classifier of width num_styles.
struct SwitchNetSpec {
  std::size_t conv1_channels = 16;
  std::size_t conv1_kernel = 5;
  std::size_t conv1_stride = 2;
  std::size_t conv2_channels = 32;
  std::size_t fc_dim = 64;
  std::size_t num_styles = 2;
  std::size_t in_channels = 3;
  double dropout = 0.5;

  void validate() const;
  std::string canonical() const;
};

struct SwiDeNSpec {
  std::size_t k = 4;
  std::size_t num_styles = 2;
  std::size_t num_classes = 10;
  MiniVggSpec backbone;
  SelectorMode selector = SelectorMode::Predicted;
  std::optional<std::filesystem::path> switch_checkpoint;
  SwitchNetSpec switch_spec;
  /// Branch whose parameters get art_lr_scale (Art is style 1 by convention).
  std::size_t art_style = 1;
  double art_lr_scale = 4.0;

  void validate() const;
};

struct GrnSpec {
  MiniVggSpec backbone;
  std::size_t num_classes = 10;
  std::size_t num_styles = 2;
  double lambda = 2.0;
  /// When false the domain head still runs forward but contributes neither
  /// loss nor gradient.
  bool attach_domain_head = true;

  void validate() const;
};

struct NetworkOutput {
  Tensor logits;                        // class logits (style logits for the Switch)
  std::optional<Tensor> domain_logits;  // GRN only
};

struct StepResult {
  double loss;
  double label_loss;
  double domain_loss;
};

class Network {
 public:
  Network(const Network&) = delete;
  Network& operator=(const Network&) = delete;
  Network(Network&&) = default;
  Network& operator=(Network&&) = default;

  Architecture architecture() const { return arch_; }
  /// Canonical text of the structural spec; its FNV-1a hash identifies checkpoints.
  const std::string& canonical_spec() const { return spec_text_; }
  std::uint64_t spec_hash() const;
  std::size_t num_outputs() const { return num_outputs_; }
  std::size_t num_styles() const { return num_styles_; }
  /// True when the training target is the style label (the Switch).
  bool predicts_style() const { return arch_ == Architecture::Switch; }

  /// Branch index per sample: ground-truth styles (oracle) or the frozen
  /// Switch's argmax (predicted). Single-branch networks route everything to 0.
  std::vector<std::size_t> select_routes(const Tensor& x, std::span<const std::size_t> styles);

  NetworkOutput forward(const Tensor& x, std::span<const std::size_t> styles, Mode mode, Rng& rng);
  /// `grad_domain` is required iff the last forward produced domain logits
  /// and the domain head is attached.
  void backward(const Tensor& grad_logits, const Tensor* grad_domain = nullptr);

  /// forward (Train) + softmax cross-entropy + backward. Targets are class
  /// labels, or styles for the Switch; GRN adds the domain loss on styles.
  StepResult train_step(const Tensor& x, std::span<const std::size_t> labels,
                        std::span<const std::size_t> styles, Rng& rng);

  /// Class (or style) probabilities in Eval mode.
  Tensor predict_proba(const Tensor& x, std::span<const std::size_t> styles);

  std::vector<NamedParam> named_params();
  std::vector<Param*> params();
  std::size_t parameter_count();
  void zero_grad();

  std::vector<Tensor> snapshot() ;
  void restore(const std::vector<Tensor>& values);

  Router* router() { return router_; }
  Sequential& body() { return *body_; }
  Sequential* label_head() { return label_head_.get(); }
  Sequential* domain_head() { return domain_head_.get(); }
  Network* selector() { return selector_.get(); }
  SelectorMode selector_mode() const { return selector_mode_; }
  void set_selector_mode(SelectorMode m);

 private:
  Network() = default;

  friend Network build_baseline(const MiniVggSpec&, std::size_t, std::uint64_t);
  friend Network build_switch_net(const SwitchNetSpec&, std::uint64_t);
  friend Network build_swiden(const SwiDeNSpec&, std::uint64_t);
  friend Network build_grn(const GrnSpec&, std::uint64_t);

  Architecture arch_ = Architecture::Baseline;
  std::string spec_text_;
  std::size_t num_outputs_ = 0;
  std::size_t num_styles_ = 1;
  std::unique_ptr<Sequential> body_;
  Router* router_ = nullptr;
  std::unique_ptr<Sequential> label_head_;
  std::unique_ptr<Sequential> domain_head_;
  bool domain_attached_ = false;
  std::unique_ptr<Network> selector_;
  SelectorMode selector_mode_ = SelectorMode::Oracle;
  bool has_domain_output_ = false;
};

/// Initialization draws He-normal weights from Rng(seed) in layer order, so
/// identical seeds give bit-identical parameters.
Network build_baseline(const MiniVggSpec& backbone, std::size_t num_classes, std::uint64_t seed);
Network build_switch_net(const SwitchNetSpec& spec, std::uint64_t seed);
/// The first k stages are built once per style from the same Rng state, so
/// every branch starts identical; shared layers then see the same Rng state as
/// in build_baseline. Throws ConfigError in predicted mode without a Switch
/// checkpoint.
Network build_swiden(const SwiDeNSpec& spec, std::uint64_t seed);
Network build_grn(const GrnSpec& spec, std::uint64_t seed);

/// Scalar parameter count of the first `k` stages of a backbone.
std::size_t stage_parameter_count(const MiniVggSpec& backbone, std::size_t k);

std::uint64_t fnv1a64(std::string_view text);

// Checkpoint: "SWCK", version u8 (=1), spec hash u64 LE, param count u32 LE,
// then per param: name (u16 length + bytes) and the tensor in SWTN format.
inline constexpr std::uint8_t kCheckpointVersion = 1;
void checkpoint_save(Network& net, const std::filesystem::path& path);
/// Throws FormatError on bad magic, CheckpointError on spec/shape mismatch.
/// Parameters are untouched unless the whole file validates.
void checkpoint_load(Network& net, const std::filesystem::path& path);

}  // namespace swiden
