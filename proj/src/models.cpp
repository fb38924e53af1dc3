#include "swiden/models.hpp"

#include <fstream>
#include <sstream>

#include "swiden/binio.hpp"

namespace swiden {

std::string to_string(Architecture a) {
  switch (a) {
    case Architecture::Baseline: return "baseline";
    case Architecture::Switch: return "switch";
    case Architecture::SwiDeN: return "swiden";
    case Architecture::Grn: return "grn";
  }
  return "?";
}

std::string to_string(SelectorMode m) { return m == SelectorMode::Oracle ? "oracle" : "predicted"; }

Architecture parse_architecture(const std::string& s) {
  if (s == "baseline") return Architecture::Baseline;
  if (s == "switch") return Architecture::Switch;
  if (s == "swiden") return Architecture::SwiDeN;
  if (s == "grn") return Architecture::Grn;
  throw ConfigError("unknown architecture \"" + s + "\" (expected baseline, switch, swiden or grn)");
}

SelectorMode parse_selector_mode(const std::string& s) {
  if (s == "oracle") return SelectorMode::Oracle;
  if (s == "predicted") return SelectorMode::Predicted;
  throw ConfigError("unknown selector mode \"" + s + "\" (expected oracle or predicted)");
}

std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// ---------------------------------------------------------------- specs

void MiniVggSpec::validate() const {
  if (stages.size() != 5) throw ConfigError("mini-VGG backbone needs exactly 5 conv stages");
  for (const auto& s : stages)
    if (s.num_convs == 0 || s.out_channels == 0) throw ConfigError("conv stage with zero convs or channels");
  if (fc_dim == 0 || in_channels == 0) throw ConfigError("fc_dim and in_channels must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must be in [0, 1)");
  if (final_spatial() < 1)
    throw ConfigError("input size " + std::to_string(input_size) + " collapses below 1x1 after 5 pools");
}

std::size_t MiniVggSpec::final_spatial() const {
  std::size_t s = input_size;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    if (s < 2) return 0;
    s = (s - 2) / 2 + 1;
  }
  return s;
}

std::string MiniVggSpec::canonical() const {
  std::ostringstream os;
  os << "stages=";
  for (std::size_t i = 0; i < stages.size(); ++i)
    os << (i ? "," : "") << stages[i].num_convs << 'x' << stages[i].out_channels;
  os << "\nfc_dim=" << fc_dim << "\nin_channels=" << in_channels << "\ninput_size=" << input_size << '\n';
  return os.str();
}

void SwitchNetSpec::validate() const {
  if (conv1_channels == 0 || conv1_kernel == 0 || conv1_stride == 0 || conv2_channels == 0 || fc_dim == 0)
    throw ConfigError("switch net sizes must be >= 1");
  if (num_styles < 2) throw ConfigError("switch net needs at least 2 styles");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must be in [0, 1)");
}

std::string SwitchNetSpec::canonical() const {
  std::ostringstream os;
  os << "arch=switch\nconv1=" << conv1_channels << 'k' << conv1_kernel << 's' << conv1_stride
     << "\nconv2=" << conv2_channels << "\nfc_dim=" << fc_dim << "\nnum_styles=" << num_styles
     << "\nin_channels=" << in_channels << '\n';
  return os.str();
}

void SwiDeNSpec::validate() const {
  backbone.validate();
  if (k < 1 || k > 5) throw ConfigError("SwiDeN branch depth k must be in [1, 5]");
  if (num_styles < 1) throw ConfigError("num_styles must be >= 1");
  if (num_classes < 1) throw ConfigError("num_classes must be >= 1");
  if (!(art_lr_scale > 0.0)) throw ConfigError("art_lr_scale must be > 0");
  if (selector == SelectorMode::Predicted && num_styles > 1 && !switch_checkpoint)
    throw ConfigError("predicted selector mode requires a Switch checkpoint");
}

void GrnSpec::validate() const {
  backbone.validate();
  if (!(lambda >= 0.0)) throw ConfigError("GRN lambda must be >= 0");
  if (num_classes < 1 || num_styles < 1) throw ConfigError("num_classes and num_styles must be >= 1");
}

// ---------------------------------------------------------------- builders

namespace {

/// `first` marks the stage that reads the network input.
std::size_t add_stage(Sequential& seq, std::size_t in_ch, const ConvStage& stage, Rng& init, bool first = false) {
  for (std::size_t i = 0; i < stage.num_convs; ++i) {
    auto& conv = seq.emplace<Conv2d>(in_ch, stage.out_channels, 3, 1, 1, init);
    if (first && i == 0) conv.set_input_grad(false);
    seq.emplace<Relu>();
    in_ch = stage.out_channels;
  }
  seq.emplace<MaxPool2d>(2, 2);
  return in_ch;
}

/// Flatten + two FC-ReLU-Dropout blocks.
void add_fc_trunk(Sequential& seq, std::size_t in_dim, std::size_t fc_dim, double p, Rng& init) {
  seq.emplace<Flatten>();
  seq.emplace<Linear>(in_dim, fc_dim, init);
  seq.emplace<Relu>();
  seq.emplace<Dropout>(p);
  seq.emplace<Linear>(fc_dim, fc_dim, init);
  seq.emplace<Relu>();
  seq.emplace<Dropout>(p);
}

/// Label classifier; Rng draws are the same whether or not the weights are zeroed.
void add_classifier(Sequential& seq, std::size_t in_dim, std::size_t out_dim, bool zero, Rng& init) {
  auto& fc = seq.emplace<Linear>(in_dim, out_dim, init);
  if (zero) fc.weight().value.fill(0.0);
}

std::size_t channels_after(const MiniVggSpec& b, std::size_t k) {
  return k == 0 ? b.in_channels : b.stages[k - 1].out_channels;
}

std::size_t flat_dim(const MiniVggSpec& b) {
  const std::size_t s = b.final_spatial();
  return b.stages.back().out_channels * s * s;
}

}  // namespace

Network build_baseline(const MiniVggSpec& backbone, std::size_t num_classes, std::uint64_t seed) {
  backbone.validate();
  if (num_classes < 1) throw ConfigError("num_classes must be >= 1");
  Rng init(seed);
  Network net;
  net.arch_ = Architecture::Baseline;
  net.num_outputs_ = num_classes;
  net.spec_text_ = "arch=baseline\n" + backbone.canonical() + "num_classes=" + std::to_string(num_classes) + "\n";
  net.body_ = std::make_unique<Sequential>();
  std::size_t ch = backbone.in_channels;
  for (std::size_t i = 0; i < backbone.stages.size(); ++i)
    ch = add_stage(*net.body_, ch, backbone.stages[i], init, i == 0);
  add_fc_trunk(*net.body_, flat_dim(backbone), backbone.fc_dim, backbone.dropout, init);
  add_classifier(*net.body_, backbone.fc_dim, num_classes, backbone.zero_classifier, init);
  return net;
}

Network build_switch_net(const SwitchNetSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng init(seed);
  Network net;
  net.arch_ = Architecture::Switch;
  net.num_outputs_ = spec.num_styles;
  net.num_styles_ = spec.num_styles;
  net.spec_text_ = spec.canonical();
  auto& s = *(net.body_ = std::make_unique<Sequential>());
  s.emplace<Conv2d>(spec.in_channels, spec.conv1_channels, spec.conv1_kernel, spec.conv1_stride,
                    spec.conv1_kernel / 2, init)
      .set_input_grad(false);
  s.emplace<Relu>();
  s.emplace<MaxPool2d>(2, 2);
  s.emplace<Conv2d>(spec.conv1_channels, spec.conv2_channels, 3, 1, 1, init);
  s.emplace<Relu>();
  s.emplace<GlobalAvgPool>();
  s.emplace<Linear>(spec.conv2_channels, spec.fc_dim, init);
  s.emplace<Relu>();
  s.emplace<Dropout>(spec.dropout);
  s.emplace<Linear>(spec.fc_dim, spec.fc_dim, init);
  s.emplace<Relu>();
  s.emplace<Dropout>(spec.dropout);
  s.emplace<Linear>(spec.fc_dim, spec.num_styles, init);
  return net;
}

Network build_swiden(const SwiDeNSpec& spec, std::uint64_t seed) {
  spec.validate();
  const auto& bb = spec.backbone;
  Rng init(seed);
  Network net;
  net.arch_ = Architecture::SwiDeN;
  net.num_outputs_ = spec.num_classes;
  net.num_styles_ = spec.num_styles;
  net.spec_text_ = "arch=swiden\n" + bb.canonical() + "num_classes=" + std::to_string(spec.num_classes) +
                   "\nnum_styles=" + std::to_string(spec.num_styles) + "\nk=" + std::to_string(spec.k) + "\n";

  const Rng branch_start = init;
  std::vector<std::unique_ptr<Sequential>> branches;
  for (std::size_t b = 0; b < spec.num_styles; ++b) {
    init = branch_start;
    auto br = std::make_unique<Sequential>();
    std::size_t ch = bb.in_channels;
    for (std::size_t i = 0; i < spec.k; ++i) ch = add_stage(*br, ch, bb.stages[i], init, i == 0);
    if (b == spec.art_style)
      for (Param* p : br->params()) p->lr_scale = spec.art_lr_scale;
    branches.push_back(std::move(br));
  }

  net.body_ = std::make_unique<Sequential>();
  net.router_ = &net.body_->emplace<Router>(std::move(branches));
  std::size_t ch = channels_after(bb, spec.k);
  for (std::size_t i = spec.k; i < bb.stages.size(); ++i) ch = add_stage(*net.body_, ch, bb.stages[i], init);
  add_fc_trunk(*net.body_, flat_dim(bb), bb.fc_dim, bb.dropout, init);
  add_classifier(*net.body_, bb.fc_dim, spec.num_classes, bb.zero_classifier, init);

  net.selector_mode_ = spec.selector;
  if (spec.selector == SelectorMode::Predicted && spec.num_styles > 1) {
    auto sel = std::make_unique<Network>(build_switch_net(spec.switch_spec, 0));
    if (sel->num_outputs() != spec.num_styles)
      throw ConfigError("Switch predicts " + std::to_string(sel->num_outputs()) + " styles but SwiDeN has " +
                        std::to_string(spec.num_styles) + " branches");
    checkpoint_load(*sel, *spec.switch_checkpoint);
    net.selector_ = std::move(sel);
  }
  return net;
}

Network build_grn(const GrnSpec& spec, std::uint64_t seed) {
  spec.validate();
  const auto& bb = spec.backbone;
  Rng init(seed);
  Network net;
  net.arch_ = Architecture::Grn;
  net.num_outputs_ = spec.num_classes;
  net.num_styles_ = spec.num_styles;
  net.spec_text_ = "arch=grn\n" + bb.canonical() + "num_classes=" + std::to_string(spec.num_classes) +
                   "\nnum_styles=" + std::to_string(spec.num_styles) + "\n";
  net.body_ = std::make_unique<Sequential>();
  std::size_t ch = bb.in_channels;
  for (std::size_t i = 0; i < bb.stages.size(); ++i) ch = add_stage(*net.body_, ch, bb.stages[i], init, i == 0);
  add_fc_trunk(*net.body_, flat_dim(bb), bb.fc_dim, bb.dropout, init);

  net.label_head_ = std::make_unique<Sequential>();
  add_classifier(*net.label_head_, bb.fc_dim, spec.num_classes, bb.zero_classifier, init);

  net.domain_head_ = std::make_unique<Sequential>();
  net.domain_head_->emplace<GradientReversal>(spec.lambda);
  net.domain_head_->emplace<Linear>(bb.fc_dim, bb.fc_dim, init);
  net.domain_head_->emplace<Relu>();
  net.domain_head_->emplace<Linear>(bb.fc_dim, spec.num_styles, init);
  net.domain_attached_ = spec.attach_domain_head;
  return net;
}

std::size_t stage_parameter_count(const MiniVggSpec& backbone, std::size_t k) {
  std::size_t total = 0;
  std::size_t in = backbone.in_channels;
  for (std::size_t i = 0; i < k && i < backbone.stages.size(); ++i)
    for (std::size_t c = 0; c < backbone.stages[i].num_convs; ++c) {
      const std::size_t out = backbone.stages[i].out_channels;
      total += out * in * 9 + out;
      in = out;
    }
  return total;
}

// ---------------------------------------------------------------- Network

std::uint64_t Network::spec_hash() const { return fnv1a64(spec_text_); }

void Network::set_selector_mode(SelectorMode m) {
  if (m == SelectorMode::Predicted && router_ && router_->num_branches() > 1 && !selector_)
    throw ConfigError("predicted selector mode requires a loaded Switch");
  selector_mode_ = m;
}

std::vector<std::size_t> Network::select_routes(const Tensor& x, std::span<const std::size_t> styles) {
  const std::size_t n = x.dim(0);
  if (!router_ || router_->num_branches() == 1) return std::vector<std::size_t>(n, 0);
  if (selector_mode_ == SelectorMode::Predicted) {
    Rng unused(0);
    const Tensor logits = selector_->forward(x, {}, Mode::Eval, unused).logits;
    return argmax(logits, 1);
  }
  if (styles.size() != n)
    throw RoutingError("oracle routing needs one style label per sample (" + std::to_string(styles.size()) +
                       " for " + std::to_string(n) + ")");
  return {styles.begin(), styles.end()};
}

NetworkOutput Network::forward(const Tensor& x, std::span<const std::size_t> styles, Mode mode, Rng& rng) {
  if (router_) router_->set_routes(select_routes(x, styles));
  Tensor h = body_->forward(x, mode, rng);
  if (arch_ != Architecture::Grn) {
    has_domain_output_ = false;
    return {std::move(h), std::nullopt};
  }
  Tensor logits = label_head_->forward(h, mode, rng);
  Tensor domain = domain_head_->forward(h, mode, rng);
  has_domain_output_ = true;
  return {std::move(logits), std::move(domain)};
}

void Network::backward(const Tensor& grad_logits, const Tensor* grad_domain) {
  if (arch_ != Architecture::Grn) {
    body_->backward(grad_logits);
    return;
  }
  Tensor g = label_head_->backward(grad_logits);
  if (domain_attached_) {
    if (!grad_domain || !has_domain_output_) throw Error("GRN backward needs the domain-head gradient");
    add_inplace(g, domain_head_->backward(*grad_domain));
  }
  body_->backward(g);
}

StepResult Network::train_step(const Tensor& x, std::span<const std::size_t> labels,
                               std::span<const std::size_t> styles, Rng& rng) {
  auto out = forward(x, styles, Mode::Train, rng);
  auto targets = predicts_style() ? styles : labels;
  auto label = softmax_xent(out.logits, targets);
  if (arch_ == Architecture::Grn && domain_attached_) {
    auto domain = softmax_xent(*out.domain_logits, styles);
    backward(label.grad, &domain.grad);
    return {label.loss + domain.loss, label.loss, domain.loss};
  }
  backward(label.grad);
  return {label.loss, label.loss, 0.0};
}

Tensor Network::predict_proba(const Tensor& x, std::span<const std::size_t> styles) {
  Rng unused(0);
  return softmax(forward(x, styles, Mode::Eval, unused).logits);
}

std::vector<NamedParam> Network::named_params() {
  std::vector<NamedParam> out;
  body_->collect_params("body.", out);
  if (label_head_) label_head_->collect_params("label_head.", out);
  if (domain_head_) domain_head_->collect_params("domain_head.", out);
  return out;
}

std::vector<Param*> Network::params() {
  std::vector<Param*> out;
  for (auto& np : named_params()) out.push_back(np.param);
  return out;
}

std::size_t Network::parameter_count() {
  std::size_t n = 0;
  for (Param* p : params()) n += p->value.size();
  return n;
}

void Network::zero_grad() {
  for (Param* p : params()) p->zero_grad();
}

std::vector<Tensor> Network::snapshot() {
  std::vector<Tensor> out;
  for (Param* p : params()) out.push_back(p->value);
  return out;
}

void Network::restore(const std::vector<Tensor>& values) {
  auto ps = params();
  if (ps.size() != values.size()) throw CheckpointError("snapshot parameter count mismatch");
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (ps[i]->value.shape() != values[i].shape()) throw CheckpointError("snapshot shape mismatch");
    ps[i]->value = values[i];
  }
}

// ---------------------------------------------------------------- checkpoints

void checkpoint_save(Network& net, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError("cannot open " + path.string() + " for writing");
  auto named = net.named_params();
  binio::put_magic(os, "SWCK");
  binio::put<std::uint8_t>(os, kCheckpointVersion);
  binio::put<std::uint64_t>(os, net.spec_hash());
  binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(named.size()));
  for (auto& np : named) {
    binio::put_string16(os, np.name);
    write_tensor(os, np.param->value);
  }
  if (!os) throw CheckpointError("failed writing " + path.string());
}

void checkpoint_load(Network& net, const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint " + path.string());
  binio::expect_magic(is, "SWCK");
  const auto version = binio::get<std::uint8_t>(is);
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const auto hash = binio::get<std::uint64_t>(is);
  if (hash != net.spec_hash())
    throw CheckpointError("checkpoint " + path.string() + " was written for a different network spec");
  auto named = net.named_params();
  const auto count = binio::get<std::uint32_t>(is);
  if (count != named.size())
    throw CheckpointError("checkpoint has " + std::to_string(count) + " params, network has " +
                          std::to_string(named.size()));
  std::vector<Tensor> values;
  values.reserve(count);
  for (auto& np : named) {
    const auto name = binio::get_string16(is);
    if (name != np.name) throw CheckpointError("checkpoint param \"" + name + "\" where \"" + np.name + "\" expected");
    Tensor t = read_tensor(is);
    if (t.shape() != np.param->value.shape())
      throw CheckpointError("shape mismatch for " + name + ": " + to_string(t.shape()) + " vs " +
                            to_string(np.param->value.shape()));
    values.push_back(std::move(t));
  }
  for (std::size_t i = 0; i < named.size(); ++i) named[i].param->value = std::move(values[i]);
}

}  // namespace swiden
