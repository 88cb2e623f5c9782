#include "sigseg/model.hpp"

#include <cmath>

#include "sigseg/common.hpp"

namespace sigseg {

const char* to_string(Stage s) { return s == Stage::FCN ? "FCN" : "RL"; }

void ModelGraph::add(std::string name, Stage stage, Tensor value) {
  entries_.push_back({std::move(name), stage, std::move(value)});
}

Tensor& ModelGraph::find(const std::string& name) {
  for (auto& e : entries_)
    if (e.name == name) return e.value;
  throw ContractError("model graph: no parameter named " + name);
}

void ModelGraph::freeze_stage(Stage stage) {
  for (auto& e : entries_)
    if (e.stage == stage) e.value.set_requires_grad(false);
}

std::int64_t ModelGraph::parameter_count() const {
  std::int64_t total = 0;
  for (const auto& e : entries_) total += e.value.numel();
  return total;
}

std::uint32_t ModelGraph::stage_crc(Stage stage) const {
  std::uint32_t crc = 0;
  for (const auto& e : entries_) {
    if (e.stage != stage) continue;
    crc = crc32_ieee(reinterpret_cast<const unsigned char*>(e.value.ptr()),
                     static_cast<std::size_t>(e.value.numel()) * sizeof(float), crc);
  }
  return crc;
}

namespace {

// He-uniform: bound = sqrt(6 / fan_in), fan_in = Cin * kh * kw
Tensor he_uniform(Shape4 shape, int fan_in, Rng& rng) {
  Tensor t(shape, /*requires_grad=*/true);
  const float bound = std::sqrt(6.f / static_cast<float>(fan_in));
  for (auto& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

ConvLayer make_conv(int cin, int cout, int k, Rng& rng) {
  ConvLayer l;
  l.weight = he_uniform(Shape4{cout, cin, k, k}, cin * k * k, rng);
  l.bias = Tensor(Shape4{1, cout, 1, 1}, /*requires_grad=*/true);
  return l;
}

UpConvLayer make_upconv(int cin, int cout, Rng& rng) {
  UpConvLayer l;
  l.weight = he_uniform(Shape4{cin, cout, 2, 2}, cin * 4, rng);
  return l;
}

BatchNormLayer make_bn(int channels) {
  BatchNormLayer l;
  l.gamma = Tensor::full(Shape4{1, channels, 1, 1}, 1.f, /*requires_grad=*/true);
  l.beta = Tensor(Shape4{1, channels, 1, 1}, /*requires_grad=*/true);
  l.state = BatchNormState::init(channels);
  return l;
}

void validate_unet_cfg(const UNetConfig& cfg) {
  if (cfg.in_channels < 1 || cfg.base_channels < 1 || cfg.depth < 1 ||
      cfg.out_channels < 1)
    throw ConfigError("unet: all config fields must be >= 1");
}

void validate_rl_cfg(const RLConfig& cfg) {
  if (cfg.in_channels < 1 || cfg.hidden_channels < 1 || cfg.layers < 2)
    throw ConfigError("rl: needs in_channels/hidden_channels >= 1 and layers >= 2");
}

}  // namespace

UNet UNet::build(const UNetConfig& cfg, std::uint64_t seed) {
  validate_unet_cfg(cfg);
  UNet net;
  net.cfg_ = cfg;
  Rng rng(derive_seed(seed, 0x464E43u /* "FCN" */, 0));

  int ch = cfg.in_channels;
  int width = cfg.base_channels;
  for (int level = 0; level < cfg.depth; level++) {
    EncBlock b;
    b.conv1 = make_conv(ch, width, 3, rng);
    b.conv2 = make_conv(width, width, 3, rng);
    net.enc_.push_back(std::move(b));
    ch = width;
    width *= 2;
  }
  net.bottleneck1_ = make_conv(ch, width, 3, rng);
  net.bottleneck2_ = make_conv(width, width, 3, rng);
  ch = width;  // base * 2^depth

  for (int level = cfg.depth - 1; level >= 0; level--) {
    DecBlock b;
    const int skip = cfg.base_channels << level;
    b.up = make_upconv(ch, skip, rng);
    b.conv1 = make_conv(2 * skip, skip, 3, rng);
    b.conv2 = make_conv(skip, skip, 3, rng);
    net.dec_.push_back(std::move(b));
    ch = skip;
  }
  net.head_ = make_conv(cfg.base_channels, cfg.out_channels, 1, rng);
  return net;
}

Tensor UNet::forward(const Tensor& image, Tape* tape) const {
  const Shape4 s = image.shape();
  if (s.c != cfg_.in_channels)
    throw ShapeError("unet: expected " + std::to_string(cfg_.in_channels) +
                     " input channels, got " + std::to_string(s.c));
  const int div = 1 << cfg_.depth;
  if (s.h % div || s.w % div)
    throw ConfigError("unet: input extents " + std::to_string(s.h) + "x" +
                      std::to_string(s.w) + " must be divisible by 2^depth = " +
                      std::to_string(div));

  std::vector<Tensor> skips;
  Tensor x = image;
  for (const auto& b : enc_) {
    x = relu(conv2d(x, b.conv1.weight, b.conv1.bias, 1, 1, tape), tape);
    x = relu(conv2d(x, b.conv2.weight, b.conv2.bias, 1, 1, tape), tape);
    skips.push_back(x);
    x = max_pool2d(x, 2, 2, tape);
  }
  x = relu(conv2d(x, bottleneck1_.weight, bottleneck1_.bias, 1, 1, tape), tape);
  x = relu(conv2d(x, bottleneck2_.weight, bottleneck2_.bias, 1, 1, tape), tape);
  for (std::size_t i = 0; i < dec_.size(); i++) {
    const auto& b = dec_[i];
    x = upconv2d(x, b.up.weight, 2, tape);
    x = concat_channels(skips[skips.size() - 1 - i], x, tape);
    x = relu(conv2d(x, b.conv1.weight, b.conv1.bias, 1, 1, tape), tape);
    x = relu(conv2d(x, b.conv2.weight, b.conv2.bias, 1, 1, tape), tape);
  }
  x = conv2d(x, head_.weight, head_.bias, 1, 0, tape);
  return sigmoid(x, tape);
}

void UNet::collect(ModelGraph& graph) const {
  for (std::size_t i = 0; i < enc_.size(); i++) {
    const std::string p = "fcn.enc" + std::to_string(i) + ".";
    graph.add(p + "conv1.weight", Stage::FCN, enc_[i].conv1.weight);
    graph.add(p + "conv1.bias", Stage::FCN, enc_[i].conv1.bias);
    graph.add(p + "conv2.weight", Stage::FCN, enc_[i].conv2.weight);
    graph.add(p + "conv2.bias", Stage::FCN, enc_[i].conv2.bias);
  }
  graph.add("fcn.bottleneck.conv1.weight", Stage::FCN, bottleneck1_.weight);
  graph.add("fcn.bottleneck.conv1.bias", Stage::FCN, bottleneck1_.bias);
  graph.add("fcn.bottleneck.conv2.weight", Stage::FCN, bottleneck2_.weight);
  graph.add("fcn.bottleneck.conv2.bias", Stage::FCN, bottleneck2_.bias);
  for (std::size_t i = 0; i < dec_.size(); i++) {
    const std::string p = "fcn.dec" + std::to_string(i) + ".";
    graph.add(p + "up.weight", Stage::FCN, dec_[i].up.weight);
    graph.add(p + "conv1.weight", Stage::FCN, dec_[i].conv1.weight);
    graph.add(p + "conv1.bias", Stage::FCN, dec_[i].conv1.bias);
    graph.add(p + "conv2.weight", Stage::FCN, dec_[i].conv2.weight);
    graph.add(p + "conv2.bias", Stage::FCN, dec_[i].conv2.bias);
  }
  graph.add("fcn.head.weight", Stage::FCN, head_.weight);
  graph.add("fcn.head.bias", Stage::FCN, head_.bias);
}

RLNet RLNet::build(const RLConfig& cfg, const BatchNormConfig& bn,
                   std::uint64_t seed) {
  validate_rl_cfg(cfg);
  RLNet net;
  net.cfg_ = cfg;
  net.bn_ = bn;
  Rng rng(derive_seed(seed, 0x524Cu /* "RL" */, 0));
  int ch = cfg.in_channels;
  for (int i = 0; i < cfg.layers; i++) {
    const bool last = i == cfg.layers - 1;
    const int out = last ? 1 : cfg.hidden_channels;
    net.convs_.push_back(make_conv(ch, out, 3, rng));
    if (!last) net.bns_.push_back(make_bn(out));
    ch = out;
  }
  return net;
}

Tensor RLNet::forward(const Tensor& x, Tape* tape, BnMode mode) {
  if (x.shape().c != cfg_.in_channels)
    throw ShapeError("rl: expected " + std::to_string(cfg_.in_channels) +
                     " input channels, got " + std::to_string(x.shape().c));
  Tensor y = x;
  for (std::size_t i = 0; i < convs_.size(); i++) {
    const bool last = i + 1 == convs_.size();
    y = conv2d(y, convs_[i].weight, convs_[i].bias, 1, 1, tape);
    if (last) {
      y = sigmoid(y, tape);
    } else {
      y = relu(y, tape);
      y = batch_norm(y, bns_[i].gamma, bns_[i].beta, bns_[i].state, mode,
                     bn_.momentum, bn_.eps, tape);
    }
  }
  return y;
}

void RLNet::collect(ModelGraph& graph) const {
  for (std::size_t i = 0; i < convs_.size(); i++) {
    const std::string p = "rl.conv" + std::to_string(i + 1) + ".";
    graph.add(p + "weight", Stage::RL, convs_[i].weight);
    graph.add(p + "bias", Stage::RL, convs_[i].bias);
  }
  for (std::size_t i = 0; i < bns_.size(); i++) {
    const std::string p = "rl.bn" + std::to_string(i + 1) + ".";
    graph.add(p + "gamma", Stage::RL, bns_[i].gamma);
    graph.add(p + "beta", Stage::RL, bns_[i].beta);
  }
}

FullOutput forward_full(const UNet& fcn, RLNet& rl, const Tensor& image,
                        Tape* tape, BnMode mode) {
  Tensor coarse = fcn.forward(image, tape);
  Tensor refined = rl.forward(concat_channels(image, coarse, tape), tape, mode);
  return {coarse, refined};
}

Tensor binarize(const Tensor& prob, float threshold) {
  Tensor out(prob.shape());
  const float* p = prob.ptr();
  float* q = out.ptr();
  for (std::int64_t i = 0; i < prob.numel(); i++)
    q[i] = p[i] > threshold ? 1.f : 0.f;
  return out;
}

Tensor apply_mask(const Tensor& image, const Tensor& mask, float background) {
  const Shape4 si = image.shape(), sm = mask.shape();
  if (sm.c != 1 || si.n != sm.n || si.h != sm.h || si.w != sm.w)
    throw ShapeError("apply_mask: mask " + to_string(sm) +
                     " incompatible with image " + to_string(si));
  Tensor out(si);
  const std::int64_t plane = static_cast<std::int64_t>(si.h) * si.w;
  for (int n = 0; n < si.n; n++) {
    const float* m = mask.ptr() + static_cast<std::int64_t>(n) * plane;
    for (int c = 0; c < si.c; c++) {
      const float* src = image.ptr() + (static_cast<std::int64_t>(n) * si.c + c) * plane;
      float* dst = out.ptr() + (static_cast<std::int64_t>(n) * si.c + c) * plane;
      for (std::int64_t i = 0; i < plane; i++)
        dst[i] = m[i] == 1.f ? src[i] : background;
    }
  }
  return out;
}

}  // namespace sigseg
