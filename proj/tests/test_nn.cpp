#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "sigseg/common.hpp"
#include "sigseg/model.hpp"
#include "sigseg/optim.hpp"

using namespace sigseg;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* name) {
  const fs::path p = fs::temp_directory_path() / "sigseg_tests" / name;
  fs::create_directories(p);
  return p;
}

bool same_bytes(const Tensor& a, const Tensor& b) {
  return a.numel() == b.numel() &&
         std::memcmp(a.ptr(), b.ptr(),
                     static_cast<std::size_t>(a.numel()) * sizeof(float)) == 0;
}

// parameter count computed independently from the layer listing
std::int64_t expected_unet_params(const UNetConfig& c) {
  auto conv = [](std::int64_t cin, std::int64_t cout, std::int64_t k) {
    return cout * cin * k * k + cout;
  };
  std::int64_t total = 0;
  std::int64_t ch = c.in_channels, width = c.base_channels;
  for (int level = 0; level < c.depth; level++) {
    total += conv(ch, width, 3) + conv(width, width, 3);
    ch = width;
    width *= 2;
  }
  total += conv(ch, width, 3) + conv(width, width, 3);
  ch = width;
  for (int level = c.depth - 1; level >= 0; level--) {
    const std::int64_t skip = static_cast<std::int64_t>(c.base_channels) << level;
    total += ch * skip * 4;  // upconv, no bias
    total += conv(2 * skip, skip, 3) + conv(skip, skip, 3);
    ch = skip;
  }
  total += conv(c.base_channels, c.out_channels, 1);
  return total;
}

}  // namespace

TEST_CASE("unet parameter count matches the closed-form layer listing") {
  const UNetConfig tiny{1, 2, 1, 1};
  UNet net = UNet::build(tiny, 3);
  ModelGraph g;
  net.collect(g);
  // by hand: enc 20+38, bottleneck 76+148, upconv 32, dec 74+38, head 3
  CHECK(g.parameter_count() == expected_unet_params(tiny));
  CHECK(g.parameter_count() == 429);

  const UNetConfig desk{3, 8, 3, 1};
  UNet net2 = UNet::build(desk, 3);
  ModelGraph g2;
  net2.collect(g2);
  CHECK(g2.parameter_count() == expected_unet_params(desk));
}

TEST_CASE("same seed gives identical initial weights") {
  const UNetConfig cfg{3, 4, 2, 1};
  UNet a = UNet::build(cfg, 42);
  UNet b = UNet::build(cfg, 42);
  UNet c = UNet::build(cfg, 43);
  ModelGraph ga, gb, gc;
  a.collect(ga), b.collect(gb), c.collect(gc);
  bool all_same = true, any_diff = false;
  for (std::size_t i = 0; i < ga.entries().size(); i++) {
    all_same = all_same && same_bytes(ga.entries()[i].value, gb.entries()[i].value);
    any_diff = any_diff || !same_bytes(ga.entries()[i].value, gc.entries()[i].value);
  }
  CHECK(all_same);
  CHECK(any_diff);
}

TEST_CASE("unet forward: shape preserved, outputs strictly inside (0,1)") {
  const UNetConfig cfg{3, 4, 3, 1};
  UNet net = UNet::build(cfg, 7);
  Rng rng(5);
  Tensor image(Shape4{1, 3, 64, 64});
  for (auto& v : image.data()) v = rng.unit();
  Tensor out = net.forward(image, nullptr);
  CHECK(out.shape() == Shape4{1, 1, 64, 64});
  for (float v : out.data()) {
    CHECK(v > 0.f);
    CHECK(v < 1.f);
  }

  Tensor bad(Shape4{1, 3, 60, 60});  // 60 not divisible by 8
  CHECK_THROWS_AS(net.forward(bad, nullptr), ConfigError);
}

TEST_CASE("refinement stage structure and zero-weight behaviour") {
  const RLConfig cfg{4, 64, 4};  // paper mode
  RLNet net = RLNet::build(cfg, BatchNormConfig{}, 11);
  CHECK(net.convs().size() == 4);
  CHECK(net.bns().size() == 3);

  Rng rng(9);
  Tensor x(Shape4{1, 4, 16, 16});
  for (auto& v : x.data()) v = rng.unit();
  Tensor y = net.forward(x, nullptr, BnMode::Eval);
  CHECK(y.shape() == Shape4{1, 1, 16, 16});

  // zero weights and biases -> sigmoid(0) = 0.5 everywhere
  for (auto& conv : net.convs()) {
    for (auto& v : conv.weight.data()) v = 0.f;
    for (auto& v : conv.bias.data()) v = 0.f;
  }
  Tensor y0 = net.forward(x, nullptr, BnMode::Eval);
  for (float v : y0.data()) CHECK(v == 0.5f);
}

TEST_CASE("forward_full: shapes, decoupling, stage independence") {
  const UNetConfig ucfg{3, 4, 2, 1};
  const RLConfig rcfg{4, 8, 4};
  UNet fcn = UNet::build(ucfg, 1);
  RLNet rl = RLNet::build(rcfg, BatchNormConfig{}, 2);
  Rng rng(3);
  Tensor image(Shape4{2, 3, 16, 16});
  for (auto& v : image.data()) v = rng.unit();

  auto out = forward_full(fcn, rl, image, nullptr, BnMode::Eval);
  CHECK(out.coarse.shape() == Shape4{2, 1, 16, 16});
  CHECK(out.refined.shape() == Shape4{2, 1, 16, 16});
  for (float v : out.refined.data()) {
    CHECK(v > 0.f);
    CHECK(v < 1.f);
  }

  // coarse must be bit-identical with or without the RL stage attached
  Tensor coarse_alone = fcn.forward(image, nullptr);
  CHECK(same_bytes(out.coarse, coarse_alone));

  // zero RL weights decouple the refined output from the image
  for (auto& conv : rl.convs()) {
    for (auto& v : conv.weight.data()) v = 0.f;
    for (auto& v : conv.bias.data()) v = 0.f;
  }
  auto out2 = forward_full(fcn, rl, image, nullptr, BnMode::Eval);
  for (float v : out2.refined.data()) CHECK(v == 0.5f);
}

TEST_CASE("binarize boundary contract") {
  Tensor p = Tensor::from_data({1, 1, 1, 4}, {0.5f, 0.5001f, 0.f, 1.f});
  Tensor b = binarize(p, 0.5f);
  CHECK(b.data()[0] == 0.f);  // strict inequality
  CHECK(b.data()[1] == 1.f);
  CHECK(b.data()[2] == 0.f);
  CHECK(b.data()[3] == 1.f);

  Tensor zeros(Shape4{1, 1, 2, 2});
  Tensor bz = binarize(zeros, 0.5f);
  for (float v : bz.data()) CHECK(v == 0.f);

  Rng rng(77);
  Tensor r(Shape4{1, 1, 5, 5});
  for (auto& v : r.data()) v = rng.unit();
  Tensor br = binarize(r, 0.5f);
  for (std::int64_t i = 0; i < r.numel(); i++)
    CHECK(br.data()[i] == (r.data()[i] > 0.5f ? 1.f : 0.f));
}

TEST_CASE("apply_mask keeps pixels under the mask and whitens the rest") {
  Rng rng(8);
  Tensor image(Shape4{1, 3, 4, 4});
  for (auto& v : image.data()) v = rng.unit();

  Tensor ones = Tensor::full({1, 1, 4, 4}, 1.f);
  CHECK(same_bytes(apply_mask(image, ones), image));

  Tensor zeros(Shape4{1, 1, 4, 4});
  Tensor white = apply_mask(image, zeros);
  for (float v : white.data()) CHECK(v == 1.f);

  Tensor checker(Shape4{1, 1, 4, 4});
  for (int y = 0; y < 4; y++)
    for (int x = 0; x < 4; x++) checker.data()[y * 4 + x] = (x + y) % 2 ? 1.f : 0.f;
  Tensor mixed = apply_mask(image, checker);
  for (int c = 0; c < 3; c++)
    for (int y = 0; y < 4; y++)
      for (int x = 0; x < 4; x++) {
        const std::int64_t i = (c * 4 + y) * 4 + x;
        const float want = (x + y) % 2 ? image.data()[i] : 1.f;
        CHECK(mixed.data()[i] == want);
      }
}

TEST_CASE("freeze_stage stops optimizer updates for the stage, and only it") {
  const UNetConfig ucfg{3, 2, 1, 1};
  const RLConfig rcfg{4, 4, 4};
  UNet fcn = UNet::build(ucfg, 5);
  RLNet rl = RLNet::build(rcfg, BatchNormConfig{}, 6);
  ModelGraph graph;
  fcn.collect(graph);
  rl.collect(graph);

  graph.freeze_stage(Stage::FCN);
  graph.freeze_stage(Stage::FCN);  // idempotent
  const std::uint32_t fcn_before = graph.stage_crc(Stage::FCN);
  const std::uint32_t rl_before = graph.stage_crc(Stage::RL);

  Adam adam({0.01f, 0.9f, 0.999f, 1e-8f});
  for (const auto& e : graph.entries()) adam.register_param(e.name, e.value);

  // one real training step on a fixed batch
  Rng rng(2);
  Tensor image(Shape4{1, 3, 8, 8});
  for (auto& v : image.data()) v = rng.unit();
  Tensor truth(Shape4{1, 1, 8, 8});
  for (auto& v : truth.data()) v = rng.chance(0.3f) ? 1.f : 0.f;

  Tape tape;
  auto out = forward_full(fcn, rl, image, &tape, BnMode::Train);
  Tensor loss = dice_loss(out.refined, truth, 1.f, &tape);
  tape.backward(loss);
  adam.step();

  CHECK(graph.stage_crc(Stage::FCN) == fcn_before);  // frozen: bit-identical
  CHECK(graph.stage_crc(Stage::RL) != rl_before);    // trainable: moved
}

TEST_CASE("checkpoint round-trip is bit-exact") {
  const auto dir = temp_dir("ckpt");
  const UNetConfig ucfg{3, 2, 2, 1};
  const RLConfig rcfg{4, 4, 4};
  UNet fcn = UNet::build(ucfg, 3);
  RLNet rl = RLNet::build(rcfg, BatchNormConfig{}, 4);
  Adam adam({1e-3f, 0.9f, 0.999f, 1e-8f});
  ModelGraph graph;
  fcn.collect(graph);
  rl.collect(graph);
  for (const auto& e : graph.entries()) adam.register_param(e.name, e.value);

  Checkpoint meta;
  meta.unet = ucfg;
  meta.rl = rcfg;
  meta.image_size = 16;
  meta.trained_epochs_stage1 = 2;
  meta.best_val_dice = 0.5;

  const auto p1 = dir / "a.ckpt";
  const auto p2 = dir / "b.ckpt";
  save_checkpoint(p1, meta, fcn, &rl, &adam);

  LoadedCheckpoint loaded = load_checkpoint(p1);
  CHECK(loaded.meta.unet.depth == 2);
  CHECK(loaded.meta.rl.has_value());
  CHECK(loaded.meta.image_size == 16);
  CHECK(loaded.meta.trained_epochs_stage1 == 2);

  // forward output identical before save and after load
  Rng rng(1);
  Tensor image(Shape4{1, 3, 16, 16});
  for (auto& v : image.data()) v = rng.unit();
  Tensor before = fcn.forward(image, nullptr);
  Tensor after = loaded.fcn.forward(image, nullptr);
  CHECK(same_bytes(before, after));

  // save -> load -> save produces byte-identical files
  Adam adam2(adam.config());
  ModelGraph g2;
  loaded.fcn.collect(g2);
  loaded.rl->collect(g2);
  for (const auto& e : g2.entries()) adam2.register_param(e.name, e.value);
  restore_adam(adam2, loaded);
  Checkpoint meta2 = loaded.meta;
  save_checkpoint(p2, meta2, loaded.fcn, &*loaded.rl, &adam2);
  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  const std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  const std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(b1 == b2);
}

TEST_CASE("checkpoint rejects corruption") {
  const auto dir = temp_dir("ckpt_bad");
  const UNetConfig ucfg{1, 2, 1, 1};
  UNet fcn = UNet::build(ucfg, 3);
  Checkpoint meta;
  meta.unet = ucfg;
  meta.image_size = 32;
  const auto path = dir / "x.ckpt";
  save_checkpoint(path, meta, fcn, nullptr, nullptr);

  auto read_all = [&] {
    std::ifstream f(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)),
                       std::istreambuf_iterator<char>());
  };
  auto write_all = [&](const std::string& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  };
  const std::string good = read_all();

  // bad magic
  std::string bad = good;
  bad[0] = 'X';
  write_all(bad);
  CHECK_THROWS_AS(load_checkpoint(path), IoError);

  // truncated
  write_all(good.substr(0, good.size() / 2));
  CHECK_THROWS_AS(load_checkpoint(path), IoError);

  // flipped payload byte breaks the CRC
  bad = good;
  bad[good.size() / 2] ^= 0x40;
  write_all(bad);
  CHECK_THROWS_AS(load_checkpoint(path), IoError);

  // shape mismatch vs config: patch base_channels 2 -> 3 and re-seal the CRC
  bad = good;
  const std::string key = "meta.unet.base_channels";
  const auto pos = bad.find(key);
  REQUIRE(pos != std::string::npos);
  const std::size_t payload = pos + key.size() + 1 /*rank*/ + 4 /*extent*/;
  const float three = 3.f;
  std::memcpy(bad.data() + payload, &three, 4);
  const std::uint32_t crc = crc32_ieee(
      reinterpret_cast<const unsigned char*>(bad.data()), bad.size() - 4);
  std::memcpy(bad.data() + bad.size() - 4, &crc, 4);
  write_all(bad);
  try {
    load_checkpoint(path);
    FAIL("expected a shape-mismatch error");
  } catch (const IoError& e) {
    // the error must name the offending tensor
    CHECK(std::string(e.what()).find("fcn.enc0.conv1.weight") != std::string::npos);
  }
}
