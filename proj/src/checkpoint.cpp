#include <cstring>
#include <fstream>
#include <map>

#include "sigseg/common.hpp"
#include "sigseg/model.hpp"

namespace sigseg {

namespace {

constexpr char kMagic[4] = {'S', 'G', 'S', 'R'};
constexpr std::uint32_t kVersion = 1;

struct RawTensor {
  std::string name;
  std::vector<std::uint32_t> extents;
  std::vector<float> data;
};

void put_u16(std::string& buf, std::uint16_t v) {
  buf.push_back(static_cast<char>(v & 0xFF));
  buf.push_back(static_cast<char>((v >> 8) & 0xFF));
}

void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; i++) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f32(std::string& buf, const float* data, std::size_t count) {
  static_assert(sizeof(float) == 4);
  const std::size_t off = buf.size();
  buf.resize(off + count * 4);
  std::memcpy(buf.data() + off, data, count * 4);
}

void put_tensor(std::string& buf, const RawTensor& t) {
  if (t.name.size() > 0xFFFF) throw ContractError("checkpoint: tensor name too long");
  put_u16(buf, static_cast<std::uint16_t>(t.name.size()));
  buf.append(t.name);
  buf.push_back(static_cast<char>(t.extents.size()));
  std::uint64_t numel = 1;
  for (std::uint32_t e : t.extents) {
    put_u32(buf, e);
    numel *= e;
  }
  if (numel != t.data.size())
    throw ContractError("checkpoint: extent/data mismatch for " + t.name);
  put_f32(buf, t.data.data(), t.data.size());
}

class Reader {
 public:
  Reader(const std::string& buf, const std::string& path)
      : buf_(buf), path_(path) {}

  std::uint16_t u16() {
    need(2);
    std::uint16_t v = static_cast<std::uint8_t>(buf_[pos_]) |
                      (static_cast<std::uint16_t>(static_cast<std::uint8_t>(buf_[pos_ + 1])) << 8);
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; i++)
      v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(buf_[pos_++]);
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  RawTensor tensor() {
    RawTensor t;
    t.name = bytes(u16());
    const int rank = u8();
    std::uint64_t numel = 1;
    for (int i = 0; i < rank; i++) {
      t.extents.push_back(u32());
      numel *= t.extents.back();
    }
    if (numel > (1ull << 31))
      throw IoError("checkpoint " + path_ + ": tensor " + t.name + " implausibly large");
    t.data.resize(numel);
    need(numel * 4);
    std::memcpy(t.data.data(), buf_.data() + pos_, numel * 4);
    pos_ += numel * 4;
    return t;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > buf_.size())
      throw IoError("checkpoint " + path_ + ": truncated file");
  }
  const std::string& buf_;
  std::string path_;
  std::size_t pos_ = 0;
};

RawTensor scalar_meta(const std::string& name, float v) {
  return {name, {1}, {v}};
}

RawTensor from_tensor(const std::string& name, const Tensor& t) {
  const Shape4 s = t.shape();
  RawTensor r;
  r.name = name;
  r.extents = {static_cast<std::uint32_t>(s.n), static_cast<std::uint32_t>(s.c),
               static_cast<std::uint32_t>(s.h), static_cast<std::uint32_t>(s.w)};
  r.data.assign(t.data().begin(), t.data().end());
  return r;
}

RawTensor from_vector(const std::string& name, const std::vector<float>& v) {
  return {name, {static_cast<std::uint32_t>(v.size())}, v};
}

std::vector<RawTensor> model_tensors(const Checkpoint& meta, const UNet& fcn,
                                     const RLNet* rl) {
  std::vector<RawTensor> out;
  out.push_back(scalar_meta("meta.unet.in_channels", static_cast<float>(meta.unet.in_channels)));
  out.push_back(scalar_meta("meta.unet.base_channels", static_cast<float>(meta.unet.base_channels)));
  out.push_back(scalar_meta("meta.unet.depth", static_cast<float>(meta.unet.depth)));
  out.push_back(scalar_meta("meta.unet.out_channels", static_cast<float>(meta.unet.out_channels)));
  out.push_back(scalar_meta("meta.rl.present", meta.rl ? 1.f : 0.f));
  if (meta.rl) {
    out.push_back(scalar_meta("meta.rl.in_channels", static_cast<float>(meta.rl->in_channels)));
    out.push_back(scalar_meta("meta.rl.hidden_channels", static_cast<float>(meta.rl->hidden_channels)));
    out.push_back(scalar_meta("meta.rl.layers", static_cast<float>(meta.rl->layers)));
  }
  out.push_back(scalar_meta("meta.bn.momentum", meta.bn.momentum));
  out.push_back(scalar_meta("meta.bn.eps", meta.bn.eps));
  out.push_back(scalar_meta("meta.image_size", static_cast<float>(meta.image_size)));
  out.push_back(scalar_meta("meta.trained_epochs.stage1", static_cast<float>(meta.trained_epochs_stage1)));
  out.push_back(scalar_meta("meta.trained_epochs.stage2", static_cast<float>(meta.trained_epochs_stage2)));
  out.push_back(scalar_meta("meta.best_val_dice", static_cast<float>(meta.best_val_dice)));

  ModelGraph graph;
  fcn.collect(graph);
  if (rl) rl->collect(graph);
  for (const auto& e : graph.entries()) out.push_back(from_tensor(e.name, e.value));
  if (rl) {
    const auto& bns = rl->bns();
    for (std::size_t i = 0; i < bns.size(); i++) {
      const std::string p = "rl.bn" + std::to_string(i + 1) + ".";
      out.push_back(from_vector(p + "running_mean", bns[i].state.running_mean));
      out.push_back(from_vector(p + "running_var", bns[i].state.running_var));
    }
  }
  return out;
}

float take_scalar(std::map<std::string, RawTensor>& m, const std::string& name,
                  const std::string& path) {
  auto it = m.find(name);
  if (it == m.end())
    throw IoError("checkpoint " + path + ": missing tensor " + name);
  if (it->second.data.size() != 1)
    throw IoError("checkpoint " + path + ": tensor " + name + " is not scalar");
  float v = it->second.data[0];
  m.erase(it);
  return v;
}

void fill_tensor(std::map<std::string, RawTensor>& m, const std::string& name,
                 Tensor& dst, const std::string& path) {
  auto it = m.find(name);
  if (it == m.end())
    throw IoError("checkpoint " + path + ": missing tensor " + name);
  const RawTensor& r = it->second;
  const Shape4 s = dst.shape();
  std::vector<std::uint32_t> want = {
      static_cast<std::uint32_t>(s.n), static_cast<std::uint32_t>(s.c),
      static_cast<std::uint32_t>(s.h), static_cast<std::uint32_t>(s.w)};
  if (r.extents != want)
    throw IoError("checkpoint " + path + ": tensor " + name +
                  " has mismatched shape vs config");
  std::copy(r.data.begin(), r.data.end(), dst.data().begin());
  m.erase(it);
}

void fill_vector(std::map<std::string, RawTensor>& m, const std::string& name,
                 std::vector<float>& dst, const std::string& path) {
  auto it = m.find(name);
  if (it == m.end())
    throw IoError("checkpoint " + path + ": missing tensor " + name);
  if (it->second.data.size() != dst.size())
    throw IoError("checkpoint " + path + ": tensor " + name +
                  " has mismatched shape vs config");
  dst = it->second.data;
  m.erase(it);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& meta,
                     const UNet& fcn, const RLNet* rl, const Adam* optimizer) {
  std::string buf;
  buf.append(kMagic, 4);
  put_u32(buf, kVersion);

  const auto tensors = model_tensors(meta, fcn, rl);
  put_u32(buf, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) put_tensor(buf, t);

  std::vector<RawTensor> opt;
  if (optimizer) {
    opt.push_back({"adam.t", {1}, {static_cast<float>(optimizer->step_count())}});
    for (const auto& s : optimizer->slots()) {
      opt.push_back({"adam.m." + s.name,
                     {static_cast<std::uint32_t>(s.m.size())},
                     s.m});
      opt.push_back({"adam.v." + s.name,
                     {static_cast<std::uint32_t>(s.v.size())},
                     s.v});
    }
  }
  put_u32(buf, static_cast<std::uint32_t>(opt.size()));
  for (const auto& t : opt) put_tensor(buf, t);

  const std::uint32_t crc =
      crc32_ieee(reinterpret_cast<const unsigned char*>(buf.data()), buf.size());
  put_u32(buf, crc);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("checkpoint: cannot open " + path.string() + " for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("checkpoint: short write to " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open " + path.string());
  std::string buf((std::istreambuf_iterator<char>(in)),
                  std::istreambuf_iterator<char>());
  if (buf.size() < 16) throw IoError("checkpoint " + path.string() + ": truncated file");

  const std::uint32_t stored_crc =
      static_cast<std::uint8_t>(buf[buf.size() - 4]) |
      (static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf[buf.size() - 3])) << 8) |
      (static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf[buf.size() - 2])) << 16) |
      (static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf[buf.size() - 1])) << 24);
  const std::uint32_t actual_crc = crc32_ieee(
      reinterpret_cast<const unsigned char*>(buf.data()), buf.size() - 4);
  if (stored_crc != actual_crc)
    throw IoError("checkpoint " + path.string() + ": CRC mismatch");

  Reader r(buf, path.string());
  if (r.bytes(4) != std::string(kMagic, 4))
    throw IoError("checkpoint " + path.string() + ": bad magic");
  if (r.u32() != kVersion)
    throw IoError("checkpoint " + path.string() + ": unsupported version");

  std::map<std::string, RawTensor> tensors;
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; i++) {
    RawTensor t = r.tensor();
    tensors.emplace(t.name, std::move(t));
  }
  std::vector<std::pair<std::string, std::vector<float>>> opt_state;
  const std::uint32_t opt_count = r.u32();
  for (std::uint32_t i = 0; i < opt_count; i++) {
    RawTensor t = r.tensor();
    opt_state.emplace_back(t.name, std::move(t.data));
  }

  const std::string p = path.string();
  LoadedCheckpoint out;
  out.meta.unet.in_channels = static_cast<int>(take_scalar(tensors, "meta.unet.in_channels", p));
  out.meta.unet.base_channels = static_cast<int>(take_scalar(tensors, "meta.unet.base_channels", p));
  out.meta.unet.depth = static_cast<int>(take_scalar(tensors, "meta.unet.depth", p));
  out.meta.unet.out_channels = static_cast<int>(take_scalar(tensors, "meta.unet.out_channels", p));
  const bool has_rl = take_scalar(tensors, "meta.rl.present", p) != 0.f;
  if (has_rl) {
    RLConfig rl;
    rl.in_channels = static_cast<int>(take_scalar(tensors, "meta.rl.in_channels", p));
    rl.hidden_channels = static_cast<int>(take_scalar(tensors, "meta.rl.hidden_channels", p));
    rl.layers = static_cast<int>(take_scalar(tensors, "meta.rl.layers", p));
    out.meta.rl = rl;
  }
  out.meta.bn.momentum = take_scalar(tensors, "meta.bn.momentum", p);
  out.meta.bn.eps = take_scalar(tensors, "meta.bn.eps", p);
  out.meta.image_size = static_cast<int>(take_scalar(tensors, "meta.image_size", p));
  out.meta.trained_epochs_stage1 = static_cast<int>(take_scalar(tensors, "meta.trained_epochs.stage1", p));
  out.meta.trained_epochs_stage2 = static_cast<int>(take_scalar(tensors, "meta.trained_epochs.stage2", p));
  out.meta.best_val_dice = take_scalar(tensors, "meta.best_val_dice", p);

  out.fcn = UNet::build(out.meta.unet, 0);
  {
    ModelGraph graph;
    out.fcn.collect(graph);
    for (auto& e : graph.entries()) {
      Tensor t = e.value;
      fill_tensor(tensors, e.name, t, p);
    }
  }
  if (has_rl) {
    out.rl = RLNet::build(*out.meta.rl, out.meta.bn, 0);
    ModelGraph graph;
    out.rl->collect(graph);
    for (auto& e : graph.entries()) {
      Tensor t = e.value;
      fill_tensor(tensors, e.name, t, p);
    }
    auto& bns = out.rl->bns();
    for (std::size_t i = 0; i < bns.size(); i++) {
      const std::string pref = "rl.bn" + std::to_string(i + 1) + ".";
      fill_vector(tensors, pref + "running_mean", bns[i].state.running_mean, p);
      fill_vector(tensors, pref + "running_var", bns[i].state.running_var, p);
    }
  }
  if (!tensors.empty())
    throw IoError("checkpoint " + p + ": unexpected tensor " + tensors.begin()->first);
  out.optimizer_state = std::move(opt_state);
  return out;
}

void restore_adam(Adam& adam, const LoadedCheckpoint& ckpt) {
  for (const auto& [name, data] : ckpt.optimizer_state) {
    if (name == "adam.t") {
      if (data.size() != 1) throw IoError("checkpoint: adam.t is not scalar");
      adam.set_step_count(static_cast<std::int64_t>(data[0]));
    } else if (name.starts_with("adam.m.")) {
      auto& slot = adam.slot(name.substr(7));
      if (slot.m.size() != data.size())
        throw IoError("checkpoint: optimizer tensor " + name + " has mismatched shape");
      slot.m = data;
    } else if (name.starts_with("adam.v.")) {
      auto& slot = adam.slot(name.substr(7));
      if (slot.v.size() != data.size())
        throw IoError("checkpoint: optimizer tensor " + name + " has mismatched shape");
      slot.v = data;
    } else {
      throw IoError("checkpoint: unexpected optimizer tensor " + name);
    }
  }
}

}  // namespace sigseg
