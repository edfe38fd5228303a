#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "poredet/errors.hpp"
#include "poredet/model.hpp"

namespace poredet {
namespace {

constexpr char kMagic[8] = {'P', 'O', 'R', 'E', 'C', 'K', 'P', 'T'};

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void i64(std::int64_t v) {
    const auto u = static_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f32s(const std::vector<float>& vs) {
    for (float v : vs) f32(v);
  }
  void raw(const char* p, std::size_t n) { bytes_.insert(bytes_.end(), p, p + n); }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::int64_t i64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return static_cast<std::int64_t>(v);
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::vector<float> f32s(std::size_t n) {
    need(n * 4);
    std::vector<float> out(n);
    for (float& v : out) v = f32();
    return out;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      throw CheckpointError(CheckpointError::Kind::Truncated, "checkpoint is truncated");
    }
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::uint32_t crc_of(std::span<const std::uint8_t> bytes) {
  return static_cast<std::uint32_t>(
      crc32(0L, bytes.data(), static_cast<uInt>(bytes.size())));
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const PoreModel& model) {
  model.validate();
  Writer w;
  w.raw(kMagic, sizeof kMagic);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(model.layers.size()));
  for (const auto& layer : model.layers) {
    const auto& c = layer.conv;
    w.u32(c.kernel_h);
    w.u32(c.kernel_w);
    w.u32(c.in_channels);
    w.u32(c.out_channels);
    w.f32s(c.weights);
    w.f32s(c.bias);
    w.f32s(layer.bn.gamma);
    w.f32s(layer.bn.beta);
    w.f32s(layer.bn.running_mean);
    w.f32s(layer.bn.running_var);
    w.f32(layer.bn.epsilon);
    w.f32(layer.bn.momentum);
  }
  w.f32(model.dropout_rate);
  w.i64(model.step_count);
  w.u32(crc_of(w.bytes()));
  return std::move(w.bytes());
}

PoreModel deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < sizeof kMagic) {
    throw CheckpointError(CheckpointError::Kind::Truncated, "checkpoint is truncated");
  }
  if (!std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin())) {
    throw CheckpointError(CheckpointError::Kind::BadMagic, "not a pore model checkpoint");
  }
  Reader r(bytes.subspan(sizeof kMagic));
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError(CheckpointError::Kind::Version,
                          "unsupported checkpoint version " + std::to_string(version) +
                              " (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  PoreModel model;
  if (r.u32() != model.layers.size()) {
    throw CheckpointError(CheckpointError::Kind::Corrupt, "checkpoint has wrong layer count");
  }
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    auto& layer = model.layers[l];
    const std::uint32_t kh = r.u32(), kw = r.u32(), cin = r.u32(), cout = r.u32();
    if (kh != static_cast<std::uint32_t>(kKernels[l]) || kw != kh ||
        cout != static_cast<std::uint32_t>(kFilters[l]) ||
        cin != (l == 0 ? 1u : static_cast<std::uint32_t>(kFilters[l - 1]))) {
      throw CheckpointError(CheckpointError::Kind::Corrupt,
                            "checkpoint layer " + std::to_string(l + 1) + " has unexpected shape");
    }
    layer.conv = nn::ConvParams<float>(static_cast<int>(kh), static_cast<int>(kw),
                                       static_cast<int>(cin), static_cast<int>(cout));
    layer.conv.weights = r.f32s(layer.conv.weights.size());
    layer.conv.bias = r.f32s(cout);
    layer.bn.gamma = r.f32s(cout);
    layer.bn.beta = r.f32s(cout);
    layer.bn.running_mean = r.f32s(cout);
    layer.bn.running_var = r.f32s(cout);
    layer.bn.epsilon = r.f32();
    layer.bn.momentum = r.f32();
  }
  model.dropout_rate = r.f32();
  model.step_count = r.i64();
  const std::size_t payload = sizeof kMagic + r.pos();
  const std::uint32_t stored = r.u32();
  if (stored != crc_of(bytes.first(payload))) {
    throw CheckpointError(CheckpointError::Kind::Corrupt, "checkpoint checksum mismatch");
  }
  if (sizeof kMagic + r.pos() != bytes.size()) {
    throw CheckpointError(CheckpointError::Kind::Corrupt, "trailing bytes after checkpoint");
  }
  for (const auto& layer : model.layers) {
    for (float v : layer.bn.running_var) {
      if (!(v >= 0.0f)) {
        throw CheckpointError(CheckpointError::Kind::Corrupt, "negative running variance");
      }
    }
  }
  return model;
}

void save_checkpoint(const PoreModel& model, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(model);
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

PoreModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace poredet
