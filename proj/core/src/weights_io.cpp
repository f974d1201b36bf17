#include <cstring>

#include "binary_io.hpp"
#include "porenet/error.hpp"
#include "porenet/file_util.hpp"
#include "porenet/porenet_model.hpp"

namespace porenet {

namespace {

constexpr char kMagic[4] = {'P', 'N', 'E', 'T'};

}  // namespace

std::vector<unsigned char> encode_weights(PoreNetModel& model) {
  if (!model.has_running_stats()) {
    throw Error(ErrorKind::kState, "save_weights: model has no batch-norm running statistics yet");
  }
  const auto params = model.parameters();
  detail::ByteWriter w;
  w.bytes(kMagic, 4);
  w.u32(kWeightsFormatVersion);
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    w.str(p.name);
    const nn::Shape& shape = p.tensor->shape();
    w.u32(static_cast<std::uint32_t>(shape.size()));
    for (int e : shape) w.u32(static_cast<std::uint32_t>(e));
    for (float v : p.tensor->values()) w.f32(v);
  }
  return std::move(w.buffer());
}

PoreNetModel decode_weights(std::span<const unsigned char> bytes, const std::string& what) {
  detail::ByteReader r(bytes, what);
  const std::string magic = r.fixed(4);
  if (std::memcmp(magic.data(), kMagic, 4) != 0) throw Error(ErrorKind::kFormat, what + ": not a PNET weights file");
  const std::uint32_t version = r.u32();
  if (version != kWeightsFormatVersion) {
    throw Error(ErrorKind::kFormat, what + ": unsupported weights version " + std::to_string(version) +
                                        " (expected " + std::to_string(kWeightsFormatVersion) + ")");
  }
  PoreNetModel model(0);
  auto params = model.parameters();
  const std::uint32_t count = r.u32();
  if (count != params.size()) {
    throw Error(ErrorKind::kFormat, what + ": manifest mismatch, file has " + std::to_string(count) +
                                        " entries, model has " + std::to_string(params.size()));
  }
  for (auto& p : params) {
    const std::string name = r.str();
    if (name != p.name) {
      throw Error(ErrorKind::kFormat, what + ": manifest mismatch, expected entry " + p.name + ", found " + name);
    }
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw Error(ErrorKind::kFormat, what + ": layer " + name + " has implausible rank");
    nn::Shape shape(rank);
    for (auto& e : shape) e = static_cast<int>(r.u32());
    if (shape != p.tensor->shape()) {
      throw Error(ErrorKind::kFormat, what + ": manifest mismatch at layer " + name + ", expected shape " +
                                          nn::shape_string(p.tensor->shape()) + ", found " + nn::shape_string(shape));
    }
    r.need(p.tensor->size() * 4);
    for (float& v : p.tensor->values()) v = r.f32();
  }
  if (!r.at_end()) throw Error(ErrorKind::kFormat, what + ": trailing bytes after the last entry");
  model.mark_running_stats(true);
  return model;
}

void save_weights(PoreNetModel& model, const std::filesystem::path& path) {
  write_file_atomic(path, encode_weights(model));
}

PoreNetModel load_weights(const std::filesystem::path& path) {
  const std::string data = read_binary_file(path);
  return decode_weights({reinterpret_cast<const unsigned char*>(data.data()), data.size()}, path.string());
}

}  // namespace porenet
