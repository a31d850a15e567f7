#include "harmon/numerics/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

#include "harmon/common.hpp"

namespace harmon::num {

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

void put_f32_le(std::ostream& os, const std::vector<float>& v) {
  static_assert(sizeof(float) == 4);
  // All supported targets are little-endian; bytes go out as stored.
  os.write(reinterpret_cast<const char*>(v.data()),
           static_cast<std::streamsize>(v.size() * sizeof(float)));
}

}  // namespace

CheckpointData::Blob& CheckpointData::add(const std::string& name, Shape shape,
                                          std::vector<float> data) {
  if (find(name)) throw CheckpointError("duplicate blob '" + name + "'");
  if (shape_numel(shape) != static_cast<std::int64_t>(data.size()))
    throw CheckpointError("blob '" + name + "': data size does not match shape");
  Blob b;
  b.shape = std::move(shape);
  b.data = std::move(data);
  blobs.emplace_back(name, std::move(b));
  return blobs.back().second;
}

const CheckpointData::Blob* CheckpointData::find(const std::string& name) const {
  for (const auto& [n, b] : blobs)
    if (n == name) return &b;
  return nullptr;
}

void save_checkpoint(const std::string& path, const CheckpointData& data) {
  nlohmann::json manifest;
  manifest["version"] = kCheckpointVersion;
  manifest["dtype"] = "f32";
  auto blob_list = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, blob] : data.blobs) {
    nlohmann::json e;
    e["name"] = name;
    e["shape"] = blob.shape;
    e["dtype"] = "f32";
    e["offset"] = offset;
    e["group"] = blob.group;
    e["trainable"] = blob.trainable;
    blob_list.push_back(std::move(e));
    offset += blob.data.size() * sizeof(float);
  }
  manifest["blobs"] = std::move(blob_list);
  manifest["meta"] = data.meta;
  const std::string mtext = manifest.dump();

  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw CheckpointError("cannot open '" + tmp + "' for writing");
    os.write(kCheckpointMagic, 4);
    put_u32(os, kCheckpointVersion);
    put_u64(os, mtext.size());
    os.write(mtext.data(), static_cast<std::streamsize>(mtext.size()));
    for (const auto& [name, blob] : data.blobs) put_f32_le(os, blob.data);
    if (!os) throw CheckpointError("write failed for '" + tmp + "'");
  }
  std::filesystem::rename(tmp, path);
}

CheckpointData load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open '" + path + "'");
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw CheckpointError("'" + path + "' is not a checkpoint (bad magic)");
  const std::uint32_t version = get_u32(is);
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  const std::uint64_t mlen = get_u64(is);
  std::string mtext(mlen, '\0');
  is.read(mtext.data(), static_cast<std::streamsize>(mlen));
  if (!is) throw CheckpointError("truncated manifest in '" + path + "'");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(mtext);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("bad manifest in '" + path + "': " + e.what());
  }

  CheckpointData data;
  data.meta = manifest.value("meta", nlohmann::json::object());
  const std::streampos payload_start = is.tellg();
  for (const auto& e : manifest.at("blobs")) {
    const std::string name = e.at("name").get<std::string>();
    Shape shape = e.at("shape").get<Shape>();
    const std::uint64_t offset = e.at("offset").get<std::uint64_t>();
    const std::int64_t count = shape_numel(shape);
    std::vector<float> buf(static_cast<std::size_t>(count));
    is.seekg(payload_start + static_cast<std::streamoff>(offset));
    is.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!is) throw CheckpointError("truncated payload for blob '" + name + "'");
    auto& blob = data.add(name, std::move(shape), std::move(buf));
    blob.group = e.value("group", std::string());
    blob.trainable = e.value("trainable", false);
  }
  return data;
}

template <typename T>
void pack_params(const ParamStore<T>& store, CheckpointData& out) {
  for (const auto& name : store.names()) {
    const auto& p = store.at(name);
    std::vector<float> buf(p.value.size());
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(p.value[i]);
    auto& blob = out.add(name, p.shape, std::move(buf));
    blob.group = p.group;
    blob.trainable = p.trainable;
  }
}

template <typename T>
void unpack_params(const CheckpointData& in, ParamStore<T>& store) {
  for (const auto& name : store.names()) {
    auto& p = store.at(name);
    const auto* blob = in.find(name);
    if (!blob) throw CheckpointError("checkpoint is missing param '" + name + "'");
    if (blob->shape != p.shape)
      throw CheckpointError("param '" + name + "': checkpoint shape " + shape_str(blob->shape) +
                            " vs model " + shape_str(p.shape));
    for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] = static_cast<T>(blob->data[i]);
    p.trainable = blob->trainable;
  }
}

template <typename T>
void pack_optim(const OptimizerState<T>& state, CheckpointData& out) {
  nlohmann::json o;
  o["step"] = state.step;
  o["lr"] = state.lr;
  o["beta1"] = state.beta1;
  o["beta2"] = state.beta2;
  o["eps"] = state.eps;
  o["weight_decay"] = state.weight_decay;
  o["group_lr"] = state.group_lr;
  out.meta["optim"] = std::move(o);
  for (const auto& [name, slot] : state.slots) {
    std::vector<float> m(slot.m.size()), v(slot.v.size());
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = static_cast<float>(slot.m[i]);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(slot.v[i]);
    out.add("opt.m." + name, {static_cast<int>(slot.m.size())}, std::move(m)).group = "opt";
    out.add("opt.v." + name, {static_cast<int>(slot.v.size())}, std::move(v)).group = "opt";
  }
}

template <typename T>
void unpack_optim(const CheckpointData& in, OptimizerState<T>& state) {
  if (!in.meta.contains("optim")) throw CheckpointError("checkpoint has no optimizer section");
  const auto& o = in.meta.at("optim");
  state.step = o.at("step").get<std::int64_t>();
  state.lr = o.at("lr").get<double>();
  state.beta1 = o.at("beta1").get<double>();
  state.beta2 = o.at("beta2").get<double>();
  state.eps = o.at("eps").get<double>();
  state.weight_decay = o.at("weight_decay").get<double>();
  state.group_lr = o.at("group_lr").get<std::map<std::string, double>>();
  state.slots.clear();
  for (const auto& [name, blob] : in.blobs) {
    if (name.rfind("opt.m.", 0) == 0) {
      auto& slot = state.slots[name.substr(6)];
      slot.m.assign(blob.data.begin(), blob.data.end());
    } else if (name.rfind("opt.v.", 0) == 0) {
      auto& slot = state.slots[name.substr(6)];
      slot.v.assign(blob.data.begin(), blob.data.end());
    }
  }
}

template void pack_params<float>(const ParamStore<float>&, CheckpointData&);
template void pack_params<double>(const ParamStore<double>&, CheckpointData&);
template void unpack_params<float>(const CheckpointData&, ParamStore<float>&);
template void unpack_params<double>(const CheckpointData&, ParamStore<double>&);
template void pack_optim<float>(const OptimizerState<float>&, CheckpointData&);
template void pack_optim<double>(const OptimizerState<double>&, CheckpointData&);
template void unpack_optim<float>(const CheckpointData&, OptimizerState<float>&);
template void unpack_optim<double>(const CheckpointData&, OptimizerState<double>&);

}  // namespace harmon::num
