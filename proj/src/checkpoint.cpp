#include "amh/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace amh {

namespace {

class Writer {
 public:
  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void bytes(const std::string& s) { out.insert(out.end(), s.begin(), s.end()); }
  std::vector<unsigned char> out;

 private:
  void le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
};

class Reader {
 public:
  explicit Reader(const std::vector<unsigned char>& b) : buf(b) {}
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  std::uint64_t u64() { return le(8); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string bytes(std::uint64_t n) {
    need(n);
    std::string s(buf.begin() + static_cast<std::ptrdiff_t>(pos), buf.begin() + static_cast<std::ptrdiff_t>(pos + n));
    pos += n;
    return s;
  }
  std::size_t pos = 0;

 private:
  void need(std::uint64_t n) {
    if (n > buf.size() - pos) {
      throw CheckpointError("checkpoint truncated at byte " + std::to_string(pos));
    }
  }
  std::uint64_t le(int n) {
    need(static_cast<std::uint64_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(buf[pos + i]) << (8 * i);
    pos += static_cast<std::size_t>(n);
    return v;
  }
  const std::vector<unsigned char>& buf;
};

}  // namespace

std::vector<unsigned char> serialize_checkpoint(const AmhNet& model) {
  Writer w;
  w.bytes("AMHN");
  w.u32(kCheckpointVersion);
  const std::string cfg = model.config().to_text();
  w.u64(cfg.size());
  w.bytes(cfg);
  const auto& params = model.parameters();
  w.u64(params.size());
  std::uint64_t offset = 0;
  for (const auto& p : params) {
    w.u32(static_cast<std::uint32_t>(p.name.size()));
    w.bytes(p.name);
    w.u32(3);
    w.u64(static_cast<std::uint64_t>(p.value.channels()));
    w.u64(static_cast<std::uint64_t>(p.value.height()));
    w.u64(static_cast<std::uint64_t>(p.value.width()));
    w.u64(offset);
    offset += static_cast<std::uint64_t>(p.value.size());
  }
  w.u64(offset);
  for (const auto& p : params) {
    for (Index i = 0; i < p.value.size(); ++i) w.f64(p.value.values()[i]);
  }
  return std::move(w.out);
}

AmhNet deserialize_checkpoint(const std::vector<unsigned char>& bytes) {
  Reader r(bytes);
  if (r.bytes(4) != "AMHN") throw CheckpointError("checkpoint: bad magic at byte 0");
  const auto version = r.u32();
  if (version != kCheckpointVersion) throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
  const std::string cfg_text = r.bytes(r.u64());
  AmhNet model(ModelConfig::from_kv(KvConfig::parse(cfg_text)));

  struct Entry {
    std::string name;
    Shape shape;
    std::uint64_t offset;
  };
  std::vector<Entry> manifest(r.u64());
  if (manifest.size() != model.parameters().size()) {
    throw CheckpointError("checkpoint: " + std::to_string(manifest.size()) + " tensors, model config expects " +
                          std::to_string(model.parameters().size()));
  }
  for (auto& e : manifest) {
    e.name = r.bytes(r.u32());
    const auto rank = r.u32();
    if (rank != 3) throw CheckpointError("checkpoint: tensor '" + e.name + "' has rank " + std::to_string(rank));
    e.shape.channels = static_cast<Index>(r.u64());
    e.shape.height = static_cast<Index>(r.u64());
    e.shape.width = static_cast<Index>(r.u64());
    e.offset = r.u64();
  }
  const std::uint64_t total = r.u64();
  const std::size_t data_start = r.pos;
  if ((bytes.size() - data_start) / 8 != total || (bytes.size() - data_start) % 8 != 0) {
    throw CheckpointError("checkpoint: data block size does not match " + std::to_string(total) + " values");
  }
  for (const auto& e : manifest) {
    Parameter& p = model.parameters().at(e.name);
    if (!(p.value.shape() == e.shape)) {
      throw CheckpointError("checkpoint: tensor '" + e.name + "' is " + to_string(e.shape) + ", model expects " +
                            to_string(p.value.shape()));
    }
    if (e.offset + static_cast<std::uint64_t>(e.shape.size()) > total) {
      throw CheckpointError("checkpoint: tensor '" + e.name + "' overruns the data block");
    }
    r.pos = data_start + static_cast<std::size_t>(e.offset) * 8;
    for (Index i = 0; i < p.value.size(); ++i) p.value.values()[i] = r.f64();
  }
  return model;
}

void save_checkpoint(const std::string& path, const AmhNet& model) {
  const auto bytes = serialize_checkpoint(model);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("write failed for '" + path + "'");
}

AmhNet load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace amh
