#include "bisenet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

namespace bisenet {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'B', 'S', 'N', 'T'};
constexpr std::string_view kMomentumPrefix = "momentum/";

class Writer {
 public:
  template <typename U>
  void put(U v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    bytes.insert(bytes.end(), p, p + sizeof(U));
  }
  void put_raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    bytes.insert(bytes.end(), b, b + n);
  }
  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : bytes_(b) {}

  template <typename U>
  U get(const char* what) {
    U v;
    need(sizeof(U), what);
    std::memcpy(&v, bytes_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return v;
  }
  void get_raw(void* dst, std::size_t n, const char* what) {
    need(n, what);
    if (n) std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) {
    if (remaining() < n)
      throw Error(ErrorKind::kFormat, std::string("truncated checkpoint while reading ") + what, pos_);
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

std::vector<std::uint32_t> dims_of(const ParamEntry<float>& e) {
  const Shape& s = e.value.shape();
  if (e.rank == 1) return {static_cast<std::uint32_t>(s.numel())};
  return {static_cast<std::uint32_t>(s.n), static_cast<std::uint32_t>(s.c), static_cast<std::uint32_t>(s.h),
          static_cast<std::uint32_t>(s.w)};
}

void put_tensor(Writer& w, const std::string& name, const std::vector<std::uint32_t>& dims,
                const Tensor& t) {
  if (name.size() > 0xFFFF) fail(ErrorKind::kFormat, "tensor name too long: " + name.substr(0, 32));
  w.put(static_cast<std::uint16_t>(name.size()));
  w.put_raw(name.data(), name.size());
  w.put(static_cast<std::uint8_t>(0));
  w.put(static_cast<std::uint8_t>(dims.size()));
  for (auto d : dims) w.put(d);
  w.put_raw(t.ptr(), static_cast<std::size_t>(t.numel()) * sizeof(float));
}

Shape shape_from_dims(const std::vector<std::uint32_t>& dims) {
  if (dims.size() == 1) return Shape{static_cast<std::int64_t>(dims[0]), 1, 1, 1};
  Shape s{1, 1, 1, 1};
  // Lower ranks fill from the right.
  std::int64_t* slots[4] = {&s.n, &s.c, &s.h, &s.w};
  const std::size_t off = 4 - dims.size();
  for (std::size_t i = 0; i < dims.size(); ++i) *slots[off + i] = dims[i];
  return s;
}

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const ParamStore& store, bool with_momentum) {
  Writer w;
  w.put_raw(kMagic, 4);
  w.put(kCheckpointVersion);
  std::uint32_t count = 0;
  for (const auto& e : store.entries()) count += (with_momentum && e.trainable) ? 2 : 1;
  w.put(count);
  for (const auto& e : store.entries()) put_tensor(w, e.name, dims_of(e), e.value);
  if (with_momentum)
    for (const auto& e : store.entries())
      if (e.trainable) put_tensor(w, std::string(kMomentumPrefix) + e.name, dims_of(e), e.momentum);
  w.put(static_cast<std::uint64_t>(store.iteration));
  w.put(static_cast<std::uint64_t>(store.config_hash));
  return std::move(w.bytes);
}

CheckpointFile decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  char magic[4];
  r.get_raw(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) throw Error(ErrorKind::kFormat, "bad checkpoint magic", 0);
  const std::size_t vpos = r.pos();
  const auto version = r.get<std::uint16_t>("version");
  if (version != kCheckpointVersion)
    throw Error(ErrorKind::kFormat, "unsupported checkpoint version " + std::to_string(version), vpos);
  const auto count = r.get<std::uint32_t>("tensor count");
  CheckpointFile file;
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointTensor t;
    const auto len = r.get<std::uint16_t>("name length");
    t.name.resize(len);
    r.get_raw(t.name.data(), len, "name");
    const std::size_t dpos = r.pos();
    const auto dtype = r.get<std::uint8_t>("dtype");
    if (dtype != 0)
      throw Error(ErrorKind::kFormat, "unsupported dtype " + std::to_string(dtype) + " for " + t.name, dpos);
    const std::size_t rpos = r.pos();
    const auto rank = r.get<std::uint8_t>("rank");
    if (rank < 1 || rank > 4)
      throw Error(ErrorKind::kFormat, "unsupported rank " + std::to_string(rank) + " for " + t.name, rpos);
    std::uint64_t numel = 1;
    for (int d = 0; d < rank; ++d) {
      const std::size_t pos = r.pos();
      const auto dim = r.get<std::uint32_t>("dims");
      if (dim == 0) throw Error(ErrorKind::kFormat, "zero extent in " + t.name, pos);
      t.dims.push_back(dim);
      numel *= dim;
      if (numel * sizeof(float) > r.remaining())
        throw Error(ErrorKind::kFormat, "truncated checkpoint while reading payload of " + t.name, r.pos());
    }
    t.data.resize(static_cast<std::size_t>(numel));
    r.get_raw(t.data.data(), t.data.size() * sizeof(float), "payload");
    file.tensors.push_back(std::move(t));
  }
  file.iteration = r.get<std::uint64_t>("iteration");
  file.config_hash = r.get<std::uint64_t>("config hash");
  if (r.remaining() != 0) throw Error(ErrorKind::kFormat, "trailing bytes after checkpoint", r.pos());
  return file;
}

void save_checkpoint(const ParamStore& store, const std::string& path, bool with_momentum) {
  const auto bytes = encode_checkpoint(store, with_momentum);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::kIo, "write to '" + path + "' failed");
}

CheckpointFile read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

std::vector<std::string> restore_checkpoint(ParamStore& store, const CheckpointFile& file, bool permissive) {
  std::vector<std::string> warnings;
  std::set<std::string> seen;
  const auto problem = [&](const std::string& msg) {
    if (!permissive) fail(ErrorKind::kConsistency, msg);
    warnings.push_back(msg);
  };
  for (const auto& t : file.tensors) {
    const bool is_momentum = t.name.rfind(kMomentumPrefix, 0) == 0;
    const std::string base = is_momentum ? t.name.substr(kMomentumPrefix.size()) : t.name;
    auto* e = store.find(base);
    if (!e) {
      problem("unknown tensor '" + t.name + "' in checkpoint");
      continue;
    }
    Tensor& dst = is_momentum ? e->momentum : e->value;
    if (static_cast<std::uint64_t>(dst.numel()) != t.data.size() || dims_of(*e) != t.dims)
      fail(ErrorKind::kConsistency, "shape mismatch for '" + t.name + "'");
    std::copy(t.data.begin(), t.data.end(), dst.ptr());
    if (!is_momentum) seen.insert(base);
  }
  for (const auto& e : store.entries())
    if (!seen.count(e.name)) problem("tensor '" + e.name + "' missing from checkpoint");
  store.iteration = file.iteration;
  store.config_hash = file.config_hash;
  return warnings;
}

ParamStore load_checkpoint(const std::string& path) {
  const CheckpointFile file = read_checkpoint(path);
  ParamStore store;
  for (const auto& t : file.tensors) {
    if (t.name.rfind(kMomentumPrefix, 0) == 0) continue;
    const bool running = ends_with(t.name, ".running_mean") || ends_with(t.name, ".running_var");
    store.add(t.name, Tensor(shape_from_dims(t.dims), t.data), !running, ends_with(t.name, ".weight"),
              static_cast<int>(t.dims.size()));
  }
  restore_checkpoint(store, file, true);
  return store;
}

}  // namespace bisenet
