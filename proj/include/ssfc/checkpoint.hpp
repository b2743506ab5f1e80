#pragma once

// Checkpoint container:
//   "SSFC" | u32 version | u32 meta_len | meta (key=value lines, UTF-8)
//   u32 n_arrays | n x { u32 name_len | name | u8 dtype | u32 rank | u64 dims[rank] | u64 offset }
//   u64 payload_len | payload | u64 fnv1a(payload)
// All integers and payload values are little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "ssfc/data_io.hpp"
#include "ssfc/model.hpp"

namespace ssfc {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr char kCheckpointMagic[4] = {'S', 'S', 'F', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public Error {
 public:
  enum class Kind { kCorrupt, kVersion, kArchitecture, kIO };
  CheckpointError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

enum class DType : std::uint8_t { kFloat32 = 1, kFloat64 = 2 };

template <typename T>
constexpr DType dtype_of() {
  if constexpr (std::is_same_v<T, float>) return DType::kFloat32;
  else return DType::kFloat64;
}

struct ArrayRecord {
  std::string name;
  DType dtype = DType::kFloat32;
  Shape shape;
  std::vector<unsigned char> bytes;
};

struct Checkpoint {
  std::map<std::string, std::string> meta;
  std::vector<ArrayRecord> arrays;

  const ArrayRecord* find(const std::string& name) const {
    for (const auto& a : arrays)
      if (a.name == name) return &a;
    return nullptr;
  }

  const std::string& get(const std::string& key) const {
    auto it = meta.find(key);
    if (it == meta.end()) throw CheckpointError(CheckpointError::Kind::kCorrupt, "checkpoint: missing metadata key '" + key + "'");
    return it->second;
  }
};

namespace detail {

inline std::uint64_t fnv1a(const unsigned char* p, std::size_t n) {
  std::uint64_t h = 1469598103934665603ull;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

template <typename U>
void put(std::string& out, U v) {
  char buf[sizeof(U)];
  std::memcpy(buf, &v, sizeof(U));
  out.append(buf, sizeof(U));
}

class Reader {
 public:
  explicit Reader(const std::string& data) : d_(data) {}

  template <typename U>
  U get() {
    need(sizeof(U));
    U v;
    std::memcpy(&v, d_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return v;
  }

  std::string bytes(std::size_t n) {
    need(n);
    std::string s = d_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return d_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (n > d_.size() - pos_) throw CheckpointError(CheckpointError::Kind::kCorrupt, "checkpoint: truncated file");
  }
  const std::string& d_;
  std::size_t pos_ = 0;
};

inline std::size_t dtype_size(DType t) { return t == DType::kFloat32 ? 4 : 8; }

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ck) {
  std::string meta;
  for (const auto& [k, v] : ck.meta) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw Error("checkpoint: metadata key/value may not contain '=' or newlines: " + k);
    }
    meta += k + "=" + v + "\n";
  }
  std::string out(kCheckpointMagic, 4);
  detail::put<std::uint32_t>(out, kCheckpointVersion);
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(meta.size()));
  out += meta;
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(ck.arrays.size()));
  std::uint64_t offset = 0;
  for (const auto& a : ck.arrays) {
    if (a.bytes.size() != numel(a.shape) * detail::dtype_size(a.dtype)) {
      throw Error("checkpoint: array '" + a.name + "' payload does not match its shape");
    }
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(a.name.size()));
    out += a.name;
    detail::put<std::uint8_t>(out, static_cast<std::uint8_t>(a.dtype));
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(a.shape.size()));
    for (auto d : a.shape) detail::put<std::uint64_t>(out, d);
    detail::put<std::uint64_t>(out, offset);
    offset += a.bytes.size();
  }
  detail::put<std::uint64_t>(out, offset);
  std::string payload;
  payload.reserve(offset);
  for (const auto& a : ck.arrays) payload.append(reinterpret_cast<const char*>(a.bytes.data()), a.bytes.size());
  out += payload;
  detail::put<std::uint64_t>(out, detail::fnv1a(reinterpret_cast<const unsigned char*>(payload.data()), payload.size()));
  return out;
}

inline Checkpoint parse_checkpoint(const std::string& data) {
  using K = CheckpointError::Kind;
  detail::Reader r(data);
  if (r.bytes(4) != std::string(kCheckpointMagic, 4)) throw CheckpointError(K::kCorrupt, "checkpoint: bad magic");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError(K::kVersion, "checkpoint: unsupported format version " + std::to_string(version) +
                                           " (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint ck;
  const std::string meta = r.bytes(r.get<std::uint32_t>());
  std::size_t start = 0;
  while (start < meta.size()) {
    const std::size_t end = meta.find('\n', start);
    if (end == std::string::npos) throw CheckpointError(K::kCorrupt, "checkpoint: unterminated metadata line");
    const std::string line = meta.substr(start, end - start);
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) throw CheckpointError(K::kCorrupt, "checkpoint: malformed metadata line '" + line + "'");
    ck.meta[line.substr(0, eq)] = line.substr(eq + 1);
    start = end + 1;
  }
  const auto n = r.get<std::uint32_t>();
  std::vector<std::uint64_t> offsets;
  for (std::uint32_t i = 0; i < n; ++i) {
    ArrayRecord a;
    a.name = r.bytes(r.get<std::uint32_t>());
    const auto dt = r.get<std::uint8_t>();
    if (dt != 1 && dt != 2) throw CheckpointError(K::kCorrupt, "checkpoint: unknown dtype code for '" + a.name + "'");
    a.dtype = static_cast<DType>(dt);
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) throw CheckpointError(K::kCorrupt, "checkpoint: implausible rank for '" + a.name + "'");
    for (std::uint32_t k = 0; k < rank; ++k) a.shape.push_back(static_cast<std::size_t>(r.get<std::uint64_t>()));
    offsets.push_back(r.get<std::uint64_t>());
    ck.arrays.push_back(std::move(a));
  }
  const auto payload_len = r.get<std::uint64_t>();
  if (payload_len + 8 != r.remaining()) throw CheckpointError(K::kCorrupt, "checkpoint: payload length mismatch (truncated?)");
  const std::string payload = r.bytes(payload_len);
  const auto hash = r.get<std::uint64_t>();
  if (hash != detail::fnv1a(reinterpret_cast<const unsigned char*>(payload.data()), payload.size())) {
    throw CheckpointError(K::kCorrupt, "checkpoint: payload checksum mismatch");
  }
  for (std::size_t i = 0; i < ck.arrays.size(); ++i) {
    auto& a = ck.arrays[i];
    const std::uint64_t len = numel(a.shape) * detail::dtype_size(a.dtype);
    if (offsets[i] > payload_len || len > payload_len - offsets[i]) {
      throw CheckpointError(K::kCorrupt, "checkpoint: array '" + a.name + "' exceeds payload");
    }
    a.bytes.assign(payload.begin() + static_cast<std::ptrdiff_t>(offsets[i]),
                   payload.begin() + static_cast<std::ptrdiff_t>(offsets[i] + len));
  }
  return ck;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  const std::string bytes = serialize_checkpoint(ck);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError(CheckpointError::Kind::kIO, "checkpoint: cannot write " + path);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw CheckpointError(CheckpointError::Kind::kIO, "checkpoint: write failed for " + path);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw CheckpointError(CheckpointError::Kind::kIO, "checkpoint: cannot move into place: " + path);
  }
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError(CheckpointError::Kind::kIO, "checkpoint: cannot open " + path);
  std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return parse_checkpoint(data);
}

template <typename T>
ArrayRecord to_record(const std::string& name, const Tensor<T>& t) {
  ArrayRecord a{name, dtype_of<T>(), t.shape(), {}};
  a.bytes.resize(t.size() * sizeof(T));
  std::memcpy(a.bytes.data(), t.ptr(), a.bytes.size());
  return a;
}

template <typename T>
Tensor<T> from_record(const ArrayRecord& a) {
  Tensor<T> t(a.shape);
  if (a.dtype == dtype_of<T>()) {
    std::memcpy(t.ptr(), a.bytes.data(), a.bytes.size());
  } else if (a.dtype == DType::kFloat32) {
    for (std::size_t i = 0; i < t.size(); ++i) {
      float v;
      std::memcpy(&v, a.bytes.data() + 4 * i, 4);
      t[i] = static_cast<T>(v);
    }
  } else {
    for (std::size_t i = 0; i < t.size(); ++i) {
      double v;
      std::memcpy(&v, a.bytes.data() + 8 * i, 8);
      t[i] = static_cast<T>(v);
    }
  }
  return t;
}

template <typename T>
Checkpoint make_checkpoint(SiameseModel<T>& model, std::map<std::string, std::string> extra = {}) {
  Checkpoint ck;
  ck.meta = std::move(extra);
  const auto& c = model.config();
  ck.meta["T"] = std::to_string(c.time_steps);
  ck.meta["v_threshold"] = format_number(c.if_config.v_threshold);
  ck.meta["v_reset"] = format_number(c.if_config.v_reset);
  ck.meta["surrogate_alpha"] = format_number(c.if_config.surrogate_alpha);
  ck.meta["quality_kind"] = to_string(c.quality_kind);
  for (auto& [name, v] : model.named_parameters()) ck.arrays.push_back(to_record(name, v.value()));
  return ck;
}

namespace detail {
inline double meta_number(const Checkpoint& ck, const std::string& key) {
  const std::string& s = ck.get(key);
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw CheckpointError(CheckpointError::Kind::kCorrupt, "checkpoint: bad value for '" + key + "': " + s);
  }
}
}  // namespace detail

/// Builds a model from a checkpoint. Missing or misshapen arrays are an
/// architecture mismatch; the message lists all of them.
template <typename T>
SiameseModel<T> model_from_checkpoint(const Checkpoint& ck) {
  ModelConfig cfg;
  cfg.time_steps = static_cast<std::size_t>(detail::meta_number(ck, "T"));
  cfg.if_config.v_threshold = detail::meta_number(ck, "v_threshold");
  cfg.if_config.v_reset = ck.meta.count("v_reset") ? detail::meta_number(ck, "v_reset") : 0.0;
  cfg.if_config.surrogate_alpha = detail::meta_number(ck, "surrogate_alpha");
  try {
    cfg.quality_kind = parse_quality_kind(ck.get("quality_kind"));
    cfg.if_config.validate();
  } catch (const CheckpointError&) {
    throw;
  } catch (const Error& e) {
    throw CheckpointError(CheckpointError::Kind::kCorrupt, std::string("checkpoint: ") + e.what());
  }
  if (cfg.time_steps < 1) throw CheckpointError(CheckpointError::Kind::kCorrupt, "checkpoint: T must be >= 1");

  SiameseModel<T> model(cfg, 0);
  std::string missing, bad_shape;
  for (auto& [name, v] : model.named_parameters()) {
    const ArrayRecord* a = ck.find(name);
    if (!a) {
      missing += (missing.empty() ? "" : ", ") + name;
      continue;
    }
    if (a->shape != v.shape()) {
      bad_shape += (bad_shape.empty() ? "" : ", ") + name + " " + to_string(a->shape) + " vs " + to_string(v.shape());
      continue;
    }
    v.mutable_value() = from_record<T>(*a);
  }
  if (!missing.empty() || !bad_shape.empty()) {
    std::string msg = "checkpoint does not match the architecture;";
    if (!missing.empty()) msg += " missing arrays: " + missing + ";";
    if (!bad_shape.empty()) msg += " wrong shapes: " + bad_shape + ";";
    throw CheckpointError(CheckpointError::Kind::kArchitecture, msg);
  }
  return model;
}

}  // namespace ssfc
