#include "extembed/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "extembed/errors.hpp"

namespace extembed {

namespace {

constexpr char kMagic[8] = {'E', 'X', 'T', 'E', 'M', 'B', 'D', '\0'};

std::uint64_t fnv1a(const char* data, std::size_t n) {
  std::uint64_t h = 1469598103934665603ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= 1099511628211ULL;
  }
  return h;
}

class Writer {
 public:
  template <typename T>
  void put(T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    buf_.append(reinterpret_cast<const char*>(&v), sizeof v);
  }
  void put_bytes(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
  void put_string(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    buf_ += s;
  }
  std::string& str() { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(const std::string& bytes, std::size_t end, std::string source) : bytes_(bytes), end_(end), source_(std::move(source)) {}

  template <typename T>
  T get() {
    T v;
    need(sizeof v);
    std::memcpy(&v, bytes_.data() + pos_, sizeof v);
    pos_ += sizeof v;
    return v;
  }
  void get_bytes(void* p, std::size_t n) {
    need(n);
    std::memcpy(p, bytes_.data() + pos_, n);
    pos_ += n;
  }
  std::string get_string() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == end_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > end_) throw DataError(source_ + ": truncated checkpoint");
  }
  const std::string& bytes_;
  std::size_t end_;
  std::string source_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_model(const Model& model) {
  const auto& c = model.config;
  Writer w;
  w.put_bytes(kMagic, sizeof kMagic);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint64_t>(c.hidden_size);
  w.put<std::uint64_t>(c.n_layers);
  w.put<std::uint64_t>(c.n_heads);
  w.put<std::uint64_t>(c.ffn_multiplier);
  w.put<std::uint64_t>(c.vocab_size);
  w.put<std::uint64_t>(c.original_context);
  w.put<std::uint8_t>(c.position_mode == PositionMode::Absolute ? 0 : 1);
  w.put<std::uint64_t>(c.init_seed);
  w.put<double>(c.rope_base);

  const auto& table = model.weights.positions;
  w.put<std::uint8_t>(static_cast<std::uint8_t>(table.layout));
  w.put<std::int64_t>(table.scale);

  std::uint32_t count = 0;
  model.weights.for_each_tensor([&](const std::string&, const Matrix&) { ++count; });
  w.put<std::uint32_t>(count);
  model.weights.for_each_tensor([&](const std::string& name, const Matrix& m) {
    w.put_string(name);
    w.put<std::uint64_t>(static_cast<std::uint64_t>(m.rows()));
    w.put<std::uint64_t>(static_cast<std::uint64_t>(m.cols()));
    w.put_bytes(m.data(), static_cast<std::size_t>(m.size()) * sizeof(double));
  });

  w.put<std::uint64_t>(table.frozen.size());
  for (bool f : table.frozen) w.put<std::uint8_t>(f ? 1 : 0);

  const std::uint64_t sum = fnv1a(w.str().data(), w.str().size());
  w.put<std::uint64_t>(sum);
  return std::move(w.str());
}

Model deserialize_model(const std::string& bytes, const std::string& source) {
  if (bytes.size() < sizeof kMagic + sizeof(std::uint64_t) || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw DataError(source + ": not a checkpoint file");
  }
  const std::size_t body = bytes.size() - sizeof(std::uint64_t);
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + body, sizeof stored);
  if (stored != fnv1a(bytes.data(), body)) throw DataError(source + ": checksum mismatch (corrupted checkpoint)");

  Reader r(bytes, body, source);
  char magic[sizeof kMagic];
  r.get_bytes(magic, sizeof magic);
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw DataError(source + ": unsupported checkpoint version " + std::to_string(version));
  }
  ModelConfig c;
  c.hidden_size = r.get<std::uint64_t>();
  c.n_layers = r.get<std::uint64_t>();
  c.n_heads = r.get<std::uint64_t>();
  c.ffn_multiplier = r.get<std::uint64_t>();
  c.vocab_size = r.get<std::uint64_t>();
  c.original_context = r.get<std::uint64_t>();
  const auto mode = r.get<std::uint8_t>();
  if (mode > 1) throw DataError(source + ": bad position mode");
  c.position_mode = mode == 0 ? PositionMode::Absolute : PositionMode::Rotary;
  c.init_seed = r.get<std::uint64_t>();
  c.rope_base = r.get<double>();
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw DataError(source + ": " + e.what());
  }

  const auto layout = r.get<std::uint8_t>();
  if (layout > 2) throw DataError(source + ": bad table layout");
  const auto scale = r.get<std::int64_t>();

  std::map<std::string, Matrix> tensors;
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.get_string();
    const auto rows = r.get<std::uint64_t>();
    const auto cols = r.get<std::uint64_t>();
    if (rows > (1ULL << 32) || cols > (1ULL << 32)) throw DataError(source + ": implausible shape for " + name);
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    r.get_bytes(m.data(), static_cast<std::size_t>(m.size()) * sizeof(double));
    tensors.emplace(std::move(name), std::move(m));
  }
  const auto nfrozen = r.get<std::uint64_t>();
  std::vector<bool> frozen(nfrozen);
  for (std::uint64_t i = 0; i < nfrozen; ++i) frozen[i] = r.get<std::uint8_t>() != 0;
  if (!r.done()) throw DataError(source + ": trailing bytes after checkpoint body");

  Model model;
  model.config = c;
  // Tensor shapes come from a fresh model of the same config.
  model.weights = init_model(c).weights;
  std::size_t matched = 0;
  model.weights.for_each_tensor([&](const std::string& name, Matrix& m) {
    const auto it = tensors.find(name);
    if (it == tensors.end()) throw DataError(source + ": missing tensor " + name);
    const bool resizable = name == "position_embedding";
    if (it->second.cols() != m.cols() || (!resizable && it->second.rows() != m.rows())) {
      throw DataError(source + ": tensor " + name + " has the wrong shape");
    }
    m = std::move(it->second);
    ++matched;
  });
  if (matched != tensors.size()) throw DataError(source + ": unexpected tensors in checkpoint");

  auto& table = model.weights.positions;
  table.layout = static_cast<TableLayout>(layout);
  table.scale = scale;
  table.frozen = std::move(frozen);
  if (table.frozen.size() != table.rows()) throw DataError(source + ": frozen flags do not match the position table");
  return model;
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  const std::string bytes = serialize_model(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize_model(buf.str(), path.string());
}

}  // namespace extembed
