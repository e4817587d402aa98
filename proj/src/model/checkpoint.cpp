#include "sinformer/checkpoint.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <iterator>

#include "sinformer/errors.hpp"

namespace sinformer::model {
namespace {

class Writer {
 public:
  template <typename U>
  void put(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) buf.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
  }
  void put_f32(float f) {
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    put(u);
  }
  void put_f64(double f) {
    std::uint64_t u;
    std::memcpy(&u, &f, 8);
    put(u);
  }
  std::vector<unsigned char> buf;
};

class Reader {
 public:
  explicit Reader(const std::vector<unsigned char>& b, std::size_t end) : buf_(b), end_(end) {}

  template <typename U>
  U get(const char* what) {
    need(sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(buf_[pos_ + i]) << (8 * i));
    pos_ += sizeof(U);
    return v;
  }
  float get_f32(const char* what) {
    const auto u = get<std::uint32_t>(what);
    float f;
    std::memcpy(&f, &u, 4);
    return f;
  }
  double get_f64(const char* what) {
    const auto u = get<std::uint64_t>(what);
    double f;
    std::memcpy(&f, &u, 8);
    return f;
  }
  std::string get_str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(buf_.begin() + static_cast<std::ptrdiff_t>(pos_), buf_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n, const char* what) {
    if (pos_ + n > end_) throw FormatError(std::string("truncated while reading ") + what, pos_);
  }
  const std::vector<unsigned char>& buf_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

std::uint32_t crc(const unsigned char* p, std::size_t n) {
  uLong c = crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    c = crc32(c, p, chunk);
    p += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(c);
}

}  // namespace

void require_compatible(const ModelConfig& have, const ModelConfig& want) {
  auto check = [](const char* field, auto a, auto b) {
    if (a != b) throw IncompatibleError(field, "checkpoint has " + std::to_string(a) + ", expected " + std::to_string(b));
  };
  check("m", have.m, want.m);
  check("l", have.l, want.l);
  check("d", have.d, want.d);
  check("L", have.L, want.L);
  check("h", have.h(), want.h());
  for (std::size_t i = 0; i < have.scales.size(); ++i) check("scales", have.scales[i], want.scales[i]);
  check("d_k", have.d_k, want.d_k);
  check("d_f", have.d_f, want.d_f);
  check("K", have.K, want.K);
  if (have.conv_mode != want.conv_mode)
    throw IncompatibleError("conv_mode", "checkpoint has " + conv_mode_name(have.conv_mode) + ", expected " +
                                             conv_mode_name(want.conv_mode));
  check("rope_base", have.rope_base, want.rope_base);
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams<float>& params) {
  const auto& c = params.cfg;
  Writer w;
  for (char ch : {'S', 'F', 'C', 'K'}) w.put(static_cast<std::uint8_t>(ch));
  w.put(kCheckpointVersion);
  for (std::size_t v : {c.m, c.l, c.d, c.L, c.h()}) w.put(static_cast<std::uint32_t>(v));
  for (std::size_t s : c.scales) w.put(static_cast<std::uint32_t>(s));
  for (std::size_t v : {c.d_k, c.d_f, c.K}) w.put(static_cast<std::uint32_t>(v));
  w.put(static_cast<std::uint8_t>(c.conv_mode));
  w.put_f64(c.rope_base);
  const auto named = params.named();
  w.put(static_cast<std::uint32_t>(named.size()));
  for (const auto& nt : named) {
    w.put(static_cast<std::uint16_t>(nt.name.size()));
    for (char ch : nt.name) w.put(static_cast<std::uint8_t>(ch));
    w.put(static_cast<std::uint8_t>(nt.tensor.rank()));
    for (std::size_t dim : nt.tensor.shape()) w.put(static_cast<std::uint32_t>(dim));
    for (float v : nt.tensor.data()) w.put_f32(v);
  }
  w.put(crc(w.buf.data(), w.buf.size()));

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(w.buf.data()), static_cast<std::streamsize>(w.buf.size()));
  f.close();
  if (!f) throw IoError("write failed: " + path.string());
}

ModelParams<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  const std::vector<unsigned char> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (buf.size() < 10) throw FormatError("truncated checkpoint", buf.size());
  const std::size_t body = buf.size() - 4;
  if (std::memcmp(buf.data(), "SFCK", 4) != 0) throw FormatError("bad magic", 0);

  Reader r(buf, body);
  (void)r.get_str(4, "magic");
  const auto version = r.get<std::uint16_t>("version");
  if (version != kCheckpointVersion) throw FormatError("unsupported version " + std::to_string(version), 4);
  const std::uint32_t stored = static_cast<std::uint32_t>(buf[body]) | static_cast<std::uint32_t>(buf[body + 1]) << 8 |
           static_cast<std::uint32_t>(buf[body + 2]) << 16 | static_cast<std::uint32_t>(buf[body + 3]) << 24;
  if (stored != crc(buf.data(), body)) throw FormatError("checksum mismatch", body);

  ModelConfig c;
  c.m = r.get<std::uint32_t>("m");
  c.l = r.get<std::uint32_t>("l");
  c.d = r.get<std::uint32_t>("d");
  c.L = r.get<std::uint32_t>("L");
  const std::size_t h = r.get<std::uint32_t>("h");
  if (h > 4096) throw FormatError("implausible head count", r.pos() - 4);
  c.scales.resize(h);
  for (auto& s : c.scales) s = r.get<std::uint32_t>("scales");
  c.d_k = r.get<std::uint32_t>("d_k");
  c.d_f = r.get<std::uint32_t>("d_f");
  c.K = r.get<std::uint32_t>("K");
  const auto mode = r.get<std::uint8_t>("conv_mode");
  if (mode > 1) throw FormatError("unknown conv_mode", r.pos() - 1);
  c.conv_mode = static_cast<ConvMode>(mode);
  c.rope_base = r.get_f64("rope_base");
  const std::size_t cfg_end = r.pos();
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("stored config invalid: ") + e.what(), cfg_end);
  }

  auto params = ModelParams<float>::init(c, 0);
  const auto named = params.named();
  const auto count = r.get<std::uint32_t>("tensor count");
  if (count != named.size())
    throw FormatError("tensor count " + std::to_string(count) + " != " + std::to_string(named.size()), r.pos() - 4);
  for (const auto& nt : named) {
    const std::size_t at = r.pos();
    const auto len = r.get<std::uint16_t>("name length");
    const auto name = r.get_str(len, "name");
    if (name != nt.name) throw FormatError("expected tensor '" + nt.name + "', found '" + name + "'", at);
    const auto rank = r.get<std::uint8_t>("rank");
    Shape shape(rank);
    for (auto& dim : shape) dim = r.get<std::uint32_t>("dims");
    if (shape != nt.tensor.shape())
      throw FormatError("tensor '" + name + "' has shape " + shape_str(shape) + ", expected " +
                            shape_str(nt.tensor.shape()),
                        at);
    auto t = nt.tensor;
    for (auto& v : t.data()) v = r.get_f32("tensor data");
  }
  if (r.pos() != body) throw FormatError("trailing bytes before checksum", r.pos());
  return params;
}

ModelParams<float> load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected) {
  auto p = load_checkpoint(path);
  require_compatible(p.cfg, expected);
  return p;
}

}  // namespace sinformer::model
