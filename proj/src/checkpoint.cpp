#include "dfm/checkpoint.hpp"

#include <fmt/format.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "dfm/error.hpp"
#include "dfm/hash.hpp"

namespace dfm {

std::string hex64(std::uint64_t v) { return fmt::format("{:016x}", v); }

namespace {

constexpr char kMagic[8] = {'D', 'F', 'M', 'C', 'K', 'P', 'T', '\0'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  template <typename T>
  void le(T v) {
    if constexpr (std::endian::native == std::endian::big) v = byteswap(v);
    bytes(&v, sizeof v);
  }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    le(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::vector<unsigned char>& buffer() { return buf_; }

  template <typename T>
  static T byteswap(T v) {
    T out{};
    auto* src = reinterpret_cast<unsigned char*>(&v);
    auto* dst = reinterpret_cast<unsigned char*>(&out);
    for (std::size_t i = 0; i < sizeof(T); ++i) dst[i] = src[sizeof(T) - 1 - i];
    return out;
  }

 private:
  std::vector<unsigned char> buf_;
};

class Reader {
 public:
  Reader(const std::vector<unsigned char>& buf, std::size_t end) : buf_(buf), end_(end) {}
  void bytes(void* p, std::size_t n) {
    if (n > end_ - pos_) throw Error("checkpoint truncated");
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
  }
  template <typename T>
  T le() {
    T v;
    bytes(&v, sizeof v);
    if constexpr (std::endian::native == std::endian::big) v = Writer::byteswap(v);
    return v;
  }
  double f64() { return std::bit_cast<double>(le<std::uint64_t>()); }
  std::string str(std::size_t limit) {
    const auto n = le<std::uint32_t>();
    if (n > limit) throw Error("checkpoint string field too long");
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  std::size_t remaining() const { return end_ - pos_; }

 private:
  const std::vector<unsigned char>& buf_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

}  // namespace

void checkpoint_save(const std::string& path, const PosteriorModel& model,
                     const OptimizerState* optimizer, const std::string& tag) {
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.le(kCheckpointVersion);
  w.str(model.spec().describe());
  w.str(tag);
  const auto params = model.params();
  w.le(static_cast<std::uint64_t>(params.size()));
  for (double p : params) w.f64(p);
  w.le(static_cast<std::uint8_t>(optimizer ? 1 : 0));
  if (optimizer) {
    w.le(static_cast<std::uint32_t>(optimizer->kind));
    w.f64(optimizer->lr);
    w.f64(optimizer->beta1);
    w.f64(optimizer->beta2);
    w.f64(optimizer->eps);
    w.le(optimizer->steps);
    w.le(static_cast<std::uint64_t>(optimizer->m.size()));
    for (double v : optimizer->m) w.f64(v);
    for (double v : optimizer->v) w.f64(v);
  }
  const std::uint64_t sum = fnv1a(w.buffer());
  w.le(sum);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(fmt::format("cannot write checkpoint '{}'", path));
  out.write(reinterpret_cast<const char*>(w.buffer().data()),
            static_cast<std::streamsize>(w.buffer().size()));
  if (!out) throw Error(fmt::format("failed writing checkpoint '{}'", path));
}

Checkpoint checkpoint_load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(fmt::format("cannot open checkpoint '{}'", path));
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < sizeof kMagic + 4 + 8 || std::memcmp(buf.data(), kMagic, sizeof kMagic) != 0) {
    throw Error(fmt::format("'{}' is not a checkpoint (bad magic)", path));
  }
  const std::size_t body = buf.size() - 8;
  Reader tail(buf, buf.size());
  {
    std::vector<unsigned char> skip(body);
    tail.bytes(skip.data(), body);
  }
  const auto stored = tail.le<std::uint64_t>();
  const std::uint64_t actual = fnv1a(std::span<const unsigned char>(buf.data(), body));
  if (stored != actual) {
    throw Error(fmt::format("checkpoint '{}' checksum mismatch ({} vs {})", path, hex64(stored),
                            hex64(actual)));
  }

  Reader r(buf, body);
  char magic[8];
  r.bytes(magic, sizeof magic);
  const auto version = r.le<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw Error(fmt::format("checkpoint format version {} unsupported (expected {})", version,
                            kCheckpointVersion));
  }
  const ModelSpec spec = ModelSpec::parse(r.str(1 << 16));
  std::string tag = r.str(1 << 16);
  const auto n = r.le<std::uint64_t>();
  if (n != spec.parameter_count() || n > r.remaining() / 8) {
    throw Error(fmt::format("checkpoint parameter count {} does not match descriptor '{}'", n,
                            spec.describe()));
  }
  std::vector<double> params(static_cast<std::size_t>(n));
  for (double& p : params) p = r.f64();
  std::optional<OptimizerState> opt;
  if (r.le<std::uint8_t>() != 0) {
    OptimizerState s;
    const auto kind = r.le<std::uint32_t>();
    if (kind > 1) throw Error("checkpoint has unknown optimizer kind");
    s.kind = static_cast<OptimizerKind>(kind);
    s.lr = r.f64();
    s.beta1 = r.f64();
    s.beta2 = r.f64();
    s.eps = r.f64();
    s.steps = r.le<std::int64_t>();
    const auto mn = r.le<std::uint64_t>();
    if (mn != 0 && mn != n) throw Error("checkpoint optimizer moments have wrong length");
    s.m.resize(static_cast<std::size_t>(mn));
    s.v.resize(static_cast<std::size_t>(mn));
    for (double& v : s.m) v = r.f64();
    for (double& v : s.v) v = r.f64();
    opt = std::move(s);
  }
  if (r.remaining() != 0) throw Error("checkpoint has trailing bytes");
  return Checkpoint{PosteriorModel::from_spec(spec, std::move(params)), std::move(opt), std::move(tag)};
}

Checkpoint checkpoint_load(const std::string& path, const ModelSpec& expected) {
  Checkpoint c = checkpoint_load(path);
  if (!(c.model.spec() == expected)) {
    throw Error(fmt::format("checkpoint architecture mismatch:\n  file:     {}\n  expected: {}",
                            c.model.spec().describe(), expected.describe()));
  }
  return c;
}

Checkpoint checkpoint_load(const std::string& path, const StateSpace& expected_space) {
  Checkpoint c = checkpoint_load(path);
  if (!(c.model.space() == expected_space)) {
    throw Error(fmt::format("checkpoint state space mismatch:\n  file:     {}\n  expected: {}",
                            c.model.spec().describe(), expected_space.describe()));
  }
  return c;
}

}  // namespace dfm
