#include "bvr/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "bvr/error.hpp"

namespace bvr {

namespace {

constexpr char kMagic[8] = {'B', 'V', 'R', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kFormatVersion = 1;
constexpr std::uint32_t kMaxString = 1u << 26;

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}

  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    le(bits, 8);
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void matrix(const Matrix& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) f64(m.data()[i]);
  }

 private:
  void le(std::uint64_t v, int bytes) {
    char buf[8];
    for (int i = 0; i < bytes; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out_.write(buf, bytes);
  }
  std::ostream& out_;
};

class ReaderStream {
 public:
  ReaderStream(std::istream& in, std::string origin) : in_(in), origin_(std::move(origin)) {}

  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  std::uint64_t u64() { return le(8); }
  double f64() {
    const std::uint64_t bits = le(8);
    double v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
  }
  std::string str() {
    const std::uint32_t n = u32();
    if (n > kMaxString) fail("string length " + std::to_string(n) + " out of range");
    std::string s(n, '\0');
    read(s.data(), n);
    return s;
  }
  Matrix matrix(std::uint32_t rows, std::uint32_t cols) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = f64();
    return m;
  }
  void read(char* dst, std::size_t n) {
    in_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) fail("truncated file");
  }
  [[noreturn]] void fail(const std::string& what) const { throw FormatError(origin_ + ": " + what); }

 private:
  std::uint64_t le(int bytes) {
    unsigned char buf[8];
    read(reinterpret_cast<char*>(buf), static_cast<std::size_t>(bytes));
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return v;
  }
  std::istream& in_;
  std::string origin_;
};

void check_extent(ReaderStream& r, std::uint32_t rows, std::uint32_t cols) {
  if (static_cast<std::uint64_t>(rows) * cols > (1ull << 31)) r.fail("array extent out of range");
}

}  // namespace

const NamedArray* Checkpoint::find(const std::string& name) const {
  for (const auto& p : params) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint '" + path.string() + "'");
  Writer w(out);
  out.write(kMagic, sizeof kMagic);
  w.u32(kFormatVersion);
  w.str(c.stage);
  w.str(c.fingerprint);
  w.u64(static_cast<std::uint64_t>(c.step));
  w.str(c.config_json);
  w.u32(static_cast<std::uint32_t>(c.params.size()));
  for (const auto& p : c.params) {
    w.str(p.name);
    w.u32(static_cast<std::uint32_t>(p.value.rows()));
    w.u32(static_cast<std::uint32_t>(p.value.cols()));
    w.matrix(p.value);
  }
  w.u64(static_cast<std::uint64_t>(c.optimizer_step));
  w.u32(static_cast<std::uint32_t>(c.moments.size()));
  for (const auto& m : c.moments) {
    w.str(m.name);
    w.u32(static_cast<std::uint32_t>(m.first.rows()));
    w.u32(static_cast<std::uint32_t>(m.first.cols()));
    w.matrix(m.first);
    w.matrix(m.second);
  }
  if (!out) throw IoError("failed writing checkpoint '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) {
    throw Error("missing-checkpoint", "checkpoint '" + path.string() + "' does not exist");
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  ReaderStream r(in, path.string());
  char magic[8];
  r.read(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof magic) != 0) r.fail("not a checkpoint (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kFormatVersion) r.fail("unsupported checkpoint version " + std::to_string(version));
  Checkpoint c;
  c.stage = r.str();
  c.fingerprint = r.str();
  c.step = static_cast<std::int64_t>(r.u64());
  c.config_json = r.str();
  const std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    NamedArray p;
    p.name = r.str();
    const std::uint32_t rows = r.u32();
    const std::uint32_t cols = r.u32();
    check_extent(r, rows, cols);
    p.value = r.matrix(rows, cols);
    c.params.push_back(std::move(p));
  }
  c.optimizer_step = static_cast<std::int64_t>(r.u64());
  const std::uint32_t m = r.u32();
  for (std::uint32_t i = 0; i < m; ++i) {
    optim::Adam::Moment mo;
    mo.name = r.str();
    const std::uint32_t rows = r.u32();
    const std::uint32_t cols = r.u32();
    check_extent(r, rows, cols);
    mo.first = r.matrix(rows, cols);
    mo.second = r.matrix(rows, cols);
    c.moments.push_back(std::move(mo));
  }
  if (in.peek() != std::char_traits<char>::eof()) r.fail("trailing bytes");
  return c;
}

std::vector<NamedArray> snapshot(const nn::ParamSet& params) {
  std::vector<NamedArray> out;
  out.reserve(params.size());
  for (const auto& p : params.items()) out.push_back({p.name, p.var.value()});
  return out;
}

void restore(const nn::ParamSet& params, const std::vector<NamedArray>& values) {
  for (auto p : params.items()) {
    const NamedArray* found = nullptr;
    for (const auto& v : values) {
      if (v.name == p.name) {
        found = &v;
        break;
      }
    }
    if (!found) throw Error("checkpoint-mismatch", "checkpoint lacks parameter '" + p.name + "'");
    if (found->value.rows() != p.var.rows() || found->value.cols() != p.var.cols()) {
      throw Error("checkpoint-mismatch", "parameter '" + p.name + "' has a different shape in the checkpoint");
    }
    p.var.mutable_value() = found->value;
  }
}

void require_compatible(const Checkpoint& checkpoint, const std::string& stage, const std::string& fingerprint) {
  if (checkpoint.stage != stage) {
    throw Error("fingerprint-mismatch", "checkpoint is for stage '" + checkpoint.stage + "', expected '" + stage + "'");
  }
  if (checkpoint.fingerprint != fingerprint) {
    throw Error("fingerprint-mismatch",
                "model structure differs from the checkpoint (" + checkpoint.fingerprint + " vs " + fingerprint + ")");
  }
}

}  // namespace bvr
