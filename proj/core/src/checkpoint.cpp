#include "upg/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "upg/errors.hpp"

namespace upg {

namespace {

constexpr std::array<char, 8> kMagic = {'U', 'P', 'G', 'C', 'K', 'P', 'T', '\0'};

class Writer {
 public:
  explicit Writer(std::ostream& os) : os_(os) {}

  void u64(std::uint64_t v) {
    std::array<char, 8> b;
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os_.write(b.data(), b.size());
  }
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void doubles(const std::vector<double>& v) {
    u64(v.size());
    for (double x : v) f64(x);
  }

 private:
  std::ostream& os_;
};

class Reader {
 public:
  explicit Reader(std::istream& is) : is_(is) {}

  std::uint64_t u64() {
    std::array<unsigned char, 8> b;
    if (!is_.read(reinterpret_cast<char*>(b.data()), b.size()))
      throw DataError("checkpoint truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  int small_int() {
    const auto v = i64();
    if (v < -(1LL << 30) || v > (1LL << 30)) throw DataError("checkpoint field out of range");
    return static_cast<int>(v);
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::vector<double> doubles() {
    const auto n = u64();
    if (n > (1ULL << 32)) throw DataError("checkpoint array length out of range");
    std::vector<double> v(n);
    for (auto& x : v) x = f64();
    return v;
  }

 private:
  std::istream& is_;
};

}  // namespace

void write_checkpoint(std::ostream& os, const CheckpointRecord& rec) {
  os.write(kMagic.data(), kMagic.size());
  Writer w(os);
  w.u64(kCheckpointVersion);
  w.u64(rec.step);
  w.u64(rec.seed);
  const auto& v = rec.params.vocab();
  w.i64(v.size);
  w.i64(v.bos);
  w.i64(v.eos);
  w.i64(v.pad);
  w.i64(rec.params.window());
  w.doubles({rec.params.weights().begin(), rec.params.weights().end()});
  w.u64(rec.optimizer.kind == OptimizerKind::kSgd ? 0 : 1);
  w.f64(rec.optimizer.lr);
  w.f64(rec.optimizer.beta1);
  w.f64(rec.optimizer.beta2);
  w.f64(rec.optimizer.eps);
  w.u64(rec.optimizer_state.t);
  w.doubles(rec.optimizer_state.m);
  w.doubles(rec.optimizer_state.v);
  if (!os) throw DataError("failed to write checkpoint");
}

CheckpointRecord read_checkpoint(std::istream& is) {
  std::array<char, 8> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kMagic)
    throw DataError("not a checkpoint file (bad magic)");
  Reader r(is);
  const auto version = r.u64();
  if (version != kCheckpointVersion)
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  const auto step = r.u64();
  const auto seed = r.u64();
  const int size = r.small_int();
  const int bos = r.small_int();
  const int eos = r.small_int();
  const int pad = r.small_int();
  const int window = r.small_int();
  Vocabulary vocab;
  PolicyParams params = [&] {
    try {
      vocab = Vocabulary::make(size, bos, eos, pad);
      auto weights = r.doubles();
      return PolicyParams(vocab, window, std::move(weights));
    } catch (const ConfigError& e) {
      throw DataError(std::string("checkpoint parameters invalid: ") + e.what());
    }
  }();
  OptimizerConfig opt;
  const auto kind = r.u64();
  if (kind > 1) throw DataError("checkpoint optimizer kind invalid");
  opt.kind = kind == 0 ? OptimizerKind::kSgd : OptimizerKind::kAdam;
  opt.lr = r.f64();
  opt.beta1 = r.f64();
  opt.beta2 = r.f64();
  opt.eps = r.f64();
  OptimizerState state;
  state.t = r.u64();
  state.m = r.doubles();
  state.v = r.doubles();
  if (opt.kind == OptimizerKind::kAdam &&
      (state.m.size() != params.size() || state.v.size() != params.size()))
    throw DataError("checkpoint optimizer state does not match parameters");
  return {step, seed, std::move(params), opt, std::move(state)};
}

void save_checkpoint(const std::string& path, const CheckpointRecord& rec) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open checkpoint for writing: " + path);
  write_checkpoint(os, rec);
}

CheckpointRecord load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint: " + path);
  return read_checkpoint(is);
}

}  // namespace upg
