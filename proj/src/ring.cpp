#include "qj/ring.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace qj {

namespace {

uint64_t mulmod_u128(uint64_t a, uint64_t b, uint64_t n) {
  return static_cast<uint64_t>((static_cast<__uint128_t>(a) * b) % n);
}

uint64_t powmod_u64(uint64_t base, uint64_t exp, uint64_t n) {
  uint64_t acc = 1 % n;
  base %= n;
  while (exp != 0) {
    if (exp & 1) acc = mulmod_u128(acc, base, n);
    base = mulmod_u128(base, base, n);
    exp >>= 1;
  }
  return acc;
}

}  // namespace

bool is_prime_u64(uint64_t n) {
  if (n < 2) return false;
  for (uint64_t q : {2ull, 3ull, 5ull, 7ull, 11ull, 13ull, 17ull, 19ull, 23ull, 29ull, 31ull, 37ull}) {
    if (n == q) return true;
    if (n % q == 0) return false;
  }
  uint64_t d = n - 1;
  int r = 0;
  while ((d & 1) == 0) {
    d >>= 1;
    ++r;
  }
  // Deterministic witness set for all 64-bit integers.
  for (uint64_t a : {2ull, 3ull, 5ull, 7ull, 11ull, 13ull, 17ull, 19ull, 23ull, 29ull, 31ull, 37ull}) {
    uint64_t x = powmod_u64(a, d, n);
    if (x == 1 || x == n - 1) continue;
    bool composite = true;
    for (int i = 1; i < r; ++i) {
      x = mulmod_u128(x, x, n);
      if (x == n - 1) {
        composite = false;
        break;
      }
    }
    if (composite) return false;
  }
  return true;
}

Modulus::Modulus(uint64_t prime) : p(prime) {
  if (p < 3 || p >= (1ull << 62)) throw std::invalid_argument("Modulus: prime must be in [3, 2^62)");
  if ((p & 1) == 0 || !is_prime_u64(p)) throw std::invalid_argument("Modulus: value is not an odd prime");
  small_ = p < (1ull << 32);
  if (small_) barrett_ = static_cast<uint64_t>((static_cast<__uint128_t>(1) << 64) / p);
}

uint64_t default_modulus(uint32_t slot_count) {
  if (slot_count == 0 || (slot_count & (slot_count - 1)) != 0)
    throw std::invalid_argument("default_modulus: slot count must be a power of two");
  const uint64_t step = 2ull * slot_count;
  uint64_t c = (1ull << 25);
  c += (step - c % step) % step;  // first candidate >= 2^25 with c % 2N == 0
  ++c;                            // ... and c == 1 (mod 2N)
  while (!is_prime_u64(c)) c += step;
  return c;
}

OutDims out_dims(const ConvShape& s) {
  if (s.stride == 0) throw std::invalid_argument("out_dims: stride must be positive");
  if (s.Hi == 0 || s.Wi == 0 || s.Hf == 0 || s.Wf == 0)
    throw std::invalid_argument("out_dims: zero dimension");
  OutDims d;
  if (s.pad == Padding::same) {
    d.Ho = (s.Hi + s.stride - 1) / s.stride;
    d.Wo = (s.Wi + s.stride - 1) / s.stride;
  } else {
    if (s.Hf > s.Hi || s.Wf > s.Wi)
      throw std::invalid_argument("out_dims: valid padding requires filter <= input");
    d.Ho = (s.Hi - s.Hf) / s.stride + 1;
    d.Wo = (s.Wi - s.Wf) / s.stride + 1;
  }
  return d;
}

namespace {

void check_conv_args(const RingTensor3& x, const Kernel& k, const ConvShape& s) {
  if (x.C != s.Ci || x.H != s.Hi || x.W != s.Wi)
    throw std::invalid_argument("conv: input tensor does not match shape");
  if (k.Co != s.Co || k.Ci != s.Ci || k.Hf != s.Hf || k.Wf != s.Wf)
    throw std::invalid_argument("conv: kernel does not match shape");
}

}  // namespace

RingTensor3 conv_ref(const RingTensor3& x, const Kernel& k, const ConvShape& s, const Modulus& m) {
  check_conv_args(x, k, s);
  const OutDims d = out_dims(s);
  RingTensor3 y(s.Co, d.Ho, d.Wo);

  const int64_t pad_h = (s.pad == Padding::same) ? static_cast<int64_t>((s.Hf - 1) / 2) : 0;
  const int64_t pad_w = (s.pad == Padding::same) ? static_cast<int64_t>((s.Wf - 1) / 2) : 0;

  // Lazy accumulation is safe when terms * (p-1)^2 cannot overflow u64.
  const uint64_t terms = static_cast<uint64_t>(s.Ci) * s.Hf * s.Wf;
  const bool lazy =
      m.p - 1 <= (1ull << 31) &&
      static_cast<__uint128_t>(terms) * (m.p - 1) * (m.p - 1) <= ~0ull;

  const int64_t total = static_cast<int64_t>(s.Co) * d.Ho * d.Wo;
#pragma omp parallel for schedule(static)
  for (int64_t idx = 0; idx < total; ++idx) {
    const uint32_t o = static_cast<uint32_t>(idx / (static_cast<int64_t>(d.Ho) * d.Wo));
    const uint32_t oh = static_cast<uint32_t>((idx / d.Wo) % d.Ho);
    const uint32_t ow = static_cast<uint32_t>(idx % d.Wo);
    const int64_t h0 = static_cast<int64_t>(oh) * s.stride - pad_h;
    const int64_t w0 = static_cast<int64_t>(ow) * s.stride - pad_w;
    uint64_t acc = 0;
    for (uint32_t i = 0; i < s.Ci; ++i) {
      for (uint32_t fh = 0; fh < s.Hf; ++fh) {
        const int64_t ih = h0 + fh;
        if (ih < 0 || ih >= s.Hi) continue;
        for (uint32_t fw = 0; fw < s.Wf; ++fw) {
          const int64_t iw = w0 + fw;
          if (iw < 0 || iw >= s.Wi) continue;
          const uint64_t xv = x.at(i, static_cast<uint32_t>(ih), static_cast<uint32_t>(iw));
          const uint64_t kv = k.at(o, i, fh, fw);
          if (lazy) {
            acc += xv * kv;
          } else {
            acc = m.add(acc, m.mul(xv, kv));
          }
        }
      }
    }
    y.data[static_cast<size_t>(idx)] = lazy ? acc % m.p : acc;
  }
  return y;
}

std::vector<uint64_t> dot_ref(const RingMatrix& w, const std::vector<uint64_t>& x, const Modulus& m) {
  if (w.cols != x.size()) throw std::invalid_argument("dot_ref: dimension mismatch");
  std::vector<uint64_t> y(w.rows, 0);
  const bool lazy =
      m.p - 1 <= (1ull << 31) &&
      static_cast<__uint128_t>(w.cols) * (m.p - 1) * (m.p - 1) <= ~0ull;
#pragma omp parallel for schedule(static)
  for (int64_t r = 0; r < static_cast<int64_t>(w.rows); ++r) {
    uint64_t acc = 0;
    for (uint32_t c = 0; c < w.cols; ++c) {
      if (lazy) {
        acc += w.at(static_cast<uint32_t>(r), c) * x[c];
      } else {
        acc = m.add(acc, m.mul(w.at(static_cast<uint32_t>(r), c), x[c]));
      }
    }
    y[static_cast<size_t>(r)] = lazy ? acc % m.p : acc;
  }
  return y;
}

RingMatrix im2col(const RingTensor3& x, const ConvShape& s, const Modulus& m) {
  (void)m;
  if (x.C != s.Ci || x.H != s.Hi || x.W != s.Wi)
    throw std::invalid_argument("im2col: input tensor does not match shape");
  const OutDims d = out_dims(s);
  RingMatrix r(s.Ci * s.Hf * s.Wf, d.Ho * d.Wo);
  const int64_t pad_h = (s.pad == Padding::same) ? static_cast<int64_t>((s.Hf - 1) / 2) : 0;
  const int64_t pad_w = (s.pad == Padding::same) ? static_cast<int64_t>((s.Wf - 1) / 2) : 0;

#pragma omp parallel for schedule(static)
  for (int64_t col = 0; col < static_cast<int64_t>(r.cols); ++col) {
    const uint32_t oh = static_cast<uint32_t>(col / d.Wo);
    const uint32_t ow = static_cast<uint32_t>(col % d.Wo);
    const int64_t h0 = static_cast<int64_t>(oh) * s.stride - pad_h;
    const int64_t w0 = static_cast<int64_t>(ow) * s.stride - pad_w;
    for (uint32_t i = 0; i < s.Ci; ++i) {
      for (uint32_t fh = 0; fh < s.Hf; ++fh) {
        for (uint32_t fw = 0; fw < s.Wf; ++fw) {
          const int64_t ih = h0 + fh;
          const int64_t iw = w0 + fw;
          uint64_t v = 0;
          if (ih >= 0 && ih < s.Hi && iw >= 0 && iw < s.Wi)
            v = x.at(i, static_cast<uint32_t>(ih), static_cast<uint32_t>(iw));
          r.at(i * s.Hf * s.Wf + fh * s.Wf + fw, static_cast<uint32_t>(col)) = v;
        }
      }
    }
  }
  return r;
}

RingMatrix flatten_kernel(const Kernel& k) {
  RingMatrix r(k.Co, k.Ci * k.Hf * k.Wf);
  for (uint32_t o = 0; o < k.Co; ++o)
    for (uint32_t i = 0; i < k.Ci; ++i)
      for (uint32_t fh = 0; fh < k.Hf; ++fh)
        for (uint32_t fw = 0; fw < k.Wf; ++fw)
          r.at(o, i * k.Hf * k.Wf + fh * k.Wf + fw) = k.at(o, i, fh, fw);
  return r;
}

RingMatrix matmul(const RingMatrix& a, const RingMatrix& b, const Modulus& m) {
  if (a.cols != b.rows) throw std::invalid_argument("matmul: dimension mismatch");
  RingMatrix y(a.rows, b.cols);
  const bool lazy =
      m.p - 1 <= (1ull << 31) &&
      static_cast<__uint128_t>(a.cols) * (m.p - 1) * (m.p - 1) <= ~0ull;
#pragma omp parallel for schedule(static)
  for (int64_t r = 0; r < static_cast<int64_t>(a.rows); ++r) {
    for (uint32_t c = 0; c < b.cols; ++c) {
      uint64_t acc = 0;
      for (uint32_t t = 0; t < a.cols; ++t) {
        if (lazy) {
          acc += a.at(static_cast<uint32_t>(r), t) * b.at(t, c);
        } else {
          acc = m.add(acc, m.mul(a.at(static_cast<uint32_t>(r), t), b.at(t, c)));
        }
      }
      y.at(static_cast<uint32_t>(r), c) = lazy ? acc % m.p : acc;
    }
  }
  return y;
}

uint64_t drelu_scalar(uint64_t v, const Modulus& m) { return m.signed_lift(v) > 0 ? 1 : 0; }

RingTensor3 relu_ref(const RingTensor3& x, const Modulus& m) {
  RingTensor3 y(x.C, x.H, x.W);
  for (size_t i = 0; i < x.data.size(); ++i)
    y.data[i] = m.signed_lift(x.data[i]) > 0 ? x.data[i] : 0;
  return y;
}

uint64_t quantize(double v, double scale, const Modulus& m) {
  const double scaled = v * scale;
  // Guard llround against non-finite / out-of-i64 inputs before the exact
  // range check (half() < 2^61 for every admissible modulus).
  if (!std::isfinite(scaled) || std::fabs(scaled) > 9.0e18)
    throw std::overflow_error("quantize: value exceeds the centered range of the modulus");
  const long long r = std::llround(scaled);
  const long long half = static_cast<long long>(m.half());
  if (r < -half || r > half)
    throw std::overflow_error("quantize: value exceeds the centered range of the modulus");
  return m.from_signed(r);
}

double dequantize(uint64_t v, double scale, const Modulus& m) {
  if (v >= m.p) throw std::invalid_argument("dequantize: residue out of range");
  return static_cast<double>(m.signed_lift(v)) / scale;
}

TensorFixture read_tensor_fixture(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_tensor_fixture: cannot open " + path);
  uint32_t C = 0, H = 0, W = 0;
  uint64_t p = 0;
  if (!(in >> C >> H >> W >> p)) throw std::runtime_error("read_tensor_fixture: bad header in " + path);
  TensorFixture f;
  f.p = p;
  f.tensor = RingTensor3(C, H, W);
  for (auto& v : f.tensor.data) {
    if (!(in >> v)) throw std::runtime_error("read_tensor_fixture: truncated data in " + path);
    if (v >= p) throw std::runtime_error("read_tensor_fixture: residue out of range in " + path);
  }
  return f;
}

void write_tensor_fixture(const std::string& path, const RingTensor3& t, uint64_t p) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_tensor_fixture: cannot open " + path);
  out << t.C << ' ' << t.H << ' ' << t.W << ' ' << p << '\n';
  for (size_t i = 0; i < t.data.size(); ++i) {
    out << t.data[i];
    out << (((i + 1) % 16 == 0) ? '\n' : ' ');
  }
  out << '\n';
}

}  // namespace qj
