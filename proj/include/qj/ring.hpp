// Modular ring arithmetic and channel-major tensors.
//
// Everything downstream (secret sharing, the SIMD HE backend, the inference
// protocol) works over Z_p for an odd prime p.  This header provides the
// prime modulus type with Barrett-accelerated multiplication, dense tensors
// in channel-major (C,H,W) layout, convolution geometry, reference kernels
// (convolution, dot product, im2col) and fixed-point encode/decode helpers.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace qj {

// Deterministic Miller-Rabin for 64-bit integers.
bool is_prime_u64(uint64_t n);

// Odd prime modulus, 3 <= p < 2^62.  Construction validates primality.
struct Modulus {
  uint64_t p = 0;

  explicit Modulus(uint64_t prime);

  uint64_t add(uint64_t a, uint64_t b) const {
    uint64_t s = a + b;
    return s >= p ? s - p : s;
  }
  uint64_t sub(uint64_t a, uint64_t b) const { return a >= b ? a - b : a + (p - b); }
  uint64_t neg(uint64_t a) const { return a == 0 ? 0 : p - a; }

  uint64_t mul(uint64_t a, uint64_t b) const {
    if (small_) {
      // Barrett reduction: q ~= floor(a*b / p), remainder within one
      // conditional subtraction.  Valid because a,b < p < 2^32.
      const uint64_t ab = a * b;
      const uint64_t q = static_cast<uint64_t>((static_cast<__uint128_t>(ab) * barrett_) >> 64);
      uint64_t r = ab - q * p;
      if (r >= p) r -= p;
      return r;
    }
    return static_cast<uint64_t>((static_cast<__uint128_t>(a) * b) % p);
  }

  // Centered representative in (-p/2, p/2].
  int64_t signed_lift(uint64_t v) const {
    return v <= half() ? static_cast<int64_t>(v) : static_cast<int64_t>(v) - static_cast<int64_t>(p);
  }
  uint64_t from_signed(int64_t v) const {
    int64_t m = v % static_cast<int64_t>(p);
    if (m < 0) m += static_cast<int64_t>(p);
    return static_cast<uint64_t>(m);
  }
  uint64_t half() const { return p >> 1; }

  // True when the fast 64-bit Barrett path applies (p < 2^32).
  bool fits_small() const { return small_; }

 private:
  uint64_t barrett_ = 0;  // floor(2^64 / p), valid when small_
  bool small_ = false;
};

// Smallest prime >= 2^25 congruent to 1 mod 2N (SIMD-batching friendly).
uint64_t default_modulus(uint32_t slot_count);

// Dense rank-3 tensor, channel-major: data[(c*H + h)*W + w].
struct RingTensor3 {
  uint32_t C = 0, H = 0, W = 0;
  std::vector<uint64_t> data;

  RingTensor3() = default;
  RingTensor3(uint32_t c, uint32_t h, uint32_t w)
      : C(c), H(h), W(w), data(static_cast<size_t>(c) * h * w, 0) {}

  size_t size() const { return data.size(); }
  uint64_t& at(uint32_t c, uint32_t h, uint32_t w) {
    return data[(static_cast<size_t>(c) * H + h) * W + w];
  }
  uint64_t at(uint32_t c, uint32_t h, uint32_t w) const {
    return data[(static_cast<size_t>(c) * H + h) * W + w];
  }
};

// Convolution kernel, layout data[((o*Ci + i)*Hf + fh)*Wf + fw].
struct Kernel {
  uint32_t Co = 0, Ci = 0, Hf = 0, Wf = 0;
  std::vector<uint64_t> data;

  Kernel() = default;
  Kernel(uint32_t co, uint32_t ci, uint32_t hf, uint32_t wf)
      : Co(co), Ci(ci), Hf(hf), Wf(wf), data(static_cast<size_t>(co) * ci * hf * wf, 0) {}

  size_t size() const { return data.size(); }
  uint64_t& at(uint32_t o, uint32_t i, uint32_t fh, uint32_t fw) {
    return data[((static_cast<size_t>(o) * Ci + i) * Hf + fh) * Wf + fw];
  }
  uint64_t at(uint32_t o, uint32_t i, uint32_t fh, uint32_t fw) const {
    return data[((static_cast<size_t>(o) * Ci + i) * Hf + fh) * Wf + fw];
  }
};

enum class Padding { same, valid };

struct ConvShape {
  uint32_t Ci = 0, Hi = 0, Wi = 0;
  uint32_t Co = 0, Hf = 0, Wf = 0;
  uint32_t stride = 1;
  Padding pad = Padding::same;
};

struct OutDims {
  uint32_t Ho = 0, Wo = 0;
};

// Output spatial dims.  same: ceil(Hi/stride) x ceil(Wi/stride);
// valid: floor((Hi-Hf)/stride)+1, throws if the filter exceeds the input.
OutDims out_dims(const ConvShape& s);

// Row-major matrix over Z_p.
struct RingMatrix {
  uint32_t rows = 0, cols = 0;
  std::vector<uint64_t> data;

  RingMatrix() = default;
  RingMatrix(uint32_t r, uint32_t c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0) {}

  uint64_t& at(uint32_t r, uint32_t c) { return data[static_cast<size_t>(r) * cols + c]; }
  uint64_t at(uint32_t r, uint32_t c) const { return data[static_cast<size_t>(r) * cols + c]; }
};

// Plaintext convolution (OpenMP-parallel, lazy accumulation when the term
// count permits).  Zero padding; for `same` padding the receptive-field
// anchor offset is (Hf-1)/2 regardless of stride.
RingTensor3 conv_ref(const RingTensor3& x, const Kernel& k, const ConvShape& s, const Modulus& m);

// Dot product layer: w (n_o x n_i) applied to x (length n_i).
std::vector<uint64_t> dot_ref(const RingMatrix& w, const std::vector<uint64_t>& x, const Modulus& m);

// Receptive-field matrix: rows = Ci*Hf*Wf (row index i*Hf*Wf + fr*Wf + fc,
// channel slowest), cols = Ho*Wo (col index oh*Wo + ow).  Out-of-bounds taps
// contribute zero.
RingMatrix im2col(const RingTensor3& x, const ConvShape& s, const Modulus& m);

// Kernel flattened to Co x (Ci*Hf*Wf), row layout matching im2col rows.
RingMatrix flatten_kernel(const Kernel& k);

// a (r x n) * b (n x c) over Z_p.
RingMatrix matmul(const RingMatrix& a, const RingMatrix& b, const Modulus& m);

// Elementwise ReLU / its derivative on centered representatives.
// drelu(v) = 1 iff signed_lift(v) > 0 (so drelu(0) = 0).
uint64_t drelu_scalar(uint64_t v, const Modulus& m);
RingTensor3 relu_ref(const RingTensor3& x, const Modulus& m);

// Fixed-point encode/decode: quantize rounds v*scale to the nearest integer
// and throws std::overflow_error if the result leaves (-p/2, p/2].
uint64_t quantize(double v, double scale, const Modulus& m);
double dequantize(uint64_t v, double scale, const Modulus& m);

// Tensor fixture text format: header "C H W p" followed by C*H*W residues.
struct TensorFixture {
  RingTensor3 tensor;
  uint64_t p = 0;
};
TensorFixture read_tensor_fixture(const std::string& path);
void write_tensor_fixture(const std::string& path, const RingTensor3& t, uint64_t p);

}  // namespace qj
