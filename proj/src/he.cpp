#include "qj/he.hpp"

#include <cstring>
#include <stdexcept>

namespace qj {

ReferenceBackend::ReferenceBackend(const SlotParams& params)
    : N_(params.N), wire_(params.wire_bytes()), mod_(params.p) {
  params.validate();
  const uint64_t need = 4 + static_cast<uint64_t>(N_) * 8;
  if (wire_ < need)
    throw std::invalid_argument("ReferenceBackend: ct_wire_bytes smaller than the slot payload");
}

KeyHandle ReferenceBackend::keygen(Party owner) {
  std::lock_guard<std::mutex> lk(key_mu_);
  key_owner_.push_back(owner);
  return KeyHandle{static_cast<uint32_t>(key_owner_.size()), owner};
}

void ReferenceBackend::check_ct(const CipherVec& ct) const {
  if (ct.key_id == 0 || ct.key_id > key_owner_.size())
    throw std::invalid_argument("HE: ciphertext references an unknown key");
  if (ct.slots.size() != N_) throw std::invalid_argument("HE: ciphertext slot count mismatch");
}

void ReferenceBackend::check_pt(const PlainVec& pt) const {
  if (pt.slots.size() != N_) throw std::invalid_argument("HE: plaintext slot count mismatch");
}

CipherVec ReferenceBackend::encrypt(const KeyHandle& key, const PlainVec& pt, CostMeter& meter,
                                    Category cat) {
  if (key.id == 0 || key.id > key_owner_.size())
    throw std::invalid_argument("HE: encrypt with unknown key");
  check_pt(pt);
  meter.bump(cat, HeOp::enc);
  return CipherVec{key.id, pt.slots};
}

PlainVec ReferenceBackend::decrypt(const KeyHandle& key, const CipherVec& ct, CostMeter& meter,
                                   Category cat) {
  check_ct(ct);
  if (key.id != ct.key_id)
    throw std::invalid_argument("HE: decrypt key does not match the ciphertext key");
  meter.bump(cat, HeOp::dec);
  return PlainVec{ct.slots};
}

CipherVec ReferenceBackend::add_ct(const CipherVec& a, const CipherVec& b, CostMeter& meter,
                                   Category cat) {
  check_ct(a);
  check_ct(b);
  if (a.key_id != b.key_id) throw std::invalid_argument("HE: add_ct across different keys");
  meter.bump(cat, HeOp::add);
  CipherVec out{a.key_id, std::vector<uint64_t>(N_)};
  const uint64_t p = mod_.p;
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < static_cast<int64_t>(N_); ++i) {
    const uint64_t s = a.slots[i] + b.slots[i];
    out.slots[i] = s >= p ? s - p : s;
  }
  return out;
}

CipherVec ReferenceBackend::add_plain(const CipherVec& a, const PlainVec& b, CostMeter& meter,
                                      Category cat) {
  check_ct(a);
  check_pt(b);
  meter.bump(cat, HeOp::add);
  CipherVec out{a.key_id, std::vector<uint64_t>(N_)};
  const uint64_t p = mod_.p;
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < static_cast<int64_t>(N_); ++i) {
    const uint64_t s = a.slots[i] + b.slots[i];
    out.slots[i] = s >= p ? s - p : s;
  }
  return out;
}

CipherVec ReferenceBackend::cmult(const PlainVec& a, const CipherVec& b, CostMeter& meter,
                                  Category cat) {
  check_pt(a);
  check_ct(b);
  meter.bump(cat, HeOp::cmult);
  CipherVec out{b.key_id, std::vector<uint64_t>(N_)};
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < static_cast<int64_t>(N_); ++i)
    out.slots[i] = mod_.mul(a.slots[i], b.slots[i]);
  return out;
}

std::vector<uint8_t> ReferenceBackend::serialize(const CipherVec& ct) const {
  check_ct(ct);
  std::vector<uint8_t> out(wire_, 0);
  out[0] = static_cast<uint8_t>(ct.key_id);
  out[1] = static_cast<uint8_t>(ct.key_id >> 8);
  out[2] = static_cast<uint8_t>(ct.key_id >> 16);
  out[3] = static_cast<uint8_t>(ct.key_id >> 24);
  for (uint32_t i = 0; i < N_; ++i) {
    const uint64_t v = ct.slots[i];
    for (int b = 0; b < 8; ++b) out[4 + static_cast<size_t>(i) * 8 + b] = static_cast<uint8_t>(v >> (8 * b));
  }
  return out;
}

CipherVec ReferenceBackend::deserialize(std::span<const uint8_t> bytes) const {
  if (bytes.size() != wire_)
    throw std::invalid_argument("HE: serialized ciphertext has the wrong size");
  CipherVec ct;
  ct.key_id = static_cast<uint32_t>(bytes[0]) | (static_cast<uint32_t>(bytes[1]) << 8) |
              (static_cast<uint32_t>(bytes[2]) << 16) | (static_cast<uint32_t>(bytes[3]) << 24);
  ct.slots.resize(N_);
  for (uint32_t i = 0; i < N_; ++i) {
    uint64_t v = 0;
    for (int b = 7; b >= 0; --b) v = (v << 8) | bytes[4 + static_cast<size_t>(i) * 8 + b];
    if (v >= mod_.p) throw std::invalid_argument("HE: serialized slot out of range");
    ct.slots[i] = v;
  }
  if (ct.key_id == 0 || ct.key_id > key_owner_.size())
    throw std::invalid_argument("HE: serialized ciphertext references an unknown key");
  return ct;
}

}  // namespace qj
