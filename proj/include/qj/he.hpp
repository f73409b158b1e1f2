// Minimal SIMD homomorphic-encryption contract with cost metering.
//
// The protocol needs exactly five operations from an HE scheme: key
// generation, encrypt, decrypt, ciphertext-ciphertext addition /
// ciphertext-plaintext addition, and plaintext-ciphertext slotwise
// multiplication.  Deliberately absent: rotations, slot extraction and
// ciphertext-ciphertext multiplication — the engine is designed so they are
// never needed, and the meter's rot/extr counters exist only to prove they
// stay zero.
//
// ReferenceBackend is a functional simulation: slot vectors move in the
// clear, sized and serialized like real ciphertexts, so transcripts and cost
// counters are faithful while results stay bit-checkable.  Swapping in a real
// lattice backend means implementing HeBackend against the same contract.
#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <memory>
#include <mutex>
#include <span>
#include <vector>

#include "qj/plan.hpp"
#include "qj/ring.hpp"

namespace qj {

enum class Party : uint8_t { client = 0, server = 1 };

enum class Phase : uint8_t { offline = 0, online = 1 };

// Attribution of a metered operation or transmitted frame.
//  - inqueue: work for the regular in-queue batch.
//  - prior: work attributable to an urgent (queue-jumping) input.
//  - common_drelu: the shared activation-sign subprotocol.
enum class CostAttr : uint8_t { inqueue = 0, prior = 1, common_drelu = 2 };

struct Category {
  Phase phase = Phase::online;
  CostAttr attr = CostAttr::inqueue;
};

enum class HeOp : uint8_t { enc = 0, dec = 1, add = 2, cmult = 3, rot = 4, extr = 5 };

constexpr const char* to_string(HeOp op) {
  switch (op) {
    case HeOp::enc: return "enc";
    case HeOp::dec: return "dec";
    case HeOp::add: return "add";
    case HeOp::cmult: return "cmult";
    case HeOp::rot: return "rot";
    case HeOp::extr: return "extr";
  }
  return "?";
}
constexpr const char* to_string(Phase ph) { return ph == Phase::offline ? "offline" : "online"; }
constexpr const char* to_string(CostAttr a) {
  switch (a) {
    case CostAttr::inqueue: return "inqueue";
    case CostAttr::prior: return "prior";
    case CostAttr::common_drelu: return "common_drelu";
  }
  return "?";
}

// Plain snapshot of all counters; supports deltas.
struct CostSnapshot {
  uint64_t v[2][3][6] = {};

  uint64_t get(Phase ph, CostAttr a, HeOp op) const {
    return v[static_cast<size_t>(ph)][static_cast<size_t>(a)][static_cast<size_t>(op)];
  }
  uint64_t op_total(HeOp op) const {
    uint64_t t = 0;
    for (int ph = 0; ph < 2; ++ph)
      for (int a = 0; a < 3; ++a) t += v[ph][a][static_cast<size_t>(op)];
    return t;
  }
  // Everything attributed to urgent inputs, all phases and ops.
  uint64_t prior_total() const {
    uint64_t t = 0;
    for (int ph = 0; ph < 2; ++ph)
      for (int op = 0; op < 6; ++op) t += v[ph][static_cast<size_t>(CostAttr::prior)][op];
    return t;
  }
  CostSnapshot operator-(const CostSnapshot& o) const {
    CostSnapshot d;
    for (int ph = 0; ph < 2; ++ph)
      for (int a = 0; a < 3; ++a)
        for (int op = 0; op < 6; ++op) d.v[ph][a][op] = v[ph][a][op] - o.v[ph][a][op];
    return d;
  }
  bool operator==(const CostSnapshot& o) const {
    for (int ph = 0; ph < 2; ++ph)
      for (int a = 0; a < 3; ++a)
        for (int op = 0; op < 6; ++op)
          if (v[ph][a][op] != o.v[ph][a][op]) return false;
    return true;
  }
};

// Concurrent counter bank (both parties' threads may bump it).
class CostMeter {
 public:
  void bump(Category cat, HeOp op, uint64_t k = 1) {
    c_[static_cast<size_t>(cat.phase)][static_cast<size_t>(cat.attr)][static_cast<size_t>(op)]
        .fetch_add(k, std::memory_order_relaxed);
  }
  uint64_t get(Phase ph, CostAttr a, HeOp op) const {
    return c_[static_cast<size_t>(ph)][static_cast<size_t>(a)][static_cast<size_t>(op)].load(
        std::memory_order_relaxed);
  }
  CostSnapshot snapshot() const {
    CostSnapshot s;
    for (int ph = 0; ph < 2; ++ph)
      for (int a = 0; a < 3; ++a)
        for (int op = 0; op < 6; ++op) s.v[ph][a][op] = c_[ph][a][op].load(std::memory_order_relaxed);
    return s;
  }
  void reset() {
    for (auto& a2 : c_)
      for (auto& a1 : a2)
        for (auto& c : a1) c.store(0, std::memory_order_relaxed);
  }

 private:
  std::atomic<uint64_t> c_[2][3][6] = {};
};

struct KeyHandle {
  uint32_t id = 0;
  Party owner = Party::client;
};

struct PlainVec {
  std::vector<uint64_t> slots;
};

struct CipherVec {
  uint32_t key_id = 0;
  std::vector<uint64_t> slots;  // simulated payload
};

class HeBackend {
 public:
  virtual ~HeBackend() = default;

  virtual uint32_t slot_count() const = 0;
  virtual uint64_t ct_wire_bytes() const = 0;
  virtual const Modulus& modulus() const = 0;

  virtual KeyHandle keygen(Party owner) = 0;
  virtual CipherVec encrypt(const KeyHandle& key, const PlainVec& pt, CostMeter& meter,
                            Category cat) = 0;
  virtual PlainVec decrypt(const KeyHandle& key, const CipherVec& ct, CostMeter& meter,
                           Category cat) = 0;
  // Slotwise ct + ct (same key).
  virtual CipherVec add_ct(const CipherVec& a, const CipherVec& b, CostMeter& meter,
                           Category cat) = 0;
  // Slotwise ct + plaintext.
  virtual CipherVec add_plain(const CipherVec& a, const PlainVec& b, CostMeter& meter,
                              Category cat) = 0;
  // Slotwise plaintext * ct.
  virtual CipherVec cmult(const PlainVec& a, const CipherVec& b, CostMeter& meter,
                          Category cat) = 0;

  // Wire form: [key_id u32 LE][N slot residues, 8 bytes LE each], zero-padded
  // to ct_wire_bytes (models the ciphertext expansion of a real scheme).
  virtual std::vector<uint8_t> serialize(const CipherVec& ct) const = 0;
  virtual CipherVec deserialize(std::span<const uint8_t> bytes) const = 0;
};

class ReferenceBackend final : public HeBackend {
 public:
  explicit ReferenceBackend(const SlotParams& params);

  uint32_t slot_count() const override { return N_; }
  uint64_t ct_wire_bytes() const override { return wire_; }
  const Modulus& modulus() const override { return mod_; }

  KeyHandle keygen(Party owner) override;
  CipherVec encrypt(const KeyHandle& key, const PlainVec& pt, CostMeter& meter,
                    Category cat) override;
  PlainVec decrypt(const KeyHandle& key, const CipherVec& ct, CostMeter& meter,
                   Category cat) override;
  CipherVec add_ct(const CipherVec& a, const CipherVec& b, CostMeter& meter, Category cat) override;
  CipherVec add_plain(const CipherVec& a, const PlainVec& b, CostMeter& meter,
                      Category cat) override;
  CipherVec cmult(const PlainVec& a, const CipherVec& b, CostMeter& meter, Category cat) override;

  std::vector<uint8_t> serialize(const CipherVec& ct) const override;
  CipherVec deserialize(std::span<const uint8_t> bytes) const override;

 private:
  void check_ct(const CipherVec& ct) const;
  void check_pt(const PlainVec& pt) const;

  uint32_t N_;
  uint64_t wire_;
  Modulus mod_;
  std::mutex key_mu_;
  std::vector<Party> key_owner_;  // index = key id - 1
};

}  // namespace qj
