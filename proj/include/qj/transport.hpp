// Framed two-party channel, transcript accounting, and network models.
//
// Every protocol message crosses a Link as a length-prefixed frame.  The
// frame itself carries only wire data (magic, type, sequence, payload); the
// cost category is transcript metadata — the sender tags frames on send and
// the receiver, running the same lockstep protocol, supplies the expected
// category on receive.  Latency is always a model derived from byte and
// round counts under a named network profile, never a wall-clock claim.
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qj/he.hpp"

namespace qj {

enum class FrameType : uint8_t {
  ct = 0x01,
  plain_share = 0x02,
  drelu = 0x03,
  control = 0x04,
  merged_final_share = 0x05,
};

enum class Dir : uint8_t { c2s = 0, s2c = 1 };

constexpr uint8_t kFrameMagic[4] = {0x51, 0x4A, 0x46, 0x31};  // "QJF1"
constexpr size_t kFrameHeaderBytes = 4 + 1 + 8 + 4;  // magic, type, seq, len

struct Frame {
  FrameType type = FrameType::control;
  uint64_t seq = 0;
  std::vector<uint8_t> payload;

  uint64_t wire_bytes() const { return kFrameHeaderBytes + payload.size(); }
};

std::vector<uint8_t> encode_frame(const Frame& f);

// Incremental stream parser; throws std::runtime_error on a malformed magic
// or an oversized length field.  Length-prefixed framing means payload bytes
// can never be mistaken for a header, so a valid stream never desynchronizes.
class FrameParser {
 public:
  void feed(std::span<const uint8_t> bytes);
  std::optional<Frame> next();

 private:
  std::vector<uint8_t> buf_;
  size_t consumed_ = 0;
};

// ---------------------------------------------------------------------------
// Transcript: ordered frame metadata with byte/category accounting.

struct FrameMeta {
  Dir dir = Dir::c2s;
  FrameType type = FrameType::control;
  uint64_t seq = 0;
  uint64_t bytes = 0;  // wire bytes including the frame header
  Category cat;
  // Byte carve-out attributed to an urgent input when a frame aggregates
  // urgent data with other content (merged final share).  For frames whose
  // category is already `prior`, all bytes count as urgent.
  uint64_t prior_bytes = 0;
};

class Transcript {
 public:
  void add(const FrameMeta& m) { frames_.push_back(m); }
  const std::vector<FrameMeta>& frames() const { return frames_; }
  void clear() { frames_.clear(); }

  uint64_t total_bytes() const;
  // Bytes attributed to (phase, attr); merged-frame carve-outs are moved from
  // the frame's own category to `prior`.
  uint64_t bytes(Phase ph, CostAttr attr) const;
  uint64_t prior_bytes_total() const;

 private:
  std::vector<FrameMeta> frames_;
};

// Half-round count: 0.5 times the number of maximal same-direction runs in
// the filtered frame sequence.  An empty filter keeps every frame.
double rounds(std::span<const FrameMeta> frames,
              const std::function<bool(const FrameMeta&)>& keep = {});
double rounds(const Transcript& t, const std::function<bool(const FrameMeta&)>& keep = {});

// ---------------------------------------------------------------------------
// Network profiles.

struct NetProfile {
  std::string name;
  double bandwidth_bps = 0;
  double rtt_s = 0;
};

// lan(3 Gbps, 0.8 ms), wan1(100 Mbps, 40 ms), wan2(100 Mbps, 80 ms),
// wan3(200 Mbps, 40 ms), wan4(200 Mbps, 80 ms).
const std::vector<NetProfile>& net_profiles();
NetProfile profile_by_name(const std::string& name);

// Modeled (not measured) latency: bytes*8/bandwidth + rounds*rtt.
double model_latency_s(uint64_t total_bytes, double round_count, const NetProfile& prof);
double model_latency_s(const Transcript& t, const NetProfile& prof);

// ---------------------------------------------------------------------------
// Byte channels.

class ByteChannel {
 public:
  virtual ~ByteChannel() = default;
  virtual void send_bytes(std::span<const uint8_t> bytes) = 0;
  // Blocking exact-length read; throws std::runtime_error if the peer closed
  // mid-message.
  virtual void recv_bytes(std::span<uint8_t> out) = 0;
};

// Bounded in-process duplex pipe (two endpoints).  The bound provides
// backpressure so a fast sender cannot buffer a whole session.
std::pair<std::unique_ptr<ByteChannel>, std::unique_ptr<ByteChannel>> make_inproc_pair(
    size_t capacity_bytes = 1 << 22);

// Localhost TCP pair: returns (client endpoint, server endpoint).
std::pair<std::unique_ptr<ByteChannel>, std::unique_ptr<ByteChannel>> make_tcp_pair();

// ---------------------------------------------------------------------------
// Link: the per-party framed endpoint with transcript + optional tap.

struct FrameTap {
  virtual ~FrameTap() = default;
  virtual void on_frame(const FrameMeta& meta, std::span<const uint8_t> payload) = 0;
};

class Link {
 public:
  // `out_dir` is the direction of frames this party sends.
  Link(ByteChannel& ch, Dir out_dir, Transcript* transcript = nullptr, FrameTap* tap = nullptr);

  void send(FrameType type, std::span<const uint8_t> payload, Category cat,
            uint64_t prior_bytes = 0);
  // Receives one frame; validates sequence continuity and that the type
  // matches the lockstep expectation.  The receiver supplies the category.
  Frame recv(FrameType expect_type, Category cat, uint64_t prior_bytes = 0);

 private:
  ByteChannel& ch_;
  Dir out_dir_;
  Transcript* transcript_;
  FrameTap* tap_;
  uint64_t next_send_seq_ = 0;
  uint64_t next_recv_seq_ = 0;
};

// ---------------------------------------------------------------------------
// Record / replay.

struct RecordedFrame {
  FrameMeta meta;
  std::vector<uint8_t> payload;
};

struct SessionRecord {
  std::string config_digest;
  uint64_t seed = 0;
  std::vector<RecordedFrame> frames;

  void save(const std::string& path) const;
  static SessionRecord load(const std::string& path);
};

// Tap that captures every frame (attach to the client link).
class RecordingTap final : public FrameTap {
 public:
  explicit RecordingTap(SessionRecord& rec) : rec_(rec) {}
  void on_frame(const FrameMeta& meta, std::span<const uint8_t> payload) override {
    rec_.frames.push_back({meta, {payload.begin(), payload.end()}});
  }

 private:
  SessionRecord& rec_;
};

// Tap that checks a re-run against a loaded record, frame by frame.
class ReplayCheckTap final : public FrameTap {
 public:
  explicit ReplayCheckTap(const SessionRecord& rec) : rec_(rec) {}
  void on_frame(const FrameMeta& meta, std::span<const uint8_t> payload) override;

  size_t matched() const { return idx_; }
  bool complete() const { return idx_ == rec_.frames.size() && mismatch_.empty(); }
  const std::string& mismatch() const { return mismatch_; }

 private:
  const SessionRecord& rec_;
  size_t idx_ = 0;
  std::string mismatch_;
};

// FNV-1a hex digest used to fingerprint session configs in record headers.
std::string config_digest(const std::string& text);

}  // namespace qj
