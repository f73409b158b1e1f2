#include "qj/transport.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <condition_variable>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <mutex>
#include <stdexcept>

#include <json.hpp>

namespace qj {

namespace {

uint32_t get_u32(const uint8_t* p) {
  uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}
uint64_t get_u64(const uint8_t* p) {
  uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

constexpr uint64_t kMaxFramePayload = 1ull << 31;

bool valid_frame_type(uint8_t t) { return t >= 0x01 && t <= 0x05; }

}  // namespace

std::vector<uint8_t> encode_frame(const Frame& f) {
  if (f.payload.size() > kMaxFramePayload)
    throw std::invalid_argument("encode_frame: payload too large");
  std::vector<uint8_t> out(kFrameHeaderBytes + f.payload.size());
  std::memcpy(out.data(), kFrameMagic, 4);
  out[4] = static_cast<uint8_t>(f.type);
  for (int i = 0; i < 8; ++i) out[5 + i] = static_cast<uint8_t>(f.seq >> (8 * i));
  const uint32_t len = static_cast<uint32_t>(f.payload.size());
  for (int i = 0; i < 4; ++i) out[13 + i] = static_cast<uint8_t>(len >> (8 * i));
  if (!f.payload.empty())
    std::memcpy(out.data() + kFrameHeaderBytes, f.payload.data(), f.payload.size());
  return out;
}

void FrameParser::feed(std::span<const uint8_t> bytes) {
  if (consumed_ > 0) {
    buf_.erase(buf_.begin(), buf_.begin() + static_cast<std::ptrdiff_t>(consumed_));
    consumed_ = 0;
  }
  buf_.insert(buf_.end(), bytes.begin(), bytes.end());
}

std::optional<Frame> FrameParser::next() {
  const size_t avail = buf_.size() - consumed_;
  if (avail < kFrameHeaderBytes) return std::nullopt;
  const uint8_t* p = buf_.data() + consumed_;
  if (std::memcmp(p, kFrameMagic, 4) != 0)
    throw std::runtime_error("framing error: bad magic");
  if (!valid_frame_type(p[4])) throw std::runtime_error("framing error: unknown frame type");
  const uint64_t len = get_u32(p + 13);
  if (len > kMaxFramePayload) throw std::runtime_error("framing error: oversized payload");
  if (avail < kFrameHeaderBytes + len) return std::nullopt;
  Frame f;
  f.type = static_cast<FrameType>(p[4]);
  f.seq = get_u64(p + 5);
  f.payload.assign(p + kFrameHeaderBytes, p + kFrameHeaderBytes + len);
  consumed_ += kFrameHeaderBytes + len;
  return f;
}

// ---------------------------------------------------------------------------

uint64_t Transcript::total_bytes() const {
  uint64_t t = 0;
  for (const auto& f : frames_) t += f.bytes;
  return t;
}

uint64_t Transcript::bytes(Phase ph, CostAttr attr) const {
  uint64_t t = 0;
  for (const auto& f : frames_) {
    if (f.cat.phase != ph) continue;
    if (f.cat.attr == attr) {
      t += f.bytes;
      if (attr != CostAttr::prior) t -= std::min(f.bytes, f.prior_bytes);
    } else if (attr == CostAttr::prior) {
      t += std::min(f.bytes, f.prior_bytes);
    }
  }
  return t;
}

uint64_t Transcript::prior_bytes_total() const {
  uint64_t t = 0;
  for (const auto& f : frames_)
    t += (f.cat.attr == CostAttr::prior) ? f.bytes : std::min(f.bytes, f.prior_bytes);
  return t;
}

double rounds(std::span<const FrameMeta> frames,
              const std::function<bool(const FrameMeta&)>& keep) {
  int runs = 0;
  bool have_prev = false;
  Dir prev = Dir::c2s;
  for (const auto& f : frames) {
    if (keep && !keep(f)) continue;
    if (!have_prev || f.dir != prev) {
      ++runs;
      prev = f.dir;
      have_prev = true;
    }
  }
  return 0.5 * runs;
}

double rounds(const Transcript& t, const std::function<bool(const FrameMeta&)>& keep) {
  return rounds(std::span<const FrameMeta>(t.frames()), keep);
}

// ---------------------------------------------------------------------------

const std::vector<NetProfile>& net_profiles() {
  static const std::vector<NetProfile> profiles = {
      {"lan", 3e9, 0.0008},   {"wan1", 100e6, 0.040}, {"wan2", 100e6, 0.080},
      {"wan3", 200e6, 0.040}, {"wan4", 200e6, 0.080},
  };
  return profiles;
}

NetProfile profile_by_name(const std::string& name) {
  for (const auto& p : net_profiles())
    if (p.name == name) return p;
  throw std::invalid_argument("unknown network profile: " + name);
}

double model_latency_s(uint64_t total_bytes, double round_count, const NetProfile& prof) {
  if (prof.bandwidth_bps <= 0 || prof.rtt_s < 0)
    throw std::invalid_argument("model_latency: invalid profile");
  return static_cast<double>(total_bytes) * 8.0 / prof.bandwidth_bps + round_count * prof.rtt_s;
}

double model_latency_s(const Transcript& t, const NetProfile& prof) {
  return model_latency_s(t.total_bytes(), rounds(t), prof);
}

// ---------------------------------------------------------------------------
// In-process bounded pipe.

namespace {

class RingBuf {
 public:
  explicit RingBuf(size_t cap) : buf_(cap) {}

  void write(std::span<const uint8_t> bytes) {
    size_t off = 0;
    std::unique_lock<std::mutex> lk(mu_);
    while (off < bytes.size()) {
      cv_space_.wait(lk, [&] { return used_ < buf_.size() || closed_; });
      if (closed_) throw std::runtime_error("channel closed");
      const size_t n = std::min(bytes.size() - off, buf_.size() - used_);
      for (size_t i = 0; i < n; ++i) buf_[(head_ + used_ + i) % buf_.size()] = bytes[off + i];
      used_ += n;
      off += n;
      cv_data_.notify_one();
    }
  }

  void read(std::span<uint8_t> out) {
    size_t off = 0;
    std::unique_lock<std::mutex> lk(mu_);
    while (off < out.size()) {
      cv_data_.wait(lk, [&] { return used_ > 0 || closed_; });
      if (used_ == 0 && closed_)
        throw std::runtime_error("channel closed before the full message arrived");
      const size_t n = std::min(out.size() - off, used_);
      for (size_t i = 0; i < n; ++i) out[off + i] = buf_[(head_ + i) % buf_.size()];
      head_ = (head_ + n) % buf_.size();
      used_ -= n;
      off += n;
      cv_space_.notify_one();
    }
  }

  void close() {
    std::lock_guard<std::mutex> lk(mu_);
    closed_ = true;
    cv_data_.notify_all();
    cv_space_.notify_all();
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_data_, cv_space_;
  std::vector<uint8_t> buf_;
  size_t head_ = 0, used_ = 0;
  bool closed_ = false;
};

class InProcEndpoint final : public ByteChannel {
 public:
  InProcEndpoint(std::shared_ptr<RingBuf> out, std::shared_ptr<RingBuf> in)
      : out_(std::move(out)), in_(std::move(in)) {}
  ~InProcEndpoint() override {
    out_->close();
    in_->close();
  }
  void send_bytes(std::span<const uint8_t> bytes) override { out_->write(bytes); }
  void recv_bytes(std::span<uint8_t> out) override { in_->read(out); }

 private:
  std::shared_ptr<RingBuf> out_, in_;
};

}  // namespace

std::pair<std::unique_ptr<ByteChannel>, std::unique_ptr<ByteChannel>> make_inproc_pair(
    size_t capacity_bytes) {
  auto ab = std::make_shared<RingBuf>(capacity_bytes);
  auto ba = std::make_shared<RingBuf>(capacity_bytes);
  return {std::make_unique<InProcEndpoint>(ab, ba), std::make_unique<InProcEndpoint>(ba, ab)};
}

// ---------------------------------------------------------------------------
// Localhost TCP pair.

namespace {

class TcpEndpoint final : public ByteChannel {
 public:
  explicit TcpEndpoint(int fd) : fd_(fd) {}
  ~TcpEndpoint() override {
    if (fd_ >= 0) ::close(fd_);
  }
  void send_bytes(std::span<const uint8_t> bytes) override {
    size_t off = 0;
    while (off < bytes.size()) {
      const ssize_t n = ::send(fd_, bytes.data() + off, bytes.size() - off, MSG_NOSIGNAL);
      if (n <= 0) throw std::runtime_error("tcp send failed");
      off += static_cast<size_t>(n);
    }
  }
  void recv_bytes(std::span<uint8_t> out) override {
    size_t off = 0;
    while (off < out.size()) {
      const ssize_t n = ::recv(fd_, out.data() + off, out.size() - off, 0);
      if (n <= 0) throw std::runtime_error("tcp recv failed or peer closed");
      off += static_cast<size_t>(n);
    }
  }

 private:
  int fd_;
};

}  // namespace

std::pair<std::unique_ptr<ByteChannel>, std::unique_ptr<ByteChannel>> make_tcp_pair() {
  const int lfd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (lfd < 0) throw std::runtime_error("tcp: socket() failed");
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = 0;  // ephemeral
  if (::bind(lfd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 ||
      ::listen(lfd, 1) != 0) {
    ::close(lfd);
    throw std::runtime_error("tcp: bind/listen failed");
  }
  socklen_t alen = sizeof(addr);
  if (::getsockname(lfd, reinterpret_cast<sockaddr*>(&addr), &alen) != 0) {
    ::close(lfd);
    throw std::runtime_error("tcp: getsockname failed");
  }
  const int cfd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (cfd < 0) {
    ::close(lfd);
    throw std::runtime_error("tcp: socket() failed");
  }
  if (::connect(cfd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    ::close(lfd);
    ::close(cfd);
    throw std::runtime_error("tcp: connect failed");
  }
  const int sfd = ::accept(lfd, nullptr, nullptr);
  ::close(lfd);
  if (sfd < 0) {
    ::close(cfd);
    throw std::runtime_error("tcp: accept failed");
  }
  const int one = 1;
  ::setsockopt(cfd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  ::setsockopt(sfd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  return {std::make_unique<TcpEndpoint>(cfd), std::make_unique<TcpEndpoint>(sfd)};
}

// ---------------------------------------------------------------------------
// Link.

Link::Link(ByteChannel& ch, Dir out_dir, Transcript* transcript, FrameTap* tap)
    : ch_(ch), out_dir_(out_dir), transcript_(transcript), tap_(tap) {}

void Link::send(FrameType type, std::span<const uint8_t> payload, Category cat,
                uint64_t prior_bytes) {
  Frame f;
  f.type = type;
  f.seq = next_send_seq_++;
  f.payload.assign(payload.begin(), payload.end());
  const auto bytes = encode_frame(f);
  FrameMeta meta{out_dir_, type, f.seq, bytes.size(), cat, prior_bytes};
  if (transcript_) transcript_->add(meta);
  if (tap_) tap_->on_frame(meta, f.payload);
  ch_.send_bytes(bytes);
}

Frame Link::recv(FrameType expect_type, Category cat, uint64_t prior_bytes) {
  uint8_t header[kFrameHeaderBytes];
  ch_.recv_bytes(header);
  if (std::memcmp(header, kFrameMagic, 4) != 0)
    throw std::runtime_error("framing error: bad magic");
  if (!valid_frame_type(header[4])) throw std::runtime_error("framing error: unknown frame type");
  Frame f;
  f.type = static_cast<FrameType>(header[4]);
  f.seq = get_u64(header + 5);
  const uint32_t len = get_u32(header + 13);
  if (len > kMaxFramePayload) throw std::runtime_error("framing error: oversized payload");
  f.payload.resize(len);
  ch_.recv_bytes(f.payload);
  if (f.type != expect_type)
    throw std::runtime_error("protocol error: unexpected frame type");
  if (f.seq != next_recv_seq_)
    throw std::runtime_error("protocol error: sequence discontinuity");
  ++next_recv_seq_;
  const Dir in_dir = out_dir_ == Dir::c2s ? Dir::s2c : Dir::c2s;
  FrameMeta meta{in_dir, f.type, f.seq, kFrameHeaderBytes + static_cast<uint64_t>(len), cat,
                 prior_bytes};
  if (transcript_) transcript_->add(meta);
  if (tap_) tap_->on_frame(meta, f.payload);
  return f;
}

// ---------------------------------------------------------------------------
// Record / replay.

void SessionRecord::save(const std::string& path) const {
  nlohmann::json header = {
      {"version", 1},
      {"config_digest", config_digest},
      {"seed", seed},
      {"frame_count", frames.size()},
      {"categories",
       {{"phases", {"offline", "online"}}, {"attrs", {"inqueue", "prior", "common_drelu"}}}},
  };
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("record: cannot open " + path);
  const std::string h = header.dump();
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  out.put('\0');
  for (const auto& rf : frames) {
    uint8_t fixed[4 + 8 + 8 + 8 + 4];
    fixed[0] = static_cast<uint8_t>(rf.meta.dir);
    fixed[1] = static_cast<uint8_t>(rf.meta.cat.phase);
    fixed[2] = static_cast<uint8_t>(rf.meta.cat.attr);
    fixed[3] = static_cast<uint8_t>(rf.meta.type);
    for (int i = 0; i < 8; ++i) fixed[4 + i] = static_cast<uint8_t>(rf.meta.seq >> (8 * i));
    for (int i = 0; i < 8; ++i) fixed[12 + i] = static_cast<uint8_t>(rf.meta.bytes >> (8 * i));
    for (int i = 0; i < 8; ++i)
      fixed[20 + i] = static_cast<uint8_t>(rf.meta.prior_bytes >> (8 * i));
    const uint32_t len = static_cast<uint32_t>(rf.payload.size());
    for (int i = 0; i < 4; ++i) fixed[28 + i] = static_cast<uint8_t>(len >> (8 * i));
    out.write(reinterpret_cast<const char*>(fixed), sizeof(fixed));
    out.write(reinterpret_cast<const char*>(rf.payload.data()),
              static_cast<std::streamsize>(rf.payload.size()));
  }
}

SessionRecord SessionRecord::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("record: cannot open " + path);
  std::string header;
  std::getline(in, header, '\0');
  const auto j = nlohmann::json::parse(header);
  SessionRecord rec;
  rec.config_digest = j.at("config_digest").get<std::string>();
  rec.seed = j.at("seed").get<uint64_t>();
  const auto count = j.at("frame_count").get<uint64_t>();
  rec.frames.reserve(count);
  for (uint64_t k = 0; k < count; ++k) {
    uint8_t fixed[32];
    in.read(reinterpret_cast<char*>(fixed), sizeof(fixed));
    if (!in) throw std::runtime_error("record: truncated frame header");
    RecordedFrame rf;
    rf.meta.dir = static_cast<Dir>(fixed[0]);
    rf.meta.cat.phase = static_cast<Phase>(fixed[1]);
    rf.meta.cat.attr = static_cast<CostAttr>(fixed[2]);
    rf.meta.type = static_cast<FrameType>(fixed[3]);
    rf.meta.seq = get_u64(fixed + 4);
    rf.meta.bytes = get_u64(fixed + 12);
    rf.meta.prior_bytes = get_u64(fixed + 20);
    const uint32_t len = get_u32(fixed + 28);
    rf.payload.resize(len);
    in.read(reinterpret_cast<char*>(rf.payload.data()), len);
    if (!in) throw std::runtime_error("record: truncated payload");
    rec.frames.push_back(std::move(rf));
  }
  return rec;
}

void ReplayCheckTap::on_frame(const FrameMeta& meta, std::span<const uint8_t> payload) {
  if (!mismatch_.empty()) return;
  if (idx_ >= rec_.frames.size()) {
    mismatch_ = "replay produced more frames than the record";
    return;
  }
  const auto& want = rec_.frames[idx_];
  const bool meta_ok = want.meta.dir == meta.dir && want.meta.type == meta.type &&
                       want.meta.seq == meta.seq && want.meta.bytes == meta.bytes &&
                       want.meta.cat.phase == meta.cat.phase &&
                       want.meta.cat.attr == meta.cat.attr &&
                       want.meta.prior_bytes == meta.prior_bytes;
  const bool payload_ok =
      want.payload.size() == payload.size() &&
      std::equal(want.payload.begin(), want.payload.end(), payload.begin());
  if (!meta_ok || !payload_ok) {
    mismatch_ = "replay diverged at frame " + std::to_string(idx_);
    return;
  }
  ++idx_;
}

std::string config_digest(const std::string& text) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

}  // namespace qj
