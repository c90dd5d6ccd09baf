#include "fedsim/transport.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cstring>
#include <fstream>

#include "fedsim/bytes.hpp"
#include "fedsim/errors.hpp"
#include "fedsim/rng.hpp"
#include "fedsim/secagg.hpp"

namespace fedsim {

namespace {

constexpr std::uint8_t kTagJoin = 1;
constexpr std::uint8_t kTagBroadcast = 2;
constexpr std::uint8_t kTagUpdate = 3;
constexpr std::uint8_t kTagSeedShare = 4;
constexpr std::uint8_t kTagEvalReport = 5;
constexpr std::uint8_t kTagShutdown = 6;

constexpr std::size_t kMaxFrame = std::size_t{1} << 28;

std::vector<std::uint8_t> encode_body(const Message& m, std::uint8_t& tag) {
  std::vector<std::uint8_t> body;
  std::visit(
      [&](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, msg::Join>) {
          tag = kTagJoin;
          put_u64(body, v.client_id);
        } else if constexpr (std::is_same_v<T, msg::Broadcast>) {
          tag = kTagBroadcast;
          put_u32(body, v.round);
          put_u32(body, static_cast<std::uint32_t>(v.cohort.size()));
          for (std::uint64_t id : v.cohort) put_u64(body, id);
          put_u64(body, v.layout_hash);
          put_u32(body, static_cast<std::uint32_t>(v.trainable_values.size()));
          for (double x : v.trainable_values) put_f64(body, x);
        } else if constexpr (std::is_same_v<T, msg::Update>) {
          tag = kTagUpdate;
          put_u32(body, v.round);
          put_u64(body, v.client_id);
          put_u8(body, static_cast<std::uint8_t>(v.kind));
          put_f64(body, v.weight);
          put_u32(body, v.steps);
          put_f64(body, v.train_loss);
          put_u32(body, static_cast<std::uint32_t>(v.payload.size()));
          body.insert(body.end(), v.payload.begin(), v.payload.end());
        } else if constexpr (std::is_same_v<T, msg::SeedShare>) {
          tag = kTagSeedShare;
          put_u32(body, v.round);
          put_u64(body, v.from);
          put_u64(body, v.to);
          put_u64(body, v.seed);
        } else if constexpr (std::is_same_v<T, msg::EvalReport>) {
          tag = kTagEvalReport;
          put_u32(body, v.round);
          put_u32(body, static_cast<std::uint32_t>(v.metrics.size()));
          for (const auto& [name, value] : v.metrics) {
            put_string(body, name);
            put_f64(body, value);
          }
        } else {
          static_assert(std::is_same_v<T, msg::Shutdown>);
          tag = kTagShutdown;
        }
      },
      m);
  return body;
}

}  // namespace

std::vector<std::uint8_t> frame_encode(const Message& m) {
  std::uint8_t tag = 0;
  const std::vector<std::uint8_t> body = encode_body(m, tag);
  if (body.size() + 1 > kMaxFrame) throw ProtocolError("frame too large");
  std::vector<std::uint8_t> frame;
  frame.reserve(5 + body.size());
  const std::uint32_t n = static_cast<std::uint32_t>(body.size() + 1);
  frame.push_back(static_cast<std::uint8_t>(n >> 24));
  frame.push_back(static_cast<std::uint8_t>(n >> 16));
  frame.push_back(static_cast<std::uint8_t>(n >> 8));
  frame.push_back(static_cast<std::uint8_t>(n));
  frame.push_back(tag);
  frame.insert(frame.end(), body.begin(), body.end());
  return frame;
}

Message frame_decode(const std::uint8_t* data, std::size_t len) {
  if (len < 5) throw FrameError("frame shorter than header");
  const std::uint32_t declared = (static_cast<std::uint32_t>(data[0]) << 24) |
                                 (static_cast<std::uint32_t>(data[1]) << 16) |
                                 (static_cast<std::uint32_t>(data[2]) << 8) |
                                 static_cast<std::uint32_t>(data[3]);
  if (declared != len - 4) throw FrameError("frame length prefix mismatch");
  const std::uint8_t tag = data[4];
  ByteCursor cur(data + 5, len - 5);
  Message m;
  switch (tag) {
    case kTagJoin: {
      msg::Join v;
      v.client_id = cur.u64();
      m = v;
      break;
    }
    case kTagBroadcast: {
      msg::Broadcast v;
      v.round = cur.u32();
      const std::uint32_t n_cohort = cur.u32();
      if (static_cast<std::size_t>(n_cohort) * 8 > cur.remaining())
        throw FrameError("broadcast cohort overruns frame");
      v.cohort.resize(n_cohort);
      for (auto& id : v.cohort) id = cur.u64();
      v.layout_hash = cur.u64();
      const std::uint32_t n_vals = cur.u32();
      if (static_cast<std::size_t>(n_vals) * 8 > cur.remaining())
        throw FrameError("broadcast values overrun frame");
      v.trainable_values.resize(n_vals);
      for (auto& x : v.trainable_values) x = cur.f64();
      m = v;
      break;
    }
    case kTagUpdate: {
      msg::Update v;
      v.round = cur.u32();
      v.client_id = cur.u64();
      const std::uint8_t kind = cur.u8();
      if (kind > 1) throw ProtocolError("unknown update payload kind");
      v.kind = static_cast<msg::PayloadKind>(kind);
      v.weight = cur.f64();
      v.steps = cur.u32();
      v.train_loss = cur.f64();
      const std::uint32_t n = cur.u32();
      v.payload = cur.bytes(n);
      m = v;
      break;
    }
    case kTagSeedShare: {
      msg::SeedShare v;
      v.round = cur.u32();
      v.from = cur.u64();
      v.to = cur.u64();
      v.seed = cur.u64();
      m = v;
      break;
    }
    case kTagEvalReport: {
      msg::EvalReport v;
      v.round = cur.u32();
      const std::uint32_t n = cur.u32();
      for (std::uint32_t i = 0; i < n; ++i) {
        std::string name = cur.string();
        v.metrics[name] = cur.f64();
      }
      m = v;
      break;
    }
    case kTagShutdown:
      m = msg::Shutdown{};
      break;
    default:
      throw ProtocolError("unknown frame tag " + std::to_string(tag));
  }
  if (!cur.done()) throw FrameError("trailing bytes in frame body");
  return m;
}

std::vector<std::uint8_t> encode_clear_payload(const ParamVector& delta) {
  std::vector<std::uint8_t> out;
  put_u64(out, delta.layout->hash());
  const std::vector<double> flat = trainable_view(delta);
  put_u32(out, static_cast<std::uint32_t>(flat.size()));
  for (double x : flat) put_f64(out, x);
  return out;
}

ParamVector decode_clear_payload(const std::vector<std::uint8_t>& payload,
                                 const LayoutPtr& layout) {
  ByteCursor cur(payload.data(), payload.size());
  const std::uint64_t hash = cur.u64();
  if (hash != layout->hash())
    throw ProtocolError("update payload layout hash mismatch");
  const std::uint32_t n = cur.u32();
  if (n != layout->trainable_len())
    throw ProtocolError("update payload length mismatch");
  std::vector<double> flat(n);
  for (auto& x : flat) x = cur.f64();
  if (!cur.done()) throw FrameError("trailing bytes in update payload");
  ParamVector delta(layout);
  scatter_trainable(delta, flat);
  return delta;
}

// ---------------------------------------------------------------------------
// Sockets

namespace {

struct Fd {
  int fd = -1;
  Fd() = default;
  explicit Fd(int f) : fd(f) {}
  Fd(Fd&& o) noexcept : fd(o.fd) { o.fd = -1; }
  Fd& operator=(Fd&& o) noexcept {
    reset();
    fd = o.fd;
    o.fd = -1;
    return *this;
  }
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
  ~Fd() { reset(); }
  void reset() {
    if (fd >= 0) ::close(fd);
    fd = -1;
  }
};

void write_all(int fd, const std::uint8_t* data, std::size_t len) {
  std::size_t sent = 0;
  while (sent < len) {
    const ssize_t n = ::send(fd, data + sent, len - sent, MSG_NOSIGNAL);
    if (n <= 0) {
      if (n < 0 && errno == EINTR) continue;
      throw TransportError("socket write failed");
    }
    sent += static_cast<std::size_t>(n);
  }
}

void send_message(int fd, const Message& m) {
  const std::vector<std::uint8_t> frame = frame_encode(m);
  write_all(fd, frame.data(), frame.size());
}

void read_exact(int fd, std::uint8_t* buf, std::size_t len, int timeout_ms) {
  std::size_t got = 0;
  while (got < len) {
    if (timeout_ms >= 0) {
      pollfd p{fd, POLLIN, 0};
      const int r = ::poll(&p, 1, timeout_ms);
      if (r == 0) throw TransportError("socket read timed out");
      if (r < 0 && errno != EINTR) throw TransportError("poll failed");
      if (r < 0) continue;
    }
    const ssize_t n = ::recv(fd, buf + got, len - got, 0);
    if (n == 0) throw TransportError("peer closed connection");
    if (n < 0) {
      if (errno == EINTR) continue;
      throw TransportError("socket read failed");
    }
    got += static_cast<std::size_t>(n);
  }
}

std::vector<std::uint8_t> read_frame(int fd, int timeout_ms) {
  std::uint8_t header[4];
  read_exact(fd, header, 4, timeout_ms);
  const std::uint32_t n = (static_cast<std::uint32_t>(header[0]) << 24) |
                          (static_cast<std::uint32_t>(header[1]) << 16) |
                          (static_cast<std::uint32_t>(header[2]) << 8) |
                          static_cast<std::uint32_t>(header[3]);
  if (n == 0 || n > kMaxFrame) throw FrameError("unreasonable frame length");
  std::vector<std::uint8_t> frame(4 + n);
  std::memcpy(frame.data(), header, 4);
  read_exact(fd, frame.data() + 4, n, timeout_ms);
  return frame;
}

int env_int(const char* name, int fallback) {
  const char* v = std::getenv(name);
  if (!v || !*v) return fallback;
  return std::atoi(v);
}

std::uint64_t tcp_pair_seed(std::uint64_t root_seed, std::uint32_t round,
                            std::uint64_t a, std::uint64_t b) {
  const std::uint64_t lo = std::min(a, b);
  const std::uint64_t hi = std::max(a, b);
  return derive_seed(derive_seed(root_seed, "secagg/root"), "secagg/pair",
                     round, (lo << 32) | hi);
}

}  // namespace

// ---------------------------------------------------------------------------
// Server

namespace {

class TcpRoundExecutor : public RoundExecutor {
 public:
  TcpRoundExecutor(std::map<std::uint64_t, int>& clients, const RoundConfig& cfg,
                   const LayoutPtr& layout, std::ofstream* transcript,
                   int round_timeout_ms)
      : clients_(clients),
        cfg_(cfg),
        layout_(layout),
        transcript_(transcript),
        round_timeout_ms_(round_timeout_ms) {}

  ServerPhase phase() const { return phase_; }

  std::vector<ClientUpdate> run_clear(std::size_t round,
                                      const std::vector<std::uint64_t>& cohort,
                                      const ParamVector& model) override {
    // Mid-round failures abort the round; one identical retry, then fail
    // (clients are deterministic, so a duplicate Broadcast is harmless).
    for (int attempt = 0;; ++attempt) {
      try {
        return round_clear_once(round, cohort, model);
      } catch (const TransportError& e) {
        if (attempt > 0)
          throw TransportError("round " + std::to_string(round) +
                               " failed after retry: " + e.what());
      }
    }
  }

  SecureRound run_secure(std::size_t round,
                         const std::vector<std::uint64_t>& cohort,
                         const ParamVector& model) override {
    try {
      return round_secure_once(round, cohort, model);
    } catch (const TransportError& e) {
      throw SecureAbort("secure round " + std::to_string(round) +
                        " aborted: " + e.what());
    }
  }

 private:
  void broadcast(std::size_t round, const std::vector<std::uint64_t>& cohort,
                 const ParamVector& model) {
    phase_ = ServerPhase::Broadcasting;
    msg::Broadcast b;
    b.round = static_cast<std::uint32_t>(round);
    b.cohort = cohort;
    b.layout_hash = model.layout->hash();
    b.trainable_values = trainable_view(model);
    for (std::uint64_t id : cohort) send_message(fd_of(id), b);
  }

  Message read_from(std::uint64_t id) {
    const std::vector<std::uint8_t> frame =
        read_frame(fd_of(id), round_timeout_ms_);
    if (transcript_) {
      transcript_->write(reinterpret_cast<const char*>(frame.data()),
                         static_cast<std::streamsize>(frame.size()));
      transcript_->flush();
    }
    return frame_decode(frame.data(), frame.size());
  }

  msg::Update read_update(std::uint64_t id, std::size_t round) {
    const Message m = read_from(id);
    const auto* u = std::get_if<msg::Update>(&m);
    if (!u)
      throw ProtocolError("expected Update from client " + std::to_string(id));
    if (u->round != round || u->client_id != id)
      throw ProtocolError("out-of-round update from client " +
                          std::to_string(id));
    return *u;
  }

  std::vector<ClientUpdate> round_clear_once(
      std::size_t round, const std::vector<std::uint64_t>& cohort,
      const ParamVector& model) {
    broadcast(round, cohort, model);
    phase_ = ServerPhase::Collecting;
    std::vector<ClientUpdate> updates;
    for (std::uint64_t id : cohort) {
      const msg::Update u = read_update(id, round);
      if (u.kind != msg::PayloadKind::Clear)
        throw ProtocolError("masked payload in clear mode");
      ClientUpdate cu;
      cu.client_id = id;
      cu.delta = decode_clear_payload(u.payload, layout_);
      cu.weight = u.weight;
      cu.steps = u.steps;
      cu.train_loss = u.train_loss;
      updates.push_back(std::move(cu));
    }
    phase_ = ServerPhase::Aggregating;
    return updates;
  }

  SecureRound round_secure_once(std::size_t round,
                                const std::vector<std::uint64_t>& cohort,
                                const ParamVector& model) {
    broadcast(round, cohort, model);
    phase_ = ServerPhase::Collecting;
    // Relay pairwise seeds: each client initiates toward higher ids.
    for (std::uint64_t id : cohort) {
      const std::size_t n_higher = static_cast<std::size_t>(std::count_if(
          cohort.begin(), cohort.end(),
          [&](std::uint64_t j) { return j > id; }));
      for (std::size_t k = 0; k < n_higher; ++k) {
        const Message m = read_from(id);
        const auto* s = std::get_if<msg::SeedShare>(&m);
        if (!s || s->from != id || s->round != round)
          throw ProtocolError("bad seed share from client " +
                              std::to_string(id));
        if (std::find(cohort.begin(), cohort.end(), s->to) == cohort.end())
          throw ProtocolError("seed share targets a client outside the cohort");
        send_message(fd_of(s->to), m);
      }
    }

    SecureRound out;
    double loss_sum = 0.0;
    for (std::uint64_t id : cohort) {
      const msg::Update u = read_update(id, round);
      if (u.kind != msg::PayloadKind::Masked)
        throw ProtocolError("clear payload in secure mode");
      QuantizationConfig q;
      MaskedUpdate masked =
          decode_masked_update(u.payload.data(), u.payload.size(), q);
      if (q.bits != cfg_.quant.bits ||
          q.headroom_bits != cfg_.quant.headroom_bits ||
          q.clip != cfg_.quant.clip)
        throw ProtocolError("quantization config mismatch in masked update");
      out.payload_bytes_up += u.payload.size();
      loss_sum += u.train_loss;
      out.updates.push_back(std::move(masked));
    }
    out.train_loss_mean =
        cohort.empty() ? 0.0 : loss_sum / static_cast<double>(cohort.size());
    phase_ = ServerPhase::Aggregating;
    return out;
  }

  int fd_of(std::uint64_t id) {
    auto it = clients_.find(id);
    if (it == clients_.end())
      throw TransportError("no connection for client " + std::to_string(id));
    return it->second;
  }

  std::map<std::uint64_t, int>& clients_;
  const RoundConfig& cfg_;
  LayoutPtr layout_;
  std::ofstream* transcript_;
  int round_timeout_ms_;
  ServerPhase phase_ = ServerPhase::WaitJoin;
};

}  // namespace

TcpServer::TcpServer(TcpServerOptions options) : options_(std::move(options)) {
  if (options_.n_clients == 0)
    throw ConfigError("tcp server: n_clients must be positive");
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw TransportError("socket() failed");
  const int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));

  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(options_.port);
  if (::inet_pton(AF_INET, options_.bind_host.c_str(), &addr.sin_addr) != 1) {
    ::close(listen_fd_);
    listen_fd_ = -1;
    throw TransportError("invalid bind address " + options_.bind_host);
  }
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0 ||
      ::listen(listen_fd_, 64) < 0) {
    ::close(listen_fd_);
    listen_fd_ = -1;
    throw TransportError("bind/listen failed on " + options_.bind_host);
  }
  sockaddr_in bound{};
  socklen_t blen = sizeof(bound);
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&bound), &blen);
  port_ = ntohs(bound.sin_port);
}

TcpServer::~TcpServer() {
  if (listen_fd_ >= 0) ::close(listen_fd_);
}

std::pair<ParamVector, std::vector<RoundRecord>> TcpServer::run(
    const RoundConfig& cfg, const TaskBinding& task, const RecordSink& sink) {
  const int join_timeout =
      env_int("FEDSIM_JOIN_TIMEOUT_MS", options_.join_timeout_ms);
  const int round_timeout = env_int("FEDSIM_ROUND_TIMEOUT_MS", 120000);

  std::map<std::uint64_t, int> clients;
  std::vector<Fd> owned;
  auto cleanup = [&]() {
    for (auto& [id, fd] : clients) {
      try {
        send_message(fd, msg::Shutdown{});
      } catch (const TransportError&) {
      }
    }
  };

  try {
    while (clients.size() < options_.n_clients) {
      pollfd p{listen_fd_, POLLIN, 0};
      const int r = ::poll(&p, 1, join_timeout);
      if (r == 0)
        throw TransportError("timed out waiting for clients to join (" +
                             std::to_string(clients.size()) + "/" +
                             std::to_string(options_.n_clients) + ")");
      if (r < 0) {
        if (errno == EINTR) continue;
        throw TransportError("poll failed during join");
      }
      Fd conn(::accept(listen_fd_, nullptr, nullptr));
      if (conn.fd < 0) continue;
      const std::vector<std::uint8_t> frame = read_frame(conn.fd, join_timeout);
      const Message m = frame_decode(frame.data(), frame.size());
      const auto* join = std::get_if<msg::Join>(&m);
      if (!join || join->client_id >= options_.n_clients ||
          clients.count(join->client_id)) {
        // Duplicate or invalid id: reject by closing the connection.
        continue;
      }
      clients[join->client_id] = conn.fd;
      owned.push_back(std::move(conn));
    }

    std::ofstream transcript;
    if (!options_.transcript_path.empty()) {
      transcript.open(options_.transcript_path, std::ios::binary);
      if (!transcript)
        throw TransportError("cannot open transcript file " +
                             options_.transcript_path);
    }

    ParamVector probe = task.model_init();
    TcpRoundExecutor executor(clients, cfg, probe.layout,
                              transcript.is_open() ? &transcript : nullptr,
                              round_timeout);

    RecordSink wrapped = [&](const RoundRecord& rec) {
      msg::EvalReport report;
      report.round = static_cast<std::uint32_t>(rec.round);
      report.metrics = rec.eval_metrics;
      for (auto& [id, fd] : clients) {
        try {
          send_message(fd, report);
        } catch (const TransportError&) {
        }
      }
      if (sink) sink(rec);
    };

    auto result = run_federation(options_.n_clients, cfg, task, executor, wrapped);
    cleanup();
    return result;
  } catch (...) {
    cleanup();
    throw;
  }
}

// ---------------------------------------------------------------------------
// Client

int run_client(const std::string& host, std::uint16_t port,
               std::uint64_t client_id, const std::vector<std::size_t>& indices,
               const RoundConfig& cfg, const TaskBinding& task) {
  const int timeout = env_int("FEDSIM_CLIENT_TIMEOUT_MS", 120000);

  Fd fd(::socket(AF_INET, SOCK_STREAM, 0));
  if (fd.fd < 0) throw TransportError("socket() failed");
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1)
    throw TransportError("invalid server address " + host);
  if (::connect(fd.fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0)
    throw TransportError("cannot connect to " + host + ":" +
                         std::to_string(port));

  ClientPhase phase = ClientPhase::Joining;
  send_message(fd.fd, msg::Join{client_id});
  phase = ClientPhase::WaitBroadcast;

  const ParamVector reference = task.model_init();
  std::int64_t last_round = -1;

  for (;;) {
    const std::vector<std::uint8_t> frame = read_frame(fd.fd, timeout);
    const Message m = frame_decode(frame.data(), frame.size());

    if (std::holds_alternative<msg::Shutdown>(m)) {
      phase = ClientPhase::Done;
      return 0;
    }
    if (std::holds_alternative<msg::EvalReport>(m)) continue;
    const auto* b = std::get_if<msg::Broadcast>(&m);
    if (!b) throw ProtocolError("unexpected message while waiting for broadcast");
    if (static_cast<std::int64_t>(b->round) < last_round)
      throw ProtocolError("round number went backwards");
    last_round = b->round;
    if (b->layout_hash != reference.layout->hash())
      throw ProtocolError("broadcast layout hash mismatch");

    ParamVector model = task.model_init();
    scatter_trainable(model, b->trainable_values);

    std::vector<PairwiseSeed> seeds;
    if (cfg.secure) {
      // Initiate seeds toward higher ids, then wait for the lower-id shares
      // relayed through the server.
      std::size_t n_lower = 0;
      for (std::uint64_t other : b->cohort) {
        if (other == client_id) continue;
        if (other < client_id) {
          n_lower++;
          continue;
        }
        const std::uint64_t seed =
            tcp_pair_seed(cfg.seed, b->round, client_id, other);
        seeds.push_back({client_id, other, seed});
        send_message(fd.fd, msg::SeedShare{b->round, client_id, other, seed});
      }
      for (std::size_t k = 0; k < n_lower; ++k) {
        const std::vector<std::uint8_t> sframe = read_frame(fd.fd, timeout);
        const Message sm = frame_decode(sframe.data(), sframe.size());
        const auto* s = std::get_if<msg::SeedShare>(&sm);
        if (!s || s->to != client_id || s->round != b->round)
          throw ProtocolError("unexpected message while waiting for seed shares");
        seeds.push_back({std::min(s->from, s->to), std::max(s->from, s->to),
                         s->seed});
      }
    }

    phase = ClientPhase::Training;
    ClientUpdate update =
        local_train(client_id, model, indices, cfg, b->round, task);

    phase = ClientPhase::Reporting;
    msg::Update out;
    out.round = b->round;
    out.client_id = client_id;
    out.steps = static_cast<std::uint32_t>(update.steps);
    out.train_loss = update.train_loss;
    if (cfg.secure) {
      out.kind = msg::PayloadKind::Masked;
      out.weight = 1.0;
      const std::vector<std::uint64_t> dq =
          quantize(trainable_view(update.delta), cfg.quant);
      const MaskedUpdate masked =
          mask_update(dq, 1, client_id, b->cohort, seeds, cfg.quant);
      out.payload = encode_masked_update(masked, cfg.quant);
    } else {
      out.kind = msg::PayloadKind::Clear;
      out.weight = update.weight;
      out.payload = encode_clear_payload(update.delta);
    }
    send_message(fd.fd, out);
    phase = ClientPhase::WaitBroadcast;
  }
}

}  // namespace fedsim
