#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "fedsim/core.hpp"
#include "fedsim/engine.hpp"

namespace fedsim {

// Wire messages. Frames are u32 big-endian length, u8 type tag, body; body
// integers and doubles are little-endian.
namespace msg {

struct Join {
  std::uint64_t client_id = 0;
};

struct Broadcast {
  std::uint32_t round = 0;
  std::vector<std::uint64_t> cohort;
  std::uint64_t layout_hash = 0;
  // Trainable coordinates only; frozen blocks never travel.
  std::vector<double> trainable_values;
};

enum class PayloadKind : std::uint8_t { Clear = 0, Masked = 1 };

struct Update {
  std::uint32_t round = 0;
  std::uint64_t client_id = 0;
  PayloadKind kind = PayloadKind::Clear;
  double weight = 1.0;
  std::uint32_t steps = 0;
  double train_loss = 0.0;
  std::vector<std::uint8_t> payload;
};

struct SeedShare {
  std::uint32_t round = 0;
  std::uint64_t from = 0;
  std::uint64_t to = 0;
  std::uint64_t seed = 0;
};

struct EvalReport {
  std::uint32_t round = 0;
  std::map<std::string, double> metrics;
};

struct Shutdown {};

}  // namespace msg

using Message = std::variant<msg::Join, msg::Broadcast, msg::Update,
                             msg::SeedShare, msg::EvalReport, msg::Shutdown>;

// Full frame including the length prefix; decode(encode(m)) == m.
std::vector<std::uint8_t> frame_encode(const Message& m);
Message frame_decode(const std::uint8_t* data, std::size_t len);

// Clear Update payload: u64 layout hash, u32 count, f64 trainable deltas.
std::vector<std::uint8_t> encode_clear_payload(const ParamVector& delta);
ParamVector decode_clear_payload(const std::vector<std::uint8_t>& payload,
                                 const LayoutPtr& layout);

// Manager state machines (one observable state per side of the protocol).
enum class ServerPhase { WaitJoin, Broadcasting, Collecting, Aggregating, Done };
enum class ClientPhase { Joining, WaitBroadcast, Training, Reporting, Done };

struct TcpServerOptions {
  std::string bind_host = "127.0.0.1";
  std::uint16_t port = 0;  // 0 picks an ephemeral port
  std::size_t n_clients = 0;
  int join_timeout_ms = 10000;
  // When set, every frame received by the server is appended here (u32 BE
  // length + frame bytes); tests scan it for payload-kind violations.
  std::string transcript_path;
};

// Round coordinator over TCP. Binds and listens in the constructor so tests
// can read the ephemeral port before clients connect; run() accepts joins,
// drives the rounds via the shared federation loop, and shuts clients down.
class TcpServer {
 public:
  explicit TcpServer(TcpServerOptions options);
  ~TcpServer();
  TcpServer(const TcpServer&) = delete;
  TcpServer& operator=(const TcpServer&) = delete;

  std::uint16_t port() const { return port_; }

  std::pair<ParamVector, std::vector<RoundRecord>> run(
      const RoundConfig& cfg, const TaskBinding& task,
      const RecordSink& sink = nullptr);

 private:
  TcpServerOptions options_;
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
};

// Client role: joins, then serves Broadcast rounds until Shutdown. Returns 0
// on a clean shutdown.
int run_client(const std::string& host, std::uint16_t port,
               std::uint64_t client_id, const std::vector<std::size_t>& indices,
               const RoundConfig& cfg, const TaskBinding& task);

}  // namespace fedsim
