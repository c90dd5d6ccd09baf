#pragma once

#include <stdexcept>
#include <string>

namespace fedsim {

// Error classes map to CLI exit-code ranges: 2 config, 3 data, 4 transport,
// 5 secure-abort. Anything else is an internal failure (1).
enum class ErrorCode : int {
  Internal = 1,
  Config = 2,
  Data = 3,
  Transport = 4,
  Secure = 5,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string msg)
      : std::runtime_error(std::move(msg)), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

struct ConfigError : Error {
  explicit ConfigError(std::string m) : Error(ErrorCode::Config, std::move(m)) {}
};

// Mismatched parameter layouts between operands.
struct LayoutError : Error {
  explicit LayoutError(std::string m) : Error(ErrorCode::Config, std::move(m)) {}
};

struct EmptyDataset : Error {
  explicit EmptyDataset(std::string m) : Error(ErrorCode::Data, std::move(m)) {}
};

struct TooManyClients : Error {
  explicit TooManyClients(std::string m) : Error(ErrorCode::Data, std::move(m)) {}
};

struct EmptyClient : Error {
  explicit EmptyClient(std::string m) : Error(ErrorCode::Data, std::move(m)) {}
};

struct ClusteringDegenerate : Error {
  explicit ClusteringDegenerate(std::string m)
      : Error(ErrorCode::Data, std::move(m)) {}
};

struct NumericalError : Error {
  explicit NumericalError(std::string m) : Error(ErrorCode::Data, std::move(m)) {}
};

struct NoUpdates : Error {
  explicit NoUpdates(std::string m) : Error(ErrorCode::Data, std::move(m)) {}
};

struct DataError : Error {
  explicit DataError(std::string m) : Error(ErrorCode::Data, std::move(m)) {}
};

struct ProtocolError : Error {
  explicit ProtocolError(std::string m)
      : Error(ErrorCode::Transport, std::move(m)) {}
};

struct FrameError : Error {
  explicit FrameError(std::string m)
      : Error(ErrorCode::Transport, std::move(m)) {}
};

struct TransportError : Error {
  explicit TransportError(std::string m)
      : Error(ErrorCode::Transport, std::move(m)) {}
};

struct SecureAbort : Error {
  explicit SecureAbort(std::string m) : Error(ErrorCode::Secure, std::move(m)) {}
};

}  // namespace fedsim
