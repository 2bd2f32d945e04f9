// Copyright 2026 The PCD Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "pcd/model.hpp"
#include "pcd/numkit.hpp"

namespace pcd {

/// Hard-label access to a frozen source model. Callers see cluster indices
/// only, never parameters or probabilities.
class LabelOracle {
 public:
  virtual ~LabelOracle() = default;

  /// One label per row. Counts every row toward rows_queried().
  std::vector<std::uint32_t> label(const Matrix& rows);

  /// Number of clusters, or 0 if not yet known (remote before first reply).
  virtual std::size_t k() const = 0;

  std::uint64_t rows_queried() const { return rows_queried_; }

 protected:
  virtual std::vector<std::uint32_t> do_label(const Matrix& rows) = 0;

 private:
  std::uint64_t rows_queried_ = 0;
};

/// argmax_k G(x)_k on an immutable model snapshot; ties go to the lowest index.
class LocalOracle final : public LabelOracle {
 public:
  explicit LocalOracle(std::shared_ptr<const ClusterModel> model);
  explicit LocalOracle(ClusterModel model);

  std::size_t k() const override { return model_->k(); }
  std::size_t input_dim() const { return model_->spec.input_dim; }

  /// Stateless labelling shared with the service.
  std::vector<std::uint32_t> labels_for(const Matrix& rows) const;

 protected:
  std::vector<std::uint32_t> do_label(const Matrix& rows) override { return labels_for(rows); }

 private:
  std::shared_ptr<const ClusterModel> model_;
};

// ---------------------------------------------------------------------------
// Wire protocol: one JSON object per line.
//   request   {"id":<u64>,"features":[[...],...]}
//   response  {"id":<u64>,"k":<u32>,"labels":[...]}
//   error     {"id":<u64>,"error":"<code>"}

namespace wire {

inline constexpr std::size_t kMaxRowsPerFrame = 256;
inline constexpr std::size_t kMaxFrameBytes = 64u << 20;

struct LabelRequest {
  std::uint64_t id = 0;
  Matrix features;
};

struct LabelResponse {
  std::uint64_t id = 0;
  std::uint32_t k = 0;
  std::vector<std::uint32_t> labels;
};

struct ErrorResponse {
  std::uint64_t id = 0;
  std::string code;
};

using Response = std::variant<LabelResponse, ErrorResponse>;

std::string encode_request(const LabelRequest& req);
std::string encode_response(const LabelResponse& resp);
std::string encode_error(const ErrorResponse& err);
/// Throws ProtocolError on anything that is not a well-formed response.
Response decode_response(const std::string& line);

/// Server-side handling of one request line (without the newline). Always
/// returns a single response line.
std::string handle_request(const LocalOracle& oracle, const std::string& line);

}  // namespace wire

// ---------------------------------------------------------------------------

struct Endpoint {
  std::string host;
  std::uint16_t port = 0;

  /// Accepts "host:port" or "tcp://host:port".
  static Endpoint parse(const std::string& address);
  std::string to_string() const;
};

/// Serves a LocalOracle over TCP, one thread per connection.
class OracleServer {
 public:
  OracleServer(std::shared_ptr<const ClusterModel> model, Endpoint bind);
  ~OracleServer();
  OracleServer(const OracleServer&) = delete;
  OracleServer& operator=(const OracleServer&) = delete;

  /// Binds and starts accepting. Throws std::runtime_error on bind failure.
  void start();
  /// Stops accepting, closes client connections and joins all threads.
  void stop();
  bool running() const { return running_; }

  /// Bound port (useful when constructed with port 0).
  std::uint16_t port() const { return bound_port_; }
  std::uint64_t requests_served() const { return requests_served_; }

 private:
  struct Connection {
    int fd = -1;
    std::thread worker;
    std::atomic<bool> done{false};
  };

  void accept_loop();
  void serve_connection(Connection* conn);
  void reap_finished();

  LocalOracle oracle_;
  Endpoint bind_;
  int listen_fd_ = -1;
  std::uint16_t bound_port_ = 0;
  std::atomic<bool> running_{false};
  std::atomic<bool> stopping_{false};
  std::atomic<std::uint64_t> requests_served_{0};
  std::thread acceptor_;
  std::mutex conn_mutex_;
  std::vector<std::unique_ptr<Connection>> connections_;
};

struct RemoteOracleOptions {
  std::chrono::milliseconds timeout{2000};
  int retries = 3;
  std::chrono::milliseconds backoff{50};  // doubled after each failed attempt
};

/// Client side of the boundary. Requests are batched up to 256 rows per frame.
class RemoteOracle final : public LabelOracle {
 public:
  explicit RemoteOracle(Endpoint endpoint, RemoteOracleOptions options = {});
  ~RemoteOracle() override;
  RemoteOracle(const RemoteOracle&) = delete;
  RemoteOracle& operator=(const RemoteOracle&) = delete;

  std::size_t k() const override { return k_; }

 protected:
  std::vector<std::uint32_t> do_label(const Matrix& rows) override;

 private:
  std::vector<std::uint32_t> request_chunk(const Matrix& rows);
  void connect();
  void disconnect();
  std::string round_trip(const std::string& line);

  Endpoint endpoint_;
  RemoteOracleOptions options_;
  int fd_ = -1;
  std::string pending_;
  std::uint64_t next_id_ = 1;
  std::size_t k_ = 0;
};

/// "local:<checkpoint>" or "tcp://host:port".
std::unique_ptr<LabelOracle> make_oracle(const std::string& spec, RemoteOracleOptions options = {});

}  // namespace pcd
