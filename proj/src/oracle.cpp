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

#include "pcd/oracle.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cmath>
#include <cstring>
#include <nlohmann/json.hpp>

#include "pcd/errors.hpp"

namespace pcd {

using json = nlohmann::ordered_json;

std::vector<std::uint32_t> LabelOracle::label(const Matrix& rows) {
  if (rows.rows() == 0) return {};
  auto out = do_label(rows);
  if (out.size() != rows.rows()) throw ProtocolError("oracle returned " + std::to_string(out.size()) + " labels for " + std::to_string(rows.rows()) + " rows");
  rows_queried_ += rows.rows();
  return out;
}

LocalOracle::LocalOracle(std::shared_ptr<const ClusterModel> model) : model_(std::move(model)) {
  if (!model_) throw std::invalid_argument("LocalOracle: null model");
}

LocalOracle::LocalOracle(ClusterModel model) : LocalOracle(std::make_shared<const ClusterModel>(std::move(model))) {}

std::vector<std::uint32_t> LocalOracle::labels_for(const Matrix& rows) const {
  if (rows.cols() != model_->spec.input_dim) {
    throw std::invalid_argument("oracle: row width " + std::to_string(rows.cols()) + " != model input width " +
                                std::to_string(model_->spec.input_dim));
  }
  const Matrix logits = head_logits(model_->bank, encode_features(*model_, rows));
  std::vector<std::uint32_t> labels(rows.rows());
  // argmax of softmax(logits / T) equals argmax of the logits.
  for (std::size_t i = 0; i < rows.rows(); ++i) labels[i] = static_cast<std::uint32_t>(argmax(logits.row(i)));
  return labels;
}

// ---------------------------------------------------------------------------

namespace wire {

std::string encode_request(const LabelRequest& req) {
  json rows = json::array();
  for (std::size_t i = 0; i < req.features.rows(); ++i) {
    auto r = req.features.row(i);
    rows.push_back(std::vector<double>(r.begin(), r.end()));
  }
  json j;
  j["id"] = req.id;
  j["features"] = std::move(rows);
  return j.dump();
}

std::string encode_response(const LabelResponse& resp) {
  json j;
  j["id"] = resp.id;
  j["k"] = resp.k;
  j["labels"] = resp.labels;
  return j.dump();
}

std::string encode_error(const ErrorResponse& err) {
  json j;
  j["id"] = err.id;
  j["error"] = err.code;
  return j.dump();
}

Response decode_response(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw ProtocolError(std::string("oracle response is not JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("id") || !j["id"].is_number_unsigned()) {
    throw ProtocolError("oracle response lacks an unsigned id");
  }
  const auto id = j["id"].get<std::uint64_t>();
  if (j.contains("error")) {
    if (j.size() != 2 || !j["error"].is_string()) throw ProtocolError("malformed oracle error frame");
    return ErrorResponse{id, j["error"].get<std::string>()};
  }
  if (j.size() != 3 || !j.contains("k") || !j.contains("labels") || !j["k"].is_number_unsigned() ||
      !j["labels"].is_array()) {
    throw ProtocolError("malformed oracle label frame");
  }
  LabelResponse resp;
  resp.id = id;
  resp.k = j["k"].get<std::uint32_t>();
  for (const auto& v : j["labels"]) {
    if (!v.is_number_unsigned()) throw ProtocolError("oracle label is not an unsigned integer");
    const auto y = v.get<std::uint64_t>();
    if (y >= resp.k) throw ProtocolError("oracle label outside [0, K)");
    resp.labels.push_back(static_cast<std::uint32_t>(y));
  }
  return resp;
}

std::string handle_request(const LocalOracle& oracle, const std::string& line) {
  std::uint64_t id = 0;
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error&) {
    return encode_error({0, "parse_error"});
  }
  if (!j.is_object()) return encode_error({0, "bad_request"});
  if (j.contains("id") && j["id"].is_number_unsigned()) id = j["id"].get<std::uint64_t>();
  if (!j.contains("id") || !j["id"].is_number_unsigned() || !j.contains("features") || !j["features"].is_array()) {
    return encode_error({id, "bad_request"});
  }
  const auto& rows = j["features"];
  if (rows.empty()) return encode_error({id, "empty_request"});
  if (rows.size() > kMaxRowsPerFrame) return encode_error({id, "too_many_rows"});
  const std::size_t width = oracle.input_dim();
  Matrix x(rows.size(), width);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (!r.is_array()) return encode_error({id, "bad_request"});
    if (r.size() != width) return encode_error({id, "width_mismatch"});
    for (std::size_t c = 0; c < width; ++c) {
      if (!r[c].is_number()) return encode_error({id, "bad_request"});
      const double v = r[c].get<double>();
      if (!std::isfinite(v)) return encode_error({id, "non_finite"});
      x(i, c) = v;
    }
  }
  LabelResponse resp;
  resp.id = id;
  resp.k = static_cast<std::uint32_t>(oracle.k());
  resp.labels = oracle.labels_for(x);
  return encode_response(resp);
}

}  // namespace wire

// ---------------------------------------------------------------------------

Endpoint Endpoint::parse(const std::string& address) {
  std::string rest = address;
  const std::string scheme = "tcp://";
  if (rest.rfind(scheme, 0) == 0) rest = rest.substr(scheme.size());
  const auto colon = rest.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == rest.size()) {
    throw std::invalid_argument("bad address '" + address + "' (expected host:port)");
  }
  Endpoint e;
  e.host = rest.substr(0, colon);
  const std::string port = rest.substr(colon + 1);
  char* end = nullptr;
  const long p = std::strtol(port.c_str(), &end, 10);
  if (end != port.c_str() + port.size() || p < 0 || p > 65535) {
    throw std::invalid_argument("bad port in address '" + address + "'");
  }
  e.port = static_cast<std::uint16_t>(p);
  return e;
}

std::string Endpoint::to_string() const { return host + ":" + std::to_string(port); }

namespace {

class TransientError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void send_all(int fd, const std::string& data) {
  std::size_t sent = 0;
  while (sent < data.size()) {
    const ssize_t n = ::send(fd, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw TransientError(std::string("send failed: ") + std::strerror(errno));
    }
    sent += static_cast<std::size_t>(n);
  }
}

addrinfo* resolve(const Endpoint& e, bool passive) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  if (passive) hints.ai_flags = AI_PASSIVE;
  addrinfo* res = nullptr;
  const std::string port = std::to_string(e.port);
  const int rc = ::getaddrinfo(e.host.empty() ? nullptr : e.host.c_str(), port.c_str(), &hints, &res);
  if (rc != 0) throw std::runtime_error("cannot resolve " + e.to_string() + ": " + ::gai_strerror(rc));
  return res;
}

}  // namespace

OracleServer::OracleServer(std::shared_ptr<const ClusterModel> model, Endpoint bind)
    : oracle_(std::move(model)), bind_(std::move(bind)) {}

OracleServer::~OracleServer() { stop(); }

void OracleServer::start() {
  if (running_) return;
  addrinfo* res = resolve(bind_, true);
  int fd = -1;
  std::string last_error = "no usable address";
  for (addrinfo* ai = res; ai != nullptr; ai = ai->ai_next) {
    fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
    if (fd < 0) {
      last_error = std::strerror(errno);
      continue;
    }
    int one = 1;
    ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    if (::bind(fd, ai->ai_addr, ai->ai_addrlen) == 0 && ::listen(fd, 64) == 0) break;
    last_error = std::strerror(errno);
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(res);
  if (fd < 0) throw std::runtime_error("oracle server: cannot bind " + bind_.to_string() + ": " + last_error);

  sockaddr_storage addr{};
  socklen_t len = sizeof addr;
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
  bound_port_ = addr.ss_family == AF_INET6 ? ntohs(reinterpret_cast<sockaddr_in6*>(&addr)->sin6_port)
                                           : ntohs(reinterpret_cast<sockaddr_in*>(&addr)->sin_port);
  listen_fd_ = fd;
  stopping_ = false;
  running_ = true;
  acceptor_ = std::thread([this] { accept_loop(); });
}

void OracleServer::stop() {
  if (!running_) return;
  stopping_ = true;
  if (acceptor_.joinable()) acceptor_.join();
  {
    std::lock_guard<std::mutex> lock(conn_mutex_);
    for (auto& c : connections_) ::shutdown(c->fd, SHUT_RDWR);
  }
  for (auto& c : connections_) {
    if (c->worker.joinable()) c->worker.join();
    ::close(c->fd);
  }
  connections_.clear();
  ::close(listen_fd_);
  listen_fd_ = -1;
  running_ = false;
}

void OracleServer::reap_finished() {
  std::lock_guard<std::mutex> lock(conn_mutex_);
  for (auto it = connections_.begin(); it != connections_.end();) {
    if ((*it)->done) {
      (*it)->worker.join();
      ::close((*it)->fd);
      it = connections_.erase(it);
    } else {
      ++it;
    }
  }
}

void OracleServer::accept_loop() {
  while (!stopping_) {
    pollfd p{listen_fd_, POLLIN, 0};
    const int rc = ::poll(&p, 1, 100);
    reap_finished();
    if (rc <= 0) continue;
    const int cfd = ::accept(listen_fd_, nullptr, nullptr);
    if (cfd < 0) continue;
    int one = 1;
    ::setsockopt(cfd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    auto conn = std::make_unique<Connection>();
    conn->fd = cfd;
    Connection* raw = conn.get();
    std::lock_guard<std::mutex> lock(conn_mutex_);
    conn->worker = std::thread([this, raw] { serve_connection(raw); });
    connections_.push_back(std::move(conn));
  }
}

void OracleServer::serve_connection(Connection* conn) {
  std::string buffer;
  char chunk[65536];
  try {
    while (!stopping_) {
      pollfd p{conn->fd, POLLIN, 0};
      const int rc = ::poll(&p, 1, 100);
      if (rc < 0 && errno != EINTR) break;
      if (rc <= 0) continue;
      const ssize_t n = ::recv(conn->fd, chunk, sizeof chunk, 0);
      if (n <= 0) break;
      buffer.append(chunk, static_cast<std::size_t>(n));
      std::size_t start = 0;
      for (std::size_t nl; (nl = buffer.find('\n', start)) != std::string::npos; start = nl + 1) {
        std::string line = buffer.substr(start, nl - start);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        send_all(conn->fd, wire::handle_request(oracle_, line) + "\n");
        ++requests_served_;
      }
      buffer.erase(0, start);
      if (buffer.size() > wire::kMaxFrameBytes) {
        send_all(conn->fd, wire::encode_error({0, "frame_too_large"}) + "\n");
        break;
      }
    }
  } catch (const std::exception&) {
    // Peer went away mid-write; nothing to report to it.
  }
  conn->done = true;
}

// ---------------------------------------------------------------------------

RemoteOracle::RemoteOracle(Endpoint endpoint, RemoteOracleOptions options)
    : endpoint_(std::move(endpoint)), options_(options) {}

RemoteOracle::~RemoteOracle() { disconnect(); }

void RemoteOracle::disconnect() {
  if (fd_ >= 0) ::close(fd_);
  fd_ = -1;
  pending_.clear();
}

void RemoteOracle::connect() {
  addrinfo* res = nullptr;
  try {
    res = resolve(endpoint_, false);
  } catch (const std::runtime_error& e) {
    throw TransientError(e.what());
  }
  std::string last_error = "no usable address";
  for (addrinfo* ai = res; ai != nullptr; ai = ai->ai_next) {
    const int fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
    if (fd < 0) continue;
    const int flags = ::fcntl(fd, F_GETFL, 0);
    ::fcntl(fd, F_SETFL, flags | O_NONBLOCK);
    int rc = ::connect(fd, ai->ai_addr, ai->ai_addrlen);
    if (rc < 0 && errno == EINPROGRESS) {
      pollfd p{fd, POLLOUT, 0};
      rc = ::poll(&p, 1, static_cast<int>(options_.timeout.count()));
      if (rc == 1) {
        int err = 0;
        socklen_t len = sizeof err;
        ::getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len);
        rc = err == 0 ? 0 : -1;
        if (err) errno = err;
      } else {
        if (rc == 0) errno = ETIMEDOUT;
        rc = -1;
      }
    }
    if (rc == 0) {
      ::fcntl(fd, F_SETFL, flags);
      int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      fd_ = fd;
      ::freeaddrinfo(res);
      return;
    }
    last_error = std::strerror(errno);
    ::close(fd);
  }
  ::freeaddrinfo(res);
  throw TransientError("cannot connect to " + endpoint_.to_string() + ": " + last_error);
}

std::string RemoteOracle::round_trip(const std::string& line) {
  if (fd_ < 0) connect();
  send_all(fd_, line + "\n");
  const auto deadline = std::chrono::steady_clock::now() + options_.timeout;
  char chunk[65536];
  for (;;) {
    const auto nl = pending_.find('\n');
    if (nl != std::string::npos) {
      std::string reply = pending_.substr(0, nl);
      pending_.erase(0, nl + 1);
      return reply;
    }
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) throw TransientError("timed out waiting for oracle reply");
    pollfd p{fd_, POLLIN, 0};
    const int rc = ::poll(&p, 1, static_cast<int>(left.count()));
    if (rc < 0 && errno == EINTR) continue;
    if (rc <= 0) throw TransientError("timed out waiting for oracle reply");
    const ssize_t n = ::recv(fd_, chunk, sizeof chunk, 0);
    if (n <= 0) throw TransientError("oracle closed the connection");
    pending_.append(chunk, static_cast<std::size_t>(n));
    if (pending_.size() > wire::kMaxFrameBytes) throw ProtocolError("oracle reply exceeds frame limit");
  }
}

std::vector<std::uint32_t> RemoteOracle::request_chunk(const Matrix& rows) {
  wire::LabelRequest req{next_id_++, rows};
  const std::string line = wire::encode_request(req);
  auto backoff = options_.backoff;
  std::string last_error;
  for (int attempt = 0; attempt <= options_.retries; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(backoff);
      backoff *= 2;
    }
    std::string reply;
    try {
      reply = round_trip(line);
    } catch (const TransientError& e) {
      last_error = e.what();
      disconnect();
      continue;
    }
    const wire::Response resp = wire::decode_response(reply);
    if (const auto* err = std::get_if<wire::ErrorResponse>(&resp)) {
      if (err->id != req.id && err->id != 0) throw ProtocolError("oracle error frame id mismatch");
      throw OracleError("oracle rejected request: " + err->code);
    }
    const auto& ok = std::get<wire::LabelResponse>(resp);
    if (ok.id != req.id) {
      throw ProtocolError("oracle response id " + std::to_string(ok.id) + " does not match request " + std::to_string(req.id));
    }
    if (ok.labels.size() != rows.rows()) throw ProtocolError("oracle returned the wrong number of labels");
    k_ = ok.k;
    return ok.labels;
  }
  throw OracleError("oracle at " + endpoint_.to_string() + " unreachable after " + std::to_string(options_.retries + 1) +
                    " attempts: " + last_error);
}

std::vector<std::uint32_t> RemoteOracle::do_label(const Matrix& rows) {
  std::vector<std::uint32_t> out;
  out.reserve(rows.rows());
  for (std::size_t start = 0; start < rows.rows(); start += wire::kMaxRowsPerFrame) {
    const std::size_t count = std::min(wire::kMaxRowsPerFrame, rows.rows() - start);
    std::vector<std::size_t> idx(count);
    for (std::size_t i = 0; i < count; ++i) idx[i] = start + i;
    const auto labels = request_chunk(rows.gather_rows(idx));
    out.insert(out.end(), labels.begin(), labels.end());
  }
  return out;
}

std::unique_ptr<LabelOracle> make_oracle(const std::string& spec, RemoteOracleOptions options) {
  const std::string local = "local:";
  if (spec.rfind(local, 0) == 0) return std::make_unique<LocalOracle>(load_checkpoint(spec.substr(local.size())));
  return std::make_unique<RemoteOracle>(Endpoint::parse(spec), options);
}

}  // namespace pcd
