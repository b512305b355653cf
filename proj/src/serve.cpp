#include "jdapt/serve.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <thread>

#include <json.hpp>

#include "jdapt/errors.hpp"

namespace jdapt::serve {

using nlohmann::json;

namespace {

std::string dump(const json& j) {
  // Error messages can echo raw request bytes, which need not be UTF-8.
  return j.dump(-1, ' ', false, json::error_handler_t::replace);
}

std::vector<float> read_vector(const json& j, const char* what) {
  if (!j.is_array()) throw ValidationError(std::string(what) + " must be an array of numbers");
  std::vector<float> out;
  out.reserve(j.size());
  for (const auto& x : j) {
    if (!x.is_number()) throw ValidationError(std::string(what) + " must be an array of numbers");
    const double v = x.get<double>();
    const auto f = static_cast<float>(v);
    if (!std::isfinite(v) || !std::isfinite(f)) {
      throw ValidationError(std::string(what) + " holds a non-finite value");
    }
    out.push_back(f);
  }
  return out;
}

EmbeddingRecord parse_request(const json& j) {
  EmbeddingRecord rec;
  rec.id = j.at("id").get<std::string>();
  rec.text_embedding = read_vector(j.at("text_embedding"), "text_embedding");
  const auto& frames = j.at("frame_embeddings");
  if (!frames.is_array() || frames.empty()) {
    throw ValidationError("frame_embeddings must be a non-empty array of arrays");
  }
  for (const auto& f : frames) rec.frame_embeddings.push_back(read_vector(f, "frame_embeddings"));
  return rec;
}

bool send_all(int fd, const char* data, std::size_t n) {
  while (n > 0) {
    const ssize_t k = ::send(fd, data, n, MSG_NOSIGNAL);
    if (k < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    data += k;
    n -= static_cast<std::size_t>(k);
  }
  return true;
}

}  // namespace

std::string handle_request_line(const detector::ModelBundle& bundle, std::string_view line) {
  json id = nullptr;
  try {
    if (line.size() > kMaxLineBytes) {
      return dump({{"id", id}, {"error", "request line too long"}});
    }
    const auto start = std::chrono::steady_clock::now();
    const json req = json::parse(line);
    if (!req.is_object()) {
      return dump({{"id", id}, {"error", "request must be a JSON object"}});
    }
    if (req.contains("id") && req["id"].is_string()) id = req["id"];
    const EmbeddingRecord rec = parse_request(req);
    const auto pred = bundle.classify(rec);
    const auto stop = std::chrono::steady_clock::now();
    const auto us = std::chrono::duration_cast<std::chrono::microseconds>(stop - start).count();
    return dump({{"id", rec.id},
                 {"label", to_string(pred.label)},
                 {"score", pred.score},
                 {"latency_us", static_cast<std::int64_t>(us)}});
  } catch (const json::exception& e) {
    return dump({{"id", id}, {"error", std::string("malformed request: ") + e.what()}});
  } catch (const std::exception& e) {
    return dump({{"id", id}, {"error", e.what()}});
  } catch (...) {
    return dump({{"id", id}, {"error", "internal error"}});
  }
}

void serve_stream(const detector::ModelBundle& bundle, std::istream& in, std::ostream& out) {
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    out << handle_request_line(bundle, line) << '\n';
    out.flush();
  }
}

ListenAddress parse_listen(const std::string& addr) {
  ListenAddress out;
  std::string port = addr;
  if (const auto colon = addr.rfind(':'); colon != std::string::npos) {
    if (colon > 0) out.host = addr.substr(0, colon);
    port = addr.substr(colon + 1);
  }
  if (port.empty() || port.find_first_not_of("0123456789") != std::string::npos ||
      port.size() > 5 || std::stoul(port) > 65535) {
    throw ValidationError("invalid listen address '" + addr + "'");
  }
  out.port = static_cast<std::uint16_t>(std::stoul(port));
  return out;
}

Server::Server(const detector::ModelBundle& bundle, const ListenAddress& addr) : bundle_(bundle) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  hints.ai_flags = AI_PASSIVE;
  addrinfo* found = nullptr;
  const std::string port = std::to_string(addr.port);
  if (const int rc = ::getaddrinfo(addr.host.c_str(), port.c_str(), &hints, &found); rc != 0) {
    throw IoError("cannot resolve " + addr.host + ": " + ::gai_strerror(rc));
  }
  std::string last_error = "no usable address";
  for (addrinfo* ai = found; ai != nullptr; ai = ai->ai_next) {
    const int fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
    if (fd < 0) continue;
    const int yes = 1;
    ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof yes);
    if (::bind(fd, ai->ai_addr, ai->ai_addrlen) == 0 && ::listen(fd, 64) == 0) {
      listen_fd_ = fd;
      break;
    }
    last_error = std::strerror(errno);
    ::close(fd);
  }
  ::freeaddrinfo(found);
  if (listen_fd_ < 0) {
    throw IoError("cannot listen on " + addr.host + ":" + port + ": " + last_error);
  }
  sockaddr_storage bound{};
  socklen_t len = sizeof bound;
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&bound), &len);
  port_ = bound.ss_family == AF_INET6
              ? ntohs(reinterpret_cast<sockaddr_in6*>(&bound)->sin6_port)
              : ntohs(reinterpret_cast<sockaddr_in*>(&bound)->sin_port);
}

Server::~Server() {
  stopping_ = true;
  if (listen_fd_ >= 0) ::close(listen_fd_);
  while (active_ > 0) std::this_thread::sleep_for(std::chrono::milliseconds(5));
}

void Server::run() {
  while (!stopping_) {
    pollfd p{listen_fd_, POLLIN, 0};
    const int ready = ::poll(&p, 1, 200);
    if (ready <= 0) continue;
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) continue;
    ++active_;
    std::thread([this, fd] {
      handle_connection(fd);
      ::close(fd);
      --active_;
    }).detach();
  }
}

void Server::handle_connection(int fd) {
  std::string buffer;
  char chunk[65536];
  bool overflow = false;
  while (!stopping_) {
    pollfd p{fd, POLLIN, 0};
    const int ready = ::poll(&p, 1, 200);
    if (ready == 0) continue;
    if (ready < 0) {
      if (errno == EINTR) continue;
      return;
    }
    const ssize_t n = ::recv(fd, chunk, sizeof chunk, 0);
    if (n == 0) return;
    if (n < 0) {
      if (errno == EINTR) continue;
      return;
    }
    buffer.append(chunk, static_cast<std::size_t>(n));
    std::size_t begin = 0;
    for (std::size_t nl; (nl = buffer.find('\n', begin)) != std::string::npos; begin = nl + 1) {
      std::string_view line(buffer.data() + begin, nl - begin);
      if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
      if (overflow) {
        // Tail of a line that was already answered as too long.
        overflow = false;
        continue;
      }
      if (line.empty()) continue;
      const std::string reply = handle_request_line(bundle_, line) + "\n";
      if (!send_all(fd, reply.data(), reply.size())) return;
    }
    buffer.erase(0, begin);
    if (buffer.size() > kMaxLineBytes) {
      const std::string reply = dump({{"id", nullptr}, {"error", "request line too long"}}) + "\n";
      if (!send_all(fd, reply.data(), reply.size())) return;
      buffer.clear();
      overflow = true;
    }
  }
}

}  // namespace jdapt::serve
