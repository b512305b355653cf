#pragma once

#include <atomic>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>

#include "jdapt/detector.hpp"

namespace jdapt::serve {

/// Lines longer than this are answered with an error without parsing.
inline constexpr std::size_t kMaxLineBytes = 16u << 20;

/// One request line in, one response line out (no trailing newline). Never
/// throws: malformed input yields {"id": ..., "error": ...}.
std::string handle_request_line(const detector::ModelBundle& bundle, std::string_view line);

/// Answers every line of `in` on `out` until end of input.
void serve_stream(const detector::ModelBundle& bundle, std::istream& in, std::ostream& out);

struct ListenAddress {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;
};

/// "host:port", ":port" or "port". Port 0 picks a free port.
ListenAddress parse_listen(const std::string& addr);

/// NDJSON over TCP, one thread per connection. The bundle is shared
/// read-only between connections.
class Server {
 public:
  Server(const detector::ModelBundle& bundle, const ListenAddress& addr);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Port actually bound.
  std::uint16_t port() const { return port_; }
  /// Accepts connections until stop() is called.
  void run();
  void stop() { stopping_ = true; }

 private:
  void handle_connection(int fd);

  const detector::ModelBundle& bundle_;
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::atomic<bool> stopping_{false};
  std::atomic<int> active_{0};
};

}  // namespace jdapt::serve
