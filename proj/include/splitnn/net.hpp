#pragma once

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "splitnn/protocol.hpp"

namespace splitnn {

struct NetError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {
inline std::string errno_text(const char* what) {
  return std::string(what) + ": " + std::strerror(errno);
}
}  // namespace detail

// Blocking TCP stream, move-only. Frames written and read here are the
// complete [length][type][payload] byte images that encode_message and
// decode_message exchange.
class TcpStream {
 public:
  TcpStream() = default;
  explicit TcpStream(int fd) : fd_(fd) {
    if (fd_ >= 0) {
      int one = 1;
      ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    }
  }
  TcpStream(TcpStream&& o) noexcept : fd_(o.fd_) { o.fd_ = -1; }
  TcpStream& operator=(TcpStream&& o) noexcept {
    if (this != &o) {
      close();
      fd_ = o.fd_;
      o.fd_ = -1;
    }
    return *this;
  }
  TcpStream(const TcpStream&) = delete;
  TcpStream& operator=(const TcpStream&) = delete;
  ~TcpStream() { close(); }

  bool valid() const { return fd_ >= 0; }

  void close() {
    if (fd_ >= 0) {
      ::close(fd_);
      fd_ = -1;
    }
  }

  static TcpStream connect(const std::string& host, std::uint16_t port) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    const std::string port_str = std::to_string(port);
    if (int rc = ::getaddrinfo(host.c_str(), port_str.c_str(), &hints, &res); rc != 0)
      throw NetError("resolve " + host + ": " + gai_strerror(rc));
    int fd = -1;
    int saved_errno = 0;
    for (addrinfo* ai = res; ai; ai = ai->ai_next) {
      fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
      if (fd < 0) {
        saved_errno = errno;
        continue;
      }
      if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
      saved_errno = errno;
      ::close(fd);
      fd = -1;
    }
    ::freeaddrinfo(res);
    if (fd < 0) {
      errno = saved_errno;
      throw NetError(detail::errno_text(("connect " + host + ":" + port_str).c_str()));
    }
    return TcpStream(fd);
  }

  // Retries cover the two-process startup race where the client launches
  // before the server has bound its port.
  static TcpStream connect_retry(const std::string& host, std::uint16_t port, int attempts = 50,
                                 std::chrono::milliseconds delay = std::chrono::milliseconds(100)) {
    for (int i = 0;; ++i) {
      try {
        return connect(host, port);
      } catch (const NetError&) {
        if (i + 1 >= attempts) throw;
        std::this_thread::sleep_for(delay);
      }
    }
  }

  void send_all(const void* buf, std::size_t n) {
    const char* p = static_cast<const char*>(buf);
    while (n > 0) {
      const ssize_t k = ::send(fd_, p, n, MSG_NOSIGNAL);
      if (k < 0) {
        if (errno == EINTR) continue;
        throw NetError(detail::errno_text("send"));
      }
      p += k;
      n -= static_cast<std::size_t>(k);
    }
  }

  // Returns false only on EOF before the first byte; a mid-buffer EOF is an
  // error because frames never arrive in fragments at this layer's contract.
  bool recv_exact(void* buf, std::size_t n) {
    char* p = static_cast<char*>(buf);
    std::size_t got = 0;
    while (got < n) {
      const ssize_t k = ::recv(fd_, p + got, n - got, 0);
      if (k < 0) {
        if (errno == EINTR) continue;
        throw NetError(detail::errno_text("recv"));
      }
      if (k == 0) {
        if (got == 0) return false;
        throw NetError("connection closed mid-frame after " + std::to_string(got) + " bytes");
      }
      got += static_cast<std::size_t>(k);
    }
    return true;
  }

  void write_frame(const std::vector<std::uint8_t>& frame) { send_all(frame.data(), frame.size()); }

  // Complete frame bytes, or nullopt on a clean EOF between frames.
  std::optional<std::vector<std::uint8_t>> read_frame() {
    std::uint8_t header[4];
    if (!recv_exact(header, 4)) return std::nullopt;
    std::uint32_t len = 0;
    for (int i = 0; i < 4; ++i) len |= static_cast<std::uint32_t>(header[i]) << (8 * i);
    if (len == 0) throw ProtocolError("frame length field is zero");
    if (len > kMaxFrameLen) throw ProtocolError("frame length " + std::to_string(len) + " exceeds cap");
    std::vector<std::uint8_t> frame(4 + static_cast<std::size_t>(len));
    std::memcpy(frame.data(), header, 4);
    if (!recv_exact(frame.data() + 4, len))
      throw NetError("connection closed before frame body");
    return frame;
  }

 private:
  int fd_ = -1;
};

class TcpListener {
 public:
  // Port 0 binds an ephemeral port; port() reports the actual one.
  TcpListener(const std::string& host, std::uint16_t port) {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd_ < 0) throw NetError(detail::errno_text("socket"));
    int one = 1;
    ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    if (host.empty() || host == "0.0.0.0")
      addr.sin_addr.s_addr = htonl(INADDR_ANY);
    else if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
      ::close(fd_);
      throw NetError("bad listen address " + host);
    }
    if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
      const std::string msg = detail::errno_text(("bind " + host + ":" + std::to_string(port)).c_str());
      ::close(fd_);
      throw NetError(msg);
    }
    if (::listen(fd_, 1) != 0) {
      const std::string msg = detail::errno_text("listen");
      ::close(fd_);
      throw NetError(msg);
    }
    sockaddr_in bound{};
    socklen_t blen = sizeof bound;
    if (::getsockname(fd_, reinterpret_cast<sockaddr*>(&bound), &blen) != 0) {
      const std::string msg = detail::errno_text("getsockname");
      ::close(fd_);
      throw NetError(msg);
    }
    port_ = ntohs(bound.sin_port);
  }
  TcpListener(const TcpListener&) = delete;
  TcpListener& operator=(const TcpListener&) = delete;
  ~TcpListener() {
    if (fd_ >= 0) ::close(fd_);
  }

  std::uint16_t port() const { return port_; }

  TcpStream accept() {
    while (true) {
      const int fd = ::accept(fd_, nullptr, nullptr);
      if (fd >= 0) return TcpStream(fd);
      if (errno == EINTR) continue;
      throw NetError(detail::errno_text("accept"));
    }
  }

 private:
  int fd_ = -1;
  std::uint16_t port_ = 0;
};

}  // namespace splitnn
