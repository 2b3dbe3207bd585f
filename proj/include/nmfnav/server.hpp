#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>

#include "nmfnav/error.hpp"
#include "nmfnav/gateway.hpp"

namespace nmfnav {

struct ServerConfig {
  std::string bind = "127.0.0.1";
  std::uint16_t ws_port = 8473;   // 0 picks a free port
  std::uint16_t tcp_port = 8474;  // newline-delimited JSON; 0 picks a free port
  bool tcp_enabled = true;
  double tick_hz = 10;
  std::size_t max_queued = 256;  // per-client outbound backlog before disconnect
  SessionConfig session;

  void validate() const {
    if (!(tick_hz > 0 && tick_hz <= 1000)) throw RangeError("tick_hz must be in (0, 1000]");
    if (max_queued == 0) throw RangeError("max_queued must be positive");
  }
};

namespace server_detail {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace websocket = boost::beast::websocket;
using tcp = asio::ip::tcp;
using Payload = std::shared_ptr<const std::string>;

constexpr std::size_t kMaxFrame = 1 << 20;

class Hub;

class Client : public std::enable_shared_from_this<Client> {
 public:
  Client(Hub& hub, std::uint64_t id, std::size_t max_queued) : hub_(hub), id_(id), max_queued_(max_queued) {}
  virtual ~Client() = default;

  std::uint64_t id() const { return id_; }
  bool closed() const { return closed_.load(); }

  /// Thread-safe; the write happens on the client's strand.
  void send(Payload p) {
    if (closed()) return;
    asio::post(executor(), [self = shared_from_this(), p = std::move(p)] { self->enqueue(p); });
  }

  virtual void start() = 0;

 protected:
  virtual asio::any_io_executor executor() = 0;
  virtual void write_front() = 0;
  virtual void shutdown() = 0;

  void enqueue(const Payload& p) {
    if (closed()) return;
    if (queue_.size() >= max_queued_) {
      fail();
      return;
    }
    queue_.push_back(p);
    if (queue_.size() == 1) write_front();
  }

  void on_written(beast::error_code ec) {
    if (ec) return fail();
    queue_.pop_front();
    if (!queue_.empty()) write_front();
  }

  void fail();
  void deliver(std::string frame);
  void connected();

  std::deque<Payload> queue_;

 private:
  Hub& hub_;
  std::uint64_t id_;
  std::size_t max_queued_;
  std::atomic<bool> closed_{false};
};

/// Shared between the network thread and the tick thread.
class Hub {
 public:
  void connected(std::shared_ptr<Client> c) {
    std::lock_guard lk(mu_);
    fresh_.push_back(std::move(c));
    ++live_;
  }
  void disconnected() {
    std::lock_guard lk(mu_);
    --live_;
  }
  void frame(std::uint64_t id, std::string text) {
    std::lock_guard lk(mu_);
    inbox_.emplace_back(id, std::move(text));
  }
  std::size_t live() const {
    std::lock_guard lk(mu_);
    return live_;
  }
  void drain(std::vector<std::pair<std::uint64_t, std::string>>& inbox, std::vector<std::shared_ptr<Client>>& fresh) {
    std::lock_guard lk(mu_);
    inbox.swap(inbox_);
    fresh.swap(fresh_);
  }

 private:
  mutable std::mutex mu_;
  std::vector<std::pair<std::uint64_t, std::string>> inbox_;
  std::vector<std::shared_ptr<Client>> fresh_;
  std::size_t live_ = 0;
};

inline void Client::fail() {
  if (closed_.exchange(true)) return;
  queue_.clear();
  shutdown();
  hub_.disconnected();
}

inline void Client::deliver(std::string frame) { hub_.frame(id_, std::move(frame)); }

inline void Client::connected() { hub_.connected(shared_from_this()); }

class WsClient final : public Client {
 public:
  WsClient(Hub& hub, std::uint64_t id, std::size_t max_queued, tcp::socket s)
      : Client(hub, id, max_queued), ws_(std::move(s)) {}

  void start() override {
    ws_.read_message_max(kMaxFrame);
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.async_accept([self = std::static_pointer_cast<WsClient>(shared_from_this())](beast::error_code ec) {
      if (ec) return self->fail();
      self->connected();
      self->read();
    });
  }

 private:
  asio::any_io_executor executor() override { return ws_.get_executor(); }

  void read() {
    ws_.async_read(buf_, [self = std::static_pointer_cast<WsClient>(shared_from_this())](beast::error_code ec, std::size_t) {
      if (ec) return self->fail();
      if (self->ws_.got_text()) self->deliver(beast::buffers_to_string(self->buf_.data()));
      self->buf_.consume(self->buf_.size());
      self->read();
    });
  }

  void write_front() override {
    ws_.text(true);
    ws_.async_write(asio::buffer(*queue_.front()),
                    [self = std::static_pointer_cast<WsClient>(shared_from_this())](beast::error_code ec, std::size_t) {
                      self->on_written(ec);
                    });
  }

  void shutdown() override {
    beast::error_code ec;
    beast::get_lowest_layer(ws_).socket().close(ec);
  }

  websocket::stream<beast::tcp_stream> ws_;
  beast::flat_buffer buf_;
};

class RawClient final : public Client {
 public:
  RawClient(Hub& hub, std::uint64_t id, std::size_t max_queued, tcp::socket s)
      : Client(hub, id, max_queued), sock_(std::move(s)), buf_(kMaxFrame) {}

  void start() override {
    asio::post(sock_.get_executor(), [self = std::static_pointer_cast<RawClient>(shared_from_this())] {
      self->connected();
      self->read();
    });
  }

 private:
  asio::any_io_executor executor() override { return sock_.get_executor(); }

  void read() {
    asio::async_read_until(sock_, buf_, '\n',
                           [self = std::static_pointer_cast<RawClient>(shared_from_this())](beast::error_code ec, std::size_t n) {
                             if (ec) return self->fail();
                             std::string line(n - 1, '\0');
                             self->buf_.sgetn(line.data(), static_cast<std::streamsize>(n - 1));
                             self->buf_.consume(1);
                             if (!line.empty() && line.back() == '\r') line.pop_back();
                             if (line.find_first_not_of(" \t") != std::string::npos) self->deliver(std::move(line));
                             self->read();
                           });
  }

  void write_front() override {
    // One JSON document per line; the payload is shared across clients, so
    // the newline goes out as a second buffer.
    static const char nl = '\n';
    std::vector<asio::const_buffer> bufs{asio::buffer(*queue_.front()), asio::buffer(&nl, 1)};
    asio::async_write(sock_, bufs, [self = std::static_pointer_cast<RawClient>(shared_from_this())](beast::error_code ec, std::size_t) {
      self->on_written(ec);
    });
  }

  void shutdown() override {
    beast::error_code ec;
    sock_.shutdown(tcp::socket::shutdown_both, ec);
    sock_.close(ec);
  }

  tcp::socket sock_;
  asio::streambuf buf_;
};

}  // namespace server_detail

/// WebSocket and raw-TCP front end around one Session. The session is owned
/// by the tick thread; network handlers reach it only through the hub.
class Server {
 public:
  explicit Server(ServerConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }
  ~Server() { stop(); }
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Binds both listeners and starts the network and tick threads.
  void start() {
    namespace sd = server_detail;
    if (running_) return;
    session_ = std::make_unique<Session>(cfg_.session);
    ioc_ = std::make_unique<sd::asio::io_context>();
    ws_acceptor_ = listen(cfg_.ws_port);
    if (cfg_.tcp_enabled) tcp_acceptor_ = listen(cfg_.tcp_port);
    accept(*ws_acceptor_, true);
    if (tcp_acceptor_) accept(*tcp_acceptor_, false);
    stopping_ = false;
    running_ = true;
    io_thread_ = std::thread([this] { ioc_->run(); });
    tick_thread_ = std::thread([this] { tick_loop(); });
  }

  void stop() {
    if (!running_) return;
    stopping_ = true;
    tick_thread_.join();
    ioc_->stop();
    io_thread_.join();
    ws_acceptor_.reset();
    tcp_acceptor_.reset();
    ioc_.reset();
    running_ = false;
  }

  bool running() const { return running_; }
  std::uint16_t ws_port() const { return ws_acceptor_ ? ws_acceptor_->local_endpoint().port() : 0; }
  std::uint16_t tcp_port() const { return tcp_acceptor_ ? tcp_acceptor_->local_endpoint().port() : 0; }
  std::size_t client_count() const { return hub_.live(); }
  std::uint64_t ticks() const { return ticks_.load(); }

 private:
  using Acceptor = server_detail::tcp::acceptor;

  std::unique_ptr<Acceptor> listen(std::uint16_t port) {
    namespace sd = server_detail;
    try {
      const sd::tcp::endpoint ep(sd::asio::ip::make_address(cfg_.bind), port);
      auto a = std::make_unique<Acceptor>(*ioc_);
      a->open(ep.protocol());
      a->set_option(Acceptor::reuse_address(true));
      a->bind(ep);
      a->listen();
      return a;
    } catch (const boost::system::system_error& e) {
      throw Error("cannot listen on " + cfg_.bind + ":" + std::to_string(port) + ": " + e.what());
    }
  }

  void accept(Acceptor& a, bool websocket) {
    namespace sd = server_detail;
    a.async_accept(sd::asio::make_strand(*ioc_), [this, &a, websocket](sd::beast::error_code ec, sd::tcp::socket s) {
      if (ec) return;
      s.set_option(sd::tcp::no_delay(true));
      std::shared_ptr<sd::Client> c;
      if (websocket)
        c = std::make_shared<sd::WsClient>(hub_, next_id_++, cfg_.max_queued, std::move(s));
      else
        c = std::make_shared<sd::RawClient>(hub_, next_id_++, cfg_.max_queued, std::move(s));
      c->start();
      accept(a, websocket);
    });
  }

  void tick_loop() {
    using clock = std::chrono::steady_clock;
    const auto period = std::chrono::duration_cast<clock::duration>(std::chrono::duration<double>(1.0 / cfg_.tick_hz));
    std::vector<std::shared_ptr<server_detail::Client>> clients, fresh;
    std::vector<std::pair<std::uint64_t, std::string>> inbox;
    auto next = clock::now();
    while (!stopping_) {
      next += period;
      std::this_thread::sleep_until(next);
      if (clock::now() > next + 10 * period) next = clock::now();  // do not burst after a stall

      inbox.clear();
      fresh.clear();
      hub_.drain(inbox, fresh);
      if (!fresh.empty()) {
        const auto hello = std::make_shared<const std::string>(encode_message(session_->hello()));
        for (auto& c : fresh) {
          c->send(hello);
          clients.push_back(c);
        }
      }
      bool world_changed = false;
      for (auto& [id, text] : inbox) {
        std::optional<ErrorMsg> err;
        try {
          const WireMessage m = decode_message(text);
          err = session_->handle(m);
          world_changed |= !err && std::holds_alternative<ResetMsg>(m);
        } catch (const DecodeError& e) {
          err = ErrorMsg{e.what()};
        }
        if (err) reply(clients, id, encode_message(*err));
      }
      std::erase_if(clients, [](const auto& c) { return c->closed(); });
      if (world_changed) broadcast(clients, encode_message(session_->hello()));
      const StateMsg s = session_->tick();
      ticks_ = session_->ticks();
      broadcast(clients, encode_message(s));
    }
  }

  static void broadcast(const std::vector<std::shared_ptr<server_detail::Client>>& clients, std::string text) {
    const auto p = std::make_shared<const std::string>(std::move(text));
    for (const auto& c : clients) c->send(p);
  }

  static void reply(const std::vector<std::shared_ptr<server_detail::Client>>& clients, std::uint64_t id, std::string text) {
    for (const auto& c : clients)
      if (c->id() == id) return c->send(std::make_shared<const std::string>(std::move(text)));
  }

  ServerConfig cfg_;
  std::unique_ptr<Session> session_;
  std::unique_ptr<server_detail::asio::io_context> ioc_;
  std::unique_ptr<Acceptor> ws_acceptor_, tcp_acceptor_;
  server_detail::Hub hub_;
  std::thread io_thread_, tick_thread_;
  std::atomic<bool> stopping_{false};
  bool running_ = false;
  std::atomic<std::uint64_t> ticks_{0};
  std::uint64_t next_id_ = 1;
};

}  // namespace nmfnav
