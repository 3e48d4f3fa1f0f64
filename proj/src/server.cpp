#include "isot/server.hpp"

#include <chrono>
#include <deque>
#include <memory>
#include <mutex>
#include <thread>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>
#include <spdlog/spdlog.h>

#include "isot/session.hpp"

namespace isot {

namespace {

namespace beast = boost::beast;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;

constexpr std::size_t kMaxMessage = 64 * 1024;
constexpr std::size_t kMaxQueuedStates = 32;  // state frames are dropped beyond this backlog

class Connection;

// Ordered hand-off from the network context to the simulation context.
struct Inbox {
  enum class Kind { kOpen, kMessage, kClose };
  struct Event {
    Kind kind;
    std::shared_ptr<Connection> conn;
    std::string text;
  };

  void push(Event e) {
    std::lock_guard<std::mutex> lock(mutex);
    events.push_back(std::move(e));
  }
  std::deque<Event> drain() {
    std::lock_guard<std::mutex> lock(mutex);
    return std::exchange(events, {});
  }

  std::mutex mutex;
  std::deque<Event> events;
};

// All members are touched only on the network thread.
class Connection : public std::enable_shared_from_this<Connection> {
 public:
  Connection(tcp::socket socket, Inbox& inbox) : ws_(std::move(socket)), inbox_(inbox) {}

  void start() {
    ws_.read_message_max(kMaxMessage);
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.async_accept([self = shared_from_this()](beast::error_code ec) {
      if (ec) return;
      self->inbox_.push({Inbox::Kind::kOpen, self, {}});
      self->read();
    });
  }

  void send(std::string text, bool droppable) {
    if (closed_ || closing_) return;
    if (droppable && out_.size() >= kMaxQueuedStates) return;
    out_.push_back(std::move(text));
    if (!writing_) write();
  }

  // Closes once everything queued so far has been written.
  void close() {
    closing_ = true;
    if (!writing_) finish();
  }

 private:
  void read() {
    ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->closed_ = true;
        self->inbox_.push({Inbox::Kind::kClose, self, {}});
        return;
      }
      std::string text = beast::buffers_to_string(self->buffer_.data());
      self->buffer_.consume(self->buffer_.size());
      self->inbox_.push({Inbox::Kind::kMessage, self, std::move(text)});
      self->read();
    });
  }

  void write() {
    writing_ = true;
    ws_.text(true);
    ws_.async_write(net::buffer(out_.front()), [self = shared_from_this()](beast::error_code ec, std::size_t) {
      self->writing_ = false;
      self->out_.pop_front();
      if (ec) {
        self->closed_ = true;
        return;
      }
      if (!self->out_.empty()) {
        self->write();
      } else if (self->closing_) {
        self->finish();
      }
    });
  }

  void finish() {
    if (closed_) return;
    closed_ = true;
    ws_.async_close(websocket::close_code::normal, [self = shared_from_this()](beast::error_code) {});
  }

  websocket::stream<beast::tcp_stream> ws_;
  Inbox& inbox_;
  beast::flat_buffer buffer_;
  std::deque<std::string> out_;
  bool writing_ = false;
  bool closing_ = false;
  bool closed_ = false;
};

void accept_loop(tcp::acceptor& acceptor, Inbox& inbox) {
  acceptor.async_accept([&acceptor, &inbox](beast::error_code ec, tcp::socket socket) {
    if (ec) return;
    std::make_shared<Connection>(std::move(socket), inbox)->start();
    accept_loop(acceptor, inbox);
  });
}

}  // namespace

void serve(const Scenario& scenario, const ServeOptions& options) {
  if (!(options.frame_rate > 0.0) || !(options.time_scale > 0.0)) {
    throw InvalidInput("frame rate and time scale must be positive");
  }
  const ForceMapper mapper = train_scenario_mapper(scenario);

  net::io_context ioc;
  tcp::acceptor acceptor(ioc);
  const tcp::endpoint endpoint(net::ip::make_address(options.host), static_cast<unsigned short>(options.port));
  acceptor.open(endpoint.protocol());
  acceptor.set_option(net::socket_base::reuse_address(true));
  acceptor.bind(endpoint);
  acceptor.listen();
  const int port = acceptor.local_endpoint().port();

  Inbox inbox;
  accept_loop(acceptor, inbox);
  auto work = net::make_work_guard(ioc);
  std::thread network([&ioc] { ioc.run(); });
  spdlog::info("serving scenario '{}' on ws://{}:{}", scenario.name, options.host, port);
  if (options.on_listening) options.on_listening(port);

  auto send = [&ioc](const std::shared_ptr<Connection>& c, std::string text, bool droppable) {
    net::post(ioc, [c, text = std::move(text), droppable]() mutable { c->send(std::move(text), droppable); });
  };

  std::shared_ptr<Connection> active;
  std::unique_ptr<Session> session;
  int ended = 0;
  using clock = std::chrono::steady_clock;
  const auto period = std::chrono::duration_cast<clock::duration>(std::chrono::duration<double>(1.0 / options.frame_rate));
  auto next = clock::now();
  while (!(options.stop && options.stop->load())) {
    next += period;
    if (next < clock::now() - period) next = clock::now();  // fell behind; do not burst
    std::this_thread::sleep_until(next);

    for (auto& e : inbox.drain()) {
      switch (e.kind) {
        case Inbox::Kind::kOpen:
          if (active) {
            send(e.conn,
                 nlohmann::json{{"type", "error"}, {"code", "busy"}, {"reason", "another session is active"}}.dump(),
                 false);
            net::post(ioc, [c = e.conn] { c->close(); });
          } else {
            active = e.conn;
            session = std::make_unique<Session>(scenario, mapper, options.seed);
            spdlog::info("session {} started", ended + 1);
          }
          break;
        case Inbox::Kind::kMessage:
          if (e.conn == active) {
            const auto reply = session->handle(e.text);
            if (reply["type"] == "error") spdlog::warn("rejected frame: {}", reply["reason"].get<std::string>());
            send(active, reply.dump(), false);
          }
          break;
        case Inbox::Kind::kClose:
          if (e.conn == active) {
            active.reset();
            session.reset();
            ++ended;
            spdlog::info("session {} ended", ended);
          }
          break;
      }
    }
    if (options.max_sessions > 0 && ended >= options.max_sessions) break;
    if (session) {
      session->advance(options.time_scale / options.frame_rate);
      send(active, session->state_frame().dump(), true);
    }
  }

  if (active) net::post(ioc, [c = active] { c->close(); });
  net::post(ioc, [&acceptor] { acceptor.close(); });
  work.reset();
  // give pending closes a moment, then stop whatever is left
  std::this_thread::sleep_for(std::chrono::milliseconds(50));
  ioc.stop();
  network.join();
}

}  // namespace isot
