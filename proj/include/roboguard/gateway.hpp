/// @file gateway.hpp
/// @brief HTTP API under /v1 for observing and steering a running system.
///
/// Stream events carry one global sequence number, so order within every
/// channel is the server's order and a client resumes from its last cursor
/// without duplicates. Streams are Server-Sent Events on /v1/stream, and
/// /v1/events serves the same events by long poll.

#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "roboguard/system.hpp"

namespace httplib {
class Server;
}

namespace roboguard {

struct StreamEvent {
    std::uint64_t seq = 0;
    std::string channel;
    nlohmann::json data;
};

nlohmann::json to_json(const StreamEvent& e);

/// Bounded, sequenced event log shared by every stream client.
class StreamHub {
public:
    static const std::set<std::string>& channels();

    explicit StreamHub(std::size_t capacity = 8192) : capacity_(capacity) {}

    std::uint64_t publish(const std::string& channel, nlohmann::json data);
    /// Events with seq > cursor on the given channels (all when empty).
    std::vector<StreamEvent> since(std::uint64_t cursor, const std::set<std::string>& channels, std::size_t limit = 0) const;
    /// Blocks up to `timeout` for an event past `cursor`.
    std::vector<StreamEvent> wait(std::uint64_t cursor, const std::set<std::string>& channels, std::chrono::milliseconds timeout,
                                  std::size_t limit = 0);
    std::uint64_t last_seq() const;
    /// Oldest seq still buffered; a cursor below it has missed events.
    std::uint64_t first_seq() const;
    void close();
    bool closed() const;

private:
    std::size_t capacity_;
    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::deque<StreamEvent> log_;
    std::uint64_t next_ = 1;
    bool closed_ = false;
};

struct GatewayConfig {
    std::string host = "127.0.0.1";
    int port = 8080;  // 0 picks a free port
    std::size_t stream_capacity = 8192;
    double scenario_speed = 1.0;  // pacing for POST /v1/scenario/start without a body
};

class Gateway {
public:
    Gateway(System& system, GatewayConfig cfg = {});
    ~Gateway();
    Gateway(const Gateway&) = delete;
    Gateway& operator=(const Gateway&) = delete;

    /// Binds and serves in a background thread. Throws PortUnavailable.
    void start();
    void stop();
    int port() const { return port_; }
    StreamHub& hub() { return *hub_; }

private:
    void routes();

    System& sys_;
    GatewayConfig cfg_;
    std::shared_ptr<StreamHub> hub_;
    std::unique_ptr<httplib::Server> server_;
    std::thread thread_;
    int port_ = 0;
};

}  // namespace roboguard
