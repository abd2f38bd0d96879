#include "roboguard/gateway.hpp"

#include <chrono>
#include <sstream>

#include <httplib.h>

#include "roboguard/error.hpp"

namespace roboguard {

using nlohmann::json;

json to_json(const StreamEvent& e) { return {{"seq", e.seq}, {"channel", e.channel}, {"data", e.data}}; }

// ---------------------------------------------------------------------------

const std::set<std::string>& StreamHub::channels() {
    static const std::set<std::string> c = {"alarms", "risk", "frames", "graph", "status"};
    return c;
}

std::uint64_t StreamHub::publish(const std::string& channel, json data) {
    std::uint64_t seq = 0;
    {
        std::lock_guard lock(mu_);
        seq = next_++;
        log_.push_back({seq, channel, std::move(data)});
        while (log_.size() > capacity_) log_.pop_front();
    }
    cv_.notify_all();
    return seq;
}

std::vector<StreamEvent> StreamHub::since(std::uint64_t cursor, const std::set<std::string>& channels, std::size_t limit) const {
    std::lock_guard lock(mu_);
    std::vector<StreamEvent> out;
    for (const auto& e : log_) {
        if (e.seq <= cursor) continue;
        if (!channels.empty() && !channels.count(e.channel)) continue;
        out.push_back(e);
        if (limit > 0 && out.size() >= limit) break;
    }
    return out;
}

std::vector<StreamEvent> StreamHub::wait(std::uint64_t cursor, const std::set<std::string>& channels, std::chrono::milliseconds timeout,
                                         std::size_t limit) {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    while (true) {
        std::uint64_t seen = 0;
        {
            std::lock_guard lock(mu_);
            seen = next_;
        }
        auto out = since(cursor, channels, limit);
        if (!out.empty()) return out;
        std::unique_lock lock(mu_);
        if (closed_) return {};
        if (!cv_.wait_until(lock, deadline, [&] { return closed_ || next_ != seen; })) return {};
    }
}

std::uint64_t StreamHub::last_seq() const {
    std::lock_guard lock(mu_);
    return next_ - 1;
}

std::uint64_t StreamHub::first_seq() const {
    std::lock_guard lock(mu_);
    return log_.empty() ? next_ : log_.front().seq;
}

void StreamHub::close() {
    {
        std::lock_guard lock(mu_);
        closed_ = true;
    }
    cv_.notify_all();
}

bool StreamHub::closed() const {
    std::lock_guard lock(mu_);
    return closed_;
}

// ---------------------------------------------------------------------------

namespace {

int status_for(ErrorCode c) {
    switch (c) {
        case ErrorCode::UnknownAlarm:
        case ErrorCode::UnknownNode:
        case ErrorCode::NoSnapshot:
        case ErrorCode::UnknownTopic: return 404;
        case ErrorCode::AlreadyResolved:
        case ErrorCode::NodeUnhealthy:
        case ErrorCode::CycleGuardTripped:
        case ErrorCode::ScenarioNotRunning: return 409;
        default: return 400;
    }
}

void reply(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void reply_error(httplib::Response& res, int status, const std::string& code, const std::string& message) {
    reply(res, status, {{"error", code}, {"message", message}});
}

std::set<std::string> parse_channels(const std::string& csv) {
    std::set<std::string> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.insert(item);
    return out;
}

bool valid_channels(const std::set<std::string>& cs) {
    for (const auto& c : cs)
        if (!StreamHub::channels().count(c)) return false;
    return true;
}

json body_of(const httplib::Request& req) {
    if (req.body.empty()) return json::object();
    auto j = json::parse(req.body);
    if (!j.is_object()) throw json::type_error::create(302, "body must be a JSON object", nullptr);
    return j;
}

std::uint64_t cursor_of(const httplib::Request& req) {
    if (req.has_param("cursor")) return std::stoull(req.get_param_value("cursor"));
    if (req.has_header("Last-Event-ID")) return std::stoull(req.get_header_value("Last-Event-ID"));
    return 0;
}

// Wraps a handler so library errors and bad JSON map to status codes.
template <typename F>
httplib::Server::Handler guarded(F fn) {
    return [fn](const httplib::Request& req, httplib::Response& res) {
        try {
            fn(req, res);
        } catch (const Error& e) {
            reply_error(res, status_for(e.code()), std::string(to_string(e.code())), e.what());
        } catch (const json::exception& e) {
            reply_error(res, 400, "BadRequest", e.what());
        } catch (const std::invalid_argument& e) {
            reply_error(res, 400, "BadRequest", e.what());
        } catch (const std::out_of_range& e) {
            reply_error(res, 400, "BadRequest", e.what());
        }
    };
}

}  // namespace

Gateway::Gateway(System& system, GatewayConfig cfg)
    : sys_(system), cfg_(std::move(cfg)), hub_(std::make_shared<StreamHub>(cfg_.stream_capacity)),
      server_(std::make_unique<httplib::Server>()) {
    // httplib's default adds SO_REUSEPORT, which would let a second gateway
    // share a port silently
    server_->set_socket_options([](socket_t sock) {
        int yes = 1;
        setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const char*>(&yes), sizeof yes);
    });
    std::weak_ptr<StreamHub> weak = hub_;
    sys_.on_event([weak](const std::string& channel, const json& event) {
        if (auto h = weak.lock()) h->publish(channel, event);
    });
    routes();
}

Gateway::~Gateway() { stop(); }

void Gateway::start() {
    if (thread_.joinable()) return;
    if (cfg_.port == 0) {
        port_ = server_->bind_to_any_port(cfg_.host);
        if (port_ <= 0) throw Error(ErrorCode::PortUnavailable, cfg_.host + ": no free port");
    } else {
        if (!server_->bind_to_port(cfg_.host, cfg_.port))
            throw Error(ErrorCode::PortUnavailable, cfg_.host + ":" + std::to_string(cfg_.port));
        port_ = cfg_.port;
    }
    thread_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
}

void Gateway::stop() {
    hub_->close();
    if (server_) server_->stop();
    if (thread_.joinable()) thread_.join();
}

void Gateway::routes() {
    auto& s = *server_;
    System& sys = sys_;
    auto hub = hub_;

    s.Get("/v1/health", guarded([&sys](const httplib::Request&, httplib::Response& res) { reply(res, 200, sys.health_json()); }));

    s.Get("/v1/metrics", guarded([&sys, hub](const httplib::Request&, httplib::Response& res) {
              auto j = sys.metrics_json();
              j["gateway"] = {{"stream_seq", hub->last_seq()}, {"stream_first_seq", hub->first_seq()}};
              reply(res, 200, j);
          }));

    s.Get("/v1/graph", guarded([&sys](const httplib::Request&, httplib::Response& res) { reply(res, 200, sys.graph_json()); }));
    s.Get("/v1/risk", guarded([&sys](const httplib::Request&, httplib::Response& res) { reply(res, 200, sys.risk_json()); }));

    s.Get("/v1/alarms", guarded([&sys](const httplib::Request& req, httplib::Response& res) {
              std::optional<AlarmState> state;
              if (req.has_param("state")) state = alarm_state_from_string(req.get_param_value("state"));
              json list = json::array();
              for (const auto& a : sys.alarms(state)) list.push_back(to_json(a));
              reply(res, 200, {{"alarms", list}, {"suppression", sys.alarm_model_json()}});
          }));

    s.Get("/v1/frames", guarded([&sys](const httplib::Request& req, httplib::Response& res) {
              std::optional<std::string> topic;
              if (req.has_param("topic")) topic = req.get_param_value("topic");
              std::size_t limit = 60;
              if (req.has_param("limit")) limit = std::stoul(req.get_param_value("limit"));
              json list = json::array();
              for (const auto& f : sys.frames(topic, limit)) list.push_back(to_json(f));
              reply(res, 200, {{"frames", list}});
          }));

    s.Post(R"(/v1/alarms/(\d+)/feedback)", guarded([&sys](const httplib::Request& req, httplib::Response& res) {
               const auto id = std::stoull(req.matches[1].str());
               const auto body = body_of(req);
               const auto action = feedback_action_from_string(body.at("action").get<std::string>());
               const auto a = sys.feedback(id, action);
               auto counts = json::object();
               for (const auto& m : sys.alarm_model_json())
                   if (m.value("signature", json()).value("key", "") == a.signature.key()) counts = m;
               reply(res, 200, {{"alarm", to_json(a)}, {"model", counts}});
           }));

    s.Post("/v1/estop", guarded([&sys](const httplib::Request&, httplib::Response& res) {
               const auto r = sys.enter_safe_mode("operator");
               if (!r.changed) return reply_error(res, 409, "already-in-safe-mode", "system is already in safe mode");
               reply(res, 200, to_json(r));
           }));

    s.Post("/v1/safe_mode", guarded([&sys](const httplib::Request& req, httplib::Response& res) {
               const auto body = body_of(req);
               const std::string action = body.contains("action") ? body["action"].get<std::string>() : body.at("mode").get<std::string>();
               if (action == "enter") return reply(res, 200, to_json(sys.enter_safe_mode("operator")));
               if (action == "exit") return reply(res, 200, to_json(sys.exit_safe_mode()));
               reply_error(res, 400, "BadRequest", "action must be enter or exit");
           }));

    s.Post("/v1/inject", guarded([&sys](const httplib::Request& req, httplib::Response& res) {
               const auto body = body_of(req);
               const auto kind = injection_kind_from_string(body.at("kind").get<std::string>());
               const double magnitude = body.value("magnitude", default_magnitude(kind));
               const auto duration = body.value("duration_ms", std::int64_t{3000});
               const auto id = sys.inject(kind, magnitude, duration);
               reply(res, 200, {{"id", id}, {"kind", to_string(kind)}, {"magnitude", magnitude}, {"duration_ms", duration}});
           }));

    s.Post(R"(/v1/snapshot/([^/]+))", guarded([&sys](const httplib::Request& req, httplib::Response& res) {
               const auto snap = sys.snapshot(req.matches[1].str());
               reply(res, 200, {{"node", snap.node}, {"t_ms", snap.t_ms}, {"health_ms", snap.health_ms}});
           }));

    s.Post(R"(/v1/restore/([^/]+))", guarded([&sys](const httplib::Request& req, httplib::Response& res) {
               const auto node = req.matches[1].str();
               const auto body = body_of(req);
               const FaultSignature sig{node, body.value("detector_id", std::string("operator")), body.value("kind", std::string("manual"))};
               reply(res, 200, to_json(sys.restore(node, sig)));
           }));

    s.Post(R"(/v1/scenario/(start|stop))", guarded([&sys, this](const httplib::Request& req, httplib::Response& res) {
               if (req.matches[1].str() == "start") {
                   const auto body = body_of(req);
                   sys.start(body.value("speed", cfg_.scenario_speed));
               } else {
                   sys.stop();
               }
               reply(res, 200, {{"running", sys.running()}, {"ended", sys.ended()}, {"t_ms", sys.now_ms()}});
           }));

    s.Get("/v1/events", guarded([hub](const httplib::Request& req, httplib::Response& res) {
              const auto channels = req.has_param("channels") ? parse_channels(req.get_param_value("channels")) : std::set<std::string>{};
              if (!valid_channels(channels)) return reply_error(res, 400, "BadRequest", "unknown channel");
              const auto cursor = cursor_of(req);
              const auto wait_ms = req.has_param("wait_ms") ? std::stol(req.get_param_value("wait_ms")) : 0L;
              const std::size_t limit = req.has_param("limit") ? std::stoul(req.get_param_value("limit")) : 1000;
              auto events = wait_ms > 0 ? hub->wait(cursor, channels, std::chrono::milliseconds(wait_ms), limit)
                                        : hub->since(cursor, channels, limit);
              json list = json::array();
              std::uint64_t next = cursor;
              for (const auto& e : events) {
                  list.push_back(to_json(e));
                  next = e.seq;
              }
              reply(res, 200, {{"events", list}, {"cursor", next}, {"missed", cursor + 1 < hub->first_seq()}});
          }));

    auto stream = [hub](const httplib::Request& req, httplib::Response& res, std::set<std::string> channels, std::uint64_t cursor) {
        if (!valid_channels(channels)) return reply_error(res, 400, "BadRequest", "unknown channel");
        res.set_header("Cache-Control", "no-cache");
        res.set_chunked_content_provider("text/event-stream", [hub, channels, cursor](std::size_t, httplib::DataSink& sink) mutable {
            while (!hub->closed()) {
                auto events = hub->wait(cursor, channels, std::chrono::milliseconds(250), 256);
                if (events.empty()) {
                    static const std::string ping = ": keep-alive\n\n";
                    if (!sink.write(ping.data(), ping.size())) return false;
                    continue;
                }
                for (const auto& e : events) {
                    const std::string frame = "id: " + std::to_string(e.seq) + "\nevent: " + e.channel + "\ndata: " + to_json(e).dump() + "\n\n";
                    if (!sink.write(frame.data(), frame.size())) return false;
                    cursor = e.seq;
                }
            }
            sink.done();
            return true;
        });
        (void)req;
    };

    s.Get("/v1/stream", guarded([stream](const httplib::Request& req, httplib::Response& res) {
              const auto channels = req.has_param("channels") ? parse_channels(req.get_param_value("channels")) : std::set<std::string>{};
              stream(req, res, channels, cursor_of(req));
          }));

    // subscribe message {"subscribe": [...], "cursor": N}
    s.Post("/v1/stream", guarded([stream](const httplib::Request& req, httplib::Response& res) {
               const auto body = body_of(req);
               std::set<std::string> channels;
               for (const auto& c : body.at("subscribe")) channels.insert(c.get<std::string>());
               stream(req, res, channels, body.value("cursor", std::uint64_t{0}));
           }));

    s.set_pre_routing_handler([](const httplib::Request&, httplib::Response& res) {
        res.set_header("Access-Control-Allow-Origin", "*");
        return httplib::Server::HandlerResponse::Unhandled;
    });
    s.Options(R"(/v1/.*)", [](const httplib::Request&, httplib::Response& res) {
        res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
        res.set_header("Access-Control-Allow-Headers", "Content-Type, Last-Event-ID");
        res.status = 204;
    });
}

}  // namespace roboguard
