#include "roboguard/system.hpp"

#include <algorithm>
#include <chrono>

#include "roboguard/error.hpp"

namespace roboguard {

using nlohmann::json;

std::string_view to_string(SystemMode m) { return m == SystemMode::Safe ? "safe" : "full"; }

json to_json(const SafeModeReport& r) {
    json j = {{"changed", r.changed}, {"mode", to_string(r.mode)}, {"t_ms", r.t_ms}, {"trigger", r.trigger},
              {"paused", r.paused}, {"warm_restarted", r.warm_restarted}, {"speed_clamp", nullptr}};
    if (r.speed_clamp) j["speed_clamp"] = {r.speed_clamp->lo, r.speed_clamp->hi};
    return j;
}

namespace {

bool intersects(const std::set<std::string>& a, const std::set<std::string>& b) {
    for (const auto& x : a)
        if (b.count(x)) return true;
    return false;
}

}  // namespace

System::System(SystemConfig cfg, std::shared_ptr<TraceSink> sink)
    : cfg_(std::move(cfg)), sink_(std::move(sink)), pipeline_(cfg_.pipeline), recovery_(cfg_.recovery) {
    if (!sink_) {
        memory_ = std::make_shared<MemorySink>();
        sink_ = memory_;
    }
    // the recorder subscribes before any topic exists, so it sees every first message
    capture_ = std::make_unique<Capture>(bus_, sink_, CaptureOptions{cfg_.capture_queue_depth, "capture", false});
    feed_ = bus_.subscribe("monitor", "*", {cfg_.capture_queue_depth, false});
    sim_ = std::make_unique<Simulator>(bus_, cfg_.scenario, cfg_.rates);
    pipeline_.refresh(bus_.directory());

    recovery_.register_node(std::string(kControllerNode),
                            {[this] { return sim_->save_state(); }, [this](const json& j) { sim_->load_state(j); }});
    recovery_.register_node(std::string(kDetectorNode), {[this] { return pipeline_.save_detectors(); },
                                                         [this](const json& j) { pipeline_.load_detectors(j); }});
    if (pipeline_.envelope()) {
        recovery_.register_node(std::string(kEnvelopeNode), {[this] { return pipeline_.envelope()->save_state(); },
                                                             [this](const json& j) { pipeline_.envelope()->load_state(j); }});
    }
    recovery_.on_escalation([this](const FaultSignature& sig, int restores, std::int64_t t) {
        ++escalations_;
        pipeline_.desk().escalate(sig.node, sig.key(), restores, t);
        emit("status", {{"event", "escalation"}, {"node", sig.node}, {"signature", sig.key()}, {"restores", restores}, {"t_ms", t}});
        enter_locked("escalation", t);
    });
    pipeline_.desk().on_change([this](const Alarm& a) { emit("alarms", roboguard::to_json(a)); });
}

System::~System() {
    stop();
    try {
        finish();
        bus_.unsubscribe(feed_);
    } catch (...) {
    }
}

bool System::ended() const {
    auto l = lock();
    return finished_ || !sim_->running();
}

bool System::step() {
    auto l = lock();
    if (finished_ || !sim_->running()) return false;
    const bool more = sim_->step();
    capture_->pump();
    for (const auto& m : feed_.drain()) handle(pipeline_.process(m));
    handle(pipeline_.advance_to(sim_->now_ms()));
    if (pipeline_.refresh(bus_.directory())) emit("graph", pipeline_.hierarchy().to_json());
    return more;
}

void System::run_to_end() {
    while (step()) {
    }
    finish();
}

void System::finish() {
    auto l = lock();
    if (finished_) return;
    for (const auto& m : feed_.drain()) handle(pipeline_.process(m));
    handle(pipeline_.advance_to(sim_->now_ms()));
    capture_->stop();
    finished_ = true;
    emit("status", {{"event", "scenario_end"}, {"t_ms", sim_->now_ms()}});
}

void System::handle(const PipelineStep& out) {
    for (const auto& e : out.events) {
        for (const auto& node : recovery_.nodes())
            if (intersects(e.topics, node_topics(node))) recovery_.note_anomaly(node, e.t_ms);
        auto_restore(e);
    }
    if (out.estop) {
        recovery_.note_anomaly(std::string(kEnvelopeNode), out.estop->t_ms);
        emit("risk", risk_json());
        if (cfg_.safe_mode_on_estop) enter_locked("estop", out.estop->t_ms);
    }
    for (const auto& f : out.frames) {
        emit("frames", to_json(f));
        emit("risk", risk_json());
        periodic_snapshots(f.window.end_ms);
    }
}

std::set<std::string> System::node_topics(const std::string& node) const {
    if (node == kControllerNode) return {"/cmd_vel", "/odom"};
    if (node == kDetectorNode) return pipeline_.detector_topics();
    if (node == kEnvelopeNode) return pipeline_.envelope_topics();
    return {};
}

void System::periodic_snapshots(std::int64_t t_ms) {
    if (cfg_.snapshot_interval_ms <= 0) return;
    for (const auto& node : recovery_.nodes()) {
        if (mode_ == SystemMode::Safe && node == kDetectorNode) continue;  // paused, nothing new to keep
        auto it = last_snapshot_.find(node);
        if (it != last_snapshot_.end() && t_ms - it->second < cfg_.snapshot_interval_ms) continue;
        if (!recovery_.healthy(node, t_ms)) continue;
        recovery_.take_snapshot(node, t_ms);
        last_snapshot_[node] = t_ms;
    }
}

void System::auto_restore(const AnomalyEvent& e) {
    for (const auto& node : cfg_.auto_restore) {
        if (!intersects(e.topics, node_topics(node))) continue;
        const FaultSignature sig{node, e.detector_id, std::string(to_string(e.kind))};
        if (recovery_.guard().disabled(sig) || !recovery_.latest(node)) continue;
        const auto r = recovery_.restore(node, sig, e.window_end_ms);
        if (r.restored) {
            ++restores_;
            emit("status", {{"event", "restore"}, {"report", roboguard::to_json(r)}});
        }
    }
}

std::optional<Range> System::speed_clamp() const {
    if (const auto* env = pipeline_.envelope()) {
        for (const auto* source : {"/cmd_vel.linear", "/odom.linear"})
            for (const auto& d : env->envelope().dims)
                if (d.source == source) return Range{d.n_lo, d.n_hi};
        if (const auto* d = env->envelope().dim("speed")) return Range{d->n_lo, d->n_hi};
    }
    return Range{0.0, cfg_.scenario.nominal_speed};
}

SafeModeReport System::enter_locked(const std::string& trigger, std::int64_t t_ms) {
    SafeModeReport r;
    r.mode = SystemMode::Safe;
    r.t_ms = t_ms;
    r.trigger = trigger;
    r.speed_clamp = speed_clamp();
    if (mode_ == SystemMode::Safe) return r;
    r.changed = true;
    mode_ = SystemMode::Safe;
    pipeline_.set_paused(true);
    for (const auto& d : pipeline_.detectors()) r.paused.push_back(d.config().id);
    sim_->set_speed_clamp(r.speed_clamp);
    mode_log_.push_back(r);
    emit("status", {{"event", "mode"}, {"report", to_json(r)}});
    return r;
}

SafeModeReport System::enter_safe_mode(const std::string& trigger) {
    auto l = lock();
    return enter_locked(trigger, sim_->now_ms());
}

SafeModeReport System::exit_safe_mode() {
    auto l = lock();
    SafeModeReport r;
    r.mode = SystemMode::Full;
    r.t_ms = sim_->now_ms();
    r.trigger = "operator";
    if (mode_ == SystemMode::Full) return r;
    r.changed = true;
    mode_ = SystemMode::Full;
    sim_->set_speed_clamp(std::nullopt);
    if (auto snap = recovery_.latest(std::string(kDetectorNode))) {
        pipeline_.load_detectors(snap->state);
        r.warm_restarted = true;
    }
    pipeline_.reset_envelope();
    pipeline_.set_paused(false);
    mode_log_.push_back(r);
    emit("status", {{"event", "mode"}, {"report", to_json(r)}});
    return r;
}

SystemMode System::mode() const {
    auto l = lock();
    return mode_;
}

std::uint64_t System::inject(InjectionKind kind, double magnitude, std::int64_t duration_ms) {
    auto l = lock();
    if (finished_) throw Error(ErrorCode::ScenarioNotRunning, "scenario has ended");
    const auto id = sim_->inject_live(kind, magnitude, duration_ms);
    emit("status", {{"event", "inject"}, {"kind", to_string(kind)}, {"magnitude", magnitude}, {"duration_ms", duration_ms},
                    {"t_ms", sim_->now_ms()}});
    return id;
}

Snapshot System::snapshot(const std::string& node) {
    auto l = lock();
    auto s = recovery_.take_snapshot(node, sim_->now_ms());
    last_snapshot_[node] = s.t_ms;
    return s;
}

RestoreReport System::restore(const std::string& node, const FaultSignature& sig) {
    auto l = lock();
    auto r = recovery_.restore(node, sig, sim_->now_ms());
    if (r.restored) ++restores_;
    emit("status", {{"event", "restore"}, {"report", roboguard::to_json(r)}});
    return r;
}

Alarm System::feedback(std::uint64_t alarm_id, FeedbackAction action) {
    auto l = lock();
    return pipeline_.desk().feedback(alarm_id, action);
}

std::int64_t System::now_ms() const {
    auto l = lock();
    return sim_->now_ms();
}

std::vector<Alarm> System::alarms(std::optional<AlarmState> state) const {
    auto l = lock();
    return pipeline_.desk().alarms(state);
}

std::vector<FeatureFrame> System::frames(const std::optional<std::string>& topic, std::size_t limit) const {
    auto l = lock();
    return pipeline_.frames(topic, limit);
}

ScenarioReport System::report() const {
    auto l = lock();
    return sim_->report();
}

CaptureStats System::capture_stats() const {
    auto l = lock();
    return capture_->stats();
}

Trace System::trace() const {
    auto l = lock();
    return memory_ ? memory_->records() : Trace{};
}

json System::health_json() const {
    auto l = lock();
    return {{"status", "ok"}, {"mode", to_string(mode_)}};
}

json System::metrics_json() const {
    auto l = lock();
    const double seconds = std::max<double>(1.0, static_cast<double>(sim_->now_ms())) / 1000.0;
    json topics = json::object();
    std::map<std::string, double> node_rate;
    const auto dir = bus_.directory();
    for (const auto& m : bus_.topic_metrics()) {
        topics[m.topic] = {{"published", m.published}, {"rejected", m.rejected}, {"flagged", m.flagged},
                           {"last_t_ms", m.last_t_ms}, {"rate_hz", static_cast<double>(m.published) / seconds}};
        if (auto it = dir.publishers.find(m.topic); it != dir.publishers.end())
            for (const auto& n : it->second) node_rate[n] += static_cast<double>(m.published) / seconds;
    }
    json subs = json::array();
    for (const auto& s : bus_.subscription_metrics())
        subs.push_back({{"id", s.id}, {"node", s.node}, {"depth", s.depth}, {"capacity", s.capacity}, {"drops", s.drops},
                        {"enqueued", s.enqueued}});
    const auto cs = capture_->stats();
    return {{"t_ms", sim_->now_ms()},
            {"mode", to_string(mode_)},
            {"scenario", {{"running", runner_active_.load()}, {"ended", finished_ || !sim_->running()}}},
            {"node_rates_hz", node_rate},
            {"topics", topics},
            {"subscriptions", subs},
            {"capture",
             {{"records_written", cs.records_written},
              {"capture_drops", cs.capture_drops},
              {"records_enqueued", cs.records_enqueued},
              {"topics_seen", cs.topics_seen}}},
            {"validity_events", bus_.validity_events()},
            {"pipeline", to_json(pipeline_.counters())},
            {"recovery", {{"restores", restores_}, {"escalations", escalations_}}}};
}

json System::graph_json() const {
    auto l = lock();
    return pipeline_.hierarchy().to_json();
}

json System::risk_json() const {
    auto l = lock();
    json j = pipeline_.envelope() ? pipeline_.envelope()->risk_json() : json::object();
    j["t_ms"] = sim_->now_ms();
    j["mode"] = to_string(mode_);
    return j;
}

json System::alarm_model_json() const {
    auto l = lock();
    return pipeline_.desk().model_json();
}

json System::recovery_json() const {
    auto l = lock();
    return recovery_.to_json();
}

void System::on_event(EventListener listener) {
    auto l = lock();
    listeners_.push_back(std::move(listener));
}

void System::emit(const std::string& channel, const json& event) {
    for (const auto& fn : listeners_) fn(channel, event);
}

void System::start(double speed) {
    auto l = lock();
    if (runner_active_) return;
    if (finished_ || !sim_->running()) throw Error(ErrorCode::ScenarioNotRunning, "scenario has ended");
    if (runner_.joinable()) runner_.join();
    runner_stop_ = false;
    runner_active_ = true;
    runner_ = std::thread([this, speed] { runner_loop(speed); });
    emit("status", {{"event", "scenario_start"}, {"t_ms", sim_->now_ms()}});
}

void System::stop() {
    runner_stop_ = true;
    if (runner_.joinable() && runner_.get_id() != std::this_thread::get_id()) runner_.join();
    if (runner_active_.exchange(false)) {
        auto l = lock();
        emit("status", {{"event", "scenario_stop"}, {"t_ms", sim_->now_ms()}});
    }
}

void System::runner_loop(double speed) {
    using clock = std::chrono::steady_clock;
    const auto tick = std::chrono::duration<double, std::milli>(static_cast<double>(cfg_.scenario.tick_ms) / (speed > 0 ? speed : 1.0));
    auto next = clock::now();
    while (!runner_stop_) {
        if (!step()) {
            finish();
            break;
        }
        if (speed > 0) {
            next += std::chrono::duration_cast<clock::duration>(tick);
            std::this_thread::sleep_until(next);
        }
    }
    runner_active_ = false;
}

}  // namespace roboguard
