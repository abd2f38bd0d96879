#include "roboguard/simbot.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "roboguard/error.hpp"

namespace roboguard {

using nlohmann::json;

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kArrivalRadius = 0.25;
constexpr double kHeadingGain = 1.5;
constexpr double kMaxTurnRate = 1.2;
constexpr std::int64_t kSpeedRedrawMs = 500;

double wrap_angle(double a) {
    while (a > kPi) a -= 2 * kPi;
    while (a < -kPi) a += 2 * kPi;
    return a;
}

std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t stream_seed(std::uint64_t seed, std::string_view stream) {
    std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
    for (unsigned char c : stream) h = (h ^ c) * 1099511628211ULL;
    return splitmix(seed ^ splitmix(h));
}

double gaussian(std::mt19937_64& rng, double sigma) { return std::normal_distribution<double>(0.0, sigma)(rng); }

const std::map<std::string, double>& cpu_base_load() {
    static const std::map<std::string, double> m = {
        {"base", 0.35}, {"lidar", 0.25}, {"monitor", 0.30}, {"nav", 0.45}, {"teleop", 0.10}};
    return m;
}

}  // namespace

std::string_view to_string(InjectionKind kind) {
    switch (kind) {
        case InjectionKind::JerkyDirection: return "jerky_direction";
        case InjectionKind::ControllerDisconnect: return "controller_disconnect";
        case InjectionKind::CounterintuitivePath: return "counterintuitive_path";
        case InjectionKind::VaryingSpeed: return "varying_speed";
        case InjectionKind::SensorSplash: return "sensor_splash";
    }
    return "jerky_direction";
}

InjectionKind injection_kind_from_string(std::string_view s) {
    if (s == "jerky_direction" || s == "jerky") return InjectionKind::JerkyDirection;
    if (s == "controller_disconnect" || s == "disconnect") return InjectionKind::ControllerDisconnect;
    if (s == "counterintuitive_path" || s == "counterintuitive") return InjectionKind::CounterintuitivePath;
    if (s == "varying_speed" || s == "varying") return InjectionKind::VaryingSpeed;
    if (s == "sensor_splash" || s == "splash") return InjectionKind::SensorSplash;
    throw Error(ErrorCode::InvalidScenario, "unknown injection kind '" + std::string(s) + "'");
}

std::set<std::string> perturbed_topics(InjectionKind kind) {
    switch (kind) {
        case InjectionKind::JerkyDirection:
        case InjectionKind::CounterintuitivePath:
        case InjectionKind::VaryingSpeed: return {"/cmd_vel", "/odom"};
        case InjectionKind::ControllerDisconnect: return {"/cmd_vel"};
        case InjectionKind::SensorSplash: return {"/scan_summary"};
    }
    return {};
}

double default_magnitude(InjectionKind kind) {
    switch (kind) {
        case InjectionKind::JerkyDirection: return 2.5;
        case InjectionKind::ControllerDisconnect: return 1.0;
        case InjectionKind::CounterintuitivePath: return 1.0;
        case InjectionKind::VaryingSpeed: return 0.8;
        case InjectionKind::SensorSplash: return 1.2;
    }
    return 1.0;
}

void validate_scenario(const Scenario& s) {
    auto bad = [](const std::string& why) { throw Error(ErrorCode::InvalidScenario, why); };
    if (s.tick_ms < 1) bad("tick_ms must be >= 1");
    if (s.duration_ms <= 0 || s.duration_ms % s.tick_ms != 0) bad("duration_ms must be a positive multiple of tick_ms");
    if (s.path.size() < 2) bad("path needs at least 2 waypoints");
    if (!(s.nominal_speed > 0) || !std::isfinite(s.nominal_speed)) bad("nominal_speed must be positive");
    for (const auto& inj : s.injections)
        if (!(0 <= inj.start_ms && inj.start_ms < inj.end_ms && inj.end_ms <= s.duration_ms))
            bad("injection " + std::string(to_string(inj.kind)) + " interval [" + std::to_string(inj.start_ms) + ", " +
                std::to_string(inj.end_ms) + "] outside scenario");
}

Scenario parse_scenario_yaml(std::string_view text) {
    Scenario s;
    try {
        YAML::Node root = YAML::Load(std::string(text));
        if (!root.IsMap()) throw Error(ErrorCode::InvalidScenario, "scenario must be a mapping");
        for (const auto& p : root["path"]) s.path.push_back({p[0].as<double>(), p[1].as<double>()});
        s.nominal_speed = root["nominal_speed"].as<double>(s.nominal_speed);
        s.duration_ms = root["duration_ms"].as<std::int64_t>(s.duration_ms);
        s.tick_ms = root["tick_ms"].as<std::int64_t>(s.tick_ms);
        s.seed = root["seed"].as<std::uint64_t>(s.seed);
        if (root["injections"]) {
            for (const auto& n : root["injections"]) {
                Injection inj;
                inj.kind = injection_kind_from_string(n["kind"].as<std::string>());
                inj.start_ms = n["start_ms"].as<std::int64_t>();
                inj.end_ms = n["end_ms"].as<std::int64_t>();
                inj.magnitude = n["magnitude"].as<double>(default_magnitude(inj.kind));
                s.injections.push_back(inj);
            }
        }
    } catch (const YAML::Exception& e) {
        throw Error(ErrorCode::InvalidScenario, e.what());
    }
    validate_scenario(s);
    return s;
}

Scenario load_scenario(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::InvalidScenario, "cannot read scenario file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_scenario_yaml(ss.str());
}

namespace {

// shortest text that reads back to the same double
std::string shortest(double v) {
    char buf[32];
    auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

}  // namespace

std::string scenario_to_yaml(const Scenario& s) {
    YAML::Emitter out;
    out << YAML::BeginMap;
    out << YAML::Key << "path" << YAML::Value << YAML::BeginSeq;
    for (const auto& w : s.path) out << YAML::Flow << YAML::BeginSeq << shortest(w.x) << shortest(w.y) << YAML::EndSeq;
    out << YAML::EndSeq;
    out << YAML::Key << "nominal_speed" << YAML::Value << shortest(s.nominal_speed);
    out << YAML::Key << "duration_ms" << YAML::Value << s.duration_ms;
    out << YAML::Key << "tick_ms" << YAML::Value << s.tick_ms;
    out << YAML::Key << "seed" << YAML::Value << s.seed;
    out << YAML::Key << "injections" << YAML::Value << YAML::BeginSeq;
    for (const auto& inj : s.injections) {
        out << YAML::Flow << YAML::BeginMap;
        out << YAML::Key << "kind" << YAML::Value << std::string(to_string(inj.kind));
        out << YAML::Key << "start_ms" << YAML::Value << inj.start_ms;
        out << YAML::Key << "end_ms" << YAML::Value << inj.end_ms;
        out << YAML::Key << "magnitude" << YAML::Value << shortest(inj.magnitude);
        out << YAML::EndMap;
    }
    out << YAML::EndSeq << YAML::EndMap;
    return std::string(out.c_str()) + "\n";
}

json to_json(const GroundTruthLabel& l) {
    return {{"start_ms", l.start_ms}, {"end_ms", l.end_ms}, {"kind", to_string(l.kind)}, {"expected_detection", l.expected_detection}};
}

GroundTruthLabel label_from_json(const json& j) {
    return {j.at("start_ms").get<std::int64_t>(), j.at("end_ms").get<std::int64_t>(),
            injection_kind_from_string(j.at("kind").get<std::string>()), j.at("expected_detection").get<bool>()};
}

void schedule_injections(Scenario& s, const std::vector<InjectionKind>& kinds, std::uint64_t seed, std::int64_t warmup_ms,
                         std::int64_t length_ms) {
    if (kinds.empty()) return;
    const std::int64_t span = s.duration_ms - warmup_ms;
    const std::int64_t slot = span / static_cast<std::int64_t>(kinds.size());
    if (slot < length_ms + 2000) throw Error(ErrorCode::InvalidScenario, "scenario too short for requested injections");
    std::mt19937_64 rng(stream_seed(seed, "schedule"));
    std::vector<InjectionKind> order = kinds;
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i = 0; i < order.size(); ++i) {
        const std::int64_t slot_start = warmup_ms + static_cast<std::int64_t>(i) * slot;
        const std::int64_t slack = slot - length_ms - 2000;
        std::int64_t offset = std::uniform_int_distribution<std::int64_t>(0, slack)(rng);
        offset -= offset % s.tick_ms;
        const std::int64_t start = slot_start + offset;
        s.injections.push_back({order[i], start, start + length_ms, default_magnitude(order[i])});
    }
    std::sort(s.injections.begin(), s.injections.end(), [](const Injection& a, const Injection& b) { return a.start_ms < b.start_ms; });
    validate_scenario(s);
}

const std::vector<std::string>& simbot_nodes() {
    static const std::vector<std::string> nodes = {"base", "lidar", "monitor", "nav", "teleop"};
    return nodes;
}

std::vector<TopicSchema> simbot_schemas() {
    std::vector<TopicSchema> out;
    out.push_back({"/cmd_vel", {{"angular", FieldKind::Float, Range{-kPi, kPi}}, {"linear", FieldKind::Float, Range{-3.0, 3.0}}}, 16});
    out.push_back({"/odom",
                   {{"angular", FieldKind::Float, Range{-kPi, kPi}},
                    {"linear", FieldKind::Float, Range{-3.0, 3.0}},
                    {"theta", FieldKind::Float, Range{-kPi, kPi}},
                    {"x", FieldKind::Float, std::nullopt},
                    {"y", FieldKind::Float, std::nullopt}},
                   16});
    out.push_back({"/battery", {{"percent", FieldKind::Float, Range{0.0, 100.0}}, {"voltage", FieldKind::Float, Range{10.0, 13.0}}}, 16});
    out.push_back({"/scan_summary",
                   {{"mean_range", FieldKind::Float, Range{0.05, 13.0}}, {"range", FieldKind::Float, Range{0.05, 13.0}}},
                   16,
                   RangePolicy::FlagAndDeliver});
    for (const auto& n : simbot_nodes()) out.push_back({"/sys/cpu/" + n, {{"load", FieldKind::Float, Range{0.0, 1.0}}}, 16});
    return out;
}

// ---------------------------------------------------------------------------

Simulator::Simulator(Bus& bus, Scenario scenario, SimRates rates)
    : bus_(bus), scenario_(std::move(scenario)), rates_(rates) {
    validate_scenario(scenario_);
    auto schemas = simbot_schemas();
    for (const auto& s : schemas)
        if (bus_.find_topic(s.name)) throw Error(ErrorCode::TopicCollision, s.name);

    static const std::map<std::string, std::vector<std::string>> tags = {
        {"teleop", {"operator", "cpu-reporting"}},
        {"base", {"actuator", "cpu-reporting"}},
        {"lidar", {"sensor", "cpu-reporting"}},
        {"nav", {"planner", "cpu-reporting"}},
        {"monitor", {"monitor", "cpu-reporting"}},
    };
    for (const auto& n : simbot_nodes()) bus_.register_node(n, tags.at(n));
    for (const auto& s : schemas) bus_.create_topic(s);
    handles_["/cmd_vel"] = bus_.advertise("teleop", "/cmd_vel");
    handles_["/odom"] = bus_.advertise("base", "/odom");
    handles_["/battery"] = bus_.advertise("base", "/battery");
    handles_["/scan_summary"] = bus_.advertise("lidar", "/scan_summary");
    for (const auto& n : simbot_nodes()) handles_["/sys/cpu/" + n] = bus_.advertise(n, "/sys/cpu/" + n);
    for (const auto& s : schemas) counts_[s.name] = 0;

    base_cmd_ = bus_.subscribe("base", "/cmd_vel");
    consumers_.push_back(bus_.subscribe("teleop", "/odom"));
    consumers_.push_back(bus_.subscribe("nav", "/odom"));
    consumers_.push_back(bus_.subscribe("nav", "/scan_summary"));
    consumers_.push_back(bus_.subscribe("monitor", "/battery"));
    for (const auto& n : simbot_nodes()) consumers_.push_back(bus_.subscribe("monitor", "/sys/cpu/" + n));

    const std::uint64_t seed = scenario_.seed;
    teleop_rng_.seed(stream_seed(seed, "/cmd_vel"));
    inject_rng_.seed(stream_seed(seed, "injections"));
    battery_rng_.seed(stream_seed(seed, "/battery"));
    scan_rng_.seed(stream_seed(seed, "/scan_summary"));
    for (const auto& n : simbot_nodes()) cpu_rng_[n].seed(stream_seed(seed, "/sys/cpu/" + n));

    pose_.x = scenario_.path[0].x;
    pose_.y = scenario_.path[0].y;
    pose_.theta = std::atan2(scenario_.path[1].y - pose_.y, scenario_.path[1].x - pose_.x);

    schedule_ = scenario_.injections;
    for (const auto& inj : schedule_)
        labels_.push_back({inj.start_ms, inj.end_ms, inj.kind, inj.kind != InjectionKind::SensorSplash});
}

bool Simulator::running() const { return !finished_; }

bool Simulator::active(InjectionKind kind, std::int64_t t, const Injection** which) const {
    for (const auto& inj : schedule_) {
        if (inj.kind == kind && inj.start_ms <= t && t < inj.end_ms) {
            if (which) *which = &inj;
            return true;
        }
    }
    return false;
}

void Simulator::publish(const std::string& topic, Payload payload) {
    auto r = bus_.publish(handles_.at(topic), std::move(payload), now_ms_);
    if (r.accepted()) ++counts_[topic];
}

Simulator::Command Simulator::teleop_command(std::int64_t t) {
    const auto& path = scenario_.path;
    const Injection* detour = nullptr;
    const bool perturb = !clamp_.has_value();

    if (perturb && active(InjectionKind::CounterintuitivePath, t, &detour)) {
        if (detour_injection_start_ != detour->start_ms) {
            detour_.clear();
            for (std::size_t i = 0; i < path.size(); ++i)
                if (i != target_) detour_.push_back(i);
            std::shuffle(detour_.begin(), detour_.end(), inject_rng_);
            detour_pos_ = 0;
            detour_injection_start_ = detour->start_ms;
        }
    } else {
        detour_injection_start_ = -1;
    }
    const bool detouring = detour_injection_start_ >= 0;

    auto goal_index = [&] { return detouring ? detour_[detour_pos_ % detour_.size()] : target_; };
    const Waypoint* goal = &path[goal_index()];
    if (std::hypot(goal->x - pose_.x, goal->y - pose_.y) < kArrivalRadius) {
        if (detouring) ++detour_pos_;
        else target_ = (target_ + 1) % path.size();
        goal = &path[goal_index()];
    }

    const double err = wrap_angle(std::atan2(goal->y - pose_.y, goal->x - pose_.x) - pose_.theta);
    Command c;
    c.angular = std::clamp(kHeadingGain * err, -kMaxTurnRate, kMaxTurnRate) + gaussian(teleop_rng_, 0.02);
    c.linear = scenario_.nominal_speed * std::max(0.2, std::cos(err)) + gaussian(teleop_rng_, 0.01);

    const Injection* inj = nullptr;
    if (perturb && active(InjectionKind::JerkyDirection, t, &inj)) {
        c.angular = jerky_sign_ * inj->magnitude;
        jerky_sign_ = -jerky_sign_;
    }
    if (perturb && active(InjectionKind::VaryingSpeed, t, &inj)) {
        if (t >= speed_factor_until_) {
            const double m = inj->magnitude;
            speed_factor_ = std::uniform_real_distribution<double>(1.0 - m, 1.0 + m)(inject_rng_);
            speed_factor_until_ = t + kSpeedRedrawMs;
        }
        c.linear *= speed_factor_;
    } else {
        speed_factor_until_ = -1;
    }
    if (clamp_) c.linear = std::clamp(c.linear, clamp_->lo, clamp_->hi);
    return c;
}

Simulator::~Simulator() {
    try {
        bus_.unsubscribe(base_cmd_);
        for (auto& c : consumers_) bus_.unsubscribe(c);
    } catch (...) {
    }
}

bool Simulator::step() {
    if (finished_) return false;
    {
        std::lock_guard lock(live_mu_);
        while (!pending_.empty()) {
            Injection inj = pending_.front();
            pending_.pop_front();
            const std::int64_t len = inj.end_ms - inj.start_ms;
            inj.start_ms = now_ms_;
            inj.end_ms = std::min(now_ms_ + len, scenario_.duration_ms);
            schedule_.push_back(inj);
            labels_.push_back({inj.start_ms, inj.end_ms, inj.kind, inj.kind != InjectionKind::SensorSplash});
        }
    }

    const std::int64_t t = now_ms_;
    if (t % rates_.cmd_vel_period_ms == 0) {
        Command c = teleop_command(t);
        if (!active(InjectionKind::ControllerDisconnect, t)) {
            publish("/cmd_vel", {{"angular", c.angular}, {"linear", c.linear}});
        }
    }
    for (const auto& m : base_cmd_.drain()) {
        held_.linear = as_number(m.payload.at("linear")).value_or(held_.linear);
        held_.angular = as_number(m.payload.at("angular")).value_or(held_.angular);
    }
    for (auto& c : consumers_) c.drain();

    const double dt = static_cast<double>(scenario_.tick_ms) / 1000.0;
    pose_.x += held_.linear * std::cos(pose_.theta) * dt;
    pose_.y += held_.linear * std::sin(pose_.theta) * dt;
    pose_.theta = wrap_angle(pose_.theta + held_.angular * dt);

    if (t % rates_.odom_period_ms == rates_.odom_phase_ms % rates_.odom_period_ms) {
        publish("/odom", {{"angular", held_.angular}, {"linear", held_.linear}, {"theta", pose_.theta}, {"x", pose_.x}, {"y", pose_.y}});
    }
    if (t % rates_.scan_period_ms == rates_.scan_phase_ms % rates_.scan_period_ms) {
        const double ts = static_cast<double>(t) / 1000.0;
        double range = std::clamp(1.0 + 0.5 * std::sin(ts / 3.0) + gaussian(scan_rng_, 0.02), 0.05, 13.0);
        double mean_range = std::clamp(4.0 + 0.5 * std::sin(ts / 7.0) + gaussian(scan_rng_, 0.05), 0.05, 13.0);
        const Injection* inj = nullptr;
        if (active(InjectionKind::SensorSplash, t, &inj)) {
            range = 13.0 + inj->magnitude;
            mean_range = 13.0 + inj->magnitude;
        }
        publish("/scan_summary", {{"mean_range", mean_range}, {"range", range}});
    }
    if (t % rates_.battery_period_ms == 0) {
        const double ts = static_cast<double>(t) / 1000.0;
        const double percent = std::clamp(100.0 - 0.02 * ts + gaussian(battery_rng_, 0.05), 0.0, 100.0);
        const double voltage = std::clamp(10.8 + 0.018 * percent + gaussian(battery_rng_, 0.01), 10.0, 13.0);
        publish("/battery", {{"percent", percent}, {"voltage", voltage}});
    }
    if (t % rates_.cpu_period_ms == 0) {
        for (const auto& n : simbot_nodes()) {
            const double load = std::clamp(cpu_base_load().at(n) + gaussian(cpu_rng_[n], 0.02), 0.0, 1.0);
            publish("/sys/cpu/" + n, {{"load", load}});
        }
    }

    now_ms_ += scenario_.tick_ms;
    if (now_ms_ >= scenario_.duration_ms) finished_ = true;
    return !finished_;
}

void Simulator::run_to_end() {
    while (step()) {
    }
}

std::uint64_t Simulator::inject_live(InjectionKind kind, double magnitude, std::int64_t duration_ms) {
    if (duration_ms <= 0) throw Error(ErrorCode::InvalidScenario, "injection duration must be positive");
    std::lock_guard lock(live_mu_);
    if (finished_) throw Error(ErrorCode::ScenarioNotRunning, "scenario has ended");
    pending_.push_back({kind, 0, duration_ms, magnitude});
    return labels_.size() + pending_.size();
}

void Simulator::set_speed_clamp(std::optional<Range> clamp) { clamp_ = clamp; }

ScenarioReport Simulator::report() const {
    std::lock_guard lock(live_mu_);
    return {counts_, labels_};
}

json Simulator::save_state() const {
    return {{"pose", {pose_.x, pose_.y, pose_.theta}},
            {"held", {held_.linear, held_.angular}},
            {"target", target_},
            {"detour", detour_},
            {"detour_pos", detour_pos_},
            {"detour_injection_start", detour_injection_start_},
            {"jerky_sign", jerky_sign_},
            {"speed_factor", speed_factor_},
            {"speed_factor_until", speed_factor_until_}};
}

void Simulator::load_state(const json& j) {
    pose_ = {j.at("pose")[0].get<double>(), j.at("pose")[1].get<double>(), j.at("pose")[2].get<double>()};
    held_ = {j.at("held")[0].get<double>(), j.at("held")[1].get<double>()};
    target_ = j.at("target").get<std::size_t>();
    detour_ = j.at("detour").get<std::vector<std::size_t>>();
    detour_pos_ = j.at("detour_pos").get<std::size_t>();
    detour_injection_start_ = j.at("detour_injection_start").get<std::int64_t>();
    jerky_sign_ = j.at("jerky_sign").get<int>();
    speed_factor_ = j.at("speed_factor").get<double>();
    speed_factor_until_ = j.at("speed_factor_until").get<std::int64_t>();
}

ScenarioReport run_scenario(const Scenario& scenario, Bus& bus) {
    Simulator sim(bus, scenario);
    sim.run_to_end();
    return sim.report();
}

}  // namespace roboguard
