#include "roboguard/capture.hpp"

#include <algorithm>
#include <chrono>
#include <map>

#include "roboguard/error.hpp"

namespace roboguard {

JsonlFileSink::JsonlFileSink(const std::filesystem::path& path) : out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw Error(ErrorCode::SinkUnwritable, path.string());
}

void JsonlFileSink::write(const TraceRecord& rec) {
    out_ << encode_record(rec) << '\n';
    if (!out_) throw Error(ErrorCode::SinkUnwritable, "write failed");
}

void JsonlFileSink::flush() { out_.flush(); }

void MemorySink::write(const TraceRecord& rec) {
    std::lock_guard lock(mu_);
    records_.push_back(rec);
}

Trace MemorySink::records() const {
    std::lock_guard lock(mu_);
    return records_;
}

std::size_t MemorySink::size() const {
    std::lock_guard lock(mu_);
    return records_.size();
}

Capture::Capture(Bus& bus, std::shared_ptr<TraceSink> sink, CaptureOptions opts)
    : bus_(bus), sink_(std::move(sink)), opts_(std::move(opts)) {
    if (!sink_) throw Error(ErrorCode::SinkUnwritable, "null sink");
    sub_ = bus_.subscribe(opts_.node, "*", {opts_.queue_depth, true});
    running_ = true;
    if (opts_.threaded) writer_ = std::thread([this] { writer_loop(); });
}

Capture::~Capture() {
    try {
        stop();
    } catch (...) {
    }
}

void Capture::write_one(const TraceRecord& rec) {
    sink_->write(rec);
    std::lock_guard lock(stats_mu_);
    ++stats_.records_written;
    stats_.topics_seen.insert(rec.topic);
}

void Capture::writer_loop() {
    using namespace std::chrono_literals;
    while (!stopping_) {
        if (auto m = sub_.wait(20ms)) write_one(*m);
    }
}

std::size_t Capture::pump() {
    std::size_t n = 0;
    for (const auto& m : sub_.drain()) {
        write_one(m);
        ++n;
    }
    return n;
}

void Capture::stop() {
    if (!running_) return;
    stopping_ = true;
    if (writer_.joinable()) writer_.join();
    bus_.unsubscribe(sub_);
    pump();
    sink_->flush();
    running_ = false;
}

CaptureStats Capture::stats() const {
    CaptureStats s;
    {
        std::lock_guard lock(stats_mu_);
        s = stats_;
    }
    s.capture_drops = sub_.queue()->drops();
    s.records_enqueued = sub_.queue()->enqueued();
    return s;
}

std::unique_ptr<Capture> start_capture(Bus& bus, std::shared_ptr<TraceSink> sink, CaptureOptions opts) {
    return std::make_unique<Capture>(bus, std::move(sink), std::move(opts));
}

namespace {

TopicSchema infer_schema(const TraceRecord& rec) {
    TopicSchema s;
    s.name = rec.topic;
    for (const auto& [k, v] : rec.payload) {
        FieldKind kind = std::visit(
            [](const auto& x) {
                using T = std::decay_t<decltype(x)>;
                if constexpr (std::is_same_v<T, bool>) return FieldKind::Bool;
                else if constexpr (std::is_same_v<T, std::int64_t>) return FieldKind::Int;
                else if constexpr (std::is_same_v<T, double>) return FieldKind::Float;
                else return FieldKind::String;
            },
            v);
        s.fields.push_back({k, kind, std::nullopt});
    }
    return s;
}

}  // namespace

void replay_trace(Bus& bus, const Trace& trace, const std::vector<TopicSchema>& schemas, const std::string& node) {
    std::map<std::string, TopicHandle> handles;
    for (const auto& rec : trace) {
        auto it = handles.find(rec.topic);
        if (it == handles.end()) {
            if (!bus.find_topic(rec.topic)) {
                auto sit = std::find_if(schemas.begin(), schemas.end(), [&](const TopicSchema& s) { return s.name == rec.topic; });
                bus.create_topic(sit != schemas.end() ? *sit : infer_schema(rec));
            }
            it = handles.emplace(rec.topic, bus.advertise(node, rec.topic)).first;
        }
        bus.publish(it->second, rec.payload, rec.t_ms);
    }
}

}  // namespace roboguard
