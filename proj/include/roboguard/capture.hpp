/// @file capture.hpp
/// @brief All-topic recorder writing the canonical trace.
///
/// The recorder holds a wildcard subscription with its own bounded queue, so
/// topics created after start are recorded from their first message and a
/// slow sink only ever costs capture-side drops, which are counted.

#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "roboguard/bus.hpp"
#include "roboguard/trace.hpp"

namespace roboguard {

class TraceSink {
public:
    virtual ~TraceSink() = default;
    virtual void write(const TraceRecord& rec) = 0;
    virtual void flush() {}
};

/// Appends canonical JSON lines to a `.trace.jsonl` file.
class JsonlFileSink : public TraceSink {
public:
    explicit JsonlFileSink(const std::filesystem::path& path);
    void write(const TraceRecord& rec) override;
    void flush() override;

private:
    std::ofstream out_;
};

class MemorySink : public TraceSink {
public:
    void write(const TraceRecord& rec) override;
    Trace records() const;
    std::size_t size() const;

private:
    mutable std::mutex mu_;
    Trace records_;
};

struct CaptureStats {
    std::uint64_t records_written = 0;
    std::uint64_t capture_drops = 0;
    std::uint64_t records_enqueued = 0;
    std::set<std::string> topics_seen;
};

struct CaptureOptions {
    std::size_t queue_depth = 4096;
    std::string node = "capture";
    bool threaded = true;  // false: caller drives writes with pump()
};

class Capture {
public:
    Capture(Bus& bus, std::shared_ptr<TraceSink> sink, CaptureOptions opts = {});
    ~Capture();
    Capture(const Capture&) = delete;
    Capture& operator=(const Capture&) = delete;

    /// Writes everything currently queued. Only for non-threaded captures.
    std::size_t pump();
    /// Flushes the queue, detaches from the bus and joins the writer.
    void stop();

    CaptureStats stats() const;
    bool running() const { return running_; }

private:
    void write_one(const TraceRecord& rec);
    void writer_loop();

    Bus& bus_;
    std::shared_ptr<TraceSink> sink_;
    CaptureOptions opts_;
    Subscription sub_;
    std::thread writer_;
    std::atomic<bool> running_{false};
    std::atomic<bool> stopping_{false};
    mutable std::mutex stats_mu_;
    CaptureStats stats_;
};

/// Starts a recorder on `bus`. Throws SinkUnwritable when `sink` is null.
std::unique_ptr<Capture> start_capture(Bus& bus, std::shared_ptr<TraceSink> sink, CaptureOptions opts = {});

/// Publishes a recorded trace into `bus` in record order, creating topics
/// from `schemas` as needed. Topics without a schema get one inferred from
/// their first record, without ranges.
void replay_trace(Bus& bus, const Trace& trace, const std::vector<TopicSchema>& schemas, const std::string& node = "replay");

}  // namespace roboguard
