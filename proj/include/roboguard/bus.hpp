/// @file bus.hpp
/// @brief In-process publish/subscribe bus with schema-declared value ranges.
///
/// Publishing never blocks on a consumer: every subscription owns a bounded
/// ring that evicts its oldest entry when full, and each eviction is counted
/// against that subscription only.

#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

namespace roboguard {

using Scalar = std::variant<bool, std::int64_t, double, std::string>;
using Payload = std::map<std::string, Scalar>;

enum class FieldKind { Float, Int, Bool, String };

struct Range {
    double lo = 0.0;
    double hi = 0.0;

    bool operator==(const Range&) const = default;
};

struct FieldSpec {
    std::string name;
    FieldKind kind = FieldKind::Float;
    std::optional<Range> range;  // numeric kinds only

    bool operator==(const FieldSpec&) const = default;
};

/// How a topic treats payload values outside their declared range.
enum class RangePolicy {
    Reject,          // dropped at publish, reported on the validity channel
    FlagAndDeliver,  // delivered with Validity::Flagged, also reported
};

struct TopicSchema {
    std::string name;
    std::vector<FieldSpec> fields;
    std::size_t queue_depth = 16;
    RangePolicy range_policy = RangePolicy::Reject;

    const FieldSpec* field(std::string_view name) const;
    bool operator==(const TopicSchema&) const = default;
};

enum class Validity { Ok, RejectedRange, Flagged };

struct Message {
    std::string topic;
    std::int64_t t_ms = 0;
    std::uint64_t seq = 0;
    Payload payload;
    Validity validity = Validity::Ok;

    bool operator==(const Message&) const = default;
};

std::string_view to_string(FieldKind kind);
std::string_view to_string(Validity v);
FieldKind field_kind_from_string(std::string_view s);
Validity validity_from_string(std::string_view s);

/// Numeric view of a scalar; nullopt for strings.
std::optional<double> as_number(const Scalar& s);

/// Returns the name of the first field outside its declared range, if any.
std::optional<std::string> first_range_violation(const TopicSchema& schema, const Payload& payload);

void validate_schema(const TopicSchema& schema);

struct TopicHandle {
    std::uint32_t id = 0;
    std::string name;
};

struct PublishReceipt {
    enum class Status { Accepted, RejectedRange };
    Status status = Status::Accepted;
    std::uint64_t seq = 0;
    std::optional<std::string> field;  // offending field when rejected or flagged
    bool flagged = false;
    std::size_t delivered = 0;
    std::vector<std::string> dropped;  // subscribers that evicted a message to make room

    bool accepted() const { return status == Status::Accepted; }
};

/// Bounded FIFO owned by one subscription. Push evicts the oldest entry when
/// full and never waits on the consumer.
class MessageQueue {
public:
    MessageQueue(std::string subscriber, std::size_t capacity);

    /// Returns true when an older message was evicted to make room.
    bool push(const Message& msg);
    std::optional<Message> try_pop();
    std::optional<Message> wait_pop(std::chrono::milliseconds timeout);
    std::vector<Message> drain();
    void close();

    const std::string& subscriber() const { return subscriber_; }
    std::size_t capacity() const { return capacity_; }
    std::size_t size() const;
    std::uint64_t drops() const;
    std::uint64_t enqueued() const;
    bool closed() const;

private:
    std::string subscriber_;
    std::size_t capacity_;
    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::vector<Message> ring_;
    std::size_t head_ = 0;
    std::size_t count_ = 0;
    std::uint64_t drops_ = 0;
    std::uint64_t enqueued_ = 0;
    bool closed_ = false;
};

/// Consumer-side handle for a subscription.
class Subscription {
public:
    Subscription() = default;
    Subscription(std::uint64_t id, std::shared_ptr<MessageQueue> q) : id_(id), queue_(std::move(q)) {}

    std::uint64_t id() const { return id_; }
    const std::string& node() const { return queue_->subscriber(); }
    std::optional<Message> poll() { return queue_->try_pop(); }
    std::optional<Message> wait(std::chrono::milliseconds timeout) { return queue_->wait_pop(timeout); }
    std::vector<Message> drain() { return queue_->drain(); }
    std::size_t pending() const { return queue_->size(); }
    std::uint64_t drops() const { return queue_->drops(); }
    const std::shared_ptr<MessageQueue>& queue() const { return queue_; }
    bool valid() const { return queue_ != nullptr; }

private:
    std::uint64_t id_ = 0;
    std::shared_ptr<MessageQueue> queue_;
};

struct SubscribeOptions {
    std::size_t queue_depth = 0;          // 0: topic qos depth, or 16 for wildcard
    bool include_validity_events = false;  // also receive range-rejected messages
};

struct DirectoryEvent {
    enum class Kind { TopicAdded, TopicRemoved, PublisherAdded, SubscriberAdded, SubscriberRemoved, NodeRegistered };
    std::uint64_t epoch = 0;
    Kind kind = Kind::TopicAdded;
    std::string node;
    std::string topic;                   // topic path or "*"
    std::optional<TopicSchema> schema;   // TopicAdded
    std::vector<std::string> tags;       // NodeRegistered
};

/// Who talks to whom. Rebuildable from its own event log.
struct BusDirectory {
    std::map<std::string, TopicSchema> topics;
    std::map<std::string, std::set<std::string>> publishers;
    std::map<std::string, std::set<std::string>> subscribers;  // may contain "*"
    std::map<std::string, std::vector<std::string>> node_tags;
    std::uint64_t epoch = 0;

    void apply(const DirectoryEvent& ev);
    std::set<std::string> nodes() const;
    bool operator==(const BusDirectory& o) const;
};

nlohmann::json to_json(const TopicSchema& schema);
TopicSchema schema_from_json(const nlohmann::json& j);
nlohmann::json to_json(const BusDirectory& dir);

struct TopicMetrics {
    std::string topic;
    std::uint64_t published = 0;
    std::uint64_t rejected = 0;
    std::uint64_t flagged = 0;
    std::int64_t last_t_ms = -1;
};

struct SubscriptionMetrics {
    std::uint64_t id = 0;
    std::string node;
    std::size_t depth = 0;
    std::size_t capacity = 0;
    std::uint64_t drops = 0;
    std::uint64_t enqueued = 0;
};

class Bus {
public:
    using DirectoryWatcher = std::function<void(const DirectoryEvent&)>;

    Bus() = default;
    Bus(const Bus&) = delete;
    Bus& operator=(const Bus&) = delete;

    TopicHandle create_topic(const TopicSchema& schema);
    void remove_topic(const std::string& name);
    TopicHandle advertise(const std::string& node, const std::string& topic);
    std::optional<TopicHandle> find_topic(const std::string& name) const;
    void register_node(const std::string& node, std::vector<std::string> tags);

    PublishReceipt publish(const TopicHandle& handle, Payload payload, std::int64_t t_ms);

    Subscription subscribe(const std::string& node, const std::string& topic_or_wildcard,
                           SubscribeOptions opts = {});
    void unsubscribe(const Subscription& sub);

    /// Receives every range-rejected or flagged message.
    Subscription subscribe_validity(const std::string& node, std::size_t depth = 1024);

    void watch_directory(DirectoryWatcher watcher);

    BusDirectory directory() const;
    std::vector<DirectoryEvent> directory_log() const;
    std::vector<TopicMetrics> topic_metrics() const;
    std::vector<SubscriptionMetrics> subscription_metrics() const;
    std::uint64_t validity_events() const;

private:
    struct TopicState {
        TopicSchema schema;
        std::uint32_t id = 0;
        mutable std::mutex mu;
        std::uint64_t next_seq = 1;
        std::int64_t last_t_ms = std::numeric_limits<std::int64_t>::min();
        std::vector<std::pair<std::uint64_t, std::shared_ptr<MessageQueue>>> subscribers;
        TopicMetrics metrics;
    };
    struct WildcardSub {
        std::uint64_t id;
        std::shared_ptr<MessageQueue> queue;
        bool validity;
    };

    void emit(DirectoryEvent ev);  // requires dir_mu_ held exclusively
    TopicState* topic_by_handle(const TopicHandle& h) const;

    mutable std::shared_mutex dir_mu_;
    std::map<std::string, std::unique_ptr<TopicState>> topics_;
    std::vector<TopicState*> by_id_;
    std::vector<WildcardSub> wildcards_;
    std::vector<std::pair<std::uint64_t, std::shared_ptr<MessageQueue>>> validity_subs_;
    std::vector<std::pair<std::uint64_t, std::shared_ptr<MessageQueue>>> all_subs_;
    BusDirectory directory_;
    std::vector<DirectoryEvent> log_;
    std::vector<DirectoryWatcher> watchers_;
    std::uint64_t next_sub_id_ = 1;
    std::atomic<std::uint64_t> validity_events_{0};
};

}  // namespace roboguard
