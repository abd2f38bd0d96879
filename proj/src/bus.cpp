#include "roboguard/bus.hpp"

#include <algorithm>
#include <cmath>

#include "roboguard/error.hpp"

namespace roboguard {

using nlohmann::json;

namespace {

constexpr std::size_t kDefaultWildcardDepth = 16;

bool valid_topic_path(const std::string& name) {
    if (name.empty() || name.front() != '/' || name == "*") return false;
    return std::all_of(name.begin(), name.end(), [](unsigned char c) { return c > 0x20 && c < 0x7f; });
}

}  // namespace

const FieldSpec* TopicSchema::field(std::string_view n) const {
    for (const auto& f : fields)
        if (f.name == n) return &f;
    return nullptr;
}

std::string_view to_string(FieldKind kind) {
    switch (kind) {
        case FieldKind::Float: return "float";
        case FieldKind::Int: return "int";
        case FieldKind::Bool: return "bool";
        case FieldKind::String: return "string";
    }
    return "float";
}

std::string_view to_string(Validity v) {
    switch (v) {
        case Validity::Ok: return "ok";
        case Validity::RejectedRange: return "rejected_range";
        case Validity::Flagged: return "flagged";
    }
    return "ok";
}

FieldKind field_kind_from_string(std::string_view s) {
    if (s == "float") return FieldKind::Float;
    if (s == "int") return FieldKind::Int;
    if (s == "bool") return FieldKind::Bool;
    if (s == "string") return FieldKind::String;
    throw Error(ErrorCode::InvalidSchema, "unknown field kind '" + std::string(s) + "'");
}

Validity validity_from_string(std::string_view s) {
    if (s == "ok") return Validity::Ok;
    if (s == "rejected_range") return Validity::RejectedRange;
    if (s == "flagged") return Validity::Flagged;
    throw Error(ErrorCode::MalformedTrace, "unknown validity '" + std::string(s) + "'");
}

std::optional<double> as_number(const Scalar& s) {
    return std::visit(
        [](const auto& v) -> std::optional<double> {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, std::string>) return std::nullopt;
            else return static_cast<double>(v);
        },
        s);
}

std::optional<std::string> first_range_violation(const TopicSchema& schema, const Payload& payload) {
    for (const auto& f : schema.fields) {
        if (!f.range || f.kind == FieldKind::String || f.kind == FieldKind::Bool) continue;
        auto it = payload.find(f.name);
        if (it == payload.end()) continue;
        auto x = as_number(it->second);
        if (!x) continue;
        if (std::isnan(*x) || *x < f.range->lo || *x > f.range->hi) return f.name;
    }
    return std::nullopt;
}

void validate_schema(const TopicSchema& schema) {
    if (!valid_topic_path(schema.name))
        throw Error(ErrorCode::InvalidSchema, "bad topic path '" + schema.name + "'");
    if (schema.queue_depth < 1) throw Error(ErrorCode::InvalidSchema, schema.name + ": queue depth must be >= 1");
    std::set<std::string> seen;
    for (const auto& f : schema.fields) {
        if (f.name.empty() || !seen.insert(f.name).second)
            throw Error(ErrorCode::InvalidSchema, schema.name + ": empty or duplicate field name '" + f.name + "'");
        if (!f.range) continue;
        if (f.kind == FieldKind::String || f.kind == FieldKind::Bool)
            throw Error(ErrorCode::InvalidSchema, schema.name + "." + f.name + ": ranges apply to numeric fields only");
        if (!(f.range->lo <= f.range->hi))
            throw Error(ErrorCode::InvalidSchema, schema.name + "." + f.name + ": range lo > hi");
    }
}

// ---------------------------------------------------------------------------
// MessageQueue

MessageQueue::MessageQueue(std::string subscriber, std::size_t capacity)
    : subscriber_(std::move(subscriber)), capacity_(std::max<std::size_t>(1, capacity)) {
    ring_.resize(capacity_);
}

bool MessageQueue::push(const Message& msg) {
    bool evicted = false;
    {
        std::lock_guard lock(mu_);
        if (closed_) return false;
        if (count_ == capacity_) {
            head_ = (head_ + 1) % capacity_;
            --count_;
            ++drops_;
            evicted = true;
        }
        ring_[(head_ + count_) % capacity_] = msg;
        ++count_;
        ++enqueued_;
    }
    cv_.notify_one();
    return evicted;
}

std::optional<Message> MessageQueue::try_pop() {
    std::lock_guard lock(mu_);
    if (count_ == 0) return std::nullopt;
    Message m = std::move(ring_[head_]);
    head_ = (head_ + 1) % capacity_;
    --count_;
    return m;
}

std::optional<Message> MessageQueue::wait_pop(std::chrono::milliseconds timeout) {
    std::unique_lock lock(mu_);
    if (!cv_.wait_for(lock, timeout, [&] { return count_ > 0 || closed_; })) return std::nullopt;
    if (count_ == 0) return std::nullopt;
    Message m = std::move(ring_[head_]);
    head_ = (head_ + 1) % capacity_;
    --count_;
    return m;
}

std::vector<Message> MessageQueue::drain() {
    std::lock_guard lock(mu_);
    std::vector<Message> out;
    out.reserve(count_);
    while (count_ > 0) {
        out.push_back(std::move(ring_[head_]));
        head_ = (head_ + 1) % capacity_;
        --count_;
    }
    return out;
}

void MessageQueue::close() {
    {
        std::lock_guard lock(mu_);
        closed_ = true;
    }
    cv_.notify_all();
}

std::size_t MessageQueue::size() const {
    std::lock_guard lock(mu_);
    return count_;
}

std::uint64_t MessageQueue::drops() const {
    std::lock_guard lock(mu_);
    return drops_;
}

std::uint64_t MessageQueue::enqueued() const {
    std::lock_guard lock(mu_);
    return enqueued_;
}

bool MessageQueue::closed() const {
    std::lock_guard lock(mu_);
    return closed_;
}

// ---------------------------------------------------------------------------
// BusDirectory

void BusDirectory::apply(const DirectoryEvent& ev) {
    using K = DirectoryEvent::Kind;
    switch (ev.kind) {
        case K::TopicAdded:
            topics[ev.topic] = ev.schema.value_or(TopicSchema{ev.topic, {}, 16, RangePolicy::Reject});
            break;
        case K::TopicRemoved:
            topics.erase(ev.topic);
            for (auto* m : {&publishers, &subscribers})
                for (auto& [node, set] : *m) set.erase(ev.topic);
            break;
        case K::PublisherAdded: publishers[ev.node].insert(ev.topic); break;
        case K::SubscriberAdded: subscribers[ev.node].insert(ev.topic); break;
        case K::SubscriberRemoved: subscribers[ev.node].erase(ev.topic); break;
        case K::NodeRegistered: node_tags[ev.node] = ev.tags; break;
    }
    epoch = ev.epoch;
}

std::set<std::string> BusDirectory::nodes() const {
    std::set<std::string> out;
    for (const auto& [n, _] : node_tags) out.insert(n);
    for (const auto& [n, _] : publishers) out.insert(n);
    for (const auto& [n, _] : subscribers) out.insert(n);
    return out;
}

bool BusDirectory::operator==(const BusDirectory& o) const {
    auto strip = [](const std::map<std::string, std::set<std::string>>& m) {
        std::map<std::string, std::set<std::string>> out;
        for (const auto& [k, v] : m)
            if (!v.empty()) out[k] = v;
        return out;
    };
    return topics == o.topics && strip(publishers) == strip(o.publishers) &&
           strip(subscribers) == strip(o.subscribers) && node_tags == o.node_tags && epoch == o.epoch;
}

json to_json(const TopicSchema& schema) {
    json fields = json::array();
    for (const auto& f : schema.fields) {
        json jf = {{"name", f.name}, {"kind", to_string(f.kind)}};
        if (f.range) jf["range"] = {f.range->lo, f.range->hi};
        fields.push_back(std::move(jf));
    }
    return {{"name", schema.name},
            {"fields", std::move(fields)},
            {"qos", {{"queue_depth", schema.queue_depth}}},
            {"range_policy", schema.range_policy == RangePolicy::Reject ? "reject" : "flag_and_deliver"}};
}

TopicSchema schema_from_json(const json& j) {
    TopicSchema s;
    s.name = j.at("name").get<std::string>();
    for (const auto& jf : j.at("fields")) {
        FieldSpec f;
        f.name = jf.at("name").get<std::string>();
        f.kind = field_kind_from_string(jf.at("kind").get<std::string>());
        if (jf.contains("range")) f.range = Range{jf["range"].at(0).get<double>(), jf["range"].at(1).get<double>()};
        s.fields.push_back(std::move(f));
    }
    if (j.contains("qos")) s.queue_depth = j["qos"].value("queue_depth", std::size_t{16});
    if (j.value("range_policy", std::string("reject")) == "flag_and_deliver") s.range_policy = RangePolicy::FlagAndDeliver;
    return s;
}

json to_json(const BusDirectory& dir) {
    json topics = json::array();
    for (const auto& [_, s] : dir.topics) topics.push_back(to_json(s));
    json pubs = json::object(), subs = json::object(), nodes = json::object();
    for (const auto& [n, set] : dir.publishers) pubs[n] = set;
    for (const auto& [n, set] : dir.subscribers) subs[n] = set;
    for (const auto& [n, tags] : dir.node_tags) nodes[n] = tags;
    return {{"epoch", dir.epoch}, {"topics", topics}, {"publishers", pubs}, {"subscribers", subs}, {"nodes", nodes}};
}

// ---------------------------------------------------------------------------
// Bus

void Bus::emit(DirectoryEvent ev) {
    ev.epoch = directory_.epoch + 1;
    directory_.apply(ev);
    log_.push_back(std::move(ev));
}

Bus::TopicState* Bus::topic_by_handle(const TopicHandle& h) const {
    if (h.id == 0 || h.id > by_id_.size()) return nullptr;
    TopicState* t = by_id_[h.id - 1];
    if (!t || t->schema.name != h.name) return nullptr;
    return t;
}

TopicHandle Bus::create_topic(const TopicSchema& schema) {
    validate_schema(schema);
    std::vector<DirectoryEvent> fresh;
    std::vector<DirectoryWatcher> watchers;
    TopicHandle handle;
    {
        std::unique_lock lock(dir_mu_);
        if (topics_.count(schema.name)) throw Error(ErrorCode::DuplicateTopic, schema.name);
        auto st = std::make_unique<TopicState>();
        st->schema = schema;
        st->id = static_cast<std::uint32_t>(by_id_.size() + 1);
        st->metrics.topic = schema.name;
        for (const auto& w : wildcards_) st->subscribers.emplace_back(w.id, w.queue);
        handle = {st->id, schema.name};
        by_id_.push_back(st.get());
        topics_.emplace(schema.name, std::move(st));
        std::size_t before = log_.size();
        emit({0, DirectoryEvent::Kind::TopicAdded, "", schema.name, schema, {}});
        fresh.assign(log_.begin() + static_cast<std::ptrdiff_t>(before), log_.end());
        watchers = watchers_;
    }
    for (const auto& ev : fresh)
        for (const auto& w : watchers) w(ev);
    return handle;
}

void Bus::remove_topic(const std::string& name) {
    std::vector<DirectoryEvent> fresh;
    std::vector<DirectoryWatcher> watchers;
    {
        std::unique_lock lock(dir_mu_);
        auto it = topics_.find(name);
        if (it == topics_.end()) throw Error(ErrorCode::UnknownTopic, name);
        by_id_[it->second->id - 1] = nullptr;
        topics_.erase(it);
        std::size_t before = log_.size();
        emit({0, DirectoryEvent::Kind::TopicRemoved, "", name, std::nullopt, {}});
        fresh.assign(log_.begin() + static_cast<std::ptrdiff_t>(before), log_.end());
        watchers = watchers_;
    }
    for (const auto& ev : fresh)
        for (const auto& w : watchers) w(ev);
}

TopicHandle Bus::advertise(const std::string& node, const std::string& topic) {
    std::vector<DirectoryEvent> fresh;
    std::vector<DirectoryWatcher> watchers;
    TopicHandle handle;
    {
        std::unique_lock lock(dir_mu_);
        auto it = topics_.find(topic);
        if (it == topics_.end()) throw Error(ErrorCode::UnknownTopic, topic);
        handle = {it->second->id, topic};
        if (!directory_.publishers[node].count(topic)) {
            std::size_t before = log_.size();
            emit({0, DirectoryEvent::Kind::PublisherAdded, node, topic, std::nullopt, {}});
            fresh.assign(log_.begin() + static_cast<std::ptrdiff_t>(before), log_.end());
            watchers = watchers_;
        }
    }
    for (const auto& ev : fresh)
        for (const auto& w : watchers) w(ev);
    return handle;
}

std::optional<TopicHandle> Bus::find_topic(const std::string& name) const {
    std::shared_lock lock(dir_mu_);
    auto it = topics_.find(name);
    if (it == topics_.end()) return std::nullopt;
    return TopicHandle{it->second->id, name};
}

void Bus::register_node(const std::string& node, std::vector<std::string> tags) {
    std::vector<DirectoryEvent> fresh;
    std::vector<DirectoryWatcher> watchers;
    {
        std::unique_lock lock(dir_mu_);
        emit({0, DirectoryEvent::Kind::NodeRegistered, node, "", std::nullopt, std::move(tags)});
        fresh.push_back(log_.back());
        watchers = watchers_;
    }
    for (const auto& w : watchers) w(fresh.front());
}

PublishReceipt Bus::publish(const TopicHandle& handle, Payload payload, std::int64_t t_ms) {
    std::shared_lock lock(dir_mu_);
    TopicState* st = topic_by_handle(handle);
    if (!st) throw Error(ErrorCode::UnknownTopic, handle.name);
    const TopicSchema& schema = st->schema;

    if (payload.size() != schema.fields.size())
        throw Error(ErrorCode::InvalidPayload, schema.name + ": payload fields do not match schema");
    for (const auto& f : schema.fields) {
        auto it = payload.find(f.name);
        if (it == payload.end()) throw Error(ErrorCode::InvalidPayload, schema.name + ": missing field " + f.name);
        Scalar& v = it->second;
        bool ok = false;
        switch (f.kind) {
            case FieldKind::Float:
                if (std::holds_alternative<std::int64_t>(v)) v = static_cast<double>(std::get<std::int64_t>(v));
                ok = std::holds_alternative<double>(v);
                break;
            case FieldKind::Int: ok = std::holds_alternative<std::int64_t>(v); break;
            case FieldKind::Bool: ok = std::holds_alternative<bool>(v); break;
            case FieldKind::String: ok = std::holds_alternative<std::string>(v); break;
        }
        if (!ok) throw Error(ErrorCode::InvalidPayload, schema.name + "." + f.name + ": expected " + std::string(to_string(f.kind)));
    }

    PublishReceipt receipt;
    std::lock_guard tlock(st->mu);
    if (t_ms < st->last_t_ms)
        throw Error(ErrorCode::TimeRegression, schema.name + ": t_ms " + std::to_string(t_ms) + " < " + std::to_string(st->last_t_ms));
    st->last_t_ms = t_ms;

    Message msg{schema.name, t_ms, st->next_seq++, std::move(payload), Validity::Ok};
    receipt.seq = msg.seq;
    st->metrics.last_t_ms = t_ms;

    if (auto bad = first_range_violation(schema, msg.payload)) {
        receipt.field = *bad;
        if (schema.range_policy == RangePolicy::Reject) {
            msg.validity = Validity::RejectedRange;
            receipt.status = PublishReceipt::Status::RejectedRange;
            ++st->metrics.rejected;
            ++validity_events_;
            for (const auto& [_, q] : validity_subs_) q->push(msg);
            for (const auto& w : wildcards_)
                if (w.validity) w.queue->push(msg);
            return receipt;
        }
        msg.validity = Validity::Flagged;
        receipt.flagged = true;
        ++st->metrics.flagged;
        ++validity_events_;
        for (const auto& [_, q] : validity_subs_) q->push(msg);
    }

    ++st->metrics.published;
    for (const auto& [_, q] : st->subscribers) {
        if (q->push(msg)) receipt.dropped.push_back(q->subscriber());
        ++receipt.delivered;
    }
    return receipt;
}

Subscription Bus::subscribe(const std::string& node, const std::string& topic, SubscribeOptions opts) {
    std::vector<DirectoryEvent> fresh;
    std::vector<DirectoryWatcher> watchers;
    Subscription sub;
    {
        std::unique_lock lock(dir_mu_);
        std::uint64_t id = next_sub_id_++;
        if (topic == "*") {
            auto q = std::make_shared<MessageQueue>(node, opts.queue_depth ? opts.queue_depth : kDefaultWildcardDepth);
            wildcards_.push_back({id, q, opts.include_validity_events});
            for (auto& [_, st] : topics_) {
                std::lock_guard tlock(st->mu);
                st->subscribers.emplace_back(id, q);
            }
            all_subs_.emplace_back(id, q);
            sub = Subscription(id, q);
        } else {
            auto it = topics_.find(topic);
            if (it == topics_.end()) throw Error(ErrorCode::UnknownTopic, topic);
            auto q = std::make_shared<MessageQueue>(node, opts.queue_depth ? opts.queue_depth : it->second->schema.queue_depth);
            {
                std::lock_guard tlock(it->second->mu);
                it->second->subscribers.emplace_back(id, q);
            }
            if (opts.include_validity_events) validity_subs_.emplace_back(id, q);
            all_subs_.emplace_back(id, q);
            sub = Subscription(id, q);
        }
        if (!directory_.subscribers[node].count(topic)) {
            emit({0, DirectoryEvent::Kind::SubscriberAdded, node, topic, std::nullopt, {}});
            fresh.push_back(log_.back());
            watchers = watchers_;
        }
    }
    for (const auto& ev : fresh)
        for (const auto& w : watchers) w(ev);
    return sub;
}

void Bus::unsubscribe(const Subscription& sub) {
    if (!sub.valid()) return;
    std::vector<DirectoryEvent> fresh;
    std::vector<DirectoryWatcher> watchers;
    {
        std::unique_lock lock(dir_mu_);
        auto drop_id = [&](auto& vec) {
            vec.erase(std::remove_if(vec.begin(), vec.end(), [&](const auto& p) { return p.first == sub.id(); }), vec.end());
        };
        std::string topic;
        for (auto& [name, st] : topics_) {
            std::lock_guard tlock(st->mu);
            auto before = st->subscribers.size();
            drop_id(st->subscribers);
            if (before != st->subscribers.size() && topic.empty()) topic = name;
        }
        bool wildcard = false;
        auto wit = std::remove_if(wildcards_.begin(), wildcards_.end(), [&](const WildcardSub& w) { return w.id == sub.id(); });
        if (wit != wildcards_.end()) wildcard = true;
        wildcards_.erase(wit, wildcards_.end());
        drop_id(validity_subs_);
        drop_id(all_subs_);
        sub.queue()->close();
        if (wildcard) topic = "*";
        bool still = false;
        for (const auto& [id, q] : all_subs_)
            if (q->subscriber() == sub.node()) still = true;
        if (!topic.empty() && !still && directory_.subscribers[sub.node()].count(topic)) {
            emit({0, DirectoryEvent::Kind::SubscriberRemoved, sub.node(), topic, std::nullopt, {}});
            fresh.push_back(log_.back());
            watchers = watchers_;
        }
    }
    for (const auto& ev : fresh)
        for (const auto& w : watchers) w(ev);
}

Subscription Bus::subscribe_validity(const std::string& node, std::size_t depth) {
    std::unique_lock lock(dir_mu_);
    std::uint64_t id = next_sub_id_++;
    auto q = std::make_shared<MessageQueue>(node, depth);
    validity_subs_.emplace_back(id, q);
    all_subs_.emplace_back(id, q);
    return Subscription(id, q);
}

void Bus::watch_directory(DirectoryWatcher watcher) {
    std::unique_lock lock(dir_mu_);
    watchers_.push_back(std::move(watcher));
}

BusDirectory Bus::directory() const {
    std::shared_lock lock(dir_mu_);
    return directory_;
}

std::vector<DirectoryEvent> Bus::directory_log() const {
    std::shared_lock lock(dir_mu_);
    return log_;
}

std::vector<TopicMetrics> Bus::topic_metrics() const {
    std::shared_lock lock(dir_mu_);
    std::vector<TopicMetrics> out;
    for (const auto& [_, st] : topics_) {
        std::lock_guard tlock(st->mu);
        out.push_back(st->metrics);
    }
    return out;
}

std::vector<SubscriptionMetrics> Bus::subscription_metrics() const {
    std::shared_lock lock(dir_mu_);
    std::vector<SubscriptionMetrics> out;
    for (const auto& [id, q] : all_subs_)
        out.push_back({id, q->subscriber(), q->size(), q->capacity(), q->drops(), q->enqueued()});
    return out;
}

std::uint64_t Bus::validity_events() const { return validity_events_.load(); }

}  // namespace roboguard
