#include "roboguard/features.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "roboguard/error.hpp"

namespace roboguard {

void FieldStats::add(double x) {
    if (count == 0) {
        min = max = x;
    } else {
        min = std::min(min, x);
        max = std::max(max, x);
    }
    ++count;
    sum += x;
    sumsq += x * x;
}

void FieldStats::merge(const FieldStats& o) {
    if (o.count == 0) return;
    if (count == 0) {
        *this = o;
        return;
    }
    count += o.count;
    sum += o.sum;
    sumsq += o.sumsq;
    min = std::min(min, o.min);
    max = std::max(max, o.max);
}

std::map<TopicPair, std::uint64_t> PartialAggregate::follow_count() const {
    std::map<TopicPair, std::uint64_t> out;
    for (const auto& [a, ta] : arrivals) {
        if (ta.empty()) continue;
        for (const auto& [b, tb] : arrivals) {
            if (a == b) continue;
            std::uint64_t n = 0;
            for (auto t : ta) {
                auto it = std::upper_bound(tb.begin(), tb.end(), t);
                if (it != tb.end() && *it <= t + lag_ms && *it < window.end_ms) ++n;
            }
            out[{a, b}] = n;
        }
    }
    return out;
}

std::map<std::string, std::uint64_t> PartialAggregate::source_count() const {
    std::map<std::string, std::uint64_t> out;
    for (const auto& [a, ta] : arrivals) out[a] = ta.size();
    return out;
}

TimeBucket time_bucket_of(std::int64_t t_ms, std::int64_t calendar_epoch_unix_ms) {
    constexpr std::int64_t day = 86'400'000;
    const std::int64_t unix_ms = calendar_epoch_unix_ms + t_ms;
    std::int64_t days = unix_ms / day;
    std::int64_t rem = unix_ms % day;
    if (rem < 0) {
        rem += day;
        --days;
    }
    // 1970-01-01 was a Thursday.
    const int dow = static_cast<int>(((days + 4) % 7 + 7) % 7);
    return {static_cast<int>(rem / 3'600'000), dow};
}

PartialAggregate merge(const PartialAggregate& a, const PartialAggregate& b) {
    if (!(a.window == b.window) || a.lag_ms != b.lag_ms)
        throw Error(ErrorCode::WindowMismatch, "partials cover different windows or lags");
    PartialAggregate out = a;
    for (const auto& [t, n] : b.per_topic_count) out.per_topic_count[t] += n;
    for (const auto& [t, times] : b.arrivals) {
        auto& dst = out.arrivals[t];
        std::vector<std::int64_t> merged;
        merged.reserve(dst.size() + times.size());
        std::merge(dst.begin(), dst.end(), times.begin(), times.end(), std::back_inserter(merged));
        dst = std::move(merged);
    }
    for (const auto& [k, s] : b.field_stats) out.field_stats[k].merge(s);
    return out;
}

FeatureFrame finalize(const PartialAggregate& p, std::int64_t calendar_epoch_unix_ms) {
    if (p.window.length_ms() <= 0) throw Error(ErrorCode::ZeroWindow, "window has no duration");
    FeatureFrame f;
    f.window = p.window;
    const double secs = static_cast<double>(p.window.length_ms()) / 1000.0;
    std::uint64_t total = 0;
    for (const auto& [t, n] : p.per_topic_count) {
        f.per_topic_rate[t] = static_cast<double>(n) / secs;
        total += n;
    }
    f.total_rate = static_cast<double>(total) / secs;
    f.time_bucket = time_bucket_of(p.window.start_ms, calendar_epoch_unix_ms);

    const auto sources = p.source_count();
    for (const auto& [pair, n] : p.follow_count()) {
        auto s = sources.find(pair.first);
        if (s == sources.end() || s->second == 0) continue;
        f.co_occurrence[pair] = static_cast<double>(n) / static_cast<double>(s->second);
    }
    for (const auto& [k, s] : p.field_stats) {
        if (s.count == 0) continue;
        const double n = static_cast<double>(s.count);
        const double mean = s.sum / n;
        const double var = std::max(0.0, s.sumsq / n - mean * mean);
        f.fields[k] = FieldSummary{s.count, mean, std::sqrt(var), s.min, s.max};
    }
    return f;
}

void accumulate(PartialAggregate& p, const Message& msg, bool include_values) {
    if (msg.validity == Validity::RejectedRange) return;
    p.per_topic_count[msg.topic] += 1;
    auto& times = p.arrivals[msg.topic];
    times.insert(std::upper_bound(times.begin(), times.end(), msg.t_ms), msg.t_ms);
    if (!include_values) return;
    for (const auto& [name, value] : msg.payload) {
        if (std::holds_alternative<bool>(value)) continue;
        if (auto x = as_number(value); x && std::isfinite(*x)) p.field_stats[msg.topic + "." + name].add(*x);
    }
}

WindowAggregator::WindowAggregator(FeatureConfig cfg) : cfg_(cfg) {
    if (cfg_.window_ms <= 0) throw Error(ErrorCode::ZeroWindow, "window_ms must be positive");
    if (cfg_.lag_ms < 0) throw Error(ErrorCode::InvalidConfig, "lag_ms must be non-negative");
    current_ = fresh(cfg_.origin_ms);
}

PartialAggregate WindowAggregator::fresh(std::int64_t start) const {
    PartialAggregate p;
    p.window = {start, start + cfg_.window_ms};
    p.lag_ms = cfg_.lag_ms;
    for (const auto& t : known_) {
        p.per_topic_count[t] = 0;
        p.arrivals[t];
    }
    return p;
}

void WindowAggregator::declare_topic(const std::string& topic) {
    if (known_.insert(topic).second) {
        current_.per_topic_count.try_emplace(topic, 0);
        current_.arrivals[topic];
    }
}

std::vector<PartialAggregate> WindowAggregator::advance_to(std::int64_t t_ms) {
    std::vector<PartialAggregate> closed;
    while (current_.window.end_ms <= t_ms) {
        const auto next = current_.window.end_ms;
        closed.push_back(std::move(current_));
        current_ = fresh(next);
    }
    return closed;
}

std::vector<PartialAggregate> WindowAggregator::ingest(const Message& msg, bool include_values) {
    if (msg.t_ms < current_.window.start_ms) {
        if (current_.window.start_ms - msg.t_ms <= cfg_.late_tolerance_ms) {
            ++late_dropped_;
            return {};
        }
        throw Error(ErrorCode::TimeRegression, "record at t_ms=" + std::to_string(msg.t_ms) + " precedes open window at " +
                                                   std::to_string(current_.window.start_ms));
    }
    auto closed = advance_to(msg.t_ms);
    if (msg.validity != Validity::RejectedRange) declare_topic(msg.topic);
    accumulate(current_, msg, include_values);
    return closed;
}

nlohmann::json WindowAggregator::save_state() const {
    return {{"known", known_}, {"current", to_json(current_)}, {"late_dropped", late_dropped_}};
}

void WindowAggregator::load_state(const nlohmann::json& j) {
    known_ = j.at("known").get<std::set<std::string>>();
    current_ = partial_from_json(j.at("current"));
    late_dropped_ = j.at("late_dropped").get<std::uint64_t>();
}

std::vector<FeatureFrame> FeatureExtractor::finish(std::vector<PartialAggregate> parts) const {
    std::vector<FeatureFrame> out;
    out.reserve(parts.size());
    for (const auto& p : parts) out.push_back(finalize(p, agg_.config().calendar_epoch_unix_ms));
    return out;
}

std::vector<FeatureFrame> FeatureExtractor::ingest(const Message& msg, bool include_values) {
    return finish(agg_.ingest(msg, include_values));
}

std::vector<FeatureFrame> FeatureExtractor::advance_to(std::int64_t t_ms) { return finish(agg_.advance_to(t_ms)); }

std::vector<FeatureFrame> extract_frames(const std::vector<Message>& records, FeatureConfig cfg) {
    if (records.empty()) return {};
    if (cfg.window_ms <= 0) throw Error(ErrorCode::ZeroWindow, "window_ms must be positive");
    FeatureExtractor ex(cfg);
    std::vector<FeatureFrame> out;
    for (const auto& r : records) {
        auto fs = ex.ingest(r);
        out.insert(out.end(), fs.begin(), fs.end());
    }
    auto last = ex.aggregator().current().window.end_ms;
    auto fs = ex.advance_to(last);
    out.insert(out.end(), fs.begin(), fs.end());
    return out;
}

namespace {

std::optional<double> summary_stat(const FieldSummary& s, std::string_view stat) {
    if (stat == "mean") return s.mean;
    if (stat == "std") return s.std;
    if (stat == "min") return s.min;
    if (stat == "max") return s.max;
    if (stat == "count") return static_cast<double>(s.count);
    return std::nullopt;
}

std::pair<std::string_view, std::string_view> split_selector(std::string_view sel) {
    auto colon = sel.find(':');
    if (colon == std::string_view::npos) return {sel, {}};
    return {sel.substr(0, colon), sel.substr(colon + 1)};
}

// "/topic.field" -> topic; field names never contain '.', topics may not either
// but we split on the last dot to be safe.
std::string topic_of_field_key(std::string_view key) {
    auto dot = key.rfind('.');
    return std::string(dot == std::string_view::npos ? key : key.substr(0, dot));
}

}  // namespace

std::optional<double> select_feature(const FeatureFrame& frame, std::string_view selector) {
    auto [kind, arg] = split_selector(selector);
    if (kind == "total_rate") return frame.total_rate;
    if (kind == "hour") return frame.time_bucket.hour_of_day;
    if (kind == "dow") return frame.time_bucket.day_of_week;
    if (kind == "rate") {
        auto it = frame.per_topic_rate.find(std::string(arg));
        return it == frame.per_topic_rate.end() ? 0.0 : it->second;
    }
    if (kind == "mean" || kind == "std" || kind == "min" || kind == "max" || kind == "count") {
        auto it = frame.fields.find(std::string(arg));
        if (it == frame.fields.end()) return kind == "count" ? std::optional<double>(0.0) : std::nullopt;
        return summary_stat(it->second, kind);
    }
    if (kind == "cooc") {
        auto gt = arg.find('>');
        if (gt == std::string_view::npos) return std::nullopt;
        auto it = frame.co_occurrence.find({std::string(arg.substr(0, gt)), std::string(arg.substr(gt + 1))});
        if (it == frame.co_occurrence.end()) return std::nullopt;
        return it->second;
    }
    if (kind == "composite") {
        auto it = frame.composites.find(std::string(arg));
        if (it == frame.composites.end()) return std::nullopt;
        return it->second;
    }
    return std::nullopt;
}

std::set<std::string> selector_topics(std::string_view selector) {
    auto [kind, arg] = split_selector(selector);
    if (kind == "rate") return {std::string(arg)};
    if (kind == "mean" || kind == "std" || kind == "min" || kind == "max" || kind == "count")
        return {topic_of_field_key(arg)};
    if (kind == "cooc") {
        auto gt = arg.find('>');
        if (gt == std::string_view::npos) return {};
        return {std::string(arg.substr(0, gt)), std::string(arg.substr(gt + 1))};
    }
    return {};
}

nlohmann::json to_json(const FeatureFrame& f) {
    nlohmann::json cooc = nlohmann::json::array();
    for (const auto& [pair, v] : f.co_occurrence) cooc.push_back({pair.first, pair.second, v});
    nlohmann::json fields = nlohmann::json::object();
    for (const auto& [k, s] : f.fields)
        fields[k] = {{"count", s.count}, {"mean", s.mean}, {"std", s.std}, {"min", s.min}, {"max", s.max}};
    return {{"window", {{"start_ms", f.window.start_ms}, {"end_ms", f.window.end_ms}}},
            {"per_topic_rate", f.per_topic_rate},
            {"total_rate", f.total_rate},
            {"time_bucket", {{"hour_of_day", f.time_bucket.hour_of_day}, {"day_of_week", f.time_bucket.day_of_week}}},
            {"co_occurrence", cooc},
            {"fields", fields},
            {"composites", f.composites}};
}

FeatureFrame frame_from_json(const nlohmann::json& j) {
    try {
        FeatureFrame f;
        f.window = {j.at("window").at("start_ms").get<std::int64_t>(), j.at("window").at("end_ms").get<std::int64_t>()};
        f.per_topic_rate = j.at("per_topic_rate").get<std::map<std::string, double>>();
        f.total_rate = j.at("total_rate").get<double>();
        f.time_bucket = {j.at("time_bucket").at("hour_of_day").get<int>(), j.at("time_bucket").at("day_of_week").get<int>()};
        for (const auto& e : j.at("co_occurrence"))
            f.co_occurrence[{e.at(0).get<std::string>(), e.at(1).get<std::string>()}] = e.at(2).get<double>();
        for (const auto& [k, s] : j.at("fields").items())
            f.fields[k] = FieldSummary{s.at("count").get<std::uint64_t>(), s.at("mean").get<double>(), s.at("std").get<double>(),
                                       s.at("min").get<double>(), s.at("max").get<double>()};
        if (j.contains("composites")) f.composites = j.at("composites").get<std::map<std::string, double>>();
        return f;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::MalformedInput, std::string("feature frame: ") + e.what());
    }
}

nlohmann::json to_json(const PartialAggregate& p) {
    nlohmann::json stats = nlohmann::json::object();
    for (const auto& [k, s] : p.field_stats) stats[k] = {s.count, s.sum, s.sumsq, s.min, s.max};
    return {{"window", {p.window.start_ms, p.window.end_ms}},
            {"lag_ms", p.lag_ms},
            {"counts", p.per_topic_count},
            {"arrivals", p.arrivals},
            {"stats", stats}};
}

PartialAggregate partial_from_json(const nlohmann::json& j) {
    try {
        PartialAggregate p;
        p.window = {j.at("window").at(0).get<std::int64_t>(), j.at("window").at(1).get<std::int64_t>()};
        p.lag_ms = j.at("lag_ms").get<std::int64_t>();
        p.per_topic_count = j.at("counts").get<std::map<std::string, std::uint64_t>>();
        p.arrivals = j.at("arrivals").get<std::map<std::string, std::vector<std::int64_t>>>();
        for (const auto& [k, s] : j.at("stats").items())
            p.field_stats[k] = FieldStats{s.at(0).get<std::uint64_t>(), s.at(1).get<double>(), s.at(2).get<double>(),
                                          s.at(3).get<double>(), s.at(4).get<double>()};
        return p;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::MalformedInput, std::string("partial aggregate: ") + e.what());
    }
}

}  // namespace roboguard
