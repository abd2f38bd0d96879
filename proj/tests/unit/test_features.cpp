#include <doctest.h>

#include <algorithm>
#include <random>

#include "roboguard/error.hpp"
#include "roboguard/features.hpp"

using namespace roboguard;

namespace {

Message msg(const std::string& topic, std::int64_t t, double v = 0.0) {
    return Message{topic, t, 0, {{"v", v}}, Validity::Ok};
}

PartialAggregate partial_of(const std::vector<Message>& ms, Window w = {0, 1000}, std::int64_t lag = 100) {
    PartialAggregate p;
    p.window = w;
    p.lag_ms = lag;
    for (const auto& m : ms) accumulate(p, m);
    return p;
}

// Brute force over every ordered pair of records.
std::map<TopicPair, double> cooc_oracle(const std::vector<Message>& ms, std::int64_t lag) {
    std::map<std::string, int> sources;
    std::map<TopicPair, int> follows;
    std::set<std::string> topics;
    for (const auto& m : ms) topics.insert(m.topic);
    for (const auto& a : ms) {
        ++sources[a.topic];
        for (const auto& b_topic : topics) {
            if (b_topic == a.topic) continue;
            bool hit = false;
            for (const auto& b : ms)
                if (b.topic == b_topic && b.t_ms > a.t_ms && b.t_ms <= a.t_ms + lag) hit = true;
            follows[{a.topic, b_topic}] += hit ? 1 : 0;
        }
    }
    std::map<TopicPair, double> out;
    for (const auto& [pair, n] : follows) out[pair] = static_cast<double>(n) / sources[pair.first];
    return out;
}

void check_frames_equal(const FeatureFrame& a, const FeatureFrame& b) {
    CHECK(a.window == b.window);
    CHECK(a.time_bucket == b.time_bucket);
    REQUIRE(a.per_topic_rate.size() == b.per_topic_rate.size());
    for (const auto& [t, r] : a.per_topic_rate) CHECK(b.per_topic_rate.at(t) == doctest::Approx(r).epsilon(1e-9));
    CHECK(a.total_rate == doctest::Approx(b.total_rate).epsilon(1e-9));
    CHECK(a.co_occurrence == b.co_occurrence);
    REQUIRE(a.fields.size() == b.fields.size());
    for (const auto& [k, s] : a.fields) {
        const auto& o = b.fields.at(k);
        CHECK(s.count == o.count);
        CHECK(s.min == o.min);
        CHECK(s.max == o.max);
        CHECK(s.mean == doctest::Approx(o.mean).epsilon(1e-9));
        CHECK(s.std == doctest::Approx(o.std).epsilon(1e-6));
    }
}

}  // namespace

TEST_CASE("rate is count per window second") {
    std::vector<Message> ms;
    for (int i = 0; i < 5; ++i) ms.push_back(msg("/odom", i * 200));
    auto f = finalize(partial_of(ms));
    CHECK(f.per_topic_rate.at("/odom") == 5.0);
    CHECK(f.total_rate == 5.0);

    auto half = finalize(partial_of(ms, {0, 2000}));
    CHECK(half.per_topic_rate.at("/odom") == 2.5);
}

TEST_CASE("co-occurrence counts followed sources") {
    std::vector<Message> ms = {msg("/cmd_vel", 0), msg("/odom", 50), msg("/cmd_vel", 100), msg("/odom", 150), msg("/cmd_vel", 200)};
    auto p = partial_of(ms, {0, 1000}, 60);
    CHECK(p.follow_count().at({"/cmd_vel", "/odom"}) == 2);
    CHECK(p.source_count().at("/cmd_vel") == 3);
    auto f = finalize(p);
    CHECK(f.co_occurrence.at({"/cmd_vel", "/odom"}) == doctest::Approx(2.0 / 3.0));
    CHECK(f.co_occurrence == cooc_oracle(ms, 60));
}

TEST_CASE("zero follows give 0.0 and zero sources omit the pair") {
    std::vector<Message> ms = {msg("/a", 0), msg("/a", 10), msg("/a", 20)};
    auto p = partial_of(ms);
    p.per_topic_count["/b"] = 0;
    p.arrivals["/b"];
    auto f = finalize(p);
    CHECK(f.co_occurrence.at({"/a", "/b"}) == 0.0);
    CHECK(f.co_occurrence.count({"/b", "/a"}) == 0);
}

TEST_CASE("empty window has zero rates and no co-occurrence") {
    WindowAggregator agg;
    agg.declare_topic("/odom");
    agg.declare_topic("/cmd_vel");
    auto closed = agg.advance_to(1000);
    REQUIRE(closed.size() == 1);
    auto f = finalize(closed[0]);
    CHECK(f.per_topic_rate.at("/odom") == 0.0);
    CHECK(f.total_rate == 0.0);
    CHECK(f.co_occurrence.empty());
}

TEST_CASE("finalize rejects zero windows") {
    PartialAggregate p;
    p.window = {500, 500};
    CHECK_THROWS_AS(finalize(p), Error);
    try {
        finalize(p);
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::ZeroWindow);
    }
}

TEST_CASE("merge sums counts and keeps identity") {
    auto p1 = partial_of({msg("/A", 1), msg("/A", 2), msg("/A", 3)});
    auto p2 = partial_of({msg("/A", 4), msg("/A", 5), msg("/A", 6), msg("/A", 7)});
    CHECK(merge(p1, p2).per_topic_count.at("/A") == 7);

    PartialAggregate empty;
    empty.window = p1.window;
    empty.lag_ms = p1.lag_ms;
    CHECK(merge(p1, empty) == p1);
}

TEST_CASE("merge rejects mismatched windows") {
    auto p1 = partial_of({msg("/A", 1)}, {0, 1000});
    auto p2 = partial_of({msg("/A", 1001)}, {1000, 2000});
    try {
        merge(p1, p2);
        FAIL("expected WindowMismatch");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::WindowMismatch);
    }
}

TEST_CASE("merging random partitions equals single-pass finalize") {
    std::mt19937_64 rng(7);
    const std::vector<std::string> topics = {"/a", "/b", "/c", "/d"};
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<Message> ms;
        std::uniform_int_distribution<std::int64_t> t(0, 999);
        std::uniform_int_distribution<std::size_t> pick(0, topics.size() - 1);
        std::normal_distribution<double> val(0, 3);
        for (int i = 0; i < 500; ++i) ms.push_back(msg(topics[pick(rng)], t(rng), val(rng)));
        std::sort(ms.begin(), ms.end(), [](const auto& x, const auto& y) { return x.t_ms < y.t_ms; });

        // Random record-level split into three partials.
        std::vector<std::vector<Message>> parts(3);
        std::uniform_int_distribution<int> site(0, 2);
        for (const auto& m : ms) parts[site(rng)].push_back(m);
        auto merged = merge(merge(partial_of(parts[0]), partial_of(parts[1])), partial_of(parts[2]));
        auto single = partial_of(ms);
        CHECK(merged.per_topic_count == single.per_topic_count);
        CHECK(merged.follow_count() == single.follow_count());
        CHECK(merged.source_count() == single.source_count());
        check_frames_equal(finalize(merged), finalize(single));
        CHECK(finalize(single).co_occurrence == cooc_oracle(ms, 100));

        // Disjoint topic split, as between ingest sites.
        std::vector<Message> ab, cd;
        for (const auto& m : ms) (m.topic <= "/b" ? ab : cd).push_back(m);
        check_frames_equal(finalize(merge(partial_of(ab), partial_of(cd))), finalize(single));
    }
}

TEST_CASE("frames satisfy rate and co-occurrence invariants") {
    std::mt19937_64 rng(11);
    std::vector<Message> ms;
    std::int64_t t = 0;
    std::uniform_int_distribution<std::int64_t> gap(0, 40);
    std::uniform_int_distribution<int> pick(0, 2);
    for (int i = 0; i < 2000; ++i) {
        t += gap(rng);
        ms.push_back(msg("/t" + std::to_string(pick(rng)), t));
    }
    auto frames = extract_frames(ms);
    REQUIRE_FALSE(frames.empty());
    std::size_t total = 0;
    for (const auto& f : frames) {
        double sum = 0;
        for (const auto& [_, r] : f.per_topic_rate) {
            CHECK(r >= 0.0);
            sum += r;
        }
        CHECK(f.total_rate == doctest::Approx(sum));
        for (const auto& [_, c] : f.co_occurrence) {
            CHECK(c >= 0.0);
            CHECK(c <= 1.0);
        }
        total += static_cast<std::size_t>(f.total_rate * f.window.length_ms() / 1000.0 + 0.5);
    }
    CHECK(total == ms.size());
}

TEST_CASE("window rolling emits frames in order including empty gaps") {
    FeatureExtractor ex;
    CHECK(ex.ingest(msg("/a", 10)).empty());
    auto out = ex.ingest(msg("/a", 3500));
    REQUIRE(out.size() == 3);
    CHECK(out[0].window == Window{0, 1000});
    CHECK(out[0].per_topic_rate.at("/a") == 1.0);
    CHECK(out[1].per_topic_rate.at("/a") == 0.0);
    CHECK(out[2].window == Window{2000, 3000});
}

TEST_CASE("follow events do not cross window boundaries") {
    FeatureExtractor ex;
    ex.declare_topic("/b");
    ex.ingest(msg("/a", 950));
    auto frames = ex.ingest(msg("/b", 1010));
    REQUIRE(frames.size() == 1);
    CHECK(frames[0].co_occurrence.at({"/a", "/b"}) == 0.0);
}

TEST_CASE("late records are dropped within tolerance and fail beyond it") {
    FeatureConfig cfg;
    cfg.late_tolerance_ms = 50;
    WindowAggregator agg(cfg);
    agg.ingest(msg("/a", 1010));
    CHECK(agg.ingest(msg("/a", 960)).empty());
    CHECK(agg.late_dropped() == 1);
    try {
        agg.ingest(msg("/a", 900));
        FAIL("expected TimeRegression");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::TimeRegression);
    }
}

TEST_CASE("interleaving inside a window does not change the frame") {
    std::vector<Message> ms = {msg("/a", 5), msg("/b", 30), msg("/a", 60), msg("/c", 90), msg("/b", 120)};
    auto p1 = partial_of(ms);
    std::reverse(ms.begin(), ms.end());
    auto p2 = partial_of(ms);
    CHECK(finalize(p1) == finalize(p2));
}

TEST_CASE("rejected records never count") {
    auto m = msg("/a", 5);
    m.validity = Validity::RejectedRange;
    auto p = partial_of({m, msg("/a", 6)});
    CHECK(p.per_topic_count.at("/a") == 1);
}

TEST_CASE("value summaries") {
    auto f = finalize(partial_of({msg("/a", 1, 1.0), msg("/a", 2, 3.0)}));
    const auto& s = f.fields.at("/a.v");
    CHECK(s.count == 2);
    CHECK(s.mean == 2.0);
    CHECK(s.std == 1.0);
    CHECK(select_feature(f, "mean:/a.v") == 2.0);
    CHECK(select_feature(f, "max:/a.v") == 3.0);
    CHECK(select_feature(f, "rate:/a") == 2.0);
    CHECK(select_feature(f, "rate:/never") == 0.0);
    CHECK_FALSE(select_feature(f, "mean:/never.v").has_value());
    CHECK(selector_topics("cooc:/a>/b") == std::set<std::string>{"/a", "/b"});
    CHECK(selector_topics("std:/cmd_vel.angular") == std::set<std::string>{"/cmd_vel"});
}

TEST_CASE("time bucket follows the configured calendar") {
    // 2024-01-01 00:00 UTC was a Monday.
    const std::int64_t monday = 1704067200000;
    CHECK(time_bucket_of(0, monday) == TimeBucket{0, 1});
    CHECK(time_bucket_of(3600000LL * 30, monday) == TimeBucket{6, 2});
    CHECK(time_bucket_of(0, 0) == TimeBucket{0, 4});
}

TEST_CASE("frame and partial JSON round trip") {
    auto p = partial_of({msg("/a", 1, 0.5), msg("/b", 40, -2.0), msg("/a", 90, 7.0)});
    CHECK(partial_from_json(to_json(p)) == p);
    auto f = finalize(p);
    f.composites["drive"] = 1.5;
    CHECK(frame_from_json(to_json(f)) == f);
    auto j = to_json(f);
    for (const char* key : {"window", "per_topic_rate", "total_rate", "time_bucket", "co_occurrence"}) CHECK(j.contains(key));
}

TEST_CASE("aggregator state survives save and load") {
    WindowAggregator a;
    a.ingest(msg("/a", 10));
    a.ingest(msg("/b", 20));
    WindowAggregator b;
    b.load_state(a.save_state());
    auto fa = a.ingest(msg("/a", 1200));
    auto fb = b.ingest(msg("/a", 1200));
    CHECK(fa == fb);
}
