#include "roboguard/pipeline.hpp"

#include <fstream>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "roboguard/error.hpp"

namespace roboguard {

using nlohmann::json;

void apply_pipeline_options(PipelineConfig& cfg, std::string_view yaml_text) {
    try {
        YAML::Node root = YAML::Load(std::string(yaml_text));
        if (!root.IsMap()) return;
        if (auto f = root["features"]) {
            cfg.features.window_ms = f["window_ms"].as<std::int64_t>(cfg.features.window_ms);
            cfg.features.lag_ms = f["lag_ms"].as<std::int64_t>(cfg.features.lag_ms);
            cfg.features.late_tolerance_ms = f["late_tolerance_ms"].as<std::int64_t>(cfg.features.late_tolerance_ms);
        }
        if (auto a = root["alarms"]) {
            auto& d = cfg.alarms;
            d.w_alarm_ms = a["w_alarm_ms"].as<std::int64_t>(d.w_alarm_ms);
            d.h = a["h"].as<int>(d.h);
            d.dynamic = a["dynamic"].as<bool>(d.dynamic);
            d.h_min = a["h_min"].as<int>(d.h_min);
            d.h_max = a["h_max"].as<int>(d.h_max);
            d.c = a["c"].as<double>(d.c);
            d.q = a["q"].as<double>(d.q);
            d.n_min = a["n_min"].as<std::uint64_t>(d.n_min);
            d.half_life_ms = a["half_life_ms"].as<std::int64_t>(d.half_life_ms);
            d.coalesce = a["coalesce"].as<bool>(d.coalesce);
        }
        cfg.validity_filter = root["validity_filter"].as<bool>(cfg.validity_filter);
    } catch (const YAML::Exception& e) {
        throw Error(ErrorCode::InvalidConfig, std::string("pipeline options: ") + e.what());
    }
    if (cfg.features.window_ms <= 0) throw Error(ErrorCode::InvalidConfig, "features.window_ms must be positive");
    if (cfg.alarms.h < 1 || cfg.alarms.h_min < 1 || cfg.alarms.h_min > cfg.alarms.h_max)
        throw Error(ErrorCode::InvalidConfig, "alarm thresholds need 1 <= h and 1 <= h_min <= h_max");
}

PipelineConfig load_pipeline_config(const std::string& detectors_path, const std::string& envelope_path,
                                    const std::string& grouping_path) {
    PipelineConfig cfg;
    if (!detectors_path.empty()) {
        cfg.detectors = load_detector_file(detectors_path);
        std::ifstream in(detectors_path);
        std::stringstream ss;
        ss << in.rdbuf();
        apply_pipeline_options(cfg, ss.str());
    }
    if (!envelope_path.empty()) cfg.envelope = load_envelope_file(envelope_path);
    if (!grouping_path.empty()) cfg.hierarchy = load_hierarchy_file(grouping_path);
    return cfg;
}

json to_json(const PipelineCounters& c) {
    return {{"messages", c.messages},
            {"invalid_messages", c.invalid_messages},
            {"frames", c.frames},
            {"events", c.events},
            {"assumption_changes", c.assumption_changes},
            {"estops", c.estops},
            {"paused_frames", c.paused_frames}};
}

DetectionPipeline::DetectionPipeline(PipelineConfig cfg)
    : cfg_(std::move(cfg)), extractor_(cfg_.features), hierarchy_(cfg_.hierarchy), desk_(cfg_.alarms) {
    for (const auto& d : cfg_.detectors.detectors) detectors_.emplace_back(d);
    for (const auto& a : cfg_.detectors.assumptions) assumptions_.add(a);
    if (cfg_.envelope) envelope_ = std::make_unique<EnvelopeMonitor>(cfg_.envelope->envelope, cfg_.envelope->model);
    // topics the detectors read report zero rates before their first message
    for (const auto& t : detector_topics()) extractor_.declare_topic(t);
}

bool DetectionPipeline::refresh(const BusDirectory& directory) { return hierarchy_.refresh(directory); }

void DetectionPipeline::raise(PipelineStep& out, Alarm a) { out.alarms.push_back(std::move(a)); }

PipelineStep DetectionPipeline::process(const Message& msg) {
    PipelineStep out;
    if (msg.validity == Validity::RejectedRange) return out;  // never delivered to consumers
    ++counters_.messages;
    const bool invalid = msg.validity != Validity::Ok;
    if (invalid) ++counters_.invalid_messages;
    const bool values = !(invalid && cfg_.validity_filter);

    on_frames(extractor_.ingest(msg, values), out);

    if (envelope_ && values && envelope_->feeds_on(msg.topic)) {
        if (auto d = envelope_->on_message(msg)) {
            ++counters_.estops;
            out.estop = *d;
            std::set<std::string> dims;
            for (const auto& [name, _] : d->contributing) dims.insert(name);
            raise(out, desk_.ingest(*d, dim_topics(dims)));
        }
    }
    return out;
}

PipelineStep DetectionPipeline::advance_to(std::int64_t t_ms) {
    PipelineStep out;
    on_frames(extractor_.advance_to(t_ms), out);
    return out;
}

void DetectionPipeline::on_frames(std::vector<FeatureFrame> frames, PipelineStep& out) {
    for (auto& f : frames) {
        hierarchy_.annotate(f);
        ++counters_.frames;
        if (paused_) {
            ++counters_.paused_frames;
        } else {
            for (auto& d : detectors_) {
                if (auto e = d.observe(f)) {
                    for (const auto& sel : d.config().target) {
                        const auto extra = hierarchy_.selector_topics(sel);
                        e->topics.insert(extra.begin(), extra.end());
                    }
                    ++counters_.events;
                    raise(out, desk_.ingest(*e));
                    out.events.push_back(std::move(*e));
                }
                for (auto& c : d.take_notes()) {
                    ++counters_.assumption_changes;
                    raise(out, desk_.ingest(c));
                    out.changes.push_back(std::move(c));
                }
            }
            for (auto& c : assumptions_.check(f)) {
                ++counters_.assumption_changes;
                raise(out, desk_.ingest(c));
                out.changes.push_back(std::move(c));
            }
        }
        history_.push_back(f);
        while (history_.size() > cfg_.frame_history) history_.pop_front();
        out.frames.push_back(std::move(f));
    }
}

std::vector<FeatureFrame> DetectionPipeline::frames(const std::optional<std::string>& topic, std::size_t limit) const {
    std::vector<FeatureFrame> out;
    for (const auto& f : history_) {
        if (topic) {
            auto it = f.per_topic_rate.find(*topic);
            if (it == f.per_topic_rate.end()) continue;
        }
        out.push_back(f);
    }
    if (limit > 0 && out.size() > limit) out.erase(out.begin(), out.end() - static_cast<std::ptrdiff_t>(limit));
    return out;
}

std::set<std::string> DetectionPipeline::detector_topics() const {
    std::set<std::string> out;
    for (const auto& d : cfg_.detectors.detectors) {
        for (const auto& sel : d.target) {
            const auto t = hierarchy_.selector_topics(sel);
            out.insert(t.begin(), t.end());
        }
        if (!d.denominator.empty()) {
            const auto t = hierarchy_.selector_topics(d.denominator);
            out.insert(t.begin(), t.end());
        }
        out.insert(d.topics.begin(), d.topics.end());
    }
    for (const auto& a : cfg_.detectors.assumptions) {
        const auto t = hierarchy_.selector_topics(a.selector);
        out.insert(t.begin(), t.end());
    }
    return out;
}

std::set<std::string> DetectionPipeline::envelope_topics() const {
    std::set<std::string> out;
    if (!cfg_.envelope) return out;
    for (const auto& d : cfg_.envelope->envelope.dims)
        if (!d.source.empty()) out.insert(d.topic());
    return out;
}

std::set<std::string> DetectionPipeline::dim_topics(const std::set<std::string>& dims) const {
    std::set<std::string> out;
    if (!cfg_.envelope) return out;
    for (const auto& d : cfg_.envelope->envelope.dims)
        if (dims.count(d.name) && !d.source.empty()) out.insert(d.topic());
    return out;
}

json DetectionPipeline::save_detectors() const {
    json dets = json::array();
    for (const auto& d : detectors_) dets.push_back(d.save_state());
    return {{"detectors", dets}, {"assumptions", assumptions_.save_state()}};
}

void DetectionPipeline::load_detectors(const json& j) {
    const auto& dets = j.at("detectors");
    if (dets.size() != detectors_.size()) throw Error(ErrorCode::InvalidConfig, "detector state does not match the suite");
    for (std::size_t i = 0; i < detectors_.size(); ++i) detectors_[i].load_state(dets[i]);
    assumptions_.load_state(j.at("assumptions"));
}

void DetectionPipeline::reset_envelope() {
    if (envelope_) envelope_->reset();
}

}  // namespace roboguard
