#include "roboguard/error.hpp"

namespace roboguard {

std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::DuplicateTopic: return "DuplicateTopic";
        case ErrorCode::InvalidSchema: return "InvalidSchema";
        case ErrorCode::UnknownTopic: return "UnknownTopic";
        case ErrorCode::InvalidPayload: return "InvalidPayload";
        case ErrorCode::TimeRegression: return "TimeRegression";
        case ErrorCode::TopicCollision: return "TopicCollision";
        case ErrorCode::InvalidScenario: return "InvalidScenario";
        case ErrorCode::ScenarioNotRunning: return "ScenarioNotRunning";
        case ErrorCode::SinkUnwritable: return "SinkUnwritable";
        case ErrorCode::UnknownFormat: return "UnknownFormat";
        case ErrorCode::MalformedTrace: return "MalformedTrace";
        case ErrorCode::WindowMismatch: return "WindowMismatch";
        case ErrorCode::ZeroWindow: return "ZeroWindow";
        case ErrorCode::InvalidEnvelope: return "InvalidEnvelope";
        case ErrorCode::DimensionMismatch: return "DimensionMismatch";
        case ErrorCode::InsufficientData: return "InsufficientData";
        case ErrorCode::LengthMismatch: return "LengthMismatch";
        case ErrorCode::InsufficientSamples: return "InsufficientSamples";
        case ErrorCode::UnassignedTopic: return "UnassignedTopic";
        case ErrorCode::InvalidPlan: return "InvalidPlan";
        case ErrorCode::UnknownSite: return "UnknownSite";
        case ErrorCode::NodeUnhealthy: return "NodeUnhealthy";
        case ErrorCode::NoSnapshot: return "NoSnapshot";
        case ErrorCode::UnknownNode: return "UnknownNode";
        case ErrorCode::ShadowCold: return "ShadowCold";
        case ErrorCode::CycleGuardTripped: return "CycleGuardTripped";
        case ErrorCode::UnknownAlarm: return "UnknownAlarm";
        case ErrorCode::AlreadyResolved: return "AlreadyResolved";
        case ErrorCode::InvalidConfig: return "InvalidConfig";
        case ErrorCode::MalformedInput: return "MalformedInput";
        case ErrorCode::PortUnavailable: return "PortUnavailable";
    }
    return "Unknown";
}

}  // namespace roboguard
