/// @file error.hpp
/// @brief Error codes shared by every roboguard module.

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace roboguard {

enum class ErrorCode {
    DuplicateTopic,
    InvalidSchema,
    UnknownTopic,
    InvalidPayload,
    TimeRegression,
    TopicCollision,
    InvalidScenario,
    ScenarioNotRunning,
    SinkUnwritable,
    UnknownFormat,
    MalformedTrace,
    WindowMismatch,
    ZeroWindow,
    InvalidEnvelope,
    DimensionMismatch,
    InsufficientData,
    LengthMismatch,
    InsufficientSamples,
    UnassignedTopic,
    InvalidPlan,
    UnknownSite,
    NodeUnhealthy,
    NoSnapshot,
    UnknownNode,
    ShadowCold,
    CycleGuardTripped,
    UnknownAlarm,
    AlreadyResolved,
    InvalidConfig,
    MalformedInput,
    PortUnavailable,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace roboguard
