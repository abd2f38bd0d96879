/// @file trace.hpp
/// @brief Canonical trace records and lossless export/import.
///
/// The canonical form is one JSON object per line with keys in the fixed
/// order t_ms, topic, seq, payload, validity. Payload keys are sorted.

#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "roboguard/bus.hpp"

namespace roboguard {

using TraceRecord = Message;
using Trace = std::vector<TraceRecord>;

enum class TraceFormat { Jsonl, Csv, Yaml };

TraceFormat trace_format_from_string(std::string_view name);

nlohmann::ordered_json record_to_json(const TraceRecord& rec);
TraceRecord record_from_json(const nlohmann::json& j);

std::string encode_record(const TraceRecord& rec);  // one canonical line, no newline
std::string encode_jsonl(const Trace& trace);
Trace decode_jsonl(std::string_view text);

std::string encode_csv(const Trace& trace);
Trace decode_csv(std::string_view text);

std::string encode_yaml(const Trace& trace);
Trace decode_yaml(std::string_view text);

std::string encode_trace(const Trace& trace, TraceFormat format);
Trace decode_trace(std::string_view text, TraceFormat format);

Trace read_trace_file(const std::filesystem::path& path);
void write_trace_file(const std::filesystem::path& path, const Trace& trace);

/// Canonical bytes of a trace; equal traces give equal bytes.
std::string canonical_bytes(const Trace& trace);

/// Lower-case hex SHA-256.
std::string sha256_hex(std::string_view bytes);

/// Shortest decimal text that parses back to exactly `x`, always with a
/// decimal point or exponent so it never reads as an integer.
std::string format_double(double x);

}  // namespace roboguard
