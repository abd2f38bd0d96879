#include "roboguard/trace.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <openssl/evp.h>
#include <yaml-cpp/yaml.h>

#include "roboguard/error.hpp"

namespace roboguard {

using nlohmann::json;
using nlohmann::ordered_json;

TraceFormat trace_format_from_string(std::string_view name) {
    if (name == "jsonl" || name == "json") return TraceFormat::Jsonl;
    if (name == "csv") return TraceFormat::Csv;
    if (name == "yaml" || name == "yml") return TraceFormat::Yaml;
    throw Error(ErrorCode::UnknownFormat, std::string(name));
}

std::string format_double(double x) {
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), x);
    std::string s(buf, end);
    if (s.find_first_of(".eE") == std::string::npos) s += ".0";
    return s;
}

namespace {

bool looks_integer(std::string_view s) {
    if (s.empty()) return false;
    std::size_t i = (s[0] == '-') ? 1 : 0;
    if (i == s.size()) return false;
    for (; i < s.size(); ++i)
        if (s[i] < '0' || s[i] > '9') return false;
    return true;
}

/// Parses an unquoted typed cell written by the CSV or YAML encoders.
Scalar parse_plain_scalar(std::string_view s) {
    if (s == "true") return true;
    if (s == "false") return false;
    if (looks_integer(s)) {
        std::int64_t v = 0;
        auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc() || p != s.data() + s.size()) throw Error(ErrorCode::MalformedTrace, "bad integer '" + std::string(s) + "'");
        return v;
    }
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    double d = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), d);
    if (ec != std::errc() || p != s.data() + s.size()) throw Error(ErrorCode::MalformedTrace, "bad number '" + std::string(s) + "'");
    return d;
}

std::int64_t parse_int(std::string_view s, const char* what) {
    std::int64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) throw Error(ErrorCode::MalformedTrace, std::string("bad ") + what + " '" + std::string(s) + "'");
    return v;
}

std::string csv_quote(std::string_view s) {
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

std::string csv_maybe_quote(std::string_view s) {
    if (s.find_first_of(",\"\r\n") == std::string_view::npos && !s.empty()) return std::string(s);
    return csv_quote(s);
}

struct CsvCell {
    std::string text;
    bool quoted = false;
};

/// RFC 4180-style reader that remembers whether each cell was quoted.
std::vector<std::vector<CsvCell>> parse_csv(std::string_view text) {
    std::vector<std::vector<CsvCell>> rows;
    std::vector<CsvCell> row;
    CsvCell cell;
    std::size_t i = 0;
    bool at_cell_start = true;
    auto end_cell = [&] {
        row.push_back(std::move(cell));
        cell = {};
        at_cell_start = true;
    };
    auto end_row = [&] {
        end_cell();
        rows.push_back(std::move(row));
        row = {};
    };
    while (i < text.size()) {
        char c = text[i];
        if (at_cell_start && c == '"') {
            cell.quoted = true;
            at_cell_start = false;
            ++i;
            while (true) {
                if (i >= text.size()) throw Error(ErrorCode::MalformedTrace, "unterminated quoted CSV cell");
                if (text[i] == '"') {
                    if (i + 1 < text.size() && text[i + 1] == '"') {
                        cell.text += '"';
                        i += 2;
                        continue;
                    }
                    ++i;
                    break;
                }
                cell.text += text[i++];
            }
            continue;
        }
        at_cell_start = false;
        if (c == ',') {
            end_cell();
            ++i;
        } else if (c == '\n' || c == '\r') {
            end_row();
            if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
            ++i;
        } else {
            if (cell.quoted) throw Error(ErrorCode::MalformedTrace, "text after closing quote in CSV cell");
            cell.text += c;
            ++i;
        }
    }
    if (!at_cell_start || !row.empty() || !cell.text.empty() || cell.quoted) end_row();
    return rows;
}

std::string scalar_cell(const Scalar& v) {
    return std::visit(
        [](const auto& x) -> std::string {
            using T = std::decay_t<decltype(x)>;
            if constexpr (std::is_same_v<T, bool>) return x ? "true" : "false";
            else if constexpr (std::is_same_v<T, std::int64_t>) return std::to_string(x);
            else if constexpr (std::is_same_v<T, double>) return format_double(x);
            else return csv_quote(x);
        },
        v);
}

}  // namespace

// ---------------------------------------------------------------------------
// JSON

ordered_json record_to_json(const TraceRecord& rec) {
    ordered_json payload = ordered_json::object();
    for (const auto& [k, v] : rec.payload)
        std::visit([&](const auto& x) { payload[k] = x; }, v);
    ordered_json j;
    j["t_ms"] = rec.t_ms;
    j["topic"] = rec.topic;
    j["seq"] = rec.seq;
    j["payload"] = std::move(payload);
    j["validity"] = to_string(rec.validity);
    return j;
}

TraceRecord record_from_json(const json& j) {
    try {
        TraceRecord r;
        r.t_ms = j.at("t_ms").get<std::int64_t>();
        r.topic = j.at("topic").get<std::string>();
        r.seq = j.at("seq").get<std::uint64_t>();
        r.validity = validity_from_string(j.at("validity").get<std::string>());
        for (const auto& [k, v] : j.at("payload").items()) {
            if (v.is_boolean()) r.payload[k] = v.get<bool>();
            else if (v.is_number_integer()) r.payload[k] = v.get<std::int64_t>();
            else if (v.is_number_float()) r.payload[k] = v.get<double>();
            else if (v.is_string()) r.payload[k] = v.get<std::string>();
            else if (v.is_null()) r.payload[k] = std::numeric_limits<double>::quiet_NaN();
            else throw Error(ErrorCode::MalformedTrace, "unsupported payload value for '" + k + "'");
        }
        return r;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::MalformedTrace, e.what());
    }
}

std::string encode_record(const TraceRecord& rec) { return record_to_json(rec).dump(); }

std::string encode_jsonl(const Trace& trace) {
    std::string out;
    for (const auto& r : trace) {
        out += encode_record(r);
        out += '\n';
    }
    return out;
}

Trace decode_jsonl(std::string_view text) {
    Trace out;
    std::size_t pos = 0, lineno = 0;
    while (pos < text.size()) {
        std::size_t nl = text.find('\n', pos);
        std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        pos = nl == std::string_view::npos ? text.size() : nl + 1;
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded()) throw Error(ErrorCode::MalformedTrace, "line " + std::to_string(lineno) + ": invalid JSON");
        out.push_back(record_from_json(j));
    }
    return out;
}

// ---------------------------------------------------------------------------
// CSV

std::string encode_csv(const Trace& trace) {
    std::set<std::string> columns;
    for (const auto& r : trace)
        for (const auto& [k, _] : r.payload) columns.insert(k);
    std::string out = "t_ms,topic,seq,validity";
    for (const auto& c : columns) out += "," + csv_maybe_quote(c);
    out += '\n';
    for (const auto& r : trace) {
        out += std::to_string(r.t_ms);
        out += ',';
        out += csv_maybe_quote(r.topic);
        out += ',';
        out += std::to_string(r.seq);
        out += ',';
        out += to_string(r.validity);
        for (const auto& c : columns) {
            out += ',';
            auto it = r.payload.find(c);
            if (it != r.payload.end()) out += scalar_cell(it->second);
        }
        out += '\n';
    }
    return out;
}

Trace decode_csv(std::string_view text) {
    auto rows = parse_csv(text);
    if (rows.empty()) throw Error(ErrorCode::MalformedTrace, "CSV has no header");
    const auto& header = rows.front();
    static const char* fixed[] = {"t_ms", "topic", "seq", "validity"};
    if (header.size() < 4) throw Error(ErrorCode::MalformedTrace, "CSV header too short");
    for (int i = 0; i < 4; ++i)
        if (header[i].text != fixed[i]) throw Error(ErrorCode::MalformedTrace, "unexpected CSV header column " + header[i].text);
    Trace out;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& row = rows[r];
        if (row.size() == 1 && row[0].text.empty() && !row[0].quoted) continue;
        if (row.size() != header.size())
            throw Error(ErrorCode::MalformedTrace, "CSV row " + std::to_string(r) + " has " + std::to_string(row.size()) + " cells");
        TraceRecord rec;
        rec.t_ms = parse_int(row[0].text, "t_ms");
        rec.topic = row[1].text;
        rec.seq = static_cast<std::uint64_t>(parse_int(row[2].text, "seq"));
        rec.validity = validity_from_string(row[3].text);
        for (std::size_t c = 4; c < row.size(); ++c) {
            const auto& cell = row[c];
            if (cell.quoted) rec.payload[header[c].text] = cell.text;
            else if (!cell.text.empty()) rec.payload[header[c].text] = parse_plain_scalar(cell.text);
        }
        out.push_back(std::move(rec));
    }
    return out;
}

// ---------------------------------------------------------------------------
// YAML

std::string encode_yaml(const Trace& trace) {
    YAML::Emitter out;
    out << YAML::BeginSeq;
    for (const auto& r : trace) {
        out << YAML::BeginMap;
        out << YAML::Key << "t_ms" << YAML::Value << r.t_ms;
        out << YAML::Key << "topic" << YAML::Value << YAML::DoubleQuoted << r.topic;
        out << YAML::Key << "seq" << YAML::Value << r.seq;
        out << YAML::Key << "payload" << YAML::Value << YAML::BeginMap;
        for (const auto& [k, v] : r.payload) {
            out << YAML::Key << YAML::DoubleQuoted << k << YAML::Value;
            std::visit(
                [&](const auto& x) {
                    using T = std::decay_t<decltype(x)>;
                    if constexpr (std::is_same_v<T, bool>) out << (x ? "true" : "false");
                    else if constexpr (std::is_same_v<T, std::int64_t>) out << std::to_string(x);
                    else if constexpr (std::is_same_v<T, double>) out << format_double(x);
                    else out << YAML::DoubleQuoted << x;
                },
                v);
        }
        out << YAML::EndMap;
        out << YAML::Key << "validity" << YAML::Value << std::string(to_string(r.validity));
        out << YAML::EndMap;
    }
    out << YAML::EndSeq;
    std::string s = out.c_str();
    s += '\n';
    return s;
}

Trace decode_yaml(std::string_view text) {
    Trace out;
    try {
        YAML::Node root = YAML::Load(std::string(text));
        if (root.IsNull()) return out;
        if (!root.IsSequence()) throw Error(ErrorCode::MalformedTrace, "YAML trace must be a sequence");
        for (const auto& n : root) {
            TraceRecord r;
            r.t_ms = parse_int(n["t_ms"].Scalar(), "t_ms");
            r.topic = n["topic"].Scalar();
            r.seq = static_cast<std::uint64_t>(parse_int(n["seq"].Scalar(), "seq"));
            r.validity = validity_from_string(n["validity"].Scalar());
            const YAML::Node payload = n["payload"];
            if (payload && payload.IsMap()) {
                for (const auto& kv : payload) {
                    const auto key = kv.first.Scalar();
                    const YAML::Node& v = kv.second;
                    if (v.Tag() == "!") r.payload[key] = v.Scalar();
                    else r.payload[key] = parse_plain_scalar(v.Scalar());
                }
            }
            out.push_back(std::move(r));
        }
    } catch (const YAML::Exception& e) {
        throw Error(ErrorCode::MalformedTrace, e.what());
    }
    return out;
}

// ---------------------------------------------------------------------------

std::string encode_trace(const Trace& trace, TraceFormat format) {
    switch (format) {
        case TraceFormat::Jsonl: return encode_jsonl(trace);
        case TraceFormat::Csv: return encode_csv(trace);
        case TraceFormat::Yaml: return encode_yaml(trace);
    }
    return {};
}

Trace decode_trace(std::string_view text, TraceFormat format) {
    switch (format) {
        case TraceFormat::Jsonl: return decode_jsonl(text);
        case TraceFormat::Csv: return decode_csv(text);
        case TraceFormat::Yaml: return decode_yaml(text);
    }
    return {};
}

Trace read_trace_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::MalformedTrace, "cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    auto ext = path.extension().string();
    TraceFormat fmt = TraceFormat::Jsonl;
    if (ext == ".csv") fmt = TraceFormat::Csv;
    else if (ext == ".yaml" || ext == ".yml") fmt = TraceFormat::Yaml;
    return decode_trace(ss.str(), fmt);
}

void write_trace_file(const std::filesystem::path& path, const Trace& trace) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::SinkUnwritable, path.string());
    out << encode_jsonl(trace);
}

std::string canonical_bytes(const Trace& trace) { return encode_jsonl(trace); }

std::string sha256_hex(std::string_view bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr);
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(len * 2);
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[digest[i] >> 4];
        out += hex[digest[i] & 0xf];
    }
    return out;
}

}  // namespace roboguard
