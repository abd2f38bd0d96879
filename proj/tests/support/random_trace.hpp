// Random trace generator shared by the round-trip property tests.
#pragma once

#include <cmath>
#include <map>
#include <random>
#include <string>

#include "roboguard/trace.hpp"

namespace test_support {

inline std::string random_string(std::mt19937_64& rng) {
    static const std::string alphabet = "abcXYZ09 ,\"'\n\t:-#{}[]&*!|>%@`\\/";
    std::uniform_int_distribution<int> len(0, 12);
    std::uniform_int_distribution<std::size_t> pick(0, alphabet.size() - 1);
    std::string s;
    int n = len(rng);
    for (int i = 0; i < n; ++i) s += alphabet[pick(rng)];
    return s;
}

inline roboguard::Scalar random_scalar(std::mt19937_64& rng) {
    switch (std::uniform_int_distribution<int>(0, 5)(rng)) {
        case 0: return std::uniform_int_distribution<int>(0, 1)(rng) == 1;
        case 1: return std::uniform_int_distribution<std::int64_t>(-1'000'000'000'000, 1'000'000'000'000)(rng);
        case 2: return std::uniform_real_distribution<double>(-1e6, 1e6)(rng);
        case 3: return std::ldexp(std::uniform_real_distribution<double>(-1, 1)(rng), std::uniform_int_distribution<int>(-300, 300)(rng));
        case 4: return static_cast<double>(std::uniform_int_distribution<int>(-5, 5)(rng));
        default: {
            // Strings that look like other kinds must stay strings.
            static const char* tricky[] = {"true", "false", "12", "1.5", "nan", "", "null", "~", "- x"};
            if (std::uniform_int_distribution<int>(0, 3)(rng) == 0) return std::string(tricky[std::uniform_int_distribution<int>(0, 8)(rng)]);
            return random_string(rng);
        }
    }
}

inline roboguard::Trace random_trace(std::mt19937_64& rng, int max_records) {
    using namespace roboguard;
    Trace t;
    int n = std::uniform_int_distribution<int>(0, max_records)(rng);
    std::int64_t now = std::uniform_int_distribution<std::int64_t>(0, 1000)(rng);
    std::map<std::string, std::uint64_t> seqs;
    static const char* topics[] = {"/cmd_vel", "/odom", "/sys/cpu/base", "/weird,topic", "/q\"uote"};
    static const char* fields[] = {"linear", "angular", "x", "name", "flag", "a,b", "v\"q", "key with space", "true"};
    for (int i = 0; i < n; ++i) {
        TraceRecord r;
        now += std::uniform_int_distribution<std::int64_t>(0, 50)(rng);
        r.t_ms = now;
        r.topic = topics[std::uniform_int_distribution<int>(0, 4)(rng)];
        r.seq = ++seqs[r.topic];
        int nf = std::uniform_int_distribution<int>(0, 4)(rng);
        for (int f = 0; f < nf; ++f) r.payload[fields[std::uniform_int_distribution<int>(0, 8)(rng)]] = random_scalar(rng);
        r.validity = static_cast<Validity>(std::uniform_int_distribution<int>(0, 2)(rng));
        t.push_back(std::move(r));
    }
    return t;
}

}  // namespace test_support
