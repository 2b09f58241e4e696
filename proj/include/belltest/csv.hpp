#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "belltest/errors.hpp"

namespace belltest::csv {

inline std::vector<std::string_view> split(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find(',', start);
        if (pos == std::string_view::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

template <typename Int>
Int parse_int(std::string_view field, const std::string& context) {
    field = trim(field);
    Int value{};
    const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
    if (ec != std::errc{} || ptr != field.data() + field.size()) {
        throw ParseError(context + ": expected integer, got '" + std::string(field) + "'");
    }
    return value;
}

inline double parse_double(std::string_view field, const std::string& context) {
    field = trim(field);
    double value{};
    const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
    if (ec != std::errc{} || ptr != field.data() + field.size()) {
        throw ParseError(context + ": expected number, got '" + std::string(field) + "'");
    }
    return value;
}

// Buffered line writer; keeps million-row event files cheap to emit.
class Writer {
public:
    explicit Writer(const std::string& path) : out_(path, std::ios::binary) {
        if (!out_) throw LoadError("cannot open '" + path + "' for writing");
        buffer_.reserve(1 << 20);
    }

    ~Writer() { flush_quiet(); }

    Writer(const Writer&) = delete;
    Writer& operator=(const Writer&) = delete;

    void line(std::string_view text) {
        buffer_.append(text);
        buffer_.push_back('\n');
        if (buffer_.size() >= (1 << 20)) flush();
    }

    void flush() {
        out_.write(buffer_.data(), static_cast<std::streamsize>(buffer_.size()));
        buffer_.clear();
        if (!out_) throw LoadError("write failure");
    }

private:
    void flush_quiet() noexcept {
        try {
            flush();
        } catch (...) {
        }
    }

    std::ofstream out_;
    std::string buffer_;
};

inline std::string format_int(std::int64_t v) {
    char buf[24];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, ptr);
}

} // namespace belltest::csv
