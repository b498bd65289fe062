#pragma once

#include <cstdio>
#include <ostream>
#include <span>
#include <stdexcept>
#include <type_traits>
#include <string>
#include <string_view>
#include <vector>

namespace splinet {

/// Shortest decimal with 17 significant digits, so values round-trip exactly.
inline std::string format_real(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// Minimal CSV emitter: a header row, then rows of the same width.
class CsvWriter {
public:
    CsvWriter(std::ostream& os, const std::vector<std::string>& header) : os_(os), width_(header.size()) {
        write_cells(header);
    }

    template <class... Cells>
    void row(const Cells&... cells) {
        std::vector<std::string> out;
        (out.push_back(cell(cells)), ...);
        write_cells(out);
    }

    void row_values(std::string_view lead, std::span<const double> values) {
        std::vector<std::string> out{std::string(lead)};
        for (double v : values) {
            out.push_back(format_real(v));
        }
        write_cells(out);
    }

private:
    static std::string cell(double v) { return format_real(v); }
    static std::string cell(const std::string& s) { return s; }
    static std::string cell(const char* s) { return s; }
    template <class I>
    static std::string cell(I v) requires std::is_integral_v<I> {
        return std::to_string(v);
    }

    void write_cells(const std::vector<std::string>& cells) {
        if (cells.size() != width_) {
            throw std::logic_error("csv row width differs from header");
        }
        for (std::size_t i = 0; i < cells.size(); ++i) {
            os_ << (i ? "," : "") << cells[i];
        }
        os_ << '\n';
    }

    std::ostream& os_;
    std::size_t width_;
};

}  // namespace splinet
