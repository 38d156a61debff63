#include "prevmap/csv.hpp"

#include "prevmap/common.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace prevmap::csv {

std::optional<std::size_t> Table::find(std::string_view column) const {
    for (std::size_t i = 0; i < header_.size(); ++i) {
        if (header_[i] == column) {
            return i;
        }
    }
    return std::nullopt;
}

std::size_t Table::require(std::string_view column) const {
    if (auto idx = find(column)) {
        return *idx;
    }
    throw DataError("missing column '" + std::string(column) + "'");
}

void Table::add_row(std::vector<std::string> row) {
    if (!header_.empty() && row.size() != header_.size()) {
        throw DataError("row " + std::to_string(rows_.size() + 1) + " has " +
                        std::to_string(row.size()) + " fields, expected " +
                        std::to_string(header_.size()));
    }
    rows_.push_back(std::move(row));
}

namespace {

std::vector<std::vector<std::string>> split_records(std::string_view text, char delimiter) {
    std::vector<std::vector<std::string>> records;
    std::vector<std::string> fields;
    std::string field;
    bool in_quotes = false;
    bool any = false;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                field += c;
            }
            continue;
        }
        if (c == '"') {
            in_quotes = true;
            any = true;
        } else if (c == delimiter) {
            fields.push_back(std::move(field));
            field.clear();
            any = true;
        } else if (c == '\n' || c == '\r') {
            if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') {
                ++i;
            }
            if (any || !field.empty()) {
                fields.push_back(std::move(field));
                records.push_back(std::move(fields));
            }
            fields.clear();
            field.clear();
            any = false;
        } else {
            field += c;
            any = true;
        }
    }
    if (in_quotes) {
        throw DataError("unterminated quoted field");
    }
    if (any || !field.empty()) {
        fields.push_back(std::move(field));
        records.push_back(std::move(fields));
    }
    return records;
}

bool needs_quotes(std::string_view s, char delimiter) {
    return s.find_first_of(std::string{delimiter, '"', '\n', '\r'}) != std::string_view::npos;
}

}  // namespace

Table parse(std::string_view text, char delimiter) {
    auto records = split_records(text, delimiter);
    if (records.empty()) {
        throw DataError("empty table: no header row");
    }
    Table table(std::move(records.front()));
    for (std::size_t r = 1; r < records.size(); ++r) {
        table.add_row(std::move(records[r]));
    }
    return table;
}

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Table read_file(const std::filesystem::path& path, char delimiter) {
    try {
        return parse(read_text(path), delimiter);
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

std::string to_string(const Table& table, char delimiter) {
    std::string out;
    auto emit_row = [&](const std::vector<std::string>& row) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) {
                out += delimiter;
            }
            if (needs_quotes(row[i], delimiter)) {
                out += '"';
                for (char c : row[i]) {
                    if (c == '"') {
                        out += '"';
                    }
                    out += c;
                }
                out += '"';
            } else {
                out += row[i];
            }
        }
        out += '\n';
    };
    emit_row(table.header());
    for (const auto& row : table.rows()) {
        emit_row(row);
    }
    return out;
}

void write_text_atomic(const std::filesystem::path& path, std::string_view content) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw DataError("cannot write " + tmp.string());
        }
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) {
            throw DataError("write failed for " + tmp.string());
        }
    }
    std::filesystem::rename(tmp, path);
}

void write_file(const std::filesystem::path& path, const Table& table) {
    write_text_atomic(path, to_string(table));
}

std::string format_number(double value) {
    if (std::isnan(value)) {
        return "NA";
    }
    if (std::isinf(value)) {
        return value > 0 ? "Inf" : "-Inf";
    }
    if (value == 0.0) {
        return "0";
    }
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), value);
    return std::string(buf, res.ptr);
}

double parse_number(std::string_view text) {
    while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) {
        text.remove_prefix(1);
    }
    while (!text.empty() && (text.back() == ' ' || text.back() == '\t')) {
        text.remove_suffix(1);
    }
    if (text.empty() || text == "NA" || text == "nan" || text == "NaN") {
        return kNaN;
    }
    if (text == "Inf" || text == "inf") {
        return kInf;
    }
    if (text == "-Inf" || text == "-inf") {
        return -kInf;
    }
    if (text.front() == '+') {
        text.remove_prefix(1);
    }
    double value = 0.0;
    auto res = std::from_chars(text.data(), text.data() + text.size(), value);
    if (res.ec != std::errc{} || res.ptr != text.data() + text.size()) {
        throw DataError("not a number: '" + std::string(text) + "'");
    }
    return value;
}

long long parse_integer(std::string_view text) {
    long long value = 0;
    auto res = std::from_chars(text.data(), text.data() + text.size(), value);
    if (res.ec != std::errc{} || res.ptr != text.data() + text.size()) {
        throw DataError("not an integer: '" + std::string(text) + "'");
    }
    return value;
}

}  // namespace prevmap::csv
