#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace prevmap::csv {

/// In-memory delimited table with a header row.
class Table {
public:
    Table() = default;
    explicit Table(std::vector<std::string> header) : header_(std::move(header)) {}

    const std::vector<std::string>& header() const { return header_; }
    const std::vector<std::vector<std::string>>& rows() const { return rows_; }
    std::size_t size() const { return rows_.size(); }
    bool empty() const { return rows_.empty(); }

    /// Column index, or nullopt if absent.
    std::optional<std::size_t> find(std::string_view column) const;
    /// Column index; throws DataError naming the column if absent.
    std::size_t require(std::string_view column) const;

    const std::string& at(std::size_t row, std::size_t col) const { return rows_[row][col]; }
    void add_row(std::vector<std::string> row);

private:
    std::vector<std::string> header_;
    std::vector<std::vector<std::string>> rows_;
};

Table parse(std::string_view text, char delimiter = ',');
Table read_file(const std::filesystem::path& path, char delimiter = ',');

std::string to_string(const Table& table, char delimiter = ',');
/// Writes via a temporary file and rename, so readers never see partial output.
void write_file(const std::filesystem::path& path, const Table& table);
void write_text_atomic(const std::filesystem::path& path, std::string_view content);
std::string read_text(const std::filesystem::path& path);

/// Shortest round-trip decimal representation; "NA" for NaN.
std::string format_number(double value);
/// Parses a number; "NA" and empty strings give NaN. Throws DataError on junk.
double parse_number(std::string_view text);
long long parse_integer(std::string_view text);

}  // namespace prevmap::csv
