#pragma once

#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "icueval/errors.hpp"

namespace icueval {

/// Header-addressed delimited table: first row names the columns, fields are
/// comma-separated with double-quote escaping (embedded quotes doubled,
/// quoted fields may contain commas and newlines). Column order is
/// irrelevant; lookups go through the header.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::optional<std::size_t> column(const std::string& name) const {
        for (std::size_t i = 0; i < header.size(); ++i) {
            if (header[i] == name) return i;
        }
        return std::nullopt;
    }

    std::size_t require_column(const std::string& name) const {
        auto idx = column(name);
        if (!idx) throw Error(errc::missing_column, "header lacks required column '" + name + "'");
        return *idx;
    }
};

inline CsvTable parse_csv(const std::string& content) {
    CsvTable table;
    std::vector<std::string> record;
    std::string field;
    bool in_quotes = false;
    bool record_has_data = false;

    auto end_field = [&] {
        record.push_back(field);
        field.clear();
    };
    auto end_record = [&] {
        end_field();
        if (table.header.empty()) {
            table.header = std::move(record);
        } else {
            table.rows.push_back(std::move(record));
        }
        record.clear();
        record_has_data = false;
    };

    for (std::size_t i = 0; i < content.size(); ++i) {
        char c = content[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < content.size() && content[i + 1] == '"') {
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
        switch (c) {
            case '"':
                in_quotes = true;
                record_has_data = true;
                break;
            case ',':
                end_field();
                record_has_data = true;
                break;
            case '\r':
                break;
            case '\n':
                if (record_has_data || !field.empty() || !record.empty()) end_record();
                break;
            default:
                field += c;
                record_has_data = true;
                break;
        }
    }
    if (in_quotes) throw Error(errc::malformed_row, "unterminated quoted field");
    if (record_has_data || !field.empty() || !record.empty()) end_record();
    return table;
}

inline CsvTable read_csv_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(errc::io, "cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_csv(buf.str());
}

inline std::string csv_escape(const std::string& field) {
    bool needs_quotes = field.find_first_of(",\"\n\r") != std::string::npos;
    if (!needs_quotes) return field;
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    out += '"';
    return out;
}

} // namespace icueval
