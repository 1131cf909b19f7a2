#pragma once

#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dptdr/error.hpp"

namespace dptdr::io {

/// Splits one line on tabs. Empty trailing fields are kept.
inline std::vector<std::string> split_tabs(std::string_view line)
{
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        auto pos = line.find('\t', start);
        if (pos == std::string_view::npos) {
            out.emplace_back(line.substr(start));
            return out;
        }
        out.emplace_back(line.substr(start, pos - start));
        start = pos + 1;
    }
}

/// Reads a TSV file with exactly `columns` fields per non-empty line.
inline std::vector<std::vector<std::string>> read_tsv(const std::string& path, std::size_t columns)
{
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open " + path);
    }
    std::vector<std::vector<std::string>> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty()) {
            continue;
        }
        auto fields = split_tabs(line);
        if (fields.size() != columns) {
            throw IoError(path + ":" + std::to_string(lineno) + ": expected " + std::to_string(columns)
                          + " tab-separated fields, got " + std::to_string(fields.size()));
        }
        rows.push_back(std::move(fields));
    }
    return rows;
}

inline void write_file(const std::string& path, const std::string& content)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot write " + path);
    }
    out << content;
    if (!out) {
        throw IoError("write failed: " + path);
    }
}

inline std::string read_file(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path);
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Ordered id -> text records (passages or queries).
class TextCollection {
  public:
    struct Record {
        std::string id;
        std::string text;
    };

    void add(std::string id, std::string text)
    {
        if (id.empty()) {
            throw ValidationError("empty id");
        }
        if (id.find_first_of("\t\n") != std::string::npos || text.find_first_of("\t\n") != std::string::npos) {
            throw ValidationError("id or text for '" + id + "' contains a tab or newline");
        }
        if (!m_index.emplace(id, m_records.size()).second) {
            throw ValidationError("duplicate id '" + id + "'");
        }
        m_records.push_back({std::move(id), std::move(text)});
    }

    std::size_t size() const noexcept { return m_records.size(); }
    bool empty() const noexcept { return m_records.empty(); }
    const std::vector<Record>& records() const noexcept { return m_records; }
    const Record& operator[](std::size_t i) const { return m_records.at(i); }
    bool contains(const std::string& id) const { return m_index.count(id) != 0; }

    const std::string& text(const std::string& id) const
    {
        auto it = m_index.find(id);
        if (it == m_index.end()) {
            throw ValidationError("unknown id '" + id + "'");
        }
        return m_records[it->second].text;
    }

    std::size_t position(const std::string& id) const
    {
        auto it = m_index.find(id);
        if (it == m_index.end()) {
            throw ValidationError("unknown id '" + id + "'");
        }
        return it->second;
    }

    std::vector<std::string> texts() const
    {
        std::vector<std::string> out;
        out.reserve(m_records.size());
        for (const auto& r : m_records) {
            out.push_back(r.text);
        }
        return out;
    }

    std::string to_tsv() const
    {
        std::string out;
        for (const auto& r : m_records) {
            out += r.id;
            out += '\t';
            out += r.text;
            out += '\n';
        }
        return out;
    }

    static TextCollection load(const std::string& path)
    {
        TextCollection c;
        for (auto& row : read_tsv(path, 2)) {
            c.add(std::move(row[0]), std::move(row[1]));
        }
        return c;
    }

    void save(const std::string& path) const { write_file(path, to_tsv()); }

  private:
    std::vector<Record> m_records;
    std::unordered_map<std::string, std::size_t> m_index;
};

using Corpus = TextCollection;
using Queries = TextCollection;

/// Query id -> set of relevant passage ids.
class Qrels {
  public:
    void add(const std::string& qid, const std::string& pid) { m_rel[qid].insert(pid); }

    bool has_query(const std::string& qid) const { return m_rel.count(qid) != 0; }

    const std::set<std::string>& relevant(const std::string& qid) const
    {
        auto it = m_rel.find(qid);
        if (it == m_rel.end()) {
            throw ValidationError("query '" + qid + "' has no qrels");
        }
        return it->second;
    }

    bool is_relevant(const std::string& qid, const std::string& pid) const
    {
        auto it = m_rel.find(qid);
        return it != m_rel.end() && it->second.count(pid) != 0;
    }

    const std::map<std::string, std::set<std::string>>& all() const noexcept { return m_rel; }
    std::size_t size() const noexcept { return m_rel.size(); }

    std::string to_tsv() const
    {
        std::string out;
        for (const auto& [q, ps] : m_rel) {
            for (const auto& p : ps) {
                out += q + "\t" + p + "\n";
            }
        }
        return out;
    }

    static Qrels load(const std::string& path)
    {
        Qrels q;
        for (auto& row : read_tsv(path, 2)) {
            q.add(row[0], row[1]);
        }
        return q;
    }

    void save(const std::string& path) const { write_file(path, to_tsv()); }

  private:
    std::map<std::string, std::set<std::string>> m_rel;
};

}  // namespace dptdr::io
