#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "dptdr/encoder/checkpoint.hpp"
#include "dptdr/encoder/encode.hpp"
#include "dptdr/encoder/prompt_io.hpp"
#include "dptdr/io/binary.hpp"
#include "dptdr/io/dataset.hpp"
#include "dptdr/io/hash.hpp"
#include "dptdr/mining/bm25.hpp"

namespace dptdr::index {

using mining::ScoredPassage;

inline constexpr char kIndexMagic[4] = {'D', 'P', 'T', 'I'};
inline constexpr std::uint32_t kIndexVersion = 1;

/// Identifies the encoder that produced a set of vectors: backbone bytes
/// plus the passage-side prompts (if any).
inline std::string retriever_fingerprint(const encoder::EncoderModel& model, const encoder::PromptSet* prompts)
{
    io::Fnv1a h;
    h.update(encoder::serialize_checkpoint(model));
    if (prompts != nullptr) {
        h.update(encoder::prompts_to_json(*prompts).dump());
    }
    return h.hex();
}

/// Exact inner-product index. Vectors are stored as f32; scoring promotes
/// to f64.
class VectorIndex {
  public:
    VectorIndex() = default;

    VectorIndex(std::size_t dim, std::string fingerprint) : m_dim(dim), m_fingerprint(std::move(fingerprint))
    {
        if (dim == 0) {
            throw ValidationError("index: dimension must be positive");
        }
    }

    void add(std::string passage_id, std::span<const double> v)
    {
        if (v.size() != m_dim) {
            throw ShapeError("index: vector for '" + passage_id + "' has " + std::to_string(v.size())
                             + " dims, expected " + std::to_string(m_dim));
        }
        for (double x : v) {
            if (!std::isfinite(x)) {
                throw ValidationError("index: non-finite vector for '" + passage_id + "'");
            }
            m_data.push_back(static_cast<float>(x));
        }
        m_ids.push_back(std::move(passage_id));
    }

    std::size_t dim() const noexcept { return m_dim; }
    std::size_t size() const noexcept { return m_ids.size(); }
    const std::string& fingerprint() const noexcept { return m_fingerprint; }
    const std::vector<std::string>& ids() const noexcept { return m_ids; }
    std::span<const float> row(std::size_t i) const { return {m_data.data() + i * m_dim, m_dim}; }
    const std::vector<float>& matrix() const noexcept { return m_data; }

    /// Top-k by inner product, ties by ascending passage id. k larger than the
    /// index returns everything.
    std::vector<ScoredPassage> search(std::span<const double> query, std::size_t k) const
    {
        if (k == 0) {
            throw ValidationError("index: k must be positive");
        }
        if (query.size() != m_dim) {
            throw ShapeError("index: query has " + std::to_string(query.size()) + " dims, index has "
                             + std::to_string(m_dim));
        }
        std::vector<double> scores(m_ids.size());
        for (std::size_t i = 0; i < m_ids.size(); ++i) {
            const float* r = m_data.data() + i * m_dim;
            double s = 0.0;
            for (std::size_t j = 0; j < m_dim; ++j) {
                s += query[j] * static_cast<double>(r[j]);
            }
            scores[i] = s;
        }
        std::vector<std::size_t> order(m_ids.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        const std::size_t top = std::min(k, order.size());
        std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(top), order.end(),
                          [&](std::size_t a, std::size_t b) {
                              return scores[a] != scores[b] ? scores[a] > scores[b] : m_ids[a] < m_ids[b];
                          });
        std::vector<ScoredPassage> out;
        out.reserve(top);
        for (std::size_t i = 0; i < top; ++i) {
            out.push_back({m_ids[order[i]], scores[order[i]]});
        }
        return out;
    }

    /// As search(), refusing queries from a different encoder.
    std::vector<ScoredPassage> search(std::span<const double> query, std::size_t k,
                                      const std::string& expected_fingerprint) const
    {
        if (expected_fingerprint != m_fingerprint) {
            throw Error("fingerprint_mismatch", "index: built by encoder " + m_fingerprint
                                                    + " but queried with " + expected_fingerprint);
        }
        return search(query, k);
    }

    void write(std::ostream& out) const
    {
        out.write(kIndexMagic, 4);
        io::write_le<std::uint32_t>(out, kIndexVersion);
        io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(m_dim));
        io::write_le<std::uint64_t>(out, m_ids.size());
        io::write_string(out, m_fingerprint);
        for (float x : m_data) {
            io::write_le<float>(out, x);
        }
        for (const auto& id : m_ids) {
            io::write_string(out, id);
        }
    }

    static VectorIndex read(std::istream& in)
    {
        char magic[4] = {};
        if (!in.read(magic, 4) || !std::equal(magic, magic + 4, kIndexMagic)) {
            throw Error("corrupt_index", "index: bad magic");
        }
        try {
            if (io::read_le<std::uint32_t>(in) != kIndexVersion) {
                throw Error("corrupt_index", "index: unsupported version");
            }
            const std::size_t dim = io::read_le<std::uint32_t>(in);
            const std::uint64_t count = io::read_le<std::uint64_t>(in);
            if (dim == 0 || count > (1ULL << 32)) {
                throw Error("corrupt_index", "index: implausible header");
            }
            VectorIndex ix(dim, io::read_string(in));
            ix.m_data.resize(dim * count);
            for (auto& x : ix.m_data) {
                x = io::read_le<float>(in);
            }
            for (std::uint64_t i = 0; i < count; ++i) {
                ix.m_ids.push_back(io::read_string(in));
            }
            return ix;
        } catch (const IoError& e) {
            throw Error("corrupt_index", std::string("index: truncated (") + e.what() + ")");
        }
    }

    void save(const std::string& path) const
    {
        std::ofstream out(path, std::ios::binary);
        if (!out) {
            throw IoError("cannot write " + path);
        }
        write(out);
    }

    static VectorIndex load(const std::string& path)
    {
        std::ifstream in(path, std::ios::binary);
        if (!in) {
            throw IoError("cannot open " + path);
        }
        return read(in);
    }

  private:
    std::size_t m_dim = 0;
    std::string m_fingerprint;
    std::vector<std::string> m_ids;
    std::vector<float> m_data;
};

/// Encodes every passage in corpus order.
inline VectorIndex encode_corpus(const io::Corpus& corpus, const encoder::EncoderModel& model,
                                 const encoder::PromptSet* prompts)
{
    VectorIndex ix(model.config().hidden_size, retriever_fingerprint(model, prompts));
    encoder::PrefixKV kv;
    if (prompts != nullptr) {
        kv = encoder::prefix_for(model, *prompts);
    }
    for (const auto& rec : corpus.records()) {
        try {
            auto ids = model.vocab().encode(rec.text, model.config().max_seq_len);
            ad::Tensor v = encoder::encode_with_prefix(model, prompts != nullptr ? &kv : nullptr, ids);
            ix.add(rec.id, v.data());
        } catch (const Error& e) {
            throw Error(e.code(), "encoding passage '" + rec.id + "': " + e.what());
        }
    }
    return ix;
}

struct RetrievalResult {
    std::string query_id;
    std::vector<ScoredPassage> hits;
};

inline std::string format_score(double v)
{
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return {buf, res.ptr};
}

/// query_id \t passage_id \t rank \t score, ranks from 1.
inline std::string run_to_tsv(std::span<const RetrievalResult> results)
{
    std::string out;
    for (const auto& r : results) {
        for (std::size_t i = 0; i < r.hits.size(); ++i) {
            out += r.query_id + "\t" + r.hits[i].passage_id + "\t" + std::to_string(i + 1) + "\t"
                   + format_score(r.hits[i].score) + "\n";
        }
    }
    return out;
}

/// Reads a run file; hits are ordered by the rank column.
inline std::vector<RetrievalResult> read_run(const std::string& path)
{
    std::vector<RetrievalResult> out;
    std::map<std::string, std::size_t> where;
    std::vector<std::vector<std::pair<std::size_t, ScoredPassage>>> ranked;
    for (auto& row : io::read_tsv(path, 4)) {
        auto [it, fresh] = where.emplace(row[0], out.size());
        if (fresh) {
            out.push_back({row[0], {}});
            ranked.emplace_back();
        }
        std::size_t rank = 0;
        double score = 0.0;
        try {
            rank = std::stoul(row[2]);
            score = std::stod(row[3]);
        } catch (const std::exception&) {
            throw IoError(path + ": bad rank or score for query '" + row[0] + "'");
        }
        ranked[it->second].push_back({rank, {row[1], score}});
    }
    for (std::size_t i = 0; i < out.size(); ++i) {
        std::stable_sort(ranked[i].begin(), ranked[i].end(),
                         [](const auto& a, const auto& b) { return a.first < b.first; });
        for (auto& [rank, hit] : ranked[i]) {
            out[i].hits.push_back(std::move(hit));
        }
    }
    return out;
}

}  // namespace dptdr::index
