#pragma once

#include <atomic>
#include <charconv>
#include <chrono>
#include <cstring>
#include <ctime>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dptdr/encoder/checkpoint.hpp"
#include "dptdr/encoder/encode.hpp"
#include "dptdr/encoder/prompt_io.hpp"
#include "dptdr/io/base64.hpp"

namespace dptdr::serving {

using json = nlohmann::json;

/// Protocol error: HTTP status plus the {code, message, detail} body.
class ServiceError : public Error {
  public:
    ServiceError(int status, std::string code, const std::string& message, json detail = json::object())
        : Error(std::move(code), message), m_status(status), m_detail(std::move(detail))
    {}

    int status() const noexcept { return m_status; }
    const json& detail() const noexcept { return m_detail; }
    json body() const { return {{"code", code()}, {"message", what()}, {"detail", m_detail}}; }

  private:
    int m_status;
    json m_detail;
};

enum class Role { query, passage };
enum class Precision { f32, f64 };

inline Role parse_role(const std::string& s)
{
    if (s == "query") {
        return Role::query;
    }
    if (s == "passage") {
        return Role::passage;
    }
    throw ServiceError(400, "bad_request", "role must be query or passage", {{"role", s}});
}

inline Precision parse_precision(const std::string& s)
{
    if (s == "f32") {
        return Precision::f32;
    }
    if (s == "f64") {
        return Precision::f64;
    }
    throw ServiceError(400, "bad_request", "precision must be f32 or f64", {{"precision", s}});
}

/// A registered prompt file with its key/value prefixes realized once.
struct RegistryEntry {
    std::string prompt_id;
    std::string task_name;
    encoder::DualPrompts prompts;
    encoder::PrefixKV query_prefix;
    encoder::PrefixKV passage_prefix;
    std::string created_at;

    const encoder::PrefixKV& prefix(Role r) const { return r == Role::query ? query_prefix : passage_prefix; }
};

struct EncodeRequest {
    std::optional<std::string> prompt_id;
    std::optional<json> inline_prompts;  // prompt file JSON
    std::optional<std::vector<encoder::TokenId>> token_ids;
    std::optional<std::string> text;
    Role role = Role::query;
    Precision precision = Precision::f32;
};

struct EncodeResponse {
    std::vector<double> vector;
    std::string fingerprint;
    double timing_ms = 0.0;
    Precision precision = Precision::f32;
};

inline EncodeRequest parse_encode_request(const json& j)
{
    if (!j.is_object()) {
        throw ServiceError(400, "bad_request", "encode body must be a JSON object");
    }
    static const std::vector<std::string> known{"prompt_id", "prompts", "token_ids", "text", "role", "precision"};
    for (const auto& [k, v] : j.items()) {
        if (std::find(known.begin(), known.end(), k) == known.end()) {
            throw ServiceError(400, "bad_request", "unknown field '" + k + "'", {{"field", k}});
        }
    }
    EncodeRequest r;
    try {
        if (j.contains("prompt_id")) {
            r.prompt_id = j.at("prompt_id").get<std::string>();
        }
        if (j.contains("prompts")) {
            r.inline_prompts = j.at("prompts");
        }
        if (j.contains("token_ids")) {
            r.token_ids = j.at("token_ids").get<std::vector<encoder::TokenId>>();
        }
        if (j.contains("text")) {
            r.text = j.at("text").get<std::string>();
        }
        r.role = parse_role(j.value("role", std::string("query")));
        r.precision = parse_precision(j.value("precision", std::string("f32")));
    } catch (const json::exception& e) {
        throw ServiceError(400, "bad_request", std::string("malformed encode request: ") + e.what());
    }
    if (r.prompt_id.has_value() == r.inline_prompts.has_value()) {
        throw ServiceError(400, "bad_request", "exactly one of prompt_id and prompts is required");
    }
    if (r.token_ids.has_value() == r.text.has_value()) {
        throw ServiceError(400, "bad_request", "exactly one of token_ids and text is required");
    }
    return r;
}

/// Shortest decimal that round-trips the value at the given precision.
inline std::string render_number(double v, Precision p)
{
    char buf[64];
    auto res = p == Precision::f32 ? std::to_chars(buf, buf + sizeof(buf), static_cast<float>(v))
                                   : std::to_chars(buf, buf + sizeof(buf), v);
    return {buf, res.ptr};
}

inline std::string render_vector(const std::vector<double>& v, Precision p)
{
    std::string out = "[";
    for (std::size_t i = 0; i < v.size(); ++i) {
        out += (i == 0 ? "" : ",") + render_number(v[i], p);
    }
    return out + "]";
}

inline std::string encode_response_json(const EncodeResponse& r)
{
    json meta{{"fingerprint", r.fingerprint},
              {"timing_ms", r.timing_ms},
              {"precision", r.precision == Precision::f32 ? "f32" : "f64"},
              {"dim", r.vector.size()}};
    std::string body = meta.dump();
    body.pop_back();
    return body + ",\"vector\":" + render_vector(r.vector, r.precision) + "}";
}

/// Little-endian f32 array.
inline std::string encode_response_binary(const EncodeResponse& r)
{
    std::string out;
    out.reserve(4 * r.vector.size());
    for (double x : r.vector) {
        const float f = static_cast<float>(x);
        std::uint32_t bits = 0;
        std::memcpy(&bits, &f, 4);
        for (int b = 0; b < 4; ++b) {
            out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFFU));
        }
    }
    return out;
}

inline std::vector<float> decode_binary_vector(const std::string& bytes)
{
    if (bytes.size() % 4 != 0) {
        throw ValidationError("binary vector length is not a multiple of 4");
    }
    std::vector<float> out(bytes.size() / 4);
    for (std::size_t i = 0; i < out.size(); ++i) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b) {
            bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[4 * i + b])) << (8 * b);
        }
        std::memcpy(&out[i], &bits, 4);
    }
    return out;
}

/// The encoding service without transport: a frozen backbone and an
/// append-only prompt registry. Safe to call from many threads.
class EncoderService {
  public:
    explicit EncoderService(encoder::EncoderModel model) : m_model(std::move(model))
    {
        m_model.set_trainable(false);
        m_fingerprint = encoder::fingerprint(m_model);
    }

    const encoder::EncoderModel& model() const noexcept { return m_model; }
    const std::string& fingerprint() const noexcept { return m_fingerprint; }

    json health() const { return {{"status", "ok"}, {"fingerprint", m_fingerprint}}; }

    json model_info() const
    {
        const auto& c = m_model.config();
        return {{"fingerprint", m_fingerprint},
                {"config",
                 {{"vocab_size", c.vocab_size},
                  {"num_layers", c.num_layers},
                  {"hidden_size", c.hidden_size},
                  {"num_heads", c.num_heads},
                  {"ffn_size", c.ffn_size},
                  {"max_seq_len", c.max_seq_len},
                  {"prompt_length", c.prompt_length}}},
                {"registered_prompts", registry_size()}};
    }

    /// Accepts a prompt file (JSON) and returns its new id.
    std::string register_prompts(const json& payload)
    {
        auto entry = std::make_shared<RegistryEntry>(realize(payload));
        std::unique_lock lock(m_mutex);
        entry->prompt_id = "p" + std::to_string(++m_next_id);
        m_registry.emplace(entry->prompt_id, entry);
        return entry->prompt_id;
    }

    std::size_t registry_size() const
    {
        std::shared_lock lock(m_mutex);
        return m_registry.size();
    }

    std::shared_ptr<const RegistryEntry> lookup(const std::string& id) const
    {
        std::shared_lock lock(m_mutex);
        auto it = m_registry.find(id);
        if (it == m_registry.end()) {
            throw ServiceError(404, "unknown_prompt", "no prompt set registered as '" + id + "'", {{"prompt_id", id}});
        }
        return it->second;
    }

    EncodeResponse encode(const EncodeRequest& req) const
    {
        const auto t0 = std::chrono::steady_clock::now();
        std::shared_ptr<const RegistryEntry> entry;
        if (req.prompt_id) {
            entry = lookup(*req.prompt_id);
        } else {
            entry = std::make_shared<RegistryEntry>(realize(*req.inline_prompts));
        }
        const auto ids = token_ids(req);
        auto v = encoder::encode_with_prefix(m_model, &entry->prefix(req.role), ids);
        EncodeResponse r;
        r.vector.assign(v.data().begin(), v.data().end());
        r.fingerprint = m_fingerprint;
        r.precision = req.precision;
        r.timing_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        return r;
    }

  private:
    std::vector<encoder::TokenId> token_ids(const EncodeRequest& req) const
    {
        const std::size_t max_len = m_model.config().max_seq_len;
        if (req.text) {
            try {
                return m_model.vocab().encode(*req.text, max_len, false);
            } catch (const Error& e) {
                throw ServiceError(413, e.code(), e.what(), {{"max_seq_len", max_len}});
            }
        }
        const auto& ids = *req.token_ids;
        if (ids.empty() || ids.front() != text::kCls) {
            throw ServiceError(400, "bad_request", "token_ids must start with the [CLS] id",
                               {{"expected_first", text::kCls}});
        }
        if (ids.size() > max_len) {
            throw ServiceError(413, "sequence_too_long",
                               "sequence of " + std::to_string(ids.size()) + " tokens exceeds max_seq_len",
                               {{"max_seq_len", max_len}, {"actual", ids.size()}});
        }
        const std::size_t vocab = m_model.config().vocab_size;
        for (auto id : ids) {
            if (id >= vocab) {
                throw ServiceError(400, "bad_request", "token id out of range",
                                   {{"token_id", id}, {"vocab_size", vocab}});
            }
        }
        return ids;
    }

    void check_dims(const encoder::PromptSet& p) const
    {
        const auto& c = m_model.config();
        auto check = [](const char* field, std::size_t expected, std::size_t actual) {
            if (expected != actual) {
                throw ServiceError(422, "prompt_mismatch", std::string("prompt ") + field + " does not match the backbone",
                                   {{"field", field}, {"expected", expected}, {"actual", actual}});
            }
        };
        check("l", c.prompt_length, p.length());
        check("d", c.hidden_size, p.hidden_size());
        check("L", c.num_layers, p.num_layers());
    }

    RegistryEntry realize(const json& payload) const
    {
        encoder::DualPrompts prompts;
        try {
            prompts = encoder::dual_prompts_from_json(payload);
        } catch (const Error& e) {
            throw ServiceError(400, "bad_prompts", e.what());
        }
        check_dims(prompts.query);
        if (prompts.passage) {
            check_dims(*prompts.passage);
        }
        RegistryEntry e;
        e.task_name = prompts.query.task_name();
        e.query_prefix = encoder::prefix_for(m_model, prompts.for_query());
        e.passage_prefix = prompts.passage ? encoder::prefix_for(m_model, *prompts.passage) : e.query_prefix;
        e.prompts = std::move(prompts);
        const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
        char buf[32];
        std::tm tm{};
        gmtime_r(&now, &tm);
        std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
        e.created_at = buf;
        return e;
    }

    encoder::EncoderModel m_model;
    std::string m_fingerprint;
    mutable std::shared_mutex m_mutex;
    std::map<std::string, std::shared_ptr<const RegistryEntry>> m_registry;
    std::size_t m_next_id = 0;
};

}  // namespace dptdr::serving
