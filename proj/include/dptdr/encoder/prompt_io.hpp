#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "dptdr/encoder/prompts.hpp"
#include "dptdr/io/base64.hpp"
#include "dptdr/io/binary.hpp"

namespace dptdr::encoder {

using json = nlohmann::json;

inline constexpr const char* kPromptFormat = "dptdr-prompts";
inline constexpr int kPromptFormatVersion = 1;

namespace detail {

inline std::string pack_f64(std::span<const double> values)
{
    std::ostringstream out(std::ios::binary);
    for (double v : values) {
        io::write_le<double>(out, v);
    }
    return out.str();
}

inline std::vector<double> unpack_f64(const std::string& bytes, std::size_t expected)
{
    if (bytes.size() != expected * sizeof(double)) {
        throw ValidationError("prompts: payload holds " + std::to_string(bytes.size()) + " bytes, expected "
                              + std::to_string(expected * sizeof(double)));
    }
    std::istringstream in(bytes, std::ios::binary);
    std::vector<double> out(expected);
    for (auto& v : out) {
        v = io::read_le<double>(in);
    }
    return out;
}

}  // namespace detail

/// JSON header fields plus base64 little-endian f64 arrays.
inline json prompts_to_json(const PromptSet& p)
{
    json arrays = json::array();
    for (const auto& [name, t] : p.named_parameters()) {
        arrays.push_back({{"name", name},
                          {"rows", t.rows()},
                          {"cols", t.cols()},
                          {"data", io::base64_encode(detail::pack_f64(t.data()))}});
    }
    return {{"format", kPromptFormat},
            {"format_version", kPromptFormatVersion},
            {"task_name", p.task_name()},
            {"l", p.length()},
            {"d", p.hidden_size()},
            {"L", p.num_layers()},
            {"reparam_mode", to_string(p.mode())},
            {"mlp_hidden", p.mlp_hidden()},
            {"version", p.version()},
            {"encoding", "base64-f64le"},
            {"arrays", std::move(arrays)}};
}

inline PromptSet prompts_from_json(const json& j)
{
    try {
        if (j.value("encoding", "base64-f64le") != "base64-f64le") {
            throw ValidationError("prompts: unsupported encoding '" + j.value("encoding", "") + "'");
        }
        std::vector<std::pair<std::string, Tensor>> params;
        for (const auto& a : j.at("arrays")) {
            const std::size_t rows = a.at("rows").get<std::size_t>();
            const std::size_t cols = a.at("cols").get<std::size_t>();
            auto data = detail::unpack_f64(io::base64_decode(a.at("data").get<std::string>()), rows * cols);
            params.emplace_back(a.at("name").get<std::string>(), Tensor::from({rows, cols}, std::move(data)));
        }
        return PromptSet::from_parameters(parse_reparam_mode(j.at("reparam_mode").get<std::string>()),
                                          j.at("l").get<std::size_t>(), j.at("d").get<std::size_t>(),
                                          j.at("L").get<std::size_t>(), j.value("mlp_hidden", std::size_t{0}),
                                          j.value("task_name", std::string("default")),
                                          j.value("version", std::uint32_t{1}), std::move(params));
    } catch (const json::exception& e) {
        throw ValidationError(std::string("prompts: malformed payload: ") + e.what());
    }
}

/// A dual prompt file is a prompt file whose optional "passage" member holds
/// the passage-side set.
inline json dual_prompts_to_json(const DualPrompts& d)
{
    json j = prompts_to_json(d.query);
    if (d.passage) {
        j["passage"] = prompts_to_json(*d.passage);
    }
    return j;
}

inline DualPrompts dual_prompts_from_json(const json& j)
{
    DualPrompts d{prompts_from_json(j), std::nullopt};
    if (j.contains("passage")) {
        d.passage = prompts_from_json(j.at("passage"));
    }
    return d;
}

inline void save_prompts(const DualPrompts& d, const std::string& path)
{
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot open " + path + " for writing");
    }
    out << dual_prompts_to_json(d).dump() << "\n";
}

inline DualPrompts load_prompts(const std::string& path)
{
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open " + path);
    }
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ValidationError("prompts: " + path + " is not valid JSON: " + e.what());
    }
    return dual_prompts_from_json(j);
}

}  // namespace dptdr::encoder
