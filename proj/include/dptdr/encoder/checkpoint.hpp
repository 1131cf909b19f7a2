#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>

#include "dptdr/encoder/model.hpp"
#include "dptdr/io/binary.hpp"
#include "dptdr/io/hash.hpp"

namespace dptdr::encoder {

inline constexpr char kCheckpointMagic[4] = {'D', 'P', 'T', 'E'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Layout (all little-endian), see docs/FORMATS.md:
///   "DPTE" | u32 version | 10 x u32 config | u32 vocab count + strings |
///   u32 array count | per array: string name, u32 rows, u32 cols, f64 data
inline void write_checkpoint(const EncoderModel& model, std::ostream& out)
{
    const auto& c = model.config();
    out.write(kCheckpointMagic, 4);
    io::write_le<std::uint32_t>(out, kCheckpointVersion);
    for (std::size_t v : {c.num_layers, c.hidden_size, c.num_heads, c.ffn_size, c.vocab_size, c.max_seq_len,
                          c.prompt_length}) {
        io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(v));
    }
    io::write_le<std::uint32_t>(out, c.reparam_mode == ReparamMode::mlp ? 1U : 0U);
    io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(c.mlp_hidden));
    io::write_le<std::uint32_t>(out, c.separate_prompts ? 1U : 0U);

    const auto& tokens = model.vocab().tokens();
    io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(tokens.size()));
    for (const auto& t : tokens) {
        io::write_string(out, t);
    }
    auto params = model.named_parameters();
    io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
    for (const auto& [name, t] : params) {
        io::write_string(out, name);
        io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rows()));
        io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.cols()));
        for (double v : t.data()) {
            io::write_le<double>(out, v);
        }
    }
}

inline std::string serialize_checkpoint(const EncoderModel& model)
{
    std::ostringstream out(std::ios::binary);
    write_checkpoint(model, out);
    return out.str();
}

inline EncoderModel read_checkpoint(std::istream& in)
{
    char magic[4];
    if (!in.read(magic, 4) || std::string(magic, 4) != std::string(kCheckpointMagic, 4)) {
        throw Error("corrupt_checkpoint", "checkpoint: bad magic (expected DPTE)");
    }
    const auto version = io::read_le<std::uint32_t>(in);
    if (version != kCheckpointVersion) {
        throw Error("corrupt_checkpoint", "checkpoint: unsupported version " + std::to_string(version));
    }
    EncoderConfig c;
    c.num_layers = io::read_le<std::uint32_t>(in);
    c.hidden_size = io::read_le<std::uint32_t>(in);
    c.num_heads = io::read_le<std::uint32_t>(in);
    c.ffn_size = io::read_le<std::uint32_t>(in);
    c.vocab_size = io::read_le<std::uint32_t>(in);
    c.max_seq_len = io::read_le<std::uint32_t>(in);
    c.prompt_length = io::read_le<std::uint32_t>(in);
    c.reparam_mode = io::read_le<std::uint32_t>(in) == 1U ? ReparamMode::mlp : ReparamMode::direct_embedding;
    c.mlp_hidden = io::read_le<std::uint32_t>(in);
    c.separate_prompts = io::read_le<std::uint32_t>(in) == 1U;
    c.validate();

    const auto ntok = io::read_le<std::uint32_t>(in);
    if (ntok != c.vocab_size) {
        throw Error("corrupt_checkpoint", "checkpoint: vocabulary has " + std::to_string(ntok)
                                              + " entries, config says " + std::to_string(c.vocab_size));
    }
    std::vector<std::string> tokens;
    tokens.reserve(ntok);
    for (std::uint32_t i = 0; i < ntok; ++i) {
        tokens.push_back(io::read_string(in, 4096));
    }
    EncoderModel model = EncoderModel::initialize(c, text::Vocabulary::from_tokens(tokens), 0, 0.0);
    const auto narrays = io::read_le<std::uint32_t>(in);
    const auto expected = model.named_parameters().size();
    if (narrays != expected) {
        throw Error("corrupt_checkpoint", "checkpoint: " + std::to_string(narrays) + " arrays, expected "
                                              + std::to_string(expected));
    }
    for (std::uint32_t i = 0; i < narrays; ++i) {
        std::string name = io::read_string(in, 4096);
        const auto rows = io::read_le<std::uint32_t>(in);
        const auto cols = io::read_le<std::uint32_t>(in);
        std::vector<double> data(static_cast<std::size_t>(rows) * cols);
        for (auto& v : data) {
            v = io::read_le<double>(in);
        }
        model.replace_parameter(name, Tensor::from({rows, cols}, std::move(data)));
    }
    return model;
}

inline void save_checkpoint(const EncoderModel& model, const std::string& path)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot open " + path + " for writing");
    }
    write_checkpoint(model, out);
}

inline EncoderModel load_checkpoint(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path);
    }
    try {
        return read_checkpoint(in);
    } catch (const IoError& e) {
        throw Error("corrupt_checkpoint", "checkpoint " + path + ": " + e.what());
    }
}

/// Hash of the serialized checkpoint: identical weights, config and
/// vocabulary give the same fingerprint.
inline std::string fingerprint(const EncoderModel& model) { return io::fnv1a_hex(serialize_checkpoint(model)); }

}  // namespace dptdr::encoder
