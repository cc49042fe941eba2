#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "sdfn/error.hpp"
#include "sdfn/layers.hpp"

namespace sdfn {

inline constexpr const char* kCheckpointMagic = "SDFN-WEIGHTS";
inline constexpr int kCheckpointVersion = 1;

using Meta = std::map<std::string, std::string>;

namespace detail {

inline std::uint64_t to_little_endian(std::uint64_t v) {
    if constexpr (std::endian::native == std::endian::big) {
        std::uint64_t r = 0;
        for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xFF) << (8 * (7 - i));
        return r;
    }
    return v;
}

inline std::string shape_field(const Shape& s) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
    return out;
}

}  // namespace detail

/// Text header (magic, version, kind, config echo, metadata, tensor table)
/// followed by every tensor as little-endian 64-bit reals in list order.
inline void save_checkpoint(const std::filesystem::path& path, const std::string& kind, const std::string& config_echo,
                            const ParamList& params, const Meta& meta = {}) {
    if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
    std::ostringstream header;
    header << kCheckpointMagic << "\n"
           << "version " << kCheckpointVersion << "\n"
           << "kind " << kind << "\n"
           << "config " << config_echo << "\n";
    for (const auto& [k, v] : meta) {
        if (k.find_first_of(" \n") != std::string::npos || v.find('\n') != std::string::npos)
            throw Error("checkpoint metadata must be single-line and keys space-free");
        header << "meta " << k << " " << v << "\n";
    }
    header << "tensors " << params.size() << "\n";
    for (const auto& p : params) header << "tensor " << p.name << " " << detail::shape_field(p.tensor.shape()) << "\n";
    header << "end\n";

    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write checkpoint " + path.string());
    const std::string h = header.str();
    out.write(h.data(), static_cast<std::streamsize>(h.size()));
    for (const auto& p : params)
        for (double v : p.tensor.data()) {
            const auto bits = detail::to_little_endian(std::bit_cast<std::uint64_t>(v));
            out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
        }
    if (!out) throw Error("short write on checkpoint " + path.string());
}

struct CheckpointHeader {
    std::string kind;
    std::string config;
    Meta meta;
    std::vector<std::pair<std::string, std::string>> tensors;  // name, shape
    std::size_t payload_offset = 0;
};

inline CheckpointHeader read_checkpoint_header(std::istream& in) {
    CheckpointHeader h;
    std::string line;
    std::size_t offset = 0;
    auto next = [&](const char* what) {
        if (!std::getline(in, line)) throw ParseError(std::string("checkpoint truncated before ") + what, offset);
        offset += line.size() + 1;
    };
    next("magic");
    if (line != kCheckpointMagic) throw ParseError("not a weights file (bad magic)", 0);
    next("version");
    if (line != "version " + std::to_string(kCheckpointVersion)) throw ParseError("unsupported checkpoint " + line, offset - line.size() - 1);
    next("kind");
    if (line.rfind("kind ", 0) != 0) throw ParseError("expected kind line", offset - line.size() - 1);
    h.kind = line.substr(5);
    next("config");
    if (line.rfind("config ", 0) != 0) throw ParseError("expected config line", offset - line.size() - 1);
    h.config = line.substr(7);
    for (;;) {
        next("tensor table");
        if (line.rfind("meta ", 0) == 0) {
            const auto sp = line.find(' ', 5);
            h.meta[line.substr(5, sp - 5)] = sp == std::string::npos ? "" : line.substr(sp + 1);
            continue;
        }
        break;
    }
    if (line.rfind("tensors ", 0) != 0) throw ParseError("expected tensors line", offset - line.size() - 1);
    const std::size_t n = std::stoul(line.substr(8));
    for (std::size_t i = 0; i < n; ++i) {
        next("tensor entry");
        std::istringstream ls(line);
        std::string tag, name, shape;
        if (!(ls >> tag >> name >> shape) || tag != "tensor") throw ParseError("malformed tensor entry", offset - line.size() - 1);
        h.tensors.emplace_back(name, shape);
    }
    next("end");
    if (line != "end") throw ParseError("expected end of header", offset - line.size() - 1);
    h.payload_offset = offset;
    return h;
}

/// Loads values into `params` after checking kind, config echo and the tensor table.
inline Meta load_checkpoint(const std::filesystem::path& path, const std::string& kind, const std::string& config_echo,
                            const ParamList& params) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open checkpoint " + path.string());
    const auto h = read_checkpoint_header(in);
    if (h.kind != kind) throw ConfigError(path.string() + ": checkpoint holds a '" + h.kind + "' model, expected '" + kind + "'");
    if (h.config != config_echo)
        throw ConfigError(path.string() + ": checkpoint config does not match\n  file:   " + h.config + "\n  expect: " + config_echo);
    if (h.tensors.size() != params.size()) throw ConfigError(path.string() + ": tensor count differs from the model");
    for (std::size_t i = 0; i < params.size(); ++i)
        if (h.tensors[i].first != params[i].name || h.tensors[i].second != detail::shape_field(params[i].tensor.shape()))
            throw ConfigError(path.string() + ": tensor " + std::to_string(i) + " is " + h.tensors[i].first + " " +
                              h.tensors[i].second + ", model has " + params[i].name + " " +
                              detail::shape_field(params[i].tensor.shape()));
    std::size_t offset = h.payload_offset;
    for (const auto& p : params) {
        Tensor t = p.tensor;
        for (double& v : t.data()) {
            std::uint64_t bits = 0;
            if (!in.read(reinterpret_cast<char*>(&bits), sizeof bits)) throw ParseError("checkpoint payload truncated", offset);
            v = std::bit_cast<double>(detail::to_little_endian(bits));
            offset += sizeof bits;
        }
    }
    if (in.peek() != std::char_traits<char>::eof()) throw ParseError("trailing bytes after checkpoint payload", offset);
    return h.meta;
}

}  // namespace sdfn
