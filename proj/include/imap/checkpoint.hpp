#ifndef IMAP_CHECKPOINT_HPP
#define IMAP_CHECKPOINT_HPP

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "imap/nn.hpp"

namespace imap {

// Layout (all integers and floats little-endian):
//   "IMAPCKPT" | u32 version | u32 block_count |
//   per block: u32 name_len | name bytes | u32 segment_count | (u64 rows, u64 cols) per segment |
//              u64 value_count | value_count x f64
inline constexpr std::string_view checkpoint_magic = "IMAPCKPT";
inline constexpr std::uint32_t checkpoint_version = 1;

struct NamedBlock {
    std::string name;
    ParameterBlock block;
};

namespace detail {

template <typename UInt>
void put_le(std::string& out, UInt value)
{
    for(std::size_t k = 0; k < sizeof(UInt); ++k) {
        out.push_back(static_cast<char>((value >> (8 * k)) & 0xFFu));
    }
}

class ByteReader {
  public:
    explicit ByteReader(std::string_view data) : data_(data) {}

    template <typename UInt>
    UInt get()
    {
        need(sizeof(UInt));
        UInt value = 0;
        for(std::size_t k = 0; k < sizeof(UInt); ++k) {
            value |= static_cast<UInt>(static_cast<unsigned char>(data_[pos_ + k])) << (8 * k);
        }
        pos_ += sizeof(UInt);
        return value;
    }

    std::string_view bytes(std::size_t n)
    {
        need(n);
        auto view = data_.substr(pos_, n);
        pos_ += n;
        return view;
    }

    [[nodiscard]] bool exhausted() const noexcept { return pos_ == data_.size(); }
    [[nodiscard]] std::size_t remaining() const noexcept { return data_.size() - pos_; }

  private:
    void need(std::size_t n) const
    {
        if(data_.size() - pos_ < n) {
            throw CheckpointError("checkpoint truncated at byte " + std::to_string(pos_));
        }
    }

    std::string_view data_;
    std::size_t pos_ = 0;
};

}  // namespace detail

[[nodiscard]] inline std::string encode_checkpoint(const std::vector<NamedBlock>& blocks)
{
    std::string out(checkpoint_magic);
    detail::put_le<std::uint32_t>(out, checkpoint_version);
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(blocks.size()));
    for(const auto& [name, block] : blocks) {
        if(!block.consistent()) {
            throw CheckpointError("block '" + name + "' has inconsistent shape metadata");
        }
        detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(block.shapes.size()));
        for(const auto& s : block.shapes) {
            detail::put_le<std::uint64_t>(out, s.rows);
            detail::put_le<std::uint64_t>(out, s.cols);
        }
        detail::put_le<std::uint64_t>(out, block.values.size());
        for(double v : block.values) {
            detail::put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
        }
    }
    return out;
}

[[nodiscard]] inline std::vector<NamedBlock> decode_checkpoint(std::string_view bytes)
{
    detail::ByteReader in(bytes);
    if(bytes.size() < checkpoint_magic.size() || in.bytes(checkpoint_magic.size()) != checkpoint_magic) {
        throw CheckpointError("not a checkpoint: magic string mismatch");
    }
    const auto version = in.get<std::uint32_t>();
    if(version != checkpoint_version) {
        throw CheckpointError(
            "unsupported checkpoint version " + std::to_string(version) + " (this build reads version "
            + std::to_string(checkpoint_version) + ")");
    }
    const auto count = in.get<std::uint32_t>();
    std::vector<NamedBlock> blocks;
    blocks.reserve(count);
    for(std::uint32_t b = 0; b < count; ++b) {
        NamedBlock nb;
        const auto name_len = in.get<std::uint32_t>();
        nb.name = std::string(in.bytes(name_len));
        const auto n_segments = in.get<std::uint32_t>();
        if(n_segments > in.remaining() / 16) {
            throw CheckpointError("checkpoint truncated in block '" + nb.name + "'");
        }
        for(std::uint32_t s = 0; s < n_segments; ++s) {
            SegmentShape shape;
            shape.rows = in.get<std::uint64_t>();
            shape.cols = in.get<std::uint64_t>();
            nb.block.shapes.push_back(shape);
        }
        const auto n_values = in.get<std::uint64_t>();
        if(n_values > in.remaining() / 8) {
            throw CheckpointError("checkpoint truncated in block '" + nb.name + "'");
        }
        nb.block.values.resize(n_values);
        for(auto& v : nb.block.values) {
            v = std::bit_cast<double>(in.get<std::uint64_t>());
        }
        if(!nb.block.consistent()) {
            throw CheckpointError("block '" + nb.name + "' has inconsistent shape metadata");
        }
        blocks.push_back(std::move(nb));
    }
    if(!in.exhausted()) {
        throw CheckpointError("trailing bytes after the last checkpoint block");
    }
    return blocks;
}

inline void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedBlock>& blocks)
{
    const std::string bytes = encode_checkpoint(blocks);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if(!out) {
        throw CheckpointError("cannot open " + path.string() + " for writing");
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if(!out) {
        throw CheckpointError("failed writing " + path.string());
    }
}

[[nodiscard]] inline std::vector<NamedBlock> load_checkpoint(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if(!in) {
        throw CheckpointError("cannot open " + path.string());
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return decode_checkpoint(buffer.str());
}

/// Finds a block by name; throws CheckpointError when absent.
[[nodiscard]] inline const ParameterBlock& find_block(const std::vector<NamedBlock>& blocks, std::string_view name)
{
    for(const auto& b : blocks) {
        if(b.name == name) {
            return b.block;
        }
    }
    throw CheckpointError("checkpoint has no block named '" + std::string(name) + "'");
}

}  // namespace imap

#endif  // IMAP_CHECKPOINT_HPP
