#ifndef SALAUDIT_SERIALIZE_HPP
#define SALAUDIT_SERIALIZE_HPP

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "salaudit/net.hpp"
#include "salaudit/tensor.hpp"

namespace salaudit {

using Json = nlohmann::ordered_json;

struct PgmImage {
  int h = 0;
  int w = 0;
  std::vector<uint8_t> pixels;
};

// Binary PGM (P5, maxval 255).
void pgm_write(const std::filesystem::path& path, int h, int w, std::span<const uint8_t> pixels);
PgmImage pgm_read(const std::filesystem::path& path);

// Min-max scaled 8-bit view of a 2-d float map (constant maps render mid-gray).
void map_pgm_write(const std::filesystem::path& path, const Tensor& map);

// Raw float map sidecar: 16-byte header (magic "SALF1" zero-padded to 8
// bytes, then H and W as u32 LE) followed by H*W float32 LE values.
void salf_write(const std::filesystem::path& path, const Tensor& map);
Tensor salf_read(const std::filesystem::path& path);

// Weight files: ASCII magic "SALW1\n" then one record per tensor in store
// order: name length (u32 LE), name bytes, rank (u32 LE), dims (u32 LE each),
// float32 LE payload. Loading preserves record order, so load followed by
// save reproduces the input byte for byte.
void weights_write(const std::filesystem::path& path, const WeightStore& store);
WeightStore weights_read(const std::filesystem::path& path);

void write_json_file(const std::filesystem::path& path, const Json& j);
Json read_json_file(const std::filesystem::path& path);

void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace salaudit

#endif  // SALAUDIT_SERIALIZE_HPP
