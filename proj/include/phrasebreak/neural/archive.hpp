#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "json.hpp"
#include "phrasebreak/error.hpp"
#include "phrasebreak/neural/tensor.hpp"

namespace phrasebreak::neural {

// Tensor archive layout:
//   8 bytes  magic "PBCKPT01"
//   8 bytes  little-endian manifest length N
//   N bytes  UTF-8 JSON [{"name","dtype":"f32","shape":[...],"offset","nbytes"}, ...]
//   data     packed little-endian f32; offsets are relative to the start of this section

inline constexpr char kArchiveMagic[8] = {'P', 'B', 'C', 'K', 'P', 'T', '0', '1'};

struct NamedTensor {
  std::string name;
  Tensor<float> tensor;
};

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

inline void put_f32(std::string& out, float f) {
  std::uint32_t bits = 0;
  std::memcpy(&bits, &f, sizeof bits);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

inline float get_f32(const unsigned char* p) {
  std::uint32_t bits = 0;
  for (int i = 3; i >= 0; --i) bits = (bits << 8) | p[i];
  float f = 0.0f;
  std::memcpy(&f, &bits, sizeof f);
  return f;
}

}  // namespace detail

inline std::string encode_archive(const std::vector<NamedTensor>& tensors) {
  nlohmann::ordered_json manifest = nlohmann::ordered_json::array();
  std::string data;
  for (const auto& nt : tensors) {
    const std::uint64_t offset = data.size();
    for (float v : nt.tensor.values()) detail::put_f32(data, v);
    nlohmann::ordered_json entry;
    entry["name"] = nt.name;
    entry["dtype"] = "f32";
    entry["shape"] = nt.tensor.shape();
    entry["offset"] = offset;
    entry["nbytes"] = data.size() - offset;
    manifest.push_back(std::move(entry));
  }
  const std::string manifest_text = manifest.dump();
  std::string out(kArchiveMagic, sizeof kArchiveMagic);
  detail::put_u64(out, manifest_text.size());
  out += manifest_text;
  out += data;
  return out;
}

inline std::vector<NamedTensor> decode_archive(const std::string& bytes) {
  const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kArchiveMagic, 8) != 0) {
    fail(ErrorKind::bad_magic, "not a tensor archive (bad magic)");
  }
  if (bytes.size() < 16) fail(ErrorKind::truncated, "tensor archive truncated in header");
  const std::uint64_t manifest_len = detail::get_u64(raw + 8);
  if (manifest_len > bytes.size() - 16) fail(ErrorKind::truncated, "tensor archive truncated in manifest");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.substr(16, manifest_len));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::parse, std::string("tensor archive manifest: ") + e.what());
  }
  if (!manifest.is_array()) fail(ErrorKind::parse, "tensor archive manifest is not an array");
  const std::size_t data_start = 16 + manifest_len;
  const std::size_t data_size = bytes.size() - data_start;

  std::vector<NamedTensor> out;
  for (const auto& entry : manifest) {
    NamedTensor nt;
    Shape shape;
    std::uint64_t offset = 0, nbytes = 0;
    try {
      nt.name = entry.at("name").get<std::string>();
      if (entry.at("dtype").get<std::string>() != "f32") {
        fail(ErrorKind::parse, "tensor '" + nt.name + "' has unsupported dtype");
      }
      shape = entry.at("shape").get<Shape>();
      offset = entry.at("offset").get<std::uint64_t>();
      nbytes = entry.at("nbytes").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::parse, std::string("tensor archive manifest entry: ") + e.what());
    }
    if (nbytes != element_count(shape) * 4) {
      fail(ErrorKind::shape_mismatch, "tensor '" + nt.name + "': shape " + shape_string(shape) + " disagrees with " +
                                          std::to_string(nbytes) + " bytes");
    }
    if (offset > data_size || nbytes > data_size - offset) {
      fail(ErrorKind::truncated, "tensor '" + nt.name + "' extends past end of archive");
    }
    nt.tensor = Tensor<float>(shape);
    const unsigned char* p = raw + data_start + offset;
    for (std::size_t i = 0; i < nt.tensor.size(); ++i) nt.tensor[i] = detail::get_f32(p + 4 * i);
    out.push_back(std::move(nt));
  }
  return out;
}

inline void write_archive(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  const std::string bytes = encode_archive(tensors);
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::io, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::io, "write failed for " + path.string());
}

inline std::vector<NamedTensor> read_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot read " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_archive(bytes);
}

}  // namespace phrasebreak::neural
