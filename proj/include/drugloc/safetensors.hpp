// Copyright 2026 The drugloc Authors
// SPDX-License-Identifier: Apache-2.0

// Named-tensor container in the safetensors layout:
//   [u64 little-endian header length N][N bytes JSON header][raw data]
// The header maps tensor name -> {"dtype", "shape", "data_offsets"} with
// offsets relative to the start of the data section. An optional
// "__metadata__" entry carries string key/value pairs.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "drugloc/error.hpp"

namespace drugloc::safetensors {

struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<float> data;

  std::size_t numel() const {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
  }
};

using TensorMap = std::map<std::string, Tensor>;

namespace detail {

static_assert(std::endian::native == std::endian::little,
              "tensor I/O assumes a little-endian host");

inline float bf16_to_f32(std::uint16_t v) {
  std::uint32_t bits = static_cast<std::uint32_t>(v) << 16;
  float f;
  std::memcpy(&f, &bits, sizeof f);
  return f;
}

inline float f16_to_f32(std::uint16_t h) {
  const std::uint32_t sign = (h >> 15) & 1u;
  const std::uint32_t exp = (h >> 10) & 0x1fu;
  const std::uint32_t mant = h & 0x3ffu;
  float v;
  if (exp == 0) {
    v = std::ldexp(static_cast<float>(mant), -24);
  } else if (exp == 31) {
    v = mant ? std::numeric_limits<float>::quiet_NaN() : std::numeric_limits<float>::infinity();
  } else {
    v = std::ldexp(static_cast<float>(mant | 0x400u), static_cast<int>(exp) - 25);
  }
  return sign ? -v : v;
}

inline std::size_t dtype_size(const std::string& dtype) {
  if (dtype == "F32") return 4;
  if (dtype == "BF16" || dtype == "F16") return 2;
  return 0;
}

}  // namespace detail

/// Reads every tensor in `path`, converting F32/BF16/F16 payloads to float.
inline TensorMap read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::kMissingFile, "cannot open tensor file " + path.string());
  in.seekg(0, std::ios::end);
  const auto file_size = static_cast<std::uint64_t>(in.tellg());
  in.seekg(0);
  require(file_size >= 8, ErrorKind::kModelLoad, path.string() + ": truncated header length");

  std::uint64_t header_len = 0;
  in.read(reinterpret_cast<char*>(&header_len), 8);
  require(header_len <= file_size - 8, ErrorKind::kModelLoad,
          path.string() + ": header length exceeds file size");
  std::string header_text(header_len, '\0');
  in.read(header_text.data(), static_cast<std::streamsize>(header_len));

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kModelLoad, path.string() + ": invalid header JSON: " + e.what());
  }
  require(header.is_object(), ErrorKind::kModelLoad, path.string() + ": header is not an object");

  const std::uint64_t data_start = 8 + header_len;
  const std::uint64_t data_len = file_size - data_start;
  TensorMap out;
  for (const auto& [name, info] : header.items()) {
    if (name == "__metadata__") continue;
    try {
      const auto dtype = info.at("dtype").get<std::string>();
      const auto shape = info.at("shape").get<std::vector<std::size_t>>();
      const auto offsets = info.at("data_offsets").get<std::vector<std::uint64_t>>();
      const std::size_t elem = detail::dtype_size(dtype);
      require(elem != 0, ErrorKind::kModelLoad, "tensor " + name + ": unsupported dtype " + dtype);
      require(offsets.size() == 2 && offsets[0] <= offsets[1] && offsets[1] <= data_len,
              ErrorKind::kModelLoad, "tensor " + name + ": data_offsets out of range");
      Tensor t;
      t.shape = shape;
      const std::size_t n = t.numel();
      require(offsets[1] - offsets[0] == n * elem, ErrorKind::kModelLoad,
              "tensor " + name + ": byte length does not match shape");
      std::vector<char> raw(n * elem);
      in.seekg(static_cast<std::streamoff>(data_start + offsets[0]));
      in.read(raw.data(), static_cast<std::streamsize>(raw.size()));
      require(static_cast<bool>(in), ErrorKind::kModelLoad, "tensor " + name + ": short read");
      t.data.resize(n);
      if (dtype == "F32") {
        std::memcpy(t.data.data(), raw.data(), raw.size());
      } else {
        for (std::size_t i = 0; i < n; ++i) {
          std::uint16_t h;
          std::memcpy(&h, raw.data() + 2 * i, 2);
          t.data[i] = dtype == "BF16" ? detail::bf16_to_f32(h) : detail::f16_to_f32(h);
        }
      }
      out.emplace(name, std::move(t));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::kModelLoad, "tensor " + name + ": malformed header entry: " + e.what());
    }
  }
  return out;
}

/// Writes tensors as F32 in name order, so identical maps give identical bytes.
inline void write_file(const std::filesystem::path& path, const TensorMap& tensors,
                       const std::map<std::string, std::string>& metadata = {}) {
  nlohmann::json header = nlohmann::json::object();
  if (!metadata.empty()) header["__metadata__"] = metadata;
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    require(t.data.size() == t.numel(), ErrorKind::kInvalidArgument,
            "tensor " + name + ": data size does not match shape");
    const std::uint64_t bytes = t.data.size() * sizeof(float);
    header[name] = {{"dtype", "F32"}, {"shape", t.shape}, {"data_offsets", {offset, offset + bytes}}};
    offset += bytes;
  }
  std::string text = header.dump();
  // Pad with spaces so the data section starts 8-byte aligned.
  while ((8 + text.size()) % 8 != 0) text.push_back(' ');

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::kMissingFile, "cannot write " + path.string());
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), 8);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, t] : tensors) {
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size() * sizeof(float)));
  }
  require(static_cast<bool>(out), ErrorKind::kMissingFile, "write failed for " + path.string());
}

}  // namespace drugloc::safetensors
