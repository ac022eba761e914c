#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace layerlens {

enum class dtype { f32, f16 };

std::size_t dtype_size(dtype t);
const char *dtype_name(dtype t);
dtype dtype_from_name(const std::string &name);

struct tensor_record {
  std::string name;
  dtype type = dtype::f32;
  std::vector<std::size_t> shape;
  std::vector<std::uint8_t> data;

  std::size_t numel() const;
  bool operator==(const tensor_record &o) const = default;
};

// A parsed single-file tensor dictionary: 8-byte little-endian header
// length, UTF-8 JSON map {name -> {dtype, shape, data_offsets}}, then the
// payload. "__metadata__" carries flat string key/values (model config,
// tokenizer assets). Saves are canonical: names sorted lexicographically,
// payload packed in that order, so equal containers produce equal files.
struct tensor_container {
  std::map<std::string, tensor_record> tensors;
  std::map<std::string, std::string> metadata;

  bool operator==(const tensor_container &o) const = default;
};

tensor_container load_container(const std::filesystem::path &path);
void save_container(const tensor_container &c,
                    const std::filesystem::path &path);

float f16_to_f32(std::uint16_t bits);
std::uint16_t f32_to_f16(float v);

// Expand a record's payload to 32-bit floats (identity copy for f32).
std::vector<float> record_to_f32(const tensor_record &rec);
tensor_record make_f32_record(std::string name, std::vector<std::size_t> shape,
                              const std::vector<float> &values);
tensor_record make_f16_record(std::string name, std::vector<std::size_t> shape,
                              const std::vector<float> &values);

} // namespace layerlens
