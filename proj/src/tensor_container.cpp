#include "layerlens/tensor_container.hpp"

#include "layerlens/errors.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace layerlens {

namespace {

using nlohmann::json;

std::uint64_t read_le_u64(const std::uint8_t *p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i)
    v = (v << 8) | p[i];
  return v;
}

void write_le_u64(std::uint64_t v, std::uint8_t *p) {
  for (int i = 0; i < 8; ++i) {
    p[i] = static_cast<std::uint8_t>(v & 0xff);
    v >>= 8;
  }
}

} // namespace

std::size_t dtype_size(dtype t) { return t == dtype::f32 ? 4 : 2; }

const char *dtype_name(dtype t) { return t == dtype::f32 ? "F32" : "F16"; }

dtype dtype_from_name(const std::string &name) {
  if (name == "F32")
    return dtype::f32;
  if (name == "F16")
    return dtype::f16;
  throw corrupt_container_error("unsupported dtype tag: " + name);
}

std::size_t tensor_record::numel() const {
  std::size_t n = 1;
  for (std::size_t d : shape)
    n *= d;
  return n;
}

tensor_container load_container(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw io_error("cannot open container file: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (bytes.size() < 8)
    throw corrupt_container_error("container shorter than its length field");
  const std::uint64_t header_len = read_le_u64(bytes.data());
  if (8 + header_len > bytes.size())
    throw corrupt_container_error("declared header length exceeds file size");

  json header;
  try {
    header = json::parse(bytes.begin() + 8, bytes.begin() + 8 + header_len);
  } catch (const json::exception &e) {
    throw corrupt_container_error(std::string("malformed header: ") + e.what());
  }
  if (!header.is_object())
    throw corrupt_container_error("header is not a map");

  const std::uint8_t *payload = bytes.data() + 8 + header_len;
  const std::size_t payload_size = bytes.size() - 8 - header_len;

  tensor_container out;
  std::size_t prev_end = 0;
  bool first = true;
  for (auto it = header.begin(); it != header.end(); ++it) {
    const std::string &name = it.key();
    if (name == "__metadata__") {
      if (!it.value().is_object())
        throw corrupt_container_error("__metadata__ is not a map");
      for (auto mit = it.value().begin(); mit != it.value().end(); ++mit) {
        if (!mit.value().is_string())
          throw corrupt_container_error("__metadata__ values must be strings");
        out.metadata[mit.key()] = mit.value().get<std::string>();
      }
      continue;
    }
    const json &entry = it.value();
    if (!entry.is_object() || !entry.contains("dtype") ||
        !entry.contains("shape") || !entry.contains("data_offsets"))
      throw corrupt_container_error("tensor entry missing fields: " + name);

    tensor_record rec;
    rec.name = name;
    std::vector<std::uint64_t> offsets;
    try {
      rec.type = dtype_from_name(entry.at("dtype").get<std::string>());
      rec.shape = entry.at("shape").get<std::vector<std::size_t>>();
      offsets = entry.at("data_offsets").get<std::vector<std::uint64_t>>();
    } catch (const json::exception &e) {
      throw corrupt_container_error("malformed tensor entry " + name + ": " +
                                    e.what());
    }
    if (offsets.size() != 2 || offsets[1] < offsets[0])
      throw corrupt_container_error("bad data_offsets for tensor: " + name);
    // nlohmann iterates keys in sorted order, which is also payload order
    // for canonical files; enforce ascending non-overlapping regions.
    if (!first && offsets[0] < prev_end)
      throw corrupt_container_error("overlapping tensor regions at: " + name);
    first = false;
    prev_end = offsets[1];
    if (offsets[1] > payload_size)
      throw corrupt_container_error("payload truncated for tensor: " + name);
    const std::size_t expect = rec.numel() * dtype_size(rec.type);
    if (offsets[1] - offsets[0] != expect)
      throw shape_error("tensor " + name + " declares " +
                        std::to_string(expect) + " bytes but stores " +
                        std::to_string(offsets[1] - offsets[0]));
    rec.data.assign(payload + offsets[0], payload + offsets[1]);
    out.tensors.emplace(name, std::move(rec));
  }
  return out;
}

void save_container(const tensor_container &c,
                    const std::filesystem::path &path) {
  json header = json::object();
  if (!c.metadata.empty()) {
    json meta = json::object();
    for (const auto &[k, v] : c.metadata)
      meta[k] = v;
    header["__metadata__"] = meta;
  }
  std::size_t offset = 0;
  for (const auto &[name, rec] : c.tensors) {
    json entry;
    entry["dtype"] = dtype_name(rec.type);
    entry["shape"] = rec.shape;
    entry["data_offsets"] = {offset, offset + rec.data.size()};
    header[name] = entry;
    offset += rec.data.size();
  }
  const std::string header_str = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw io_error("cannot open for writing: " + path.string());
  std::uint8_t len_bytes[8];
  write_le_u64(header_str.size(), len_bytes);
  out.write(reinterpret_cast<const char *>(len_bytes), 8);
  out.write(header_str.data(),
            static_cast<std::streamsize>(header_str.size()));
  for (const auto &[name, rec] : c.tensors)
    out.write(reinterpret_cast<const char *>(rec.data.data()),
              static_cast<std::streamsize>(rec.data.size()));
  if (!out)
    throw io_error("write failed: " + path.string());
}

float f16_to_f32(std::uint16_t bits) {
  const std::uint32_t sign = (bits >> 15) & 1;
  const std::uint32_t exp = (bits >> 10) & 0x1f;
  const std::uint32_t frac = bits & 0x3ff;
  std::uint32_t out;
  if (exp == 0) {
    if (frac == 0) {
      out = sign << 31;
    } else {
      // subnormal: normalize
      int e = -1;
      std::uint32_t f = frac;
      while ((f & 0x400) == 0) {
        f <<= 1;
        ++e;
      }
      out = (sign << 31) | static_cast<std::uint32_t>((127 - 15 - e) << 23) |
            ((f & 0x3ff) << 13);
    }
  } else if (exp == 0x1f) {
    out = (sign << 31) | 0x7f800000u | (frac << 13);
  } else {
    out = (sign << 31) | ((exp - 15 + 127) << 23) | (frac << 13);
  }
  return std::bit_cast<float>(out);
}

std::uint16_t f32_to_f16(float v) {
  const std::uint32_t bits = std::bit_cast<std::uint32_t>(v);
  const std::uint32_t sign = (bits >> 16) & 0x8000;
  const std::int32_t exp = static_cast<std::int32_t>((bits >> 23) & 0xff) - 127;
  std::uint32_t frac = bits & 0x7fffff;
  if (exp == 128) // inf / nan
    return static_cast<std::uint16_t>(sign | 0x7c00 | (frac ? 0x200 : 0));
  if (exp > 15) // overflow -> inf
    return static_cast<std::uint16_t>(sign | 0x7c00);
  if (exp >= -14) {
    // round to nearest even on the 13 dropped bits
    std::uint32_t half = (static_cast<std::uint32_t>(exp + 15) << 10) |
                         (frac >> 13);
    const std::uint32_t rem = frac & 0x1fff;
    if (rem > 0x1000 || (rem == 0x1000 && (half & 1)))
      ++half;
    return static_cast<std::uint16_t>(sign | half);
  }
  if (exp >= -24) {
    // subnormal
    frac |= 0x800000;
    const int shift = -exp - 14 + 13;
    std::uint32_t half = frac >> (shift + 1);
    const std::uint32_t rem = frac & ((1u << (shift + 1)) - 1);
    if (rem > (1u << shift) || (rem == (1u << shift) && (half & 1)))
      ++half;
    return static_cast<std::uint16_t>(sign | half);
  }
  return static_cast<std::uint16_t>(sign); // underflow -> zero
}

std::vector<float> record_to_f32(const tensor_record &rec) {
  std::vector<float> out(rec.numel());
  if (rec.type == dtype::f32) {
    std::memcpy(out.data(), rec.data.data(), rec.data.size());
  } else {
    const std::uint8_t *p = rec.data.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
      std::uint16_t h;
      std::memcpy(&h, p + 2 * i, 2);
      out[i] = f16_to_f32(h);
    }
  }
  return out;
}

tensor_record make_f32_record(std::string name, std::vector<std::size_t> shape,
                              const std::vector<float> &values) {
  tensor_record rec;
  rec.name = std::move(name);
  rec.shape = std::move(shape);
  rec.type = dtype::f32;
  rec.data.resize(values.size() * 4);
  std::memcpy(rec.data.data(), values.data(), rec.data.size());
  if (rec.numel() != values.size())
    throw shape_error("make_f32_record: shape does not match value count");
  return rec;
}

tensor_record make_f16_record(std::string name, std::vector<std::size_t> shape,
                              const std::vector<float> &values) {
  tensor_record rec;
  rec.name = std::move(name);
  rec.shape = std::move(shape);
  rec.type = dtype::f16;
  rec.data.resize(values.size() * 2);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::uint16_t h = f32_to_f16(values[i]);
    std::memcpy(rec.data.data() + 2 * i, &h, 2);
  }
  if (rec.numel() != values.size())
    throw shape_error("make_f16_record: shape does not match value count");
  return rec;
}

} // namespace layerlens
