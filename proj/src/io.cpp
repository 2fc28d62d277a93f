// Copyright 2026 The echodnd Authors
// SPDX-License-Identifier: Apache-2.0

#include "echodnd/io.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "echodnd/config.hpp"
#include "echodnd/errors.hpp"

namespace echodnd {
namespace {

std::string record_name(const char* stem, int index) {
  char buffer[32];
  std::snprintf(buffer, sizeof(buffer), "%s_%04d.pgm", stem, index);
  return buffer;
}

void write_bytes(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path);
}

std::string read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

std::vector<std::uint8_t> decode_pgm(const std::string& path, int& height, int& width) {
  const std::string bytes = read_bytes(path);
  std::size_t pos = 0;
  auto next_token = [&]() -> std::string {
    for (;;) {
      while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
      if (pos < bytes.size() && bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
        continue;
      }
      break;
    }
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    return bytes.substr(start, pos - start);
  };
  auto number = [&](const char* what) {
    const std::string token = next_token();
    int value = 0;
    const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
    if (ec != std::errc() || ptr != token.data() + token.size() || value <= 0) {
      throw IoError(path + ": bad PGM " + what + " '" + token + "'");
    }
    return value;
  };
  if (next_token() != "P5") throw IoError(path + ": not a binary PGM (P5)");
  width = number("width");
  height = number("height");
  if (number("maxval") != 255) throw IoError(path + ": only maxval 255 is supported");
  ++pos;
  const auto count = static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
  if (bytes.size() - std::min(pos, bytes.size()) != count) throw IoError(path + ": truncated or oversized pixel data");
  return {bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end()};
}

void encode_pgm(const std::string& path, const Lattice& lattice, bool mask) {
  std::string bytes = "P5\n" + std::to_string(lattice.width()) + " " + std::to_string(lattice.height()) + "\n255\n";
  for (double v : lattice.values()) {
    if (mask) {
      bytes.push_back(static_cast<char>(v != 0.0 ? 255 : 0));
    } else {
      bytes.push_back(static_cast<char>(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
    }
  }
  write_bytes(path, bytes);
}

}  // namespace

void write_pgm(const std::string& path, const Lattice& image) { encode_pgm(path, image, false); }

Lattice read_pgm(const std::string& path) {
  int h = 0;
  int w = 0;
  const std::vector<std::uint8_t> pixels = decode_pgm(path, h, w);
  Lattice out(h, w);
  for (std::size_t i = 0; i < pixels.size(); ++i) out[i] = pixels[i] / 255.0;
  return out;
}

void write_mask_pgm(const std::string& path, const Lattice& mask) {
  require_binary(mask, "write_mask_pgm");
  encode_pgm(path, mask, true);
}

Lattice read_mask_pgm(const std::string& path) {
  int h = 0;
  int w = 0;
  const std::vector<std::uint8_t> pixels = decode_pgm(path, h, w);
  Lattice out(h, w);
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    if (pixels[i] != 0 && pixels[i] != 255) throw IoError(path + ": mask pixels must be 0 or 255");
    out[i] = pixels[i] == 255 ? 1.0 : 0.0;
  }
  return out;
}

void write_dataset(const std::string& dir, const DatasetInfo& info,
                   const std::vector<SampleRecord>& records) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir + ": " + ec.message());
  std::ostringstream meta;
  meta << "generator=ellipse\n"
       << "n=" << info.n << "\n"
       << "side=" << info.side << "\n"
       << "seed=" << info.seed << "\n"
       << "zero_noise=" << (info.options.zero_noise ? "true" : "false") << "\n"
       << "speckle=" << format_double(info.options.speckle) << "\n"
       << "additive=" << format_double(info.options.additive) << "\n"
       << "gradient=" << format_double(info.options.gradient) << "\n"
       << "background=" << format_double(info.options.background) << "\n"
       << "contrast=" << format_double(info.options.contrast) << "\n";
  for (std::size_t i = 0; i < records.size(); ++i) {
    const int index = static_cast<int>(i);
    const std::filesystem::path base(dir);
    write_pgm((base / record_name("image", index)).string(), records[i].image);
    write_mask_pgm((base / record_name("mask", index)).string(), records[i].mask);
    const SampleMeta& m = records[i].meta;
    const std::string key = "record." + std::to_string(index) + ".";
    meta << key << "center_y=" << format_double(m.center_y) << "\n"
         << key << "center_x=" << format_double(m.center_x) << "\n"
         << key << "axis_a=" << format_double(m.axis_a) << "\n"
         << key << "axis_b=" << format_double(m.axis_b) << "\n"
         << key << "rotation=" << format_double(m.rotation) << "\n"
         << key << "noise_seed=" << m.noise_seed << "\n";
  }
  write_bytes((std::filesystem::path(dir) / "metadata.txt").string(), meta.str());
}

std::vector<SampleRecord> read_dataset(const std::string& dir) {
  const std::string meta_path = (std::filesystem::path(dir) / "metadata.txt").string();
  const std::string text = read_bytes(meta_path);
  std::map<std::string, std::string> meta;
  std::istringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    meta[line.substr(0, eq)] = line.substr(eq + 1);
  }
  const auto it = meta.find("n");
  int n = 0;
  if (it == meta.end() || std::from_chars(it->second.data(), it->second.data() + it->second.size(), n).ec != std::errc() ||
      n < 1) {
    throw IoError(meta_path + ": missing or bad record count 'n'");
  }
  std::vector<SampleRecord> records;
  records.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const std::filesystem::path base(dir);
    SampleRecord r;
    r.image = read_pgm((base / record_name("image", i)).string());
    r.mask = read_mask_pgm((base / record_name("mask", i)).string());
    if (!r.image.same_shape(r.mask)) throw IoError(dir + ": image/mask size mismatch at record " + std::to_string(i));
    const std::string key = "record." + std::to_string(i) + ".";
    auto real = [&](const char* field) {
      const auto f = meta.find(key + field);
      double v = 0.0;
      if (f != meta.end()) std::from_chars(f->second.data(), f->second.data() + f->second.size(), v);
      return v;
    };
    r.meta.center_y = real("center_y");
    r.meta.center_x = real("center_x");
    r.meta.axis_a = real("axis_a");
    r.meta.axis_b = real("axis_b");
    r.meta.rotation = real("rotation");
    if (const auto f = meta.find(key + "noise_seed"); f != meta.end()) {
      std::from_chars(f->second.data(), f->second.data() + f->second.size(), r.meta.noise_seed);
    }
    records.push_back(std::move(r));
  }
  return records;
}

}  // namespace echodnd
