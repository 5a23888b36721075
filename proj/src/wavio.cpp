// Copyright 2026 The advc Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "advc/wavio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "advc/common.hpp"

namespace advc {

namespace {

uint32_t read_u32(const unsigned char* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

uint16_t read_u16(const unsigned char* p) {
  return static_cast<uint16_t>(p[0] | (p[1] << 8));
}

void put_u32(std::string& s, uint32_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>((v >> 8) & 0xff));
  s.push_back(static_cast<char>((v >> 16) & 0xff));
  s.push_back(static_cast<char>((v >> 24) & 0xff));
}

void put_u16(std::string& s, uint16_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>((v >> 8) & 0xff));
}

}  // namespace

WavData read_wav(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open wav file: " + path);
  std::vector<unsigned char> raw((std::istreambuf_iterator<char>(f)),
                                 std::istreambuf_iterator<char>());
  if (raw.size() < 44 || std::memcmp(raw.data(), "RIFF", 4) != 0 ||
      std::memcmp(raw.data() + 8, "WAVE", 4) != 0)
    throw DataError("not a RIFF/WAVE file: " + path);

  WavData out;
  int bits = 0, channels = 0, format = 0;
  size_t pos = 12;
  const unsigned char* data_ptr = nullptr;
  size_t data_len = 0;
  while (pos + 8 <= raw.size()) {
    uint32_t chunk_len = read_u32(raw.data() + pos + 4);
    const unsigned char* body = raw.data() + pos + 8;
    if (pos + 8 + chunk_len > raw.size())
      throw DataError("truncated wav chunk in " + path);
    if (std::memcmp(raw.data() + pos, "fmt ", 4) == 0) {
      if (chunk_len < 16) throw DataError("short fmt chunk in " + path);
      format = read_u16(body);
      channels = read_u16(body + 2);
      out.sample_rate = static_cast<int>(read_u32(body + 4));
      bits = read_u16(body + 14);
    } else if (std::memcmp(raw.data() + pos, "data", 4) == 0) {
      data_ptr = body;
      data_len = chunk_len;
    }
    pos += 8 + chunk_len + (chunk_len & 1);  // chunks are word-aligned
  }
  if (format != 1) throw DataError("wav is not integer PCM: " + path);
  if (bits != 16) throw DataError("wav is not 16-bit: " + path);
  if (channels != 1) throw DataError("wav is not mono: " + path);
  if (!data_ptr) throw DataError("wav has no data chunk: " + path);

  size_t n = data_len / 2;
  out.samples.resize(n);
  for (size_t i = 0; i < n; ++i) {
    int16_t s = static_cast<int16_t>(read_u16(data_ptr + 2 * i));
    out.samples[i] = static_cast<double>(s) / 32768.0;
  }
  return out;
}

void write_wav(const std::string& path, const std::vector<double>& samples, int sample_rate) {
  std::string body;
  body.reserve(44 + samples.size() * 2);
  uint32_t data_len = static_cast<uint32_t>(samples.size() * 2);
  body += "RIFF";
  put_u32(body, 36 + data_len);
  body += "WAVEfmt ";
  put_u32(body, 16);
  put_u16(body, 1);  // PCM
  put_u16(body, 1);  // mono
  put_u32(body, static_cast<uint32_t>(sample_rate));
  put_u32(body, static_cast<uint32_t>(sample_rate) * 2);
  put_u16(body, 2);
  put_u16(body, 16);
  body += "data";
  put_u32(body, data_len);
  for (double x : samples) {
    double c = std::clamp(x, -1.0, 32767.0 / 32768.0);
    put_u16(body, static_cast<uint16_t>(static_cast<int16_t>(std::lround(c * 32768.0))));
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write wav file: " + path);
  f.write(body.data(), static_cast<std::streamsize>(body.size()));
  if (!f) throw DataError("short write to wav file: " + path);
}

}  // namespace advc
