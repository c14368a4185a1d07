#pragma once

// On-disk event and frame formats.
//
//  * CSV: header `t,x,y,p`, optionally preceded by `# width=W height=H`.
//    Polarity may be {1,-1} or {1,0}; 0 maps to -1.
//  * Binary (.evt): 16-byte header `EVT0`, u16 W, u16 H, u64 count, then
//    `count` packed little-endian records u64 t, u16 x, u16 y, i8 p.
//  * Frame PNG: 16-bit grayscale, pixel = 32768 + signed count, saturating.

#include <png.h>

#include <array>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "sgvpr/event_repr.hpp"

namespace sgvpr {

namespace fs = std::filesystem;

namespace detail {

inline void put_le(std::string& buf, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t get_le(const unsigned char* p, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

inline std::string read_file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(concat("cannot open ", path.string()));
  return std::string(std::istreambuf_iterator<char>(in), {});
}

inline void write_file_bytes(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError(concat("cannot write ", path.string()));
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError(concat("short write to ", path.string()));
}

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(trim(cur));
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// CSV

inline EventStream parse_event_csv(const std::string& text,
                                   std::optional<Resolution> resolution = std::nullopt) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  bool header_seen = false;
  std::vector<std::array<long long, 4>> rows;
  std::vector<std::size_t> row_lines;
  while (std::getline(in, line)) {
    ++lineno;
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line[0] == '#') {
      int w = 0, h = 0;
      if (std::sscanf(line.c_str(), "# width=%d height=%d", &w, &h) == 2) resolution = Resolution{w, h};
      continue;
    }
    if (!header_seen) {
      if (line != "t,x,y,p") throw DataError(detail::concat("line ", lineno, ": expected header t,x,y,p"));
      header_seen = true;
      continue;
    }
    const auto fields = detail::split_csv_line(line);
    if (fields.size() != 4) throw DataError(detail::concat("line ", lineno, ": expected 4 fields"));
    std::array<long long, 4> row{};
    for (int i = 0; i < 4; ++i) {
      try {
        std::size_t used = 0;
        row[i] = std::stoll(fields[i], &used);
        if (used != fields[i].size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw DataError(detail::concat("line ", lineno, ": bad integer '", fields[i], "'"));
      }
    }
    rows.push_back(row);
    row_lines.push_back(lineno);
  }
  if (!header_seen) throw DataError("event csv: missing header t,x,y,p");

  bool has_zero = false, has_minus = false;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const long long p = rows[i][3];
    if (p == 0) has_zero = true;
    else if (p == -1) has_minus = true;
    else if (p != 1) throw DataError(detail::concat("line ", row_lines[i], ": polarity ", p));
  }
  if (has_zero && has_minus) throw DataError("event csv mixes polarity encodings {1,0} and {1,-1}");

  EventStream s;
  int max_x = -1, max_y = -1;
  s.events.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (r[1] < 0 || r[1] > 0xffff || r[2] < 0 || r[2] > 0xffff)
      throw DataError(detail::concat("line ", row_lines[i], ": coordinate out of range"));
    Event e{r[0], static_cast<std::uint16_t>(r[1]), static_cast<std::uint16_t>(r[2]),
            static_cast<std::int8_t>(r[3] == 0 ? -1 : r[3])};
    max_x = std::max(max_x, int(e.x));
    max_y = std::max(max_y, int(e.y));
    s.events.push_back(e);
  }
  s.resolution = resolution ? *resolution : Resolution{max_x + 1, max_y + 1};
  if (s.events.empty() && !resolution) s.resolution = Resolution{1, 1};
  validate_stream(s);
  return s;
}

inline std::string format_event_csv(const EventStream& s) {
  std::ostringstream out;
  out << "# width=" << s.resolution.width << " height=" << s.resolution.height << "\n";
  out << "t,x,y,p\n";
  for (const Event& e : s.events) out << e.t << ',' << e.x << ',' << e.y << ',' << int(e.p) << '\n';
  return out.str();
}

// ---------------------------------------------------------------------------
// Binary

inline constexpr std::size_t kEvtHeaderBytes = 16;
inline constexpr std::size_t kEvtRecordBytes = 13;

inline std::string encode_event_binary(const EventStream& s) {
  if (s.resolution.width <= 0 || s.resolution.width > 0xffff || s.resolution.height <= 0 ||
      s.resolution.height > 0xffff)
    throw DataError("resolution not representable in EVT0 header");
  std::string buf = "EVT0";
  detail::put_le(buf, static_cast<std::uint64_t>(s.resolution.width), 2);
  detail::put_le(buf, static_cast<std::uint64_t>(s.resolution.height), 2);
  detail::put_le(buf, s.events.size(), 8);
  buf.reserve(kEvtHeaderBytes + kEvtRecordBytes * s.events.size());
  for (const Event& e : s.events) {
    detail::put_le(buf, static_cast<std::uint64_t>(e.t), 8);
    detail::put_le(buf, e.x, 2);
    detail::put_le(buf, e.y, 2);
    buf.push_back(static_cast<char>(e.p));
  }
  return buf;
}

inline EventStream decode_event_binary(const std::string& bytes) {
  if (bytes.size() < kEvtHeaderBytes || bytes.compare(0, 4, "EVT0") != 0)
    throw DataError("not an EVT0 event file");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  EventStream s;
  s.resolution.width = static_cast<int>(detail::get_le(p + 4, 2));
  s.resolution.height = static_cast<int>(detail::get_le(p + 6, 2));
  const std::uint64_t count = detail::get_le(p + 8, 8);
  if ((bytes.size() - kEvtHeaderBytes) / kEvtRecordBytes < count ||
      bytes.size() != kEvtHeaderBytes + count * kEvtRecordBytes)
    throw DataError(detail::concat("EVT0 payload size mismatch for ", count, " events"));
  s.events.resize(count);
  for (std::uint64_t k = 0; k < count; ++k) {
    const unsigned char* r = p + kEvtHeaderBytes + k * kEvtRecordBytes;
    Event& e = s.events[k];
    e.t = static_cast<std::int64_t>(detail::get_le(r, 8));
    e.x = static_cast<std::uint16_t>(detail::get_le(r + 8, 2));
    e.y = static_cast<std::uint16_t>(detail::get_le(r + 10, 2));
    e.p = static_cast<std::int8_t>(r[12]);
  }
  validate_stream(s);
  return s;
}

// ---------------------------------------------------------------------------
// Files

inline EventStream load_event_file(const fs::path& path,
                                   std::optional<Resolution> resolution = std::nullopt) {
  const auto ext = path.extension().string();
  const std::string bytes = detail::read_file_bytes(path);
  if (ext == ".csv") return parse_event_csv(bytes, resolution);
  if (ext == ".evt" || ext == ".bin") return decode_event_binary(bytes);
  throw DataError(detail::concat("unknown event file extension: ", path.string()));
}

inline void save_event_file(const fs::path& path, const EventStream& s) {
  const auto ext = path.extension().string();
  if (ext == ".csv") detail::write_file_bytes(path, format_event_csv(s));
  else if (ext == ".evt" || ext == ".bin") detail::write_file_bytes(path, encode_event_binary(s));
  else throw DataError(detail::concat("unknown event file extension: ", path.string()));
}

inline constexpr int kPngZero = 32768;

inline std::uint16_t encode_count(double v) {
  const double q = std::round(v) + kPngZero;
  return static_cast<std::uint16_t>(std::clamp(q, 0.0, 65535.0));
}

inline void save_frame_png(const fs::path& path, const EventFrame& frame) {
  const int w = frame.resolution.width, h = frame.resolution.height;
  std::vector<unsigned char> data(static_cast<std::size_t>(w) * h * 2);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::uint16_t v = encode_count(frame.values(y, x));
      auto* px = &data[(static_cast<std::size_t>(y) * w + x) * 2];
      px[0] = static_cast<unsigned char>(v >> 8);  // PNG is big-endian
      px[1] = static_cast<unsigned char>(v & 0xff);
    }
  std::vector<png_bytep> rows(h);
  for (int y = 0; y < h; ++y) rows[y] = &data[static_cast<std::size_t>(y) * w * 2];

  FILE* fp = std::fopen(path.string().c_str(), "wb");
  if (!fp) throw DataError(detail::concat("cannot write ", path.string()));
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  bool ok = png && info;
  if (ok && setjmp(png_jmpbuf(png)) == 0) {
    png_init_io(png, fp);
    png_set_IHDR(png, info, w, h, 16, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
  } else {
    ok = false;
  }
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
  if (!ok) throw DataError(detail::concat("png encode failed: ", path.string()));
}

inline EventFrame load_frame_png(const fs::path& path) {
  FILE* fp = std::fopen(path.string().c_str(), "rb");
  if (!fp) throw DataError(detail::concat("cannot open ", path.string()));
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  std::vector<unsigned char> data;
  std::vector<png_bytep> rows;
  png_uint_32 w = 0, h = 0;
  int depth = 0, color = 0;
  bool ok = png && info;
  if (ok && setjmp(png_jmpbuf(png)) == 0) {
    png_init_io(png, fp);
    png_read_info(png, info);
    png_get_IHDR(png, info, &w, &h, &depth, &color, nullptr, nullptr, nullptr);
    if (depth != 16 || color != PNG_COLOR_TYPE_GRAY) {
      ok = false;
    } else {
      data.resize(static_cast<std::size_t>(w) * h * 2);
      rows.resize(h);
      for (png_uint_32 y = 0; y < h; ++y) rows[y] = &data[static_cast<std::size_t>(y) * w * 2];
      png_read_image(png, rows.data());
      png_read_end(png, nullptr);
    }
  } else {
    ok = false;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  if (!ok) throw DataError(detail::concat("not a 16-bit grayscale PNG: ", path.string()));
  EventFrame frame{Resolution{static_cast<int>(w), static_cast<int>(h)}, Mat(h, w)};
  for (png_uint_32 y = 0; y < h; ++y)
    for (png_uint_32 x = 0; x < w; ++x) {
      const auto* px = &data[(static_cast<std::size_t>(y) * w + x) * 2];
      frame.values(y, x) = static_cast<double>((px[0] << 8) | px[1]) - kPngZero;
    }
  return frame;
}

// A frame reference is either a pre-rendered PNG or an event file whose
// whole stream is accumulated into one frame.
inline EventFrame load_frame_file(const fs::path& path) {
  if (path.extension() == ".png") return load_frame_png(path);
  return accumulate_frame(load_event_file(path));
}

}  // namespace sgvpr
