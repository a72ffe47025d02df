#pragma once

#include <charconv>
#include <cstdint>
#include <string>
#include <string_view>

namespace merlin {

inline constexpr const char* kVersion = "0.1.0";

// Shortest decimal string that parses back to the exact same value.
std::string format_float(float v);
std::string format_double(double v);

float parse_float(std::string_view s, const char* what);
double parse_double(std::string_view s, const char* what);
int64_t parse_int(std::string_view s, const char* what);

// Line-oriented text file writer; writes gzip-compressed output when the path
// ends in ".gz".
class TextWriter {
 public:
  explicit TextWriter(const std::string& path);
  ~TextWriter();
  TextWriter(const TextWriter&) = delete;
  TextWriter& operator=(const TextWriter&) = delete;

  void write(std::string_view s);
  void write_line(std::string_view s);  // appends '\n'
  void close();

 private:
  struct Impl;
  Impl* impl_;
};

// Line-oriented reader with uncompressed byte-offset tracking for error
// reporting; reads gzip input when the path ends in ".gz".
class TextReader {
 public:
  explicit TextReader(const std::string& path);
  ~TextReader();
  TextReader(const TextReader&) = delete;
  TextReader& operator=(const TextReader&) = delete;

  // Returns false at EOF. The line excludes the trailing newline.
  bool next_line(std::string& line);
  // 1-based number of the most recently returned line.
  int64_t line_number() const;
  // Byte offset of the start of the most recently returned line.
  int64_t line_offset() const;
  // Offset just past everything consumed so far.
  int64_t offset() const;
  // Sticky: set once the file ends in the middle of a line.
  bool truncated_last_line() const;

 private:
  struct Impl;
  Impl* impl_;
};

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, std::string_view content);

}  // namespace merlin
