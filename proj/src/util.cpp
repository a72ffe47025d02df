#include "merlin/util.hpp"

#include <zlib.h>

#include <array>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

#include "merlin/errors.hpp"

namespace merlin {

std::string format_float(float v) {
  std::array<char, 48> buf;
  auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

std::string format_double(double v) {
  std::array<char, 48> buf;
  auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

float parse_float(std::string_view s, const char* what) {
  float v = 0.0f;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    throw DataError(std::string("malformed float for ") + what + ": '" + std::string(s) + "'");
  }
  return v;
}

double parse_double(std::string_view s, const char* what) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    throw DataError(std::string("malformed number for ") + what + ": '" + std::string(s) + "'");
  }
  return v;
}

int64_t parse_int(std::string_view s, const char* what) {
  int64_t v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    throw DataError(std::string("malformed integer for ") + what + ": '" + std::string(s) + "'");
  }
  return v;
}

namespace {
bool has_gz_suffix(const std::string& path) {
  return path.size() >= 3 && path.compare(path.size() - 3, 3, ".gz") == 0;
}
}  // namespace

struct TextWriter::Impl {
  std::string path;
  bool gz = false;
  gzFile gzf = nullptr;
  std::FILE* f = nullptr;
};

TextWriter::TextWriter(const std::string& path) : impl_(new Impl) {
  impl_->path = path;
  impl_->gz = has_gz_suffix(path);
  if (impl_->gz) {
    impl_->gzf = gzopen(path.c_str(), "wb");
    if (!impl_->gzf) throw DataError("cannot open for writing: " + path);
  } else {
    impl_->f = std::fopen(path.c_str(), "wb");
    if (!impl_->f) throw DataError("cannot open for writing: " + path);
  }
}

TextWriter::~TextWriter() {
  close();
  delete impl_;
}

void TextWriter::write(std::string_view s) {
  if (impl_->gz) {
    if (impl_->gzf && gzwrite(impl_->gzf, s.data(), static_cast<unsigned>(s.size())) !=
                          static_cast<int>(s.size())) {
      throw DataError("short write to " + impl_->path);
    }
  } else if (impl_->f) {
    if (std::fwrite(s.data(), 1, s.size(), impl_->f) != s.size()) {
      throw DataError("short write to " + impl_->path);
    }
  }
}

void TextWriter::write_line(std::string_view s) {
  write(s);
  write("\n");
}

void TextWriter::close() {
  if (impl_->gz && impl_->gzf) {
    gzclose(impl_->gzf);
    impl_->gzf = nullptr;
  }
  if (!impl_->gz && impl_->f) {
    std::fclose(impl_->f);
    impl_->f = nullptr;
  }
}

struct TextReader::Impl {
  std::string path;
  bool gz = false;
  gzFile gzf = nullptr;
  std::FILE* f = nullptr;
  int64_t consumed = 0;
  int64_t last_line_offset = 0;
  int64_t line_number = 0;
  bool truncated = false;
};

TextReader::TextReader(const std::string& path) : impl_(new Impl) {
  impl_->path = path;
  impl_->gz = has_gz_suffix(path);
  if (impl_->gz) {
    impl_->gzf = gzopen(path.c_str(), "rb");
    if (!impl_->gzf) throw DataError("cannot open: " + path);
  } else {
    impl_->f = std::fopen(path.c_str(), "rb");
    if (!impl_->f) throw DataError("cannot open: " + path);
  }
}

TextReader::~TextReader() {
  if (impl_->gz && impl_->gzf) gzclose(impl_->gzf);
  if (!impl_->gz && impl_->f) std::fclose(impl_->f);
  delete impl_;
}

bool TextReader::next_line(std::string& line) {
  line.clear();
  impl_->last_line_offset = impl_->consumed;
  int c;
  bool any = false;
  for (;;) {
    c = impl_->gz ? gzgetc(impl_->gzf) : std::fgetc(impl_->f);
    if (c < 0) {
      if (any) impl_->truncated = true;  // EOF before the newline
      if (any) ++impl_->line_number;
      return any;
    }
    ++impl_->consumed;
    if (c == '\n') {
      ++impl_->line_number;
      return true;
    }
    line.push_back(static_cast<char>(c));
    any = true;
  }
}

int64_t TextReader::line_number() const { return impl_->line_number; }
int64_t TextReader::line_offset() const { return impl_->last_line_offset; }
int64_t TextReader::offset() const { return impl_->consumed; }
bool TextReader::truncated_last_line() const { return impl_->truncated; }

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path);
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw DataError("short write to " + path);
}

}  // namespace merlin
