#include "jse/logio.hpp"

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <limits>

#include "jse/errors.hpp"

namespace jse {

namespace {

constexpr const char* kHeader = "# jse-log v1: kind,t_us,index,values";

LogParseError malformed(const std::string& path, long line,
                        const std::string& what) {
  return LogParseError(LogParseError::Kind::MalformedLine,
                       static_cast<std::uint64_t>(line),
                       path + ":" + std::to_string(line) + ": " + what);
}

bool parse_kind(const std::string& token, RecordKind& out) {
  if (token == "imu") out = RecordKind::imu;
  else if (token == "joint_pos") out = RecordKind::joint_pos;
  else if (token == "truth") out = RecordKind::truth;
  else if (token == "estimate") out = RecordKind::estimate;
  else return false;
  return true;
}

}  // namespace

int record_value_count(RecordKind kind) {
  switch (kind) {
    case RecordKind::imu:
      return 6;
    case RecordKind::joint_pos:
      return 1;
    case RecordKind::truth:
    case RecordKind::estimate:
      return 3;
  }
  return 0;
}

const char* record_kind_name(RecordKind kind) {
  switch (kind) {
    case RecordKind::imu:
      return "imu";
    case RecordKind::joint_pos:
      return "joint_pos";
    case RecordKind::truth:
      return "truth";
    case RecordKind::estimate:
      return "estimate";
  }
  return "unknown";
}

std::int64_t LogRecord::to_micros(double seconds) {
  return std::llround(seconds * 1e6);
}

// ---------------------------------------------------------------------------
// Reader
// ---------------------------------------------------------------------------

LogReader::LogReader(const std::string& path) : in_(path), path_(path) {
  if (!in_.is_open())
    throw ConfigError("cannot open log file " + path + ": " +
                      std::strerror(errno));
  std::string header;
  if (!std::getline(in_, header))
    throw LogParseError(LogParseError::Kind::FormatVersionMismatch, 1,
                        path + ": empty file, expected header \"" +
                            std::string(kHeader) + "\"");
  if (!header.empty() && header.back() == '\r') header.pop_back();
  if (header != kHeader)
    throw LogParseError(LogParseError::Kind::FormatVersionMismatch, 1,
                        path + ": unsupported header \"" + header +
                            "\", expected \"" + std::string(kHeader) + "\"");
}

std::optional<LogRecord> LogReader::next() {
  std::string raw;
  while (std::getline(in_, raw)) {
    ++line_;
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();
    if (raw.empty()) continue;

    // Split on commas in place.
    std::vector<std::string> tokens;
    std::size_t begin = 0;
    while (true) {
      const std::size_t comma = raw.find(',', begin);
      if (comma == std::string::npos) {
        tokens.push_back(raw.substr(begin));
        break;
      }
      tokens.push_back(raw.substr(begin, comma - begin));
      begin = comma + 1;
    }
    if (tokens.size() < 3) throw malformed(path_, line_, "fewer than 3 fields");

    LogRecord rec;
    if (!parse_kind(tokens[0], rec.kind))
      throw malformed(path_, line_, "unknown record kind \"" + tokens[0] + "\"");

    errno = 0;
    char* end = nullptr;
    const long long us = std::strtoll(tokens[1].c_str(), &end, 10);
    if (errno != 0 || end == tokens[1].c_str() || *end != '\0')
      throw malformed(path_, line_, "bad timestamp \"" + tokens[1] + "\"");
    rec.t_us = us;

    errno = 0;
    const long idx = std::strtol(tokens[2].c_str(), &end, 10);
    if (errno != 0 || end == tokens[2].c_str() || *end != '\0' || idx < 0 ||
        idx > std::numeric_limits<int>::max())
      throw malformed(path_, line_, "bad index \"" + tokens[2] + "\"");
    rec.index = static_cast<int>(idx);

    const int want = record_value_count(rec.kind);
    if (static_cast<int>(tokens.size()) - 3 != want)
      throw malformed(path_, line_,
                      std::string(record_kind_name(rec.kind)) + " record needs " +
                          std::to_string(want) + " values, got " +
                          std::to_string(tokens.size() - 3));
    rec.values.resize(static_cast<std::size_t>(want));
    for (int i = 0; i < want; ++i) {
      const std::string& tok = tokens[static_cast<std::size_t>(i) + 3];
      errno = 0;
      const double v = std::strtod(tok.c_str(), &end);
      if (errno == ERANGE || end == tok.c_str() || *end != '\0' ||
          !std::isfinite(v))
        throw malformed(path_, line_, "bad value \"" + tok + "\"");
      rec.values[static_cast<std::size_t>(i)] = v;
    }

    if (saw_record_ && rec.t_us < prev_us_)
      throw LogParseError(
          LogParseError::Kind::NonMonotoneTimestamp,
          static_cast<std::uint64_t>(line_),
          path_ + ":" + std::to_string(line_) + ": timestamp " +
              std::to_string(rec.t_us) + "us precedes " +
              std::to_string(prev_us_) + "us");
    prev_us_ = rec.t_us;
    saw_record_ = true;
    return rec;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Writer
// ---------------------------------------------------------------------------

LogWriter::LogWriter(const std::string& path) : out_(path), path_(path) {
  if (!out_.is_open())
    throw ConfigError("cannot open log file " + path + " for writing: " +
                      std::strerror(errno));
  out_ << kHeader << '\n';
}

void LogWriter::write(const LogRecord& record) {
  const int want = record_value_count(record.kind);
  if (static_cast<int>(record.values.size()) != want)
    throw ConfigError(std::string("log record of kind ") +
                      record_kind_name(record.kind) + " needs " +
                      std::to_string(want) + " values, got " +
                      std::to_string(record.values.size()));
  if (record.index < 0) throw ConfigError("log record index must be >= 0");
  if (saw_record_ && record.t_us < prev_us_)
    throw ConfigError("log records must carry non-decreasing timestamps");
  for (double v : record.values)
    if (!std::isfinite(v))
      throw ConfigError("log record values must be finite");

  char buf[48];
  std::string line = record_kind_name(record.kind);
  line += ',';
  std::snprintf(buf, sizeof(buf), "%lld", static_cast<long long>(record.t_us));
  line += buf;
  line += ',';
  std::snprintf(buf, sizeof(buf), "%d", record.index);
  line += buf;
  for (double v : record.values) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    line += ',';
    line += buf;
  }
  line += '\n';
  out_ << line;
  if (!out_)
    throw ConfigError("write failed on log file " + path_);
  prev_us_ = record.t_us;
  saw_record_ = true;
}

void LogWriter::close() {
  if (out_.is_open()) {
    out_.flush();
    out_.close();
  }
}

std::vector<LogRecord> read_log(const std::string& path) {
  LogReader reader(path);
  std::vector<LogRecord> records;
  while (auto rec = reader.next()) records.push_back(std::move(*rec));
  return records;
}

}  // namespace jse
