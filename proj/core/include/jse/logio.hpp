#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

namespace jse {

/// Record category carried by one log line. Each kind has a fixed payload
/// width (record_value_count) so files stay schema-checked line by line.
enum class RecordKind {
  imu,        ///< one inertial reading: gyro xyz then accel xyz (6 values)
  joint_pos,  ///< one measured joint coordinate (1 value)
  truth,      ///< one coordinate's true position, rate, acceleration (3 values)
  estimate    ///< one coordinate's estimated position, rate, acceleration (3)
};

/// Payload width for a kind.
int record_value_count(RecordKind kind);

/// Text tag used on disk ("imu", "joint_pos", ...).
const char* record_kind_name(RecordKind kind);

/// One log line. Timestamps are integer microseconds — the format's native
/// resolution — so they round-trip exactly; values round-trip via 17
/// significant digits.
struct LogRecord {
  RecordKind kind = RecordKind::imu;
  std::int64_t t_us = 0;
  /// Mount index for imu records, generalized-coordinate index otherwise.
  int index = 0;
  std::vector<double> values;

  double seconds() const { return static_cast<double>(t_us) * 1e-6; }
  static std::int64_t to_micros(double seconds);
};

/// Streaming reader: one record per next() call, constant memory. The
/// constructor consumes the header line. Throws LogParseError with kind
/// FormatVersionMismatch when the header is absent or names another version,
/// MalformedLine for any structurally bad line, and NonMonotoneTimestamp
/// when a record's timestamp drops below its predecessor's (equal stamps are
/// fine: several records share one sample instant).
class LogReader {
 public:
  explicit LogReader(const std::string& path);

  /// Next record, or nullopt at end of file.
  std::optional<LogRecord> next();

  /// 1-based line number of the record most recently returned.
  long line() const { return line_; }

 private:
  std::ifstream in_;
  std::string path_;
  long line_ = 1;
  bool saw_record_ = false;
  std::int64_t prev_us_ = 0;
};

/// Streaming writer. The constructor emits the header; write() enforces the
/// same schema the reader checks (payload width, monotone timestamps) and
/// throws ConfigError on violations so malformed files are never produced.
class LogWriter {
 public:
  explicit LogWriter(const std::string& path);

  void write(const LogRecord& record);

  /// Flushes and closes; called by the destructor as well.
  void close();

 private:
  std::ofstream out_;
  std::string path_;
  bool saw_record_ = false;
  std::int64_t prev_us_ = 0;
};

/// Reads a whole file eagerly. Convenience for tests and small inputs.
std::vector<LogRecord> read_log(const std::string& path);

}  // namespace jse
