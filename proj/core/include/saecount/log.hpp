#pragma once

#include <functional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace saecount {

enum class LogLevel { info, warn, error };

// One structured log line: event name plus preformatted key/value fields.
// The default sink writes line-delimited JSON to stderr.
struct LogField {
  std::string key;
  std::string value;
  bool quoted = true;

  LogField(std::string k, std::string v) : key(std::move(k)), value(std::move(v)) {}
  LogField(std::string k, const char* v) : key(std::move(k)), value(v) {}
  LogField(std::string k, double v);
  LogField(std::string k, long long v);
  LogField(std::string k, int v) : LogField(std::move(k), static_cast<long long>(v)) {}
  LogField(std::string k, std::size_t v) : LogField(std::move(k), static_cast<long long>(v)) {}
  LogField(std::string k, bool v);
};

using LogSink = std::function<void(LogLevel, std::string_view event, const std::vector<LogField>&)>;

// Replaces the process-wide sink; pass nullptr to restore the stderr default.
void set_log_sink(LogSink sink);

void log_event(LogLevel level, std::string_view event, std::vector<LogField> fields = {});

}  // namespace saecount
