#include "saecount/log.hpp"

#include <cinttypes>
#include <cstdio>
#include <mutex>

namespace saecount {

namespace {

std::mutex g_sink_mutex;
LogSink g_sink;  // empty -> stderr NDJSON

std::string json_escape(std::string_view s) {
  std::string out;
  out.reserve(s.size() + 2);
  for (char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      case '\r': out += "\\r"; break;
      default:
        if (static_cast<unsigned char>(c) < 0x20) {
          char buf[8];
          std::snprintf(buf, sizeof(buf), "\\u%04x", c);
          out += buf;
        } else {
          out += c;
        }
    }
  }
  return out;
}

const char* level_name(LogLevel level) {
  switch (level) {
    case LogLevel::info: return "info";
    case LogLevel::warn: return "warn";
    case LogLevel::error: return "error";
  }
  return "info";
}

void stderr_sink(LogLevel level, std::string_view event, const std::vector<LogField>& fields) {
  std::string line = "{\"level\":\"";
  line += level_name(level);
  line += "\",\"event\":\"";
  line += json_escape(event);
  line += '"';
  for (const auto& f : fields) {
    line += ",\"";
    line += json_escape(f.key);
    line += "\":";
    if (f.quoted) {
      line += '"';
      line += json_escape(f.value);
      line += '"';
    } else {
      line += f.value;
    }
  }
  line += "}\n";
  std::fputs(line.c_str(), stderr);
}

}  // namespace

LogField::LogField(std::string k, double v) : key(std::move(k)), quoted(false) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  value = buf;
  // NaN/Inf are not valid JSON numbers; quote them.
  if (value.find_first_of("ni") != std::string::npos) quoted = true;
}

LogField::LogField(std::string k, long long v) : key(std::move(k)), quoted(false) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%" PRId64, static_cast<int64_t>(v));
  value = buf;
}

LogField::LogField(std::string k, bool v)
    : key(std::move(k)), value(v ? "true" : "false"), quoted(false) {}

void set_log_sink(LogSink sink) {
  std::lock_guard<std::mutex> lock(g_sink_mutex);
  g_sink = std::move(sink);
}

void log_event(LogLevel level, std::string_view event, std::vector<LogField> fields) {
  std::lock_guard<std::mutex> lock(g_sink_mutex);
  if (g_sink) {
    g_sink(level, event, fields);
  } else {
    stderr_sink(level, event, fields);
  }
}

}  // namespace saecount
