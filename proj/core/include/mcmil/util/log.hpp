// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>

namespace mcmil::log {

enum class Level { Debug = 0, Info = 1, Warn = 2, Error = 3, Off = 4 };

/// Threshold read once from MCMIL_LOG_LEVEL (debug, info, warn, error, off);
/// info when unset or unrecognized.
Level threshold();
void set_threshold(Level level);
/// Where records go; std::cerr by default.
void set_sink(std::ostream* sink);

/// One `level=... event=... key=value ...` record, emitted on destruction.
/// Values containing spaces, quotes or '=' are double-quoted.
class Record {
 public:
  Record(Level level, std::string_view event);
  Record(const Record&) = delete;
  Record& operator=(const Record&) = delete;
  ~Record();

  Record& kv(std::string_view key, std::string_view value);
  Record& kv(std::string_view key, const char* value) { return kv(key, std::string_view(value)); }
  Record& kv(std::string_view key, const std::string& value) { return kv(key, std::string_view(value)); }
  Record& kv(std::string_view key, double value);
  template <typename T>
  Record& kv(std::string_view key, T value)
    requires std::is_integral_v<T>
  {
    if (enabled_) line_ << ' ' << key << '=' << value;
    return *this;
  }

 private:
  bool enabled_;
  std::ostringstream line_;
};

inline Record debug(std::string_view event) { return Record(Level::Debug, event); }
inline Record info(std::string_view event) { return Record(Level::Info, event); }
inline Record warn(std::string_view event) { return Record(Level::Warn, event); }
inline Record error(std::string_view event) { return Record(Level::Error, event); }

}  // namespace mcmil::log
