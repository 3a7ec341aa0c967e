// SPDX-License-Identifier: Apache-2.0
#include "mcmil/util/log.hpp"

#include <cstdio>
#include <cstdlib>
#include <iostream>

namespace mcmil::log {

namespace {

Level parse(const char* s) {
  if (!s) return Level::Info;
  const std::string v(s);
  if (v == "debug") return Level::Debug;
  if (v == "warn") return Level::Warn;
  if (v == "error") return Level::Error;
  if (v == "off") return Level::Off;
  return Level::Info;
}

Level& current() {
  static Level level = parse(std::getenv("MCMIL_LOG_LEVEL"));
  return level;
}

std::ostream*& sink() {
  static std::ostream* s = &std::cerr;
  return s;
}

const char* name(Level l) {
  switch (l) {
    case Level::Debug: return "debug";
    case Level::Info: return "info";
    case Level::Warn: return "warn";
    case Level::Error: return "error";
    case Level::Off: break;
  }
  return "off";
}

}  // namespace

Level threshold() { return current(); }
void set_threshold(Level level) { current() = level; }
void set_sink(std::ostream* s) { sink() = s ? s : &std::cerr; }

Record::Record(Level level, std::string_view event) : enabled_(level >= current() && current() != Level::Off) {
  if (enabled_) line_ << "level=" << name(level) << " event=" << event;
}

Record::~Record() {
  if (!enabled_) return;
  line_ << '\n';
  *sink() << line_.str() << std::flush;
}

Record& Record::kv(std::string_view key, std::string_view value) {
  if (!enabled_) return *this;
  line_ << ' ' << key << '=';
  if (value.empty() || value.find_first_of(" \"=\t") != std::string_view::npos) {
    line_ << '"';
    for (char c : value) {
      if (c == '"' || c == '\\') line_ << '\\';
      line_ << c;
    }
    line_ << '"';
  } else {
    line_ << value;
  }
  return *this;
}

Record& Record::kv(std::string_view key, double value) {
  if (!enabled_) return *this;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", value);
  line_ << ' ' << key << '=' << buf;
  return *this;
}

}  // namespace mcmil::log
