#pragma once

#include <cstdlib>
#include <string>

#include <unistd.h>

namespace stulab::term {

/// Colour only for terminals, and never when NO_COLOR is set to a non-empty value.
inline bool use_color() {
  const char* no_color = std::getenv("NO_COLOR");
  if (no_color != nullptr && no_color[0] != '\0') return false;
  return ::isatty(STDOUT_FILENO) != 0;
}

inline std::string paint(const std::string& text, const char* sgr, bool color) {
  return color ? std::string("\033[") + sgr + "m" + text + "\033[0m" : text;
}

inline std::string pass_fail(bool ok, bool color) {
  return ok ? paint("PASS", "32", color) : paint("FAIL", "31", color);
}

}  // namespace stulab::term
