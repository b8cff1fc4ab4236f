#pragma once

#include <cctype>
#include <string>

#include "pean/common.hpp"

namespace pean {

// CTC alphabet: index 0 is the blank, then digits and lowercase letters.
class Charset {
 public:
  static constexpr int kBlank = 0;
  static constexpr int kSize = 37;
  static constexpr const char* kSymbols = "0123456789abcdefghijklmnopqrstuvwxyz";

  static int size() { return kSize; }

  static int index_of(char c) {
    if (c >= '0' && c <= '9') return 1 + (c - '0');
    if (c >= 'a' && c <= 'z') return 11 + (c - 'a');
    fail_config(std::string("character '") + c + "' not in charset");
  }

  static char char_at(int idx) {
    check(idx >= 1 && idx < kSize, "charset index out of range: " + std::to_string(idx));
    return kSymbols[idx - 1];
  }

  static bool valid_text(const std::string& s) {
    if (s.empty() || s.size() > 25) return false;
    for (char c : s)
      if (!((c >= '0' && c <= '9') || (c >= 'a' && c <= 'z'))) return false;
    return true;
  }

  static std::vector<int> encode(const std::string& s) {
    std::vector<int> out;
    out.reserve(s.size());
    for (char c : s) out.push_back(index_of(c));
    return out;
  }
};

// Standard STR comparison form: lowercase, alphanumeric only.
inline std::string normalize_text(const std::string& s) {
  std::string out;
  for (char c : s) {
    const unsigned char u = static_cast<unsigned char>(c);
    if (std::isalnum(u)) out.push_back(static_cast<char>(std::tolower(u)));
  }
  return out;
}

}  // namespace pean
