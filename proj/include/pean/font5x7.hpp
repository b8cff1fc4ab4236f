#pragma once

#include <cstdint>

namespace pean {

// Returns 7 row bytes (bit 4 = leftmost pixel) for '0'-'9' and 'a'-'z',
// nullptr for anything else.
const uint8_t* glyph5x7(char c);

constexpr int kGlyphW = 5;
constexpr int kGlyphH = 7;

}  // namespace pean
