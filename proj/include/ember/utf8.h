// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

namespace ember::utf8 {

enum class SeqKind { complete, incomplete, invalid };

struct SeqScan {
  SeqKind kind;
  size_t length;  // bytes of the sequence when complete
};

// Classifies the UTF-8 sequence starting at s[pos] using the well-formed byte
// ranges of Unicode table 3-7 (no overlongs, no surrogates, max U+10FFFF).
// `incomplete` means every byte present is valid but the input ends early.
SeqScan scan(std::string_view s, size_t pos);

// Valid UTF-8 copy of `s`; each byte that does not begin a well-formed
// sequence becomes U+FFFD. Applying it to fragments split on sequence
// boundaries gives the same result as applying it to the concatenation.
std::string sanitize(std::string_view s);

bool is_valid(std::string_view s);

// Appends the UTF-8 encoding of a scalar value.
void append_codepoint(std::string& out, uint32_t cp);

}  // namespace ember::utf8
