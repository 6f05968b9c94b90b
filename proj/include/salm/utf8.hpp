#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace salm::utf8 {

/// Validates `s` as UTF-8. Returns the byte offset of the first invalid
/// sequence, or -1 if the whole string is valid.
long long find_invalid(std::string_view s);

/// Throws DataError naming the byte offset if `s` is not valid UTF-8.
/// `where` is a label for the error message (file name, line number, ...).
void validate(std::string_view s, const std::string& where);

/// Number of Unicode scalar values in a valid UTF-8 string.
std::size_t count_scalars(std::string_view s);

/// Splits a valid UTF-8 string into one std::string per scalar value.
std::vector<std::string> split_scalars(std::string_view s);

}  // namespace salm::utf8
