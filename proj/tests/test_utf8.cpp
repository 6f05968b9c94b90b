#include "salm/utf8.hpp"

#include "doctest.h"
#include "salm/error.hpp"

using namespace salm;

TEST_CASE("utf8 validation accepts multibyte text and rejects bad bytes") {
  CHECK(utf8::find_invalid("plain ascii") == -1);
  CHECK(utf8::find_invalid("umg\xC3\xA9nstvo") == -1);   // 2-byte
  CHECK(utf8::find_invalid("\xE2\x96\x81word") == -1);   // 3-byte marker
  CHECK(utf8::find_invalid("ok\xF0\x9F\x98\x80") == -1);  // 4-byte emoji

  CHECK(utf8::find_invalid(std::string("ab\xFF") + "cd") == 2);
  CHECK(utf8::find_invalid("\xC3") == 0);          // truncated sequence
  CHECK(utf8::find_invalid("\xC0\xAF") == 0);      // overlong
  CHECK(utf8::find_invalid("\xED\xA0\x80") == 0);  // surrogate

  CHECK_THROWS_AS(utf8::validate("x\x80y", "t"), DataError);
  try {
    utf8::validate("abc\xFE", "file.txt:3");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("offset 3") != std::string::npos);
  }
}

TEST_CASE("scalar counting and splitting") {
  CHECK(utf8::count_scalars("") == 0);
  CHECK(utf8::count_scalars("abc") == 3);
  CHECK(utf8::count_scalars("\xC3\xA9t\xC3\xA9") == 3);  // e-acute t e-acute
  const auto parts = utf8::split_scalars("a\xC3\xA9" "b");
  REQUIRE(parts.size() == 3);
  CHECK(parts[0] == "a");
  CHECK(parts[1] == "\xC3\xA9");
  CHECK(parts[2] == "b");
}
