#include "refseg/tokenize.hpp"

namespace refseg {

static bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

static bool is_punct_token(char c) {
  switch (c) {
    case '.': case ',': case ':': case ';': case '!': case '?': case '\'': case '"':
      return true;
    default:
      return false;
  }
}

TokenSequence tokenize(std::string_view text) {
  TokenSequence out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) {
      out.push_back(cur);
      cur.clear();
    }
  };
  for (char c : text) {
    if (is_space(c)) {
      flush();
    } else if (is_punct_token(c)) {
      flush();
      out.emplace_back(1, c);
    } else {
      if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
      cur.push_back(c);
    }
  }
  flush();
  if (out.empty()) fail(ErrorCode::EmptyExpression, "no tokens after whitespace split");
  return out;
}

}  // namespace refseg
