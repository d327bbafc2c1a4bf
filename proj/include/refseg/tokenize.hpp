#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "refseg/common.hpp"

namespace refseg {

using TokenSequence = std::vector<std::string>;

// Lowercases (ASCII range), splits on whitespace runs, and emits each of
// . , : ; ! ? ' " as its own token. Throws EmptyExpression when nothing
// remains.
TokenSequence tokenize(std::string_view text);

}  // namespace refseg
