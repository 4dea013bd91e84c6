#pragma once

// Numbered-section reader shared by the blamer and mutator reply parsers.

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace evoloop::detail {

std::string_view trim_view(std::string_view s);
std::string lower(std::string_view s);

// Splits `text` into the bodies of sections titled "1. <titles[0]>",
// "2. <titles[1]>", ... . Headers are matched case-insensitively and may carry
// markdown decoration (#, *) or a trailing colon; text after the colon on the
// header line belongs to the body. Sections must appear in order; a missing
// one yields nullopt.
std::vector<std::optional<std::string>> split_sections(std::string_view text,
                                                       const std::vector<std::string_view>& titles);

}  // namespace evoloop::detail
