#include "sections.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

namespace evoloop::detail {

std::string_view trim_view(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

namespace {

std::string_view strip_decoration(std::string_view s) {
  s = trim_view(s);
  while (!s.empty() && (s.front() == '#' || s.front() == '*')) s.remove_prefix(1);
  while (!s.empty() && s.back() == '*') s.remove_suffix(1);
  return trim_view(s);
}

// Returns the inline remainder if `line` is the header "<number>. <title>".
std::optional<std::string> match_header(std::string_view line, int number, std::string_view title) {
  std::string_view s = strip_decoration(line);
  const std::string num = std::to_string(number);
  if (s.substr(0, num.size()) != num) return std::nullopt;
  s.remove_prefix(num.size());
  if (s.empty() || (s.front() != '.' && s.front() != ')')) return std::nullopt;
  s = trim_view(s.substr(1));
  while (!s.empty() && s.front() == '*') s.remove_prefix(1);
  if (lower(s.substr(0, title.size())) != lower(title)) return std::nullopt;
  s.remove_prefix(title.size());
  while (!s.empty() && s.front() == '*') s.remove_prefix(1);
  s = trim_view(s);
  if (s.empty()) return std::string();
  if (s.front() != ':') return std::nullopt;
  return std::string(trim_view(s.substr(1)));
}

std::string trim_blank_lines(const std::vector<std::string>& lines) {
  std::size_t first = 0;
  std::size_t last = lines.size();
  while (first < last && trim_view(lines[first]).empty()) ++first;
  while (last > first && trim_view(lines[last - 1]).empty()) --last;
  std::string out;
  for (std::size_t i = first; i < last; ++i) {
    if (i > first) out += '\n';
    out += lines[i];
  }
  return out;
}

}  // namespace

std::vector<std::optional<std::string>> split_sections(std::string_view text,
                                                       const std::vector<std::string_view>& titles) {
  std::vector<std::optional<std::string>> out(titles.size());
  std::vector<std::string> current;
  int open = -1;
  std::istringstream in{std::string(text)};
  std::string line;
  auto close_section = [&] {
    if (open >= 0) out[static_cast<std::size_t>(open)] = trim_blank_lines(current);
    current.clear();
  };
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    bool matched = false;
    // Only a later section can start; the final section runs to the end.
    for (std::size_t k = static_cast<std::size_t>(open + 1); k < titles.size(); ++k) {
      if (auto rest = match_header(line, static_cast<int>(k) + 1, titles[k])) {
        close_section();
        open = static_cast<int>(k);
        if (!rest->empty()) current.push_back(*rest);
        matched = true;
        break;
      }
    }
    if (!matched && open >= 0) current.push_back(line);
  }
  close_section();
  return out;
}

}  // namespace evoloop::detail
