#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace fairicl {

// One directive per line: first whitespace-separated word is the key, the
// rest of the line (trimmed) is the value. '#' starts a comment line, blank
// lines are skipped. Used by schema sidecars, template files and experiment
// configs. Repeated keys are allowed and kept in file order.
struct KvEntry {
    std::string key;
    std::string value;
    int line = 0;
};

std::vector<KvEntry> parse_kv_text(const std::string& text);
std::vector<KvEntry> load_kv_file(const std::filesystem::path& path);

std::string trim(std::string_view s);
std::vector<std::string> split_ws(std::string_view s);
std::vector<std::string> split_char(std::string_view s, char sep);

} // namespace fairicl
