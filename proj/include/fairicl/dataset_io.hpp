#pragma once

#include "fairicl/schema.hpp"

#include <filesystem>

namespace fairicl {

struct LoadOptions {
    // Rows with an empty or "?" field are rejected. When false the loader
    // throws on the first such row; when true it skips them and counts.
    bool skip_incomplete = false;
};

struct LoadReport {
    std::size_t loaded = 0;
    std::size_t skipped_incomplete = 0;
};

// Schema sidecar, key-value format:
//   attribute <name> <categorical|numeric> <sensitive|proxy-sensitive|non-sensitive|label>
//   hierarchy <non-sensitive names in sampling order>
//   template <template id>
//   positive_label <label value counted as the positive outcome>
std::shared_ptr<Schema> load_schema(const std::filesystem::path& path);
void save_schema(const Schema& schema, const std::filesystem::path& path);

// Comma-separated, header row must match the schema attribute names (any
// column order; a trailing __provenance column is ours and consumed).
// Leading '#' lines are skipped. Domains are populated in first-occurrence
// order; numeric values are canonicalized through int64. Ids are assigned in
// file order starting at 0.
Dataset load_csv(const std::filesystem::path& path, std::shared_ptr<Schema> schema,
                 const LoadOptions& opts = {}, LoadReport* report = nullptr);

// Writes header + rows (+ __provenance column), with an optional leading
// '# fingerprint=<hex>' comment consumed by load_csv.
void save_csv(const Dataset& d, const std::filesystem::path& path,
              const std::string& fingerprint_comment = {});

// Fingerprint recorded in the file's comment line, empty if none.
std::string csv_fingerprint(const std::filesystem::path& path);

} // namespace fairicl
