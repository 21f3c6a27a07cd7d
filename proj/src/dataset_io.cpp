#include "fairicl/dataset_io.hpp"

#include "fairicl/kvfile.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace fairicl {

namespace {

std::string canonical_numeric(const std::string& raw, const std::string& attr, int line) {
    std::int64_t v = 0;
    const std::string t = trim(raw);
    const auto res = std::from_chars(t.data(), t.data() + t.size(), v);
    if (res.ec != std::errc{} || res.ptr != t.data() + t.size()) {
        throw std::runtime_error("line " + std::to_string(line) + ": unparseable numeric value '" +
                                 raw + "' for attribute " + attr);
    }
    return std::to_string(v);
}

bool is_missing(const std::string& v) { return v.empty() || v == "?"; }

} // namespace

std::shared_ptr<Schema> load_schema(const std::filesystem::path& path) {
    auto schema = std::make_shared<Schema>();
    for (const auto& e : load_kv_file(path)) {
        if (e.key == "attribute") {
            const auto parts = split_ws(e.value);
            if (parts.size() != 3)
                throw std::runtime_error("schema line " + std::to_string(e.line) +
                                         ": expected 'attribute <name> <kind> <role>'");
            Attribute a;
            a.name = parts[0];
            a.kind = attr_kind_from(parts[1]);
            a.role = attr_role_from(parts[2]);
            schema->attributes.push_back(std::move(a));
        } else if (e.key == "hierarchy") {
            schema->hierarchy.non_sensitive_order = split_ws(e.value);
        } else if (e.key == "template") {
            schema->template_id = e.value;
        } else if (e.key == "positive_label") {
            schema->positive_label = e.value;
        } else {
            throw std::runtime_error("schema line " + std::to_string(e.line) + ": unknown key '" +
                                     e.key + "'");
        }
    }
    for (const auto& a : schema->attributes) {
        if (a.role == AttrRole::sensitive) schema->hierarchy.sensitive = a.name;
        if (a.role == AttrRole::proxy_sensitive) schema->hierarchy.proxy_order.push_back(a.name);
    }
    schema->validate();
    return schema;
}

void save_schema(const Schema& schema, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    for (const auto& a : schema.attributes) {
        out << "attribute " << a.name << ' ' << to_string(a.kind) << ' ' << to_string(a.role)
            << '\n';
    }
    if (!schema.hierarchy.non_sensitive_order.empty()) {
        out << "hierarchy";
        for (const auto& n : schema.hierarchy.non_sensitive_order) out << ' ' << n;
        out << '\n';
    }
    if (!schema.template_id.empty()) out << "template " << schema.template_id << '\n';
    if (!schema.positive_label.empty()) out << "positive_label " << schema.positive_label << '\n';
}

Dataset load_csv(const std::filesystem::path& path, std::shared_ptr<Schema> schema,
                 const LoadOptions& opts, LoadReport* report) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());

    std::string line;
    int lineno = 0;
    // Header (after any comment lines).
    std::vector<std::string> header;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        for (auto& h : split_char(line, ',')) header.push_back(trim(h));
        break;
    }
    if (header.empty()) throw std::runtime_error(path.string() + ": empty file (no header row)");

    int provenance_col = -1;
    std::vector<int> col_to_attr(header.size(), -1);
    std::vector<bool> seen(schema->attributes.size(), false);
    for (std::size_t c = 0; c < header.size(); ++c) {
        if (header[c] == "__provenance") {
            provenance_col = int(c);
            continue;
        }
        const int a = schema->attr_index(header[c]);
        if (a < 0) throw std::runtime_error(path.string() + ": unknown column '" + header[c] + "'");
        col_to_attr[c] = a;
        seen[std::size_t(a)] = true;
    }
    for (std::size_t a = 0; a < schema->attributes.size(); ++a) {
        if (!seen[a])
            throw std::runtime_error(path.string() + ": missing column '" +
                                     schema->attributes[a].name + "'");
    }

    Dataset d;
    d.schema = schema;
    std::int64_t next_id = 0;
    LoadReport rep;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty() || line[0] == '#') continue;
        const auto fields = split_char(line, ',');
        if (fields.size() != header.size()) {
            throw std::runtime_error(path.string() + " line " + std::to_string(lineno) +
                                     ": expected " + std::to_string(header.size()) + " fields, got " +
                                     std::to_string(fields.size()));
        }
        bool incomplete = false;
        for (std::size_t c = 0; c < fields.size(); ++c) {
            if (col_to_attr[c] >= 0 && is_missing(trim(fields[c]))) incomplete = true;
        }
        if (incomplete) {
            if (!opts.skip_incomplete) {
                throw std::runtime_error(path.string() + " line " + std::to_string(lineno) +
                                         ": missing value (rows with missing values are rejected)");
            }
            rep.skipped_incomplete++;
            continue;
        }
        Record r;
        r.id = next_id++;
        r.values.assign(schema->attributes.size(), 0);
        for (std::size_t c = 0; c < fields.size(); ++c) {
            const int a = col_to_attr[c];
            if (a < 0) {
                if (int(c) == provenance_col) d.provenance = provenance_from(trim(fields[c]));
                continue;
            }
            Attribute& attr = schema->attributes[std::size_t(a)];
            std::string v = trim(fields[c]);
            if (attr.kind == AttrKind::numeric) v = canonical_numeric(v, attr.name, lineno);
            r.values[std::size_t(a)] = attr.intern(v);
        }
        d.records.push_back(std::move(r));
        rep.loaded++;
    }
    if (report) *report = rep;
    return d;
}

void save_csv(const Dataset& d, const std::filesystem::path& path,
              const std::string& fingerprint_comment) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    if (!fingerprint_comment.empty()) out << "# fingerprint=" << fingerprint_comment << '\n';
    const auto& attrs = d.schema->attributes;
    for (std::size_t a = 0; a < attrs.size(); ++a) {
        if (a) out << ',';
        out << attrs[a].name;
    }
    out << ",__provenance\n";
    for (const auto& r : d.records) {
        for (std::size_t a = 0; a < attrs.size(); ++a) {
            if (a) out << ',';
            out << attrs[a].domain[std::size_t(r.values[a])];
        }
        out << ',' << to_string(d.provenance) << '\n';
    }
}

std::string csv_fingerprint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::string line;
    while (std::getline(in, line)) {
        if (line.rfind("# fingerprint=", 0) == 0) return trim(line.substr(14));
        if (!line.empty() && line[0] != '#') break;
    }
    return {};
}

} // namespace fairicl
