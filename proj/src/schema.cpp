#include "fairicl/schema.hpp"

#include "fairicl/rng.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

namespace fairicl {

int Attribute::index_of(const std::string& value) const {
    for (std::size_t i = 0; i < domain.size(); ++i) {
        if (domain[i] == value) return int(i);
    }
    return -1;
}

int Attribute::intern(const std::string& value) {
    const int idx = index_of(value);
    if (idx >= 0) return idx;
    domain.push_back(value);
    return int(domain.size()) - 1;
}

int Schema::attr_index(const std::string& name) const {
    for (std::size_t i = 0; i < attributes.size(); ++i) {
        if (attributes[i].name == name) return int(i);
    }
    return -1;
}

int Schema::label_index() const {
    for (std::size_t i = 0; i < attributes.size(); ++i) {
        if (attributes[i].role == AttrRole::label) return int(i);
    }
    throw std::runtime_error("schema has no label attribute");
}

int Schema::sensitive_index() const {
    for (std::size_t i = 0; i < attributes.size(); ++i) {
        if (attributes[i].role == AttrRole::sensitive) return int(i);
    }
    return -1;
}

std::vector<int> Schema::proxy_indices() const {
    std::vector<int> out;
    for (std::size_t i = 0; i < attributes.size(); ++i) {
        if (attributes[i].role == AttrRole::proxy_sensitive) out.push_back(int(i));
    }
    return out;
}

int Schema::positive_label_value() const {
    const Attribute& lab = label_attr();
    const int idx = lab.index_of(positive_label);
    if (idx < 0) throw std::runtime_error("positive label '" + positive_label + "' not in label domain");
    return idx;
}

void Schema::validate() const {
    int labels = 0;
    int sensitives = 0;
    std::set<std::string> names;
    for (const auto& a : attributes) {
        if (a.name.empty()) throw std::runtime_error("schema: empty attribute name");
        if (!names.insert(a.name).second) throw std::runtime_error("schema: duplicate attribute " + a.name);
        if (a.role == AttrRole::label) ++labels;
        if (a.role == AttrRole::sensitive) ++sensitives;
    }
    if (labels != 1) throw std::runtime_error("schema: exactly one label attribute required");
    if (sensitives > 1) throw std::runtime_error("schema: at most one sensitive attribute allowed");

    if (!hierarchy.non_sensitive_order.empty() || !hierarchy.sensitive.empty() ||
        !hierarchy.proxy_order.empty()) {
        std::set<std::string> covered;
        auto check = [&](const std::string& n, AttrRole want) {
            const int idx = attr_index(n);
            if (idx < 0) throw std::runtime_error("hierarchy names unknown attribute " + n);
            if (attributes[std::size_t(idx)].role != want)
                throw std::runtime_error("hierarchy places " + n + " in the wrong role group");
            if (!covered.insert(n).second) throw std::runtime_error("hierarchy repeats attribute " + n);
        };
        for (const auto& n : hierarchy.non_sensitive_order) check(n, AttrRole::non_sensitive);
        if (!hierarchy.sensitive.empty()) check(hierarchy.sensitive, AttrRole::sensitive);
        for (const auto& n : hierarchy.proxy_order) check(n, AttrRole::proxy_sensitive);
        for (const auto& a : attributes) {
            if (a.role != AttrRole::label && covered.count(a.name) == 0)
                throw std::runtime_error("hierarchy misses attribute " + a.name);
        }
    }
}

GroupLabelCounts group_label_counts(const Dataset& d) {
    const int sens = d.schema->sensitive_index();
    if (sens < 0) throw std::runtime_error("group_label_counts: no sensitive attribute defined");
    const int lab = d.schema->label_index();
    GroupLabelCounts out;
    out.groups = d.schema->attributes[std::size_t(sens)].domain;
    out.labels = d.schema->attributes[std::size_t(lab)].domain;
    out.counts.assign(out.groups.size(), std::vector<std::int64_t>(out.labels.size(), 0));
    for (const auto& r : d.records) {
        out.counts[std::size_t(r.values[std::size_t(sens)])][std::size_t(r.values[std::size_t(lab)])]++;
        out.total++;
    }
    return out;
}

Dataset stratified_test_sample(const Dataset& d, std::size_t per_cell, std::uint64_t seed) {
    const int sens = d.schema->sensitive_index();
    if (sens < 0) throw std::runtime_error("stratified_test_sample: no sensitive attribute defined");
    const int lab = d.schema->label_index();
    const std::size_t n_groups = d.schema->attributes[std::size_t(sens)].domain.size();
    const std::size_t n_labels = d.schema->attributes[std::size_t(lab)].domain.size();

    // Cell membership in ascending id order. Records are stored in id order
    // after a load, but sort defensively since subsets may be reordered.
    std::vector<std::vector<std::size_t>> cells(n_groups * n_labels);
    std::vector<std::size_t> order(d.records.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return d.records[a].id < d.records[b].id;
    });
    for (std::size_t i : order) {
        const auto& r = d.records[i];
        const std::size_t cell =
            std::size_t(r.values[std::size_t(sens)]) * n_labels + std::size_t(r.values[std::size_t(lab)]);
        cells[cell].push_back(i);
    }

    Dataset out;
    out.schema = d.schema;
    out.provenance = Provenance::test;
    for (std::size_t cell = 0; cell < cells.size(); ++cell) {
        if (cells[cell].size() < per_cell) {
            throw std::runtime_error("stratified_test_sample: cell " + std::to_string(cell) +
                                     " has " + std::to_string(cells[cell].size()) +
                                     " records, needs " + std::to_string(per_cell));
        }
        Rng rng(mix64(seed, cell));
        for (std::size_t pick : rng.sample_indices(cells[cell].size(), per_cell)) {
            out.records.push_back(d.records[cells[cell][pick]]);
        }
    }
    std::sort(out.records.begin(), out.records.end(),
              [](const Record& a, const Record& b) { return a.id < b.id; });
    return out;
}

const char* to_string(AttrKind k) {
    return k == AttrKind::categorical ? "categorical" : "numeric";
}

const char* to_string(AttrRole r) {
    switch (r) {
        case AttrRole::sensitive: return "sensitive";
        case AttrRole::proxy_sensitive: return "proxy-sensitive";
        case AttrRole::non_sensitive: return "non-sensitive";
        case AttrRole::label: return "label";
    }
    return "?";
}

const char* to_string(Provenance p) {
    switch (p) {
        case Provenance::original: return "original";
        case Provenance::augmented: return "augmented";
        case Provenance::mixture: return "mixture";
        case Provenance::test: return "test";
    }
    return "?";
}

AttrKind attr_kind_from(const std::string& s) {
    if (s == "categorical") return AttrKind::categorical;
    if (s == "numeric") return AttrKind::numeric;
    throw std::runtime_error("unknown attribute kind: " + s);
}

AttrRole attr_role_from(const std::string& s) {
    if (s == "sensitive") return AttrRole::sensitive;
    if (s == "proxy-sensitive") return AttrRole::proxy_sensitive;
    if (s == "non-sensitive") return AttrRole::non_sensitive;
    if (s == "label") return AttrRole::label;
    throw std::runtime_error("unknown attribute role: " + s);
}

Provenance provenance_from(const std::string& s) {
    if (s == "original") return Provenance::original;
    if (s == "augmented") return Provenance::augmented;
    if (s == "mixture") return Provenance::mixture;
    if (s == "test") return Provenance::test;
    throw std::runtime_error("unknown provenance: " + s);
}

} // namespace fairicl
