#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace fairicl {

enum class AttrKind { categorical, numeric };
enum class AttrRole { sensitive, proxy_sensitive, non_sensitive, label };

// One column of a tabular task. Numeric attributes are kept as integers in
// canonical decimal form; the domain is the list of observed values in first
// occurrence order, not a range.
struct Attribute {
    std::string name;
    AttrKind kind = AttrKind::categorical;
    AttrRole role = AttrRole::non_sensitive;
    std::vector<std::string> domain;

    // Returns the domain index, interning the value if requested.
    int index_of(const std::string& value) const;
    int intern(const std::string& value);
};

// Sampling plan for augmentation: label first, then non-sensitive attributes
// in a fixed order, the sensitive attribute independently, then proxies
// conditioned on the sensitive value.
struct AttributeHierarchy {
    std::vector<std::string> non_sensitive_order;
    std::string sensitive;
    std::vector<std::string> proxy_order;
};

struct Schema {
    std::vector<Attribute> attributes;
    AttributeHierarchy hierarchy;
    std::string template_id;
    std::string positive_label;

    int attr_index(const std::string& name) const;      // -1 when absent
    int label_index() const;
    int sensitive_index() const;                         // -1 when absent
    std::vector<int> proxy_indices() const;              // declaration order

    const Attribute& label_attr() const { return attributes[std::size_t(label_index())]; }
    int positive_label_value() const;                    // domain index of positive_label

    // Exactly one label, at most one sensitive attribute, hierarchy (when
    // declared) partitions the non-label attributes. Throws on violation.
    void validate() const;
};

enum class Provenance { original, augmented, mixture, test };

// Values are domain indices aligned with Schema::attributes.
struct Record {
    std::int64_t id = 0;
    std::vector<std::int32_t> values;
};

struct Dataset {
    std::shared_ptr<Schema> schema;
    std::vector<Record> records;
    Provenance provenance = Provenance::original;

    std::size_t size() const { return records.size(); }
    const std::string& value_of(const Record& r, int attr) const {
        return schema->attributes[std::size_t(attr)].domain[std::size_t(r.values[std::size_t(attr)])];
    }
    bool label_positive(const Record& r) const {
        return r.values[std::size_t(schema->label_index())] == schema->positive_label_value();
    }
};

struct GroupLabelCounts {
    std::vector<std::string> groups;
    std::vector<std::string> labels;
    std::vector<std::vector<std::int64_t>> counts;  // [group][label]
    std::int64_t total = 0;
};

// Counts records per (sensitive value, label value) cell. Cell axes are the
// schema domains, so an empty dataset yields all-zero cells.
GroupLabelCounts group_label_counts(const Dataset& d);

// Draws per_cell records from every (group, label) cell without replacement.
// Draw procedure: cells are visited in (group domain order x label domain
// order); within a cell, members are listed in ascending id order and
// sampled with Rng(mix64(seed, cell_ordinal)).sample_indices. Throws when a
// cell has fewer than per_cell members.
Dataset stratified_test_sample(const Dataset& d, std::size_t per_cell, std::uint64_t seed);

const char* to_string(AttrKind k);
const char* to_string(AttrRole r);
const char* to_string(Provenance p);
AttrKind attr_kind_from(const std::string& s);
AttrRole attr_role_from(const std::string& s);
Provenance provenance_from(const std::string& s);

} // namespace fairicl
