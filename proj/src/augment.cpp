#include "fairicl/augment.hpp"

#include "fairicl/rng.hpp"

#include <cstdio>
#include <stdexcept>
#include <unordered_set>

namespace fairicl {

namespace {

constexpr int kUniqueRetries = 100;

struct TupleHash {
    std::size_t operator()(const std::vector<std::int32_t>& v) const {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (std::int32_t x : v) {
            h ^= std::uint64_t(std::uint32_t(x));
            h *= 0x100000001b3ULL;
        }
        return std::size_t(h);
    }
};

using TupleSet = std::unordered_set<std::vector<std::int32_t>, TupleHash>;

// Distinct values of `attr` over the rows in `subset`, in first-occurrence
// order, so the uniform draw below is reproducible.
std::vector<std::int32_t> distinct_values(const Dataset& d, const std::vector<std::size_t>& subset,
                                          int attr) {
    std::vector<bool> seen(d.schema->attributes[std::size_t(attr)].domain.size(), false);
    std::vector<std::int32_t> out;
    for (std::size_t row : subset) {
        const std::int32_t v = d.records[row].values[std::size_t(attr)];
        if (!seen[std::size_t(v)]) {
            seen[std::size_t(v)] = true;
            out.push_back(v);
        }
    }
    return out;
}

std::vector<std::size_t> filter_subset(const Dataset& d, const std::vector<std::size_t>& subset,
                                       int attr, std::int32_t value) {
    std::vector<std::size_t> out;
    for (std::size_t row : subset) {
        if (d.records[row].values[std::size_t(attr)] == value) out.push_back(row);
    }
    return out;
}

Dataset generate(const Dataset& d, const AttributeHierarchy* h, const GenerationConfig& cfg,
                 GenerationReport* report) {
    if (d.records.empty() && cfg.n_tilde > 0)
        throw std::runtime_error("generate: source dataset is empty");
    const Schema& schema = *d.schema;
    const int lab = schema.label_index();

    // Resolve hierarchy / schema order up front.
    std::vector<int> non_sensitive;
    int sens = -1;
    std::vector<int> proxies;
    if (h != nullptr) {
        for (const auto& n : h->non_sensitive_order) {
            const int a = schema.attr_index(n);
            if (a < 0) throw std::runtime_error("hierarchy names unknown attribute " + n);
            non_sensitive.push_back(a);
        }
        sens = schema.attr_index(h->sensitive);
        if (sens < 0) throw std::runtime_error("hierarchy: sensitive attribute not found");
        for (const auto& n : h->proxy_order) {
            const int a = schema.attr_index(n);
            if (a < 0) throw std::runtime_error("hierarchy names unknown proxy " + n);
            proxies.push_back(a);
        }
    }

    // Label-conditioned row subsets, shared across samples.
    const std::size_t n_labels = schema.attributes[std::size_t(lab)].domain.size();
    std::vector<std::vector<std::size_t>> by_label(n_labels);
    std::vector<std::vector<std::size_t>> by_sensitive;
    if (h != nullptr) by_sensitive.assign(schema.attributes[std::size_t(sens)].domain.size(), {});
    for (std::size_t i = 0; i < d.records.size(); ++i) {
        by_label[std::size_t(d.records[i].values[std::size_t(lab)])].push_back(i);
        if (h != nullptr) by_sensitive[std::size_t(d.records[i].values[std::size_t(sens)])].push_back(i);
    }

    TupleSet taken;
    if (cfg.unique) {
        taken.reserve(d.records.size() + cfg.n_tilde);
        for (const auto& r : d.records) taken.insert(r.values);
    }

    Dataset out;
    out.schema = d.schema;
    out.provenance = Provenance::augmented;
    out.records.reserve(cfg.n_tilde);
    GenerationReport rep;

    for (std::size_t i = 0; i < cfg.n_tilde; ++i) {
        Rng rng(mix64(cfg.seed, i));
        Record rec;
        rec.id = std::int64_t(i);
        for (int attempt = 0;; ++attempt) {
            rec.values.assign(schema.attributes.size(), 0);
            const auto& lab_domain = schema.attributes[std::size_t(lab)].domain;
            const std::int32_t label_v = std::int32_t(rng.below(lab_domain.size()));
            rec.values[std::size_t(lab)] = label_v;

            if (h == nullptr) {
                for (std::size_t a = 0; a < schema.attributes.size(); ++a) {
                    if (int(a) == lab) continue;
                    rec.values[a] = std::int32_t(rng.below(schema.attributes[a].domain.size()));
                }
            } else {
                std::vector<std::size_t> subset = by_label[std::size_t(label_v)];
                for (int a : non_sensitive) {
                    const std::vector<std::size_t>& basis =
                        subset.empty() ? by_label[std::size_t(label_v)] : subset;
                    const auto values = distinct_values(d, basis, a);
                    if (values.empty())
                        throw std::runtime_error("generate_hierarchical: empty conditioning subset "
                                                 "beyond backoff at attribute " +
                                                 schema.attributes[std::size_t(a)].name);
                    const std::int32_t v = values[rng.below(values.size())];
                    rec.values[std::size_t(a)] = v;
                    subset = filter_subset(d, basis, a, v);
                }
                const std::int32_t sv =
                    std::int32_t(rng.below(schema.attributes[std::size_t(sens)].domain.size()));
                rec.values[std::size_t(sens)] = sv;
                std::vector<std::size_t> psubset = by_sensitive[std::size_t(sv)];
                for (int a : proxies) {
                    const std::vector<std::size_t>& basis =
                        psubset.empty() ? by_sensitive[std::size_t(sv)] : psubset;
                    const auto values = distinct_values(d, basis, a);
                    if (values.empty())
                        throw std::runtime_error("generate_hierarchical: empty conditioning subset "
                                                 "beyond backoff at proxy " +
                                                 schema.attributes[std::size_t(a)].name);
                    const std::int32_t v = values[rng.below(values.size())];
                    rec.values[std::size_t(a)] = v;
                    psubset = filter_subset(d, basis, a, v);
                }
            }

            if (!cfg.unique || taken.insert(rec.values).second) break;
            if (attempt >= kUniqueRetries) {
                std::fprintf(stderr,
                             "warning: generate: uniqueness unattainable for sample %zu after %d "
                             "retries, accepting duplicate\n",
                             i, kUniqueRetries);
                rep.duplicates_accepted++;
                break;
            }
        }
        out.records.push_back(std::move(rec));
    }
    if (report) *report = rep;
    return out;
}

} // namespace

Dataset generate_hierarchical(const Dataset& d, const AttributeHierarchy& h,
                              const GenerationConfig& cfg, GenerationReport* report) {
    if (cfg.mode != GenerationMode::hierarchical)
        throw std::runtime_error("generate_hierarchical: config mode is not hierarchical");
    return generate(d, &h, cfg, report);
}

Dataset generate_random(const Dataset& d, const GenerationConfig& cfg, GenerationReport* report) {
    if (cfg.mode != GenerationMode::random)
        throw std::runtime_error("generate_random: config mode is not random");
    return generate(d, nullptr, cfg, report);
}

std::vector<TrainingInstance> build_training_mixture(const Dataset& d, const Dataset& d_tilde,
                                                     std::size_t q, std::uint64_t seed) {
    const std::size_t n = d.records.size();
    if (q > 0 && n == 0) throw std::runtime_error("build_training_mixture: empty dataset with q > 0");
    if (q > 0 && q > n - 1)
        throw std::runtime_error("build_training_mixture: q exceeds |D| - 1");

    std::vector<TrainingInstance> out;
    out.reserve(n + d_tilde.records.size());
    const auto add = [&](const Record& query, Provenance source, std::size_t self_pos) {
        TrainingInstance inst;
        inst.query_id = query.id;
        inst.query_source = source;
        Rng rng(mix64(seed, out.size()));
        if (source == Provenance::original) {
            // Draw over n-1 slots, then skip the query's own position.
            for (std::size_t pick : rng.sample_indices(n - 1, q)) {
                const std::size_t pos = pick < self_pos ? pick : pick + 1;
                inst.demo_ids.push_back(d.records[pos].id);
            }
        } else {
            for (std::size_t pick : rng.sample_indices(n, q))
                inst.demo_ids.push_back(d.records[pick].id);
        }
        out.push_back(std::move(inst));
    };
    for (std::size_t i = 0; i < n; ++i) add(d.records[i], Provenance::original, i);
    for (const auto& r : d_tilde.records) add(r, Provenance::augmented, 0);
    return out;
}

DecorrelationReport decorrelation_report(const Dataset& d) {
    const int sens = d.schema->sensitive_index();
    if (sens < 0) throw std::runtime_error("decorrelation_report: no sensitive attribute");
    const auto counts = group_label_counts(d);
    if (counts.groups.size() != 2)
        throw std::runtime_error("decorrelation_report: expected exactly 2 groups, have " +
                                 std::to_string(counts.groups.size()));
    const int pos = d.schema->positive_label_value();

    DecorrelationReport rep;
    rep.groups = counts.groups;
    for (std::size_t g = 0; g < counts.groups.size(); ++g) {
        std::int64_t total = 0;
        for (std::int64_t c : counts.counts[g]) total += c;
        if (total == 0)
            throw std::runtime_error("decorrelation_report: group '" + counts.groups[g] +
                                     "' absent from data");
        rep.positive_rate.push_back(double(counts.counts[g][std::size_t(pos)]) / double(total));
    }
    rep.signed_gap = rep.positive_rate[0] - rep.positive_rate[1];
    rep.gap = std::abs(rep.signed_gap);
    return rep;
}

} // namespace fairicl
