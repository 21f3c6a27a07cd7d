#include "fairicl/checkpoint.hpp"

#include "fairicl/kvfile.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian; big-endian hosts unsupported");

namespace fairicl {

namespace {

constexpr char kMagic[4] = {'F', 'I', 'C', 'L'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }
void write_u64(std::ostream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); }

std::uint32_t read_u32(std::istream& in) {
    std::uint32_t v = 0;
    if (!in.read(reinterpret_cast<char*>(&v), 4)) throw std::runtime_error("checkpoint: truncated");
    return v;
}

std::uint64_t read_u64(std::istream& in) {
    std::uint64_t v = 0;
    if (!in.read(reinterpret_cast<char*>(&v), 8)) throw std::runtime_error("checkpoint: truncated");
    return v;
}

template <typename Scalar>
void write_tensor(std::ostream& out, const lm::DenseMatrix<Scalar>& m) {
    write_u32(out, std::uint32_t(m.rows()));
    write_u32(out, std::uint32_t(m.cols()));
    out.write(reinterpret_cast<const char*>(m.data()),
              std::streamsize(sizeof(Scalar) * std::size_t(m.size())));
}

template <typename Scalar>
lm::DenseMatrix<Scalar> read_tensor(std::istream& in) {
    const std::uint32_t rows = read_u32(in);
    const std::uint32_t cols = read_u32(in);
    lm::DenseMatrix<Scalar> m(rows, cols);
    if (!in.read(reinterpret_cast<char*>(m.data()),
                 std::streamsize(sizeof(Scalar) * std::size_t(m.size()))))
        throw std::runtime_error("checkpoint: truncated tensor");
    return m;
}

} // namespace

void save_checkpoint(const Checkpoint& sections, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(kMagic, 4);
    write_u32(out, kVersion);
    write_u32(out, std::uint32_t(sections.size()));
    for (const auto& [name, sec] : sections) {
        write_u32(out, std::uint32_t(name.size()));
        out.write(name.data(), std::streamsize(name.size()));
        out.put(char(sec.kind));
        std::ostringstream payload;
        if (sec.kind == CheckpointSection::kBlob) payload.write(sec.blob.data(), std::streamsize(sec.blob.size()));
        else if (sec.kind == CheckpointSection::kTensorF32) write_tensor(payload, sec.f32);
        else write_tensor(payload, sec.f64);
        const std::string bytes = payload.str();
        write_u64(out, bytes.size());
        out.write(bytes.data(), std::streamsize(bytes.size()));
    }
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    char magic[4] = {};
    if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error(path.string() + ": not a FICL checkpoint");
    const std::uint32_t version = read_u32(in);
    if (version != kVersion)
        throw std::runtime_error(path.string() + ": unsupported checkpoint version " +
                                 std::to_string(version));
    const std::uint32_t count = read_u32(in);
    Checkpoint sections;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = read_u32(in);
        std::string name(name_len, '\0');
        if (!in.read(name.data(), name_len)) throw std::runtime_error("checkpoint: truncated name");
        CheckpointSection sec;
        sec.kind = std::uint8_t(in.get());
        const std::uint64_t payload = read_u64(in);
        if (sec.kind == CheckpointSection::kBlob) {
            sec.blob.resize(payload);
            if (!in.read(sec.blob.data(), std::streamsize(payload)))
                throw std::runtime_error("checkpoint: truncated blob");
        } else if (sec.kind == CheckpointSection::kTensorF32) {
            sec.f32 = read_tensor<float>(in);
        } else if (sec.kind == CheckpointSection::kTensorF64) {
            sec.f64 = read_tensor<double>(in);
        } else {
            throw std::runtime_error("checkpoint: unknown section kind");
        }
        sections.emplace(std::move(name), std::move(sec));
    }
    return sections;
}

void save_lm(const lm::Lm& model, const std::filesystem::path& path, const std::string& fingerprint) {
    Checkpoint sections;
    std::ostringstream cfg;
    cfg << "layers " << model.config.layers << '\n'
        << "dim " << model.config.dim << '\n'
        << "heads " << model.config.heads << '\n'
        << "context_len " << model.config.context_len << '\n'
        << "vocab_size " << model.config.vocab_size << '\n'
        << "fingerprint " << fingerprint << '\n';
    sections["config"].blob = cfg.str();
    sections["vocab"].blob = model.tokenizer.serialized();
    for (const auto& [name, tensor] : model.params.tensors()) {
        CheckpointSection sec;
        sec.kind = CheckpointSection::kTensorF32;
        sec.f32 = *tensor;
        sections["t:" + name] = std::move(sec);
    }
    save_checkpoint(sections, path);
}

lm::Lm load_lm(const std::filesystem::path& path, std::string* fingerprint) {
    const Checkpoint sections = load_checkpoint(path);
    const auto cfg_it = sections.find("config");
    const auto vocab_it = sections.find("vocab");
    if (cfg_it == sections.end() || vocab_it == sections.end())
        throw std::runtime_error(path.string() + ": missing lm sections");

    lm::Lm model;
    for (const auto& e : parse_kv_text(cfg_it->second.blob)) {
        if (e.key == "layers") model.config.layers = std::stoi(e.value);
        else if (e.key == "dim") model.config.dim = std::stoi(e.value);
        else if (e.key == "heads") model.config.heads = std::stoi(e.value);
        else if (e.key == "context_len") model.config.context_len = std::stoi(e.value);
        else if (e.key == "vocab_size") model.config.vocab_size = std::stoi(e.value);
        else if (e.key == "fingerprint" && fingerprint) *fingerprint = e.value;
    }
    model.config.validate();
    model.tokenizer = Tokenizer::deserialized(vocab_it->second.blob);
    if (model.tokenizer.vocab_size() != model.config.vocab_size)
        throw std::runtime_error(path.string() + ": vocabulary does not match config");
    model.params = lm::TransformerParams<float>::zeros(model.config);
    for (auto& [name, tensor] : model.params.tensors()) {
        const auto it = sections.find("t:" + name);
        if (it == sections.end())
            throw std::runtime_error(path.string() + ": missing tensor " + name);
        if (it->second.f32.rows() != tensor->rows() || it->second.f32.cols() != tensor->cols())
            throw std::runtime_error(path.string() + ": tensor shape mismatch for " + name);
        *tensor = it->second.f32;
    }
    return model;
}

} // namespace fairicl
