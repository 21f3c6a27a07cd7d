#pragma once

#include "fairicl/lm.hpp"

#include <filesystem>
#include <map>
#include <string>

namespace fairicl {

// Checkpoint container: magic "FICL", version u32, section count u32, then
// sections of {name, kind, payload}. Kind 0 is an opaque blob, kind 1 a
// row-major little-endian f32 tensor, kind 2 an f64 tensor. Round trips are
// bit-exact.
struct CheckpointSection {
    static constexpr std::uint8_t kBlob = 0;
    static constexpr std::uint8_t kTensorF32 = 1;
    static constexpr std::uint8_t kTensorF64 = 2;

    std::uint8_t kind = kBlob;
    std::string blob;
    lm::DenseMatrix<float> f32;
    lm::DenseMatrix<double> f64;
};

using Checkpoint = std::map<std::string, CheckpointSection>;

void save_checkpoint(const Checkpoint& sections, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// LM checkpoint = config + vocabulary + one tensor section per weight, plus
// the stage fingerprint.
void save_lm(const lm::Lm& model, const std::filesystem::path& path, const std::string& fingerprint);
lm::Lm load_lm(const std::filesystem::path& path, std::string* fingerprint = nullptr);

} // namespace fairicl
