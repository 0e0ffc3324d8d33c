#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

namespace laver {

struct DiagnoseOptions {
  std::uint64_t probe_seed = 9001;
  std::size_t probe_count = 64;
  std::size_t knn = 10;  // CKNNA neighborhood, clamped to N-1
};

/// Loads a checkpoint, runs the probe set and writes report.json,
/// pca_input.ppm, pca_final.ppm and gram_final.pgm into out_dir. Returns the
/// report text. Layer alignment compares each layer's vision states of the
/// first probe image with the final layer (and with the teacher when the
/// checkpoint carries one).
std::string diagnose_checkpoint(const std::filesystem::path& ckpt, const DiagnoseOptions& options,
                                const std::filesystem::path& out_dir);

/// Same report for raw [N, D] feature dumps. PCA needs rows·cols == N;
/// CKA/CKNNA need a second dump with the same N.
std::string diagnose_features(const std::filesystem::path& features_a,
                              const std::optional<std::filesystem::path>& features_b, std::size_t rows,
                              std::size_t cols, const DiagnoseOptions& options,
                              const std::filesystem::path& out_dir);

}  // namespace laver
