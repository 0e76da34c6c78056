#pragma once

#include "ta3n/model.hpp"

#include <filesystem>
#include <memory>

namespace ta3n {

/// Self-describing checkpoint: one-line JSON manifest (model config plus
/// per-parameter key/shape/offset entries) followed by a binary segment of
/// little-endian float64 values. Round-trips bit-exactly.
void save_checkpoint(Ta3nModel& model, const std::filesystem::path& path);
std::unique_ptr<Ta3nModel> load_checkpoint(const std::filesystem::path& path);

}  // namespace ta3n
