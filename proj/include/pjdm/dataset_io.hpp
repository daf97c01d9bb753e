#pragma once

#include <filesystem>

#include <json.hpp>

#include "pjdm/phantom.hpp"

namespace pjdm {

/// Sinogram file: "SINO", version, n_angles, n_bins (u32 LE each), then
/// n_angles*n_bins float32 LE values in angle-major order.
inline constexpr std::uint32_t kSinogramVersion = 1;

void write_sinogram(const std::filesystem::path& path, const Sinogram& sino);
Sinogram read_sinogram(const std::filesystem::path& path);

void to_json(nlohmann::json& j, const Ellipse& e);
void from_json(const nlohmann::json& j, Ellipse& e);
void to_json(nlohmann::json& j, const PhantomSpec& s);
void from_json(const nlohmann::json& j, PhantomSpec& s);
void to_json(nlohmann::json& j, const Geometry& g);
void from_json(const nlohmann::json& j, Geometry& g);

/// Writes manifest.json plus one .sino per sinogram into `dir`, replacing any
/// stale .sino files left from an earlier run.
void save_dataset(const std::filesystem::path& dir, const Dataset& ds);

/// Inverse of save_dataset. Values come back at float32 precision.
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace pjdm
