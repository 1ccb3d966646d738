#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "tomofocus/appearance.hpp"
#include "tomofocus/autofocus.hpp"
#include "tomofocus/fdk.hpp"
#include "tomofocus/geometry.hpp"
#include "tomofocus/motion_model.hpp"
#include "tomofocus/phantom.hpp"
#include "tomofocus/rpe.hpp"

namespace tomofocus {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;

// Shortest representation that reads back to the same double; "nan", "inf"
// and "-inf" otherwise. Independent of the C locale.
std::string format_number(double v);
std::string csv_line(const std::vector<std::string>& fields);

std::uint64_t fnv1a(std::string_view bytes);
std::string hex64(std::uint64_t v);

void write_text(const fs::path& p, const std::string& text);
std::string read_text(const fs::path& p);
json read_json(const fs::path& p);

// Raw little-endian IEEE-754 binary32 payloads.
void write_f32(const fs::path& p, const std::vector<float>& v);
void write_f32(const fs::path& p, const std::vector<double>& v);
std::vector<float> read_f32(const fs::path& p, std::size_t expected);

// Sidecars: <artifact>.json with schema version, artifact kind, config hash
// and the creation parameters.
json make_sidecar(const std::string& kind, const std::string& config_hash, json params);
void write_sidecar(const fs::path& artifact, const json& sidecar);
json read_sidecar(const fs::path& artifact, const std::string& kind);
fs::path sidecar_path(const fs::path& artifact);

json to_json(const Intrinsics& k);
Intrinsics intrinsics_from_json(const json& j);
json to_json(const Trajectory& t);
Trajectory trajectory_from_json(const json& j);
json to_json(const Ellipsoid& e);
Ellipsoid ellipsoid_from_json(const json& j);
json to_json(const Phantom& p);
Phantom phantom_from_json(const json& j);
json to_json(const MotionSplineSet& m);
MotionSplineSet splines_from_json(const json& j);
json to_json(const RigidMotion& m);

std::string profile_csv(const std::vector<RpeProfile>& profiles);
std::string trace_csv(const std::vector<TraceRow>& trace);
std::string history_csv(const std::vector<EpochRecord>& history);

// Nine slices concatenated in plane order (ax, co, sa; three each).
void write_slices(const fs::path& p, const SliceTriplets& s, const SliceSet& set, const std::string& config_hash,
                  json params);
SliceTriplets read_slices(const fs::path& p);
void write_volume(const fs::path& p, const Volume& v, const std::string& config_hash, json params);
Volume read_volume(const fs::path& p);
void write_projections(const fs::path& p, const ProjectionStack& s, const Intrinsics& k,
                       const std::string& trajectory_ref, const std::string& config_hash, json params);
ProjectionStack read_projections(const fs::path& p);

// One raw record plus sidecar (labels and metadata) per sample.
void write_dataset(const fs::path& dir, const Dataset& d, const std::string& config_hash);
Dataset read_dataset(const fs::path& dir);

}  // namespace tomofocus
