#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ciw/metric.hpp"
#include "json.hpp"

namespace ciw {

// schema violation; path is a JSON pointer to the offending key
struct ConfigError : std::runtime_error {
    std::string path;
    ConfigError(const std::string& p, const std::string& m) : std::runtime_error(p + ": " + m), path(p) {}
};
// a module invariant failed during a run
struct RunInvariantError : std::runtime_error {
    std::string invariant;
    RunInvariantError(const std::string& name, const std::string& m)
        : std::runtime_error(name + ": " + m), invariant(name) {}
};
struct MeshError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum ExitCode { exit_ok = 0, exit_config = 2, exit_invariant = 3, exit_budget = 4 };

extern const char* const code_version;

// fills defaults and rejects unknown keys; the result is what the manifest echoes
nlohmann::json resolve_config(const nlohmann::json& raw);

struct RunResult {
    int exit_code = exit_ok;
    std::string message;
    nlohmann::json summary;           // also written as summary.json
    std::vector<std::string> files;   // relative to the output directory
};

// runs the experiment and writes manifest.json, summary.json, metrics CSVs,
// CIWF fields and OBJ meshes into out_dir; a config error leaves no files
RunResult run(const nlohmann::json& config, const std::string& out_dir,
              std::optional<std::uint64_t> seed = std::nullopt);

// OBJ export. n = 1: polyline (closed on periodic charts); n = 2: triangulated
// grid. N = 4 drops the last coordinate and says so in the returned note.
// Throws MeshError for N > 4 or degenerate triangles (area <= 1e-12).
std::string export_mesh(const ImmersionState& u, const std::string& path);

struct VerifyCheck {
    std::string name;
    bool pass = false;
    std::string detail;
};
struct VerifyReport {
    bool complete = true;   // every listed artifact present
    bool pass = false;
    std::vector<VerifyCheck> checks;
    int exit_code() const { return pass ? exit_ok : exit_invariant; }
};
// checks checksums (naming the byte offset of the first changed CSV line) and
// replays the invariants of the producing experiment from the stored artifacts
VerifyReport verify(const std::string& manifest_path);

std::string sha256_file(const std::string& path);

}  // namespace ciw
