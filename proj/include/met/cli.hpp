#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"
#include "met/config.hpp"

namespace met::cli {

namespace fs = std::filesystem;

enum ExitCode { kOk = 0, kDataError = 1, kConfigError = 2, kNumericalError = 3 };

/// Exit code for an exception escaping a command.
int exit_code(const std::exception& e);

/// `shapes/*.{off,obj}` + `labels/<stem>.{txt,seg}` -> one `<stem>.sample` per
/// mesh. Stems listed in an optional `split.json` ({"train": [...], "test":
/// [...]}) go to the matching subdirectory. Returns the number of failures.
int cmd_preprocess(const fs::path& in_dir, const fs::path& out_dir, const RunConfig& cfg, std::ostream& out);

/// Trains a 32-bit model; writes the best checkpoint and `metrics.jsonl` into `out_dir`.
void cmd_train(const fs::path& samples_dir, const RunConfig& cfg, const fs::path& out_dir, std::ostream& out);

nlohmann::json cmd_eval(const fs::path& samples_dir, const fs::path& checkpoint);

/// Preprocesses one mesh with the checkpoint's settings and writes the
/// predicted segmentation as a face-colored PLY of the simplified mesh.
/// With `labels_path`, the returned JSON also holds the area accuracy.
nlohmann::json cmd_segment(const fs::path& mesh_path, const fs::path& checkpoint, const fs::path& out_ply,
                           const fs::path& labels_path = {});

/// eigen_<k>.ply for the first `eigenvectors` features, clusters.ply, stats.json.
nlohmann::json cmd_inspect(const fs::path& mesh_path, const RunConfig& cfg, const fs::path& out_dir, int eigenvectors);

/// Linear blue-white-red map of `x` over [lo, hi].
Rgb diverging_color(double x, double lo, double hi);

/// Full command line (without the program name).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace met::cli
