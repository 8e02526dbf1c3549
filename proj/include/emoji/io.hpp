#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>

#include "emoji/errors.hpp"

namespace emoji {

/// Writes `bytes` to a sibling temporary file, then renames it over `path`,
/// so readers never observe a half-written file.
inline void write_file_atomic(const std::string& path, std::string_view bytes) {
  const std::filesystem::path target(path);
  if (target.has_parent_path() && !std::filesystem::exists(target.parent_path()))
    throw InputError("output directory does not exist: " + target.parent_path().string());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw InputError("failed writing " + path);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, target, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw InputError("cannot move output into place: " + path);
  }
}

}  // namespace emoji
