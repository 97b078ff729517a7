#pragma once

#include <filesystem>
#include <string>

#include "vetcode/corpus.hpp"
#include "vetcode/rng.hpp"

namespace vetcode::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    Rng rng(fnv1a64(tag) ^ static_cast<std::uint64_t>(
                              std::filesystem::file_time_type::clock::now().time_since_epoch().count()));
    path_ = std::filesystem::temp_directory_path() /
            ("vetcode_" + tag + "_" + std::to_string(rng.next() % 1000000007ULL));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline ClinicalRecord make_record(std::string id, CodeSet codes, std::string diagnosis = {},
                                  std::string assessment = {}) {
  ClinicalRecord r;
  r.record_id = std::move(id);
  r.codes = std::move(codes);
  r.section(Section::diagnosis) = std::move(diagnosis);
  r.section(Section::assessment) = std::move(assessment);
  return r;
}

}  // namespace vetcode::testing
