#pragma once

#include <unistd.h>

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "red/dataset.hpp"
#include "red/rng.hpp"

namespace fixture {

// One-dimensional dataset where trajectory j has the given rewards; the
// observation is the step index, the action is 0, the last step terminates.
inline red::OfflineDataset from_rewards(const std::vector<std::vector<double>>& trajectories,
                                        bool timeout_ends = false) {
  red::DatasetBuilder b({1, red::ActionSpace::discrete(2), "test", 0});
  for (const auto& rewards : trajectories) {
    for (std::size_t t = 0; t < rewards.size(); ++t) {
      const double o = static_cast<double>(t);
      const double a = 0.0, o2 = o + 1;
      const bool last = t + 1 == rewards.size();
      b.add({&o, 1}, {&a, 1}, rewards[t], {&o2, 1}, last && !timeout_ends, last && timeout_ends);
    }
  }
  return std::move(b).build();
}

// Single-transition trajectories with the given returns.
inline red::OfflineDataset from_returns(const std::vector<double>& returns) {
  std::vector<std::vector<double>> t;
  for (double r : returns) t.push_back({r});
  return from_rewards(t);
}

inline std::vector<double> random_weights(red::Rng& rng, std::size_t n, double zero_fraction) {
  std::vector<double> w(n);
  for (auto& x : w) x = rng.uniform() < zero_fraction ? 0.0 : rng.uniform() * 10.0;
  return w;
}

// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    red::Rng rng(std::hash<std::string>{}(tag) ^ static_cast<std::uint64_t>(::getpid()));
    path_ = std::filesystem::temp_directory_path() / ("red_test_" + tag + "_" + std::to_string(rng.next_u64()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace fixture
