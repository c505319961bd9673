// SPDX-License-Identifier: Apache-2.0
//
// Latent-trajectory and routing-statistics export from recursion traces.

#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "rsr/recursion/recursion.hpp"

namespace rsr::analysis {

inline constexpr int kTrajectorySchemaVersion = 1;
inline constexpr int kRoutingSchemaVersion = 1;

struct TrajectoryRecord {
  std::size_t image_id = 0;
  std::size_t layer = 0;  // 0-based block index
  int diffusion_t = 0;
  int latent_step = 0;  // 1-based
  std::size_t token_id = 0;
  double pc1 = 0.0, pc2 = 0.0;

  bool operator==(const TrajectoryRecord&) const = default;
};

/// Keeps the per-step attention outputs of selected images and projects them
/// onto a 2-component basis fitted over all of one image's token vectors
/// (every diffusion step and latent step of that layer).
class TrajectoryRecorder {
 public:
  /// Empty `images` keeps every image.
  explicit TrajectoryRecorder(std::set<std::size_t> images = {});

  /// `image_offset` is the global id of the trace's first sample.
  void add(std::size_t image_offset, std::size_t layer, const recursion::RecursionTrace& trace);
  std::vector<TrajectoryRecord> records() const;

 private:
  struct Key {
    std::size_t image, layer;
    auto operator<=>(const Key&) const = default;
  };
  struct Snapshot {
    int diffusion_t;
    int latent_step;
    std::vector<double> tokens;  // tokens x dim
  };
  std::set<std::size_t> images_;
  std::size_t tokens_ = 0, dim_ = 0;
  std::map<Key, std::vector<Snapshot>> data_;
};

void write_trajectories_csv(std::ostream& out, std::span<const TrajectoryRecord> records);
std::vector<TrajectoryRecord> read_trajectories_csv(std::istream& in);
void export_trajectories(std::span<const TrajectoryRecord> records, const std::filesystem::path& path);

/// Selection counts per (diffusion-time bucket, latent step, expert).
/// Bucket b covers t with floor((t-1) * buckets / T) == b.
class RoutingStats {
 public:
  RoutingStats(std::size_t experts, int latent_steps, int diffusion_steps, std::size_t buckets = 10);

  void add(const recursion::RecursionTrace& trace);

  std::size_t bucket_of(int t) const;
  long count(std::size_t bucket, int step, std::size_t expert) const;
  long total(std::size_t bucket, int step) const;
  /// 0 for an empty (bucket, step).
  double frequency(std::size_t bucket, int step, std::size_t expert) const;
  long routed() const { return routed_; }

  std::size_t experts() const { return experts_; }
  std::size_t buckets() const { return buckets_; }
  int latent_steps() const { return latent_steps_; }
  bool ablated() const { return ablated_; }

  std::string to_json() const;

 private:
  std::size_t index(std::size_t bucket, int step, std::size_t expert) const;
  std::size_t experts_;
  int latent_steps_;
  int diffusion_steps_;
  std::size_t buckets_;
  std::vector<long> counts_;
  long routed_ = 0;
  bool ablated_ = false;
  bool per_sample_ = false;
  bool seen_ = false;
};

RoutingStats routing_stats(std::span<const recursion::RecursionTrace> traces, std::size_t buckets = 10);
void export_routing_stats(const RoutingStats& stats, const std::filesystem::path& path);

/// Writes `text` to `path`, creating parent directories. Throws
/// std::runtime_error naming the path on failure.
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace rsr::analysis
