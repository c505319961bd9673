// SPDX-License-Identifier: Apache-2.0

#include "rsr/analysis/export.hpp"

#include <cerrno>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "rsr/analysis/pca.hpp"
#include "rsr/numerics/tensor.hpp"

namespace rsr::analysis {

namespace {

constexpr const char* kCsvHeader = "image_id,layer,diffusion_t,latent_step,token_id,pc1,pc2";

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw std::runtime_error("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing: " + std::strerror(errno));
  f << text;
  f.flush();
  if (!f) throw std::runtime_error("write to " + path.string() + " failed");
}

TrajectoryRecorder::TrajectoryRecorder(std::set<std::size_t> images) : images_(std::move(images)) {}

void TrajectoryRecorder::add(std::size_t image_offset, std::size_t layer, const recursion::RecursionTrace& trace) {
  if (trace.steps.empty()) return;
  if (tokens_ == 0) {
    tokens_ = trace.tokens;
    dim_ = trace.dim;
  } else if (tokens_ != trace.tokens || dim_ != trace.dim) {
    throw ShapeError("TrajectoryRecorder: trace geometry changed between calls");
  }
  const auto block = tokens_ * dim_;
  for (std::size_t b = 0; b < trace.batch; ++b) {
    const auto image = image_offset + b;
    if (!images_.empty() && !images_.contains(image)) continue;
    auto& snaps = data_[{image, layer}];
    for (std::size_t s = 0; s < trace.steps.size(); ++s) {
      const auto& a = trace.steps[s].attn_out;
      snaps.push_back({trace.diffusion_t.at(b), static_cast<int>(s) + 1,
                       std::vector<double>(a.begin() + static_cast<long>(b * block),
                                           a.begin() + static_cast<long>((b + 1) * block))});
    }
  }
}

std::vector<TrajectoryRecord> TrajectoryRecorder::records() const {
  std::vector<TrajectoryRecord> out;
  for (const auto& [key, snaps] : data_) {
    std::vector<double> all;
    all.reserve(snaps.size() * tokens_ * dim_);
    for (const auto& s : snaps) all.insert(all.end(), s.tokens.begin(), s.tokens.end());
    const auto rows = snaps.size() * tokens_;
    auto pca = pca_fit(all, rows, dim_, 2);
    auto proj = pca.project(all, rows);
    for (std::size_t i = 0; i < snaps.size(); ++i) {
      for (std::size_t n = 0; n < tokens_; ++n) {
        const auto r = i * tokens_ + n;
        out.push_back({key.image, key.layer, snaps[i].diffusion_t, snaps[i].latent_step, n, proj[2 * r],
                       proj[2 * r + 1]});
      }
    }
  }
  return out;
}

void write_trajectories_csv(std::ostream& out, std::span<const TrajectoryRecord> records) {
  out << "#schema=rsr.trajectories/" << kTrajectorySchemaVersion << "\n" << kCsvHeader << "\n";
  for (const auto& r : records) {
    out << r.image_id << ',' << r.layer << ',' << r.diffusion_t << ',' << r.latent_step << ',' << r.token_id << ','
        << fmt_double(r.pc1) << ',' << fmt_double(r.pc2) << '\n';
  }
}

std::vector<TrajectoryRecord> read_trajectories_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "#schema=rsr.trajectories/" + std::to_string(kTrajectorySchemaVersion))
    throw std::runtime_error("trajectory CSV: missing or unsupported schema line");
  if (!std::getline(in, line) || line != kCsvHeader) throw std::runtime_error("trajectory CSV: unexpected header");
  std::vector<TrajectoryRecord> out;
  std::size_t lineno = 2;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    TrajectoryRecord r;
    std::istringstream ls(line);
    std::string f[7];
    for (auto& field : f) {
      if (!std::getline(ls, field, ',')) throw std::runtime_error("trajectory CSV line " + std::to_string(lineno) + ": too few fields");
    }
    try {
      r.image_id = std::stoull(f[0]);
      r.layer = std::stoull(f[1]);
      r.diffusion_t = std::stoi(f[2]);
      r.latent_step = std::stoi(f[3]);
      r.token_id = std::stoull(f[4]);
      r.pc1 = std::strtod(f[5].c_str(), nullptr);
      r.pc2 = std::strtod(f[6].c_str(), nullptr);
    } catch (const std::logic_error&) {
      throw std::runtime_error("trajectory CSV line " + std::to_string(lineno) + ": malformed number");
    }
    out.push_back(r);
  }
  return out;
}

void export_trajectories(std::span<const TrajectoryRecord> records, const std::filesystem::path& path) {
  std::ostringstream s;
  write_trajectories_csv(s, records);
  write_text_file(path, s.str());
}

RoutingStats::RoutingStats(std::size_t experts, int latent_steps, int diffusion_steps, std::size_t buckets)
    : experts_(experts), latent_steps_(latent_steps), diffusion_steps_(diffusion_steps), buckets_(buckets) {
  if (experts == 0 || latent_steps < 1 || diffusion_steps < 1 || buckets == 0)
    throw ConfigError("RoutingStats: experts, latent steps, diffusion steps and buckets must be positive");
  counts_.assign(buckets_ * static_cast<std::size_t>(latent_steps_) * experts_, 0);
}

std::size_t RoutingStats::index(std::size_t bucket, int step, std::size_t expert) const {
  if (bucket >= buckets_ || step < 1 || step > latent_steps_ || expert >= experts_)
    throw std::out_of_range("RoutingStats: index out of range");
  return (bucket * static_cast<std::size_t>(latent_steps_) + static_cast<std::size_t>(step - 1)) * experts_ + expert;
}

std::size_t RoutingStats::bucket_of(int t) const {
  if (t < 1 || t > diffusion_steps_) throw std::out_of_range("RoutingStats: diffusion step " + std::to_string(t));
  return static_cast<std::size_t>(t - 1) * buckets_ / static_cast<std::size_t>(diffusion_steps_);
}

void RoutingStats::add(const recursion::RecursionTrace& trace) {
  if (trace.experts != experts_) throw ConfigError("RoutingStats: trace has a different expert count");
  if (static_cast<int>(trace.steps.size()) > latent_steps_)
    throw ConfigError("RoutingStats: trace has more latent steps than configured");
  if (seen_ && (ablated_ != trace.conditioning_ablated || per_sample_ != trace.per_sample))
    throw ConfigError("RoutingStats: traces mix gate conditioning modes or granularities");
  seen_ = true;
  ablated_ = trace.conditioning_ablated;
  per_sample_ = trace.per_sample;
  const std::size_t per_row = trace.per_sample ? 1 : trace.tokens;
  for (std::size_t s = 0; s < trace.steps.size(); ++s) {
    const auto& sel = trace.steps[s].selected;
    for (std::size_t r = 0; r < sel.size(); ++r) {
      const auto b = bucket_of(trace.diffusion_t.at(r / per_row));
      ++counts_[index(b, static_cast<int>(s) + 1, static_cast<std::size_t>(sel[r]))];
      ++routed_;
    }
  }
}

long RoutingStats::count(std::size_t bucket, int step, std::size_t expert) const {
  return counts_[index(bucket, step, expert)];
}

long RoutingStats::total(std::size_t bucket, int step) const {
  long n = 0;
  for (std::size_t e = 0; e < experts_; ++e) n += count(bucket, step, e);
  return n;
}

double RoutingStats::frequency(std::size_t bucket, int step, std::size_t expert) const {
  const long n = total(bucket, step);
  return n == 0 ? 0.0 : static_cast<double>(count(bucket, step, expert)) / static_cast<double>(n);
}

std::string RoutingStats::to_json() const {
  using nlohmann::ordered_json;
  ordered_json j;
  j["schema_version"] = kRoutingSchemaVersion;
  j["kind"] = "routing_stats";
  j["experts"] = experts_;
  j["latent_steps"] = latent_steps_;
  j["diffusion_steps"] = diffusion_steps_;
  j["buckets"] = buckets_;
  j["granularity"] = per_sample_ ? "sample" : "token";
  j["ablation"] = ablated_ ? "vision_tokens_only" : "none";
  j["routed"] = routed_;
  auto entries = ordered_json::array();
  for (std::size_t b = 0; b < buckets_; ++b) {
    // inclusive t range of the bucket
    int lo = diffusion_steps_ + 1, hi = 0;
    for (int t = 1; t <= diffusion_steps_; ++t) {
      if (bucket_of(t) == b) {
        lo = std::min(lo, t);
        hi = std::max(hi, t);
      }
    }
    for (int s = 1; s <= latent_steps_; ++s) {
      for (std::size_t e = 0; e < experts_; ++e) {
        ordered_json row;
        row["bucket"] = b;
        row["t_min"] = lo;
        row["t_max"] = hi;
        row["latent_step"] = s;
        row["expert"] = e;
        row["count"] = count(b, s, e);
        row["frequency"] = frequency(b, s, e);
        entries.push_back(std::move(row));
      }
    }
  }
  j["entries"] = std::move(entries);
  return j.dump(2) + "\n";
}

RoutingStats routing_stats(std::span<const recursion::RecursionTrace> traces, std::size_t buckets) {
  if (traces.empty()) throw ConfigError("routing_stats: no traces");
  int steps = 0;
  for (const auto& t : traces) steps = std::max(steps, static_cast<int>(t.steps.size()));
  RoutingStats stats(traces.front().experts, std::max(steps, 1), traces.front().diffusion_steps, buckets);
  for (const auto& t : traces) stats.add(t);
  return stats;
}

void export_routing_stats(const RoutingStats& stats, const std::filesystem::path& path) {
  write_text_file(path, stats.to_json());
}

}  // namespace rsr::analysis
