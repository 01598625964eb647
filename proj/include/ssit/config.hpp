#pragma once

#include <cstdint>
#include <string>

#include "ssit/augment.hpp"
#include "ssit/pretrain.hpp"
#include "ssit/vit.hpp"

namespace ssit {

// Full run configuration with defaults at desk scale. Loading rejects
// unknown keys and range-checks every value; dump/load round-trips to an
// identical run.
struct RunConfig {
  uint64_t seed = 0;
  std::string data_dir;
  std::string out_dir = "runs/default";

  std::string saliency_backend = "fine";  // "fine" | "spectral"
  std::string saliency_cache_dir;         // defaults to <out_dir>/saliency

  ViTConfig vit;          // ViT-Micro
  HeadConfig heads;       // desk heads for embed_dim 64
  ScheduleConfig sched;   // desk schedule
  size_t checkpoint_every_epochs = 10;

  double query_area_lo = 0.08, query_area_hi = 0.80;
  double key_area_lo = 0.80, key_area_hi = 1.00;

  ViewSpec query_spec() const;
  ViewSpec key_spec() const;
  void validate() const;

  static RunConfig desk_default();
  static RunConfig from_json_text(const std::string& text);
  static RunConfig load(const std::string& path);
  std::string to_json_text() const;
  void save(const std::string& path) const;
};

}  // namespace ssit
