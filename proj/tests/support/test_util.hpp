#pragma once

#include <string>
#include <vector>

#include "incdet/detector.hpp"
#include "incdet/image.hpp"
#include "incdet/rng.hpp"

namespace testutil {

/// Small single-level model (~1k parameters) for unit and gradient tests.
inline incdet::DetectorModel tiny_model(int num_classes = 3, std::uint64_t seed = 1,
                                        int scales = 1) {
  incdet::DetectorArch arch;
  arch.stem_channels = 2;
  arch.stage_channels = {3, 4};
  arch.feature_channels = 4;
  arch.head_channels = 4;
  incdet::AnchorConfig ac;
  ac.strides = {8};
  ac.scales.clear();
  for (int s = 0; s < scales; ++s) ac.scales.push_back(2.0 + s);
  ac.ratios = {1.0};
  std::vector<std::string> labels;
  for (int i = 0; i < num_classes; ++i) labels.push_back("c" + std::to_string(i));
  return incdet::DetectorModel::create(arch, ac, labels, seed);
}

/// Two-level variant exercising the multi-level code paths.
inline incdet::DetectorModel tiny_model_two_level(int num_classes = 3, std::uint64_t seed = 1) {
  incdet::DetectorArch arch;
  arch.stem_channels = 2;
  arch.stage_channels = {3, 4};
  arch.feature_channels = 4;
  arch.head_channels = 4;
  incdet::AnchorConfig ac;
  ac.strides = {4, 8};
  ac.scales = {2.0};
  ac.ratios = {1.0};
  std::vector<std::string> labels;
  for (int i = 0; i < num_classes; ++i) labels.push_back("c" + std::to_string(i));
  return incdet::DetectorModel::create(arch, ac, labels, seed);
}

inline incdet::Image random_image(int w, int h, incdet::Rng& rng) {
  incdet::Image img(w, h);
  for (auto& v : img.rgb) v = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
  return img;
}

inline void zero_conv(incdet::Conv& c) {
  c.w.fill(0.0);
  c.b.fill(0.0);
}

inline std::size_t param_count(incdet::DetectorModel& m) {
  std::size_t n = 0;
  for (const incdet::Tensor* t : m.parameters()) n += t->size();
  return n;
}

}  // namespace testutil
