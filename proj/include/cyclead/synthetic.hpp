#pragma once

// Procedural defect datasets for desk-scale experiments: textured normal
// backgrounds and abnormal copies carrying exactly one injected defect with a
// retained ground-truth mask.

#include <cstdint>
#include <string>

#include "cyclead/dataset.hpp"

namespace cyclead {

enum class DefectKind { blob, crack, scratch };
enum class BackgroundKind { stripes, checker, noise };

std::string to_string(DefectKind k);
std::string to_string(BackgroundKind k);
DefectKind defect_kind_from_string(const std::string& s);
BackgroundKind background_kind_from_string(const std::string& s);

struct SyntheticSpec {
  int resolution = 32;
  int channels = 3;
  int n_normal = 100;
  int n_abnormal = 100;
  DefectKind defect = DefectKind::blob;
  double contrast = 0.8;       // 0 leaves the background untouched
  double size_fraction = 0.15; // defect area is about size_fraction^2 of the image
  BackgroundKind background = BackgroundKind::stripes;
  std::uint64_t seed = 0;

  void validate() const;
};

Image render_background(BackgroundKind kind, int resolution, int channels, std::uint64_t seed);
DefectMask render_defect_mask(DefectKind kind, int resolution, double size_fraction,
                              std::uint64_t seed);
// Pulls masked pixels towards black or white (whichever is further from the
// local background) by `contrast`.
Image inject_defect(const Image& background, const DefectMask& mask, double contrast);

LabeledImageSet synthesize_toy_dataset(const SyntheticSpec& spec);

}  // namespace cyclead
