#pragma once

#include <functional>
#include <string>

#include "asr/core.hpp"
#include "asr/rng.hpp"
#include "asr/splat_map.hpp"
#include "asr/splat_train.hpp"

namespace asr {

// Random surfel in front of the camera with tilt capped relative to the
// view ray. Grazing orientations make the ray/plane depth
// ill-conditioned, which finite differences cannot resolve at fixed h.
Surfel random_facing_surfel(Rng& rng, const CameraFrame& cam, double max_tilt_deg = 45.0);

// True when no rendering gate (footprint truncation, opacity-validity
// sentinel, transmittance early stop, normal flips) and no L1 kink
// (|I-I*|, |D-D*| or TV difference at exactly zero) sits close enough to
// its threshold for an h-sized parameter step to flip it. Finite
// differences are only meaningful away from these non-smooth sets.
bool fd_safe_configuration(const SplatMap& map, const RgbdFrame& frame, const Pose& pose,
                           const CameraIntrinsics& intr);

struct GradCheckReport {
  int scenes = 0;
  int coordinates_checked = 0;
  int failures = 0;
  double worst_rel_error = 0.0;
};

// Central-difference verification of the analytic gradients over random
// 5-surfel scenes at 8x8. Coordinates with |analytic| <= grad_floor are
// exempt from the relative test (their FD values drown in roundoff).
GradCheckReport run_gradcheck(uint64_t seed, int n_scenes, double h = 1e-4,
                              double rel_tol = 1e-3, double grad_floor = 1e-6,
                              const std::function<void(const std::string&)>& log = nullptr);

}  // namespace asr
