#pragma once

#include <vector>

#include "lostgan/autograd.hpp"
#include "lostgan/isla_norm.hpp"

namespace lostgan {

// Quantisation-free crop of N x H x W x C features at normalised boxes.
// Each of the k x k output bins averages ratio x ratio bilinear samples taken
// at regularly spaced points inside the bin; sample coordinates use the
// pixel-centre convention (continuous coordinate minus one half), and points
// beyond one pixel outside the map contribute zero. Result: R x k x k x C.
ag::Var roi_align(const ag::Var& features, const std::vector<isla::ObjectPlacement>& rois, int output_size,
                  int sampling_ratio);

}  // namespace lostgan
