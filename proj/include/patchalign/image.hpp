#pragma once

#include <vector>

#include "patchalign/common.hpp"
#include "patchalign/tensor.hpp"

namespace patchalign {

// Row-major HxWxC, values in [0,1].
struct Image {
  int h = 0, w = 0, c = 0;
  std::vector<real> px;

  Image() = default;
  Image(int h_, int w_, int c_) : h(h_), w(w_), c(c_), px(static_cast<size_t>(h_) * w_ * c_, 0.0) {}
  real& at(int y, int x, int ch) { return px[(static_cast<size_t>(y) * w + x) * c + ch]; }
  real at(int y, int x, int ch) const { return px[(static_cast<size_t>(y) * w + x) * c + ch]; }
};

// Patch rows in grid-scan order (gy*grid_w + gx); within a patch, pixels in
// (py, px, channel) order. Output is patches x (patch_size^2 * channels).
inline Mat patchify(const Image& img, int patch_size) {
  if (img.h % patch_size != 0 || img.w % patch_size != 0)
    fail(ErrorKind::config, "image dimensions not divisible by patch size");
  const int gh = img.h / patch_size, gw = img.w / patch_size;
  const int S = patch_size * patch_size * img.c;
  Mat out(gh * gw, S);
  for (int gy = 0; gy < gh; ++gy)
    for (int gx = 0; gx < gw; ++gx) {
      real* row = out.v.data() + static_cast<size_t>(gy * gw + gx) * S;
      int i = 0;
      for (int py = 0; py < patch_size; ++py)
        for (int px_ = 0; px_ < patch_size; ++px_)
          for (int ch = 0; ch < img.c; ++ch)
            row[i++] = img.at(gy * patch_size + py, gx * patch_size + px_, ch);
    }
  return out;
}

}  // namespace patchalign
