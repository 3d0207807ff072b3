#pragma once

#include <string>

#include "lgc/common.hpp"

namespace lgc::codec {

// Architecture hyperparameters of one codec instance. Every rate point is a
// separately constructed (and trained) model; truncate_channels produces the
// config for a narrower sibling.
struct CodecConfig {
  int height = 64;
  int width = 64;
  int c1 = 16;              // channels of the reconstruction latent z1
  int c2 = 8;               // length of the semantic vector z2
  int downscale = 16;       // spatial reduction of the reconstruction encoder
  int hyper_downscale = 4;  // further reduction to the hyperlatent
  int base_width = 32;      // conv width multiplier
  double sigma_min = 1e-4;  // floor for conditional scales

  void validate() const {
    check_config(height > 0 && width > 0, "image size must be positive");
    check_config(downscale == 16 && hyper_downscale == 4,
                 "unsupported downscale factors");
    const int unit = downscale * hyper_downscale;
    check_config(height % unit == 0 && width % unit == 0,
                 "image size must be divisible by " + std::to_string(unit));
    check_config(c1 == 8 || c1 == 16 || c1 == 64 || c1 == 128,
                 "c1 must be one of {8, 16, 64, 128}");
    check_config(c2 >= 1, "c2 must be positive");
    check_config(base_width >= 2 && base_width % 2 == 0,
                 "base_width must be a positive even number");
    check_config(sigma_min > 0.0, "sigma_min must be positive");
  }

  CodecConfig truncate_channels(int new_c1) const {
    CodecConfig out = *this;
    out.c1 = new_c1;
    out.validate();
    return out;
  }

  int latent_height() const { return height / downscale; }
  int latent_width() const { return width / downscale; }
  int hyper_height() const { return latent_height() / hyper_downscale; }
  int hyper_width() const { return latent_width() / hyper_downscale; }
  int decoder_width() const { return 4 * base_width; }  // resblock channels

  void feed_digest(Fnv1a64& h) const {
    for (int v : {height, width, c1, c2, downscale, hyper_downscale, base_width})
      h.update_value(static_cast<int32_t>(v));
    h.update_value(sigma_min);
  }

  bool operator==(const CodecConfig&) const = default;
};

}  // namespace lgc::codec
