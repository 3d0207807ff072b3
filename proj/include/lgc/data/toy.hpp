#pragma once

#include <array>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "lgc/data/image_io.hpp"
#include "lgc/rng.hpp"

namespace lgc::data {

// Synthetic face-like dataset: every image is a deterministic composite of
// ellipse structures, the mask is the exact rasterization record of the five
// semantic classes, and each binary attribute controls one visible structure.
// Same spec -> byte-identical files.
struct ToyDatasetSpec {
  uint64_t seed = 0;
  int image_size = 64;  // 64 or 256
  int train_count = 500;
  int val_count = 0;
  int test_count = 100;

  int count() const { return train_count + val_count + test_count; }

  void validate() const {
    check_config(image_size == 64 || image_size == 256, "toy image size must be 64 or 256");
    check_config(train_count >= 0 && val_count >= 0 && test_count >= 0 && count() > 0,
                 "toy dataset needs a positive image count");
  }
};

inline constexpr int kToyAttributes = 8;
inline constexpr int kToySegClasses = 5;

inline const std::array<std::string, kToyAttributes>& toy_attribute_names() {
  static const std::array<std::string, kToyAttributes> names = {
      "hair", "glasses", "smile", "pale_skin", "big_eyes", "round_face", "earring", "hat"};
  return names;
}

inline const std::array<std::string, kToySegClasses>& toy_class_names() {
  static const std::array<std::string, kToySegClasses> names = {"background", "skin", "hair",
                                                                "eyes", "mouth"};
  return names;
}

struct ToyItem {
  std::string name;
  nn::TensorF image;        // (3, s, s) in [0,1]
  nn::TensorI mask;         // (s, s) class indices
  std::vector<float> attrs;  // kToyAttributes entries of 0/1
  // rasterization record: pixels touched by each optional structure
  int hair_pixels = 0, glasses_pixels = 0, earring_pixels = 0, hat_pixels = 0;
};

namespace toy_detail {

struct Rgb {
  double r, g, b;
};

inline Rgb jitter(Rgb c, Rng& rng, double amount) {
  return {c.r + rng.uniform(-amount, amount), c.g + rng.uniform(-amount, amount),
          c.b + rng.uniform(-amount, amount)};
}

inline bool in_ellipse(double x, double y, double cx, double cy, double rx, double ry) {
  double dx = (x - cx) / rx, dy = (y - cy) / ry;
  return dx * dx + dy * dy <= 1.0;
}

}  // namespace toy_detail

// Exactly half of each attribute column is positive (odd counts round down),
// shuffled by a per-attribute child stream.
inline std::vector<std::vector<float>> balanced_toy_attributes(const ToyDatasetSpec& spec) {
  Rng root(spec.seed);
  const int n = spec.count();
  std::vector<std::vector<float>> attrs(static_cast<size_t>(n),
                                        std::vector<float>(kToyAttributes, 0.0f));
  for (int a = 0; a < kToyAttributes; a++) {
    std::vector<int> order(static_cast<size_t>(n));
    for (int i = 0; i < n; i++) order[static_cast<size_t>(i)] = i;
    Rng r = root.child(100 + static_cast<uint64_t>(a));
    r.shuffle(order.begin(), order.end());
    for (int i = 0; i < n / 2; i++)
      attrs[static_cast<size_t>(order[static_cast<size_t>(i)])][static_cast<size_t>(a)] = 1.0f;
  }
  return attrs;
}

inline ToyItem generate_toy_item(const ToyDatasetSpec& spec, int index,
                                 const std::vector<float>& attrs) {
  using toy_detail::Rgb;
  using toy_detail::in_ellipse;
  const int s = spec.image_size;
  Rng root(spec.seed);
  Rng rng = root.child(2000 + static_cast<uint64_t>(index));

  const bool hair = attrs[0] > 0.5f, glasses = attrs[1] > 0.5f, smile = attrs[2] > 0.5f;
  const bool pale = attrs[3] > 0.5f, big_eyes = attrs[4] > 0.5f, round_face = attrs[5] > 0.5f;
  const bool earring = attrs[6] > 0.5f, hat = attrs[7] > 0.5f;

  // per-image geometry (normalized coordinates) and palette
  const double cx = 0.5 + rng.uniform(-0.02, 0.02);
  const double cy = 0.55 + rng.uniform(-0.02, 0.02);
  const double rx = 0.26 + rng.uniform(-0.02, 0.02);
  const double ry = round_face ? rx * (1.02 + rng.uniform(-0.03, 0.03))
                               : rx * (1.32 + rng.uniform(-0.06, 0.06));
  const double eye_r = 0.045 * (big_eyes ? 1.7 : 1.0) * (1.0 + rng.uniform(-0.1, 0.1));
  const double eye_dx = 0.38 * rx, eye_dy = 0.25 * ry;

  Rgb bg_top = toy_detail::jitter({0.55, 0.62, 0.70}, rng, 0.05);
  Rgb bg_bot = toy_detail::jitter({0.35, 0.42, 0.52}, rng, 0.05);
  Rgb skin = toy_detail::jitter(pale ? Rgb{0.91, 0.80, 0.72} : Rgb{0.66, 0.50, 0.38}, rng, 0.03);
  Rgb hair_c = toy_detail::jitter({0.25, 0.16, 0.10}, rng, 0.08);
  Rgb eye_c = toy_detail::jitter({0.12, 0.18, 0.40}, rng, 0.05);
  Rgb mouth_c = toy_detail::jitter({0.75, 0.25, 0.30}, rng, 0.05);
  Rgb hat_c = toy_detail::jitter({0.55, 0.12, 0.15}, rng, 0.06);
  const Rgb glass_c = {0.06, 0.06, 0.08};
  const Rgb ring_c = {0.95, 0.83, 0.25};

  ToyItem item;
  char buf[16];
  std::snprintf(buf, sizeof(buf), "img%05d", index);
  item.name = buf;
  item.attrs = attrs;
  item.image = nn::TensorF({3, s, s});
  item.mask = nn::TensorI({s, s});

  const double hair_ry = ry * 1.22, hair_cy = cy - 0.10;
  const double mouth_cy = cy + 0.45 * ry;
  const double mouth_rx = (smile ? 0.48 : 0.22) * rx;
  const double mouth_ry = (smile ? 0.10 : 0.16) * ry * 0.8;
  const double glass_in = eye_r * 1.25, glass_out = eye_r * 1.55;
  const double ear_y = cy + 0.12 * ry, ear_r = 0.030;
  const double hat_y = cy - ry * 1.12, hat_hh = 0.045, hat_hw = rx * 1.35;

  for (int py = 0; py < s; py++) {
    for (int px = 0; px < s; px++) {
      const double x = (px + 0.5) / s, y = (py + 0.5) / s;
      Rgb col = {bg_top.r + (bg_bot.r - bg_top.r) * y, bg_top.g + (bg_bot.g - bg_top.g) * y,
                 bg_top.b + (bg_bot.b - bg_top.b) * y};
      int cls = 0;

      if (hair && in_ellipse(x, y, cx, hair_cy, rx * 1.18, hair_ry)) {
        col = hair_c;
        cls = 2;
        item.hair_pixels++;
      }
      if (in_ellipse(x, y, cx, cy, rx, ry)) {
        col = skin;
        cls = 1;
      }
      bool left_eye = in_ellipse(x, y, cx - eye_dx, cy - eye_dy, eye_r * 1.15, eye_r);
      bool right_eye = in_ellipse(x, y, cx + eye_dx, cy - eye_dy, eye_r * 1.15, eye_r);
      if (left_eye || right_eye) {
        col = eye_c;
        cls = 3;
      }
      bool in_mouth = in_ellipse(x, y, cx, mouth_cy, mouth_rx, mouth_ry);
      if (in_mouth && (!smile || y >= mouth_cy)) {  // a smile keeps only the lower arc
        col = mouth_c;
        cls = 4;
      }

      // image-only structures (mask keeps the class underneath)
      if (glasses) {
        bool ring = false;
        for (double ex : {cx - eye_dx, cx + eye_dx}) {
          if (in_ellipse(x, y, ex, cy - eye_dy, glass_out * 1.15, glass_out) &&
              !in_ellipse(x, y, ex, cy - eye_dy, glass_in * 1.15, glass_in))
            ring = true;
        }
        bool bridge = std::abs(y - (cy - eye_dy)) < 0.012 && std::abs(x - cx) < eye_dx - glass_in;
        if (ring || bridge) {
          col = glass_c;
          item.glasses_pixels++;
        }
      }
      if (earring) {
        for (double ex : {cx - rx * 1.04, cx + rx * 1.04}) {
          if (in_ellipse(x, y, ex, ear_y, ear_r, ear_r)) {
            col = ring_c;
            item.earring_pixels++;
          }
        }
      }
      if (hat && std::abs(y - hat_y) <= hat_hh && std::abs(x - cx) <= hat_hw) {
        col = hat_c;
        item.hat_pixels++;
      }

      const double nr = rng.uniform(-0.02, 0.02), ng = rng.uniform(-0.02, 0.02),
                   nb = rng.uniform(-0.02, 0.02);
      auto clamp01 = [](double v) { return std::min(1.0, std::max(0.0, v)); };
      const int64_t at = static_cast<int64_t>(py) * s + px;
      item.image[0 * s * s + at] = static_cast<float>(clamp01(col.r + nr));
      item.image[1 * s * s + at] = static_cast<float>(clamp01(col.g + ng));
      item.image[2 * s * s + at] = static_cast<float>(clamp01(col.b + nb));
      item.mask[at] = cls;
    }
  }
  return item;
}

inline std::vector<ToyItem> generate_toy_items(const ToyDatasetSpec& spec) {
  spec.validate();
  auto attrs = balanced_toy_attributes(spec);
  std::vector<ToyItem> items;
  items.reserve(static_cast<size_t>(spec.count()));
  for (int i = 0; i < spec.count(); i++)
    items.push_back(generate_toy_item(spec, i, attrs[static_cast<size_t>(i)]));
  return items;
}

// Writes images/, masks/, splits/, attributes.txt, record.txt, dataset.txt.
inline void write_toy_dataset(const ToyDatasetSpec& spec, const std::string& root) {
  spec.validate();
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(root) / "images");
  fs::create_directories(fs::path(root) / "masks");
  fs::create_directories(fs::path(root) / "splits");

  auto items = generate_toy_items(spec);
  std::ofstream attr_f((fs::path(root) / "attributes.txt").string(), std::ios::trunc);
  std::ofstream rec_f((fs::path(root) / "record.txt").string(), std::ios::trunc);
  if (!attr_f || !rec_f) throw IoError("cannot write dataset metadata under " + root);
  for (const auto& it : items) {
    write_ppm((fs::path(root) / "images" / (it.name + ".ppm")).string(), it.image);
    write_pgm((fs::path(root) / "masks" / (it.name + ".pgm")).string(), it.mask);
    attr_f << it.name;
    for (float a : it.attrs) attr_f << " " << (a > 0.5f ? 1 : 0);
    attr_f << "\n";
    rec_f << it.name << " hair=" << it.hair_pixels << " glasses=" << it.glasses_pixels
          << " earring=" << it.earring_pixels << " hat=" << it.hat_pixels << "\n";
  }

  auto write_split = [&](const char* split, int begin, int end) {
    std::ofstream f((fs::path(root) / "splits" / (std::string(split) + ".txt")).string(),
                    std::ios::trunc);
    if (!f) throw IoError(std::string("cannot write split file: ") + split);
    for (int i = begin; i < end; i++) f << items[static_cast<size_t>(i)].name << "\n";
  };
  write_split("train", 0, spec.train_count);
  write_split("val", spec.train_count, spec.train_count + spec.val_count);
  write_split("test", spec.train_count + spec.val_count, spec.count());

  std::ofstream man((fs::path(root) / "dataset.txt").string(), std::ios::trunc);
  if (!man) throw IoError("cannot write dataset.txt under " + root);
  man << "image_size=" << spec.image_size << "\n";
  man << "num_attributes=" << kToyAttributes << "\n";
  man << "num_seg_classes=" << kToySegClasses << "\n";
  man << "attribute_names=";
  for (int a = 0; a < kToyAttributes; a++)
    man << (a ? "," : "") << toy_attribute_names()[static_cast<size_t>(a)];
  man << "\nclass_names=";
  for (int c = 0; c < kToySegClasses; c++)
    man << (c ? "," : "") << toy_class_names()[static_cast<size_t>(c)];
  man << "\n";
}

}  // namespace lgc::data
