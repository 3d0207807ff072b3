#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "lgc/data/image_io.hpp"

namespace lgc::data {

// Directory layout consumed here (the toy generator writes the same shape,
// and a converted CelebAMask-HQ-style dump drops in unchanged):
//   root/dataset.txt        key=value: image_size, num_attributes,
//                           num_seg_classes, attribute_names, class_names
//   root/attributes.txt     "<name> b0 b1 ... b{C-1}" per image
//   root/splits/{train,val,test}.txt   one image name per line
//   root/images/<name>.ppm  root/masks/<name>.pgm
struct DatasetManifest {
  std::string root;
  int image_size = 0;
  int num_attributes = 0;
  int num_seg_classes = 0;
  std::vector<std::string> attribute_names;
  std::vector<std::string> class_names;
};

struct DatasetItem {
  std::string name;
  nn::TensorF image;        // (3, H, W)
  nn::TensorI mask;         // (H, W)
  std::vector<float> attrs;  // num_attributes entries of 0/1
};

namespace detail {

inline std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

}  // namespace detail

inline DatasetManifest load_manifest(const std::string& root) {
  namespace fs = std::filesystem;
  const std::string path = (fs::path(root) / "dataset.txt").string();
  std::ifstream f(path);
  if (!f) throw IoError("cannot open manifest: " + path);
  DatasetManifest m;
  m.root = root;
  std::string line;
  std::map<std::string, std::string> kv;
  while (std::getline(f, line)) {
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw ValidationError("manifest line without '=': " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  try {
    m.image_size = std::stoi(kv.at("image_size"));
    m.num_attributes = std::stoi(kv.at("num_attributes"));
    m.num_seg_classes = std::stoi(kv.at("num_seg_classes"));
  } catch (const std::exception&) {
    throw ValidationError("manifest missing image_size/num_attributes/num_seg_classes: " + path);
  }
  if (kv.count("attribute_names")) m.attribute_names = detail::split_commas(kv["attribute_names"]);
  if (kv.count("class_names")) m.class_names = detail::split_commas(kv["class_names"]);
  if (m.image_size <= 0 || m.num_attributes < 1 || m.num_seg_classes < 2)
    throw ValidationError("manifest values out of range: " + path);
  if (!m.attribute_names.empty() &&
      m.attribute_names.size() != static_cast<size_t>(m.num_attributes))
    throw ValidationError("attribute_names count mismatches num_attributes: " + path);
  if (!m.class_names.empty() && m.class_names.size() != static_cast<size_t>(m.num_seg_classes))
    throw ValidationError("class_names count mismatches num_seg_classes: " + path);
  return m;
}

inline std::vector<std::string> load_split(const DatasetManifest& m, const std::string& split) {
  namespace fs = std::filesystem;
  const std::string path = (fs::path(m.root) / "splits" / (split + ".txt")).string();
  std::ifstream f(path);
  if (!f) throw IoError("cannot open split list: " + path);
  std::vector<std::string> names;
  std::string line;
  while (std::getline(f, line))
    if (!line.empty()) names.push_back(line);
  return names;
}

// Loads one split, validating every item; all problems are collected and
// reported together, each naming the offending file.
inline std::vector<DatasetItem> load_dataset(const DatasetManifest& m, const std::string& split) {
  namespace fs = std::filesystem;
  auto names = load_split(m, split);

  // attribute table
  std::map<std::string, std::vector<float>> attr_table;
  {
    const std::string path = (fs::path(m.root) / "attributes.txt").string();
    std::ifstream f(path);
    if (!f) throw IoError("cannot open attribute table: " + path);
    std::string line;
    while (std::getline(f, line)) {
      if (line.empty()) continue;
      std::istringstream ss(line);
      std::string name;
      ss >> name;
      std::vector<float> a;
      int v;
      while (ss >> v) a.push_back(static_cast<float>(v));
      attr_table[name] = std::move(a);
    }
  }

  std::vector<DatasetItem> items;
  std::vector<std::string> problems;
  auto complain = [&](const std::string& msg) {
    if (problems.size() < 20) problems.push_back(msg);
  };

  for (const auto& name : names) {
    const std::string img_path = (fs::path(m.root) / "images" / (name + ".ppm")).string();
    const std::string mask_path = (fs::path(m.root) / "masks" / (name + ".pgm")).string();
    DatasetItem item;
    item.name = name;

    auto at = attr_table.find(name);
    if (at == attr_table.end()) {
      complain(name + ": no row in attributes.txt");
      continue;
    }
    if (at->second.size() != static_cast<size_t>(m.num_attributes)) {
      complain(name + ": expected " + std::to_string(m.num_attributes) + " attributes, got " +
               std::to_string(at->second.size()));
      continue;
    }
    bool binary = true;
    for (float v : at->second) binary = binary && (v == 0.0f || v == 1.0f);
    if (!binary) {
      complain(name + ": attribute labels must be 0/1");
      continue;
    }
    item.attrs = at->second;

    try {
      item.image = read_ppm(img_path);
    } catch (const Error& e) {
      complain(img_path + ": " + e.what());
      continue;
    }
    try {
      item.mask = read_pgm(mask_path);
    } catch (const Error& e) {
      complain(mask_path + ": " + e.what());
      continue;
    }
    if (item.image.dim(1) != m.image_size || item.image.dim(2) != m.image_size) {
      complain(img_path + ": image is " + std::to_string(item.image.dim(2)) + "x" +
               std::to_string(item.image.dim(1)) + ", manifest says " +
               std::to_string(m.image_size));
      continue;
    }
    if (item.mask.dim(0) != item.image.dim(1) || item.mask.dim(1) != item.image.dim(2)) {
      complain(mask_path + ": mask size mismatches its image");
      continue;
    }
    bool classes_ok = true;
    for (int64_t i = 0; i < item.mask.numel() && classes_ok; i++)
      classes_ok = item.mask[i] >= 0 && item.mask[i] < m.num_seg_classes;
    if (!classes_ok) {
      complain(mask_path + ": class index out of range [0," +
               std::to_string(m.num_seg_classes) + ")");
      continue;
    }
    items.push_back(std::move(item));
  }

  if (!problems.empty()) {
    std::string msg = "dataset split '" + split + "' failed validation (" +
                      std::to_string(problems.size()) + " problem(s)):";
    for (const auto& p : problems) msg += "\n  - " + p;
    throw ValidationError(msg);
  }
  return items;
}

}  // namespace lgc::data
