#include "swiden/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "swiden/binio.hpp"

namespace swiden {

namespace fs = std::filesystem;

std::string style_name(std::size_t style) {
  if (style == kPhotoStyle) return "photo";
  if (style == kArtStyle) return "art";
  return "style" + std::to_string(style);
}

void Dataset::validate() const {
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& im = images[i];
    const std::string where = "image " + std::to_string(i);
    if (im.class_id >= class_names.size()) throw DataError(where + ": class id out of range");
    if (im.style_id >= num_styles) throw DataError(where + ": style id out of range");
    if (im.pixels.rank() != 3 || im.pixels.dim(0) != 3) throw DataError(where + ": pixels must be [3,H,W]");
    for (double v : im.pixels.data())
      if (!(v >= 0.0 && v <= 1.0)) throw DataError(where + ": pixel outside [0,1]");
    if (im.bbox) {
      const auto& b = *im.bbox;
      if (b.x < 0 || b.y < 0 || b.w < 0 || b.h < 0 || b.x + b.w > static_cast<int>(im.width()) ||
          b.y + b.h > static_cast<int>(im.height()))
        throw DataError(where + ": bbox outside image bounds");
    }
  }
}

// ---------------------------------------------------------------- splits

std::vector<Split> make_splits(const Dataset& ds, const SplitSpec& spec, std::size_t num_splits) {
  if (num_splits == 0) throw ConfigError("num_splits must be >= 1");
  const std::size_t styles = ds.num_styles, classes = ds.class_names.size();
  std::vector<std::vector<std::size_t>> cells(classes * styles);
  for (std::size_t i = 0; i < ds.images.size(); ++i)
    cells.at(ds.images[i].class_id * styles + ds.images[i].style_id).push_back(i);
  const std::size_t need = spec.train_per_style + spec.test_per_style;
  for (std::size_t c = 0; c < cells.size(); ++c)
    if (cells[c].size() < need)
      throw DataError("class " + ds.class_names[c / styles] + " / " + style_name(c % styles) + " has " +
                      std::to_string(cells[c].size()) + " images, split needs " + std::to_string(need));

  std::vector<Split> out(num_splits);
  for (std::size_t s = 0; s < num_splits; ++s) {
    Rng rng(spec.seed + s);
    for (const auto& cell : cells) {
      auto idx = cell;
      shuffle(idx, rng);
      auto& sp = out[s];
      sp.train.insert(sp.train.end(), idx.begin(), idx.begin() + static_cast<long>(spec.train_per_style));
      sp.test.insert(sp.test.end(), idx.begin() + static_cast<long>(spec.train_per_style),
                     idx.begin() + static_cast<long>(need));
      sp.val.insert(sp.val.end(), idx.begin() + static_cast<long>(need), idx.end());
    }
  }
  return out;
}

// ---------------------------------------------------------------- geometry

Tensor resize_bilinear(const Tensor& img, std::size_t out_h, std::size_t out_w) {
  if (img.rank() != 3) throw ShapeError("resize expects [C,H,W]");
  const std::size_t ch = img.dim(0), in_h = img.dim(1), in_w = img.dim(2);
  Tensor out({ch, out_h, out_w});
  const double sy = static_cast<double>(in_h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(in_w) / static_cast<double>(out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(in_h - 1));
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, in_h - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < out_w; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(in_w - 1));
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, in_w - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < ch; ++c) {
        const double* p = img.raw() + c * in_h * in_w;
        const double top = p[y0 * in_w + x0] * (1 - wx) + p[y0 * in_w + x1] * wx;
        const double bot = p[y1 * in_w + x0] * (1 - wx) + p[y1 * in_w + x1] * wx;
        out[(c * out_h + y) * out_w + x] = top * (1 - wy) + bot * wy;
      }
    }
  }
  return out;
}

LabeledImage rescale_smallest_side(const LabeledImage& img, std::size_t target) {
  if (target == 0) throw ConfigError("rescale target must be >= 1");
  const std::size_t h = img.height(), w = img.width();
  std::size_t nh, nw;
  if (h <= w) {
    nh = target;
    nw = static_cast<std::size_t>(std::lround(static_cast<double>(w) * static_cast<double>(target) / static_cast<double>(h)));
  } else {
    nw = target;
    nh = static_cast<std::size_t>(std::lround(static_cast<double>(h) * static_cast<double>(target) / static_cast<double>(w)));
  }
  LabeledImage out{resize_bilinear(img.pixels, nh, nw), img.class_id, img.style_id, std::nullopt};
  if (img.bbox) {
    const double fy = static_cast<double>(nh) / static_cast<double>(h);
    const double fx = static_cast<double>(nw) / static_cast<double>(w);
    const auto& b = *img.bbox;
    const int x0 = static_cast<int>(std::floor(b.x * fx)), y0 = static_cast<int>(std::floor(b.y * fy));
    const int x1 = std::min(static_cast<int>(std::ceil((b.x + b.w) * fx)), static_cast<int>(nw));
    const int y1 = std::min(static_cast<int>(std::ceil((b.y + b.h) * fy)), static_cast<int>(nh));
    out.bbox = BBox{x0, y0, x1 - x0, y1 - y0};
  }
  return out;
}

std::array<CropOffset, 5> five_crop_offsets(std::size_t h, std::size_t w, std::size_t c) {
  if (c == 0 || c > h || c > w)
    throw ShapeError("crop " + std::to_string(c) + " does not fit " + std::to_string(h) + "x" + std::to_string(w));
  return {CropOffset{0, 0}, CropOffset{0, w - c}, CropOffset{h - c, 0}, CropOffset{h - c, w - c},
          CropOffset{(h - c) / 2, (w - c) / 2}};
}

Tensor crop(const Tensor& img, CropOffset at, std::size_t size) {
  if (img.rank() != 3) throw ShapeError("crop expects [C,H,W]");
  const std::size_t ch = img.dim(0), h = img.dim(1), w = img.dim(2);
  if (at.y + size > h || at.x + size > w) throw ShapeError("crop window leaves the image");
  Tensor out({ch, size, size});
  for (std::size_t c = 0; c < ch; ++c)
    for (std::size_t y = 0; y < size; ++y) {
      const double* src = img.raw() + (c * h + at.y + y) * w + at.x;
      std::copy(src, src + size, out.raw() + (c * size + y) * size);
    }
  return out;
}

std::array<Tensor, 5> five_crop(const Tensor& img, std::size_t crop_size) {
  if (img.rank() != 3) throw ShapeError("five_crop expects [C,H,W]");
  const auto off = five_crop_offsets(img.dim(1), img.dim(2), crop_size);
  return {crop(img, off[0], crop_size), crop(img, off[1], crop_size), crop(img, off[2], crop_size),
          crop(img, off[3], crop_size), crop(img, off[4], crop_size)};
}

CropOffset bbox_center_offset(std::size_t h, std::size_t w, const std::optional<BBox>& bbox, std::size_t c) {
  if (c == 0 || c > h || c > w) throw ShapeError("crop does not fit image");
  if (!bbox) return {(h - c) / 2, (w - c) / 2};
  const double cy = bbox->y + bbox->h / 2.0, cx = bbox->x + bbox->w / 2.0;
  auto place = [c](double center, std::size_t extent) {
    const double start = std::floor(center - static_cast<double>(c) / 2.0);
    return static_cast<std::size_t>(std::clamp(start, 0.0, static_cast<double>(extent - c)));
  };
  return {place(cy, h), place(cx, w)};
}

Tensor center_crop_bbox(const LabeledImage& img, std::size_t c) {
  return crop(img.pixels, bbox_center_offset(img.height(), img.width(), img.bbox, c), c);
}

std::array<CropOffset, 5> train_crop_offsets(const LabeledImage& img, std::size_t c) {
  auto off = five_crop_offsets(img.height(), img.width(), c);
  off[4] = bbox_center_offset(img.height(), img.width(), img.bbox, c);
  return off;
}

Tensor hflip(const Tensor& img) {
  if (img.rank() != 3) throw ShapeError("hflip expects [C,H,W]");
  const std::size_t rows = img.dim(0) * img.dim(1), w = img.dim(2);
  Tensor out(img.shape());
  for (std::size_t r = 0; r < rows; ++r)
    std::reverse_copy(img.raw() + r * w, img.raw() + (r + 1) * w, out.raw() + r * w);
  return out;
}

LabeledImage augment_train(const LabeledImage& img, Rng& rng, AugmentFlags flags) {
  LabeledImage out = img;
  if (flags.hflip && rng.bernoulli(0.5)) {
    out.pixels = hflip(out.pixels);
    if (out.bbox) out.bbox->x = static_cast<int>(img.width()) - out.bbox->x - out.bbox->w;
  }
  if (flags.rgb_jitter) {
    const std::size_t plane = img.height() * img.width();
    for (std::size_t c = 0; c < out.pixels.dim(0); ++c) {
      const double offset = rng.uniform(-0.05, 0.05);
      for (std::size_t i = 0; i < plane; ++i) {
        double& v = out.pixels[c * plane + i];
        v = std::clamp(v + offset, 0.0, 1.0);
      }
    }
  }
  return out;
}

std::size_t pool_five_crop_predictions(const Tensor& probs) {
  if (probs.rank() != 2 || probs.dim(0) != 5) throw ShapeError("expected [5,K] crop probabilities");
  const std::size_t k = probs.dim(1);
  std::vector<double> mean_p(k, 0.0);
  for (std::size_t r = 0; r < 5; ++r) {
    double row_sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double p = probs[r * k + j];
      if (p < 0.0) throw InputError("negative probability in crop row " + std::to_string(r));
      row_sum += p;
      mean_p[j] += p / 5.0;
    }
    if (std::abs(row_sum - 1.0) > 1e-6) throw InputError("crop row " + std::to_string(r) + " does not sum to 1");
  }
  return argmax(std::span<const double>(mean_p));
}

// ---------------------------------------------------------------- PPM

namespace {

std::string ppm_token(std::istream& is) {
  std::string tok;
  char ch;
  while (is.get(ch)) {
    if (ch == '#') {
      std::string rest;
      std::getline(is, rest);
      if (!tok.empty()) break;
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(ch);
  }
  return tok;
}

std::size_t ppm_number(std::istream& is, const fs::path& path, const char* what) {
  const std::string tok = ppm_token(is);
  if (tok.empty() || !std::all_of(tok.begin(), tok.end(), [](char c) { return c >= '0' && c <= '9'; }))
    throw FormatError(path.string() + ": malformed PPM header (" + what + ")");
  return std::stoul(tok);
}

}  // namespace

Tensor read_ppm(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  if (ppm_token(is) != "P6") throw FormatError(path.string() + ": not a binary PPM (P6)");
  const std::size_t w = ppm_number(is, path, "width");
  const std::size_t h = ppm_number(is, path, "height");
  const std::size_t maxval = ppm_number(is, path, "maxval");
  if (w == 0 || h == 0) throw FormatError(path.string() + ": zero image dimension");
  if (maxval != 255) throw FormatError(path.string() + ": only 8-bit PPM (maxval 255) is supported");
  std::vector<unsigned char> bytes(w * h * 3);
  if (!is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size())))
    throw FormatError(path.string() + ": truncated pixel data");
  Tensor out({3, h, w});
  for (std::size_t i = 0; i < w * h; ++i)
    for (std::size_t c = 0; c < 3; ++c) out[c * w * h + i] = bytes[i * 3 + c] / 255.0;
  return out;
}

void write_ppm(const fs::path& path, const Tensor& rgb) {
  if (rgb.rank() != 3 || rgb.dim(0) != 3) throw ShapeError("write_ppm expects [3,H,W]");
  const std::size_t h = rgb.dim(1), w = rgb.dim(2);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  os << "P6\n" << w << ' ' << h << "\n255\n";
  std::vector<unsigned char> bytes(w * h * 3);
  for (std::size_t i = 0; i < w * h; ++i)
    for (std::size_t c = 0; c < 3; ++c)
      bytes[i * 3 + c] = static_cast<unsigned char>(std::lround(std::clamp(rgb[c * w * h + i], 0.0, 1.0) * 255.0));
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Dataset load_dir(const fs::path& root) {
  if (!fs::is_directory(root)) throw DataError(root.string() + " is not a directory");
  std::vector<fs::path> class_dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) class_dirs.push_back(e.path());
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.empty()) throw DataError(root.string() + " contains no class directories");

  Dataset ds;
  ds.num_styles = 2;
  for (std::size_t c = 0; c < class_dirs.size(); ++c) {
    ds.class_names.push_back(class_dirs[c].filename().string());
    std::map<std::size_t, std::vector<fs::path>> by_style;
    for (const auto& e : fs::directory_iterator(class_dirs[c])) {
      if (!e.is_directory()) continue;
      const std::string name = e.path().filename().string();
      std::size_t style;
      if (name == "photo")
        style = kPhotoStyle;
      else if (name == "art")
        style = kArtStyle;
      else
        throw DataError("unknown style directory \"" + name + "\" in " + class_dirs[c].string() +
                        " (expected photo or art)");
      auto& files = by_style[style];
      for (const auto& f : fs::directory_iterator(e.path()))
        if (f.is_regular_file() && f.path().extension() == ".ppm") files.push_back(f.path());
      std::sort(files.begin(), files.end());
    }
    for (auto& [style, files] : by_style)
      for (const auto& f : files) {
        LabeledImage im{read_ppm(f), c, style, std::nullopt};
        auto box_path = f;
        box_path.replace_extension(".bbox");
        if (fs::exists(box_path)) {
          std::ifstream bs(box_path);
          BBox b;
          if (!(bs >> b.x >> b.y >> b.w >> b.h)) throw FormatError(box_path.string() + ": expected \"x y w h\"");
          if (b.x < 0 || b.y < 0 || b.w < 0 || b.h < 0 || b.x + b.w > static_cast<int>(im.width()) ||
              b.y + b.h > static_cast<int>(im.height()))
            throw DataError(box_path.string() + ": bbox outside image bounds");
          im.bbox = b;
        }
        ds.images.push_back(std::move(im));
      }
  }
  return ds;
}

// ---------------------------------------------------------------- packed format

void save_packed(const Dataset& ds, const fs::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  if (ds.num_styles > 255) throw DataError("too many styles for the packed format");
  binio::put_magic(os, "SWDS");
  binio::put<std::uint8_t>(os, kDatasetVersion);
  binio::put<std::uint8_t>(os, static_cast<std::uint8_t>(ds.num_styles));
  binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(ds.class_names.size()));
  binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(ds.images.size()));
  for (const auto& n : ds.class_names) binio::put_string16(os, n);
  for (const auto& im : ds.images) {
    if (im.class_id > 0xFFFF || im.style_id > 0xFF) throw DataError("label too large for the packed format");
    binio::put<std::uint16_t>(os, static_cast<std::uint16_t>(im.class_id));
    binio::put<std::uint8_t>(os, static_cast<std::uint8_t>(im.style_id));
    binio::put<std::uint8_t>(os, im.bbox ? 1 : 0);
    const BBox b = im.bbox.value_or(BBox{});
    for (int v : {b.x, b.y, b.w, b.h}) binio::put<std::uint16_t>(os, static_cast<std::uint16_t>(v));
    write_tensor(os, im.pixels);
  }
  if (!os) throw DataError("failed writing " + path.string());
}

Dataset load_packed(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open dataset " + path.string());
  binio::expect_magic(is, "SWDS");
  const auto version = binio::get<std::uint8_t>(is);
  if (version != kDatasetVersion) throw FormatError("unsupported dataset version " + std::to_string(version));
  Dataset ds;
  ds.num_styles = binio::get<std::uint8_t>(is);
  const auto classes = binio::get<std::uint32_t>(is);
  const auto count = binio::get<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < classes; ++i) ds.class_names.push_back(binio::get_string16(is));
  ds.images.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto cls = binio::get<std::uint16_t>(is);
    const auto style = binio::get<std::uint8_t>(is);
    const auto has_box = binio::get<std::uint8_t>(is);
    BBox b;
    b.x = binio::get<std::uint16_t>(is);
    b.y = binio::get<std::uint16_t>(is);
    b.w = binio::get<std::uint16_t>(is);
    b.h = binio::get<std::uint16_t>(is);
    LabeledImage im{read_tensor(is), cls, style, std::nullopt};
    if (has_box) im.bbox = b;
    ds.images.push_back(std::move(im));
  }
  ds.validate();
  return ds;
}

}  // namespace swiden
