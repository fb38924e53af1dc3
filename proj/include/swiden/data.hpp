#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "swiden/rng.hpp"
#include "swiden/tensor.hpp"

namespace swiden {

inline constexpr std::size_t kPhotoStyle = 0;
inline constexpr std::size_t kArtStyle = 1;

/// "photo" / "art" for the two standard styles, "style<i>" otherwise.
std::string style_name(std::size_t style);

/// Axis-aligned box in pixel units.
struct BBox {
  int x = 0, y = 0, w = 0, h = 0;
  friend bool operator==(const BBox&, const BBox&) = default;
};

struct LabeledImage {
  Tensor pixels;  // [3,H,W], values in [0,1]
  std::size_t class_id = 0;
  std::size_t style_id = 0;
  std::optional<BBox> bbox;

  std::size_t height() const { return pixels.dim(1); }
  std::size_t width() const { return pixels.dim(2); }
  friend bool operator==(const LabeledImage&, const LabeledImage&) = default;
};

struct Dataset {
  std::vector<LabeledImage> images;
  std::vector<std::string> class_names;
  std::size_t num_styles = 2;

  /// Throws DataError when a label is out of range, a pixel is outside
  /// [0,1] or a bbox leaves the image.
  void validate() const;
  std::size_t size() const { return images.size(); }
  friend bool operator==(const Dataset&, const Dataset&) = default;
};

// ---------------------------------------------------------------- synthetic data

/// Shape classes in generation order.
const std::vector<std::string>& synthetic_shape_names();

struct SyntheticConfig {
  std::uint64_t seed = 42;
  std::size_t num_classes = 10;
  std::size_t per_class_per_style = 50;
  std::size_t resolution = 72;
  double max_rotation = 3.141592653589793 / 18;  // radians; angle ~ uniform(-max, max)
};

/// Renders every class in two styles. Photo: filled shape with radial
/// shading on a textured mid-tone background plus Gaussian pixel noise. Art:
/// a 1-3 px wobbly outline on a near-white background. Each image carries its
/// true bounding box. Image (class c, style s, index i) is drawn from its own
/// derived Rng, so the result is a pure function of the config. Images are
/// ordered by class, then style, then index.
Dataset gen_synthetic(const SyntheticConfig& cfg);

/// Exact bounding box of a circle of radius r centred at (cx, cy).
BBox circle_bbox(double cx, double cy, double r);

/// 0.299 R + 0.587 G + 0.114 B for each pixel of a [3,H,W] image.
std::vector<double> luminance(const Tensor& rgb);
/// Fraction of pixels whose luminance exceeds `threshold`.
double bright_fraction(const Tensor& rgb, double threshold = 0.8);

// ---------------------------------------------------------------- splits

struct SplitSpec {
  std::size_t train_per_style = 30;
  std::size_t test_per_style = 10;
  std::uint64_t seed = 42;
};

/// Indices into Dataset::images.
struct Split {
  std::vector<std::size_t> train, val, test;
};

/// Split i shuffles every (class, style) cell with Rng(seed + i) and takes
/// train_per_style images for training, the next test_per_style for testing
/// and the remainder for validation. Throws DataError when a cell is too small.
std::vector<Split> make_splits(const Dataset& ds, const SplitSpec& spec, std::size_t num_splits);

// ---------------------------------------------------------------- geometry

/// Bilinear resize (pixel-centre aligned, edge clamped) of a [C,H,W] tensor.
Tensor resize_bilinear(const Tensor& img, std::size_t out_h, std::size_t out_w);
/// Resize so that min(H,W) == target, keeping the aspect ratio (the long side
/// is rounded to nearest); the bbox is scaled by the same factors.
LabeledImage rescale_smallest_side(const LabeledImage& img, std::size_t target);

struct CropOffset {
  std::size_t y = 0, x = 0;
  friend bool operator==(const CropOffset&, const CropOffset&) = default;
};

/// (0,0), (0,W-c), (H-c,0), (H-c,W-c), (floor((H-c)/2), floor((W-c)/2)).
std::array<CropOffset, 5> five_crop_offsets(std::size_t h, std::size_t w, std::size_t crop);
Tensor crop(const Tensor& img, CropOffset at, std::size_t size);
std::array<Tensor, 5> five_crop(const Tensor& img, std::size_t crop_size);

/// Window start centred on the bbox centre, clamped to the image; falls back
/// to the geometric centre without a bbox.
CropOffset bbox_center_offset(std::size_t h, std::size_t w, const std::optional<BBox>& bbox, std::size_t crop);
Tensor center_crop_bbox(const LabeledImage& img, std::size_t crop);

/// Training crop set: the four corner crops plus the bbox-centred centre crop.
std::array<CropOffset, 5> train_crop_offsets(const LabeledImage& img, std::size_t crop);

struct AugmentFlags {
  bool hflip = false;
  bool rgb_jitter = false;
};

Tensor hflip(const Tensor& img);
/// hflip with probability 0.5 (one draw when enabled); rgb_jitter adds a
/// per-channel offset from uniform(-0.05, 0.05) (three draws) and clamps to
/// [0,1]. The bbox follows the flip.
LabeledImage augment_train(const LabeledImage& img, Rng& rng, AugmentFlags flags);

/// Mean of five probability rows, then argmax (ties -> lowest class). Throws
/// InputError when a row does not sum to 1 within 1e-6 or has negative entries.
std::size_t pool_five_crop_predictions(const Tensor& probs);

// ---------------------------------------------------------------- files

/// Binary PPM (P6, maxval 255). Throws FormatError on a malformed header.
Tensor read_ppm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const Tensor& rgb);

/// root/<class>/<style>/<name>.ppm with style in {photo, art}, optional
/// <name>.bbox sidecar "x y w h" (only the first box is used). Classes are
/// sorted lexicographically; images ordered by class, style, file name.
Dataset load_dir(const std::filesystem::path& root);

// Packed dataset: "SWDS", version u8, num_styles u8, num_classes u32,
// num_images u32, class names (u16 length + UTF-8 bytes), then per image:
// class_id u16, style_id u8, bbox flag u8, bbox x,y,w,h u16, SWTN tensor.
inline constexpr std::uint8_t kDatasetVersion = 1;
void save_packed(const Dataset& ds, const std::filesystem::path& path);
Dataset load_packed(const std::filesystem::path& path);

}  // namespace swiden
