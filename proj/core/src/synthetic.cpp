#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "davr/data.hpp"
#include "davr/rng.hpp"

namespace davr {

namespace fs = std::filesystem;

namespace {

struct Rgb {
  double r, g, b;
};

Rgb hsv_to_rgb(double h, double s, double v) {
  h = h - std::floor(h);
  double i = std::floor(h * 6.0);
  double f = h * 6.0 - i;
  double p = v * (1.0 - s);
  double q = v * (1.0 - f * s);
  double t = v * (1.0 - (1.0 - f) * s);
  switch (static_cast<int>(i) % 6) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

// Signed distance to an axis-aligned rounded rectangle centred at (cx, cy).
double rounded_rect_sdf(double x, double y, double cx, double cy, double hw, double hh,
                        double radius) {
  double qx = std::fabs(x - cx) - (hw - radius);
  double qy = std::fabs(y - cy) - (hh - radius);
  double ox = std::max(qx, 0.0), oy = std::max(qy, 0.0);
  return std::sqrt(ox * ox + oy * oy) + std::min(std::max(qx, qy), 0.0) - radius;
}

void blend(ImageF& img, int y, int x, const Rgb& color, double alpha) {
  if (alpha <= 0.0) return;
  img.at(y, x, 0) = img.at(y, x, 0) * (1 - alpha) + color.r * alpha;
  img.at(y, x, 1) = img.at(y, x, 1) * (1 - alpha) + color.g * alpha;
  img.at(y, x, 2) = img.at(y, x, 2) * (1 - alpha) + color.b * alpha;
}

struct VehicleSketch {
  Rgb body;
  Rgb badge;
  double aspect;   // body height / width
  int mark_a = 0;  // id-coded grid slots for the two body marks
  int mark_b = 0;
};

struct ViewJitter {
  double cx, cy, scale, tilt;
  int background_index;
};

// One pose shared by both domain renderings of an image, so the only
// cross-domain differences are the style parameters.
ViewJitter sample_view(Rng& rng, size_t palette_size) {
  ViewJitter v;
  v.cx = 0.5 + rng.uniform(-0.05, 0.05);
  v.cy = 0.55 + rng.uniform(-0.04, 0.04);
  v.scale = 0.85 + rng.uniform(-0.10, 0.10);
  v.tilt = rng.uniform(-0.03, 0.03);
  v.background_index = static_cast<int>(rng.uniform_int(0, static_cast<int64_t>(palette_size) - 1));
  return v;
}

void render_vehicle(ImageF& img, const VehicleSketch& sketch, const ViewJitter& view,
                    const std::array<double, 3>& background) {
  int n = img.width;
  double px = 1.0 / n;

  for (int y = 0; y < n; ++y) {
    double shade = 1.0 - 0.15 * (static_cast<double>(y) / n);  // mild vertical gradient
    for (int x = 0; x < n; ++x) {
      // faint texture keeps per-channel statistics alive under normalization
      double tex = 1.0 + 0.05 * std::sin(12.0 * 3.14159265 * (x + 0.5) / n) *
                             std::cos(9.0 * 3.14159265 * (y + 0.5) / n);
      img.at(y, x, 0) = background[0] * shade * tex;
      img.at(y, x, 1) = background[1] * shade * tex;
      img.at(y, x, 2) = background[2] * shade * tex;
    }
  }

  double hw = 0.36 * view.scale;
  double hh = hw * sketch.aspect;
  double corner = 0.35 * hh;
  Rgb glass{sketch.body.r * 0.25, sketch.body.g * 0.25, sketch.body.b * 0.3};
  Rgb wheel{0.12, 0.12, 0.13};

  for (int y = 0; y < n; ++y) {
    double fy = (y + 0.5) * px;
    for (int x = 0; x < n; ++x) {
      double fx = (x + 0.5) * px;
      double sx = fx + view.tilt * (fy - view.cy);  // shear approximates viewpoint change

      // body, shaded top-to-bottom so its color survives normalization layers
      double d = rounded_rect_sdf(sx, fy, view.cx, view.cy, hw, hh, corner) * n;
      double body_shade = 1.15 - 0.45 * std::clamp((fy - (view.cy - hh)) / (2 * hh), 0.0, 1.0);
      Rgb shaded{sketch.body.r * body_shade, sketch.body.g * body_shade,
                 sketch.body.b * body_shade};
      blend(img, y, x, shaded, std::clamp(0.5 - d, 0.0, 1.0));
      // mark 1: windshield band in the upper body
      double dw = rounded_rect_sdf(sx, fy, view.cx, view.cy - 0.45 * hh, hw * 0.62, hh * 0.24,
                                   0.3 * hh * 0.24) * n;
      blend(img, y, x, glass, std::clamp(0.5 - dw, 0.0, 1.0));
      // two id-coded marks on an eight-slot grid: one bright disc, one dark
      // square; their placement pattern identifies the vehicle even when
      // color fidelity degrades
      auto slot = [&](int s, double* mx, double* my) {
        *mx = view.cx + (-0.6 + 0.4 * (s % 4)) * hw;
        *my = view.cy + (s < 4 ? -0.35 : 0.35) * hh;
      };
      double max_, may_, mbx_, mby_;
      slot(sketch.mark_a, &max_, &may_);
      slot(sketch.mark_b, &mbx_, &mby_);
      double da = (std::sqrt((sx - max_) * (sx - max_) + (fy - may_) * (fy - may_)) -
                   0.22 * hw) * n;
      blend(img, y, x, Rgb{0.92, 0.92, 0.88}, std::clamp(0.5 - da, 0.0, 1.0));
      double dbsq = (std::max(std::fabs(sx - mbx_), std::fabs(fy - mby_)) - 0.20 * hw) * n;
      blend(img, y, x, Rgb{0.10, 0.10, 0.12}, std::clamp(0.5 - dbsq, 0.0, 1.0));
      // badge dot in the lower-front corner, complement-colored
      double bx = sx - (view.cx - 0.62 * hw);
      double by = fy - (view.cy + 0.62 * hh);
      double db = (std::sqrt(bx * bx + by * by) - 0.14 * hw) * n;
      blend(img, y, x, sketch.badge, std::clamp(0.5 - db, 0.0, 1.0));
      // wheels anchor the shape at the body's lower corners
      for (int side = -1; side <= 1; side += 2) {
        double wx = sx - (view.cx + side * 0.62 * hw);
        double wy = fy - (view.cy + 0.95 * hh);
        double dwheel = (std::sqrt(wx * wx + wy * wy) - 0.18 * hw) * n;
        blend(img, y, x, wheel, std::clamp(0.5 - dwheel, 0.0, 1.0));
      }
    }
  }
}

void apply_style(ImageF& img, const SyntheticStyle& style) {
  for (double& v : img.pixels) v += style.brightness_offset;
  gaussian_blur_inplace(img, style.blur_radius);
  for (double& v : img.pixels) v = std::clamp(v, 0.0, 1.0);
}

std::vector<std::array<double, 3>> default_palette() {
  // near-neutral tones: backgrounds vary without competing with body hue
  return {{0.47, 0.47, 0.49}, {0.51, 0.50, 0.48}, {0.46, 0.49, 0.51}, {0.52, 0.51, 0.49}};
}

}  // namespace

std::pair<DatasetIndex, DatasetIndex> generate_synthetic_domains(const SyntheticSpec& spec,
                                                                 const fs::path& out_root) {
  if (spec.num_identities < 2 || spec.images_per_id < 2)
    throw std::runtime_error("synthetic spec needs >= 2 identities and >= 2 images per id");
  if (spec.image_size % 4 != 0)
    throw std::runtime_error("synthetic image_size must be divisible by 4, got " +
                             std::to_string(spec.image_size));

  SyntheticStyle styles[2] = {spec.source_style, spec.target_style};
  for (SyntheticStyle& s : styles)
    if (s.background_palette.empty()) s.background_palette = default_palette();

  DatasetIndex indexes[2];
  indexes[0].split = Split::train;
  indexes[1].split = Split::train;

  Rng root_rng(spec.seed);
  constexpr double kGoldenRatio = 0.6180339887498949;

  for (int id = 0; id < spec.num_identities; ++id) {
    Rng id_rng = root_rng.fork(static_cast<uint64_t>(id) + 1);
    VehicleSketch sketch;
    double hue = std::fmod(kGoldenRatio * id + id_rng.uniform(0.0, 0.02), 1.0);
    sketch.body = hsv_to_rgb(hue, 0.6 + 0.25 * id_rng.uniform(), 0.45 + 0.2 * id_rng.uniform());
    sketch.badge = hsv_to_rgb(hue + 0.5, 0.7, 0.6);
    sketch.aspect = 0.55 + 0.2 * id_rng.uniform();
    sketch.mark_a = id % 8;
    sketch.mark_b = (id * 5 + 3) % 8;
    if (sketch.mark_b == sketch.mark_a) sketch.mark_b = (sketch.mark_b + 3) % 8;

    for (int img_i = 0; img_i < spec.images_per_id; ++img_i) {
      Rng view_rng = id_rng.fork(static_cast<uint64_t>(img_i) + 1);
      ViewJitter view = sample_view(view_rng, styles[0].background_palette.size());

      for (int dom = 0; dom < 2; ++dom) {
        ImageF canvas(spec.image_size, spec.image_size);
        size_t bg = static_cast<size_t>(view.background_index) %
                    styles[dom].background_palette.size();
        render_vehicle(canvas, sketch, view, styles[dom].background_palette[bg]);
        apply_style(canvas, styles[dom]);

        Domain domain = dom == 0 ? Domain::source : Domain::target;
        fs::path dir = out_root / to_string(domain) / std::to_string(id);
        fs::create_directories(dir);
        fs::path file = dir / (std::to_string(img_i) + ".png");
        write_png(file, quantize_image(canvas));
        indexes[dom].records.push_back({file.string(), id, 0, domain});
      }
    }
  }
  indexes[0].num_identities = spec.num_identities;
  indexes[1].num_identities = spec.num_identities;
  save_index_json(indexes[0], out_root / "index_source.json");
  save_index_json(indexes[1], out_root / "index_target.json");
  return {indexes[0], indexes[1]};
}

}  // namespace davr
