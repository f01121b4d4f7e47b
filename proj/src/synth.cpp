#include "gaisim/synth.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "gaisim/random.hpp"

namespace gaisim {

namespace {

double cap_bump(const Primitive& p, double x, double y) {
  double dx = x - p.cx, dy = y - p.cy;
  double rho2 = dx * dx + dy * dy;
  if (p.kind == Primitive::rectangle) {
    return (std::abs(dx) <= p.half_w && std::abs(dy) <= p.half_h) ? p.height : 0.0;
  }
  if (rho2 >= p.radius * p.radius) return 0.0;
  double rs = p.sphere_radius;
  double rim = std::sqrt(rs * rs - p.radius * p.radius);
  double scale = p.height / (rs - rim);  // peak height at the center
  return scale * (std::sqrt(rs * rs - rho2) - rim);
}

int primitive_class_at(const SceneGeometry& geo, double x, double y) {
  int cls = 0;
  for (const Primitive& p : geo.prims) {  // later primitives paint over earlier ones
    double dx = x - p.cx, dy = y - p.cy;
    bool inside = p.kind == Primitive::circle
                      ? dx * dx + dy * dy < p.radius * p.radius
                      : std::abs(dx) <= p.half_w && std::abs(dy) <= p.half_h;
    if (inside) cls = p.cls;
  }
  return cls;
}

}  // namespace

double geometry_depth(const SceneGeometry& geo, double x, double y) {
  double d = geo.bg_depth;
  for (const Primitive& p : geo.prims) d += cap_bump(p, x, y);
  return d;
}

void cap_gradient(const Primitive& p, double x, double y, double* gx, double* gy) {
  double dx = x - p.cx, dy = y - p.cy;
  double rho2 = dx * dx + dy * dy;
  double rs = p.sphere_radius;
  if (p.kind != Primitive::circle || rho2 >= p.radius * p.radius) {
    *gx = *gy = 0.0;
    return;
  }
  double rim = std::sqrt(rs * rs - p.radius * p.radius);
  double scale = p.height / (rs - rim);
  double root = std::sqrt(rs * rs - rho2);
  *gx = -scale * dx / root;
  *gy = -scale * dy / root;
}

SceneGeometry sample_geometry(std::uint64_t seed, int h, int w, int num_classes) {
  if (num_classes < 2) throw std::invalid_argument("scene: need background plus one class");
  if (h < 8 || w < 8) throw std::invalid_argument("scene: canvas too small");
  std::mt19937_64 rng(seed);
  SceneGeometry geo;
  geo.h = h;
  geo.w = w;
  geo.num_classes = num_classes;
  geo.bg_depth = 1.5;

  std::uniform_int_distribution<int> count_dist(1, num_classes - 1);
  int count = count_dist(rng);
  double min_side = static_cast<double>(std::min(h, w));
  std::uniform_real_distribution<double> radius_dist(min_side / 8.0, min_side / 4.0);
  std::uniform_real_distribution<double> height_dist(0.2, 0.5);
  std::uniform_real_distribution<double> uni(0.0, 1.0);

  for (int i = 0; i < count; ++i) {
    Primitive p;
    p.kind = uni(rng) < 0.5 ? Primitive::circle : Primitive::rectangle;
    p.cls = 1 + i % (num_classes - 1);
    double r = radius_dist(rng);
    double margin = r + 2.0;
    p.cx = margin + uni(rng) * (w - 1 - 2.0 * margin);
    p.cy = margin + uni(rng) * (h - 1 - 2.0 * margin);
    p.height = height_dist(rng);
    if (p.kind == Primitive::circle) {
      p.radius = r;
      p.sphere_radius = 2.0 * r;  // keeps the rim slope finite
    } else {
      p.half_w = r * (0.6 + 0.4 * uni(rng));
      p.half_h = r * (0.6 + 0.4 * uni(rng));
    }
    geo.prims.push_back(p);
  }
  return geo;
}

void derive_labels(const SceneGeometry& geo, Scene& scene) {
  int h = geo.h, w = geo.w;
  scene.h = h;
  scene.w = w;
  scene.num_classes = geo.num_classes;
  scene.seg.assign(static_cast<std::size_t>(h) * w, 0);
  scene.depth = Tensor({1, h, w});
  scene.normals = Tensor({3, h, w});
  scene.edges.assign(static_cast<std::size_t>(h) * w, 0);
  scene.keypoints = Tensor({1, h, w});

  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      scene.seg[static_cast<std::size_t>(y) * w + x] = primitive_class_at(geo, x, y);
      scene.depth.at3(0, y, x) = geometry_depth(geo, x, y);
    }

  // normals from the depth map: normalize(-ddepth/dx, -ddepth/dy, 1)
  auto depth_at = [&](int y, int x) {
    y = std::clamp(y, 0, h - 1);
    x = std::clamp(x, 0, w - 1);
    return scene.depth.at3(0, y, x);
  };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double ddx = 0.5 * (depth_at(y, x + 1) - depth_at(y, x - 1));
      double ddy = 0.5 * (depth_at(y + 1, x) - depth_at(y - 1, x));
      double nx = -ddx, ny = -ddy, nz = 1.0;
      double norm = std::sqrt(nx * nx + ny * ny + nz * nz);
      scene.normals.at3(0, y, x) = nx / norm;
      scene.normals.at3(1, y, x) = ny / norm;
      scene.normals.at3(2, y, x) = nz / norm;
    }

  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      int cls = scene.seg[static_cast<std::size_t>(y) * w + x];
      bool boundary = (x > 0 && scene.seg[static_cast<std::size_t>(y) * w + x - 1] != cls) ||
                      (x + 1 < w && scene.seg[static_cast<std::size_t>(y) * w + x + 1] != cls) ||
                      (y > 0 && scene.seg[static_cast<std::size_t>(y - 1) * w + x] != cls) ||
                      (y + 1 < h && scene.seg[static_cast<std::size_t>(y + 1) * w + x] != cls);
      scene.edges[static_cast<std::size_t>(y) * w + x] = boundary ? 1 : 0;
    }

  // gaussian bump per keypoint: circle centers and rectangle corners
  const double sigma = 2.0;
  std::vector<std::pair<double, double>> points;
  for (const Primitive& p : geo.prims) {
    if (p.kind == Primitive::circle) {
      points.emplace_back(p.cx, p.cy);
    } else {
      points.emplace_back(p.cx - p.half_w, p.cy - p.half_h);
      points.emplace_back(p.cx + p.half_w, p.cy - p.half_h);
      points.emplace_back(p.cx - p.half_w, p.cy + p.half_h);
      points.emplace_back(p.cx + p.half_w, p.cy + p.half_h);
    }
  }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double v = 0.0;
      for (auto [px, py] : points) {
        double d2 = (x - px) * (x - px) + (y - py) * (y - py);
        v = std::max(v, std::exp(-d2 / (2.0 * sigma * sigma)));
      }
      scene.keypoints.at3(0, y, x) = v;
    }

  // dominant class: largest foreground pixel count, background if empty
  std::vector<long long> area(static_cast<std::size_t>(geo.num_classes), 0);
  for (int s : scene.seg) ++area[static_cast<std::size_t>(s)];
  scene.class_label = 0;
  long long best = -1;
  for (int c = 1; c < geo.num_classes; ++c)
    if (area[static_cast<std::size_t>(c)] > best) {
      best = area[static_cast<std::size_t>(c)];
      scene.class_label = c;
    }
}

Scene generate_scene(std::uint64_t seed, int h, int w, int num_classes) {
  SceneGeometry geo = sample_geometry(seed, h, w, num_classes);
  Scene scene;
  derive_labels(geo, scene);

  // image: class palette shaded by depth, plus light pixel noise
  std::mt19937_64 rng(mix_seed(seed, 0x1317));
  std::uniform_real_distribution<double> noise(-0.02, 0.02);
  scene.image = Tensor({3, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      int cls = scene.seg[static_cast<std::size_t>(y) * w + x];
      double base[3] = {0.18 + 0.23 * ((cls * 5) % 4), 0.18 + 0.23 * ((cls * 3) % 4),
                        0.18 + 0.23 * ((cls * 7) % 4)};
      double shade = std::clamp(2.2 - 0.8 * scene.depth.at3(0, y, x), 0.25, 1.0);
      for (int c = 0; c < 3; ++c)
        scene.image.at3(c, y, x) = std::clamp(base[c] * shade + noise(rng), 0.0, 1.0);
    }
  return scene;
}

std::vector<Scene> generate_dataset(std::uint64_t seed, int count, int h, int w, int num_classes) {
  std::vector<Scene> scenes;
  scenes.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i)
    scenes.push_back(generate_scene(mix_seed(seed, static_cast<std::uint64_t>(i)), h, w, num_classes));
  return scenes;
}

}  // namespace gaisim
