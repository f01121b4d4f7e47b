#pragma once

#include <cstdint>
#include <vector>

#include "gaisim/tensor.hpp"

namespace gaisim {

/// One procedurally generated scene with every label derived from the same
/// closed-form geometry.
struct Scene {
  int h = 0, w = 0;
  int num_classes = 0;
  Tensor image;               // [3,H,W] in [0,1]
  std::vector<int> seg;       // H*W class ids, 0 = background
  Tensor depth;               // [1,H,W], strictly positive
  Tensor normals;             // [3,H,W], unit per pixel
  std::vector<std::uint8_t> edges;  // H*W, 1 on class boundaries
  Tensor keypoints;           // [1,H,W] in [0,1]
  int class_label = 0;        // dominant foreground class
};

struct Primitive {
  enum Kind { circle, rectangle } kind = circle;
  double cx = 0.0, cy = 0.0;
  double radius = 0.0;        // circle
  double half_w = 0.0, half_h = 0.0;  // rectangle
  double height = 0.0;        // depth bump amplitude
  double sphere_radius = 0.0; // cap curvature source, circle only
  int cls = 1;
};

struct SceneGeometry {
  int h = 0, w = 0;
  int num_classes = 0;
  double bg_depth = 1.5;
  std::vector<Primitive> prims;
};

/// Closed-form depth of the geometry at a pixel center.
double geometry_depth(const SceneGeometry& geo, double x, double y);
/// Closed-form surface gradient (ddepth/dx, ddepth/dy) of a circle cap.
void cap_gradient(const Primitive& p, double x, double y, double* gx, double* gy);

SceneGeometry sample_geometry(std::uint64_t seed, int h, int w, int num_classes);

/// Fills seg/depth/normals/edges/keypoints from the geometry. Normals come
/// from central differences of the depth map with clamped borders.
void derive_labels(const SceneGeometry& geo, Scene& scene);

Scene generate_scene(std::uint64_t seed, int h, int w, int num_classes);

std::vector<Scene> generate_dataset(std::uint64_t seed, int count, int h, int w, int num_classes);

}  // namespace gaisim
