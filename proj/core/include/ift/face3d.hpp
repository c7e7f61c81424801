#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "ift/tensor.hpp"

namespace ift::face3d {

// Linear blendshape head: template vertices plus identity/expression offset
// bases and a single skinned jaw rotation.
struct BlendshapeRig {
  Tensor template_vertices;  // [N,3]
  Tensor shape_basis;        // [3N, |beta|]
  Tensor expression_basis;   // [3N, |psi|]
  Tensor jaw_pivot;          // [3]
  Tensor jaw_axis;           // [3], unit length
  Tensor jaw_weights;        // [N] in [0,1]
  std::vector<int64_t> landmark_embedding;  // 51 vertex indices
  std::vector<int64_t> faces;               // flattened triangles, 3 indices each

  int64_t vertex_count() const { return template_vertices.rank() == 2 ? template_vertices.shape[0] : 0; }
  int shape_dims() const { return static_cast<int>(shape_basis.shape.back()); }
  int expression_dims() const { return static_cast<int>(expression_basis.shape.back()); }
  void validate() const;  // throws Error(Data)
};

struct FaceParams {
  Tensor beta;  // identity shape coefficients
  Tensor psi;   // expression coefficients
  double theta_jaw = 0.0;
};

// Weak-perspective camera: p = s * (R v)_xy + t.
struct CameraParams {
  double scale = 1.0;
  Tensor rotation = Tensor({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor translation = Tensor::zeros({2});
  void validate() const;  // orthonormal within 1e-9, det +1, scale > 0
};

BlendshapeRig load_rig(const std::filesystem::path& path);
void save_rig(const BlendshapeRig& rig, const std::filesystem::path& path);

// v = template + S*beta + E*psi, then the jaw rotation about pivot/axis
// blended per vertex by the skinning weight. Returns [N,3].
Tensor evaluate_rig(const BlendshapeRig& rig, const FaceParams& params);

// Rows of `vertices` selected by the rig's landmark embedding. [51,3]
Tensor rig_landmarks(const BlendshapeRig& rig, const Tensor& vertices);

// Weak-perspective projection of [M,3] points to [M,2].
Tensor project(const Tensor& points3d, const CameraParams& camera);

double reprojection_residual(const Tensor& points3d, const Tensor& points2d, const CameraParams& camera);

// Closed-form scaled-orthographic alignment (orthogonal Procrustes with
// scale and 2D translation via SVD). Needs >= 3 non-collinear points.
CameraParams fit_camera(const Tensor& landmarks3d, const Tensor& landmarks2d);

struct FitOptions {
  double lambda_beta = 1e-4;
  double lambda_psi = 1e-4;
  int max_iterations = 500;
  double relative_tolerance = 1e-8;
  int camera_refit_every = 5;  // 0 disables in-loop camera refinement
};

struct FitResult {
  std::vector<FaceParams> frames;      // psi/theta per frame, beta shared
  CameraParams camera;
  std::vector<double> objective_trace; // accepted-step objective values
  bool converged = false;
};

// Gradient descent with backtracking line search on
//   sum_f ||project(landmarks(rig(beta, psi_f, theta_f))) - lm2d_f||^2
//   + lambda_beta ||beta||^2 + lambda_psi sum_f ||psi_f||^2,
// beta shared across the sequence. The camera is refined by guarded
// closed-form refits that never increase the objective.
FitResult fit_parameters(const BlendshapeRig& rig, const std::vector<Tensor>& landmarks2d,
                         const CameraParams& init_camera, const FitOptions& options = {});

// One OBJ file per frame (shared topology), named frame_%05d.obj.
std::vector<std::filesystem::path> export_mesh_sequence(const BlendshapeRig& rig,
                                                        const std::vector<FaceParams>& params,
                                                        const std::filesystem::path& out_dir);

// Vertex records of an OBJ file written by export_mesh_sequence.
Tensor import_mesh_vertices(const std::filesystem::path& path);

}  // namespace ift::face3d
