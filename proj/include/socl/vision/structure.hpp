#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "socl/errors.hpp"
#include "socl/ten/checkpoint.hpp"
#include "socl/ten/ops.hpp"
#include "socl/ten/rng.hpp"

namespace socl::vision {

using ten::Mat;
using ten::Param;
using ten::Tape;
using ten::Var;

using Extents = std::array<std::size_t, 3>;

inline std::string extents_str(const Extents& e) {
  return std::to_string(e[0]) + "x" + std::to_string(e[1]) + "x" + std::to_string(e[2]);
}

// Scalar voxel grid, x fastest: index = x + X * (y + Y * z).
struct Volume {
  Extents extents{0, 0, 0};
  std::vector<double> voxels;

  Volume() = default;
  explicit Volume(Extents e, double fill = 0.0) : extents(e), voxels(e[0] * e[1] * e[2], fill) {}

  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const {
    return x + extents[0] * (y + extents[1] * z);
  }
  double& at(std::size_t x, std::size_t y, std::size_t z) { return voxels[index(x, y, z)]; }
  double at(std::size_t x, std::size_t y, std::size_t z) const { return voxels[index(x, y, z)]; }
};

inline Extents patch_grid_extents(const Extents& volume, const Extents& patch) {
  Extents g{};
  for (int d = 0; d < 3; ++d) {
    if (patch[d] == 0 || volume[d] % patch[d] != 0) {
      throw ShapeError("patch extents " + extents_str(patch) + " do not divide volume " + extents_str(volume));
    }
    g[d] = volume[d] / patch[d];
  }
  return g;
}

// Non-overlapping patches flattened to rows (N^v x voxels-per-patch). Patch
// j sits at grid cell (gx, gy, gz) with j = gx + GX * (gy + GY * gz); voxels
// inside a patch use the same x-fastest order.
inline Mat patchify(const Volume& v, const Extents& patch) {
  const Extents g = patch_grid_extents(v.extents, patch);
  const std::size_t per = patch[0] * patch[1] * patch[2];
  Mat out(g[0] * g[1] * g[2], per);
  for (std::size_t gz = 0; gz < g[2]; ++gz)
    for (std::size_t gy = 0; gy < g[1]; ++gy)
      for (std::size_t gx = 0; gx < g[0]; ++gx) {
        const std::size_t j = gx + g[0] * (gy + g[1] * gz);
        std::size_t k = 0;
        for (std::size_t z = 0; z < patch[2]; ++z)
          for (std::size_t y = 0; y < patch[1]; ++y)
            for (std::size_t x = 0; x < patch[0]; ++x)
              out(j, k++) = v.at(gx * patch[0] + x, gy * patch[1] + y, gz * patch[2] + z);
      }
  return out;
}

struct VisionDims {
  Extents volume{32, 32, 16};
  Extents patch{8, 8, 8};
  std::size_t d_v = 64;
  std::size_t d_q = 64;
  std::size_t d_a = 64;
  std::size_t d_o = 64;
  std::size_t n_structures = 10;
  double query_init_scale = 0.02;

  std::size_t voxels_per_patch() const { return patch[0] * patch[1] * patch[2]; }
  std::size_t n_patches() const {
    const Extents g = patch_grid_extents(volume, patch);
    return g[0] * g[1] * g[2];
  }
};

// F^v for one volume.
struct PatchGrid {
  std::string subject;
  Mat features;  // N^v x d_v
  Extents grid{0, 0, 0};

  std::size_t count() const { return features.rows(); }
};

inline Mat scaled_normal(ten::Rng& rng, std::size_t rows, std::size_t cols) {
  return rng.normal_mat(rows, cols, 1.0 / std::sqrt(static_cast<double>(rows)));
}

// Flattened patch -> d_v affine map.
struct PatchEmbedder {
  Extents patch{8, 8, 8};
  Param weight;  // voxels-per-patch x d_v
  Param bias;    // 1 x d_v

  PatchEmbedder() = default;
  PatchEmbedder(const VisionDims& dims, ten::Rng& rng)
      : patch(dims.patch),
        weight("vision.patch.weight", scaled_normal(rng, dims.voxels_per_patch(), dims.d_v)),
        bias("vision.patch.bias", Mat(1, dims.d_v), false) {}

  // patches: N^v x voxels-per-patch constant.
  Var forward(Tape& t, Var patches) { return ten::add_row(ten::matmul(patches, t.param(weight)), t.param(bias)); }
  Var forward(Tape& t, Var patches) const {
    return ten::add_row(ten::matmul(patches, t.param(weight)), t.param(bias));
  }

  PatchGrid embed_volume(const Volume& v, std::string subject = {}) const {
    PatchGrid g;
    g.subject = std::move(subject);
    g.grid = patch_grid_extents(v.extents, patch);
    Tape t(false);
    g.features = forward(t, t.constant(patchify(v, patch))).value();
    return g;
  }
};

// Learnable structure queries Q^v and the projections W^v_0, W^v_1, W^v_2.
struct StructureQuerySet {
  Param queries;  // N^s x d_q
  Param w0;       // d_q x d_a
  Param w1;       // d_v x d_a
  Param w2;       // d_v x d_o

  StructureQuerySet() = default;
  StructureQuerySet(const VisionDims& d, ten::Rng& rng)
      : queries("vision.queries", rng.normal_mat(d.n_structures, d.d_q, d.query_init_scale)),
        w0("vision.w0", scaled_normal(rng, d.d_q, d.d_a)),
        w1("vision.w1", scaled_normal(rng, d.d_v, d.d_a)),
        w2("vision.w2", scaled_normal(rng, d.d_v, d.d_o)) {}

  std::size_t n_structures() const { return queries.value.rows(); }
};

struct AttentionVars {
  Var attention;  // N^s x N^v, rows are distributions
  Var tokens;     // S^v, N^s x d_o
};

namespace detail {

inline void check_observe_dims(const Mat& f, const StructureQuerySet& q) {
  const auto& Q = q.queries.value;
  const auto& W0 = q.w0.value;
  const auto& W1 = q.w1.value;
  const auto& W2 = q.w2.value;
  if (Q.cols() != W0.rows() || f.cols() != W1.rows() || W0.cols() != W1.cols() || f.cols() != W2.rows()) {
    throw ShapeError("observe: Q " + Q.shape().str() + ", W0 " + W0.shape().str() + ", F " + f.shape().str() +
                     ", W1 " + W1.shape().str() + ", W2 " + W2.shape().str());
  }
}

template <typename QS>
AttentionVars observe_impl(Tape& t, Var features, QS& q) {
  detail::check_observe_dims(features.value(), q);
  Var qk = ten::matmul(t.param(q.queries), t.param(q.w0));  // N^s x d_a
  Var fk = ten::matmul(features, t.param(q.w1));            // N^v x d_a
  Var a = ten::softmax_rows(ten::matmul_nt(qk, fk));        // N^s x N^v
  Var v = ten::matmul(features, t.param(q.w2));             // N^v x d_o
  return {a, ten::matmul(a, v)};
}

}  // namespace detail

// A^v = softmax_rows(Q W0 (F W1)^T);  S^v = A^v (F W2)
inline AttentionVars observe(Tape& t, Var features, StructureQuerySet& q) { return detail::observe_impl(t, features, q); }
inline AttentionVars observe(Tape& t, Var features, const StructureQuerySet& q) {
  return detail::observe_impl(t, features, q);
}

struct AttentionResult {
  Mat attention;
  Mat tokens;
};

inline AttentionResult observe(const PatchGrid& grid, const StructureQuerySet& q) {
  Tape t(false);
  auto r = observe(t, t.constant(grid.features), q);
  return {r.attention.value(), r.tokens.value()};
}

// T^s: K patch embeddings per structure, structure-major, each group in
// descending attention weight.
struct SelectedPatches {
  struct Entry {
    std::size_t structure;
    std::size_t patch;
  };
  std::size_t k = 0;
  std::vector<Entry> entries;
  Mat embeddings;  // (K * N^s) x d_v
};

// Indices of the K largest weights of one attention row; ties go to the lower
// patch index.
inline std::vector<std::size_t> top_k(std::span<const double> row, std::size_t k) {
  std::vector<std::size_t> idx(row.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return row[a] > row[b]; });
  idx.resize(k);
  return idx;
}

inline SelectedPatches select_patches(const Mat& attention, const Mat& features, std::size_t k) {
  if (attention.cols() != features.rows()) {
    throw ShapeError("select_patches: attention " + attention.shape().str() + " vs features " + features.shape().str());
  }
  if (k > features.rows()) {
    throw ParameterError("select_patches: K=" + std::to_string(k) + " exceeds N^v=" + std::to_string(features.rows()));
  }
  SelectedPatches out;
  out.k = k;
  out.embeddings = Mat(k * attention.rows(), features.cols());
  std::size_t r = 0;
  for (std::size_t s = 0; s < attention.rows(); ++s) {
    for (std::size_t j : top_k(attention.row_span(s), k)) {
      out.entries.push_back({s, j});
      auto src = features.row_span(j);
      std::copy(src.begin(), src.end(), out.embeddings.row_span(r++).begin());
    }
  }
  return out;
}

inline SelectedPatches select_patches(const AttentionResult& result, const PatchGrid& grid, std::size_t k) {
  return select_patches(result.attention, grid.features, k);
}

// Patch embedder plus structure queries: everything trained in stage 1 on
// the visual side and frozen in stage 2.
class VisionModel {
 public:
  PatchEmbedder embedder;
  StructureQuerySet queries;

  VisionModel() = default;
  VisionModel(const VisionDims& dims, std::uint64_t seed) : dims_(dims) {
    ten::Rng rng(ten::mix_seed(seed, 0x0b5e));
    embedder = PatchEmbedder(dims, rng);
    queries = StructureQuerySet(dims, rng);
  }

  const VisionDims& dims() const { return dims_; }

  std::vector<Param*> params() { return {&embedder.weight, &embedder.bias, &queries.queries, &queries.w0, &queries.w1, &queries.w2}; }
  std::vector<const Param*> params() const {
    return {&embedder.weight, &embedder.bias, &queries.queries, &queries.w0, &queries.w1, &queries.w2};
  }

  void set_frozen(bool frozen) {
    for (Param* p : params()) p->frozen = frozen;
  }

  // F^v on the tape from constant flattened patches.
  AttentionVars forward(Tape& t, Var patches) { return observe(t, embedder.forward(t, patches), queries); }

  struct Features {
    PatchGrid grid;
    AttentionResult observation;
  };
  Features features(const Volume& v, std::string subject = {}) const {
    Features f;
    f.grid = embedder.embed_volume(v, std::move(subject));
    f.observation = observe(f.grid, queries);
    return f;
  }
  Features features_from_patches(const Mat& patches) const {
    Features f;
    Tape t(false);
    Var feats = embedder.forward(t, t.constant(patches));
    f.grid.features = feats.value();
    f.observation = observe(f.grid, queries);
    return f;
  }

  void save_to(ten::ArrayTable& table) const {
    for (const Param* p : params()) table.put(*p);
    auto& m = table.meta();
    m["vision.volume"] = extents_str(dims_.volume);
    m["vision.patch"] = extents_str(dims_.patch);
  }

  void load_from(const ten::ArrayTable& table) {
    for (Param* p : params()) table.load_into(*p);
  }

 private:
  VisionDims dims_;
};

}  // namespace socl::vision
