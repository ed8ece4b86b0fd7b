#include "tossim/policy.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace tossim {

const char* variant_name(PolicyVariant v) {
  switch (v) {
    case PolicyVariant::ResidualPhysics: return "residual-physics";
    case PolicyVariant::Regression: return "regression";
    case PolicyVariant::RegressionPoP: return "regression-pop";
    case PolicyVariant::PhysicsOnly: return "physics-only";
  }
  throw std::logic_error("unknown variant");
}

PolicyVariant variant_from_name(const std::string& name) {
  if (name == "residual-physics") return PolicyVariant::ResidualPhysics;
  if (name == "regression") return PolicyVariant::Regression;
  if (name == "regression-pop") return PolicyVariant::RegressionPoP;
  if (name == "physics-only") return PolicyVariant::PhysicsOnly;
  throw std::runtime_error("unknown policy variant: " + name);
}

int PolicyConfig::canvas_size() const {
  const int diag = static_cast<int>(
      std::ceil(std::hypot(static_cast<double>(map_h), static_cast<double>(map_w))));
  return (diag + 3) / 4 * 4;
}

PolicyConfig PolicyConfig::from_config(const Config& cfg, const WorkspaceConfig& ws) {
  PolicyConfig p;
  p.num_rotations = ws.num_rotations;
  p.map_h = ws.map_h();
  p.map_w = ws.map_w();
  auto geti = [&](const std::string& key, int dflt) {
    return static_cast<int>(cfg.get_int(key, dflt));
  };
  p.cond_channels = geti("policy.cond_channels", 8);
  p.trunk_widths = {geti("policy.trunk1", 32), geti("policy.trunk2", 32),
                    geti("policy.trunk3", 64), geti("policy.trunk4", 64)};
  p.head_widths = {geti("policy.head1", 32), geti("policy.head2", 16),
                   geti("policy.head3", 8)};
  // Optimizer hyperparameters live under train.*; the trainer forwards
  // them when it builds a policy, so they are not read again here.
  return p;
}

template <class T>
PolicyT<T>::PolicyT(PolicyConfig cfg, PolicyVariant variant, std::uint64_t init_seed)
    : cfg_(cfg), variant_(variant) {
  if (cfg_.num_rotations < 1) throw std::invalid_argument("num_rotations < 1");
  if (cfg_.map_h < 4 || cfg_.map_w < 4) throw std::invalid_argument("map too small");
  S_ = cfg_.canvas_size();
  row_off_ = (S_ - cfg_.map_h) / 2;
  col_off_ = (S_ - cfg_.map_w) / 2;

  const auto& tw = cfg_.trunk_widths;
  const auto& hw = cfg_.head_widths;
  layers_.t1 = tn::ConvParams<T>(tw[0], 2, 3, 3);
  layers_.t2 = tn::ConvParams<T>(tw[1], tw[0], 3, 3);
  layers_.t3 = tn::ConvParams<T>(tw[2], tw[1], 3, 3);
  layers_.t4 = tn::ConvParams<T>(tw[3], tw[2], 3, 3);
  auto make_head = [&](typename Layers::Head& h) {
    h.h1 = tn::ConvParams<T>(hw[0], tw[3] + cfg_.cond_channels, 3, 3);
    h.h2 = tn::ConvParams<T>(hw[1], hw[0], 3, 3);
    h.h3 = tn::ConvParams<T>(hw[2], hw[1], 3, 3);
    h.h4 = tn::ConvParams<T>(1, hw[2], 3, 3);
  };
  make_head(layers_.grasp);
  if (has_throw_head(variant_)) make_head(layers_.throw_);

  // Fixed init order (trunk, grasp head, throw head) so variants sharing a
  // seed share trunk and grasp-head weights.
  Rng rng(init_seed);
  tn::he_init(layers_.t1, rng);
  tn::he_init(layers_.t2, rng);
  tn::he_init(layers_.t3, rng);
  tn::he_init(layers_.t4, rng);
  auto init_head = [&](typename Layers::Head& h) {
    tn::he_init(h.h1, rng);
    tn::he_init(h.h2, rng);
    tn::he_init(h.h3, rng);
    tn::he_init(h.h4, rng);
  };
  init_head(layers_.grasp);
  if (has_throw_head(variant_)) init_head(layers_.throw_);

  grads_.t1 = tn::ConvGrads<T>(layers_.t1);
  grads_.t2 = tn::ConvGrads<T>(layers_.t2);
  grads_.t3 = tn::ConvGrads<T>(layers_.t3);
  grads_.t4 = tn::ConvGrads<T>(layers_.t4);
  grads_.grasp.h1 = tn::ConvGrads<T>(layers_.grasp.h1);
  grads_.grasp.h2 = tn::ConvGrads<T>(layers_.grasp.h2);
  grads_.grasp.h3 = tn::ConvGrads<T>(layers_.grasp.h3);
  grads_.grasp.h4 = tn::ConvGrads<T>(layers_.grasp.h4);
  if (has_throw_head(variant_)) {
    grads_.throw_.h1 = tn::ConvGrads<T>(layers_.throw_.h1);
    grads_.throw_.h2 = tn::ConvGrads<T>(layers_.throw_.h2);
    grads_.throw_.h3 = tn::ConvGrads<T>(layers_.throw_.h3);
    grads_.throw_.h4 = tn::ConvGrads<T>(layers_.throw_.h4);
  }

  build_rotation_maps();
}

template <class T>
void PolicyT<T>::build_rotation_maps() {
  const int R = cfg_.num_rotations;
  const int H = cfg_.map_h, W = cfg_.map_w;
  const double c = (S_ - 1) / 2.0;
  gather_.assign(R, {});
  u_map_.assign(R, {});

  // 180-degree partners are exact index-level flips when the map sits
  // symmetrically in the canvas; derive them instead of recomputing through
  // trigonometry so the rotation-consistency property holds bit-exactly.
  const bool flip_derivable =
      R % 2 == 0 && (S_ - H) % 2 == 0 && (S_ - W) % 2 == 0;
  const int analytic_count = flip_derivable ? R / 2 : R;

  for (int k = 0; k < analytic_count; ++k) {
    const double th = 2.0 * M_PI * k / R;
    const double co = std::cos(th), si = std::sin(th);
    auto& g = gather_[k];
    g.resize(static_cast<std::size_t>(S_) * S_);
    for (int qr = 0; qr < S_; ++qr) {
      for (int qc = 0; qc < S_; ++qc) {
        const double x = qc - c, y = qr - c;
        const long sc = std::lround(c + co * x - si * y);
        const long sr = std::lround(c + si * x + co * y);
        g[static_cast<std::size_t>(qr) * S_ + qc] =
            (sr >= 0 && sr < S_ && sc >= 0 && sc < S_)
                ? static_cast<std::int32_t>(sr * S_ + sc)
                : -1;
      }
    }
    auto& u = u_map_[k];
    u.resize(static_cast<std::size_t>(H) * W);
    for (int i = 0; i < H; ++i) {
      for (int j = 0; j < W; ++j) {
        const double x = (j + col_off_) - c, y = (i + row_off_) - c;
        const long uc = std::lround(c + co * x + si * y);
        const long ur = std::lround(c - si * x + co * y);
        if (ur < 0 || ur >= S_ || uc < 0 || uc >= S_) {
          throw std::logic_error("rotation map escaped the canvas");
        }
        u[static_cast<std::size_t>(i) * W + j] =
            static_cast<std::int32_t>(ur * S_ + uc);
      }
    }
  }
  if (flip_derivable) {
    const std::int32_t last = S_ * S_ - 1;
    for (int k = R / 2; k < R; ++k) {
      const auto& gsrc = gather_[k - R / 2];
      auto& g = gather_[k];
      g.resize(gsrc.size());
      for (std::size_t q = 0; q < gsrc.size(); ++q) {
        g[q] = gsrc[q] < 0 ? -1 : last - gsrc[q];
      }
      const auto& usrc = u_map_[k - R / 2];
      auto& u = u_map_[k];
      u.resize(usrc.size());
      for (int i = 0; i < H; ++i) {
        for (int j = 0; j < W; ++j) {
          u[static_cast<std::size_t>(i) * W + j] =
              usrc[static_cast<std::size_t>(H - 1 - i) * W + (W - 1 - j)];
        }
      }
    }
  }
}

template <class T>
double PolicyT<T>::conditioning_value(const Vec3& p, const WorkspaceConfig& ws) const {
  if (physics_conditioned(variant_)) {
    return solve_release(p, ws).planar_speed;
  }
  const double d = p.planar_norm() - ws.release_radius;
  return d;
}

template <class T>
void PolicyT<T>::embed_canvas(const Heightmap& I) {
  if (I.h != cfg_.map_h || I.w != cfg_.map_w) {
    throw std::invalid_argument("heightmap dims do not match policy config");
  }
  canvas_.resize(2 * static_cast<std::size_t>(S_) * S_);
  for (int ch = 0; ch < 2; ++ch) {
    fill_[ch] = static_cast<T>((0.0f - I.mean[ch]) / I.stdev[ch]);
    T* plane = canvas_.data() + static_cast<std::size_t>(ch) * S_ * S_;
    std::fill(plane, plane + static_cast<std::size_t>(S_) * S_, fill_[ch]);
    for (int i = 0; i < I.h; ++i) {
      T* row = plane + static_cast<std::size_t>(i + row_off_) * S_ + col_off_;
      const float* src = I.norm.data() + (static_cast<std::size_t>(ch) * I.h + i) * I.w;
      for (int j = 0; j < I.w; ++j) row[j] = static_cast<T>(src[j]);
    }
  }
}

template <class T>
void PolicyT<T>::gather_view(int k, tn::Tensor4<T>& dst, int batch_index) const {
  const auto& g = gather_[k];
  const std::size_t plane = static_cast<std::size_t>(S_) * S_;
  for (int ch = 0; ch < 2; ++ch) {
    const T* src = canvas_.data() + ch * plane;
    T* out = dst.ptr() + (static_cast<std::size_t>(batch_index) * 2 + ch) * plane;
    const T fill = fill_[ch];
    for (std::size_t q = 0; q < plane; ++q) {
      out[q] = g[q] < 0 ? fill : src[g[q]];
    }
  }
}

template <class T>
void PolicyT<T>::run_trunk(const tn::Tensor4<T>& in, tn::Tensor4<T>& t1,
                           tn::Tensor4<T>& t2, tn::Tensor4<T>& p1,
                           tn::Tensor4<T>& t3, tn::Tensor4<T>& t4,
                           tn::Tensor4<T>& p2, std::vector<std::int32_t>& argmax1,
                           std::vector<std::int32_t>& argmax2) const {
  tn::conv2d_forward(in, layers_.t1, 1, 1, t1, scratch_);
  tn::relu_forward(t1);
  tn::conv2d_forward(t1, layers_.t2, 1, 1, t2, scratch_);
  tn::relu_forward(t2);
  tn::maxpool2x2_forward(t2, p1, argmax1);
  tn::conv2d_forward(p1, layers_.t3, 1, 1, t3, scratch_);
  tn::relu_forward(t3);
  tn::conv2d_forward(t3, layers_.t4, 1, 1, t4, scratch_);
  tn::relu_forward(t4);
  tn::maxpool2x2_forward(t4, p2, argmax2);
}

template <class T>
void PolicyT<T>::tile_cond(const tn::Tensor4<T>& p2, double cond,
                           tn::Tensor4<T>& cat) const {
  const int kc = cfg_.cond_channels;
  const int cc = p2.c + kc;
  if (cat.n != p2.n || cat.c != cc || cat.h != p2.h || cat.w != p2.w) {
    cat = tn::Tensor4<T>(p2.n, cc, p2.h, p2.w);
  }
  const std::size_t plane = static_cast<std::size_t>(p2.h) * p2.w;
  const T cv = static_cast<T>(cond);
  for (int b = 0; b < p2.n; ++b) {
    T* dst = cat.ptr() + static_cast<std::size_t>(b) * cc * plane;
    const T* src = p2.ptr() + static_cast<std::size_t>(b) * p2.c * plane;
    std::memcpy(dst, src, p2.c * plane * sizeof(T));
    std::fill(dst + p2.c * plane, dst + cc * plane, cv);
  }
}

template <class T>
void PolicyT<T>::run_head(const typename Layers::Head& lw, const tn::Tensor4<T>& cat,
                          typename TrainCache<T>::Head& a) const {
  tn::conv2d_forward(cat, lw.h1, 1, 1, a.h1, scratch_);
  tn::relu_forward(a.h1);
  tn::conv2d_forward(a.h1, lw.h2, 1, 1, a.h2, scratch_);
  tn::relu_forward(a.h2);
  tn::upsample2x_forward(a.h2, a.u1);
  tn::conv2d_forward(a.u1, lw.h3, 1, 1, a.h3, scratch_);
  tn::relu_forward(a.h3);
  tn::upsample2x_forward(a.h3, a.u2);
  tn::conv2d_forward(a.u2, lw.h4, 1, 1, a.out, scratch_);
}

template <class T>
PolicyOutput PolicyT<T>::forward(const Heightmap& I, double cond) {
  const int R = cfg_.num_rotations, H = cfg_.map_h, W = cfg_.map_w;
  embed_canvas(I);
  if (fwd_.in.n != R || fwd_.in.c != 2 || fwd_.in.h != S_ || fwd_.in.w != S_) {
    fwd_.in = tn::Tensor4<T>(R, 2, S_, S_);
  }
  for (int k = 0; k < R; ++k) gather_view(k, fwd_.in, k);
  run_trunk(fwd_.in, fwd_.t1, fwd_.t2, fwd_.p1, fwd_.t3, fwd_.t4, fwd_.p2,
            fwd_.argmax1, fwd_.argmax2);
  tile_cond(fwd_.p2, cond, fwd_.cat);
  run_head(layers_.grasp, fwd_.cat, fwd_.grasp);
  const bool throws = has_throw_head(variant_);
  if (throws) run_head(layers_.throw_, fwd_.cat, fwd_.throw_);

  PolicyOutput out;
  out.R = R;
  out.H = H;
  out.W = W;
  out.cond = cond;
  out.qg.resize(static_cast<std::size_t>(R) * H * W);
  if (throws) out.qt.resize(out.qg.size());
  const std::size_t plane = static_cast<std::size_t>(S_) * S_;
  for (int k = 0; k < R; ++k) {
    const T* zg = fwd_.grasp.out.ptr() + static_cast<std::size_t>(k) * plane;
    const T* zt = throws ? fwd_.throw_.out.ptr() + static_cast<std::size_t>(k) * plane
                         : nullptr;
    const auto& u = u_map_[k];
    float* qg = out.qg.data() + static_cast<std::size_t>(k) * H * W;
    float* qt = throws ? out.qt.data() + static_cast<std::size_t>(k) * H * W : nullptr;
    for (std::size_t m = 0; m < u.size(); ++m) {
      qg[m] = static_cast<float>(tn::sigmoid(zg[u[m]]));
      if (throws) qt[m] = static_cast<float>(zt[u[m]]);
    }
  }
  return out;
}

template <class T>
double PolicyT<T>::qt_at_action(const Heightmap& I, double cond, const GraspAction& a) {
  if (!has_throw_head(variant_)) return 0.0;
  TrainCache<T>& c = explore_cache_;
  train_forward(I, cond, a.rotation, c, true);
  const auto u = u_map_[a.rotation][static_cast<std::size_t>(a.row) * cfg_.map_w + a.col];
  return static_cast<double>(c.throw_.out.data[u]);
}

template <class T>
GraspAction PolicyT<T>::argmax_action(const PolicyOutput& out) {
  std::size_t best = 0;
  float best_v = out.qg[0];
  for (std::size_t i = 1; i < out.qg.size(); ++i) {
    if (out.qg[i] > best_v) {
      best_v = out.qg[i];
      best = i;
    }
  }
  GraspAction a;
  a.rotation = static_cast<int>(best / (static_cast<std::size_t>(out.H) * out.W));
  const std::size_t rem = best % (static_cast<std::size_t>(out.H) * out.W);
  a.row = static_cast<int>(rem / out.W);
  a.col = static_cast<int>(rem % out.W);
  a.explored = false;
  return a;
}

template <class T>
GraspAction PolicyT<T>::random_action(Rng& rng) const {
  GraspAction a;
  a.rotation = static_cast<int>(rng.uniform_index(cfg_.num_rotations));
  const std::size_t pix =
      rng.uniform_index(static_cast<std::size_t>(cfg_.map_h) * cfg_.map_w);
  a.row = static_cast<int>(pix / cfg_.map_w);
  a.col = static_cast<int>(pix % cfg_.map_w);
  a.explored = true;
  return a;
}

template <class T>
GraspAction PolicyT<T>::select_action(const PolicyOutput& out, double epsilon,
                                      Rng& rng) const {
  if (rng.bernoulli(epsilon)) return random_action(rng);
  return argmax_action(out);
}

template <class T>
ThrowParams PolicyT<T>::compose_throw(double qt_at_action, const Vec3& p,
                                      double epsilon, Rng& rng,
                                      const WorkspaceConfig& ws) const {
  const ReleasePlan ballistic = solve_release(p, ws);
  double speed = ballistic.planar_speed;
  ThrowParams t;
  if (has_throw_head(variant_)) {
    if (rng.bernoulli(epsilon)) {
      speed = rng.uniform(0.5, 1.5) * ballistic.planar_speed;
      t.explored = true;
    } else if (variant_ == PolicyVariant::ResidualPhysics) {
      speed = ballistic.planar_speed + qt_at_action;
    } else {
      speed = qt_at_action;
    }
  }
  if (speed <= 0.0) {
    speed = 0.1;
    t.clamped = true;
    t.explored = true;
  }
  t.plan = plan_with_planar_speed(p, speed, ws);
  return t;
}

template <class T>
ThrowParams PolicyT<T>::compose_throw(const PolicyOutput& out, const GraspAction& a,
                                      const Vec3& p, double epsilon, Rng& rng,
                                      const WorkspaceConfig& ws) const {
  const double qt = out.has_qt() ? out.qt_at(a.rotation, a.row, a.col) : 0.0;
  return compose_throw(qt, p, epsilon, rng, ws);
}

template <class T>
void PolicyT<T>::train_forward(const Heightmap& I, double cond, int rotation,
                               TrainCache<T>& cache, bool need_throw) {
  if (rotation < 0 || rotation >= cfg_.num_rotations) {
    throw std::invalid_argument("rotation out of range");
  }
  embed_canvas(I);
  cache.rotation = rotation;
  cache.cond = cond;
  if (cache.in.n != 1 || cache.in.h != S_ || cache.in.w != S_) {
    cache.in = tn::Tensor4<T>(1, 2, S_, S_);
  }
  gather_view(rotation, cache.in, 0);
  run_trunk(cache.in, cache.t1, cache.t2, cache.p1, cache.t3, cache.t4, cache.p2,
            cache.argmax1, cache.argmax2);
  tile_cond(cache.p2, cond, cache.cat);
  run_head(layers_.grasp, cache.cat, cache.grasp);
  cache.has_throw = has_throw_head(variant_) && need_throw;
  if (cache.has_throw) run_head(layers_.throw_, cache.cat, cache.throw_);
}

template <class T>
void PolicyT<T>::backward_head(const typename Layers::Head& lw,
                               const typename TrainCache<T>::Head& a,
                               const tn::Tensor4<T>& cat, typename Grads::Head& g,
                               tn::Tensor4<T>& grad_out_map, tn::Tensor4<T>& grad_cat,
                               bool accumulate_cat) {
  auto& s = bwd_.g;
  tn::conv2d_backward(a.u2, lw.h4, grad_out_map, 1, 1, g.h4, &s.u2, scratch_);
  tn::upsample2x_backward(s.u2, a.h3.h, a.h3.w, s.h3);
  tn::relu_backward(a.h3, s.h3);
  tn::conv2d_backward(a.u1, lw.h3, s.h3, 1, 1, g.h3, &s.u1, scratch_);
  tn::upsample2x_backward(s.u1, a.h2.h, a.h2.w, s.h2);
  tn::relu_backward(a.h2, s.h2);
  tn::conv2d_backward(a.h1, lw.h2, s.h2, 1, 1, g.h2, &s.h1, scratch_);
  tn::relu_backward(a.h1, s.h1);
  if (accumulate_cat) {
    tn::conv2d_backward(cat, lw.h1, s.h1, 1, 1, g.h1, &bwd_.d_cat2, scratch_);
    for (std::size_t i = 0; i < grad_cat.data.size(); ++i) {
      grad_cat.data[i] += bwd_.d_cat2.data[i];
    }
  } else {
    tn::conv2d_backward(cat, lw.h1, s.h1, 1, 1, g.h1, &grad_cat, scratch_);
  }
}

template <class T>
typename PolicyT<T>::LossParts PolicyT<T>::loss_and_backward(
    const TrainCache<T>& cache, int row, int col, double y,
    const std::optional<double>& throw_target) {
  if (y != 0.0 && y != 1.0) {
    throw std::invalid_argument("grasp label must be 0 or 1");
  }
  if (row < 0 || row >= cfg_.map_h || col < 0 || col >= cfg_.map_w) {
    throw std::out_of_range("action pixel outside the map");
  }
  const auto u = u_map_[cache.rotation][static_cast<std::size_t>(row) * cfg_.map_w + col];
  LossParts parts;

  // Grasp head: BCE through the sigmoid at the executed pixel.
  const T z = cache.grasp.out.data[u];
  const T q = tn::sigmoid(z);
  const auto [bce, dq] = tn::bce_loss(q, static_cast<T>(y));
  parts.bce = static_cast<double>(bce);
  if (!bwd_.d_out.same_shape(cache.grasp.out)) {
    bwd_.d_out = tn::Tensor4<T>(1, 1, cache.grasp.out.h, cache.grasp.out.w);
  }
  bwd_.d_out.zero();
  bwd_.d_out.data[u] = dq * q * (T(1) - q);
  backward_head(layers_.grasp, cache.grasp, cache.cat, grads_.grasp, bwd_.d_out,
                bwd_.d_cat, false);

  if (throw_target.has_value() && !has_throw_head(variant_)) {
    throw std::invalid_argument("throw label for a variant without a throw head");
  }
  // The throw loss is gated by the grasp label: L = L_g + y * L_t. A stored
  // residual on a y=0 transition stays recorded but contributes no gradient.
  if (y != 0.0 && throw_target.has_value()) {
    if (!cache.has_throw) {
      throw std::invalid_argument("throw label but cache lacks throw activations");
    }
    const T zt = cache.throw_.out.data[u];
    const auto [hub, dd] = tn::huber_loss(zt, static_cast<T>(*throw_target));
    parts.huber = static_cast<double>(hub);
    bwd_.d_out.zero();
    bwd_.d_out.data[u] = dd;
    backward_head(layers_.throw_, cache.throw_, cache.cat, grads_.throw_, bwd_.d_out,
                  bwd_.d_cat, true);
  }
  parts.total = parts.bce + parts.huber;

  // Trunk backward from the feature slice of the concatenation gradient;
  // the tiled conditioning channels are constants and their gradient stops.
  const int fc = cfg_.trunk_widths[3];
  if (!bwd_.d_p2.same_shape(cache.p2)) {
    bwd_.d_p2 = tn::Tensor4<T>(1, fc, cache.p2.h, cache.p2.w);
  }
  std::memcpy(bwd_.d_p2.ptr(), bwd_.d_cat.ptr(),
              static_cast<std::size_t>(fc) * cache.p2.h * cache.p2.w * sizeof(T));
  tn::maxpool2x2_backward(bwd_.d_p2, cache.argmax2, cache.t4.h, cache.t4.w, bwd_.d_t4);
  tn::relu_backward(cache.t4, bwd_.d_t4);
  tn::conv2d_backward(cache.t3, layers_.t4, bwd_.d_t4, 1, 1, grads_.t4, &bwd_.d_t3,
                      scratch_);
  tn::relu_backward(cache.t3, bwd_.d_t3);
  tn::conv2d_backward(cache.p1, layers_.t3, bwd_.d_t3, 1, 1, grads_.t3, &bwd_.d_p1,
                      scratch_);
  tn::maxpool2x2_backward(bwd_.d_p1, cache.argmax1, cache.t2.h, cache.t2.w, bwd_.d_t2);
  tn::relu_backward(cache.t2, bwd_.d_t2);
  tn::conv2d_backward(cache.t1, layers_.t2, bwd_.d_t2, 1, 1, grads_.t2, &bwd_.d_t1,
                      scratch_);
  tn::relu_backward(cache.t1, bwd_.d_t1);
  tn::conv2d_backward(cache.in, layers_.t1, bwd_.d_t1, 1, 1, grads_.t1,
                      static_cast<tn::Tensor4<T>*>(nullptr), scratch_);
  return parts;
}

template <class T>
double PolicyT<T>::pretrain_loss_and_backward(const TrainCache<T>& cache, int row,
                                              int col, double throw_target) {
  if (!cache.has_throw) throw std::invalid_argument("cache lacks throw activations");
  const auto u = u_map_[cache.rotation][static_cast<std::size_t>(row) * cfg_.map_w + col];
  const T zt = cache.throw_.out.data[u];
  const auto [hub, dd] = tn::huber_loss(zt, static_cast<T>(throw_target));
  if (!bwd_.d_out.same_shape(cache.throw_.out)) {
    bwd_.d_out = tn::Tensor4<T>(1, 1, cache.throw_.out.h, cache.throw_.out.w);
  }
  bwd_.d_out.zero();
  bwd_.d_out.data[u] = dd;
  backward_head(layers_.throw_, cache.throw_, cache.cat, grads_.throw_, bwd_.d_out,
                bwd_.d_cat, false);
  return static_cast<double>(hub);
}

namespace {

template <class T>
void scale_grads(tn::ConvGrads<T>& g, T s) {
  for (auto& x : g.kernel.data) x *= s;
  for (auto& x : g.bias) x *= s;
}

}  // namespace

template <class T>
void PolicyT<T>::apply_step(int batch_size) {
  if (batch_size < 1) throw std::invalid_argument("batch_size < 1");
  const T s = T(1) / static_cast<T>(batch_size);
  const T lr = static_cast<T>(cfg_.lr);
  const T mom = static_cast<T>(cfg_.momentum);
  const T wd = static_cast<T>(cfg_.weight_decay);
  auto step = [&](tn::ConvParams<T>& p, tn::ConvGrads<T>& g) {
    scale_grads(g, s);
    tn::sgd_momentum_step(p, g, lr, mom, wd);
  };
  step(layers_.t1, grads_.t1);
  step(layers_.t2, grads_.t2);
  step(layers_.t3, grads_.t3);
  step(layers_.t4, grads_.t4);
  step(layers_.grasp.h1, grads_.grasp.h1);
  step(layers_.grasp.h2, grads_.grasp.h2);
  step(layers_.grasp.h3, grads_.grasp.h3);
  step(layers_.grasp.h4, grads_.grasp.h4);
  if (has_throw_head(variant_)) {
    step(layers_.throw_.h1, grads_.throw_.h1);
    step(layers_.throw_.h2, grads_.throw_.h2);
    step(layers_.throw_.h3, grads_.throw_.h3);
    step(layers_.throw_.h4, grads_.throw_.h4);
  }
  zero_grads();
}

template <class T>
void PolicyT<T>::apply_step_throw_only(int batch_size) {
  if (batch_size < 1) throw std::invalid_argument("batch_size < 1");
  if (!has_throw_head(variant_)) throw std::logic_error("no throw head");
  const T s = T(1) / static_cast<T>(batch_size);
  const T lr = static_cast<T>(cfg_.lr);
  const T mom = static_cast<T>(cfg_.momentum);
  const T wd = static_cast<T>(cfg_.weight_decay);
  auto step = [&](tn::ConvParams<T>& p, tn::ConvGrads<T>& g) {
    scale_grads(g, s);
    tn::sgd_momentum_step(p, g, lr, mom, wd);
  };
  step(layers_.throw_.h1, grads_.throw_.h1);
  step(layers_.throw_.h2, grads_.throw_.h2);
  step(layers_.throw_.h3, grads_.throw_.h3);
  step(layers_.throw_.h4, grads_.throw_.h4);
  zero_grads();
}

template <class T>
void PolicyT<T>::zero_grads() {
  grads_.t1.zero();
  grads_.t2.zero();
  grads_.t3.zero();
  grads_.t4.zero();
  grads_.grasp.h1.zero();
  grads_.grasp.h2.zero();
  grads_.grasp.h3.zero();
  grads_.grasp.h4.zero();
  if (has_throw_head(variant_)) {
    grads_.throw_.h1.zero();
    grads_.throw_.h2.zero();
    grads_.throw_.h3.zero();
    grads_.throw_.h4.zero();
  }
}

namespace {

template <class T, class P>
void add_layer(std::vector<tn::NamedBuffer<T>>& v, const std::string& name, P& p,
               bool with_momentum) {
  auto dims4 = [](auto& t) {
    return std::vector<int>{t.n, t.c, t.h, t.w};
  };
  v.push_back({name + ".kernel", dims4(p.kernel), p.kernel.ptr(), p.kernel.size()});
  v.push_back({name + ".bias", {static_cast<int>(p.bias.size())}, p.bias.data(),
               p.bias.size()});
  if (with_momentum) {
    v.push_back({name + ".kernel_m", dims4(p.kernel_m), p.kernel_m.ptr(),
                 p.kernel_m.size()});
    v.push_back({name + ".bias_m", {static_cast<int>(p.bias_m.size())},
                 p.bias_m.data(), p.bias_m.size()});
  }
}

}  // namespace

template <class T>
void PolicyT<T>::save(const std::string& path) const {
  std::vector<tn::NamedBuffer<const T>> v;
  add_layer(v, "trunk1", layers_.t1, true);
  add_layer(v, "trunk2", layers_.t2, true);
  add_layer(v, "trunk3", layers_.t3, true);
  add_layer(v, "trunk4", layers_.t4, true);
  add_layer(v, "grasp1", layers_.grasp.h1, true);
  add_layer(v, "grasp2", layers_.grasp.h2, true);
  add_layer(v, "grasp3", layers_.grasp.h3, true);
  add_layer(v, "grasp4", layers_.grasp.h4, true);
  if (has_throw_head(variant_)) {
    add_layer(v, "throw1", layers_.throw_.h1, true);
    add_layer(v, "throw2", layers_.throw_.h2, true);
    add_layer(v, "throw3", layers_.throw_.h3, true);
    add_layer(v, "throw4", layers_.throw_.h4, true);
  }
  tn::save_checkpoint(path, v);
}

template <class T>
void PolicyT<T>::load(const std::string& path) {
  std::vector<tn::NamedBuffer<T>> v;
  add_layer(v, "trunk1", layers_.t1, true);
  add_layer(v, "trunk2", layers_.t2, true);
  add_layer(v, "trunk3", layers_.t3, true);
  add_layer(v, "trunk4", layers_.t4, true);
  add_layer(v, "grasp1", layers_.grasp.h1, true);
  add_layer(v, "grasp2", layers_.grasp.h2, true);
  add_layer(v, "grasp3", layers_.grasp.h3, true);
  add_layer(v, "grasp4", layers_.grasp.h4, true);
  if (has_throw_head(variant_)) {
    add_layer(v, "throw1", layers_.throw_.h1, true);
    add_layer(v, "throw2", layers_.throw_.h2, true);
    add_layer(v, "throw3", layers_.throw_.h3, true);
    add_layer(v, "throw4", layers_.throw_.h4, true);
  }
  tn::load_checkpoint(path, v);
}

template <class T>
std::uint64_t PolicyT<T>::param_hash() const {
  std::vector<tn::NamedBuffer<const T>> v;
  add_layer(v, "trunk1", layers_.t1, false);
  add_layer(v, "trunk2", layers_.t2, false);
  add_layer(v, "trunk3", layers_.t3, false);
  add_layer(v, "trunk4", layers_.t4, false);
  add_layer(v, "grasp1", layers_.grasp.h1, false);
  add_layer(v, "grasp2", layers_.grasp.h2, false);
  add_layer(v, "grasp3", layers_.grasp.h3, false);
  add_layer(v, "grasp4", layers_.grasp.h4, false);
  if (has_throw_head(variant_)) {
    add_layer(v, "throw1", layers_.throw_.h1, false);
    add_layer(v, "throw2", layers_.throw_.h2, false);
    add_layer(v, "throw3", layers_.throw_.h3, false);
    add_layer(v, "throw4", layers_.throw_.h4, false);
  }
  return tn::fnv1a_hash(v);
}

template class PolicyT<float>;
template class PolicyT<double>;

}  // namespace tossim
