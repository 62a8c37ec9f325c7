#include "skelfuse/gradcheck_suite.hpp"

#include <cmath>
#include <memory>

#include "skelfuse/fusion.hpp"
#include "skelfuse/ops.hpp"
#include "skelfuse/param_store.hpp"
#include "skelfuse/rng.hpp"
#include "skelfuse/seg_head.hpp"
#include "skelfuse/skeleton_net.hpp"

namespace skelfuse {

void GradCheckRegistry::add(const std::string& name, Check check) {
  for (auto& [existing, fn] : checks_)
    if (existing == name) {
      fn = std::move(check);
      return;
    }
  checks_.emplace_back(name, std::move(check));
}

GradCheckReport run_gradchecks(const GradCheckRegistry& registry, double tolerance) {
  GradCheckReport report;
  report.passed = !registry.empty();
  for (const auto& [name, check] : registry.checks()) {
    GradCheckOutcome outcome{name, check()};
    const double err = outcome.result.max_error;
    if (!(err < tolerance)) report.passed = false;
    if (report.worst_name.empty() || !(err <= report.worst_error)) {
      report.worst_name = name;
      report.worst_error = err;
    }
    report.outcomes.push_back(std::move(outcome));
  }
  return report;
}

namespace {

using ad::Tensor;

std::size_t dim_in(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); }

Tensor random_matrix(Rng& rng, std::size_t r, std::size_t c, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(r * c);
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::matrix(r, c, std::move(v), true);
}

// Values bounded away from `pivot` so kinks stay out of the difference stencil.
Tensor away_from(Rng& rng, std::size_t r, std::size_t c, double pivot, double margin, double spread) {
  std::vector<double> v(r * c);
  for (double& x : v) x = pivot + (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(margin, spread);
  return Tensor::matrix(r, c, std::move(v), true);
}

// Contracts an arbitrary-shaped output with fixed random weights so every
// output entry influences the scalar differently.
Tensor weighted_sum(const Tensor& y, std::uint64_t salt) {
  Rng rng = Rng::derive(salt, "weights");
  std::vector<double> w(y.numel());
  for (double& x : w) x = rng.uniform(-1.0, 1.0);
  return ad::sum(ad::mul(y, Tensor::from(y.shape(), std::move(w))));
}

// Check over freshly drawn inputs; `make` returns inputs, `f` the output.
GradCheckRegistry::Check op_check(std::uint64_t seed, const std::string& name,
                                  std::function<std::vector<Tensor>(Rng&)> make,
                                  std::function<Tensor(const std::vector<Tensor>&)> f) {
  return [=] {
    Rng rng = Rng::derive(seed, "gradcheck-" + name);
    std::vector<Tensor> inputs = make(rng);
    const std::uint64_t salt = rng.next();
    return ad::grad_check([&] { return weighted_sum(f(inputs), salt); }, inputs);
  };
}

std::vector<Tensor> store_inputs(ParamStore& store) {
  std::vector<Tensor> out;
  for (auto& [name, entry] : store.entries()) out.push_back(entry.param);
  return out;
}

Skeleton toy_skeleton(Rng& rng) {
  // Six nodes: a path 0-1-2-3 with a two-node branch off node 1.
  Skeleton s;
  for (int i = 0; i < 6; ++i)
    s.nodes.push_back({Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)), rng.uniform(0.1, 0.5)});
  s.edges = {{0, 1}, {1, 2}, {1, 4}, {2, 3}, {4, 5}};
  return s;
}

SkeletonNetConfig toy_skeleton_config(int out_dim) {
  SkeletonNetConfig c;
  c.levels = 2;
  c.dims = {4, 6};
  c.out_dim = out_dim;
  c.pool_ratio = 0.5;
  return c;
}

PatchGrid toy_grid(Rng& rng, int patch, int rows, int cols) {
  PatchGrid g;
  g.patch_size = patch;
  g.rows = rows;
  g.cols = cols;
  g.values.resize(static_cast<std::size_t>(rows) * cols * patch * patch);
  for (double& v : g.values) v = rng.uniform();
  return g;
}

}  // namespace

GradCheckRegistry default_gradcheck_registry(std::uint64_t seed) {
  GradCheckRegistry reg;
  auto add = [&](const std::string& name, std::function<std::vector<Tensor>(Rng&)> make,
                 std::function<Tensor(const std::vector<Tensor>&)> f) {
    reg.add(name, op_check(seed, name, std::move(make), std::move(f)));
  };
  auto pair_same = [](Rng& rng) {
    const std::size_t r = dim_in(rng, 1, 8), c = dim_in(rng, 1, 8);
    return std::vector<Tensor>{random_matrix(rng, r, c), random_matrix(rng, r, c)};
  };
  auto one = [](Rng& rng) { return std::vector<Tensor>{random_matrix(rng, dim_in(rng, 1, 8), dim_in(rng, 1, 8))}; };

  add("matmul",
      [](Rng& rng) {
        const std::size_t n = dim_in(rng, 1, 8), k = dim_in(rng, 1, 8), m = dim_in(rng, 1, 8);
        return std::vector<Tensor>{random_matrix(rng, n, k), random_matrix(rng, k, m)};
      },
      [](const auto& in) { return ad::matmul(in[0], in[1]); });
  add("transpose", one, [](const auto& in) { return ad::transpose(in[0]); });
  add("reshape", one, [](const auto& in) { return ad::reshape(in[0], {in[0].numel()}); });
  add("add", pair_same, [](const auto& in) { return ad::add(in[0], in[1]); });
  add("sub", pair_same, [](const auto& in) { return ad::sub(in[0], in[1]); });
  add("mul", pair_same, [](const auto& in) { return ad::mul(in[0], in[1]); });
  add("div",
      [](Rng& rng) {
        const std::size_t r = dim_in(rng, 1, 8), c = dim_in(rng, 1, 8);
        return std::vector<Tensor>{random_matrix(rng, r, c), away_from(rng, r, c, 0.0, 0.5, 2.0)};
      },
      [](const auto& in) { return ad::div(in[0], in[1]); });
  add("add_row_broadcast",
      [](Rng& rng) {
        const std::size_t r = dim_in(rng, 2, 8), c = dim_in(rng, 1, 8);
        return std::vector<Tensor>{random_matrix(rng, r, c), random_matrix(rng, 1, c)};
      },
      [](const auto& in) { return ad::add(in[0], in[1]); });
  add("mul_column_broadcast",
      [](Rng& rng) {
        const std::size_t r = dim_in(rng, 1, 8), c = dim_in(rng, 2, 8);
        return std::vector<Tensor>{random_matrix(rng, r, 1), random_matrix(rng, r, c)};
      },
      [](const auto& in) { return ad::mul(in[0], in[1]); });
  add("div_scalar_broadcast",
      [](Rng& rng) {
        std::vector<Tensor> in{random_matrix(rng, dim_in(rng, 1, 8), dim_in(rng, 1, 8))};
        in.push_back(Tensor::scalar(rng.uniform(0.5, 2.0), true));
        return in;
      },
      [](const auto& in) { return ad::div(in[0], in[1]); });
  add("scale", one, [](const auto& in) { return ad::scale(in[0], -1.7); });
  add("add_scalar", one, [](const auto& in) { return ad::add_scalar(in[0], 0.3); });
  add("neg", one, [](const auto& in) { return ad::neg(in[0]); });
  add("relu",
      [](Rng& rng) { return std::vector<Tensor>{away_from(rng, dim_in(rng, 1, 8), dim_in(rng, 1, 8), 0.0, 0.05, 1.0)}; },
      [](const auto& in) { return ad::relu(in[0]); });
  add("exp", one, [](const auto& in) { return ad::exp(in[0]); });
  add("log",
      [](Rng& rng) { return std::vector<Tensor>{random_matrix(rng, dim_in(rng, 1, 8), dim_in(rng, 1, 8), 0.5, 2.0)}; },
      [](const auto& in) { return ad::log(in[0]); });
  add("sigmoid", one, [](const auto& in) { return ad::sigmoid(in[0]); });
  add("clamp",
      [](Rng& rng) {
        const std::size_t r = dim_in(rng, 1, 8), c = dim_in(rng, 1, 8);
        std::vector<double> v(r * c);
        for (double& x : v) x = (rng.uniform() < 0.5 ? -1.0 : 1.0) * (rng.uniform() < 0.5 ? rng.uniform(0.0, 0.45) : rng.uniform(0.55, 1.0));
        return std::vector<Tensor>{Tensor::matrix(r, c, std::move(v), true)};
      },
      [](const auto& in) { return ad::clamp(in[0], -0.5, 0.5); });
  for (int axis : {0, 1}) {
    const std::string suffix = "_axis" + std::to_string(axis);
    add("softmax" + suffix, one, [axis](const auto& in) { return ad::softmax(in[0], axis); });
    add("log_softmax" + suffix, one, [axis](const auto& in) { return ad::log_softmax(in[0], axis); });
    add("sum" + suffix, one, [axis](const auto& in) { return ad::sum(in[0], axis); });
    add("mean" + suffix, one, [axis](const auto& in) { return ad::mean(in[0], axis); });
    add("concat" + suffix,
        [axis](Rng& rng) {
          const std::size_t r = dim_in(rng, 1, 6), c = dim_in(rng, 1, 6);
          return std::vector<Tensor>{random_matrix(rng, r, c),
                                     axis == 0 ? random_matrix(rng, dim_in(rng, 1, 6), c)
                                               : random_matrix(rng, r, dim_in(rng, 1, 6))};
        },
        [axis](const auto& in) { return ad::concat(in, axis); });
  }
  add("sum_all", one, [](const auto& in) { return ad::sum(in[0]); });
  add("mean_all", one, [](const auto& in) { return ad::mean(in[0]); });
  add("slice_rows",
      [](Rng& rng) { return std::vector<Tensor>{random_matrix(rng, dim_in(rng, 3, 8), dim_in(rng, 1, 8))}; },
      [](const auto& in) { return ad::slice_rows(in[0], 1, in[0].rows() - 1); });
  add("slice_cols",
      [](Rng& rng) { return std::vector<Tensor>{random_matrix(rng, dim_in(rng, 1, 8), dim_in(rng, 3, 8))}; },
      [](const auto& in) { return ad::slice_cols(in[0], 1, in[0].cols() - 1); });
  add("gather_rows", one, [](const auto& in) {
    const int r = static_cast<int>(in[0].rows());
    const std::vector<int> idx{r - 1, 0, r / 2, 0};
    return ad::gather_rows(in[0], idx);
  });
  add("scatter_add_rows", one, [](const auto& in) {
    std::vector<int> idx(in[0].rows());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>((i * 7) % 3);
    return ad::scatter_add_rows(in[0], idx, 4);
  });
  add("take", one, [](const auto& in) {
    const std::size_t n = in[0].numel();
    const std::vector<std::size_t> idx{0, n - 1, n / 2, 0};
    return ad::take(in[0], idx);
  });
  add("layer_norm",
      [](Rng& rng) { return std::vector<Tensor>{random_matrix(rng, dim_in(rng, 1, 8), dim_in(rng, 2, 8))}; },
      [](const auto& in) { return ad::layer_norm(in[0]); });
  add("l2_normalize", one, [](const auto& in) { return ad::l2_normalize(in[0]); });
  add("multi_head_attention",
      [](Rng& rng) {
        const std::size_t n = dim_in(rng, 1, 6), m = dim_in(rng, 1, 6), d = 2 * dim_in(rng, 1, 3);
        return std::vector<Tensor>{random_matrix(rng, n, d), random_matrix(rng, m, d), random_matrix(rng, m, d),
                                   random_matrix(rng, n, m)};
      },
      [](const auto& in) { return ad::multi_head_attention(in[0], in[1], in[2], 2, &in[3]); });
  add("bce_with_logits",
      [](Rng& rng) { return std::vector<Tensor>{random_matrix(rng, dim_in(rng, 1, 8), dim_in(rng, 1, 8), -4.0, 4.0)}; },
      [](const auto& in) {
        std::vector<double> t(in[0].numel());
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = (i % 3 == 0) ? 1.0 : (i % 3 == 1 ? 0.0 : 0.25);
        return ad::bce_with_logits(in[0], Tensor::from(in[0].shape(), std::move(t)));
      });

  // Composed models. Parameters of a private store are the inputs.
  reg.add("skeleton_net", [seed] {
    Rng rng = Rng::derive(seed, "gradcheck-skeleton_net");
    const Skeleton skel = toy_skeleton(rng);
    const SkeletonNetConfig cfg = toy_skeleton_config(8);
    ParamStore store;
    init_skeleton_net(store, cfg, rng);
    const auto hierarchy = build_hierarchy(skel, cfg);
    const Tensor input = skeleton_features(skel);
    std::vector<Tensor> inputs = store_inputs(store);
    const std::uint64_t salt = rng.next();
    return ad::grad_check([&] { return weighted_sum(skeleton_net_forward(hierarchy, input, store, cfg), salt); }, inputs);
  });
  reg.add("patch_encoder", [seed] {
    Rng rng = Rng::derive(seed, "gradcheck-patch_encoder");
    PatchEncoderConfig cfg{.patch_size = 2, .dim = 8, .heads = 2, .mlp_ratio = 2, .blocks = 1};
    const PatchGrid grid = toy_grid(rng, 2, 2, 3);
    ParamStore store;
    init_patch_encoder(store, cfg, rng);
    std::vector<Tensor> inputs = store_inputs(store);
    const std::uint64_t salt = rng.next();
    return ad::grad_check([&] { return weighted_sum(encode_patches(grid, store, cfg), salt); }, inputs);
  });
  reg.add("fusion", [seed] {
    Rng rng = Rng::derive(seed, "gradcheck-fusion");
    FuseConfig cfg{.dim = 8, .heads = 2, .mlp_ratio = 2, .prior_init = 1.5};
    ParamStore store;
    init_fuse(store, cfg, rng);
    store.add("toy.patches", random_matrix(rng, 5, 8));
    store.add("toy.nodes", random_matrix(rng, 4, 8));
    std::vector<double> mask(5 * 4);
    for (double& m : mask) m = rng.uniform() < 0.4 ? 1.0 : 0.0;
    const Tensor prior = Tensor::matrix(5, 4, std::move(mask));
    std::vector<Tensor> inputs = store_inputs(store);
    const std::uint64_t salt = rng.next();
    return ad::grad_check(
        [&] { return weighted_sum(fuse(store.get("toy.patches"), store.get("toy.nodes"), &prior, store, cfg), salt); },
        inputs);
  });
  reg.add("seg_head", [seed] {
    Rng rng = Rng::derive(seed, "gradcheck-seg_head");
    SegHeadConfig cfg{.dim = 8, .heads = 2, .mlp_ratio = 2, .queries = 3, .blocks = 1};
    ParamStore store;
    init_seg_head(store, cfg, rng);
    store.add("toy.patches", random_matrix(rng, 6, 8));
    std::vector<Tensor> inputs = store_inputs(store);
    const std::uint64_t salt = rng.next();
    return ad::grad_check(
        [&] {
          const SegOutput out = seg_forward(store.get("toy.patches"), store, cfg);
          return ad::add(weighted_sum(out.class_logits, salt), weighted_sum(out.mask_logits, salt + 1));
        },
        inputs);
  });
  reg.add("seg_loss", [seed] {
    Rng rng = Rng::derive(seed, "gradcheck-seg_loss");
    SegHeadConfig cfg{.dim = 8, .heads = 2, .mlp_ratio = 2, .queries = 4, .blocks = 1};
    ParamStore store;
    init_seg_head(store, cfg, rng);
    store.add("toy.patches", random_matrix(rng, 6, 8));
    const SegTarget target = make_seg_target({0, 0, 1, 1, 2, -1});
    std::vector<Tensor> inputs = store_inputs(store);
    return ad::grad_check(
        [&] { return seg_loss(seg_forward(store.get("toy.patches"), store, cfg), target, SegLossConfig{}); }, inputs);
  });
  reg.add("contrastive_loss", [seed] {
    // SkeletonNet feeding the InfoNCE loss on a 6-node graph and two views.
    Rng rng = Rng::derive(seed, "gradcheck-contrastive_loss");
    const Skeleton skel = toy_skeleton(rng);
    const SkeletonNetConfig cfg = toy_skeleton_config(4);
    ParamStore store;
    init_skeleton_net(store, cfg, rng);
    store.add("toy.view0", random_matrix(rng, 4, 4));
    store.add("toy.view1", random_matrix(rng, 4, 4));
    const auto hierarchy = build_hierarchy(skel, cfg);
    const Tensor input = skeleton_features(skel);
    std::vector<Positive> pos{{0, 0, 0, 0}, {1, 0, 1, 0}, {2, 0, 1, 1}, {3, 1, 2, 0}, {5, 1, 3, 0}, {4, 1, 0, 1}};
    const CorrespondenceMap cm = make_correspondence(pos, 6, 2, 4);
    const ContrastiveConfig cc{.tau = 0.5, .max_negatives = 3, .seed = seed};
    std::vector<Tensor> inputs = store_inputs(store);
    return ad::grad_check(
        [&] {
          const Tensor nodes = skeleton_net_forward(hierarchy, input, store, cfg);
          return contrastive_loss(nodes, {store.get("toy.view0"), store.get("toy.view1")}, cm, cc);
        },
        inputs);
  });
  return reg;
}

}  // namespace skelfuse
