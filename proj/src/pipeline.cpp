#include "skelfuse/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>
#include <thread>

#include "skelfuse/mesh_io.hpp"
#include "skelfuse/metrics.hpp"
#include "skelfuse/rng.hpp"
#include "skelfuse/synth.hpp"

namespace skelfuse {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------- config

namespace {

template <typename T>
T read_as(const json& v, const std::string& key) {
  try {
    return v.get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + key + "' has the wrong type: " + v.dump());
  }
}

using Setter = std::function<void(PipelineConfig&, const json&, const std::string&)>;

template <typename T, typename Get>
Setter setter(Get get) {
  return [get](PipelineConfig& c, const json& v, const std::string& key) { get(c) = read_as<T>(v, key); };
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
    t["seed"] = setter<std::uint64_t>([](PipelineConfig& c) -> auto& { return c.seed; });
    t["out_dir"] = setter<std::string>([](PipelineConfig& c) -> auto& { return c.out_dir; });
    t["train_meshes"] = setter<int>([](PipelineConfig& c) -> auto& { return c.train_meshes; });
    t["test_meshes"] = setter<int>([](PipelineConfig& c) -> auto& { return c.test_meshes; });
    t["train_seed_start"] = setter<std::uint64_t>([](PipelineConfig& c) -> auto& { return c.train_seed_start; });
    t["test_seed_start"] = setter<std::uint64_t>([](PipelineConfig& c) -> auto& { return c.test_seed_start; });
    t["teeth"] = setter<int>([](PipelineConfig& c) -> auto& { return c.teeth; });
    t["noise"] = setter<double>([](PipelineConfig& c) -> auto& { return c.noise; });
    t["contraction_iterations"] = setter<int>([](PipelineConfig& c) -> auto& { return c.contraction.iterations; });
    t["contraction_weight_growth"] =
        setter<double>([](PipelineConfig& c) -> auto& { return c.contraction.contraction_weight_growth; });
    t["initial_attraction"] = setter<double>([](PipelineConfig& c) -> auto& { return c.contraction.initial_attraction; });
    t["collapse_target_ratio"] =
        setter<double>([](PipelineConfig& c) -> auto& { return c.contraction.collapse_target_ratio; });
    t["views"] = setter<int>([](PipelineConfig& c) -> auto& { return c.views; });
    t["elevations"] = setter<std::vector<double>>([](PipelineConfig& c) -> auto& { return c.elevations; });
    t["resolution"] = setter<int>([](PipelineConfig& c) -> auto& { return c.resolution; });
    t["fov"] = setter<double>([](PipelineConfig& c) -> auto& { return c.fov; });
    t["khop"] = setter<int>([](PipelineConfig& c) -> auto& { return c.khop; });
    t["steps"] = setter<int>([](PipelineConfig& c) -> auto& { return c.steps; });
    t["merge_iou"] = setter<double>([](PipelineConfig& c) -> auto& { return c.merge_iou; });
    // Model keys; shared widths are fanned out after parsing.
    t["patch_size"] = setter<int>([](PipelineConfig& c) -> auto& { return c.model.encoder.patch_size; });
    t["embed_dim"] = setter<int>([](PipelineConfig& c) -> auto& { return c.model.encoder.dim; });
    t["heads"] = setter<int>([](PipelineConfig& c) -> auto& { return c.model.encoder.heads; });
    t["mlp_ratio"] = setter<int>([](PipelineConfig& c) -> auto& { return c.model.encoder.mlp_ratio; });
    t["encoder_blocks"] = setter<int>([](PipelineConfig& c) -> auto& { return c.model.encoder.blocks; });
    t["positional_encoding"] =
        setter<bool>([](PipelineConfig& c) -> auto& { return c.model.encoder.positional_encoding; });
    t["skeleton_levels"] = setter<int>([](PipelineConfig& c) -> auto& { return c.model.skeleton.levels; });
    t["skeleton_dims"] = setter<std::vector<int>>([](PipelineConfig& c) -> auto& { return c.model.skeleton.dims; });
    t["pool_ratio"] = setter<double>([](PipelineConfig& c) -> auto& { return c.model.skeleton.pool_ratio; });
    t["queries"] = setter<int>([](PipelineConfig& c) -> auto& { return c.model.head.queries; });
    t["decoder_blocks"] = setter<int>([](PipelineConfig& c) -> auto& { return c.model.head.blocks; });
    t["prior_init"] = setter<double>([](PipelineConfig& c) -> auto& { return c.model.fusion.prior_init; });
    t["correspondence_prior"] = setter<bool>([](PipelineConfig& c) -> auto& { return c.model.correspondence_prior; });
    t["mask_clamp"] = setter<double>([](PipelineConfig& c) -> auto& { return c.model.seg_loss.mask_clamp; });
    t["no_object_weight"] = setter<double>([](PipelineConfig& c) -> auto& { return c.model.seg_loss.no_object_weight; });
    t["tau"] = setter<double>([](PipelineConfig& c) -> auto& { return c.model.tau; });
    t["max_negatives"] = setter<int>([](PipelineConfig& c) -> auto& { return c.model.max_negatives; });
    t["lambda_con"] = setter<double>([](PipelineConfig& c) -> auto& { return c.model.lambda_con; });
    t["lr"] = setter<double>([](PipelineConfig& c) -> auto& { return c.model.adam.lr; });
    t["views_per_step"] = setter<int>([](PipelineConfig& c) -> auto& { return c.model.views_per_step; });
    return t;
  }();
  return table;
}

void fan_out_model_widths(ModelConfig& m) {
  m.fusion.dim = m.head.dim = m.skeleton.out_dim = m.encoder.dim;
  m.fusion.heads = m.head.heads = m.encoder.heads;
  m.fusion.mlp_ratio = m.head.mlp_ratio = m.encoder.mlp_ratio;
}

}  // namespace

void PipelineConfig::check() const {
  if (train_meshes < 1) throw ConfigError("train_meshes must be at least 1");
  if (test_meshes < 0) throw ConfigError("test_meshes must be non-negative");
  if (teeth < 2 || teeth > 16) throw ConfigError("teeth must lie in [2, 16]");
  if (noise < 0.0) throw ConfigError("noise must be non-negative");
  if (views < 1) throw ConfigError("views must be at least 1");
  if (elevations.empty()) throw ConfigError("elevations must not be empty");
  if (resolution < 1) throw ConfigError("resolution must be positive");
  if (!(fov > 0.0 && fov < 180.0)) throw ConfigError("fov must lie in (0, 180) degrees");
  if (khop < 0) throw ConfigError("khop must be non-negative");
  if (steps < 0) throw ConfigError("steps must be non-negative");
  if (!(merge_iou >= 0.0 && merge_iou < 1.0)) throw ConfigError("merge_iou must lie in [0, 1)");
  if (contraction.iterations < 1) throw ConfigError("contraction_iterations must be at least 1");
  if (!(contraction.contraction_weight_growth > 1.0)) throw ConfigError("contraction_weight_growth must exceed 1");
  if (!(contraction.initial_attraction > 0.0)) throw ConfigError("initial_attraction must be positive");
  if (!(contraction.collapse_target_ratio > 0.0 && contraction.collapse_target_ratio <= 1.0))
    throw ConfigError("collapse_target_ratio must lie in (0, 1]");
  model.check();
  if (resolution % model.encoder.patch_size != 0) throw ConfigError("resolution must be divisible by patch_size");
}

json PipelineConfig::to_json() const {
  json j = model.to_json();
  j.update({
      {"seed", seed},
      {"out_dir", out_dir},
      {"train_meshes", train_meshes},
      {"test_meshes", test_meshes},
      {"train_seed_start", train_seed_start},
      {"test_seed_start", test_seed_start},
      {"teeth", teeth},
      {"noise", noise},
      {"contraction_iterations", contraction.iterations},
      {"contraction_weight_growth", contraction.contraction_weight_growth},
      {"initial_attraction", contraction.initial_attraction},
      {"collapse_target_ratio", contraction.collapse_target_ratio},
      {"views", views},
      {"elevations", elevations},
      {"resolution", resolution},
      {"fov", fov},
      {"khop", khop},
      {"steps", steps},
      {"merge_iou", merge_iou},
  });
  return j;
}

PipelineConfig PipelineConfig::from_json(const json& j, PipelineConfig base) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    const auto it = setters().find(key);
    if (it == setters().end()) throw ConfigError("unknown config key '" + key + "'");
    it->second(base, value, key);
  }
  fan_out_model_widths(base.model);
  base.check();
  return base;
}

PipelineConfig PipelineConfig::from_json(const json& j) { return from_json(j, PipelineConfig{}); }

PipelineConfig PipelineConfig::load(const fs::path& path) { return load(path, PipelineConfig{}); }

PipelineConfig PipelineConfig::load(const fs::path& path, PipelineConfig base) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& ex) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + ex.what());
  }
  return from_json(j, std::move(base));
}

RingOptions PipelineConfig::ring() const {
  RingOptions r;
  r.resolution = resolution;
  r.fov_y = fov * std::numbers::pi / 180.0;
  return r;
}

std::vector<double> PipelineConfig::elevations_rad() const {
  std::vector<double> out;
  for (double e : elevations) out.push_back(e * std::numbers::pi / 180.0);
  return out;
}

CorrespondenceOptions PipelineConfig::correspondence() const {
  CorrespondenceOptions o;
  o.patch_size = model.encoder.patch_size;
  o.k_hop = khop;
  return o;
}

// ---------------------------------------------------------------- stages

const char* stage_name(Stage s) {
  switch (s) {
    case Stage::GenData: return "gen-data";
    case Stage::Skeletonize: return "skeletonize";
    case Stage::Render: return "render";
    case Stage::Correspond: return "correspond";
    case Stage::Train: return "train";
    case Stage::Segment: return "segment";
    case Stage::Eval: return "eval";
  }
  return "?";
}

std::vector<Stage> all_stages() {
  return {Stage::GenData, Stage::Skeletonize, Stage::Render, Stage::Correspond,
          Stage::Train,   Stage::Segment,     Stage::Eval};
}

std::vector<Stage> parse_stages(std::string_view csv) {
  std::vector<Stage> out;
  std::size_t begin = 0;
  while (begin <= csv.size()) {
    const std::size_t end = std::min(csv.find(',', begin), csv.size());
    const std::string_view name = csv.substr(begin, end - begin);
    bool found = false;
    for (Stage s : all_stages())
      if (name == stage_name(s)) {
        if (std::find(out.begin(), out.end(), s) == out.end()) out.push_back(s);
        found = true;
      }
    if (!found) throw ArgumentError("unknown stage '" + std::string(name) + "'");
    begin = end + 1;
  }
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------- helpers

int default_threads() {
  if (const char* env = std::getenv("SKELFUSE_THREADS")) {
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && n > 0) return static_cast<int>(n);
    throw ArgumentError(std::string("SKELFUSE_THREADS must be a positive integer, got '") + env + "'");
  }
  return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& body) {
  const std::size_t workers = std::min<std::size_t>(std::max(threads, 1), std::max<std::size_t>(n, 1));
  std::vector<std::exception_ptr> errors(n);
  auto run = [&](std::size_t w) {
    for (std::size_t i = w; i < n; i += workers) {
      try {
        body(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (workers <= 1) {
    run(0);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run, w);
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

PreparedMesh prepare_mesh(TriMesh mesh, const PipelineConfig& config, int threads) {
  PreparedMesh p;
  mesh = normalize_unit_sphere(mesh);
  p.skeleton = skeletonize(mesh, config.contraction);
  const std::vector<double> elev = config.elevations_rad();
  p.views = render_views(mesh, camera_ring(mesh, config.views, elev, config.ring()), threads);
  p.correspondence = build_correspondence(p.skeleton, p.views, config.correspondence());
  p.mesh = std::move(mesh);
  return p;
}

InstanceLabeling segment_prepared(Model& model, const PreparedMesh& prepared, double merge_iou, int threads) {
  TriMesh unlabeled = prepared.mesh;
  unlabeled.face_labels.reset();
  const Bundle bundle = make_bundle(unlabeled, prepared.skeleton, prepared.views, prepared.correspondence, model.config);
  const std::vector<PatchLabels> patches = predict(model, bundle, threads);
  std::vector<LabelImage> images;
  for (std::size_t v = 0; v < patches.size(); ++v)
    images.push_back(expand_patch_labels(patches[v], prepared.views.frames[v]));
  LiftOptions opts;
  opts.merge_iou = merge_iou;
  return fill_unseen(prepared.mesh, lift(images, prepared.views, prepared.mesh, opts));
}

json TrainSummary::to_json(bool with_history) const {
  json j{{"steps", steps},
         {"final_total", final_total},
         {"contrastive_at_convergence", contrastive_at_convergence},
         {"segmentation_at_convergence", segmentation_at_convergence}};
  if (with_history) {
    json h = json::array();
    for (const auto& s : history) h.push_back({s.total, s.contrastive, s.segmentation});
    j["history"] = std::move(h);
  }
  return j;
}

TrainSummary train_model(Model& model, std::span<const Bundle> bundles, int steps, const StepCallback& on_step) {
  if (bundles.empty()) throw ArgumentError("training needs at least one bundle");
  TrainSummary summary;
  summary.steps = steps;
  const std::size_t n = bundles.size();
  std::vector<std::size_t> order(n);
  for (int step = 0; step < steps; ++step) {
    const std::size_t slot = static_cast<std::size_t>(step) % n;
    if (slot == 0) {
      for (std::size_t i = 0; i < n; ++i) order[i] = i;
      Rng rng = Rng::derive(model.seed, "epoch-" + std::to_string(step / n));
      rng.shuffle(order);
    }
    const StepLosses l = train_step(model, bundles[order[slot]], step);
    summary.history.push_back(l);
    if (on_step) on_step(step, l);
  }
  if (steps > 0) {
    summary.final_total = summary.history.back().total;
    const std::size_t tail = std::max<std::size_t>(1, summary.history.size() / 10);
    for (std::size_t i = summary.history.size() - tail; i < summary.history.size(); ++i) {
      summary.contrastive_at_convergence += summary.history[i].contrastive / static_cast<double>(tail);
      summary.segmentation_at_convergence += summary.history[i].segmentation / static_cast<double>(tail);
    }
  }
  return summary;
}

// ---------------------------------------------------------------- runner

namespace {

std::string hex_hash(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << h;
  return os.str();
}

struct MeshEntry {
  std::string name;
  std::uint64_t seed;
  bool train;
};

std::vector<MeshEntry> mesh_entries(const PipelineConfig& c) {
  std::vector<MeshEntry> out;
  auto name = [](const char* prefix, int i) {
    std::string digits = std::to_string(i);
    return std::string(prefix) + std::string(digits.size() < 3 ? 3 - digits.size() : 0, '0') + digits;
  };
  for (int i = 0; i < c.train_meshes; ++i) out.push_back({name("train_", i), c.train_seed_start + i, true});
  for (int i = 0; i < c.test_meshes; ++i) out.push_back({name("test_", i), c.test_seed_start + i, false});
  return out;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& ex) {
    throw ParseError(path.string() + ": " + ex.what());
  }
}

class Runner {
 public:
  Runner(const PipelineConfig& config, int threads, std::ostream* log)
      : cfg_(config), threads_(std::max(threads, 1)), log_(log), cache_(fs::path(config.out_dir) / "cache"),
        meshes_(mesh_entries(config)) {
    const json c = cfg_.to_json();
    auto pick = [&](std::initializer_list<const char*> keys) {
      json j = json::object();
      for (const char* k : keys) j[k] = c.at(k);
      return j;
    };
    keys_[Stage::GenData] = key("gen-data", {}, pick({"train_meshes", "test_meshes", "train_seed_start",
                                                       "test_seed_start", "teeth", "noise"}));
    keys_[Stage::Skeletonize] =
        key("skeletonize", {keys_[Stage::GenData]},
            pick({"contraction_iterations", "contraction_weight_growth", "initial_attraction", "collapse_target_ratio"}));
    keys_[Stage::Render] = key("render", {keys_[Stage::GenData]}, pick({"views", "elevations", "resolution", "fov"}));
    keys_[Stage::Correspond] =
        key("correspond", {keys_[Stage::Skeletonize], keys_[Stage::Render]}, pick({"patch_size", "khop"}));
    json model = cfg_.model.to_json();
    model["steps"] = cfg_.steps;
    model["seed"] = cfg_.seed;
    keys_[Stage::Train] = key("train", {keys_[Stage::Correspond]}, model);
    keys_[Stage::Segment] = key("segment", {keys_[Stage::Train]}, pick({"merge_iou"}));
    keys_[Stage::Eval] = key("eval", {keys_[Stage::Segment]}, json::object());
  }

  PipelineResult run(std::span<const Stage> selected) {
    PipelineResult result;
    for (Stage s : selected) {
      const auto start = std::chrono::steady_clock::now();
      StageRecord rec{s, keys_.at(s), false, 0.0};
      try {
        rec.cached = complete(s);
        if (!rec.cached) {
          if (log_) *log_ << "[" << stage_name(s) << "] running (" << rec.key << ")\n";
          const fs::path tmp = dir(s).string() + ".partial";
          fs::remove_all(tmp);
          fs::create_directories(tmp);
          execute(s, tmp);
          write_json(tmp / "stage.json", {{"stage", stage_name(s)}, {"key", rec.key}});
          fs::remove_all(dir(s));
          fs::rename(tmp, dir(s));
        } else if (log_) {
          *log_ << "[" << stage_name(s) << "] cached (" << rec.key << ")\n";
        }
        publish(s);
      } catch (const StageError&) {
        throw;
      } catch (const Error& ex) {
        throw StageError(stage_name(s), ex.kind(), std::string(stage_name(s)) + ": " + ex.what());
      } catch (const std::exception& ex) {
        throw StageError(stage_name(s), "std::exception", std::string(stage_name(s)) + ": " + ex.what());
      }
      rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      result.stages.push_back(rec);
    }
    const fs::path report = fs::path(cfg_.out_dir) / "report.json";
    if (std::find(selected.begin(), selected.end(), Stage::Eval) != selected.end()) {
      result.report_path = report;
      result.report = read_json(report);
    }
    return result;
  }

 private:
  static std::string key(const std::string& stage, std::vector<std::string> upstream, const json& params) {
    return hex_hash(json{{"stage", stage}, {"upstream", upstream}, {"params", params}}.dump());
  }

  fs::path dir(Stage s) const { return cache_ / (std::string(stage_name(s)) + "-" + keys_.at(s)); }

  bool complete(Stage s) const {
    const fs::path marker = dir(s) / "stage.json";
    if (!fs::exists(marker)) return false;
    return read_json(marker).value("key", "") == keys_.at(s);
  }

  fs::path input(Stage s) const {
    if (!complete(s))
      throw IoError(std::string("artifacts of stage '") + stage_name(s) + "' are missing; run that stage first");
    return dir(s);
  }

  void execute(Stage s, const fs::path& out) {
    switch (s) {
      case Stage::GenData: return gen_data(out);
      case Stage::Skeletonize: return skeletonize_all(out);
      case Stage::Render: return render_all(out);
      case Stage::Correspond: return correspond_all(out);
      case Stage::Train: return train(out);
      case Stage::Segment: return segment(out);
      case Stage::Eval: return eval(out);
    }
  }

  // Copies user-facing outputs next to the cache.
  void publish(Stage s) const {
    const fs::path root(cfg_.out_dir);
    if (s == Stage::Segment) {
      fs::remove_all(root / "segmented");
      fs::create_directories(root / "segmented");
      for (const auto& m : meshes_)
        if (!m.train) fs::copy_file(dir(s) / (m.name + ".ply"), root / "segmented" / (m.name + ".ply"));
    } else if (s == Stage::Eval) {
      fs::copy_file(dir(s) / "report.json", root / "report.json", fs::copy_options::overwrite_existing);
    } else if (s == Stage::Train) {
      fs::copy_file(dir(s) / "model.ckpt", root / "model.ckpt", fs::copy_options::overwrite_existing);
      fs::copy_file(dir(s) / "model.ckpt.json", root / "model.ckpt.json", fs::copy_options::overwrite_existing);
    }
  }

  void gen_data(const fs::path& out) {
    parallel_for(meshes_.size(), threads_, [&](std::size_t i) {
      const TriMesh mesh = normalize_unit_sphere(synth_tooth_row(meshes_[i].seed, cfg_.teeth, cfg_.noise));
      export_labeled_ply(mesh, *mesh.face_labels, out / (meshes_[i].name + ".ply"));
    });
  }

  TriMesh mesh(std::size_t i) const { return load_mesh(input(Stage::GenData) / (meshes_[i].name + ".ply")); }

  void skeletonize_all(const fs::path& out) {
    parallel_for(meshes_.size(), threads_, [&](std::size_t i) {
      save_skeleton(skeletonize(mesh(i), cfg_.contraction), out / (meshes_[i].name + ".json"));
    });
  }

  void render_all(const fs::path& out) {
    const std::vector<double> elev = cfg_.elevations_rad();
    for (std::size_t i = 0; i < meshes_.size(); ++i) {
      const TriMesh m = mesh(i);
      save_views(render_views(m, camera_ring(m, cfg_.views, elev, cfg_.ring()), threads_), out / meshes_[i].name);
    }
  }

  void correspond_all(const fs::path& out) {
    const fs::path skel_dir = input(Stage::Skeletonize), view_dir = input(Stage::Render);
    parallel_for(meshes_.size(), threads_, [&](std::size_t i) {
      const Skeleton skel = load_skeleton(skel_dir / (meshes_[i].name + ".json"));
      const ViewSet views = load_views(view_dir / meshes_[i].name);
      save_correspondence(build_correspondence(skel, views, cfg_.correspondence()), out / (meshes_[i].name + ".jsonl"));
    });
  }

  PreparedMesh load_prepared(std::size_t i) const {
    PreparedMesh p;
    p.mesh = mesh(i);
    p.skeleton = load_skeleton(input(Stage::Skeletonize) / (meshes_[i].name + ".json"));
    p.views = load_views(input(Stage::Render) / meshes_[i].name);
    const int per_view = (cfg_.resolution / cfg_.model.encoder.patch_size) * (cfg_.resolution / cfg_.model.encoder.patch_size);
    p.correspondence = load_correspondence(input(Stage::Correspond) / (meshes_[i].name + ".jsonl"),
                                           static_cast<int>(p.skeleton.size()), static_cast<int>(p.views.size()),
                                           per_view);
    return p;
  }

  void train(const fs::path& out) {
    std::vector<Bundle> bundles;
    for (std::size_t i = 0; i < meshes_.size(); ++i) {
      if (!meshes_[i].train) continue;
      const PreparedMesh p = load_prepared(i);
      bundles.push_back(make_bundle(p.mesh, p.skeleton, p.views, p.correspondence, cfg_.model));
    }
    Model model(cfg_.model, cfg_.seed);
    const int every = std::max(1, cfg_.steps / 20);
    const TrainSummary summary = train_model(model, bundles, cfg_.steps, [&](int step, const StepLosses& l) {
      if (log_ && (step % every == 0 || step + 1 == cfg_.steps))
        *log_ << "  step " << step << " loss " << l.total << " (contrastive " << l.contrastive << ", seg "
              << l.segmentation << ")\n";
    });
    json stored = cfg_.to_json();
    stored.erase("out_dir");
    save_model(model, out / "model.ckpt", {{"pipeline", stored}});
    write_json(out / "losses.json", summary.to_json(true));
  }

  void segment(const fs::path& out) {
    Model model = load_model(input(Stage::Train) / "model.ckpt");
    for (std::size_t i = 0; i < meshes_.size(); ++i) {
      if (meshes_[i].train) continue;
      const PreparedMesh p = load_prepared(i);
      const InstanceLabeling labeling = segment_prepared(model, p, cfg_.merge_iou, threads_);
      export_labeled_ply(p.mesh, labeling.face_labels, out / (meshes_[i].name + ".ply"));
      std::size_t filled = 0;
      for (bool f : labeling.filled) filled += f;
      write_json(out / (meshes_[i].name + ".json"), {{"filled_faces", filled}});
    }
  }

  void eval(const fs::path& out) {
    const fs::path seg_dir = input(Stage::Segment);
    json meshes = json::array();
    double miou = 0.0, precision = 0.0, recall = 0.0;
    int count = 0;
    for (std::size_t i = 0; i < meshes_.size(); ++i) {
      if (meshes_[i].train) continue;
      const TriMesh gt = mesh(i);
      const TriMesh pred = load_mesh(seg_dir / (meshes_[i].name + ".ply"));
      const EvalReport r = evaluate(*pred.face_labels, *gt.face_labels);
      json entry = r.to_json();
      entry["name"] = meshes_[i].name;
      entry["seed"] = meshes_[i].seed;
      entry["filled_faces"] = read_json(seg_dir / (meshes_[i].name + ".json")).at("filled_faces");
      meshes.push_back(std::move(entry));
      miou += r.miou;
      precision += r.precision;
      recall += r.recall;
      ++count;
    }
    const json losses = read_json(input(Stage::Train) / "losses.json");
    json train = losses;
    train.erase("history");
    const double n = std::max(count, 1);
    write_json(out / "report.json", {{"config_hash", keys_.at(Stage::Eval)},
                                     {"khop", cfg_.khop},
                                     {"test_meshes", count},
                                     {"mean_miou", miou / n},
                                     {"mean_precision", precision / n},
                                     {"mean_recall", recall / n},
                                     {"meshes", meshes},
                                     {"train", train}});
  }

  PipelineConfig cfg_;
  int threads_;
  std::ostream* log_;
  fs::path cache_;
  std::vector<MeshEntry> meshes_;
  std::map<Stage, std::string> keys_;
};

}  // namespace

PipelineResult run_pipeline(const PipelineConfig& config, std::span<const Stage> stages, int threads,
                            std::ostream* log) {
  config.check();
  const std::vector<Stage> selected = stages.empty() ? all_stages() : std::vector<Stage>(stages.begin(), stages.end());
  fs::create_directories(fs::path(config.out_dir) / "cache");
  return Runner(config, threads, log).run(selected);
}

}  // namespace skelfuse
