// Command-line front end: individual stages, the full pipeline and the
// gradient-check suite.
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numbers>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "skelfuse/gradcheck_suite.hpp"
#include "skelfuse/mesh_io.hpp"
#include "skelfuse/metrics.hpp"
#include "skelfuse/pipeline.hpp"
#include "skelfuse/synth.hpp"

namespace {

using namespace skelfuse;
using nlohmann::json;
namespace fs = std::filesystem;

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

void report_error(const std::string& kind, const std::string& message, const std::string& stage = {}) {
  json j{{"error", kind}, {"message", message}};
  if (!stage.empty()) j["stage"] = stage;
  std::cerr << j.dump() << '\n';
}

std::vector<double> parse_list(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ArgumentError("not a number list: '" + csv + "'");
    }
  }
  if (out.empty()) throw ArgumentError("empty number list");
  return out;
}

struct Options {
  std::string config_path;
  int threads = 0;

  PipelineConfig config() const {
    return config_path.empty() ? PipelineConfig{} : PipelineConfig::load(config_path);
  }
  int workers() const { return threads > 0 ? threads : default_threads(); }
};

int cmd_gradcheck() {
  const GradCheckReport report = run_gradchecks(default_gradcheck_registry());
  for (const auto& o : report.outcomes)
    std::printf("%-24s max rel error %.3e over %zu entries\n", o.name.c_str(), o.result.max_error,
                o.result.entries);
  if (report.outcomes.empty()) {
    report_error("GradCheckFailure", "no checks registered");
    return kExitFailure;
  }
  if (!report.passed) {
    report_error("GradCheckFailure", "worst offender: " + report.worst_name + " (" + std::to_string(report.worst_error) + ")");
    return kExitFailure;
  }
  std::printf("all %zu checks below 1e-4 (worst: %s %.3e)\n", report.outcomes.size(), report.worst_name.c_str(),
              report.worst_error);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Skeleton-guided multiview tooth instance segmentation"};
  app.require_subcommand(1);
  Options opt;
  app.add_option("--config", opt.config_path, "Pipeline config JSON; keys override the defaults");
  app.add_option("--threads", opt.threads, "Worker threads (default: SKELFUSE_THREADS or all cores)")
      ->check(CLI::PositiveNumber);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Write a labelled synthetic tooth row");
  std::uint64_t gen_seed = 0;
  int gen_teeth = 8;
  double gen_noise = 0.0;
  std::string gen_out;
  gen->add_option("--seed", gen_seed)->required();
  gen->add_option("--teeth", gen_teeth)->capture_default_str();
  gen->add_option("--noise", gen_noise)->capture_default_str();
  gen->add_option("--out", gen_out, "Output .ply or .obj")->required();

  // skeletonize
  auto* skel = app.add_subcommand("skeletonize", "Extract a curve skeleton");
  std::string skel_in, skel_out;
  skel->add_option("--in", skel_in)->required();
  skel->add_option("--out", skel_out, "Skeleton JSON")->required();

  // render
  auto* render = app.add_subcommand("render", "Render a camera ring to a view directory");
  std::string render_in, render_out, render_elev;
  int render_views_n = -1, render_res = -1;
  double render_fov = -1.0;
  render->add_option("--in", render_in)->required();
  render->add_option("--views", render_views_n, "Azimuths per elevation");
  render->add_option("--elev", render_elev, "Comma-separated elevations in degrees");
  render->add_option("--res", render_res, "Square resolution in pixels");
  render->add_option("--fov", render_fov, "Vertical field of view in degrees");
  render->add_option("--out", render_out)->required();

  // correspond
  auto* corr = app.add_subcommand("correspond", "Skeleton-node to patch correspondence");
  std::string corr_skel, corr_views, corr_out;
  int corr_patch = -1, corr_khop = -1;
  corr->add_option("--skel", corr_skel)->required();
  corr->add_option("--views", corr_views, "View directory")->required();
  corr->add_option("--patch", corr_patch);
  corr->add_option("--khop", corr_khop);
  corr->add_option("--out", corr_out, "JSON lines output")->required();

  // train
  auto* train = app.add_subcommand("train", "Train on labelled meshes");
  std::vector<std::string> train_meshes;
  std::string train_out;
  int train_steps = -1;
  train->add_option("--mesh", train_meshes, "Labelled training mesh (repeatable)")->required();
  train->add_option("--steps", train_steps);
  train->add_option("--out", train_out, "Checkpoint path")->required();

  // segment
  auto* segment = app.add_subcommand("segment", "Label a mesh with a trained checkpoint");
  std::string seg_mesh, seg_ckpt, seg_out;
  segment->add_option("--mesh", seg_mesh)->required();
  segment->add_option("--ckpt", seg_ckpt)->required();
  segment->add_option("--out", seg_out, "Labelled PLY")->required();

  // eval
  auto* eval = app.add_subcommand("eval", "Compare predicted and ground-truth face labels");
  std::string eval_pred, eval_gt, eval_report;
  eval->add_option("--pred", eval_pred)->required();
  eval->add_option("--gt", eval_gt)->required();
  eval->add_option("--report", eval_report, "Report JSON (stdout when omitted)");

  // pipeline
  auto* pipe = app.add_subcommand("pipeline", "Run every stage with caching");
  std::string pipe_stages, pipe_out;
  pipe->add_option("--stages", pipe_stages, "Comma-separated subset, e.g. render,correspond");
  pipe->add_option("--out", pipe_out, "Output directory (overrides out_dir)");

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every op and model");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitUsage;
  }

  std::string stage;
  try {
    if (*gradcheck) return cmd_gradcheck();
    const PipelineConfig cfg = opt.config();

    if (*gen) {
      stage = "gen-data";
      const TriMesh mesh = synth_tooth_row(gen_seed, gen_teeth, gen_noise);
      if (fs::path(gen_out).extension() == ".obj")
        save_obj(mesh, gen_out);
      else
        export_labeled_ply(mesh, *mesh.face_labels, gen_out);
    } else if (*skel) {
      stage = "skeletonize";
      const Skeleton s = skeletonize(load_mesh(skel_in), cfg.contraction);
      save_skeleton(s, skel_out);
      std::printf("%zu nodes, %zu edges\n", s.size(), s.edges.size());
    } else if (*render) {
      stage = "render";
      PipelineConfig c = cfg;
      if (render_views_n > 0) c.views = render_views_n;
      if (!render_elev.empty()) c.elevations = parse_list(render_elev);
      if (render_res > 0) c.resolution = render_res;
      if (render_fov > 0) c.fov = render_fov;
      const TriMesh mesh = load_mesh(render_in);
      save_views(render_views(mesh, camera_ring(mesh, c.views, c.elevations_rad(), c.ring()), opt.workers()), render_out);
    } else if (*corr) {
      stage = "correspond";
      CorrespondenceOptions o = cfg.correspondence();
      if (corr_patch > 0) o.patch_size = corr_patch;
      if (corr_khop >= 0) o.k_hop = corr_khop;
      const Skeleton s = load_skeleton(corr_skel);
      const CorrespondenceMap cm = build_correspondence(s, load_views(corr_views), o);
      save_correspondence(cm, corr_out);
      const CoverageStats st = coverage_stats(cm, s);
      std::printf("%zu positives, node coverage %.3f\n", cm.positives.size(), st.frac_nodes_covered);
    } else if (*train) {
      stage = "train";
      PipelineConfig c = cfg;
      if (train_steps >= 0) c.steps = train_steps;
      std::vector<Bundle> bundles;
      for (const auto& path : train_meshes) {
        TriMesh mesh = load_mesh(path);
        if (!mesh.face_labels) throw ArgumentError(path + " has no face labels to train on");
        const PreparedMesh p = prepare_mesh(std::move(mesh), c, opt.workers());
        bundles.push_back(make_bundle(p.mesh, p.skeleton, p.views, p.correspondence, c.model));
      }
      Model model(c.model, c.seed);
      const int every = std::max(1, c.steps / 20);
      const TrainSummary summary = train_model(model, bundles, c.steps, [&](int step, const StepLosses& l) {
        if (step % every == 0 || step + 1 == c.steps)
          std::printf("step %d loss %.5f contrastive %.5f seg %.5f\n", step, l.total, l.contrastive, l.segmentation);
      });
      json stored = c.to_json();
      stored.erase("out_dir");
      save_model(model, train_out, {{"pipeline", stored}});
      std::cout << summary.to_json(false).dump(2) << '\n';
    } else if (*segment) {
      stage = "segment";
      json manifest;
      Model model = load_model(seg_ckpt, &manifest);
      json stored = manifest.value("pipeline", json::object());
      PipelineConfig c = PipelineConfig::from_json(stored, cfg);
      const TriMesh input = load_mesh(seg_mesh);
      const PreparedMesh p = prepare_mesh(input, c, opt.workers());
      const InstanceLabeling labeling = segment_prepared(model, p, c.merge_iou, opt.workers());
      export_labeled_ply(input, labeling.face_labels, seg_out);
    } else if (*eval) {
      stage = "eval";
      const TriMesh pred = load_mesh(eval_pred), gt = load_mesh(eval_gt);
      if (!pred.face_labels || !gt.face_labels) throw ArgumentError("both meshes need per-face labels");
      const std::string text = evaluate(*pred.face_labels, *gt.face_labels).to_json().dump(2) + "\n";
      if (eval_report.empty()) {
        std::cout << text;
      } else {
        std::ofstream out(eval_report, std::ios::binary);
        out << text;
        if (!out) throw IoError("cannot write " + eval_report);
      }
    } else if (*pipe) {
      PipelineConfig c = cfg;
      if (!pipe_out.empty()) c.out_dir = pipe_out;
      const std::vector<Stage> stages = pipe_stages.empty() ? all_stages() : parse_stages(pipe_stages);
      const PipelineResult r = run_pipeline(c, stages, opt.workers(), &std::cout);
      for (const auto& s : r.stages)
        std::printf("%-12s %s %8.2f s\n", stage_name(s.stage), s.cached ? "cached " : "ran    ", s.seconds);
      if (!r.report_path.empty())
        std::printf("mean mIoU %.4f  report %s\n", r.report.at("mean_miou").get<double>(), r.report_path.c_str());
    }
    return 0;
  } catch (const ConfigError& e) {
    report_error(e.kind(), e.what(), stage);
    return kExitUsage;
  } catch (const StageError& e) {
    report_error(e.cause(), e.what(), e.stage());
    return kExitFailure;
  } catch (const Error& e) {
    report_error(e.kind(), e.what(), stage);
    return kExitFailure;
  } catch (const std::exception& e) {
    report_error("std::exception", e.what(), stage);
    return kExitFailure;
  }
}
