#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "skelfuse/correspondence.hpp"
#include "skelfuse/errors.hpp"
#include "skelfuse/lifting.hpp"
#include "skelfuse/model.hpp"
#include "skelfuse/skeleton.hpp"

namespace skelfuse {

/// Every knob of the end-to-end run. JSON keys are flat and match the
/// field names below; unknown keys are rejected.
struct PipelineConfig {
  std::uint64_t seed = 7;
  std::string out_dir = "skelfuse_run";

  int train_meshes = 40;
  int test_meshes = 10;
  std::uint64_t train_seed_start = 0;
  std::uint64_t test_seed_start = 100;
  int teeth = 8;
  double noise = 0.0;

  ContractionParams contraction;

  int views = 12;
  std::vector<double> elevations{30.0, 60.0};  // degrees
  int resolution = 256;
  double fov = 35.0;  // vertical, degrees

  int khop = 1;

  ModelConfig model = [] {
    ModelConfig m = ModelConfig::make(16, 64, 4, 24);
    m.views_per_step = 8;
    return m;
  }();
  int steps = 3000;
  double merge_iou = 0.3;

  void check() const;
  nlohmann::json to_json() const;
  /// Applies the keys of `j` on top of `base`. Throws ConfigError naming
  /// the first unknown key or malformed value.
  static PipelineConfig from_json(const nlohmann::json& j, PipelineConfig base);
  static PipelineConfig from_json(const nlohmann::json& j);
  static PipelineConfig load(const std::filesystem::path& path, PipelineConfig base);
  static PipelineConfig load(const std::filesystem::path& path);

  RingOptions ring() const;
  std::vector<double> elevations_rad() const;
  CorrespondenceOptions correspondence() const;
};

enum class Stage { GenData, Skeletonize, Render, Correspond, Train, Segment, Eval };

const char* stage_name(Stage s);
/// Comma-separated stage names; throws ArgumentError on an unknown name.
std::vector<Stage> parse_stages(std::string_view csv);
std::vector<Stage> all_stages();

/// Raised when a stage fails; carries the stage and the original error kind.
class StageError : public Error {
 public:
  StageError(std::string stage, std::string cause, const std::string& message)
      : Error(message), stage_(std::move(stage)), cause_(std::move(cause)) {}
  const char* kind() const noexcept override { return "StageError"; }
  const std::string& stage() const { return stage_; }
  const std::string& cause() const { return cause_; }

 private:
  std::string stage_;
  std::string cause_;
};

/// Mesh, normalised to the unit sphere, plus every preprocessing artefact
/// the model consumes.
struct PreparedMesh {
  TriMesh mesh;
  Skeleton skeleton;
  ViewSet views;
  CorrespondenceMap correspondence;
};

PreparedMesh prepare_mesh(TriMesh mesh, const PipelineConfig& config, int threads);

/// Per-view prediction, lifting and hole filling.
InstanceLabeling segment_prepared(Model& model, const PreparedMesh& prepared, double merge_iou, int threads);

struct TrainSummary {
  int steps = 0;
  double final_total = 0.0;
  /// Means over the last tenth of the steps.
  double contrastive_at_convergence = 0.0;
  double segmentation_at_convergence = 0.0;
  std::vector<StepLosses> history;

  nlohmann::json to_json(bool with_history) const;
};

using StepCallback = std::function<void(int step, const StepLosses&)>;

/// Cycles through the bundles in seeded per-epoch order, one mesh per step.
TrainSummary train_model(Model& model, std::span<const Bundle> bundles, int steps,
                         const StepCallback& on_step = {});

struct StageRecord {
  Stage stage;
  std::string key;
  bool cached = false;
  double seconds = 0.0;
};

struct PipelineResult {
  std::vector<StageRecord> stages;
  std::filesystem::path report_path;  // empty when eval did not run
  nlohmann::json report;
};

/// Runs the selected stages (all when empty) in order. Artefacts live in
/// out_dir/cache/<stage>-<key>, where the key hashes the stage's upstream
/// configuration; a completed directory is reused. Unselected upstream
/// stages must already be cached. Writes out_dir/report.json and the
/// labelled test meshes under out_dir/segmented/.
PipelineResult run_pipeline(const PipelineConfig& config, std::span<const Stage> stages, int threads,
                            std::ostream* log = nullptr);

/// Worker count from SKELFUSE_THREADS, else the hardware concurrency.
int default_threads();

/// Runs body(i) for i in [0, n) on up to `threads` workers. The exception
/// of the lowest failing index is rethrown.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& body);

}  // namespace skelfuse
