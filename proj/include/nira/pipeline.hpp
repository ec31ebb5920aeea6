// SPDX-License-Identifier: Apache-2.0
//
// Orchestration: dataset manifests and splits, corpus generation, feature
// caching, the three recipe configurations, and the stage functions the
// CLI exposes.

#ifndef NIRA_PIPELINE_HPP
#define NIRA_PIPELINE_HPP

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "nira/blstm.hpp"
#include "nira/eval.hpp"
#include "nira/features.hpp"
#include "nira/rir.hpp"
#include "nira/svr.hpp"
#include "nira/types.hpp"

namespace nira::pipeline {

struct ManifestRecord {
  std::string utterance_id;
  std::string audio_path;  // relative to the workspace root
  double t60_s = 0.0;
  double drr_db = 0.0;
  std::string noise;
  double snr_db = 0.0;
  std::string room_id;
  std::string corpus;
  std::string split;  // train | dev | eval | empty
};

struct DatasetManifest {
  std::vector<ManifestRecord> records;

  void save(const std::string& path) const;
  // check_audio: verify every referenced audio file exists (DataError).
  static DatasetManifest load(const std::string& path,
                              const std::string& workspace_root,
                              bool check_audio = true);
  std::vector<const ManifestRecord*> with_split(const std::string& split,
                                                const std::string& corpus = "") const;
};

// Seeded shuffle assignment honoring the ratios within one record; the
// stratified mode assigns whole rooms so no room id crosses splits.
void split_dataset(DatasetManifest& manifest,
                   const std::array<double, 3>& ratios, uint64_t seed,
                   bool stratify_by_room);

// ---- configuration --------------------------------------------------------

struct CorpusConfig {
  std::string tag = "synthA";
  int n_rooms = 10;
  int n_utterances = 60;
  std::array<double, 2> t60_range{0.2, 1.2};
  std::array<double, 2> drr_range{-6.0, 15.0};
  std::array<double, 2> utterance_s{2.0, 3.0};
  std::vector<std::string> noise_types{"babble", "fan"};
  std::vector<double> snr_db{0.0, 10.0, 20.0};
  double rir_max_length_s = 2.0;
};

struct TrainSection {
  std::vector<std::string> targets{"t60", "drr"};
  blstm::TrainConfig cfg;
  bool full_sweep = false;
};

struct RecipeV2Config {
  std::map<std::string, double> mixture;  // corpus tag -> weight, sums to 1
  int n_train = 0;                        // 0: largest feasible
};

struct RecipeV3Config {
  // Sub-model corpora in Fig.-order: primary, held-out, real-RIR proxy,
  // randomized-image corpus.
  std::vector<std::string> corpora;
};

struct Config {
  int version = 1;
  std::string workspace;
  uint64_t seed = 0;
  std::vector<CorpusConfig> corpora;
  std::array<double, 3> split_ratios{0.7, 0.2, 0.1};
  bool stratify_by_room = true;
  TrainSection train;
  features::FeatureConfig feature_cfg;
  std::optional<RecipeV2Config> v2;
  std::optional<RecipeV3Config> v3;

  std::string primary_corpus() const;
};

Config load_config(const std::string& path);
// Stable hash of the effective configuration (canonical JSON dump).
uint64_t config_hash(const Config& cfg);
uint64_t file_content_hash(const std::string& path);

// ---- stages ----------------------------------------------------------------

// Simulates the room set of every corpus block; writes float32 RIR wavs
// plus metadata sidecars under <workspace>/rirs/.
void stage_simulate_rirs(const Config& cfg);

// Synthesizes the utterances of every corpus block (requires the RIRs),
// writes PCM16 wavs under <workspace>/audio/ and the split-assigned
// manifest at <workspace>/manifest.csv.
void stage_synth_corpus(const Config& cfg);

// Ensures a feature cache file for every manifest record. Returns the
// number of cache misses (extractions actually performed).
int stage_extract(const Config& cfg, const DatasetManifest& manifest);

// Path of the cache entry for a record (keyed by audio content hash and
// the feature config hash).
std::string feature_cache_path(const Config& cfg, const ManifestRecord& rec);

features::FeatureMatrix load_features(const Config& cfg,
                                      const ManifestRecord& rec);

struct RecipeModelResult {
  std::string target_kind;
  std::string model_path;
  double best_dev_rmsd = 0.0;
  int n_train = 0;
  int n_dev = 0;
  eval::EvalReport report;
};

struct RecipeResult {
  std::vector<RecipeModelResult> per_target;
  // v3 extras: per-submodel and fused eval RMSDs per target.
  std::map<std::string, std::vector<double>> individual_rmsd;
  std::map<std::string, double> fused_rmsd;
};

RecipeResult run_recipe_v1(const Config& cfg);
RecipeResult run_recipe_v2(const Config& cfg);
RecipeResult run_recipe_v3(const Config& cfg);

// Standalone stages behind the CLI subcommands of the same names.
std::vector<std::string> stage_train(const Config& cfg);
std::vector<std::pair<std::string, double>> stage_estimate(
    const Config& cfg, const std::string& model_path, const std::string& split,
    const std::string& out_csv);
eval::EvalReport stage_evaluate(const Config& cfg,
                                const std::string& estimates_csv,
                                const std::string& target_name,
                                const std::string& report_prefix);

// Estimates CSV: "# config_hash=... seed=..." comment, then
// utterance_id,target_kind,estimate rows sorted by id.
void write_estimates_csv(const std::string& path,
                         const std::vector<std::pair<std::string, double>>& est,
                         const std::string& target_kind, uint64_t cfg_hash,
                         uint64_t seed);
std::vector<std::pair<std::string, double>> read_estimates_csv(
    const std::string& path);

// Runs fn(i) for i in [0, n) on a small worker pool; fn must be pure per
// index. Used by the embarrassingly parallel stages.
void parallel_for(int n, const std::function<void(int)>& fn);

}  // namespace nira::pipeline

#endif  // NIRA_PIPELINE_HPP
