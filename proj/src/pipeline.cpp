// SPDX-License-Identifier: Apache-2.0

#include "nira/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "nira/speechgen.hpp"
#include "nira/wav.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace nira::pipeline {

namespace {

uint64_t fnv1a(const void* data, std::size_t len, uint64_t h = 1469598103934665603ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

std::string hex16(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

std::mutex log_mutex;

void log_line(const std::string& msg) {
  std::lock_guard<std::mutex> lock(log_mutex);
  std::cerr << msg << '\n';
}

}  // namespace

void parallel_for(int n, const std::function<void(int)>& fn) {
  const int n_threads =
      std::max(1, std::min<int>(std::thread::hardware_concurrency(), n));
  if (n_threads == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (int t = 0; t < n_threads; ++t) {
    pool.emplace_back([&] {
      for (;;) {
        const int i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

// ---- manifest ---------------------------------------------------------------

void DatasetManifest::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write manifest: " + path);
  out << "utterance_id,audio_path,t60_s,drr_db,noise,snr_db,room_id,corpus,split\n";
  out.precision(17);
  for (const auto& r : records) {
    out << r.utterance_id << ',' << r.audio_path << ',' << r.t60_s << ','
        << r.drr_db << ',' << r.noise << ',' << r.snr_db << ',' << r.room_id
        << ',' << r.corpus << ',' << r.split << '\n';
  }
}

DatasetManifest DatasetManifest::load(const std::string& path,
                                      const std::string& workspace_root,
                                      bool check_audio) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest: " + path);
  DatasetManifest m;
  std::string line;
  if (!std::getline(in, line))
    throw DataError("empty manifest: " + path);
  std::set<std::string> ids;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 9)
      throw DataError("manifest row with " + std::to_string(f.size()) +
                      " fields: " + line);
    ManifestRecord r;
    r.utterance_id = f[0];
    r.audio_path = f[1];
    r.t60_s = std::stod(f[2]);
    r.drr_db = std::stod(f[3]);
    r.noise = f[4];
    r.snr_db = std::stod(f[5]);
    r.room_id = f[6];
    r.corpus = f[7];
    r.split = f[8];
    if (!ids.insert(r.utterance_id).second)
      throw DataError("duplicate utterance id: " + r.utterance_id);
    if (check_audio) {
      const fs::path p = fs::path(workspace_root) / r.audio_path;
      if (!fs::exists(p))
        throw DataError("manifest audio missing: " + p.string());
    }
    m.records.push_back(std::move(r));
  }
  return m;
}

std::vector<const ManifestRecord*> DatasetManifest::with_split(
    const std::string& split, const std::string& corpus) const {
  std::vector<const ManifestRecord*> out;
  for (const auto& r : records) {
    if (r.split != split) continue;
    if (!corpus.empty() && r.corpus != corpus) continue;
    out.push_back(&r);
  }
  return out;
}

void split_dataset(DatasetManifest& manifest,
                   const std::array<double, 3>& ratios, uint64_t seed,
                   bool stratify_by_room) {
  const double total = ratios[0] + ratios[1] + ratios[2];
  if (total <= 0.0) throw ConfigError("split ratios must sum to > 0");
  const char* names[3] = {"train", "dev", "eval"};
  std::mt19937_64 rng(seed ^ 0x51317ull);

  if (!stratify_by_room) {
    std::vector<std::size_t> order(manifest.records.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    const std::size_t n = order.size();
    const std::size_t n_train =
        static_cast<std::size_t>(std::lround(n * ratios[0] / total));
    const std::size_t n_dev =
        static_cast<std::size_t>(std::lround(n * ratios[1] / total));
    for (std::size_t i = 0; i < n; ++i) {
      const char* s = i < n_train ? names[0]
                      : (i < n_train + n_dev ? names[1] : names[2]);
      manifest.records[order[i]].split = s;
    }
    return;
  }

  // Whole rooms go to one split; fill splits greedily in shuffled room
  // order against the running utterance-count targets.
  std::map<std::string, std::vector<std::size_t>> by_room;
  for (std::size_t i = 0; i < manifest.records.size(); ++i)
    by_room[manifest.records[i].room_id].push_back(i);
  std::vector<std::string> rooms;
  for (const auto& [room, _] : by_room) rooms.push_back(room);
  std::shuffle(rooms.begin(), rooms.end(), rng);

  const double n = static_cast<double>(manifest.records.size());
  const double targets[3] = {n * ratios[0] / total, n * ratios[1] / total,
                             n * ratios[2] / total};
  double assigned[3] = {0.0, 0.0, 0.0};
  for (const auto& room : rooms) {
    // most under-filled split relative to its target
    int best = 0;
    double best_deficit = -std::numeric_limits<double>::infinity();
    for (int s = 0; s < 3; ++s) {
      if (targets[s] <= 0.0) continue;
      const double deficit = (targets[s] - assigned[s]) / targets[s];
      if (deficit > best_deficit) {
        best_deficit = deficit;
        best = s;
      }
    }
    for (std::size_t idx : by_room[room]) {
      manifest.records[idx].split = names[best];
      assigned[best] += 1.0;
    }
  }
}

// ---- configuration ----------------------------------------------------------

namespace {

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config: " + path);
  try {
    return json::parse(in, nullptr, true, true);  // allow comments
  } catch (const json::parse_error& e) {
    throw ConfigError("config parse error in " + path + ": " + e.what());
  }
}

template <typename T>
T get_or(const json& j, const std::string& key, const T& fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("config key '" + key + "': " + e.what());
  }
}

}  // namespace

std::string Config::primary_corpus() const {
  if (corpora.empty()) throw ConfigError("no corpora configured");
  return corpora.front().tag;
}

Config load_config(const std::string& path) {
  const json j = read_json(path);
  Config cfg;
  cfg.version = get_or(j, "version", 1);
  if (cfg.version != 1)
    throw ConfigError("unsupported config version " +
                      std::to_string(cfg.version));
  if (!j.contains("workspace"))
    throw ConfigError("config must set 'workspace'");
  cfg.workspace = j.at("workspace").get<std::string>();
  cfg.seed = get_or<uint64_t>(j, "seed", 0);

  if (j.contains("corpora")) {
    for (const auto& c : j.at("corpora")) {
      CorpusConfig cc;
      cc.tag = get_or<std::string>(c, "tag", cc.tag);
      cc.n_rooms = get_or(c, "n_rooms", cc.n_rooms);
      cc.n_utterances = get_or(c, "n_utterances", cc.n_utterances);
      cc.t60_range = get_or(c, "t60_range", cc.t60_range);
      cc.drr_range = get_or(c, "drr_range", cc.drr_range);
      cc.utterance_s = get_or(c, "utterance_s", cc.utterance_s);
      cc.noise_types = get_or(c, "noise_types", cc.noise_types);
      cc.snr_db = get_or(c, "snr_db", cc.snr_db);
      cc.rir_max_length_s = get_or(c, "rir_max_length_s", cc.rir_max_length_s);
      if (cc.n_rooms < 1 || cc.n_utterances < 1)
        throw ConfigError("corpus " + cc.tag + " needs rooms and utterances");
      if (cc.noise_types.empty())
        throw ConfigError("corpus " + cc.tag + " needs noise types");
      for (const auto& n : cc.noise_types)
        if (n != "babble" && n != "fan")
          throw ConfigError("unknown noise type: " + n);
      cfg.corpora.push_back(std::move(cc));
    }
  }
  {
    std::set<std::string> tags;
    for (const auto& c : cfg.corpora)
      if (!tags.insert(c.tag).second)
        throw ConfigError("duplicate corpus tag: " + c.tag);
  }

  if (j.contains("split")) {
    const auto& s = j.at("split");
    cfg.split_ratios = get_or(s, "ratios", cfg.split_ratios);
    cfg.stratify_by_room = get_or(s, "stratify_by_room", cfg.stratify_by_room);
  }

  if (j.contains("train")) {
    const auto& t = j.at("train");
    cfg.train.targets = get_or(t, "targets", cfg.train.targets);
    for (const auto& tk : cfg.train.targets)
      blstm::target_kind_from_name(tk);  // validates
    cfg.train.cfg.n_layers = get_or(t, "layers", cfg.train.cfg.n_layers);
    cfg.train.cfg.hidden = get_or(t, "hidden", cfg.train.cfg.hidden);
    cfg.train.cfg.minibatch = get_or(t, "minibatch", cfg.train.cfg.minibatch);
    cfg.train.cfg.max_epochs = get_or(t, "max_epochs", cfg.train.cfg.max_epochs);
    cfg.train.cfg.patience = get_or(t, "patience", cfg.train.cfg.patience);
    cfg.train.cfg.learning_rate =
        get_or(t, "learning_rate", cfg.train.cfg.learning_rate);
    cfg.train.cfg.gradient_clip =
        get_or(t, "gradient_clip", cfg.train.cfg.gradient_clip);
    cfg.train.full_sweep = get_or(t, "full_sweep", cfg.train.full_sweep);
  }
  cfg.train.cfg.seed = cfg.seed;

  if (j.contains("v2")) {
    RecipeV2Config v2;
    const auto& v = j.at("v2");
    if (!v.contains("mixture")) throw ConfigError("v2 needs a mixture map");
    for (const auto& [tag, weight] : v.at("mixture").items())
      v2.mixture[tag] = weight.get<double>();
    double sum = 0.0;
    for (const auto& [_, wgt] : v2.mixture) sum += wgt;
    if (std::abs(sum - 1.0) > 1e-9)
      throw ConfigError("v2 mixture weights must sum to 1");
    v2.n_train = get_or(v, "n_train", 0);
    cfg.v2 = std::move(v2);
  }

  if (j.contains("v3")) {
    RecipeV3Config v3;
    v3.corpora = j.at("v3").at("corpora").get<std::vector<std::string>>();
    if (v3.corpora.size() != 4)
      throw ConfigError("v3 requires exactly 4 sub-model corpora");
    cfg.v3 = std::move(v3);
  }
  return cfg;
}

uint64_t config_hash(const Config& cfg) {
  json j;
  j["version"] = cfg.version;
  j["seed"] = cfg.seed;
  json corpora = json::array();
  for (const auto& c : cfg.corpora) {
    corpora.push_back({{"tag", c.tag},
                       {"n_rooms", c.n_rooms},
                       {"n_utterances", c.n_utterances},
                       {"t60_range", c.t60_range},
                       {"drr_range", c.drr_range},
                       {"utterance_s", c.utterance_s},
                       {"noise_types", c.noise_types},
                       {"snr_db", c.snr_db},
                       {"rir_max_length_s", c.rir_max_length_s}});
  }
  j["corpora"] = corpora;
  j["split"] = {{"ratios", cfg.split_ratios},
                {"stratify", cfg.stratify_by_room}};
  j["train"] = {{"targets", cfg.train.targets},
                {"layers", cfg.train.cfg.n_layers},
                {"hidden", cfg.train.cfg.hidden},
                {"minibatch", cfg.train.cfg.minibatch},
                {"max_epochs", cfg.train.cfg.max_epochs},
                {"patience", cfg.train.cfg.patience},
                {"learning_rate", cfg.train.cfg.learning_rate},
                {"gradient_clip", cfg.train.cfg.gradient_clip}};
  j["features"] = cfg.feature_cfg.hash();
  const std::string dump = j.dump();
  return fnv1a(dump.data(), dump.size());
}

uint64_t file_content_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot hash missing file: " + path);
  char buf[65536];
  uint64_t h = 1469598103934665603ull;
  while (in) {
    in.read(buf, sizeof(buf));
    h = fnv1a(buf, static_cast<std::size_t>(in.gcount()), h);
  }
  return h;
}

// ---- corpus generation --------------------------------------------------------

namespace {

struct RoomDraw {
  rir::RoomSpec spec;
  std::string room_id;
};

// Samples a room targeting the corpus T60/DRR ranges: absorption from the
// Sabine inverse, mic distance from the critical-radius DRR relation.
RoomDraw draw_room(const CorpusConfig& cc, uint64_t seed, int index) {
  std::mt19937_64 rng(seed * 2654435761ull + index);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  rir::RoomSpec spec;
  spec.dimensions = {3.0 + 5.0 * unif(rng), 3.0 + 4.0 * unif(rng),
                     2.4 + 1.1 * unif(rng)};
  const double volume =
      spec.dimensions[0] * spec.dimensions[1] * spec.dimensions[2];
  const double surface =
      2.0 * (spec.dimensions[0] * spec.dimensions[1] +
             spec.dimensions[0] * spec.dimensions[2] +
             spec.dimensions[1] * spec.dimensions[2]);
  const double t60_target =
      cc.t60_range[0] + (cc.t60_range[1] - cc.t60_range[0]) * unif(rng);
  const double alpha =
      std::clamp(0.161 * volume / (surface * t60_target), 0.02, 0.95);
  spec.absorption.fill(alpha);

  const double margin = 0.4;
  for (int d = 0; d < 3; ++d) {
    spec.source_pos[d] =
        margin + (spec.dimensions[d] - 2.0 * margin) * unif(rng);
  }
  // Critical radius r_c = 0.057 sqrt(V / T60); DRR ~ -20 log10(d / r_c).
  const double drr_target =
      cc.drr_range[0] + (cc.drr_range[1] - cc.drr_range[0]) * unif(rng);
  const double r_c = 0.057 * std::sqrt(volume / t60_target);
  double dist = r_c * std::pow(10.0, -drr_target / 20.0);
  dist = std::clamp(dist, 0.15, 0.45 * *std::min_element(
                                          spec.dimensions.begin(),
                                          spec.dimensions.end()));
  for (int attempt = 0; attempt < 64; ++attempt) {
    const double theta = 2.0 * M_PI * unif(rng);
    const double cosphi = 2.0 * unif(rng) - 1.0;
    const double sinphi = std::sqrt(1.0 - cosphi * cosphi);
    const std::array<double, 3> dir = {sinphi * std::cos(theta),
                                       sinphi * std::sin(theta), cosphi};
    bool ok = true;
    rir::RoomSpec candidate = spec;
    for (int d = 0; d < 3; ++d) {
      candidate.mic_pos[d] = spec.source_pos[d] + dist * dir[d];
      if (candidate.mic_pos[d] < margin ||
          candidate.mic_pos[d] > spec.dimensions[d] - margin)
        ok = false;
    }
    if (ok) {
      spec = candidate;
      break;
    }
    if (attempt % 8 == 7) dist *= 0.85;  // shrink if the room is tight
  }
  spec.max_length_s = cc.rir_max_length_s;
  spec.seed = seed ^ (static_cast<uint64_t>(index) << 20);
  RoomDraw draw;
  draw.spec = spec;
  draw.room_id = cc.tag + "_room" + std::to_string(index);
  return draw;
}

fs::path rir_wav_path(const Config& cfg, const std::string& room_id) {
  return fs::path(cfg.workspace) / "rirs" / (room_id + ".wav");
}
fs::path rir_meta_path(const Config& cfg, const std::string& room_id) {
  return fs::path(cfg.workspace) / "rirs" / (room_id + ".meta");
}

}  // namespace

void stage_simulate_rirs(const Config& cfg) {
  fs::create_directories(fs::path(cfg.workspace) / "rirs");
  for (const auto& cc : cfg.corpora) {
    parallel_for(cc.n_rooms, [&](int i) {
      const RoomDraw draw = draw_room(cc, cfg.seed, i);
      rir::RirRecord rec = rir::simulate_rir(draw.spec);
      rir::label_record(rec);
      Waveform w;
      w.sample_rate = rec.sample_rate;
      w.samples = rec.rir;
      wav::write_float32(rir_wav_path(cfg, draw.room_id).string(), w);
      rir::write_rir_metadata(rir_meta_path(cfg, draw.room_id).string(), rec);
      log_line("simulated " + draw.room_id + " t60=" +
               std::to_string(rec.t60_s) + " drr=" + std::to_string(rec.drr_db));
    });
  }
}

void stage_synth_corpus(const Config& cfg) {
  fs::create_directories(fs::path(cfg.workspace) / "audio");
  DatasetManifest manifest;
  std::mutex manifest_mutex;

  for (const auto& cc : cfg.corpora) {
    // Load the corpus rooms (DataError if simulate-rirs has not run).
    std::vector<rir::RirRecord> rooms(cc.n_rooms);
    std::vector<std::string> room_ids(cc.n_rooms);
    for (int r = 0; r < cc.n_rooms; ++r) {
      room_ids[r] = cc.tag + "_room" + std::to_string(r);
      const std::string wav_path = rir_wav_path(cfg, room_ids[r]).string();
      if (!fs::exists(wav_path))
        throw DataError("missing RIR (run simulate-rirs first): " + wav_path);
      rooms[r] = rir::read_rir_metadata(rir_meta_path(cfg, room_ids[r]).string());
      rooms[r].rir = wav::read(wav_path).samples;
    }

    parallel_for(cc.n_utterances, [&](int u) {
      std::mt19937_64 rng(cfg.seed * 40503ull + fnv1a(cc.tag.data(), cc.tag.size()) + u);
      std::uniform_real_distribution<double> unif(0.0, 1.0);
      const int r = u % cc.n_rooms;
      const std::string& noise_type =
          cc.noise_types[u % cc.noise_types.size()];
      const double snr =
          cc.snr_db[(u / cc.noise_types.size()) % cc.snr_db.size()];
      const double dur = cc.utterance_s[0] +
                         (cc.utterance_s[1] - cc.utterance_s[0]) * unif(rng);
      const Waveform clean = speechgen::synthetic_speech(dur, rng());
      const double noise_dur =
          dur + static_cast<double>(rooms[r].rir.size()) / kCanonicalRate + 0.1;
      const Waveform noise = speechgen::noise_by_name(noise_type, noise_dur, rng());
      const Waveform mixed =
          rir::synth_utterance(clean, rooms[r].rir, noise, snr);

      ManifestRecord rec;
      rec.utterance_id = cc.tag + "_utt" + std::to_string(u);
      rec.audio_path = "audio/" + rec.utterance_id + ".wav";
      rec.t60_s = rooms[r].t60_s;
      rec.drr_db = rooms[r].drr_db;
      rec.noise = noise_type;
      rec.snr_db = snr;
      rec.room_id = room_ids[r];
      rec.corpus = cc.tag;
      wav::write_pcm16((fs::path(cfg.workspace) / rec.audio_path).string(),
                       mixed);
      std::lock_guard<std::mutex> lock(manifest_mutex);
      manifest.records.push_back(std::move(rec));
    });
  }

  // Stable order, then per-corpus split assignment.
  std::sort(manifest.records.begin(), manifest.records.end(),
            [](const ManifestRecord& a, const ManifestRecord& b) {
              return a.utterance_id < b.utterance_id;
            });
  for (const auto& cc : cfg.corpora) {
    DatasetManifest sub;
    for (auto& r : manifest.records)
      if (r.corpus == cc.tag) sub.records.push_back(r);
    split_dataset(sub, cfg.split_ratios,
                  cfg.seed ^ fnv1a(cc.tag.data(), cc.tag.size()),
                  cfg.stratify_by_room);
    std::size_t k = 0;
    for (auto& r : manifest.records)
      if (r.corpus == cc.tag) r.split = sub.records[k++].split;
  }
  manifest.save((fs::path(cfg.workspace) / "manifest.csv").string());
}

// ---- feature cache -----------------------------------------------------------

std::string feature_cache_path(const Config& cfg, const ManifestRecord& rec) {
  const std::string audio = (fs::path(cfg.workspace) / rec.audio_path).string();
  const uint64_t key = file_content_hash(audio) ^ cfg.feature_cfg.hash();
  return (fs::path(cfg.workspace) / "cache" /
          (rec.utterance_id + "_" + hex16(key) + ".feat"))
      .string();
}

int stage_extract(const Config& cfg, const DatasetManifest& manifest) {
  fs::create_directories(fs::path(cfg.workspace) / "cache");
  std::atomic<int> misses{0};
  parallel_for(static_cast<int>(manifest.records.size()), [&](int i) {
    const ManifestRecord& rec = manifest.records[i];
    const std::string path = feature_cache_path(cfg, rec);
    if (fs::exists(path)) {
      log_line("cache hit " + rec.utterance_id);
      return;
    }
    const Waveform w =
        wav::read((fs::path(cfg.workspace) / rec.audio_path).string());
    const features::FeatureMatrix m =
        features::assemble_feature_matrix(w, rec.utterance_id, cfg.feature_cfg);
    features::write_feature_file(path, m, cfg.feature_cfg.hash(), cfg.seed);
    log_line("extracted " + rec.utterance_id);
    ++misses;
  });
  return misses;
}

features::FeatureMatrix load_features(const Config& cfg,
                                      const ManifestRecord& rec) {
  return features::read_feature_file(feature_cache_path(cfg, rec)).matrix;
}

// ---- estimates io ------------------------------------------------------------

void write_estimates_csv(const std::string& path,
                         const std::vector<std::pair<std::string, double>>& est,
                         const std::string& target_kind, uint64_t cfg_hash,
                         uint64_t seed) {
  auto sorted = est;
  std::sort(sorted.begin(), sorted.end());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write estimates: " + path);
  out << "# config_hash=" << cfg_hash << " seed=" << seed << '\n';
  out << "utterance_id,target_kind,estimate\n";
  out.precision(17);
  for (const auto& [id, v] : sorted)
    out << id << ',' << target_kind << ',' << v << '\n';
}

std::vector<std::pair<std::string, double>> read_estimates_csv(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open estimates: " + path);
  std::vector<std::pair<std::string, double>> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#' || line.rfind("utterance_id", 0) == 0)
      continue;
    const auto f = split_csv_line(line);
    if (f.size() != 3) throw DataError("bad estimates row: " + line);
    out.emplace_back(f[0], std::stod(f[2]));
  }
  return out;
}

// ---- recipes -----------------------------------------------------------------

namespace {

struct LoadedSet {
  std::vector<features::FeatureMatrix> storage;
  std::vector<blstm::TrainingExample> examples;
};

double record_target(const ManifestRecord& rec, blstm::TargetKind kind) {
  return kind == blstm::TargetKind::Drr ? rec.drr_db : rec.t60_s;
}

// Loads cached features for the given records; utterances whose feature
// extraction failed are skipped with a logged reason.
LoadedSet load_set(const Config& cfg,
                   const std::vector<const ManifestRecord*>& records,
                   blstm::TargetKind kind) {
  LoadedSet set;
  set.storage.reserve(records.size());
  for (const auto* rec : records) {
    try {
      set.storage.push_back(load_features(cfg, *rec));
    } catch (const Error& e) {
      log_line("skipping " + rec->utterance_id + ": " + e.what());
      continue;
    }
    blstm::TrainingExample ex;
    ex.feats = nullptr;  // fixed up below once storage stops moving
    ex.target = record_target(*rec, kind);
    ex.utterance_id = rec->utterance_id;
    set.examples.push_back(std::move(ex));
  }
  for (std::size_t i = 0; i < set.examples.size(); ++i)
    set.examples[i].feats = &set.storage[i];
  return set;
}

void assert_no_leak(const std::vector<const ManifestRecord*>& train_like,
                    const std::vector<const ManifestRecord*>& eval_like) {
  std::set<std::string> train_ids;
  for (const auto* r : train_like) train_ids.insert(r->utterance_id);
  for (const auto* r : eval_like) {
    if (train_ids.count(r->utterance_id))
      throw DataError("utterance in both training and evaluation roles: " +
                      r->utterance_id);
  }
}

eval::LabeledUtterance to_labeled(const ManifestRecord& r,
                                  blstm::TargetKind kind) {
  eval::LabeledUtterance l;
  l.utterance_id = r.utterance_id;
  l.noise = r.noise;
  l.snr_db = r.snr_db;
  l.room_id = r.room_id;
  l.truth = record_target(r, kind);
  return l;
}

std::vector<std::pair<std::string, double>> estimate_set(
    const blstm::BlstmModel& model, const LoadedSet& set) {
  std::vector<std::pair<std::string, double>> est(set.examples.size());
  parallel_for(static_cast<int>(set.examples.size()), [&](int i) {
    const auto frames = blstm::blstm_forward(model, *set.examples[i].feats);
    est[i] = {set.examples[i].utterance_id, blstm::temporal_average(frames)};
  });
  return est;
}

struct TrainedModel {
  blstm::BlstmModel model;
  std::string model_path;
  double best_dev_rmsd = 0.0;
};

TrainedModel train_core(const Config& cfg,
                        const std::vector<const ManifestRecord*>& train_recs,
                        const std::vector<const ManifestRecord*>& dev_recs,
                        const std::string& target_name,
                        const std::string& model_tag) {
  const blstm::TargetKind kind = blstm::target_kind_from_name(target_name);
  const LoadedSet train_set = load_set(cfg, train_recs, kind);
  const LoadedSet dev_set = load_set(cfg, dev_recs, kind);
  if (train_set.examples.empty() || dev_set.examples.empty())
    throw EmptyDataset("training needs non-empty train and dev sets");

  const blstm::TrainResult trained =
      blstm::train(train_set.examples, dev_set.examples, kind, cfg.train.cfg);

  const uint64_t hash = config_hash(cfg);
  fs::create_directories(fs::path(cfg.workspace) / "models");
  fs::create_directories(fs::path(cfg.workspace) / "logs");

  TrainedModel out;
  out.best_dev_rmsd = trained.best_dev_rmsd;
  out.model_path = (fs::path(cfg.workspace) / "models" /
                    (model_tag + "_" + target_name + ".nirm"))
                       .string();
  blstm::save_model(out.model_path, trained.model, hash);
  {
    std::ofstream log_out((fs::path(cfg.workspace) / "logs" /
                           (model_tag + "_" + target_name + ".log"))
                              .string());
    log_out << "# config_hash=" << hash << " seed=" << cfg.seed << '\n';
    log_out << blstm::format_training_log(trained);
  }
  out.model = trained.model;
  return out;
}

RecipeModelResult train_and_evaluate(
    const Config& cfg,
    const std::vector<const ManifestRecord*>& train_recs,
    const std::vector<const ManifestRecord*>& dev_recs,
    const std::vector<const ManifestRecord*>& eval_recs,
    const std::string& target_name, const std::string& model_tag) {
  const blstm::TargetKind kind = blstm::target_kind_from_name(target_name);
  assert_no_leak(train_recs, eval_recs);
  assert_no_leak(dev_recs, eval_recs);

  TrainedModel trained =
      train_core(cfg, train_recs, dev_recs, target_name, model_tag);
  const LoadedSet eval_set = load_set(cfg, eval_recs, kind);

  const uint64_t hash = config_hash(cfg);
  fs::create_directories(fs::path(cfg.workspace) / "estimates");
  fs::create_directories(fs::path(cfg.workspace) / "reports");

  RecipeModelResult result;
  result.target_kind = target_name;
  result.best_dev_rmsd = trained.best_dev_rmsd;
  result.model_path = trained.model_path;
  result.n_train = static_cast<int>(train_recs.size());
  result.n_dev = static_cast<int>(dev_recs.size());

  const auto est = estimate_set(trained.model, eval_set);
  write_estimates_csv((fs::path(cfg.workspace) / "estimates" /
                       (model_tag + "_" + target_name + ".csv"))
                          .string(),
                      est, target_name, hash, cfg.seed);

  std::vector<eval::LabeledUtterance> labels;
  for (const auto* r : eval_recs) labels.push_back(to_labeled(*r, kind));
  result.report = eval::evaluate_report(est, labels, target_name);
  result.report.config_hash = hash;
  result.report.seed = cfg.seed;
  eval::write_report_json((fs::path(cfg.workspace) / "reports" /
                           (model_tag + "_" + target_name + ".json"))
                              .string(),
                          result.report);
  eval::write_report_csv((fs::path(cfg.workspace) / "reports" /
                          (model_tag + "_" + target_name + ".csv"))
                             .string(),
                         result.report);
  return result;
}

DatasetManifest load_workspace_manifest(const Config& cfg) {
  return DatasetManifest::load(
      (fs::path(cfg.workspace) / "manifest.csv").string(), cfg.workspace,
      true);
}

}  // namespace

namespace {

// Extraction restricted to the records a recipe actually touches.
int extract_records(const Config& cfg,
                    const std::vector<const ManifestRecord*>& records) {
  DatasetManifest needed;
  for (const auto* r : records) needed.records.push_back(*r);
  return stage_extract(cfg, needed);
}

}  // namespace

RecipeResult run_recipe_v1(const Config& cfg) {
  const DatasetManifest manifest = load_workspace_manifest(cfg);
  const std::string corpus = cfg.primary_corpus();
  auto train_recs = manifest.with_split("train", corpus);
  auto dev_recs = manifest.with_split("dev", corpus);
  auto eval_recs = manifest.with_split("eval", corpus);
  std::vector<const ManifestRecord*> all = train_recs;
  all.insert(all.end(), dev_recs.begin(), dev_recs.end());
  all.insert(all.end(), eval_recs.begin(), eval_recs.end());
  extract_records(cfg, all);
  RecipeResult result;
  for (const auto& target : cfg.train.targets) {
    result.per_target.push_back(train_and_evaluate(
        cfg, train_recs, dev_recs, eval_recs, target, "v1"));
  }
  return result;
}

RecipeResult run_recipe_v2(const Config& cfg) {
  if (!cfg.v2) throw ConfigError("config has no v2 section");
  const DatasetManifest manifest = load_workspace_manifest(cfg);

  // Mixture feasibility before any compute.
  std::map<std::string, std::vector<const ManifestRecord*>> pool;
  for (const auto& r : manifest.records)
    if (r.split != "eval") pool[r.corpus].push_back(&r);
  for (const auto& [tag, weight] : cfg.v2->mixture) {
    if (weight > 0.0 && pool.find(tag) == pool.end())
      throw ConfigError("v2 mixture names corpus with no records: " + tag);
  }

  // Largest train size the mixture allows (dev adds 30% on top).
  int n_train = cfg.v2->n_train;
  if (n_train <= 0) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& [tag, weight] : cfg.v2->mixture) {
      if (weight <= 0.0) continue;
      best = std::min(best, pool[tag].size() / (1.3 * weight));
    }
    n_train = static_cast<int>(best);
  }
  if (n_train < 2) throw ConfigError("v2 mixture leaves no training data");
  const int n_dev = static_cast<int>(std::lround(0.3 * n_train));

  // Largest-remainder apportionment keeps per-tag counts summing exactly
  // to the requested totals.
  auto apportion = [&](int total) {
    std::map<std::string, int> out;
    std::vector<std::pair<double, std::string>> remainders;
    int assigned = 0;
    for (const auto& [tag, weight] : cfg.v2->mixture) {
      const double exact = total * weight;
      const int base = static_cast<int>(exact);
      out[tag] = base;
      assigned += base;
      remainders.push_back({exact - base, tag});
    }
    std::sort(remainders.begin(), remainders.end(),
              [](const auto& a, const auto& b) {
                return a.first > b.first || (a.first == b.first && a.second < b.second);
              });
    for (int i = 0; i < total - assigned; ++i)
      out[remainders[i % remainders.size()].second] += 1;
    return out;
  };
  const std::map<std::string, int> want_train = apportion(n_train);
  const std::map<std::string, int> want_dev = apportion(n_dev);

  std::vector<const ManifestRecord*> train_recs, dev_recs;
  std::mt19937_64 rng(cfg.seed ^ 0x7e2ull);
  for (const auto& [tag, weight] : cfg.v2->mixture) {
    if (weight <= 0.0) continue;
    auto& from = pool[tag];
    std::shuffle(from.begin(), from.end(), rng);
    const int w_train = want_train.at(tag);
    const int w_dev = want_dev.at(tag);
    if (static_cast<int>(from.size()) < w_train + w_dev)
      throw ConfigError("corpus " + tag + " too small for the v2 mixture");
    train_recs.insert(train_recs.end(), from.begin(), from.begin() + w_train);
    dev_recs.insert(dev_recs.end(), from.begin() + w_train,
                    from.begin() + w_train + w_dev);
  }

  // Evaluate on the primary-corpus eval split.
  const auto eval_recs = manifest.with_split("eval", cfg.primary_corpus());
  std::vector<const ManifestRecord*> all = train_recs;
  all.insert(all.end(), dev_recs.begin(), dev_recs.end());
  all.insert(all.end(), eval_recs.begin(), eval_recs.end());
  extract_records(cfg, all);
  RecipeResult result;
  for (const auto& target : cfg.train.targets) {
    result.per_target.push_back(
        train_and_evaluate(cfg, train_recs, dev_recs, eval_recs, target, "v2"));
  }
  return result;
}

RecipeResult run_recipe_v3(const Config& cfg) {
  if (!cfg.v3) throw ConfigError("config has no v3 section");
  const DatasetManifest manifest = load_workspace_manifest(cfg);
  stage_extract(cfg, manifest);
  const uint64_t hash = config_hash(cfg);
  const std::string primary = cfg.v3->corpora.front();

  RecipeResult result;
  for (const auto& target : cfg.train.targets) {
    const blstm::TargetKind kind = blstm::target_kind_from_name(target);

    // Four sub-models: existing model files are reused, missing ones are
    // trained on their designated corpus.
    std::vector<blstm::BlstmModel> models;
    for (std::size_t s = 0; s < cfg.v3->corpora.size(); ++s) {
      const std::string& corpus = cfg.v3->corpora[s];
      const std::string tag = "v3sub" + std::to_string(s);
      const std::string model_path =
          (fs::path(cfg.workspace) / "models" / (tag + "_" + target + ".nirm"))
              .string();
      if (fs::exists(model_path)) {
        log_line("reusing sub-model " + model_path);
        models.push_back(blstm::load_model(model_path));
        continue;
      }
      // Every sub-model trains on its designated corpus' train/dev
      // splits; the primary eval split stays untouched.
      const RecipeModelResult sub = train_and_evaluate(
          cfg, manifest.with_split("train", corpus),
          manifest.with_split("dev", corpus),
          manifest.with_split("eval", primary), target, tag);
      models.push_back(blstm::load_model(sub.model_path));
    }

    // Combiner inputs: temporal-average estimates of the 4 models on the
    // primary dev split (SVR training) and eval split (validation).
    auto build_vectors = [&](const std::vector<const ManifestRecord*>& recs) {
      std::vector<svr::EstimateVector> vecs;
      const LoadedSet set = load_set(cfg, recs, kind);
      vecs.resize(set.examples.size());
      parallel_for(static_cast<int>(set.examples.size()), [&](int i) {
        svr::EstimateVector v;
        v.utterance_id = set.examples[i].utterance_id;
        v.target = set.examples[i].target;
        for (int mdl = 0; mdl < 4; ++mdl) {
          const auto frames =
              blstm::blstm_forward(models[mdl], *set.examples[i].feats);
          v.v[mdl] = blstm::temporal_average(frames);
        }
        vecs[i] = std::move(v);
      });
      return vecs;
    };

    const auto dev_recs = manifest.with_split("dev", primary);
    const auto eval_recs = manifest.with_split("eval", primary);
    assert_no_leak(dev_recs, eval_recs);
    const std::vector<svr::EstimateVector> dev_vecs = build_vectors(dev_recs);
    const std::vector<svr::EstimateVector> eval_vecs = build_vectors(eval_recs);
    if (dev_vecs.size() < 20)
      throw EmptyDataset("v3 fusion needs >= 20 dev vectors, got " +
                         std::to_string(dev_vecs.size()));

    const svr::GridSearchResult fused =
        svr::svr_train(dev_vecs, eval_vecs, target);
    svr::save_model((fs::path(cfg.workspace) / "models" /
                     ("v3_fusion_" + target + ".nisv"))
                        .string(),
                    fused.best.model, hash);

    // Individual and fused eval RMSDs.
    std::vector<double> truth(eval_vecs.size());
    for (std::size_t i = 0; i < eval_vecs.size(); ++i)
      truth[i] = eval_vecs[i].target;
    std::vector<double>& individual = result.individual_rmsd[target];
    for (int mdl = 0; mdl < 4; ++mdl) {
      std::vector<double> est(eval_vecs.size());
      for (std::size_t i = 0; i < eval_vecs.size(); ++i)
        est[i] = eval_vecs[i].v[mdl];
      individual.push_back(kind == blstm::TargetKind::Drr
                               ? eval::rmsd_drr(truth, est)
                               : eval::rmsd_t60(truth, est));
    }
    std::vector<std::pair<std::string, double>> fused_est;
    for (const auto& v : eval_vecs)
      fused_est.emplace_back(v.utterance_id,
                             svr::svr_predict(fused.best.model, v.v));
    write_estimates_csv((fs::path(cfg.workspace) / "estimates" /
                         ("v3_fused_" + target + ".csv"))
                            .string(),
                        fused_est, target, hash, cfg.seed);

    std::vector<eval::LabeledUtterance> labels;
    for (const auto* r : eval_recs) labels.push_back(to_labeled(*r, kind));
    eval::EvalReport report = eval::evaluate_report(fused_est, labels, target);
    report.config_hash = hash;
    report.seed = cfg.seed;
    result.fused_rmsd[target] = report.global.rmsd;

    // Report carries fused and individual deviations side by side.
    {
      nlohmann::json extra;
      extra["fused_rmsd"] = report.global.rmsd;
      extra["individual_rmsd"] = individual;
      std::ofstream out((fs::path(cfg.workspace) / "reports" /
                         ("v3_summary_" + target + ".json"))
                            .string());
      out << extra.dump(2) << '\n';
    }
    eval::write_report_json((fs::path(cfg.workspace) / "reports" /
                             ("v3_fused_" + target + ".json"))
                                .string(),
                            report);
    eval::write_report_csv((fs::path(cfg.workspace) / "reports" /
                            ("v3_fused_" + target + ".csv"))
                               .string(),
                           report);
    RecipeModelResult r;
    r.target_kind = target;
    r.report = std::move(report);
    result.per_target.push_back(std::move(r));
  }
  return result;
}

std::vector<std::string> stage_train(const Config& cfg) {
  const DatasetManifest manifest = load_workspace_manifest(cfg);
  const std::string corpus = cfg.primary_corpus();
  auto train_recs = manifest.with_split("train", corpus);
  auto dev_recs = manifest.with_split("dev", corpus);
  std::vector<const ManifestRecord*> all = train_recs;
  all.insert(all.end(), dev_recs.begin(), dev_recs.end());
  extract_records(cfg, all);
  std::vector<std::string> paths;
  for (const auto& target : cfg.train.targets)
    paths.push_back(train_core(cfg, train_recs, dev_recs, target, "v1").model_path);
  return paths;
}

std::vector<std::pair<std::string, double>> stage_estimate(
    const Config& cfg, const std::string& model_path, const std::string& split,
    const std::string& out_csv) {
  const DatasetManifest manifest = load_workspace_manifest(cfg);
  const blstm::BlstmModel model = blstm::load_model(model_path);
  const auto recs = manifest.with_split(split, cfg.primary_corpus());
  if (recs.empty()) throw DataError("no records in split: " + split);
  extract_records(cfg, recs);
  const LoadedSet set = load_set(cfg, recs, model.target);
  const auto est = estimate_set(model, set);
  if (!out_csv.empty())
    write_estimates_csv(out_csv, est, blstm::target_kind_name(model.target),
                        config_hash(cfg), cfg.seed);
  return est;
}

eval::EvalReport stage_evaluate(const Config& cfg,
                                const std::string& estimates_csv,
                                const std::string& target_name,
                                const std::string& report_prefix) {
  const DatasetManifest manifest = load_workspace_manifest(cfg);
  const blstm::TargetKind kind = blstm::target_kind_from_name(target_name);
  const auto est = read_estimates_csv(estimates_csv);
  std::vector<eval::LabeledUtterance> labels;
  for (const auto& r : manifest.records) labels.push_back(to_labeled(r, kind));
  eval::EvalReport report = eval::evaluate_report(est, labels, target_name);
  report.config_hash = config_hash(cfg);
  report.seed = cfg.seed;
  if (!report_prefix.empty()) {
    eval::write_report_json(report_prefix + ".json", report);
    eval::write_report_csv(report_prefix + ".csv", report);
  }
  return report;
}

}  // namespace nira::pipeline
