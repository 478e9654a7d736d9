#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "voxgan/checkpoint.hpp"
#include "voxgan/csv.hpp"
#include "voxgan/features.hpp"
#include "voxgan/gan.hpp"
#include "voxgan/moments.hpp"
#include "voxgan/rng.hpp"
#include "voxgan/synth_data.hpp"
#include "voxgan/training.hpp"
#include "voxgan/vgrid_io.hpp"
#include "voxgan/voxel_grid.hpp"

namespace fs = std::filesystem;
using namespace voxgan;

namespace {

bool parse_bool(const std::string& v) {
  if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "off" || v == "no") return false;
  throw std::runtime_error("expected a boolean, got '" + v + "'");
}

std::string trimmed(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Maps config-file keys onto option variables. Values from the file apply
// only when the same option was not given as a flag, so flags win.
class KeyBinds {
 public:
  void bind(const std::string& key, double& ref) {
    set_[key] = [&ref](const std::string& v) { ref = csv::to_double(v); };
  }
  void bind(const std::string& key, std::int64_t& ref) {
    set_[key] = [&ref](const std::string& v) { ref = csv::to_int(v); };
  }
  void bind(const std::string& key, std::uint64_t& ref) {
    set_[key] = [&ref](const std::string& v) {
      ref = static_cast<std::uint64_t>(csv::to_int(v));
    };
  }
  void bind(const std::string& key, std::string& ref) {
    set_[key] = [&ref](const std::string& v) { ref = v; };
  }
  void bind(const std::string& key, bool& ref) {
    set_[key] = [&ref](const std::string& v) { ref = parse_bool(v); };
  }

  void apply(const CLI::App& cmd, const std::string& path) const {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      line = trimmed(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                 ": expected key=value");
      }
      const auto key = trimmed(line.substr(0, eq));
      const auto value = trimmed(line.substr(eq + 1));
      const auto it = set_.find(key);
      if (it == set_.end()) {
        throw std::runtime_error(path + ": unknown key '" + key + "'");
      }
      if (cmd.count("--" + key) > 0) continue;
      it->second(value);
    }
  }

 private:
  std::map<std::string, std::function<void(const std::string&)>> set_;
};

void echo(const std::string& key, const std::string& value) {
  std::cout << key << '=' << value << '\n';
}
void echo(const std::string& key, double value) { echo(key, csv::fmt(value)); }
void echo(const std::string& key, std::int64_t value) { echo(key, std::to_string(value)); }
void echo(const std::string& key, std::uint64_t value) { echo(key, std::to_string(value)); }
void echo(const std::string& key, bool value) { echo(key, std::string(value ? "1" : "0")); }

std::string numbered_name(const char* stem, std::int64_t i) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_%04lld.vgrid", stem, static_cast<long long>(i));
  return buf;
}

struct GridSet {
  std::vector<VoxelGrid> grids;
  std::vector<int> labels;
  std::vector<std::string> files;
};

// Accepts a manifest CSV, a directory (manifest.csv inside if present, else
// every *.vgrid sorted by name), or a single .vgrid file.
GridSet load_grid_set(const fs::path& path) {
  GridSet out;
  const auto add_manifest = [&](const fs::path& manifest) {
    const auto base = manifest.parent_path();
    for (const auto& row : load_manifest(manifest)) {
      out.grids.push_back(load_grid(base / row.file));
      out.labels.push_back(row.label);
      out.files.push_back(row.file);
    }
  };
  if (fs::is_directory(path)) {
    if (fs::exists(path / "manifest.csv")) {
      add_manifest(path / "manifest.csv");
    } else {
      std::vector<fs::path> names;
      for (const auto& entry : fs::directory_iterator(path)) {
        if (entry.path().extension() == ".vgrid") names.push_back(entry.path());
      }
      std::sort(names.begin(), names.end());
      for (const auto& p : names) {
        out.grids.push_back(load_grid(p));
        out.labels.push_back(0);
        out.files.push_back(p.filename().string());
      }
    }
  } else if (path.extension() == ".csv") {
    add_manifest(path);
  } else {
    out.grids.push_back(load_grid(path));
    out.labels.push_back(0);
    out.files.push_back(path.filename().string());
  }
  if (out.grids.empty()) {
    throw std::runtime_error("no voxel grids found at " + path.string());
  }
  return out;
}

// --- synth -------------------------------------------------------------

struct SynthOpts {
  std::string kind = "voronoi";
  std::string out;
  std::string config;
  SynthSpec spec;
};

void run_synth(const SynthOpts& o) {
  o.spec.validate();
  echo("kind", o.kind);
  echo("out", o.out);
  echo("size", o.spec.size);
  echo("count", o.spec.count);
  echo("seed", o.spec.seed);
  if (o.kind == "voronoi") {
    echo("seed_points", o.spec.seed_points);
    echo("volume_size", o.spec.volume_size);
  } else {
    echo("min_radius", o.spec.min_radius);
    echo("max_radius", o.spec.max_radius);
    echo("min_aspect", o.spec.min_aspect);
    echo("max_aspect", o.spec.max_aspect);
  }

  fs::create_directories(o.out);
  std::vector<ManifestRow> rows;
  if (o.kind == "voronoi") {
    const auto grains = voronoi_grain_dataset(o.spec);
    const std::string params = "volume=" + std::to_string(o.spec.volume_size) +
                               ";seeds=" + std::to_string(o.spec.seed_points);
    for (std::size_t i = 0; i < grains.size(); ++i) {
      const auto name = numbered_name("grain", static_cast<std::int64_t>(i));
      save_grid(fs::path(o.out) / name, grains[i]);
      rows.push_back({name, 0, params});
    }
  } else if (o.kind == "solids") {
    const auto samples = three_class_solids(o.spec);
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const auto name = numbered_name("solid", static_cast<std::int64_t>(i));
      save_grid(fs::path(o.out) / name, samples[i].grid);
      rows.push_back({name, samples[i].label, samples[i].params});
    }
  } else {
    throw std::runtime_error("synth: unknown kind '" + o.kind + "' (voronoi|solids)");
  }
  save_manifest(fs::path(o.out) / "manifest.csv", rows);
  echo("files", static_cast<std::int64_t>(rows.size()));
}

// --- train -------------------------------------------------------------

struct TrainOpts {
  std::string data;
  std::string out;
  std::string config;
  ModelConfig model = ModelConfig::desk_scale(16);
  TrainConfig train;
  std::uint64_t seed = 1;
};

void run_train(const TrainOpts& o) {
  ModelConfig mc = o.model;
  mc.validate();
  TrainConfig tc = o.train;
  tc.seed = derive_seed(o.seed, "train-loop");
  tc.validate();

  echo("lr", tc.lr);
  echo("batch", static_cast<std::int64_t>(tc.batch));
  echo("n_critic", static_cast<std::int64_t>(tc.n_critic));
  echo("lambda_gp", tc.lambda_gp);
  echo("beta1", tc.beta1);
  echo("beta2", tc.beta2);
  echo("eps_adam", tc.eps_adam);
  echo("latent_dim", mc.latent_dim);
  echo("mapping_layers", mc.mapping_layers);
  echo("z_variance", tc.z_variance);
  echo("output_size", mc.output_size);
  echo("pack_size", mc.pack_size);
  echo("g_base_channels", mc.g_base_channels);
  echo("d_base_channels", mc.d_base_channels);
  echo("max_steps", tc.max_steps);
  echo("checkpoint_every", tc.checkpoint_every);
  echo("seed", o.seed);

  const auto set = load_grid_set(o.data);
  fs::create_directories(o.out);
  Rng init(derive_seed(o.seed, "model-init"));
  auto gen = make_generator<float>(mc, init);
  auto disc = make_discriminator<float>(mc, init);

  const fs::path ckpt_dir = fs::path(o.out) / "checkpoints";
  const auto result =
      train(gen, disc, set.grids, tc, fs::path(o.out) / "train_log.csv", ckpt_dir);

  char name[32];
  std::snprintf(name, sizeof(name), "step_%06lld.ckpt", static_cast<long long>(tc.max_steps));
  echo("steps", static_cast<std::int64_t>(result.trace.size()));
  echo("critic_updates", result.critic_updates);
  echo("generator_updates", result.generator_updates);
  echo("final_checkpoint", (ckpt_dir / name).string());
}

// --- generate ----------------------------------------------------------

struct GenerateOpts {
  std::string checkpoint;
  std::string out;
  std::string config;
  std::int64_t count = 1;
  std::int64_t batch = 8;
  double z_variance = 0.2;
  std::uint64_t seed = 1;
};

void run_generate(const GenerateOpts& o) {
  if (o.count < 1 || o.batch < 1) {
    throw std::runtime_error("generate: count and batch must be positive");
  }
  const auto ckpt = load_checkpoint<float>(o.checkpoint);
  const auto& cfg = ckpt.gen.cfg;
  echo("checkpoint", o.checkpoint);
  echo("out", o.out);
  echo("count", o.count);
  echo("seed", o.seed);
  echo("z_variance", o.z_variance);
  echo("output_size", cfg.output_size);

  fs::create_directories(o.out);
  GradGuard off(false);
  Rng rng(derive_seed(o.seed, "generate"));
  const auto s = cfg.output_size;
  const auto vol = static_cast<std::size_t>(s * s * s);
  std::int64_t written = 0;
  while (written < o.count) {
    const std::int64_t m = std::min(o.batch, o.count - written);
    const auto z = sample_latent<float>(rng, m, cfg.latent_dim, o.z_variance);
    const auto x = generate(ckpt.gen, z);
    const auto& v = x.values();
    for (std::int64_t i = 0; i < m; ++i) {
      VoxelGrid g({s, s, s});
      std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(i) * vol),
                  vol, g.data.begin());
      save_grid(fs::path(o.out) / numbered_name("sample", written + i), g);
    }
    written += m;
  }
  echo("files", written);
}

// --- moments -----------------------------------------------------------

struct MomentsOpts {
  std::string in;
  std::string out;
  std::string summary;
  std::string config;
  std::string which = "omega1";
  std::int64_t bins = 16;
  double threshold = 0.5;
  bool keep_largest = false;
};

void run_moments(const MomentsOpts& o) {
  const auto which = which_from_string(o.which);
  echo("in", o.in);
  echo("out", o.out);
  echo("which", o.which);
  echo("bins", o.bins);
  echo("threshold", o.threshold);
  echo("largest_component", o.keep_largest);

  const auto set = load_grid_set(o.in);
  std::ofstream csv_out(o.out, std::ios::trunc);
  if (!csv_out) throw std::runtime_error("moments: cannot open " + o.out);
  csv_out << "file,volume,omega1,omega2,omega3,valid,reason\n";

  std::vector<OmegaInvariants> invs;
  invs.reserve(set.grids.size());
  for (std::size_t i = 0; i < set.grids.size(); ++i) {
    VoxelGrid g = binarize(set.grids[i], static_cast<float>(o.threshold));
    if (o.keep_largest && g.solid_count() > 0) g = largest_component(g);
    const auto m = compute_moments(g);
    const auto inv = omega_invariants(m);
    invs.push_back(inv);
    csv_out << set.files[i] << ',' << m.volume << ',' << csv::fmt(inv.omega1) << ','
            << csv::fmt(inv.omega2) << ',' << csv::fmt(inv.omega3) << ','
            << (inv.valid ? 1 : 0) << ',' << to_string(inv.reason) << '\n';
  }
  if (!csv_out) throw std::runtime_error("moments: write failed for " + o.out);
  csv_out.close();

  std::int64_t omitted = 0;
  for (const auto& inv : invs) omitted += inv.valid ? 0 : 1;
  echo("grains", static_cast<std::int64_t>(invs.size()));
  echo("omitted_fraction",
       static_cast<double>(omitted) / static_cast<double>(invs.size()));

  if (!o.summary.empty()) {
    save_summary(o.summary, summarize(invs, o.bins, which));
    echo("summary", o.summary);
  }
}

// --- compare -----------------------------------------------------------

struct CompareOpts {
  std::string a, b, out;
};

void run_compare(const CompareOpts& o) {
  const auto rec = compare(load_summary(o.a), load_summary(o.b));
  save_comparison(o.out, rec);
  echo("which", std::string(to_string(rec.which)));
  echo("delta_mean", rec.delta_mean);
  echo("std_ratio", rec.std_ratio);
  echo("intersection", rec.intersection);
}

// --- classify ----------------------------------------------------------

struct ClassifyOpts {
  std::string train_path, test_path, checkpoint;
  std::string config;
  double c = 1.0;
  std::int64_t epochs = 30;
  std::uint64_t seed = 1;
  bool standardize = false;
  std::string features_out;
};

void run_classify(const ClassifyOpts& o) {
  const auto ckpt = load_checkpoint<float>(o.checkpoint);
  echo("checkpoint", o.checkpoint);
  echo("c", o.c);
  echo("epochs", o.epochs);
  echo("seed", o.seed);
  echo("standardize", o.standardize);

  const auto train_set = load_grid_set(o.train_path);
  const auto test_set = load_grid_set(o.test_path);
  const auto train_f = extract_features(ckpt.disc, train_set.grids);
  const auto test_f = extract_features(ckpt.disc, test_set.grids);
  const auto model = svm_train(train_f, train_set.labels, o.c, static_cast<int>(o.epochs),
                               derive_seed(o.seed, "svm"), o.standardize);
  echo("feature_length", feature_length(ckpt.disc.cfg));
  echo("train_accuracy", accuracy(svm_predict(model, train_f), train_set.labels));
  echo("test_accuracy", accuracy(svm_predict(model, test_f), test_set.labels));
  if (!o.features_out.empty()) {
    save_features(o.features_out, test_f, test_set.labels);
    echo("features_out", o.features_out);
  }
}

// --- nn ----------------------------------------------------------------

struct NnOpts {
  std::string query, corpus;
  std::string out;
  bool use_binarize = false;
  double threshold = 0.5;
};

void run_nn(const NnOpts& o) {
  const auto query = load_grid_set(o.query);
  const auto corpus = load_grid_set(o.corpus);
  const Dims dims = corpus.grids[0].dims;
  const auto flat = [&](const VoxelGrid& g, const std::string& file) {
    if (!(g.dims == dims)) {
      throw std::runtime_error("nn: " + file + " has different dimensions than the corpus");
    }
    if (!o.use_binarize) return g.data;
    return binarize(g, static_cast<float>(o.threshold)).data;
  };
  std::vector<std::vector<float>> corpus_vecs;
  corpus_vecs.reserve(corpus.grids.size());
  for (std::size_t i = 0; i < corpus.grids.size(); ++i) {
    corpus_vecs.push_back(flat(corpus.grids[i], corpus.files[i]));
  }

  std::string table = "query,match_index,match_file,distance\n";
  for (std::size_t i = 0; i < query.grids.size(); ++i) {
    const auto hit = nearest_neighbor(flat(query.grids[i], query.files[i]), corpus_vecs);
    table += query.files[i] + ',' + std::to_string(hit.index) + ',' +
             corpus.files[hit.index] + ',' + csv::fmt(hit.distance) + '\n';
  }
  std::cout << table;
  if (!o.out.empty()) {
    std::ofstream f(o.out, std::ios::trunc);
    if (!f || !(f << table)) throw std::runtime_error("nn: cannot write " + o.out);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "voxel GAN toolkit: synthetic data, WGAN-GP training, sampling, and "
      "shape statistics.\n"
      "Config files hold key=value lines ('#' comments); flags override file "
      "values.\n"
      "Canonical keys: lr, batch, n_critic, lambda_gp, beta1, beta2, "
      "latent_dim,\n"
      "z_variance, output_size, pack_size, seed."};
  app.require_subcommand(1);

  SynthOpts synth;
  auto* synth_cmd = app.add_subcommand("synth", "write a synthetic dataset plus manifest");
  synth_cmd->add_option("--kind", synth.kind, "voronoi | solids");
  synth_cmd->add_option("--out", synth.out, "output directory")->required();
  synth_cmd->add_option("--size", synth.spec.size, "edge of each cubic sample");
  synth_cmd->add_option("--count", synth.spec.count,
                        "samples to write (per class for solids)");
  synth_cmd->add_option("--seed", synth.spec.seed, "master seed");
  synth_cmd->add_option("--seed_points", synth.spec.seed_points,
                        "voronoi seeds per tessellation volume");
  synth_cmd->add_option("--volume_size", synth.spec.volume_size,
                        "voronoi tessellation volume edge");
  synth_cmd->add_option("--min_radius", synth.spec.min_radius, "solid base radius lower bound");
  synth_cmd->add_option("--max_radius", synth.spec.max_radius, "solid base radius upper bound");
  synth_cmd->add_option("--min_aspect", synth.spec.min_aspect, "secondary axis ratio lower bound");
  synth_cmd->add_option("--max_aspect", synth.spec.max_aspect, "secondary axis ratio upper bound");
  synth_cmd->add_option("--config", synth.config, "key=value config file");
  KeyBinds synth_binds;
  synth_binds.bind("kind", synth.kind);
  synth_binds.bind("size", synth.spec.size);
  synth_binds.bind("count", synth.spec.count);
  synth_binds.bind("seed", synth.spec.seed);
  synth_binds.bind("seed_points", synth.spec.seed_points);
  synth_binds.bind("volume_size", synth.spec.volume_size);
  synth_binds.bind("min_radius", synth.spec.min_radius);
  synth_binds.bind("max_radius", synth.spec.max_radius);
  synth_binds.bind("min_aspect", synth.spec.min_aspect);
  synth_binds.bind("max_aspect", synth.spec.max_aspect);

  TrainOpts tr;
  auto* train_cmd = app.add_subcommand("train", "train the GAN on a voxel dataset");
  train_cmd->add_option("--data", tr.data, "manifest csv or dataset directory")->required();
  train_cmd->add_option("--out", tr.out, "run directory for log and checkpoints")->required();
  train_cmd->add_option("--lr", tr.train.lr, "Adam learning rate");
  train_cmd->add_option("--batch", tr.train.batch, "real packs per critic step");
  train_cmd->add_option("--n_critic", tr.train.n_critic, "critic steps per generator step");
  train_cmd->add_option("--lambda_gp", tr.train.lambda_gp, "gradient penalty weight");
  train_cmd->add_option("--beta1", tr.train.beta1, "Adam beta1");
  train_cmd->add_option("--beta2", tr.train.beta2, "Adam beta2");
  train_cmd->add_option("--eps_adam", tr.train.eps_adam, "Adam epsilon");
  train_cmd->add_option("--z_variance", tr.train.z_variance, "latent variance");
  train_cmd->add_option("--max_steps", tr.train.max_steps, "critic steps to run");
  train_cmd->add_option("--checkpoint_every", tr.train.checkpoint_every,
                        "steps between checkpoints");
  train_cmd->add_option("--latent_dim", tr.model.latent_dim, "latent width");
  train_cmd->add_option("--mapping_layers", tr.model.mapping_layers, "mapping depth");
  train_cmd->add_option("--output_size", tr.model.output_size, "voxel edge (16|32|64)");
  train_cmd->add_option("--pack_size", tr.model.pack_size, "samples per critic pack");
  train_cmd->add_option("--g_base_channels", tr.model.g_base_channels,
                        "generator base channels");
  train_cmd->add_option("--d_base_channels", tr.model.d_base_channels, "critic base channels");
  train_cmd->add_option("--seed", tr.seed, "master seed");
  train_cmd->add_option("--config", tr.config, "key=value config file");
  KeyBinds train_binds;
  train_binds.bind("lr", tr.train.lr);
  train_binds.bind("batch", tr.train.batch);
  train_binds.bind("n_critic", tr.train.n_critic);
  train_binds.bind("lambda_gp", tr.train.lambda_gp);
  train_binds.bind("beta1", tr.train.beta1);
  train_binds.bind("beta2", tr.train.beta2);
  train_binds.bind("eps_adam", tr.train.eps_adam);
  train_binds.bind("z_variance", tr.train.z_variance);
  train_binds.bind("max_steps", tr.train.max_steps);
  train_binds.bind("checkpoint_every", tr.train.checkpoint_every);
  train_binds.bind("latent_dim", tr.model.latent_dim);
  train_binds.bind("mapping_layers", tr.model.mapping_layers);
  train_binds.bind("output_size", tr.model.output_size);
  train_binds.bind("pack_size", tr.model.pack_size);
  train_binds.bind("g_base_channels", tr.model.g_base_channels);
  train_binds.bind("d_base_channels", tr.model.d_base_channels);
  train_binds.bind("seed", tr.seed);

  GenerateOpts gen;
  auto* gen_cmd = app.add_subcommand("generate", "sample volumes from a checkpoint");
  gen_cmd->add_option("--checkpoint", gen.checkpoint, "model checkpoint")->required();
  gen_cmd->add_option("--out", gen.out, "output directory")->required();
  gen_cmd->add_option("--count", gen.count, "samples to write");
  gen_cmd->add_option("--batch", gen.batch, "synthesis batch size");
  gen_cmd->add_option("--z_variance", gen.z_variance, "latent variance");
  gen_cmd->add_option("--seed", gen.seed, "master seed");
  gen_cmd->add_option("--config", gen.config, "key=value config file");
  KeyBinds gen_binds;
  gen_binds.bind("count", gen.count);
  gen_binds.bind("batch", gen.batch);
  gen_binds.bind("z_variance", gen.z_variance);
  gen_binds.bind("seed", gen.seed);

  MomentsOpts mom;
  auto* mom_cmd =
      app.add_subcommand("moments", "per-grain moment invariants and distribution summary");
  mom_cmd->add_option("--in", mom.in, "manifest, directory, or single .vgrid")->required();
  mom_cmd->add_option("--out", mom.out, "per-grain invariant csv")->required();
  mom_cmd->add_option("--summary", mom.summary, "distribution summary csv");
  mom_cmd->add_option("--which", mom.which, "omega1 | omega2 | omega3");
  mom_cmd->add_option("--bins", mom.bins, "histogram bins");
  mom_cmd->add_option("--threshold", mom.threshold, "occupancy binarization threshold");
  mom_cmd->add_flag("--largest_component", mom.keep_largest,
                    "keep only the largest connected component");
  mom_cmd->add_option("--config", mom.config, "key=value config file");
  KeyBinds mom_binds;
  mom_binds.bind("which", mom.which);
  mom_binds.bind("bins", mom.bins);
  mom_binds.bind("threshold", mom.threshold);
  mom_binds.bind("largest_component", mom.keep_largest);

  CompareOpts cmp;
  auto* cmp_cmd = app.add_subcommand("compare", "compare two distribution summaries");
  cmp_cmd->add_option("--a", cmp.a, "reference summary csv")->required();
  cmp_cmd->add_option("--b", cmp.b, "candidate summary csv")->required();
  cmp_cmd->add_option("--out", cmp.out, "comparison record csv")->required();

  ClassifyOpts cls;
  auto* cls_cmd =
      app.add_subcommand("classify", "critic features + linear SVM over labeled datasets");
  cls_cmd->add_option("--train", cls.train_path, "training manifest or directory")->required();
  cls_cmd->add_option("--test", cls.test_path, "held-out manifest or directory")->required();
  cls_cmd->add_option("--checkpoint", cls.checkpoint, "model checkpoint")->required();
  cls_cmd->add_option("--c", cls.c, "SVM regularization");
  cls_cmd->add_option("--epochs", cls.epochs, "SVM epochs");
  cls_cmd->add_option("--seed", cls.seed, "master seed");
  cls_cmd->add_flag("--standardize", cls.standardize, "standardize features per dimension");
  cls_cmd->add_option("--features_out", cls.features_out, "dump held-out features csv");
  cls_cmd->add_option("--config", cls.config, "key=value config file");
  KeyBinds cls_binds;
  cls_binds.bind("c", cls.c);
  cls_binds.bind("epochs", cls.epochs);
  cls_binds.bind("seed", cls.seed);
  cls_binds.bind("standardize", cls.standardize);

  NnOpts nn;
  auto* nn_cmd =
      app.add_subcommand("nn", "voxel-space nearest neighbor of each query in a corpus");
  nn_cmd->add_option("--query", nn.query, "query manifest, directory, or file")->required();
  nn_cmd->add_option("--corpus", nn.corpus, "corpus manifest or directory")->required();
  nn_cmd->add_option("--out", nn.out, "also write the table to this csv");
  nn_cmd->add_flag("--binarize", nn.use_binarize, "binarize grids before measuring");
  nn_cmd->add_option("--threshold", nn.threshold, "binarization threshold");

  try {
    app.parse(argc, argv);
    if (*synth_cmd) {
      if (!synth.config.empty()) synth_binds.apply(*synth_cmd, synth.config);
      run_synth(synth);
    } else if (*train_cmd) {
      if (!tr.config.empty()) train_binds.apply(*train_cmd, tr.config);
      run_train(tr);
    } else if (*gen_cmd) {
      if (!gen.config.empty()) gen_binds.apply(*gen_cmd, gen.config);
      run_generate(gen);
    } else if (*mom_cmd) {
      if (!mom.config.empty()) mom_binds.apply(*mom_cmd, mom.config);
      run_moments(mom);
    } else if (*cmp_cmd) {
      run_compare(cmp);
    } else if (*cls_cmd) {
      if (!cls.config.empty()) cls_binds.apply(*cls_cmd, cls.config);
      run_classify(cls);
    } else if (*nn_cmd) {
      run_nn(nn);
    }
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "voxgan: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
