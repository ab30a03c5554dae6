#include "bvsviz/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <set>
#include <sstream>

#include "bvsviz/checkpoint.hpp"
#include "bvsviz/classifier.hpp"
#include "bvsviz/dataset_io.hpp"
#include "bvsviz/geometry.hpp"
#include "bvsviz/gradcheck.hpp"
#include "bvsviz/image_io.hpp"
#include "bvsviz/parallel.hpp"
#include "bvsviz/phantom.hpp"
#include "bvsviz/saliency.hpp"
#include "bvsviz/saliency_io.hpp"
#include "bvsviz/tensor.hpp"

namespace bvsviz {
namespace {

namespace fs = std::filesystem;

constexpr const char* kSnapshotName = "run_config.txt";

// Flag values typed on the command line, keyed by their config names.
class Flags {
 public:
  explicit Flags(CLI::App* app) : app_(app) {}

  void value(const std::string& flag, const std::string& key, const std::string& help) {
    Slot& s = slots_.emplace_back();
    s.key = key;
    s.opt = app_->add_option(flag, s.text, help);
  }

  void toggle(const std::string& flag, const std::string& key, const std::string& help) {
    Slot& s = slots_.emplace_back();
    s.key = key;
    s.is_switch = true;
    s.opt = app_->add_flag(flag, s.on, help);
  }

  KeyValues given() const {
    KeyValues kv;
    for (const Slot& s : slots_) {
      if (s.opt->count() == 0) continue;
      kv[s.key] = s.is_switch ? (s.on ? "1" : "0") : s.text;
    }
    return kv;
  }

 private:
  struct Slot {
    std::string key;
    std::string text;
    bool on = false;
    bool is_switch = false;
    CLI::Option* opt = nullptr;
  };
  CLI::App* app_;
  std::deque<Slot> slots_;
};

// Options every subcommand shares.
struct Common {
  std::string preset;
  std::string config;
  int threads = 0;
};

void add_common(CLI::App* sub, Common& c, bool with_preset) {
  if (with_preset) {
    sub->add_option("--preset", c.preset, "Built-in parameter set")
        ->check(CLI::IsMember({"desk", "paper"}));
  }
  sub->add_option("--config", c.config, "key = value file; flags override it");
  sub->add_option("--threads", c.threads, "Worker threads (default: BVSVIZ_THREADS or 1)")
      ->check(CLI::PositiveNumber);
}

int thread_count(const Common& c) {
  if (c.threads > 0) return c.threads;
  if (const char* env = std::getenv("BVSVIZ_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return 1;
}

// preset defaults <- config file <- flags. Unknown keys are rejected so that
// typos do not silently fall back to defaults.
KeyValues resolve(const std::function<KeyValues(const std::string&)>& defaults_for,
                  const Common& common, const KeyValues& flags) {
  KeyValues file;
  if (!common.config.empty()) file = read_key_values(common.config);
  std::string preset = common.preset;
  if (preset.empty()) preset = get_string(file, "preset", "desk");
  if (preset != "desk" && preset != "paper") {
    throw std::invalid_argument("unknown preset '" + preset + "'");
  }
  KeyValues kv = defaults_for(preset);
  for (const auto& [k, v] : file) {
    if (k == "command" || k == "preset") continue;
    if (!kv.count(k)) throw std::invalid_argument("unknown config key '" + k + "'");
    kv[k] = v;
  }
  for (const auto& [k, v] : flags) kv[k] = v;
  kv["preset"] = preset;
  return kv;
}

std::string need_path(const KeyValues& kv, const std::string& key) {
  std::string v = get_string(kv, key, "");
  if (v.empty()) throw std::invalid_argument("missing required --" + key);
  return v;
}

void write_snapshot(const fs::path& dir, const std::string& command, KeyValues kv) {
  fs::create_directories(dir);
  kv["command"] = command;
  write_key_values(dir / kSnapshotName, kv);
}

bool get_bool(const KeyValues& kv, const std::string& key) {
  const std::string v = get_string(kv, key, "0");
  if (v == "1" || v == "true") return true;
  if (v == "0" || v == "false") return false;
  throw std::invalid_argument("config key '" + key + "' must be 0 or 1");
}

std::uint64_t get_u64(const KeyValues& kv, const std::string& key) {
  const std::string v = get_string(kv, key, "0");
  try {
    std::size_t used = 0;
    const auto n = std::stoull(v, &used);
    if (used == v.size()) return n;
  } catch (const std::exception&) {
  }
  throw std::invalid_argument("config key '" + key + "' is not an unsigned integer: " + v);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

// ---------------------------------------------------------------------------
// phantom-gen

KeyValues phantom_defaults(const std::string& preset) {
  KeyValues kv = to_key_values(preset == "paper" ? PhantomSpec::paper() : PhantomSpec::desk());
  kv["out"] = "";
  kv["pullbacks"] = "18";
  return kv;
}

int cmd_phantom(const KeyValues& kv, int threads, std::ostream& out) {
  PhantomSpec spec;
  apply_key_values(spec, kv);
  spec.validate();
  const fs::path dir = need_path(kv, "out");
  const int n = get_int(kv, "pullbacks", 18);
  if (n < 1) throw std::invalid_argument("--pullbacks must be at least 1");
  StoredDataset data;
  data.spec = spec;
  data.seed = spec.seed;
  data.pullbacks = generate_dataset(spec, n, spec.seed, threads);
  write_dataset(dir, data);
  for (const auto& pb : data.pullbacks) {
    out << "pullback=" << pb.id << " label=" << to_string(pb.label)
        << " slices=" << pb.slices.size() << '\n';
  }
  out << "dataset=" << dir.string() << " pullbacks=" << n << " spec_hash=" << spec_hash(spec)
      << '\n';
  write_snapshot(dir, "phantom-gen", kv);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train / eval

KeyValues train_defaults(const std::string& preset) {
  KeyValues kv = to_key_values(preset == "paper" ? TrainConfig::paper(160) : TrainConfig::desk());
  kv["data"] = "";
  kv["out"] = "";
  kv["train_fraction"] = "0.7";
  kv["split_seed"] = "1";
  kv["permute_labels"] = "0";
  return kv;
}

struct LoadedSplit {
  PhantomSpec spec;
  DatasetSplit split;
};

LoadedSplit load_split(const fs::path& data_dir, double train_fraction, std::uint64_t seed) {
  StoredDataset data = read_dataset(data_dir);
  depth_trim_all(data.pullbacks, data.spec.depth_trim);
  LoadedSplit s;
  s.spec = data.spec;
  s.split = split_by_pullback_stratified(std::move(data.pullbacks), train_fraction, seed);
  return s;
}

template <typename T>
int train_typed(const KeyValues& kv, const TrainConfig& cfg, std::ostream& out) {
  const fs::path dir = need_path(kv, "out");
  const double fraction = get_double(kv, "train_fraction", 0.7);
  const std::uint64_t split_seed = get_u64(kv, "split_seed");
  const bool permute = get_bool(kv, "permute_labels");
  LoadedSplit ls = load_split(need_path(kv, "data"), fraction, split_seed);
  if (permute) permute_slice_labels(ls.split.train, derive_seed(cfg.seed, 0x5eed));

  auto model = build_model<T>(cfg.crop_size, cfg.channels_base, cfg.seed);
  out << "event=start train_pullbacks=" << ls.split.train.size()
      << " test_pullbacks=" << ls.split.test.size() << " parameters="
      << parameter_count(model.parameters()) << " precision=" << to_string(cfg.precision)
      << " input_mode=" << to_string(cfg.input_mode) << '\n';
  fs::create_directories(dir);
  std::ofstream history(dir / "history.txt");
  const TrainResult r = train(model, ls.split.train, ls.split.test, cfg, [&](const EpochMetrics& m) {
    std::ostringstream line;
    line << "epoch=" << m.epoch << " loss=" << fmt(m.loss) << " accuracy=" << fmt(m.heldout_accuracy);
    out << line.str() << '\n' << std::flush;
    history << line.str() << '\n';
  });
  KeyValues meta;
  meta["best_epoch"] = std::to_string(r.best_epoch);
  meta["best_accuracy"] = format_double(r.best_accuracy);
  meta["train_fraction"] = format_double(fraction);
  meta["split_seed"] = std::to_string(split_seed);
  meta["permute_labels"] = permute ? "1" : "0";
  meta["data_spec_hash"] = spec_hash(ls.spec);
  for (int c = 0; c < kNumClasses; ++c) {
    meta["class_weight." + std::string(to_string(label_from_index(c)))] =
        format_double(r.weights.w[static_cast<std::size_t>(c)]);
  }
  save_checkpoint(dir / "model.ckpt", model, cfg, meta);
  out << "event=done best_epoch=" << r.best_epoch << " accuracy=" << fmt(r.best_accuracy)
      << " checkpoint=" << (dir / "model.ckpt").string() << '\n';
  write_snapshot(dir, "train", kv);
  return kExitOk;
}

int cmd_train(const KeyValues& kv, std::ostream& out) {
  TrainConfig cfg;
  apply_key_values(cfg, kv);
  return cfg.precision == Precision::F64 ? train_typed<double>(kv, cfg, out)
                                         : train_typed<float>(kv, cfg, out);
}

KeyValues eval_defaults(const std::string&) {
  return {{"checkpoint", ""}, {"data", ""}, {"split", "test"}, {"out", ""}};
}

template <typename T>
Metrics eval_typed(const Checkpoint& ck, const std::vector<PullbackDataset>& data, int threads) {
  const auto model = load_model<T>(ck);
  return evaluate(model, data, ck.config.input_mode, threads);
}

int cmd_eval(const KeyValues& kv, int threads, std::ostream& out) {
  const Checkpoint ck = read_checkpoint(need_path(kv, "checkpoint"));
  const double fraction = get_double(ck.meta, "train_fraction", 0.7);
  const std::uint64_t split_seed = get_u64(ck.meta, "split_seed");
  LoadedSplit ls = load_split(need_path(kv, "data"), fraction, split_seed);
  const std::string which = get_string(kv, "split", "test");
  std::vector<PullbackDataset> data;
  if (which == "test") {
    data = std::move(ls.split.test);
  } else if (which == "train") {
    data = std::move(ls.split.train);
  } else if (which == "all") {
    data = std::move(ls.split.train);
    for (auto& pb : ls.split.test) data.push_back(std::move(pb));
  } else {
    throw std::invalid_argument("--split must be test, train or all");
  }
  const Metrics m = ck.dtype == "f64" ? eval_typed<double>(ck, data, threads)
                                      : eval_typed<float>(ck, data, threads);
  std::ostringstream report;
  report << "accuracy=" << fmt(m.accuracy) << " macro_auc=" << fmt(m.macro_auc)
         << " macro_f1=" << fmt(m.macro_f1) << " samples=" << m.samples << '\n';
  for (int t = 0; t < kNumClasses; ++t) {
    report << "confusion." << to_string(label_from_index(t)) << '=';
    for (int p = 0; p < kNumClasses; ++p) {
      report << (p ? "," : "") << m.confusion[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)];
    }
    report << '\n';
  }
  for (const auto& w : m.warnings) report << "warning=\"" << w << "\"\n";
  out << report.str();
  if (const std::string dir = get_string(kv, "out", ""); !dir.empty()) {
    fs::create_directories(dir);
    std::ofstream(fs::path(dir) / "metrics.txt") << report.str();
    write_snapshot(dir, "eval", kv);
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// saliency

KeyValues saliency_defaults(const std::string&) {
  return {{"checkpoint", ""}, {"in", ""},         {"out", ""},
          {"patch", "0"},     {"k", "3"},         {"mode", "auto"},
          {"border_fraction", "0.1"}, {"depth_trim", "-1"}};
}

// Slices to explain, with the stem used for their output files.
std::vector<std::pair<std::string, fs::path>> list_slices(const fs::path& in) {
  std::vector<std::pair<std::string, fs::path>> items;
  if (fs::is_regular_file(in)) {
    items.emplace_back(in.stem().string(), in);
  } else if (fs::is_directory(in)) {
    for (const auto& e : fs::directory_iterator(in)) {
      const std::string name = e.path().filename().string();
      if (e.is_regular_file() && name.rfind("slice_", 0) == 0 && e.path().extension() == ".png") {
        items.emplace_back(e.path().stem().string(), e.path());
      }
    }
    std::sort(items.begin(), items.end());
  } else {
    throw IoError("input " + in.string() + " does not exist");
  }
  if (items.empty()) throw IoError("no slice_*.png files in " + in.string());
  return items;
}

// Depth trim recorded by the dataset the input belongs to, 0 if unknown.
int dataset_trim(const fs::path& in) {
  fs::path dir = fs::is_directory(in) ? in : in.parent_path();
  for (int up = 0; up < 2 && !dir.empty(); ++up, dir = dir.parent_path()) {
    if (fs::exists(dir / "spec.txt")) {
      PhantomSpec spec;
      apply_key_values(spec, read_key_values(dir / "spec.txt"));
      return spec.depth_trim;
    }
  }
  return 0;
}

template <typename T>
int saliency_typed(const KeyValues& kv, const Checkpoint& ck, int threads, std::ostream& out) {
  const auto model = load_model<T>(ck);
  int patch = get_int(kv, "patch", 0);
  if (patch == 0) patch = model.input_size();
  if (patch != model.input_size()) {
    throw std::invalid_argument("--patch " + std::to_string(patch) +
                                " does not match the checkpoint input size " +
                                std::to_string(model.input_size()));
  }
  const int k = get_int(kv, "k", 3);
  if (k < 1) throw std::invalid_argument("--k must be at least 1");
  const double border = get_double(kv, "border_fraction", kDefaultBorderFraction);
  const std::string mode_text = get_string(kv, "mode", "auto");
  if (mode_text != "auto") parse_sign_mode(mode_text);
  const fs::path in = need_path(kv, "in");
  const fs::path dir = need_path(kv, "out");
  int trim = get_int(kv, "depth_trim", -1);
  if (trim < 0) trim = dataset_trim(in);

  const auto items = list_slices(in);
  std::vector<std::string> lines(items.size());
  const ModelScorer<T> scorer(model, patch);
  fs::create_directories(dir);
  parallel_for(static_cast<int>(items.size()), threads, [&](int i) {
    PolarImage img = read_slice_png(items[static_cast<std::size_t>(i)].second);
    if (trim > 0) img = depth_trim(img, trim);
    const SaliencyMap map = shifted_saliency(scorer, img, k, border);
    SaliencyExport ex;
    ex.rows = map.rows;
    ex.cols = map.cols;
    ex.source_class = map.source_class;
    ex.k_shifts = map.k_shifts;
    ex.patch_size = patch;
    ex.mode = mode_text == "auto" ? default_sign_mode(map.source_class) : parse_sign_mode(mode_text);
    ex.empty = map.empty;
    ex.values = sign_select(map.values, ex.mode);
    write_saliency(dir, items[static_cast<std::size_t>(i)].first, ex);
    std::ostringstream line;
    line << "slice=" << items[static_cast<std::size_t>(i)].first
         << " class=" << to_string(map.source_class) << " mode=" << to_string(ex.mode)
         << " empty=" << (map.empty ? 1 : 0);
    lines[static_cast<std::size_t>(i)] = line.str();
  });
  for (const auto& l : lines) out << l << '\n';
  out << "event=done slices=" << items.size() << " out=" << dir.string() << '\n';
  KeyValues snap = kv;
  snap["patch"] = std::to_string(patch);
  snap["depth_trim"] = std::to_string(trim);
  write_snapshot(dir, "saliency", snap);
  return kExitOk;
}

int cmd_saliency(const KeyValues& kv, int threads, std::ostream& out) {
  const Checkpoint ck = read_checkpoint(need_path(kv, "checkpoint"));
  return ck.dtype == "f64" ? saliency_typed<double>(kv, ck, threads, out)
                           : saliency_typed<float>(kv, ck, threads, out);
}

// ---------------------------------------------------------------------------
// render

KeyValues render_defaults(const std::string&) {
  return {{"saliency_dir", ""}, {"oct_dir", ""}, {"out", ""},
          {"size", "512"},      {"volume", "0"}, {"slice_spacing", "1"}};
}

int cmd_render(const KeyValues& kv, int threads, std::ostream& out) {
  const fs::path sal_dir = need_path(kv, "saliency_dir");
  const fs::path oct_dir = need_path(kv, "oct_dir");
  const fs::path dir = need_path(kv, "out");
  const int size = get_int(kv, "size", 512);
  if (size < 2 || size % 2) throw std::invalid_argument("--size must be even and at least 2");
  const bool volume = get_bool(kv, "volume");
  const double spacing = get_double(kv, "slice_spacing", 1.0);

  std::vector<std::string> stems;
  if (!fs::is_directory(sal_dir)) throw IoError("saliency dir " + sal_dir.string() + " missing");
  for (const auto& e : fs::directory_iterator(sal_dir)) {
    if (e.path().extension() == ".sal") stems.push_back(e.path().stem().string());
  }
  std::sort(stems.begin(), stems.end());
  if (stems.empty()) throw IoError("no .sal files in " + sal_dir.string());

  fs::create_directories(dir);
  std::vector<CartesianImage> sal_stack(stems.size()), oct_stack(stems.size());
  parallel_for(static_cast<int>(stems.size()), threads, [&](int i) {
    const std::string& stem = stems[static_cast<std::size_t>(i)];
    const SaliencyExport sal = read_saliency(sal_dir / (stem + ".sal"));
    const GrayImage oct = read_png_gray(oct_dir / (stem + ".png"));
    if (oct.rows != sal.rows || oct.cols < sal.cols) {
      throw IoError("OCT slice " + stem + " is " + std::to_string(oct.rows) + "x" +
                    std::to_string(oct.cols) + ", saliency is " + std::to_string(sal.rows) +
                    "x" + std::to_string(sal.cols));
    }
    // The saliency grid covers the depth-trimmed prefix of the slice.
    std::vector<float> polar(static_cast<std::size_t>(sal.rows) * sal.cols);
    for (int r = 0; r < sal.rows; ++r) {
      std::copy_n(oct.pixels.begin() + static_cast<std::ptrdiff_t>(r) * oct.cols, sal.cols,
                  polar.begin() + static_cast<std::ptrdiff_t>(r) * sal.cols);
    }
    const auto shown = normalize_for_display(sal.values);
    oct_stack[static_cast<std::size_t>(i)] = polar_to_cartesian(polar, sal.rows, sal.cols, size);
    sal_stack[static_cast<std::size_t>(i)] = polar_to_cartesian(shown, sal.rows, sal.cols, size);
    write_png(dir / ("overlay_" + stem + ".png"),
              overlay(oct_stack[static_cast<std::size_t>(i)], sal_stack[static_cast<std::size_t>(i)]));
  });
  for (const auto& s : stems) out << "overlay=" << (dir / ("overlay_" + s + ".png")).string() << '\n';
  if (volume) {
    const StackFiles sal_files = render_stack(sal_stack, dir / "volume_saliency", spacing);
    const StackFiles oct_files = render_stack(oct_stack, dir / "volume_oct", spacing);
    out << "volume=" << sal_files.volume.string() << " header=" << sal_files.header.string()
        << '\n';
    out << "volume=" << oct_files.volume.string() << " header=" << oct_files.header.string()
        << '\n';
  }
  out << "event=done slices=" << stems.size() << '\n';
  write_snapshot(dir, "render", kv);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// gradcheck

KeyValues gradcheck_defaults(const std::string&) {
  GradcheckOptions o;
  return {{"seed", std::to_string(o.seed)},
          {"instances", std::to_string(o.instances)},
          {"step", format_double(o.step)},
          {"tolerance", format_double(o.tolerance)},
          {"out", ""}};
}

int cmd_gradcheck(const KeyValues& kv, std::ostream& out) {
  GradcheckOptions o;
  o.seed = get_u64(kv, "seed");
  o.instances = get_int(kv, "instances", o.instances);
  o.step = get_double(kv, "step", o.step);
  o.tolerance = get_double(kv, "tolerance", o.tolerance);
  if (o.instances < 1 || !(o.step > 0) || !(o.tolerance > 0)) {
    throw std::invalid_argument("gradcheck needs instances >= 1 and positive step/tolerance");
  }
  const auto results = run_gradcheck(o, [&](const GradcheckResult& r) {
    char err[32];
    std::snprintf(err, sizeof err, "%.3e", r.max_error);
    out << "case=" << r.name << " instances=" << r.instances << " failures=" << r.failures
        << " max_rel_err=" << err << " skipped_coords=" << r.skipped_coords
        << " status=" << (r.ok() ? "pass" : "FAIL") << '\n'
        << std::flush;
  });
  const bool ok = std::all_of(results.begin(), results.end(), [](const auto& r) { return r.ok(); });
  out << "gradcheck=" << (ok ? "pass" : "fail") << '\n';
  if (const std::string dir = get_string(kv, "out", ""); !dir.empty()) write_snapshot(dir, "gradcheck", kv);
  return ok ? kExitOk : kExitNumerical;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Weakly supervised stent-strut saliency on polar OCT phantoms", "bvsviz"};
  app.require_subcommand(1, 1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  struct Sub {
    CLI::App* app;
    Common common;
    std::unique_ptr<Flags> flags;
  };
  std::deque<Sub> subs;
  auto make = [&](const std::string& name, const std::string& help, bool preset) -> Sub& {
    Sub& s = subs.emplace_back();
    s.app = app.add_subcommand(name, help);
    add_common(s.app, s.common, preset);
    s.flags = std::make_unique<Flags>(s.app);
    return s;
  };

  Sub& gen = make("phantom-gen", "Generate a synthetic pullback dataset", true);
  gen.app->add_option("--spec", gen.common.config, "Phantom spec file (key = value)");
  gen.flags->value("--out", "out", "Output dataset directory");
  gen.flags->value("--pullbacks", "pullbacks", "Number of pullbacks");
  gen.flags->value("--seed", "seed", "Generator seed");

  Sub& tr = make("train", "Train the slice classifier", true);
  tr.flags->value("--data", "data", "Dataset directory");
  tr.flags->value("--out", "out", "Output run directory");
  tr.flags->value("--epochs", "epochs", "Training epochs");
  tr.flags->value("--lr", "learning_rate", "Adam learning rate");
  tr.flags->value("--batch", "batch_size", "Batch size");
  tr.flags->value("--crop", "crop_size", "Square crop size");
  tr.flags->value("--channels", "channels_base", "Channels of the first stage");
  tr.flags->value("--seed", "seed", "Initialization and sampling seed");
  tr.flags->value("--precision", "precision", "32 or 64");
  tr.flags->value("--input-mode", "input_mode", "patch or full");
  tr.flags->value("--train-fraction", "train_fraction", "Share of pullbacks used for training");
  tr.flags->value("--split-seed", "split_seed", "Seed of the pullback split");
  tr.flags->toggle("--permute-labels", "permute_labels", "Train a label-permuted control");

  Sub& ev = make("eval", "Evaluate a checkpoint on a dataset split", false);
  ev.flags->value("--checkpoint", "checkpoint", "Checkpoint file");
  ev.flags->value("--data", "data", "Dataset directory");
  ev.flags->value("--split", "split", "test, train or all");
  ev.flags->value("--out", "out", "Optional directory for metrics.txt");

  Sub& sal = make("saliency", "Shift-averaged guided-backprop saliency maps", false);
  sal.flags->value("--checkpoint", "checkpoint", "Checkpoint file");
  sal.flags->value("--in", "in", "Slice PNG or pullback directory");
  sal.flags->value("--out", "out", "Output directory");
  sal.flags->value("--patch", "patch", "Patch size (must match the checkpoint)");
  sal.flags->value("--k", "k", "Number of angular shifts");
  sal.flags->value("--mode", "mode", "neg, pos or auto");
  sal.flags->value("--border-fraction", "border_fraction", "Patch border cut per side");
  sal.flags->value("--depth-trim", "depth_trim", "Columns to drop (-1: from the dataset)");

  Sub& ren = make("render", "Cartesian overlays and volume export", false);
  ren.flags->value("--saliency-dir", "saliency_dir", "Directory of .sal files");
  ren.flags->value("--oct-dir", "oct_dir", "Directory of matching slice PNGs");
  ren.flags->value("--out", "out", "Output directory");
  ren.flags->value("--size", "size", "Cartesian image side in pixels");
  ren.flags->toggle("--volume", "volume", "Also export raw float volumes");
  ren.flags->value("--slice-spacing", "slice_spacing", "Slice spacing in the volume header");

  Sub& gc = make("gradcheck", "Finite-difference check of every differentiable op", false);
  gc.flags->value("--seed", "seed", "Seed for the random instances");
  gc.flags->value("--instances", "instances", "Instances per case");
  gc.flags->value("--out", "out", "Optional directory for the config snapshot");

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    const CLI::App* where = &app;
    for (const Sub& s : subs) {
      if (s.app->parsed()) where = s.app;
    }
    err << where->help();
    return kExitUsage;
  }

  try {
    for (Sub& s : subs) {
      if (!s.app->parsed()) continue;
      const std::string name = s.app->get_name();
      const int threads = thread_count(s.common);
      const KeyValues given = s.flags->given();
      if (name == "phantom-gen") return cmd_phantom(resolve(phantom_defaults, s.common, given), threads, out);
      if (name == "train") return cmd_train(resolve(train_defaults, s.common, given), out);
      if (name == "eval") return cmd_eval(resolve(eval_defaults, s.common, given), threads, out);
      if (name == "saliency") return cmd_saliency(resolve(saliency_defaults, s.common, given), threads, out);
      if (name == "render") return cmd_render(resolve(render_defaults, s.common, given), threads, out);
      if (name == "gradcheck") return cmd_gradcheck(resolve(gradcheck_defaults, s.common, given), out);
    }
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  err << app.help();
  return kExitUsage;
}

}  // namespace bvsviz
