// rloss: command-line driver for regularized-loss training, mean-field
// proposals, mIoU evaluation and synthetic task generation.
//
// Exit codes: 0 success, 2 bad flags or configuration, 3 file or parse
// errors, 4 training divergence.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "manifest.hpp"
#include "rloss/rloss.hpp"

namespace fs = std::filesystem;

namespace rloss::cli {
namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitFile = 3;
constexpr int kExitDiverged = 4;

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

std::string fmt_ms(double ms) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", ms);
  return buf;
}

struct KernelFlags {
  double sigma_xy = 6.0;
  double sigma_rgb = 12.0;
  std::string features = "rgbxy";
  std::string backend = "exact";
};

void add_kernel_flags(CLI::App* sub, KernelFlags& k) {
  sub->add_option("--sigma-xy", k.sigma_xy, "Spatial bandwidth in pixels")->check(CLI::PositiveNumber);
  sub->add_option("--sigma-rgb", k.sigma_rgb, "Color bandwidth in intensity units")->check(CLI::PositiveNumber);
  sub->add_option("--features", k.features, "Kernel feature space")->check(CLI::IsMember({"rgbxy", "xy"}));
  sub->add_option("--backend", k.backend, "Affinity backend")->check(CLI::IsMember({"exact", "fast"}));
}

GaussianKernelSpec kernel_spec(const KernelFlags& k) {
  return {k.sigma_xy, k.sigma_rgb, k.features == "xy" ? FeatureSpace::xy : FeatureSpace::rgbxy};
}

AffinityOptions affinity_options(const KernelFlags& k, int threads) {
  AffinityOptions o;
  o.backend = k.backend == "fast" ? Backend::fast : Backend::exact;
  o.threads = threads;
  return o;
}

/// Resolved option values of a parsed subcommand, in declaration order.
void record_options(const CLI::App* sub, Manifest& m) {
  for (const CLI::Option* opt : sub->get_options()) {
    const std::string name = opt->get_single_name();
    if (name == "help" || name == "manifest" || name.empty()) continue;
    if (opt->get_expected_min() == 0) {
      m.add("flag." + name, opt->count() > 0 ? "true" : "false");
    } else if (opt->count() > 0) {
      for (const auto& r : opt->results()) m.add("arg." + name, r);
    } else if (const auto& d = opt->get_default_str(); !d.empty() && d != "{}") {
      m.add("arg." + name, d);
    }
  }
}

void record_inputs(const std::string& name, const std::vector<std::string>& paths, Manifest& m) {
  for (const auto& p : paths) {
    m.add("input." + name, p);
    m.add("input." + name + ".sha256", sha256_file(p));
  }
}

int infer_label_count(const std::vector<std::string>& labelings) {
  int k = 2;
  for (const auto& path : labelings) {
    const auto raw = read_pnm(path, "P5");
    for (auto v : raw.data)
      if (v != kUnlabeledByte) k = std::max(k, v + 1);
  }
  return k;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

/// Text grid: "N K" then N rows of K probabilities. Anything else is read as
/// a stack of K P5 files whose values are per-label scores in [0, 255].
SoftSegmentation read_unaries(const std::vector<std::string>& paths) {
  if (paths.size() == 1) {
    std::ifstream in(paths[0]);
    if (!in) throw IoError("cannot open " + paths[0]);
    std::size_t n = 0, k = 0;
    if (!(in >> n >> k) || n == 0 || k < 2)
      throw rloss::ParseError(rloss::ParseError::Kind::malformed_header, paths[0] + ": expected 'N K' header");
    Matrix m(n, k);
    for (double& v : m.data())
      if (!(in >> v))
        throw rloss::ParseError(rloss::ParseError::Kind::truncated_payload, paths[0] + ": too few probabilities");
    return SoftSegmentation(std::move(m));
  }
  std::vector<RawPnm> planes;
  for (const auto& p : paths) planes.push_back(read_pnm(p, "P5"));
  const std::size_t n = planes[0].data.size();
  for (const auto& pl : planes)
    if (pl.width != planes[0].width || pl.height != planes[0].height)
      throw DimensionError("unary planes differ in size");
  Matrix m(n, planes.size());
  for (std::size_t p = 0; p < n; ++p) {
    double z = 0.0;
    for (std::size_t k = 0; k < planes.size(); ++k) z += planes[k].data[p];
    for (std::size_t k = 0; k < planes.size(); ++k)
      m(p, k) = z > 0.0 ? planes[k].data[p] / z : 1.0 / static_cast<double>(planes.size());
  }
  return SoftSegmentation(std::move(m));
}

int run(const std::vector<std::string>& argv);

// train ---------------------------------------------------------------------

struct TrainFlags {
  std::string image, scribbles, gt, out_seg, out_trace, manifest;
  std::string mode = "direct";
  std::string loss = "kc";
  double lambda = 0.005;
  double gamma = 1000.0;
  int iters = 300;
  int warmup = 50;
  double lr = 0.1;
  std::uint64_t seed = 1;
  std::optional<double> scribble_ratio;
  int k = 0;
  int adm_inner = 20;
  int adm_sweeps = 5;
  bool paper_gradient = false;
  std::vector<std::string> unlabeled;
  KernelFlags kernel;
  std::optional<double> nc_sigma_xy, nc_sigma_rgb;
  std::string nc_features;
};

void add_train(CLI::App& app, TrainFlags& f) {
  auto* sub = app.add_subcommand("train", "Train a per-pixel model with a regularized loss");
  sub->add_option("--image", f.image, "Input P6 image")->required();
  sub->add_option("--scribbles", f.scribbles, "Scribble P5 labeling (255 = unlabeled)")->required();
  sub->add_option("--mode", f.mode, "direct or adm")->check(CLI::IsMember({"direct", "adm"}));
  sub->add_option("--loss", f.loss, "Regularizer")->check(CLI::IsMember({"ce", "crf", "nc", "kc"}));
  sub->add_option("--lambda", f.lambda, "Regularizer weight")->check(CLI::NonNegativeNumber);
  sub->add_option("--gamma", f.gamma, "Normalized-cut weight inside kernel cut")->check(CLI::NonNegativeNumber);
  add_kernel_flags(sub, f.kernel);
  sub->add_option("--nc-sigma-xy", f.nc_sigma_xy, "Spatial bandwidth of the normalized-cut affinity");
  sub->add_option("--nc-sigma-rgb", f.nc_sigma_rgb, "Color bandwidth of the normalized-cut affinity");
  sub->add_option("--nc-features", f.nc_features, "Feature space of the normalized-cut affinity")
      ->check(CLI::IsMember({"rgbxy", "xy"}));
  sub->add_option("--iters", f.iters, "Total descent iterations")->check(CLI::NonNegativeNumber);
  sub->add_option("--warmup", f.warmup, "Cross-entropy-only iterations")->check(CLI::NonNegativeNumber);
  sub->add_option("--lr", f.lr, "Learning rate")->check(CLI::PositiveNumber);
  sub->add_option("--seed", f.seed, "Initialization seed");
  sub->add_option("--scribble-ratio", f.scribble_ratio, "Shorten scribbles to this length ratio")
      ->check(CLI::Range(0.0, 1.0));
  sub->add_option("--k", f.k, "Label count (default: inferred from the labelings)");
  sub->add_option("--adm-inner", f.adm_inner, "Descent iterations per proposal (adm)")->check(CLI::PositiveNumber);
  sub->add_option("--adm-sweeps", f.adm_sweeps, "Mean-field sweeps per proposal (adm)")->check(CLI::PositiveNumber);
  sub->add_flag("--paper-gradient", f.paper_gradient, "Use the reduced CRF/NC gradient forms");
  sub->add_option("--unlabeled-image", f.unlabeled, "Extra unlabeled P6 image (regularizer only)")->default_str("");
  sub->add_option("--gt", f.gt, "Ground-truth P5 labeling for mIoU in the trace");
  sub->add_option("--out-seg", f.out_seg, "Output P5 segmentation")->required();
  sub->add_option("--out-trace", f.out_trace, "Output trace CSV")->required();
  sub->add_option("--manifest", f.manifest, "Run manifest path (default: <out-seg>.manifest)");
}

LossKind parse_loss(const std::string& s) {
  if (s == "ce") return LossKind::ce;
  if (s == "crf") return LossKind::crf;
  if (s == "nc") return LossKind::nc;
  return LossKind::kc;
}

int cmd_train(const CLI::App* sub, const TrainFlags& f, int threads) {
  const auto t0 = Clock::now();
  TrainConfig tc;
  tc.learning_rate = f.lr;
  tc.warmup_iters = f.warmup;
  tc.total_iters = f.iters;
  tc.loss_kind = parse_loss(f.loss);
  tc.loss.lambda = f.lambda;
  tc.loss.gamma = f.gamma;
  tc.loss.paper_gradient = f.paper_gradient;
  tc.seed = f.seed;
  tc.mode = f.mode == "adm" ? TrainMode::adm : TrainMode::direct;
  tc.adm_inner_iters = f.adm_inner;
  tc.adm_sweeps = f.adm_sweeps;
  tc.validate();
  if (tc.mode == TrainMode::adm && tc.loss_kind != LossKind::crf)
    throw std::invalid_argument("--mode adm requires --loss crf");
  if (tc.mode == TrainMode::adm && !f.unlabeled.empty())
    throw std::invalid_argument("--unlabeled-image is only supported with --mode direct");
  if (f.k == 1 || f.k < 0) throw std::invalid_argument("--k must be at least 2");
  KernelFlags nc = f.kernel;
  if (f.nc_sigma_xy) nc.sigma_xy = *f.nc_sigma_xy;
  if (f.nc_sigma_rgb) nc.sigma_rgb = *f.nc_sigma_rgb;
  if (!f.nc_features.empty()) nc.features = f.nc_features;
  kernel_spec(f.kernel).validate();
  kernel_spec(nc).validate();

  ImageGrid image = read_image(f.image);
  std::vector<std::string> labelings{f.scribbles};
  if (!f.gt.empty()) labelings.push_back(f.gt);
  const int k = f.k >= 2 ? f.k : infer_label_count(labelings);
  PartialLabeling scribbles = read_labeling(f.scribbles, k, image);
  if (f.scribble_ratio) scribbles = shorten_scribbles(scribbles, *f.scribble_ratio);
  std::optional<PartialLabeling> gt;
  if (!f.gt.empty()) {
    gt = read_labeling(f.gt, k, image);
    if (!gt->fully_labeled()) throw InvalidLabelError(f.gt + ": ground truth must label every pixel");
  }
  if (scribbles.labeled_count() == 0) throw InvalidLabelError(f.scribbles + ": no labeled pixels");
  const double load_ms = ms_since(t0);

  const auto t1 = Clock::now();
  const AffinityOperator w(image, kernel_spec(f.kernel), affinity_options(f.kernel, threads));
  std::optional<AffinityOperator> w_hat_own;
  const bool same_kernel = nc.sigma_xy == f.kernel.sigma_xy && nc.sigma_rgb == f.kernel.sigma_rgb &&
                           nc.features == f.kernel.features;
  if (!same_kernel) w_hat_own.emplace(image, kernel_spec(nc), affinity_options(nc, threads));
  const AffinityOperator& w_hat = same_kernel ? w : *w_hat_own;

  std::vector<AffinityOperator> extra_ops;
  extra_ops.reserve(2 * f.unlabeled.size());
  std::vector<UnlabeledImage> extra;
  for (const auto& path : f.unlabeled) {
    ImageGrid img = read_image(path);
    extra_ops.emplace_back(img, kernel_spec(f.kernel), affinity_options(f.kernel, threads));
    extra_ops.emplace_back(img, kernel_spec(nc), affinity_options(nc, threads));
  }
  for (std::size_t j = 0; j < f.unlabeled.size(); ++j) extra.push_back({&extra_ops[2 * j], &extra_ops[2 * j + 1]});

  const PartialLabeling* gt_ptr = gt ? &*gt : nullptr;
  TrainResult result = tc.mode == TrainMode::adm ? train_adm(scribbles, tc, w, gt_ptr)
                                                 : train_direct(scribbles, tc, w, w_hat, gt_ptr, extra);
  const double train_ms = ms_since(t1);

  const auto t2 = Clock::now();
  write_segmentation(result.field.forward(), image.width(), image.height(), f.out_seg);
  write_text(f.out_trace, result.trace.to_csv());
  const double write_ms = ms_since(t2);

  Manifest m;
  m.add("format", "rloss-manifest-1");
  m.add("command", "train");
  record_options(sub, m);
  m.add("threads", std::to_string(threads));
  m.add("seed", std::to_string(f.seed));
  m.add("label_count", std::to_string(k));
  record_inputs("image", {f.image}, m);
  record_inputs("scribbles", {f.scribbles}, m);
  if (!f.gt.empty()) record_inputs("gt", {f.gt}, m);
  record_inputs("unlabeled-image", f.unlabeled, m);
  m.add("output.seg", f.out_seg);
  m.add("output.seg.sha256", sha256_file(f.out_seg));
  m.add("output.trace", f.out_trace);
  m.add("output.trace.sha256", sha256_file(f.out_trace));
  m.add("timing.load_ms", fmt_ms(load_ms));
  m.add("timing.train_ms", fmt_ms(train_ms));
  m.add("timing.write_ms", fmt_ms(write_ms));
  m.write(f.manifest.empty() ? fs::path(f.out_seg + ".manifest") : fs::path(f.manifest));
  return kExitOk;
}

// meanfield -----------------------------------------------------------------

struct MeanFieldFlags {
  std::vector<std::string> unaries;
  std::string image, scribbles, out_seg, out_energy, manifest;
  double lambda = 0.005;
  int sweeps = 5;
  double tol = 1e-4;
  bool flip_sign = false;
  KernelFlags kernel;
};

void add_meanfield(CLI::App& app, MeanFieldFlags& f) {
  auto* sub = app.add_subcommand("meanfield", "Generate a dense-CRF proposal by mean-field inference");
  sub->add_option("--unaries", f.unaries, "Text grid 'N K' + N rows, or K stacked P5 planes")->required()->default_str("");
  sub->add_option("--image", f.image, "Input P6 image")->required();
  sub->add_option("--scribbles", f.scribbles, "Optional P5 scribbles clamped during inference");
  sub->add_option("--lambda", f.lambda, "Pairwise weight")->check(CLI::NonNegativeNumber);
  sub->add_option("--sweeps", f.sweeps, "Maximum number of sweeps")->check(CLI::PositiveNumber);
  sub->add_option("--tol", f.tol, "Relative energy change that stops the sweeps")->check(CLI::NonNegativeNumber);
  sub->add_flag("--flip-sign", f.flip_sign, "Diagnostic: negate the pairwise exponent");
  add_kernel_flags(sub, f.kernel);
  sub->add_option("--out-seg", f.out_seg, "Output P5 argmax of the proposal")->required();
  sub->add_option("--out-energy", f.out_energy, "Output CSV sweep,energy")->required();
  sub->add_option("--manifest", f.manifest, "Run manifest path (default: <out-seg>.manifest)");
}

int cmd_meanfield(const CLI::App* sub, const MeanFieldFlags& f, int threads) {
  const auto t0 = Clock::now();
  LossConfig cfg;
  cfg.lambda = f.lambda;
  cfg.validate();
  kernel_spec(f.kernel).validate();

  const ImageGrid image = read_image(f.image);
  const SoftSegmentation unaries = read_unaries(f.unaries);
  if (unaries.pixel_count() != image.pixel_count())
    throw DimensionError("unaries have " + std::to_string(unaries.pixel_count()) + " rows but the image has " +
                         std::to_string(image.pixel_count()) + " pixels");
  std::optional<PartialLabeling> scribbles;
  if (!f.scribbles.empty()) scribbles = read_labeling(f.scribbles, static_cast<int>(unaries.num_labels()), image);
  const double load_ms = ms_since(t0);

  const auto t1 = Clock::now();
  const AffinityOperator w(image, kernel_spec(f.kernel), affinity_options(f.kernel, threads));
  MeanFieldOptions opts;
  opts.max_sweeps = f.sweeps;
  opts.tol = f.tol;
  opts.flip_pairwise_sign = f.flip_sign;
  const auto result = generate_proposal(unaries, w, cfg, scribbles ? &*scribbles : nullptr, opts);
  const double run_ms = ms_since(t1);

  write_segmentation(result.proposal, image.width(), image.height(), f.out_seg);
  std::string csv = "sweep,energy\n";
  char buf[64];
  for (std::size_t i = 0; i < result.energy_trace.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.12g\n", i, result.energy_trace[i]);
    csv += buf;
  }
  write_text(f.out_energy, csv);

  Manifest m;
  m.add("format", "rloss-manifest-1");
  m.add("command", "meanfield");
  record_options(sub, m);
  m.add("threads", std::to_string(threads));
  record_inputs("image", {f.image}, m);
  record_inputs("unaries", f.unaries, m);
  if (!f.scribbles.empty()) record_inputs("scribbles", {f.scribbles}, m);
  m.add("output.seg", f.out_seg);
  m.add("output.seg.sha256", sha256_file(f.out_seg));
  m.add("output.energy", f.out_energy);
  m.add("output.energy.sha256", sha256_file(f.out_energy));
  m.add("result.sweeps", std::to_string(result.sweeps));
  m.add("result.non_monotone", result.non_monotone ? "true" : "false");
  m.add("timing.load_ms", fmt_ms(load_ms));
  m.add("timing.inference_ms", fmt_ms(run_ms));
  m.write(f.manifest.empty() ? fs::path(f.out_seg + ".manifest") : fs::path(f.manifest));
  return kExitOk;
}

// eval ----------------------------------------------------------------------

struct EvalFlags {
  std::string pred, gt, manifest;
  int k = 0;
};

void add_eval(CLI::App& app, EvalFlags& f) {
  auto* sub = app.add_subcommand("eval", "Mean IoU between two full labelings");
  sub->add_option("--pred", f.pred, "Predicted P5 labeling")->required();
  sub->add_option("--gt", f.gt, "Ground-truth P5 labeling")->required();
  sub->add_option("--k", f.k, "Label count (>= 2)")->required()->default_str("");
  sub->add_option("--manifest", f.manifest, "Run manifest path (default: <pred>.eval.manifest)");
}

int cmd_eval(const CLI::App* sub, const EvalFlags& f) {
  if (f.k < 2) throw std::invalid_argument("--k must be at least 2");
  const auto pred = read_labeling(f.pred, f.k);
  const auto gt = read_labeling(f.gt, f.k);
  const double value = miou(pred, gt);
  std::printf("miou=%.6f\n", value);
  {
    Manifest m;
    m.add("format", "rloss-manifest-1");
    m.add("command", "eval");
    record_options(sub, m);
    record_inputs("pred", {f.pred}, m);
    record_inputs("gt", {f.gt}, m);
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", value);
    m.add("result.miou", buf);
    m.write(f.manifest.empty() ? fs::path(f.pred + ".eval.manifest") : fs::path(f.manifest));
  }
  return kExitOk;
}

// synth ---------------------------------------------------------------------

struct SynthFlags {
  int blocks = 2;
  int size = 32;
  int noise = 0;
  std::uint64_t seed = 1;
  double scribble_length = 0.4;
  std::string prefix;
};

void add_synth(CLI::App& app, SynthFlags& f) {
  auto* sub = app.add_subcommand("synth", "Write a synthetic block image with scribbles and ground truth");
  sub->add_option("--blocks", f.blocks, "Number of color blocks (= labels)");
  sub->add_option("--size", f.size, "Image side length in pixels");
  sub->add_option("--noise", f.noise, "Uniform per-channel noise amplitude");
  sub->add_option("--seed", f.seed, "Random seed");
  sub->add_option("--scribble-length", f.scribble_length, "Stroke length as a fraction of the block side");
  sub->add_option("--out-prefix", f.prefix, "Output prefix")->required();
}

int cmd_synth(const CLI::App* sub, const SynthFlags& f) {
  const SyntheticSpec spec{f.blocks, f.size, f.noise, f.scribble_length};
  spec.validate();
  const auto task = make_synthetic(spec, f.seed);
  const std::string img = f.prefix + ".ppm", scr = f.prefix + "_scribbles.pgm", gt = f.prefix + "_gt.pgm";
  write_image(task.image, img);
  write_labeling(task.scribbles, scr);
  write_labeling(task.ground_truth, gt);
  Manifest m;
  m.add("format", "rloss-manifest-1");
  m.add("command", "synth");
  record_options(sub, m);
  m.add("output.image", img);
  m.add("output.image.sha256", sha256_file(img));
  m.add("output.scribbles", scr);
  m.add("output.scribbles.sha256", sha256_file(scr));
  m.add("output.gt", gt);
  m.add("output.gt.sha256", sha256_file(gt));
  m.write(f.prefix + ".manifest");
  return kExitOk;
}

// replay --------------------------------------------------------------------

int cmd_replay(const std::string& manifest_path) {
  const Manifest m = Manifest::read(manifest_path);
  const std::string command = m.get("command");
  if (command.empty()) throw IoError(manifest_path + ": no command recorded");

  // Inputs must be unchanged.
  std::string last_input;
  for (const auto& [key, value] : m.entries()) {
    if (key.rfind("input.", 0) != 0) continue;
    if (key.size() > 7 && key.substr(key.size() - 7) == ".sha256") {
      if (sha256_file(last_input) != value) throw IoError(last_input + ": input changed since the recorded run");
    } else {
      last_input = value;
    }
  }

  std::vector<std::string> args{"rloss", command};
  for (const auto& [key, value] : m.entries()) {
    if (key.rfind("arg.", 0) == 0) {
      const std::string name = key.substr(4);
      if (name == "threads") continue;
      args.push_back("--" + name);
      args.push_back(value);
    } else if (key.rfind("flag.", 0) == 0 && value == "true") {
      args.push_back("--" + key.substr(5));
    }
  }
  if (command == "train" || command == "meanfield") {
    args.push_back("--threads");
    args.push_back("1");
  }
  std::vector<std::pair<std::string, std::string>> expected;
  for (const auto& [key, value] : m.entries())
    if (key.rfind("output.", 0) == 0 && key.size() > 7 && key.substr(key.size() - 7) == ".sha256")
      expected.emplace_back(m.get(key.substr(0, key.size() - 7)), value);

  const int code = run(args);
  if (code != kExitOk) return code;
  int same = 0;
  for (const auto& [path, digest] : expected) {
    const bool ok = sha256_file(path) == digest;
    same += ok ? 1 : 0;
    if (!ok) std::cerr << "replay: " << path << " differs from the recorded run\n";
  }
  std::printf("replay: %d/%zu outputs identical\n", same, expected.size());
  return same == static_cast<int>(expected.size()) ? kExitOk : 1;
}

int run(const std::vector<std::string>& argv) {
  CLI::App app{"Regularized losses for weakly-supervised segmentation", "rloss"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);

  TrainFlags train;
  MeanFieldFlags mf;
  EvalFlags ev;
  SynthFlags synth;
  std::string replay_manifest;
  int threads = 1;

  add_train(app, train);
  add_meanfield(app, mf);
  add_eval(app, ev);
  add_synth(app, synth);
  auto* replay = app.add_subcommand("replay", "Re-run a command from its manifest (single-threaded)");
  replay->add_option("--manifest", replay_manifest, "Manifest written by a previous run")->required();
  for (auto* sub : {app.get_subcommand("train"), app.get_subcommand("meanfield")})
    sub->add_option("--threads", threads, "Worker threads for affinity products")->check(CLI::PositiveNumber);

  std::vector<std::string> rev(argv.rbegin(), argv.rend() - 1);
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    const CLI::App* failing = &app;
    for (const auto* sub : app.get_subcommands()) failing = sub;
    std::cerr << failing->help();
    return kExitUsage;
  }

  try {
    if (app.got_subcommand("train")) return cmd_train(app.get_subcommand("train"), train, threads);
    if (app.got_subcommand("meanfield")) return cmd_meanfield(app.get_subcommand("meanfield"), mf, threads);
    if (app.got_subcommand("eval")) return cmd_eval(app.get_subcommand("eval"), ev);
    if (app.got_subcommand("synth")) return cmd_synth(app.get_subcommand("synth"), synth);
    if (app.got_subcommand("replay")) return cmd_replay(replay_manifest);
  } catch (const TrainingDivergence& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitDiverged;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFile;
  }
  return kExitUsage;
}

}  // namespace
}  // namespace rloss::cli

int main(int argc, char** argv) {
  try {
    return rloss::cli::run(std::vector<std::string>(argv, argv + argc));
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
