#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "burstscan/burstscan.hpp"
#include "run_output.hpp"

namespace fs = std::filesystem;
using namespace burstscan;
using namespace burstscan::cli;

namespace {

struct Common {
  std::string input;
  std::string out_dir;
  std::int64_t min_daily_total = 1;
  unsigned threads = 1;
};

struct FitChoice {
  std::string penalty = "l0";
  std::optional<double> lambda;
  std::size_t folds = 10;
  std::size_t grid = 50;
};

struct Options {
  Common common;
  FitChoice fit;
  std::string tag;
  std::size_t delta = kDefaultDelta;
  std::size_t perms = 1000;
  std::optional<std::uint64_t> seed;
  std::optional<double> alpha;
  std::vector<double> thresholds;
  std::size_t top = 0;
  std::string baseline = "mean";
  std::string meanings;
  std::string spec;
  std::string manifest;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--input", c.input, "CSV with header date,tag,count,total")->required();
  cmd->add_option("--out-dir", c.out_dir, "Directory for tables, errors.log and manifest.txt")->required();
  cmd->add_option("--min-daily-total", c.min_daily_total, "Drop days whose total is below this")
      ->capture_default_str();
  cmd->add_option("--threads", c.threads, "Worker threads (0 = all cores)")->capture_default_str();
}

void add_fit_choice(CLI::App* cmd, FitChoice& f, bool allow_tf) {
  cmd->add_option("--penalty", f.penalty, allow_tf ? "l0, l1 or tf" : "l0 or l1")
      ->check(CLI::IsMember(allow_tf ? std::vector<std::string>{"l0", "l1", "tf"}
                                     : std::vector<std::string>{"l0", "l1"}))
      ->capture_default_str();
  cmd->add_option("--lambda", f.lambda, "Fixed regularization (default: cross-validated)");
  cmd->add_option("--folds,--cv", f.folds, "Cross-validation folds")->capture_default_str();
  cmd->add_option("--grid", f.grid, "Number of lambda values in the CV grid")->capture_default_str();
}

std::uint64_t resolve_seed(Options& o, std::vector<std::string>& argv) {
  if (!o.seed) {
    std::random_device rd;
    o.seed = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
    argv.push_back("--seed");
    argv.push_back(std::to_string(*o.seed));
  }
  return *o.seed;
}

std::map<std::string, StreamSeries> load(const Common& c, RunOutput& out) {
  std::ifstream in(c.input, std::ios::binary);
  if (!in) throw UsageError("cannot open input " + c.input);
  std::stringstream raw;
  raw << in.rdbuf();
  out.param("input", fs::absolute(c.input).string());
  out.param("input_sha256", sha256_hex(raw.str()));
  out.param("min_daily_total", std::to_string(c.min_daily_total));
  std::map<std::string, StreamSeries> streams;
  try {
    streams = read_streams(raw);
  } catch (const ParseError& e) {
    throw UsageError(c.input + ": " + e.what());
  } catch (const ValidationError& e) {
    throw UsageError(c.input + ": " + e.what());
  }
  if (streams.empty()) throw EmptyResult("input has no streams");
  std::map<std::string, StreamSeries> kept;
  PreprocessConfig pre{c.min_daily_total};
  for (const auto& [tag, s] : streams) {
    try {
      kept.emplace(tag, filter_low_traffic(s, pre));
    } catch (const EmptySeriesError& e) {
      out.error("stream", tag, e.what());
    }
  }
  if (kept.empty()) throw EmptyResult("no days left after filtering");
  return kept;
}

const StreamSeries& pick(const std::map<std::string, StreamSeries>& streams, const std::string& tag) {
  if (tag.empty()) {
    if (streams.size() == 1) return streams.begin()->second;
    throw UsageError("input has " + std::to_string(streams.size()) + " tags; choose one with --tag");
  }
  auto it = streams.find(tag);
  if (it == streams.end()) throw UsageError("unknown tag '" + tag + "'");
  return it->second;
}

struct ChosenFit {
  SegmentedFit fit;
  std::optional<CvResult> cv;
  std::optional<SegmentedFit> fit_1se;
};

ChosenFit fit_with_choice(const StreamSeries& s, const FitChoice& f, unsigned threads) {
  const auto kind = parse_penalty_kind(f.penalty);
  const auto penalty = PenaltySpec::for_series(kind, s);
  ChosenFit r;
  if (f.lambda) {
    r.fit = fit_segmentation(s, penalty, *f.lambda);
    return r;
  }
  CvConfig cfg;
  cfg.folds = f.folds;
  cfg.threads = threads;
  const auto grid = default_lambda_grid(s, penalty, cfg.solver, f.grid);
  r.cv = cross_validate(s, penalty, grid, cfg);
  r.fit = fit_segmentation(s, penalty, r.cv->lambda_cv);
  r.fit_1se = fit_segmentation(s, penalty, r.cv->lambda_1se);
  return r;
}

void record_fit_choice(RunOutput& out, const FitChoice& f, const ChosenFit& c) {
  out.param("penalty", f.penalty);
  if (f.lambda) {
    out.param("lambda", real(*f.lambda));
  } else {
    out.param("folds", std::to_string(f.folds));
    out.param("grid_size", std::to_string(f.grid));
    out.param("grid_top", real(c.cv->lambda_grid.front()));
    out.param("lambda_cv", real(c.cv->lambda_cv));
    out.param("lambda_1se", real(c.cv->lambda_1se));
  }
}

std::string signal_table(const StreamSeries& s, const SegmentedFit& fit) {
  Table t({"date", "tag", "count", "total", "p_raw", "p_hat", "theta_hat"});
  for (std::size_t i = 0; i < s.size(); ++i)
    t.row({format_date(s.date(i)), s.tag(), std::to_string(s[i].y), std::to_string(s[i].n),
           real(static_cast<double>(s[i].y) / static_cast<double>(s[i].n)), real(fit.p_hat[i]),
           real(fit.theta_hat[i])});
  return t.str();
}

std::string jump_table(const SegmentedFit& fit) {
  Table t({"gap", "left_date", "right_date", "left_level", "right_level", "magnitude"});
  for (const auto& j : extract_jumps(fit))
    t.row({std::to_string(j.index), format_date(j.left_date), format_date(j.right_date), real(j.left_level),
           real(j.right_level), real(j.magnitude)});
  return t.str();
}

std::string cv_table(const CvResult& cv) {
  Table t({"lambda", "cv_mean", "cv_se"});
  for (std::size_t i = 0; i < cv.lambda_grid.size(); ++i)
    t.row({real(cv.lambda_grid[i]), real(cv.cv_mean[i]), real(cv.cv_se[i])});
  return t.str();
}

// ---- commands ---------------------------------------------------------------

void cmd_screen(Options& o, RunOutput& out, std::vector<std::string>& argv) {
  const auto seed = resolve_seed(o, argv);
  const auto streams = load(o.common, out);
  out.param("delta", std::to_string(o.delta));
  out.param("perms", std::to_string(o.perms));
  out.param("seed", std::to_string(seed));
  const auto res = batch_screen(streams, o.delta, o.perms, seed, o.thresholds, o.common.threads);

  Table p({"tag", "statistic", "argmax_date", "p_h0", "p_value"});
  for (const auto& e : res.ranked)
    p.row({e.tag, real(e.result.statistic_T), format_date(streams.at(e.tag).date(e.result.argmax_t)),
           real(e.result.p_h0), real(e.result.p_value)});
  Table c({"threshold", "survivors"});
  for (const auto& [th, n] : res.survivors) c.row({real(th), std::to_string(n)});
  for (const auto& [tag, msg] : res.errors) out.error("stream", tag, msg);
  out.file("pvalues.csv", p.str());
  out.file("survivors.csv", c.str());
  if (res.ranked.empty()) throw EmptyResult("every stream failed the scan test");
}

void cmd_fit(Options& o, RunOutput& out, std::vector<std::string>&) {
  const auto streams = load(o.common, out);
  const auto& s = pick(streams, o.tag);
  out.param("tag", s.tag());
  const auto c = fit_with_choice(s, o.fit, o.common.threads);
  record_fit_choice(out, o.fit, c);
  out.param("iterations", std::to_string(c.fit.iterations));
  out.param("converged", c.fit.converged ? "true" : "false");
  out.file("signal.csv", signal_table(s, c.fit));
  out.file("jumps.csv", jump_table(c.fit));
  if (c.cv) {
    out.file("cv.csv", cv_table(*c.cv));
    out.file("signal_1se.csv", signal_table(s, *c.fit_1se));
    out.file("jumps_1se.csv", jump_table(*c.fit_1se));
  }
}

void cmd_jumps(Options& o, RunOutput& out, std::vector<std::string>& argv) {
  const auto seed = resolve_seed(o, argv);
  const auto streams = load(o.common, out);
  const auto& s = pick(streams, o.tag);
  const auto split_seed = derive_seed(seed, 0), null_seed = derive_seed(seed, 1);
  out.param("tag", s.tag());
  out.param("delta", std::to_string(o.delta));
  out.param("perms", std::to_string(o.perms));
  out.param("seed", std::to_string(seed));
  out.param("split_seed", std::to_string(split_seed));
  out.param("null_seed", std::to_string(null_seed));
  if (o.alpha) out.param("alpha", real(*o.alpha));

  const auto split = split_sample(s, split_seed);
  const auto c = fit_with_choice(split.train, o.fit, o.common.threads);
  record_fit_choice(out, o.fit, c);

  JumpScores scores;
  try {
    scores = jump_pvalues(split, c.fit, o.delta, o.perms, null_seed, kDefaultJumpTol, o.common.threads);
  } catch (const NullConstructionError& e) {
    out.error("null", s.tag(), e.what());
  }
  for (const auto& [jump, msg] : scores.errors) out.error("jump", format_date(jump.left_date), msg);

  Table t({"rank", "left_date", "right_date", "left_level", "right_level", "magnitude", "lrt", "p_value",
           "null_size"});
  for (std::size_t i = 0; i < scores.records.size(); ++i) {
    const auto& r = scores.records[i];
    t.row({std::to_string(i + 1), format_date(r.location.left_date), format_date(r.location.right_date),
           real(r.location.left_level), real(r.location.right_level), real(r.location.magnitude),
           real(r.lrt_stat), real(r.p_value), std::to_string(r.null_sample_size)});
  }
  out.file("jumps.csv", t.str());
  out.file("train_signal.csv", signal_table(split.train, c.fit));
  if (o.alpha) {
    const auto pruned = prune_and_refit(s, scores.records, *o.alpha);
    out.file("pruned_signal.csv", signal_table(s, pruned));
    out.file("pruned_jumps.csv", jump_table(pruned));
  }
  if (scores.records.empty()) throw EmptyResult("no scored jumps");
}

std::map<std::string, std::string> read_meanings(const std::string& path) {
  std::map<std::string, std::string> m;
  if (path.empty()) return m;
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open meanings file " + path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || (lineno == 1 && line.rfind("tag,", 0) == 0)) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw UsageError(path + ":" + std::to_string(lineno) + ": expected tag,meaning");
    m[std::string(detail::trim(line.substr(0, comma)))] = std::string(detail::trim(line.substr(comma + 1)));
  }
  return m;
}

void cmd_bursts(Options& o, RunOutput& out, std::vector<std::string>&) {
  const auto streams = load(o.common, out);
  const auto policy = parse_baseline_policy(o.baseline);
  const auto meanings = read_meanings(o.meanings);
  out.param("baseline", o.baseline);
  out.param("top", std::to_string(o.top));
  out.param("penalty", o.fit.penalty);
  if (o.fit.lambda)
    out.param("lambda", real(*o.fit.lambda));
  else {
    out.param("folds", std::to_string(o.fit.folds));
    out.param("grid_size", std::to_string(o.fit.grid));
  }

  std::vector<const StreamSeries*> items;
  for (const auto& [tag, s] : streams) items.push_back(&s);
  std::vector<std::optional<SegmentedFit>> fits(items.size());
  std::vector<double> p0(items.size());
  std::vector<std::string> errors(items.size());
  parallel_for(items.size(), o.common.threads, [&](std::size_t i) {
    try {
      p0[i] = baseline(*items[i], policy);
      fits[i] = fit_with_choice(*items[i], o.fit, 1).fit;
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });

  std::vector<BurstInput> inputs;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (fits[i])
      inputs.push_back({items[i], &*fits[i], p0[i]});
    else
      out.error("stream", items[i]->tag(), errors[i]);
  }
  auto ranked = rank_bursts(inputs);
  if (o.top > 0 && ranked.size() > o.top) ranked.resize(o.top);

  Table t({"rank", "tag", "meaning", "start", "end", "peak", "strength", "baseline"});
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    const auto& b = ranked[i];
    auto m = meanings.find(b.tag);
    t.row({std::to_string(i + 1), b.tag, m == meanings.end() ? "" : m->second, format_date(b.start),
           format_date(b.end), format_date(b.peak), real(b.strength), real(b.baseline_p0)});
  }
  out.file("bursts.csv", t.str());
  if (ranked.empty()) throw EmptyResult("no bursts above baseline");
}

void cmd_simulate(Options& o, RunOutput& out, std::vector<std::string>&) {
  std::ifstream in(o.spec);
  if (!in) throw UsageError("cannot open spec " + o.spec);
  PiecewiseSpec spec;
  try {
    spec = parse_piecewise_spec(in);
  } catch (const SpecError& e) {
    throw UsageError(o.spec + ": " + e.what());
  }
  if (o.seed) spec.seed = *o.seed;
  out.param("spec", fs::absolute(o.spec).string());
  out.param("seed", std::to_string(spec.seed));
  std::ostringstream text;
  write_piecewise_spec(text, spec);
  out.file("spec.txt", text.str());
  std::ostringstream csv;
  auto stream = gen_stream(spec);
  write_streams(csv, {{stream.tag(), stream}});
  out.file("stream.csv", csv.str());
}

int run(std::vector<std::string> argv);

int cmd_replay(const Options& o) {
  const auto m = read_manifest(o.manifest);
  auto argv = m.argv;
  bool replaced = false;
  for (std::size_t i = 0; i + 1 < argv.size(); ++i)
    if (argv[i] == "--out-dir") {
      argv[i + 1] = o.common.out_dir;
      replaced = true;
    }
  if (!replaced) throw UsageError("manifest argv has no --out-dir");
  if (fs::absolute(o.common.out_dir) == fs::absolute(fs::path(o.manifest).parent_path()))
    throw UsageError("replay --out-dir must differ from the manifest's directory");
  const int code = run(argv);
  if (code == 2) return 2;

  bool same = true;
  for (const auto& [name, digest] : m.outputs) {
    const auto path = fs::path(o.common.out_dir) / name;
    const bool ok = fs::exists(path) && sha256_hex(read_file(path)) == digest;
    std::cout << (ok ? "identical " : "DIFFERENT ") << name << '\n';
    same = same && ok;
  }
  return same ? 0 : 1;
}

int run(std::vector<std::string> argv) {
  CLI::App app{"burstscan: segmentation, scan tests, jump p-values and bursts for daily count streams"};
  app.set_version_flag("--version", BURSTSCAN_VERSION);
  app.require_subcommand(1);
  Options o;

  auto* screen = app.add_subcommand("screen", "Permutation scan test for every stream");
  add_common(screen, o.common);
  screen->add_option("--delta", o.delta, "Half-width of the scan window in points")->capture_default_str();
  screen->add_option("--perms", o.perms, "Permutation replicates")->capture_default_str();
  screen->add_option("--seed", o.seed, "Master seed (generated and recorded when omitted)");
  screen->add_option("--threshold", o.thresholds, "Significance level for survivor counts (repeatable)");

  auto* fit = app.add_subcommand("fit", "Penalized segmentation of one stream");
  add_common(fit, o.common);
  add_fit_choice(fit, o.fit, true);
  fit->add_option("--tag", o.tag, "Stream to fit (optional for single-stream input)");

  auto* jumps = app.add_subcommand("jumps", "Sample-splitting p-values for the jumps of one stream");
  add_common(jumps, o.common);
  add_fit_choice(jumps, o.fit, false);
  jumps->add_option("--tag", o.tag, "Stream to analyse (optional for single-stream input)");
  jumps->add_option("--delta", o.delta, "Points on each side of a jump")->capture_default_str();
  jumps->add_option("--perms", o.perms, "Null replicates")->capture_default_str();
  jumps->add_option("--seed", o.seed, "Master seed (generated and recorded when omitted)");
  jumps->add_option("--alpha", o.alpha, "Prune jumps with p > alpha and refit");

  auto* bursts = app.add_subcommand("bursts", "Rank above-baseline intervals across streams");
  add_common(bursts, o.common);
  add_fit_choice(bursts, o.fit, false);
  bursts->add_option("--baseline", o.baseline, "mean or median")
      ->check(CLI::IsMember({"mean", "median"}))
      ->capture_default_str();
  bursts->add_option("--top", o.top, "Keep the strongest N bursts (0 = all)")->capture_default_str();
  bursts->add_option("--meanings", o.meanings, "CSV tag,meaning used to label rows");

  auto* simulate = app.add_subcommand("simulate", "Generate a piecewise binomial stream from a spec file");
  simulate->add_option("--spec", o.spec, "Spec file")->required();
  simulate->add_option("--out-dir", o.common.out_dir, "Output directory")->required();
  simulate->add_option("--seed", o.seed, "Override the spec's seed");

  auto* replay = app.add_subcommand("replay", "Re-run a manifest and compare output digests");
  replay->add_option("--manifest", o.manifest, "manifest.txt of a previous run")->required();
  replay->add_option("--out-dir", o.common.out_dir, "Directory for the re-run")->required();

  std::vector<std::string> args(argv.rbegin(), argv.rend());
  try {
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  RunOutput out;
  std::string command;
  try {
    if (*replay) return cmd_replay(o);
    if (*screen) {
      command = "screen";
      cmd_screen(o, out, argv);
    } else if (*fit) {
      command = "fit";
      cmd_fit(o, out, argv);
    } else if (*jumps) {
      command = "jumps";
      cmd_jumps(o, out, argv);
    } else if (*bursts) {
      command = "bursts";
      cmd_bursts(o, out, argv);
    } else if (*simulate) {
      command = "simulate";
      cmd_simulate(o, out, argv);
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const EmptyResult& e) {
    std::cerr << "note: " << e.what() << '\n';
    out.error("run", command, e.what());
    out.commit(o.common.out_dir, argv, command);
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  out.commit(o.common.out_dir, argv, command);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  // absolute paths keep manifests replayable from any directory
  for (std::size_t i = 0; i + 1 < args.size(); ++i)
    if (args[i] == "--input" || args[i] == "--spec" || args[i] == "--meanings")
      args[i + 1] = fs::absolute(args[i + 1]).lexically_normal().string();
  try {
    return run(args);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
