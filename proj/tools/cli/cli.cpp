#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <sstream>

#include <CLI11.hpp>

#include "ict/anatomy.hpp"
#include "ict/consistency.hpp"
#include "ict/ensemble.hpp"
#include "ict/lens.hpp"
#include "ict/parallel.hpp"
#include "ict/probing.hpp"
#include "ict/toymodel.hpp"
#include "ict/trace.hpp"
#include "ict/tuning.hpp"
#include "svg.hpp"

namespace ict::cli {

namespace fs = std::filesystem;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string fmt(double v) {
  if (!std::isfinite(v)) return "NA";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f << content;
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

fs::path prepare_dir(const std::string& dir) {
  fs::create_directories(dir);
  return fs::path(dir);
}

std::string layer_header(std::size_t layers) {
  std::string h;
  for (std::size_t l = 0; l <= layers; ++l) h += ",layer_" + std::to_string(l);
  return h;
}

const std::string& label_text(const TraceSet& set, Label l) { return set.answer_space.labels[l]; }

Label final_label(const PathRecord& p, bool raw_final) {
  return raw_final ? p.answer : p.latent.labels.back();
}

std::vector<const PathRecord*> all_paths(const std::vector<QuestionPaths>& questions,
                                         std::vector<const QuestionPaths*>* owner = nullptr) {
  std::vector<const PathRecord*> out;
  for (const auto& q : questions) {
    const auto add = [&](const PathRecord& p) {
      out.push_back(&p);
      if (owner) owner->push_back(&q);
    };
    if (q.greedy) add(*q.greedy);
    for (const auto& p : q.paths) add(p);
  }
  return out;
}

// ---------------------------------------------------------------------------

int cmd_validate(const std::string& path, std::ostream& out, std::ostream& err) {
  const auto set = read_trace_file(path, ReadOptions{false});
  const auto violations = validate_trace(set);
  if (!violations.empty()) {
    for (const auto& v : violations) err << to_string(v) << "\n";
    err << path << ": " << violations.size() << " violation(s)\n";
    return kExitFailure;
  }
  out << path << ": valid, " << set.records.size() << " records, L=" << set.model_meta.layers << "\n";
  return kExitOk;
}

int cmd_lens(const std::string& path, const std::string& dir, bool raw, std::ostream& out) {
  const auto set = read_trace_file(path);
  const auto p_hat = positive_score_matrix(set);
  const auto thresholds = fit_thresholds(p_hat, fs::path(path).filename().string());
  const std::size_t L = set.model_meta.layers;
  const auto root = prepare_dir(dir);

  std::ostringstream scores, latent, th;
  scores << "example_id,path_group" << layer_header(L) << "\n";
  latent << "example_id,path_group" << layer_header(L) << "\n";
  for (std::size_t i = 0; i < set.records.size(); ++i) {
    const auto& rec = set.records[i];
    const auto labels = raw ? raw_prediction(p_hat[i]) : balanced_prediction(p_hat[i], thresholds);
    scores << rec.example_id << "," << rec.path_group;
    latent << rec.example_id << "," << rec.path_group;
    for (std::size_t l = 0; l <= L; ++l) {
      scores << "," << fmt(p_hat[i][l]);
      latent << "," << static_cast<int>(labels.labels[l]);
    }
    scores << "\n";
    latent << "\n";
  }
  th << "layer,threshold\n";
  for (std::size_t l = 0; l <= L; ++l) th << l << "," << fmt(thresholds.t[l]) << "\n";
  write_file(root / "p_hat.csv", scores.str());
  write_file(root / "latent.csv", latent.str());
  write_file(root / "thresholds.csv", th.str());
  out << "lens: " << set.records.size() << " records, " << L + 1 << " layers -> " << root.string() << "\n";
  return kExitOk;
}

int cmd_ic(const std::string& path, const std::string& dir, bool raw_final, const std::string& weights_path,
           std::ostream& out) {
  const auto set = read_trace_file(path);
  const auto questions = collect_questions(set, PathOptions{raw_final, nullptr});
  std::optional<LayerWeights> weights;
  if (!weights_path.empty()) weights = load_layer_weights(weights_path);
  const std::size_t L = set.model_meta.layers;
  const auto root = prepare_dir(dir);

  std::vector<const QuestionPaths*> owners;
  const auto paths = all_paths(questions, &owners);
  std::ostringstream table;
  table << "example_id,path_group,answer,gold,correct,ic" << (weights ? ",weighted_ic" : "") << "\n";
  std::vector<double> ic_correct, ic_incorrect;
  // agreement[l] over all / correct / incorrect paths
  std::vector<std::array<double, 3>> agree(L + 1, {0, 0, 0});
  std::array<double, 3> count{0, 0, 0};
  for (std::size_t i = 0; i < paths.size(); ++i) {
    const auto& p = *paths[i];
    const auto& gold = owners[i]->gold;
    table << p.path_id << "," << owners[i]->group << "," << label_text(set, p.answer) << ","
          << (gold ? label_text(set, *gold) : "") << "," << (gold ? (p.answer == *gold ? "1" : "0") : "NA") << ","
          << fmt(p.ic);
    if (weights) table << "," << fmt(weighted_consistency(p.agreement, *weights));
    table << "\n";

    const int bucket = gold ? (p.answer == *gold ? 1 : 2) : 0;
    if (bucket == 1) ic_correct.push_back(p.ic);
    if (bucket == 2) ic_incorrect.push_back(p.ic);
    const Label f = final_label(p, raw_final);
    count[0] += 1;
    if (bucket) count[bucket] += 1;
    for (std::size_t l = 0; l <= L; ++l) {
      const double hit = p.latent.labels[l] == f ? 1.0 : 0.0;
      agree[l][0] += hit;
      if (bucket) agree[l][bucket] += hit;
    }
  }

  std::ostringstream curve;
  curve << "layer,all,correct,incorrect\n";
  std::vector<Series> series{{"all", {}, {}}, {"correct", {}, {}}, {"incorrect", {}, {}}};
  for (std::size_t l = 0; l <= L; ++l) {
    curve << l;
    for (std::size_t b = 0; b < 3; ++b) {
      const double v = count[b] > 0 ? agree[l][b] / count[b] : NAN;
      curve << "," << fmt(v);
      series[b].x.push_back(static_cast<double>(l));
      series[b].y.push_back(v);
    }
    curve << "\n";
  }
  write_file(root / "ic.csv", table.str());
  write_file(root / "agreement_curve.csv", curve.str());
  write_file(root / "agreement_curve.svg",
             line_chart({"Agreement with the final prediction", "layer", "agreement", 0.0,
                         static_cast<double>(L), 0.0, 1.0},
                        series));

  const double mean_ic =
      paths.empty() ? NAN
                    : std::accumulate(paths.begin(), paths.end(), 0.0,
                                      [](double s, const PathRecord* p) { return s + p->ic; }) /
                          static_cast<double>(paths.size());
  out << "ic: " << paths.size() << " paths, mean IC " << fmt(mean_ic) << ", correct " << ic_correct.size()
      << ", incorrect " << ic_incorrect.size() << ", AUC " << fmt(separation_auc(ic_correct, ic_incorrect))
      << "\n";
  return kExitOk;
}

struct VoteArgs {
  std::string trace;
  std::string dir = ".";
  std::vector<std::uint64_t> seeds;
  std::size_t paths = 0;
  std::string weights, transfer;
  std::string delta_agg = "sum";
  bool raw_final = false;
};

int cmd_vote(const VoteArgs& a, std::ostream& out) {
  const auto set = read_trace_file(a.trace);
  const auto questions = collect_questions(set, PathOptions{a.raw_final, nullptr});
  std::optional<LayerWeights> tuned, transferred;
  if (!a.weights.empty()) tuned = load_layer_weights(a.weights);
  if (!a.transfer.empty()) transferred = load_layer_weights(a.transfer);

  EvaluationOptions opt;
  opt.paths_per_question = a.paths;
  opt.delta_aggregation = a.delta_agg == "mean"  ? DeltaAggregation::mean
                          : a.delta_agg == "max" ? DeltaAggregation::max
                                                 : DeltaAggregation::sum;
  opt.tuned = tuned ? &*tuned : nullptr;
  opt.transferred = transferred ? &*transferred : nullptr;

  std::vector<std::vector<MethodScore>> runs(a.seeds.size());
  parallel_for(a.seeds.size(), [&](std::size_t i) {
    EvaluationOptions o = opt;
    o.seed = a.seeds[i];
    runs[i] = evaluate_methods(questions, o);
  });

  const auto mean_std = [](const std::vector<double>& v) {
    const double n = static_cast<double>(v.size());
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return std::pair{mean, v.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0};
  };

  std::ostringstream csv;
  csv << "method,raw_mean,raw_std,calibrated_mean,calibrated_std,questions,seeds\n";
  out << std::left << std::setw(18) << "method" << std::setw(20) << "raw" << "calibrated\n";
  for (std::size_t m = 0; m < runs.front().size(); ++m) {
    std::vector<double> raw, cal;
    for (const auto& r : runs) {
      raw.push_back(r[m].raw_accuracy);
      cal.push_back(r[m].calibrated_accuracy);
    }
    const auto [rm, rs] = mean_std(raw);
    const auto [cm, cs] = mean_std(cal);
    const char* name = method_name(runs.front()[m].method);
    csv << name << "," << fmt(rm) << "," << fmt(rs) << "," << fmt(cm) << "," << fmt(cs) << ","
        << runs.front()[m].questions << "," << a.seeds.size() << "\n";
    out << std::setw(18) << name << std::setw(20) << (fmt(rm) + " +- " + fmt(rs)) << fmt(cm) << " +- " << fmt(cs)
        << "\n";
  }
  const auto root = prepare_dir(a.dir);
  write_file(root / "vote_table.csv", csv.str());
  return kExitOk;
}

struct TuneArgs {
  std::string trace;
  std::string dir = ".";
  TuneConfig cfg;
  bool raw_final = false;
};

int cmd_tune(TuneArgs a, std::ostream& out) {
  const auto set = read_trace_file(a.trace);
  const auto questions = collect_questions(set, PathOptions{a.raw_final, nullptr});
  const auto tq = tuning_questions(questions);
  if (tq.empty()) throw std::runtime_error("tune: no labelled questions with paths");
  if (a.cfg.source_dataset.empty()) a.cfg.source_dataset = fs::path(a.trace).filename().string();
  const auto weights = tune_weights(tq, a.cfg);
  const auto root = prepare_dir(a.dir);
  save_layer_weights(weights, (root / "layer_weights.json").string());
  out << "tune: " << std::min(tq.size(), a.cfg.n_heldout) << " questions, loss "
      << fmt(weights.training_meta.initial_loss) << " -> " << fmt(weights.training_meta.final_loss) << "\n";
  return kExitOk;
}

int cmd_probe(const std::string& path, const std::string& dir, std::uint64_t seed, bool per_cell,
              std::ostream& out) {
  const auto set = read_trace_file(path);
  ProbeGridOptions opt;
  opt.seed = seed;
  opt.shared_split = !per_cell;
  const auto grid = probe_grid(set, opt);
  const auto root = prepare_dir(dir);
  write_file(root / "probe_grid.csv", to_csv(grid));
  std::vector<std::string> cols;
  for (std::size_t l = 0; l < grid.layers; ++l) cols.push_back(std::to_string(l));
  write_file(root / "probe_grid.svg",
             heatmap("Probe validation accuracy (rows: steps, columns: layers)", grid.row_names, cols,
                     grid.accuracies, 0.5, 1.0));
  out << "probe: " << grid.rows << " rows x " << grid.layers << " layers -> " << root.string() << "\n";
  return kExitOk;
}

int cmd_anatomy(const std::string& path, const std::string& dir, const AnatomyOptions& opt,
                std::ostream& out) {
  const auto set = read_trace_file(path);
  const auto report = analyze_anatomy(set, opt);
  const auto root = prepare_dir(dir);
  write_file(root / "anatomy.json", to_json(report));

  const std::size_t L = report.attention.scores.size();
  std::ostringstream attn, values;
  attn << "layer,context,query,rationale,other\n";
  std::vector<Series> series;
  for (std::size_t s = 0; s < kSegmentCount; ++s) series.push_back({segment_name(static_cast<Segment>(s)), {}, {}});
  for (std::size_t l = 0; l < L; ++l) {
    attn << l + 1;
    for (std::size_t s = 0; s < kSegmentCount; ++s) {
      attn << "," << fmt(report.attention.scores[l][s]);
      series[s].x.push_back(static_cast<double>(l + 1));
      series[s].y.push_back(report.attention.scores[l][s]);
    }
    attn << "\n";
  }
  values << "layer,top_count\n";
  std::vector<std::string> cats;
  std::vector<double> counts;
  double max_count = 1.0;
  for (std::size_t l = 0; l < report.values.per_layer_top_counts.size(); ++l) {
    const auto c = report.values.per_layer_top_counts[l];
    values << l + 1 << "," << c << "\n";
    cats.push_back(std::to_string(l + 1));
    counts.push_back(static_cast<double>(c));
    max_count = std::max(max_count, static_cast<double>(c));
  }
  write_file(root / "anatomy_attention.csv", attn.str());
  write_file(root / "anatomy_values.csv", values.str());
  write_file(root / "anatomy.svg",
             hstack({line_chart({"Attention from the answer token", "layer", "attention", 1.0,
                                 static_cast<double>(std::max<std::size_t>(L, 2)), 0.0, 1.0},
                                series),
                     bar_chart({"Top value vectors per layer", "layer", "count", 0, 1, 0.0, max_count}, cats,
                               counts)}));
  out << "anatomy: attention peak at layer " << report.peak_attention_layer + 1 << ", value peak at layer "
      << report.peak_value_layer + 1 << ", probe CV accuracy " << fmt(report.probe.cv_accuracy) << "\n";
  return kExitOk;
}

struct CalibrationArgs {
  std::string trace;
  std::string dir = ".";
  std::size_t bins = 10;
  bool raw_final = false;
};

int cmd_calibration(const CalibrationArgs& a, std::ostream& out) {
  if (a.bins == 0) throw UsageError("--bins must be at least 1");
  const auto set = read_trace_file(a.trace);
  const auto questions = collect_questions(set, PathOptions{a.raw_final, nullptr});
  std::vector<const QuestionPaths*> owners;
  const auto paths = all_paths(questions, &owners);
  std::vector<double> n(a.bins, 0.0), hits(a.bins, 0.0), ic_sum(a.bins, 0.0);
  std::size_t used = 0;
  for (std::size_t i = 0; i < paths.size(); ++i) {
    if (!owners[i]->gold) continue;
    const double ic = paths[i]->ic;
    const auto b = std::min(a.bins - 1, static_cast<std::size_t>(ic * static_cast<double>(a.bins)));
    n[b] += 1;
    hits[b] += paths[i]->answer == *owners[i]->gold ? 1.0 : 0.0;
    ic_sum[b] += ic;
    ++used;
  }
  if (used == 0) throw std::runtime_error("report calibration: no labelled records");
  std::ostringstream csv;
  csv << "bin_lo,bin_hi,paths,accuracy,mean_ic\n";
  Series acc{"accuracy", {}, {}}, diag{"ideal", {0.0, 1.0}, {0.0, 1.0}};
  for (std::size_t b = 0; b < a.bins; ++b) {
    const double lo = static_cast<double>(b) / static_cast<double>(a.bins);
    const double hi = static_cast<double>(b + 1) / static_cast<double>(a.bins);
    const double accuracy = n[b] > 0 ? hits[b] / n[b] : NAN;
    csv << fmt(lo) << "," << fmt(hi) << "," << static_cast<std::size_t>(n[b]) << "," << fmt(accuracy) << ","
        << fmt(n[b] > 0 ? ic_sum[b] / n[b] : NAN) << "\n";
    acc.x.push_back((lo + hi) / 2);
    acc.y.push_back(accuracy);
  }
  const auto root = prepare_dir(a.dir);
  write_file(root / "calibration.csv", csv.str());
  write_file(root / "calibration.svg",
             line_chart({"Accuracy by internal consistency", "internal consistency", "accuracy", 0, 1, 0, 1},
                        {acc, diag}));
  out << "report calibration: " << used << " labelled paths in " << a.bins << " bins\n";
  return kExitOk;
}

struct GenArgs {
  std::string dir = ".";
  std::uint64_t seed = 0;
  std::size_t questions = 500;
  std::size_t max_flips = 3;
  std::size_t max_clauses = 0;
  std::string layout = "direct";
};

int cmd_toy_gen(const GenArgs& a, std::ostream& out) {
  const auto task = toy::gen_task(a.seed, a.questions, a.max_flips, a.max_clauses, toy::parse_layout(a.layout));
  const auto root = prepare_dir(a.dir);
  write_file(root / "task.json", toy::task_to_json(task));
  out << "toy gen: " << task.questions.size() << " questions -> " << (root / "task.json").string() << "\n";
  return kExitOk;
}

struct TrainArgs {
  std::string task;
  std::string dir = ".";
  toy::ToyConfig cfg;
  toy::TrainOptions opt;
  bool no_pre_norm = false;
  bool full_completion = false;
};

int cmd_toy_train(TrainArgs a, std::ostream& out) {
  const auto task = toy::task_from_json(read_file(a.task));
  a.cfg.pre_norm = !a.no_pre_norm;
  a.opt.answer_only = !a.full_completion;
  toy::TrainReport report;
  const auto params = toy::train_toy(task, a.cfg, a.opt, &report);
  const auto root = prepare_dir(a.dir);
  toy::save_toy_params(params, (root / "toy_params.toyp").string());
  std::ostringstream log;
  log << "step,loss\n";
  for (std::size_t i = 0; i < report.losses.size(); ++i) log << i << "," << fmt(report.losses[i]) << "\n";
  write_file(root / "train_log.csv", log.str());
  out << "toy train: " << a.opt.steps << " steps, final loss "
      << fmt(report.losses.empty() ? NAN : report.losses.back()) << ", train accuracy "
      << fmt(report.train_accuracy) << "\n";
  return kExitOk;
}

struct SampleArgs {
  std::string params;
  std::string task;
  std::string dir = ".";
  std::size_t questions = 0;
  toy::TraceOptions trace;
  bool no_greedy = false, no_attention = false, no_ffn = false, zero_blocks = false;
};

int cmd_toy_sample(SampleArgs a, std::ostream& out) {
  auto params = toy::load_toy_params(a.params);
  auto task = toy::task_from_json(read_file(a.task));
  if (a.questions && a.questions < task.questions.size()) task.questions.resize(a.questions);
  if (a.zero_blocks) params.zero_blocks();
  a.trace.include_greedy = !a.no_greedy;
  a.trace.attention = !a.no_attention;
  a.trace.ffn = !a.no_ffn;
  const auto set = toy::sample_trace(params, task, a.trace);
  const auto root = prepare_dir(a.dir);
  write_trace_file(set, (root / "paths.ict").string());
  out << "toy sample: " << set.records.size() << " records -> " << (root / "paths.ict").string() << "\n";
  return kExitOk;
}

void add_out(CLI::App* app, std::string& dir) {
  app->add_option("-o,--out", dir, "Output directory")->capture_default_str();
}

}  // namespace

double separation_auc(const std::vector<double>& positives, const std::vector<double>& negatives) {
  if (positives.empty() || negatives.empty()) return NAN;
  std::vector<double> neg = negatives;
  std::sort(neg.begin(), neg.end());
  double wins = 0.0;
  for (double p : positives) {
    const auto lo = std::lower_bound(neg.begin(), neg.end(), p);
    const auto hi = std::upper_bound(lo, neg.end(), p);
    wins += static_cast<double>(lo - neg.begin()) + 0.5 * static_cast<double>(hi - lo);
  }
  return wins / (static_cast<double>(positives.size()) * static_cast<double>(negatives.size()));
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  if (const char* env = std::getenv("ICTOOL_THREADS")) {
    char* end = nullptr;
    const unsigned long n = std::strtoul(env, &end, 10);
    if (end == env || *end != '\0') {
      err << "ICTOOL_THREADS must be a non-negative integer, got '" << env << "'\n";
      return kExitUsage;
    }
    set_max_threads(n);
  }

  CLI::App app{"Internal-consistency toolkit: logit-lens traces, path voting, probes and anatomy", "ictool"};
  app.require_subcommand(1);

  // trace validate
  auto* trace = app.add_subcommand("trace", "Trace file utilities");
  trace->require_subcommand(1);
  auto* validate = trace->add_subcommand("validate", "Check an ICT1 file and list every violation");
  std::string validate_path;
  validate->add_option("trace", validate_path, "ICT1 file")->required();

  // lens
  auto* lens = app.add_subcommand("lens", "Per-layer label scores, thresholds and latent predictions");
  std::string lens_path, lens_dir = ".";
  bool lens_raw = false;
  lens->add_option("trace", lens_path, "ICT1 file")->required();
  add_out(lens, lens_dir);
  lens->add_flag("--raw", lens_raw, "Latent predictions by two-label argmax instead of median balancing");

  // ic
  auto* ic = app.add_subcommand("ic", "Per-path internal consistency and per-layer agreement curves");
  std::string ic_path, ic_dir = ".", ic_weights;
  bool ic_raw_final = false;
  ic->add_option("trace", ic_path, "ICT1 file")->required();
  add_out(ic, ic_dir);
  ic->add_flag("--raw-final", ic_raw_final, "Compare against the raw final answer instead of the balanced one");
  ic->add_option("--weights", ic_weights, "Layer weights JSON; adds a weighted_ic column");

  // vote
  auto* vote = app.add_subcommand("vote", "Answer-selection table (Greedy, SC, SC+Delta, SC+IC)");
  VoteArgs va;
  va.seeds = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  vote->add_option("trace", va.trace, "ICT1 file")->required();
  add_out(vote, va.dir);
  vote->add_option("--seeds", va.seeds, "Comma-separated subsampling seeds")->delimiter(',')->capture_default_str();
  vote->add_option("--paths", va.paths, "Paths drawn per question per seed (0 keeps all)")->capture_default_str();
  vote->add_option("--weights", va.weights, "Tuned layer weights JSON (adds SC+IC (tune))");
  vote->add_option("--transfer-weights", va.transfer, "Layer weights from another dataset (adds SC+IC (transfer))");
  vote->add_option("--delta-agg", va.delta_agg, "SC+Delta aggregation")
      ->check(CLI::IsMember({"sum", "mean", "max"}))
      ->capture_default_str();
  vote->add_flag("--raw-final", va.raw_final, "Use the raw final answer as the reference prediction");

  // tune
  auto* tune = app.add_subcommand("tune", "Fit per-layer weights for SC+IC on held-out questions");
  TuneArgs ta;
  tune->add_option("trace", ta.trace, "ICT1 file with gold labels")->required();
  add_out(tune, ta.dir);
  tune->add_option("--lr", ta.cfg.lr, "Adam learning rate")->capture_default_str();
  tune->add_option("--iterations", ta.cfg.iterations, "Adam iterations")->capture_default_str();
  tune->add_option("--heldout", ta.cfg.n_heldout, "Questions used for tuning")->capture_default_str();
  tune->add_option("--seed", ta.cfg.seed, "Held-out selection seed")->capture_default_str();
  tune->add_option("--l2", ta.cfg.l2, "Pull toward uniform weights")->capture_default_str();
  tune->add_option("--source", ta.cfg.source_dataset, "Source dataset name recorded in the JSON");
  tune->add_flag("--raw-final", ta.raw_final, "Use the raw final answer as the reference prediction");

  // probe
  auto* probe = app.add_subcommand("probe", "Linear probe accuracy per (step, layer)");
  std::string probe_path, probe_dir = ".";
  std::uint64_t probe_seed = 0;
  bool probe_per_cell = false;
  probe->add_option("trace", probe_path, "ICT1 file with gold labels")->required();
  add_out(probe, probe_dir);
  probe->add_option("--seed", probe_seed, "Split seed")->capture_default_str();
  probe->add_flag("--per-cell-split", probe_per_cell, "Draw a fresh 80/20 split for every cell");

  // anatomy
  auto* anatomy = app.add_subcommand("anatomy", "Attention partition and FFN value-vector analysis");
  std::string anatomy_path, anatomy_dir = ".";
  AnatomyOptions ao;
  bool per_layer_top = false;
  anatomy->add_option("trace", anatomy_path, "ICT1 file with attention rows and FFN matrices")->required();
  add_out(anatomy, anatomy_dir);
  anatomy->add_flag("--per-layer-top", per_layer_top, "Take the top 0.1% within each layer");
  anatomy->add_option("--top-k", ao.top_k_tokens, "Tokens per vocabulary projection")->capture_default_str();
  anatomy->add_option("--seed", ao.seed, "Cross-validation fold seed")->capture_default_str();

  // toy
  auto* toy = app.add_subcommand("toy", "Synthetic coin-flip task and toy transformer");
  toy->require_subcommand(1);
  auto* gen = toy->add_subcommand("gen", "Generate a coin-flip task");
  GenArgs ga;
  add_out(gen, ga.dir);
  gen->add_option("--seed", ga.seed)->capture_default_str();
  gen->add_option("--questions", ga.questions)->capture_default_str();
  gen->add_option("--max-flips", ga.max_flips)->capture_default_str();
  gen->add_option("--max-clauses", ga.max_clauses, "0 means one clause per name")->capture_default_str();
  gen->add_option("--layout", ga.layout, "direct, rationale (state trace before the answer) or mixed (half each)")
      ->check(CLI::IsMember({"direct", "rationale", "mixed"}))
      ->capture_default_str();

  auto* train = toy->add_subcommand("train", "Train the toy transformer on a task");
  TrainArgs tr;
  train->add_option("--task", tr.task, "task.json")->required();
  add_out(train, tr.dir);
  train->add_option("--seed", tr.cfg.seed, "Initialization and batch-order seed")->capture_default_str();
  train->add_option("--steps", tr.opt.steps)->capture_default_str();
  train->add_option("--lr", tr.opt.lr)->capture_default_str();
  train->add_option("--batch", tr.opt.batch_size)->capture_default_str();
  train->add_option("--layers", tr.cfg.layers)->capture_default_str();
  train->add_option("--hidden", tr.cfg.hidden)->capture_default_str();
  train->add_option("--heads", tr.cfg.heads)->capture_default_str();
  train->add_option("--ffn", tr.cfg.ffn)->capture_default_str();
  train->add_option("--max-seq", tr.cfg.max_seq)->capture_default_str();
  train->add_flag("--no-pre-norm", tr.no_pre_norm, "Train the bare residual update without LayerNorm");
  train->add_flag("--full-completion", tr.full_completion, "Score every completion token, not only the answer");

  auto* sample = toy->add_subcommand("sample", "Sample reasoning paths and write an ICT1 trace");
  SampleArgs sa;
  sample->add_option("--params", sa.params, "toy_params.toyp")->required();
  sample->add_option("--task", sa.task, "task.json")->required();
  add_out(sample, sa.dir);
  sample->add_option("--questions", sa.questions, "Use only the first N questions (0 = all)")->capture_default_str();
  sample->add_option("--paths", sa.trace.paths_per_question)->capture_default_str();
  sample->add_option("--temperature", sa.trace.sampling.temperature)->capture_default_str();
  sample->add_option("--top-p", sa.trace.sampling.top_p)->capture_default_str();
  sample->add_option("--seed", sa.trace.sampling.seed)->capture_default_str();
  sample->add_flag("--no-greedy", sa.no_greedy, "Skip the greedy path");
  sample->add_flag("--no-attention", sa.no_attention, "Omit attention rows");
  sample->add_flag("--no-ffn", sa.no_ffn, "Omit FFN value matrices");
  sample->add_flag("--zero-blocks", sa.zero_blocks, "Zero every residual branch (control model)");

  // report calibration
  auto* report = app.add_subcommand("report", "Summary reports");
  report->require_subcommand(1);
  auto* calibration = report->add_subcommand("calibration", "Accuracy binned by internal consistency");
  CalibrationArgs ca;
  calibration->add_option("trace", ca.trace, "ICT1 file with gold labels")->required();
  add_out(calibration, ca.dir);
  calibration->add_option("--bins", ca.bins)->capture_default_str();
  calibration->add_flag("--raw-final", ca.raw_final, "Use the raw final answer as the reference prediction");

  std::vector<std::string> argv_storage{"ictool"};
  argv_storage.insert(argv_storage.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_storage) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*validate) return cmd_validate(validate_path, out, err);
    if (*lens) return cmd_lens(lens_path, lens_dir, lens_raw, out);
    if (*ic) return cmd_ic(ic_path, ic_dir, ic_raw_final, ic_weights, out);
    if (*vote) {
      if (va.seeds.empty()) throw UsageError("--seeds must list at least one seed");
      return cmd_vote(va, out);
    }
    if (*tune) return cmd_tune(ta, out);
    if (*probe) return cmd_probe(probe_path, probe_dir, probe_seed, probe_per_cell, out);
    if (*anatomy) {
      ao.scope = per_layer_top ? TopScope::per_layer : TopScope::global;
      return cmd_anatomy(anatomy_path, anatomy_dir, ao, out);
    }
    if (*gen) return cmd_toy_gen(ga, out);
    if (*train) return cmd_toy_train(tr, out);
    if (*sample) return cmd_toy_sample(sa, out);
    if (*calibration) return cmd_calibration(ca, out);
  } catch (const UsageError& e) {
    err << "ictool: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "ictool: " << e.what() << "\n";
    return kExitFailure;
  }
  err << "ictool: no command\n";
  return kExitUsage;
}

}  // namespace ict::cli
