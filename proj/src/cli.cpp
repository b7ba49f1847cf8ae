#include "extembed/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "extembed/checkpoint.hpp"
#include "extembed/chunking.hpp"
#include "extembed/position_ext.hpp"
#include "extembed/pose_tuner.hpp"
#include "extembed/retrieval_eval.hpp"
#include "extembed/synth_bench.hpp"
#include "extembed/task_io.hpp"
#include "extembed/trainer.hpp"

namespace extembed::cli {

namespace fs = std::filesystem;
using nlohmann::json;

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const DataError*>(&e) || dynamic_cast<const IoError*>(&e) ||
      dynamic_cast<const EvaluationError*>(&e)) {
    return kDataError;
  }
  if (dynamic_cast<const NumericError*>(&e)) return kNumericError;
  if (dynamic_cast<const Error*>(&e)) return kConfigError;
  return kNumericError;
}

RunConfig::RunConfig(json file) : file_(std::move(file)) {
  if (!file_.is_object()) throw ConfigError("config file must hold a JSON object");
}

RunConfig RunConfig::from_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file '" + path.string() + "'");
  try {
    RunConfig rc(json::parse(in));
    rc.record("config_file", path.string());
    return rc;
  } catch (const json::parse_error& e) {
    throw DataError(path.string() + ": malformed JSON: " + e.what());
  }
}

namespace {

// Option value plus whether it was given on the command line.
template <typename T>
struct Flag {
  T value{};
  CLI::Option* opt = nullptr;

  std::optional<T> get() const {
    if (opt && opt->count() > 0) return value;
    return std::nullopt;
  }
};

template <typename T>
void add(CLI::App* app, Flag<T>& f, const std::string& names, const std::string& help) {
  f.opt = app->add_option(names, f.value, help);
}

void add_switch(CLI::App* app, Flag<bool>& f, const std::string& names, const std::string& help) {
  f.opt = app->add_flag(names, f.value, help);
}

struct Common {
  std::string config_path;
  Flag<std::uint64_t> seed;
};

RunConfig load_config(const Common& c) {
  return c.config_path.empty() ? RunConfig() : RunConfig::from_file(c.config_path);
}

struct SpecFlags {
  Flag<std::string> strategy;
  Flag<long> original_context, target_context;
  Flag<double> ntk_lambda;
  Flag<long> group, window;
  Flag<bool> no_attention_scaling;

  void attach(CLI::App* app) {
    add(app, strategy, "--strategy", "NONE, PCW, GP, RP, PI, NTK, SE, TUNED_PI or TUNED_RP");
    add(app, original_context, "--L_o,--original-context", "original context window (default: the model's)");
    add(app, target_context, "--L_t,--target-context", "target context window (default: L_o)");
    add(app, ntk_lambda, "--ntk-lambda", "NTK base multiplier (default from s)");
    add(app, group, "--group", "self-extend group size g");
    add(app, window, "--window", "self-extend neighbour window w");
    add_switch(app, no_attention_scaling, "--no-attention-scaling", "disable length-dependent logit scaling");
  }

  ExtensionSpec resolve(RunConfig& rc, long default_lo) const {
    ExtensionSpec spec;
    spec.strategy = parse_strategy(rc.resolve<std::string>("strategy", strategy.get(), "NONE"));
    spec.original_context = rc.resolve<long>("original_context", original_context.get(), default_lo);
    spec.target_context = rc.resolve<long>("target_context", target_context.get(), spec.original_context);
    spec.ntk_lambda = rc.resolve_optional<double>("ntk_lambda", ntk_lambda.get());
    spec.group = rc.resolve_optional<long>("group", group.get());
    spec.window = rc.resolve_optional<long>("window", window.get());
    std::optional<bool> scaling;
    if (no_attention_scaling.get()) scaling = !no_attention_scaling.value;
    spec.attention_scaling = rc.resolve<bool>("attention_scaling", scaling, true);
    return resolve_spec(spec);
  }
};

void print_notes(const ExtensionSpec& spec, std::ostream& err) {
  for (const auto& n : spec.notes) err << "note: " << n << "\n";
}

// ---------------------------------------------------------------- init

struct InitCmd {
  Common common;
  Flag<std::string> mode;
  Flag<std::size_t> hidden, layers, heads, ffn_mult, vocab, original_context;
  Flag<double> rope_base;
  Flag<std::string> out;

  void attach(CLI::App* app) {
    add(app, mode, "--mode", "absolute or rotary");
    add(app, hidden, "--hidden", "hidden size");
    add(app, layers, "--layers", "number of layers");
    add(app, heads, "--heads", "attention heads");
    add(app, ffn_mult, "--ffn-multiplier", "feed-forward width multiplier");
    add(app, vocab, "--vocab", "hashed vocabulary size");
    add(app, original_context, "--L_o,--original-context", "context window");
    add(app, rope_base, "--rope-base", "rotary base");
    add(app, out, "--out", "checkpoint path");
  }

  int run(std::ostream& os, std::ostream&) const {
    RunConfig rc = load_config(common);
    ModelConfig c;
    c.position_mode = parse_position_mode(rc.resolve<std::string>("mode", mode.get(), "absolute"));
    c.hidden_size = rc.resolve<std::size_t>("hidden", hidden.get(), c.hidden_size);
    c.n_layers = rc.resolve<std::size_t>("layers", layers.get(), c.n_layers);
    c.n_heads = rc.resolve<std::size_t>("heads", heads.get(), c.n_heads);
    c.ffn_multiplier = rc.resolve<std::size_t>("ffn_multiplier", ffn_mult.get(), c.ffn_multiplier);
    c.vocab_size = rc.resolve<std::size_t>("vocab", vocab.get(), c.vocab_size);
    c.original_context = rc.resolve<std::size_t>("original_context", original_context.get(), c.original_context);
    c.rope_base = rc.resolve<double>("rope_base", rope_base.get(), c.rope_base);
    c.init_seed = rc.resolve<std::uint64_t>("seed", common.seed.get(), 42);
    const std::string path = rc.resolve<std::string>("out", out.get(), "model.ckpt");
    const Model model = init_model(c);
    save_checkpoint(model, path);
    os << "wrote " << path << " (" << to_string(c.position_mode) << ", d=" << c.hidden_size << ", layers=" << c.n_layers
       << ", L_o=" << c.original_context << ")\n";
    return kOk;
  }
};

// ---------------------------------------------------------------- gen

struct GenCmd {
  Common common;
  Flag<std::string> kind;
  Flag<std::vector<long>> grid;
  Flag<std::size_t> queries, candidates;
  Flag<std::string> essay, out;

  void attach(CLI::App* app) {
    add(app, kind, "--kind", "passkey or needle");
    add(app, grid, "--grid", "comma-separated bucket lengths in tokens");
    grid.opt->delimiter(',');
    add(app, queries, "--queries", "queries per bucket");
    add(app, candidates, "--candidates", "shared candidate documents per bucket");
    add(app, essay, "--essay", "plain-text essay for needle filler");
    add(app, out, "--out", "output directory");
  }

  int run(std::ostream& os, std::ostream&) const {
    RunConfig rc = load_config(common);
    SyntheticTaskConfig c;
    c.kind = parse_task_kind(rc.resolve<std::string>("kind", kind.get(), "passkey"));
    c.length_grid = rc.resolve<std::vector<long>>("grid", grid.get(), c.length_grid);
    c.queries_per_length = rc.resolve<std::size_t>("queries", queries.get(), c.queries_per_length);
    c.candidates_per_length = rc.resolve<std::size_t>("candidates", candidates.get(), c.candidates_per_length);
    c.seed = rc.resolve<std::uint64_t>("seed", common.seed.get(), 42);
    c.essay_path = rc.resolve<std::string>("essay", essay.get(), "");
    const std::string dir = rc.resolve<std::string>("out", out.get(), "tasks");
    const auto tasks = generate_tasks(c);
    const auto dirs = write_tasks(tasks, dir);
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      os << dirs[i].string() << "\t" << tasks[i].queries.size() << " queries\t" << tasks[i].documents.size()
         << " docs\n";
    }
    return kOk;
  }
};

// ---------------------------------------------------------------- triples

struct TriplesCmd {
  Common common;
  Flag<std::string> kind, essay, out;
  Flag<std::size_t> count, negatives;
  Flag<long> min_words, max_words;

  void attach(CLI::App* app) {
    add(app, kind, "--kind", "passkey or needle");
    add(app, count, "--count", "number of triples");
    add(app, negatives, "--negatives", "hard negatives per triple");
    add(app, min_words, "--min-words", "shortest document");
    add(app, max_words, "--max-words", "longest document");
    add(app, essay, "--essay", "plain-text essay for needle filler");
    add(app, out, "--out", "output JSONL path");
  }

  int run(std::ostream& os, std::ostream&) const {
    RunConfig rc = load_config(common);
    TrainingDataConfig c;
    c.kind = parse_task_kind(rc.resolve<std::string>("kind", kind.get(), "passkey"));
    c.count = rc.resolve<std::size_t>("count", count.get(), c.count);
    c.negatives = rc.resolve<std::size_t>("negatives", negatives.get(), c.negatives);
    c.min_words = rc.resolve<long>("min_words", min_words.get(), c.min_words);
    c.max_words = rc.resolve<long>("max_words", max_words.get(), c.max_words);
    c.seed = rc.resolve<std::uint64_t>("seed", common.seed.get(), 42);
    c.essay_path = rc.resolve<std::string>("essay", essay.get(), "");
    const std::string path = rc.resolve<std::string>("out", out.get(), "triples.jsonl");
    write_triples(gen_training_triples(c), path);
    os << "wrote " << c.count << " triples to " << path << "\n";
    return kOk;
  }
};

// ---------------------------------------------------------------- eval

bool is_task_dir(const fs::path& p) { return fs::exists(p / "queries.jsonl"); }

std::vector<RetrievalTask> load_tasks(const std::vector<std::string>& paths) {
  std::vector<RetrievalTask> tasks;
  for (const auto& p : paths) {
    if (is_task_dir(p)) {
      tasks.push_back(read_task(p));
      continue;
    }
    if (!fs::is_directory(p)) throw IoError("task path '" + p + "' is neither a task directory nor a directory of tasks");
    std::vector<fs::path> dirs;
    for (const auto& e : fs::directory_iterator(p)) {
      if (e.is_directory() && is_task_dir(e.path())) dirs.push_back(e.path());
    }
    if (dirs.empty()) throw IoError("no task directories under '" + p + "'");
    std::vector<RetrievalTask> found;
    for (const auto& d : dirs) found.push_back(read_task(d));
    std::sort(found.begin(), found.end(), [](const RetrievalTask& a, const RetrievalTask& b) {
      const int ka = a.kind ? static_cast<int>(*a.kind) : 2;
      const int kb = b.kind ? static_cast<int>(*b.kind) : 2;
      if (ka != kb) return ka < kb;
      if (a.bucket_length != b.bucket_length) return a.bucket_length < b.bucket_length;
      return a.name < b.name;
    });
    for (auto& t : found) tasks.push_back(std::move(t));
  }
  return tasks;
}

struct EvalCmd {
  Common common;
  SpecFlags spec;
  Flag<std::string> model, out;
  Flag<std::vector<std::string>> tasks;
  Flag<bool> truncate;

  void attach(CLI::App* app) {
    add(app, model, "--model", "checkpoint path");
    add(app, tasks, "--tasks", "task directories, or directories holding task directories");
    add(app, out, "--out", "report JSON path");
    add_switch(app, truncate, "--truncate", "cut over-long inputs to the strategy's limit instead of failing them");
    spec.attach(app);
  }

  int run(std::ostream& os, std::ostream& es) const {
    RunConfig rc = load_config(common);
    const std::string model_path = rc.resolve<std::string>("model", model.get(), "");
    if (model_path.empty()) throw ConfigError("eval needs --model");
    const auto task_paths = rc.resolve<std::vector<std::string>>("tasks", tasks.get(), {});
    if (task_paths.empty()) throw ConfigError("eval needs at least one --tasks path");
    const std::string out_path = rc.resolve<std::string>("out", out.get(), "report.json");
    const bool cut = rc.resolve<bool>("truncate", truncate.get(), false);
    const std::uint64_t seed = rc.resolve<std::uint64_t>("seed", common.seed.get(), 42);

    const Model m = load_checkpoint(model_path);
    const ExtensionSpec resolved = spec.resolve(rc, static_cast<long>(m.config.original_context));
    print_notes(resolved, es);
    const ModelEmbedder embedder(m, resolved, cut);

    const auto loaded = load_tasks(task_paths);
    for (const auto& t : loaded) {
      if (!t.kind) es << format_stats(t.name, task_stats(t)) << "\n";
    }
    BenchmarkOptions opts;
    opts.seed = seed;
    opts.config = rc.snapshot();
    const EvalReport report = run_benchmark(embedder, loaded, opts);

    std::ofstream f(out_path);
    if (!f) throw IoError("cannot open '" + out_path + "' for writing");
    f << report.to_json().dump(2) << "\n";
    if (!f) throw IoError("failed writing '" + out_path + "'");
    os << report.summary_table();
    return kOk;
  }
};

// ---------------------------------------------------------------- tune / train

void write_log(const TrainingLog& log, const fs::path& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
  f << "step\tepoch\tloss\tlr\n";
  char buf[128];
  for (const auto& s : log.steps) {
    std::snprintf(buf, sizeof buf, "%zu\t%zu\t%.10g\t%.6g\n", s.step, s.epoch, s.loss, s.learning_rate);
    f << buf;
  }
  if (log.diverged) f << "# diverged: " << log.message << "\n";
}

struct TrainFlags {
  Flag<std::string> model, data, out, log;
  Flag<double> lr, temperature;
  Flag<std::size_t> batch, epochs, warmup, negatives, max_steps;
  Flag<bool> in_batch;

  void attach(CLI::App* app) {
    add(app, model, "--model", "input checkpoint");
    add(app, data, "--data", "training triples (JSONL)");
    add(app, out, "--out", "output checkpoint");
    add(app, log, "--log", "training log path (default: <out>.log.tsv)");
    add(app, lr, "--learning-rate,--lr", "peak learning rate");
    add(app, batch, "--batch-size", "examples per step");
    add(app, epochs, "--epochs", "passes over the data");
    add(app, warmup, "--warmup-steps", "linear warmup steps");
    add(app, temperature, "--temperature", "InfoNCE temperature");
    add(app, negatives, "--negatives", "hard negatives per example");
    add(app, max_steps, "--max-steps", "stop after this many steps (0: no cap)");
    add_switch(app, in_batch, "--in-batch-negatives", "also contrast against other examples' positives");
  }
};

template <typename Cfg>
void resolve_train_fields(RunConfig& rc, const TrainFlags& f, Cfg& c) {
  c.learning_rate = rc.resolve<double>("learning_rate", f.lr.get(), c.learning_rate);
  c.batch_size = rc.resolve<std::size_t>("batch_size", f.batch.get(), c.batch_size);
  c.epochs = rc.resolve<std::size_t>("epochs", f.epochs.get(), c.epochs);
  c.warmup_steps = rc.resolve<std::size_t>("warmup_steps", f.warmup.get(), c.warmup_steps);
  c.temperature = rc.resolve<double>("temperature", f.temperature.get(), c.temperature);
  c.negatives = rc.resolve<std::size_t>("negatives", f.negatives.get(), c.negatives);
  c.max_steps = rc.resolve<std::size_t>("max_steps", f.max_steps.get(), c.max_steps);
  c.in_batch_negatives = rc.resolve<bool>("in_batch_negatives", f.in_batch.get(), c.in_batch_negatives);
}

struct Paths {
  std::string model, data, out, log;
};

Paths resolve_paths(RunConfig& rc, const TrainFlags& f) {
  Paths p;
  p.model = rc.resolve<std::string>("model", f.model.get(), "");
  p.data = rc.resolve<std::string>("data", f.data.get(), "");
  p.out = rc.resolve<std::string>("out", f.out.get(), "");
  if (p.model.empty() || p.data.empty() || p.out.empty()) throw ConfigError("--model, --data and --out are required");
  p.log = rc.resolve<std::string>("log", f.log.get(), p.out + ".log.tsv");
  return p;
}

int finish_training(const Model& model, const TrainingLog& log, const Paths& p, std::ostream& os, std::ostream& es) {
  save_checkpoint(model, p.out);
  write_log(log, p.log);
  if (!log.steps.empty()) {
    os << "steps=" << log.steps.size() << " first_loss=" << log.steps.front().loss
       << " last_loss=" << log.steps.back().loss << "\n";
  } else {
    os << "no training steps run\n";
  }
  os << "wrote " << p.out << " and " << p.log << "\n";
  if (log.diverged) {
    es << "error: training diverged: " << log.message << "\n";
    return kNumericError;
  }
  return kOk;
}

struct TuneCmd {
  Common common;
  TrainFlags train;
  Flag<std::string> mode;
  Flag<long> target_context;

  void attach(CLI::App* app) {
    train.attach(app);
    add(app, mode, "--mode", "PI_ANCHORED or RP_SUFFIX");
    add(app, target_context, "--L_t,--target-context", "target context window");
  }

  int run(std::ostream& os, std::ostream& es) const {
    RunConfig rc = load_config(common);
    const Paths p = resolve_paths(rc, train);
    const Model base = load_checkpoint(p.model);
    if (base.config.position_mode != PositionMode::Absolute) {
      throw ConfigError("further tuning requires absolute-position mode");
    }
    TuneConfig c;
    c.mode = parse_tune_mode(rc.resolve<std::string>("mode", mode.get(), "PI_ANCHORED"));
    c.original_context = static_cast<long>(base.config.original_context);
    rc.record("original_context", c.original_context);
    c.target_context = rc.resolve<long>("target_context", target_context.get(), 4 * c.original_context);
    c.seed = rc.resolve<std::uint64_t>("seed", common.seed.get(), 42);
    resolve_train_fields(rc, train, c);
    c.validate();

    const auto pairs = tokenize_triples(read_triples(p.data), Tokenizer(base.config.vocab_size),
                                        base.config.original_context);
    const TuneResult r = tune(base, pairs, c);
    os << "tuned " << to_string(c.mode) << " L_o=" << c.original_context << " L_t=" << c.target_context
       << " frozen_rows=" << r.model.weights.positions.frozen_count() << "/" << r.model.weights.positions.rows() << "\n";
    return finish_training(r.model, r.log, p, os, es);
  }
};

struct TrainCmd {
  Common common;
  TrainFlags train;
  Flag<bool> freeze_tokens;

  void attach(CLI::App* app) {
    train.attach(app);
    add_switch(app, freeze_tokens, "--freeze-token-embedding", "keep the token table at its initial values");
  }

  int run(std::ostream& os, std::ostream& es) const {
    RunConfig rc = load_config(common);
    const Paths p = resolve_paths(rc, train);
    Model model = load_checkpoint(p.model);
    if (model.weights.positions.layout != TableLayout::Original) {
      throw ConfigError("full training expects a model without a tuned position table");
    }
    TrainConfig c;
    c.seed = rc.resolve<std::uint64_t>("seed", common.seed.get(), 42);
    resolve_train_fields(rc, train, c);
    const auto pairs = tokenize_triples(read_triples(p.data), Tokenizer(model.config.vocab_size),
                                        model.config.original_context);
    TrainableSet trainable;
    trainable.token_embedding = !rc.resolve<bool>("freeze_token_embedding", freeze_tokens.get(), false);
    const TrainingLog log = train_contrastive(model, pairs, c, trainable, identity_mapper(model.config.position_mode));
    return finish_training(model, log, p, os, es);
  }
};

// ---------------------------------------------------------------- inspect

struct InspectCmd {
  Common common;
  SpecFlags spec;
  Flag<std::string> mode;
  Flag<long> length;
  Flag<std::size_t> head_dim;
  Flag<double> rope_base;

  void attach(CLI::App* app) {
    spec.attach(app);
    add(app, mode, "--mode", "absolute or rotary");
    add(app, length, "--length", "input length to map (default: L_t)");
    add(app, head_dim, "--head-dim", "rotary head dimension");
    add(app, rope_base, "--rope-base", "rotary base");
  }

  int run(std::ostream& os, std::ostream& es) const {
    RunConfig rc = load_config(common);
    const ExtensionSpec s = spec.resolve(rc, 512);
    print_notes(s, es);
    const PositionMode pm = parse_position_mode(rc.resolve<std::string>("mode", mode.get(), "rotary"));
    const long n = rc.resolve<long>("length", length.get(), s.max_input_length());
    const std::size_t dh = rc.resolve<std::size_t>("head_dim", head_dim.get(), 64);
    const double base = rc.resolve<double>("rope_base", rope_base.get(), 10000.0);

    os << "# " << spec_to_json(s).dump() << "\n";
    os << "# mode=" << to_string(pm) << " length=" << n << " attention_scale=" << attention_scale(n, s.original_context)
       << "\n";
    if (n < 1) throw ConfigError("length must be at least 1");

    if (s.strategy == Strategy::PCW) {
      os << "chunk\tstart\tend\n";
      const auto plan = plan_chunks(static_cast<std::size_t>(n), static_cast<std::size_t>(s.original_context));
      for (std::size_t i = 0; i < plan.size(); ++i) os << i << "\t" << plan[i].start << "\t" << plan[i].end << "\n";
      return kOk;
    }
    if (s.strategy == Strategy::NTK) {
      const auto orig = RoPEFrequencies::standard(dh, base);
      const auto ntk = ntk_frequencies(dh, base, *s.ntk_lambda);
      os << "j\ttheta\ttheta_ntk\n";
      char buf[96];
      for (std::size_t j = 0; j < orig.theta.size(); ++j) {
        std::snprintf(buf, sizeof buf, "%zu\t%.9g\t%.9g\n", j, orig.theta[j], ntk.theta[j]);
        os << buf;
      }
      return kOk;
    }
    if (s.strategy == Strategy::SE) {
      os << "delta\trelative_position\n";
      for (long d = 0; d < n; ++d) os << d << "\t" << self_extend_relpos(d, 0, *s.group, *s.window) << "\n";
      return kOk;
    }
    const PositionPlan plan = plan_positions(s, pm, static_cast<std::size_t>(n));
    os << "token\tposition\n";
    for (long i = 0; i < n; ++i) {
      const auto k = static_cast<std::size_t>(i);
      os << i << "\t";
      if (pm == PositionMode::Absolute) {
        os << plan.assignment.rows[k];
      } else {
        os << plan.assignment.phases[k];
      }
      os << "\n";
    }
    return kOk;
  }
};

// ---------------------------------------------------------------- ingest

struct IngestCmd {
  Common common;
  Flag<std::string> queries, corpus, qrels, name, out;

  void attach(CLI::App* app) {
    add(app, queries, "--queries", "queries.jsonl");
    add(app, corpus, "--corpus", "corpus.jsonl");
    add(app, qrels, "--qrels", "qrels.tsv");
    add(app, name, "--name", "dataset name");
    add(app, out, "--out", "write the validated task to this directory");
  }

  int run(std::ostream& os, std::ostream&) const {
    RunConfig rc = load_config(common);
    const auto q = rc.resolve<std::string>("queries", queries.get(), "");
    const auto c = rc.resolve<std::string>("corpus", corpus.get(), "");
    const auto r = rc.resolve<std::string>("qrels", qrels.get(), "");
    if (q.empty() || c.empty() || r.empty()) throw ConfigError("--queries, --corpus and --qrels are required");
    const RetrievalTask task = ingest_real_task(q, c, r, rc.resolve<std::string>("name", name.get(), ""));
    os << format_stats(task.name, task_stats(task)) << "\n";
    const auto dir = rc.resolve<std::string>("out", out.get(), "");
    if (!dir.empty()) {
      write_task(task, dir);
      os << "wrote " << dir << "\n";
    }
    return kOk;
  }
};

void attach_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config_path, "JSON config file; flags override its values");
  c.seed.opt = app->add_option("--seed", c.seed.value, "random seed (default 42)");
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Context-window extension toolkit for embedding models"};
  app.set_version_flag("--version", EXTEMBED_VERSION);
  app.require_subcommand(1);

  InitCmd init;
  GenCmd gen;
  TriplesCmd triples;
  EvalCmd eval;
  TuneCmd tune_cmd;
  TrainCmd train;
  InspectCmd inspect;
  IngestCmd ingest;

  auto* a_init = app.add_subcommand("init", "write a freshly initialised model checkpoint");
  auto* a_gen = app.add_subcommand("gen", "generate synthetic passkey or needle tasks");
  auto* a_triples = app.add_subcommand("triples", "generate short contrastive training triples");
  auto* a_eval = app.add_subcommand("eval", "evaluate a checkpoint under an extension strategy");
  auto* a_tune = app.add_subcommand("tune", "extend and tune the position table of an absolute-position model");
  auto* a_train = app.add_subcommand("train", "contrastively train every parameter of a model");
  auto* a_inspect = app.add_subcommand("inspect", "dump position maps or frequencies for a strategy");
  auto* a_ingest = app.add_subcommand("ingest", "validate a retrieval dataset and print its statistics");

  attach_common(a_init, init.common);
  attach_common(a_gen, gen.common);
  attach_common(a_triples, triples.common);
  attach_common(a_eval, eval.common);
  attach_common(a_tune, tune_cmd.common);
  attach_common(a_train, train.common);
  attach_common(a_inspect, inspect.common);
  attach_common(a_ingest, ingest.common);
  init.attach(a_init);
  gen.attach(a_gen);
  triples.attach(a_triples);
  eval.attach(a_eval);
  tune_cmd.attach(a_tune);
  train.attach(a_train);
  inspect.attach(a_inspect);
  ingest.attach(a_ingest);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (a_init->parsed()) return init.run(out, err);
    if (a_gen->parsed()) return gen.run(out, err);
    if (a_triples->parsed()) return triples.run(out, err);
    if (a_eval->parsed()) return eval.run(out, err);
    if (a_tune->parsed()) return tune_cmd.run(out, err);
    if (a_train->parsed()) return train.run(out, err);
    if (a_inspect->parsed()) return inspect.run(out, err);
    if (a_ingest->parsed()) return ingest.run(out, err);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return kConfigError;
}

}  // namespace extembed::cli
