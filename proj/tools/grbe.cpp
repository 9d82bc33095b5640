// grbe: command-line front end for the graph-rationalization library.
//
// Subcommands: gen-spmotif, train, eval, augment, diversity, gradcheck.
// Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric divergence.
// Every command is deterministic given its flags and --seed; reruns write
// byte-identical outputs. GRBE_THREADS caps internal parallelism (the
// numeric kernels are sequential, so any positive cap is honored as-is).

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "grbe/corpus_io.hpp"
#include "grbe/grad_check.hpp"
#include "grbe/metrics.hpp"
#include "grbe/model.hpp"
#include "grbe/spmotif.hpp"
#include "grbe/trace_rng.hpp"
#include "grbe/trainer.hpp"

namespace fs = std::filesystem;

namespace {

void write_json_file(const std::string& path, const nlohmann::json& j) {
  grbe::AtomicFileWriter w(path);
  w.stream() << j.dump(2) << '\n';
  w.commit();
}

void check_corpus_matches(const grbe::ModelConfig& mcfg, const grbe::Dataset& data) {
  if (data.feature_dim != mcfg.feature_dim)
    throw grbe::CorpusError("corpus feature dimension " + std::to_string(data.feature_dim) +
                            " does not match checkpoint feature dimension " + std::to_string(mcfg.feature_dim));
  if (data.num_classes > mcfg.classes)
    throw grbe::CorpusError("corpus labels need " + std::to_string(data.num_classes) +
                            " classes but the checkpoint has " + std::to_string(mcfg.classes));
}

// --------------------------------------------------------------------------
// gen-spmotif
// --------------------------------------------------------------------------

struct GenArgs {
  grbe::SpmotifConfig cfg;
  std::string out;
};

int run_gen(const GenArgs& a) {
  const grbe::SpmotifBuild build = grbe::generate_spmotif_full(a.cfg);
  grbe::write_jsonl(a.out, build.data.graphs);
  write_json_file(a.out + ".meta.json", grbe::spmotif_metadata(a.cfg, build));
  std::cout << "wrote " << build.data.graphs.size() << " graphs to " << a.out << " ("
            << build.data.train_idx.size() << " train, " << build.data.val_idx.size() << " val, "
            << build.data.test_idx.size() << " test)\n";
  return 0;
}

// --------------------------------------------------------------------------
// train
// --------------------------------------------------------------------------

struct TrainArgs {
  grbe::TrainConfig cfg;
  std::string data;
  std::string out;
  std::string config;       // optional flat key=value file
  std::string epoch_dumps;  // optional directory for per-epoch augmented corpora
  bool quiet = false;
};

/// A bad --config file is a usage problem, not a data problem.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string trimmed(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

/// Apply a flat key=value config file to the train options. Keys are the
/// long option names without the leading dashes; anything given on the
/// command line keeps its value. Processed by hand because the option parser
/// only consults config files attached to the top-level command, and the
/// file belongs to this subcommand.
void apply_train_config(const CLI::App& cmd, const std::string& path, TrainArgs& tr) {
  enum class Kind { real, integer, boolean, text };
  struct Entry {
    const char* opt;  // long option name, used both for lookup and count()
    Kind kind;
    void* target;
  };
  grbe::TrainConfig& cfg = tr.cfg;
  const Entry table[] = {
      {"--alpha", Kind::real, &cfg.alpha},
      {"--beta", Kind::real, &cfg.beta},
      {"--gamma", Kind::real, &cfg.gamma},
      {"--r-s", Kind::real, &cfg.r_s},
      {"--r-aug", Kind::real, &cfg.r_aug},
      {"--r-add", Kind::real, &cfg.r_add},
      {"--lambda", Kind::real, &cfg.lambda},
      {"--lambda-uniform", Kind::boolean, &cfg.lambda_uniform},
      {"--temperature", Kind::real, &cfg.temperature},
      {"--anneal-temperature", Kind::boolean, &cfg.anneal_temperature},
      {"--tau", Kind::real, &cfg.tau},
      {"--hidden", Kind::integer, &cfg.hidden},
      {"--layers", Kind::integer, &cfg.layers},
      {"--epochs", Kind::integer, &cfg.epochs},
      {"--batch-size", Kind::integer, &cfg.batch_size},
      {"--lr", Kind::real, &cfg.learning_rate},
      {"--learning-rate", Kind::real, &cfg.learning_rate},
      {"--full-graph", Kind::boolean, &cfg.full_graph},
      {"--batch-norm", Kind::boolean, &cfg.batch_norm},
      {"--epoch-dumps", Kind::text, &tr.epoch_dumps},
      {"--quiet", Kind::boolean, &tr.quiet},
  };

  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::string raw;
  long line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trimmed(raw);
    const std::string where = path + ":" + std::to_string(line_no);
    if (line.empty() || line.front() == '#' || line.front() == ';') continue;
    if (line.front() == '[') throw ConfigError(where + ": the config file is flat key=value, without sections");
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key=value");
    const std::string key = trimmed(line.substr(0, eq));
    const std::string value = trimmed(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(where + ": empty key");

    const Entry* entry = nullptr;
    for (const Entry& e : table)
      if (key == e.opt + 2) entry = &e;
    if (!entry) throw ConfigError(where + ": unknown or command-line-only key '" + key + "'");
    if (cmd.count(entry->opt) > 0) continue;  // flags override the file

    try {
      std::size_t used = 0;
      switch (entry->kind) {
        case Kind::real:
          *static_cast<double*>(entry->target) = std::stod(value, &used);
          if (used != value.size()) throw std::invalid_argument("trailing characters");
          break;
        case Kind::integer:
          *static_cast<int*>(entry->target) = std::stoi(value, &used);
          if (used != value.size()) throw std::invalid_argument("trailing characters");
          break;
        case Kind::boolean:
          if (value == "true" || value == "1" || value == "yes" || value == "on")
            *static_cast<bool*>(entry->target) = true;
          else if (value == "false" || value == "0" || value == "no" || value == "off")
            *static_cast<bool*>(entry->target) = false;
          else
            throw std::invalid_argument("expected a boolean");
          break;
        case Kind::text:
          *static_cast<std::string*>(entry->target) = value;
          break;
      }
    } catch (const std::exception& e) {
      throw ConfigError(where + ": bad value for '" + key + "': " + e.what());
    }
  }
}

void write_augmented_jsonl(const std::string& path, const std::vector<grbe::AugmentedGraph>& augmented) {
  std::vector<grbe::Graph> graphs;
  std::vector<nlohmann::json> extra;
  graphs.reserve(augmented.size());
  extra.reserve(augmented.size());
  for (const grbe::AugmentedGraph& ag : augmented) {
    graphs.push_back(ag.graph);
    extra.push_back(ag.provenance.to_json());
  }
  grbe::write_jsonl(path, graphs, &extra);
}

int run_train(const TrainArgs& a) {
  const grbe::Dataset data = grbe::load_jsonl(a.data);
  fs::create_directories(a.out);

  grbe::EpochHook hook;
  if (!a.epoch_dumps.empty()) {
    fs::create_directories(a.epoch_dumps);
    hook = [&](int epoch, const grbe::ModelConfig& mcfg, const grbe::ParamStore& params) {
      grbe::AugmentOptions opt;
      opt.r_aug = a.cfg.r_aug;
      opt.r_add = a.cfg.r_add;
      opt.lambda = a.cfg.lambda;
      opt.lambda_uniform = a.cfg.lambda_uniform;
      opt.temperature = grbe::effective_temperature(a.cfg, epoch);
      opt.seed = a.cfg.seed;
      opt.salt = static_cast<std::uint64_t>(epoch);
      const grbe::AugmentedCorpus corpus = grbe::make_augmented_corpus(mcfg, params, data, opt);
      char name[32];
      std::snprintf(name, sizeof(name), "epoch_%03d.jsonl", epoch);
      write_augmented_jsonl((fs::path(a.epoch_dumps) / name).string(), corpus.graphs);
    };
  }

  const grbe::TrainResult result = grbe::train(data, a.cfg, a.quiet ? nullptr : &std::cout, hook);

  grbe::save_checkpoint((fs::path(a.out) / "checkpoint.json").string(), result.model_cfg, result.params);
  grbe::write_history_csv((fs::path(a.out) / "history.csv").string(), result.history);
  nlohmann::json snapshot;
  snapshot["train"] = a.cfg.to_json();
  snapshot["data"] = a.data;
  write_json_file((fs::path(a.out) / "config.json").string(), snapshot);

  const grbe::EpochStats& last = result.history.back();
  std::cout << "done: " << a.cfg.epochs << " epochs, final train acc " << last.train_acc << ", val acc "
            << last.val_acc << "; outputs in " << a.out << "\n";
  return 0;
}

// --------------------------------------------------------------------------
// eval
// --------------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string split = "test";
  std::string out;
  bool full_graph = false;
};

int run_eval(const EvalArgs& a) {
  const auto [mcfg, params] = grbe::load_checkpoint(a.checkpoint);
  const grbe::Dataset data = grbe::load_jsonl(a.data);
  check_corpus_matches(mcfg, data);

  std::vector<int> indices;
  if (a.split == "all") {
    for (int i = 0; i < static_cast<int>(data.graphs.size()); ++i) indices.push_back(i);
  } else if (a.split == "train") {
    indices = data.train_idx;
  } else if (a.split == "val") {
    indices = data.val_idx;
  } else {
    indices = data.test_idx;
  }
  if (indices.empty()) throw grbe::CorpusError("no graphs in split '" + a.split + "' of " + a.data);

  const grbe::EvalOutcome out = grbe::evaluate(mcfg, params, data, indices, a.full_graph);

  nlohmann::json report;
  report["split"] = a.split;
  report["graphs"] = indices.size();
  report["accuracy"] = out.acc;
  report["fallback_count"] = out.fallback_count;
  if (out.auc) report["rationale_auc"] = *out.auc;
  std::vector<long> support(static_cast<std::size_t>(mcfg.classes), 0);
  std::vector<long> correct(static_cast<std::size_t>(mcfg.classes), 0);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const int label = data.graphs[static_cast<std::size_t>(indices[k])].label;
    ++support[static_cast<std::size_t>(label)];
    if (out.predictions[k] == label) ++correct[static_cast<std::size_t>(label)];
  }
  nlohmann::json per_class = nlohmann::json::array();
  for (int c = 0; c < mcfg.classes; ++c) {
    const long s = support[static_cast<std::size_t>(c)];
    per_class.push_back({{"label", c},
                         {"support", s},
                         {"correct", correct[static_cast<std::size_t>(c)]},
                         {"accuracy", s > 0 ? static_cast<double>(correct[static_cast<std::size_t>(c)]) /
                                                  static_cast<double>(s)
                                            : 0.0}});
  }
  report["per_class"] = std::move(per_class);

  std::cout << report.dump(2) << "\n";
  if (!a.out.empty()) write_json_file(a.out, report);
  return 0;
}

// --------------------------------------------------------------------------
// augment
// --------------------------------------------------------------------------

struct AugmentArgs {
  std::string checkpoint;
  std::string data;
  std::string out;
  std::string mode = "mixup";  // mixup | swap (swap: environment taken wholly from the partner)
  grbe::AugmentOptions opt;
};

int run_augment(const AugmentArgs& a) {
  const auto [mcfg, params] = grbe::load_checkpoint(a.checkpoint);
  grbe::Dataset data = grbe::load_jsonl(a.data);
  check_corpus_matches(mcfg, data);
  if (data.train_idx.empty()) {  // unsplit corpus: every graph is a donor
    for (grbe::Graph& g : data.graphs) g.split = "train";
    data.index_splits();
  }

  grbe::AugmentOptions opt = a.opt;
  if (a.mode == "swap") {
    opt.lambda = 0.0;  // donor i contributes only its rationale; the environment is the partner's
    opt.lambda_uniform = false;
  }

  const grbe::AugmentedCorpus corpus = grbe::make_augmented_corpus(mcfg, params, data, opt);
  write_augmented_jsonl(a.out, corpus.graphs);
  if (corpus.skipped > 0)
    std::cerr << "skipped " << corpus.skipped << " degenerate pair(s) of " << corpus.planned << " planned\n";
  std::cout << "wrote " << corpus.graphs.size() << " augmented graphs to " << a.out << "\n";
  return 0;
}

// --------------------------------------------------------------------------
// diversity
// --------------------------------------------------------------------------

struct DiversityArgs {
  std::string checkpoint;
  std::string data;
  std::string compare;
  std::string epoch_dumps;
  std::string out;
  int bins = 16;
  std::optional<double> bandwidth;
};

struct ProvCorpus {
  std::vector<grbe::Graph> graphs;
  std::vector<std::optional<nlohmann::json>> provenance;
};

ProvCorpus load_with_provenance(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw grbe::CorpusError("cannot open corpus: " + path);
  ProvCorpus out;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw grbe::CorpusError("line " + std::to_string(line_no) + ": invalid JSON: " + e.what());
    }
    out.graphs.push_back(grbe::detail::graph_from_json(j, line_no));
    if (j.contains("provenance"))
      out.provenance.emplace_back(j.at("provenance"));
    else
      out.provenance.emplace_back(std::nullopt);
  }
  if (out.graphs.empty()) throw grbe::CorpusError("empty corpus: " + path);
  return out;
}

/// Environment node set of one graph: augmented lines carry it in provenance
/// (the environment block is the merged-node suffix); plain graphs fall back
/// to the model's own eval-hard split. Empty result = no usable environment.
std::vector<int> environment_nodes(const grbe::ModelConfig& mcfg, const grbe::ParamStore& params,
                                   const grbe::Graph& g, const std::optional<nlohmann::json>& prov) {
  std::vector<int> env;
  if (prov && prov->contains("rationale_nodes")) {
    const int nr = prov->at("rationale_nodes").get<int>();
    for (int v = nr; v < g.node_count; ++v) env.push_back(v);
    return env;
  }
  const grbe::Inference inf = grbe::infer(mcfg, params, g);
  grbe::RngStream unused(0);
  grbe::ConcreteSampleConfig hard_cfg;
  hard_cfg.hard_eval = true;
  const grbe::SubgraphSplit split = grbe::sample_rationale(g, inf.mask, hard_cfg, unused);
  const std::vector<std::uint8_t> side = grbe::node_sides(split);
  for (int v = 0; v < g.node_count; ++v)
    if (!side[static_cast<std::size_t>(v)]) env.push_back(v);
  return env;
}

struct EnvClusterStats {
  int categories = 0;
  double bandwidth = 0.0;
  long used = 0;
  long skipped = 0;
};

EnvClusterStats cluster_environments(const grbe::ModelConfig& mcfg, const grbe::ParamStore& params,
                                     const ProvCorpus& corpus, std::optional<double> bandwidth) {
  std::vector<std::vector<double>> rows;
  long skipped = 0;
  for (std::size_t i = 0; i < corpus.graphs.size(); ++i) {
    const std::vector<int> env = environment_nodes(mcfg, params, corpus.graphs[i], corpus.provenance[i]);
    if (env.empty()) {
      ++skipped;
      continue;
    }
    rows.push_back(grbe::environment_representation(mcfg, params, corpus.graphs[i], env));
  }
  if (rows.empty()) throw grbe::CorpusError("no graph has a non-empty environment to cluster");
  grbe::Tensor emb(static_cast<int>(rows.size()), static_cast<int>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t k = 0; k < rows[i].size(); ++k) emb.at(static_cast<int>(i), static_cast<int>(k)) = rows[i][k];
  const grbe::MeanShiftResult ms = grbe::mean_shift_count(emb, bandwidth);
  return EnvClusterStats{ms.count, ms.bandwidth_used, static_cast<long>(rows.size()), skipped};
}

int run_diversity(const DiversityArgs& a) {
  const auto [mcfg, params] = grbe::load_checkpoint(a.checkpoint);
  const ProvCorpus corpus = load_with_provenance(a.data);

  nlohmann::json report;
  const EnvClusterStats base = cluster_environments(mcfg, params, corpus, a.bandwidth);
  report["data"] = {{"path", a.data},
                    {"graphs", corpus.graphs.size()},
                    {"environments_used", base.used},
                    {"environments_skipped", base.skipped},
                    {"env_categories", base.categories},
                    {"bandwidth", base.bandwidth}};

  if (!a.compare.empty()) {
    const ProvCorpus other = load_with_provenance(a.compare);
    const EnvClusterStats cmp = cluster_environments(mcfg, params, other, a.bandwidth);
    report["compare"] = {{"path", a.compare},
                         {"graphs", other.graphs.size()},
                         {"environments_used", cmp.used},
                         {"environments_skipped", cmp.skipped},
                         {"env_categories", cmp.categories},
                         {"bandwidth", cmp.bandwidth}};
    const grbe::DistanceReport dist = grbe::distribution_distance(corpus.graphs, other.graphs, a.bins);
    report["js_distance"] = dist.raw;
    report["js_distance_scaled"] = dist.scaled;
    report["bins"] = a.bins;
  }

  if (!a.epoch_dumps.empty()) {
    std::vector<fs::path> dumps;
    for (const auto& entry : fs::directory_iterator(a.epoch_dumps))
      if (entry.is_regular_file() && entry.path().extension() == ".jsonl") dumps.push_back(entry.path());
    std::sort(dumps.begin(), dumps.end());
    nlohmann::json series = nlohmann::json::array();
    for (const fs::path& p : dumps) {
      const ProvCorpus dump = load_with_provenance(p.string());
      const grbe::DistanceReport dist = grbe::distribution_distance(dump.graphs, corpus.graphs, a.bins);
      series.push_back({{"dump", p.filename().string()}, {"js_distance", dist.raw}});
    }
    report["epoch_series"] = std::move(series);
  }

  std::cout << report.dump(2) << "\n";
  if (!a.out.empty()) write_json_file(a.out, report);
  return 0;
}

// --------------------------------------------------------------------------
// gradcheck
// --------------------------------------------------------------------------

struct GradcheckArgs {
  std::uint64_t seed = 0;
  int hidden = 8;
  int layers = 2;
  double tolerance = 1e-4;
};

int run_gradcheck(const GradcheckArgs& a) {
  // Two generated graphs form the batch; every loss term is active.
  grbe::SpmotifConfig scfg;
  scfg.bias = 0.9;
  scfg.n_train = 2;
  scfg.n_val = 1;
  scfg.n_test = 1;
  scfg.seed = a.seed;
  const grbe::Dataset data = grbe::generate_spmotif(scfg);
  std::vector<const grbe::Graph*> batch;
  for (int idx : data.train_idx) batch.push_back(&data.graphs[static_cast<std::size_t>(idx)]);

  grbe::TrainConfig tcfg;
  tcfg.hidden = a.hidden;
  tcfg.layers = a.layers;
  tcfg.r_aug = 0.5;  // one augmented pair from the 2-graph batch
  tcfg.seed = a.seed;

  grbe::ModelConfig mcfg;
  mcfg.feature_dim = data.feature_dim;
  mcfg.hidden = tcfg.hidden;
  mcfg.layers = tcfg.layers;
  mcfg.classes = data.num_classes;
  const grbe::ParamStore params = grbe::init_model_params(mcfg, a.seed);

  // Record every random decision once, then replay it for each finite
  // difference so the loss is a deterministic function of the parameters.
  grbe::TraceRng recorder(grbe::RngStream::keyed(a.seed, {grbe::stream_key::batch, 0, 0}));
  {
    grbe::ad::Tape tape;
    const grbe::BoundModel model = grbe::bind_model(tape, mcfg, params);
    grbe::compute_losses(tape, model, batch, tcfg, tcfg.temperature, recorder);
  }
  const grbe::TraceRng::Trace trace = recorder.trace();

  const auto build = [&](grbe::ad::Tape& tape, const grbe::BoundParams& bound) {
    grbe::TraceRng replay(trace);
    const grbe::BoundModel model{&mcfg, bound};
    grbe::ad::Value total = grbe::compute_losses(tape, model, batch, tcfg, tcfg.temperature, replay).total;
    replay.finish();
    return total;
  };
  const grbe::GradCheckReport report = grbe::grad_check(params, build, 1e-5, 1500, a.seed);

  std::cout << "coordinates checked: " << report.coords_checked << "\n";
  std::cout << "max relative error:  " << report.max_rel_error << "  (tolerance " << a.tolerance << ")\n";
  std::cout << "per-parameter max relative error:\n";
  for (const auto& [name, err] : report.group_max) std::cout << "  " << name << "  " << err << "\n";
  if (!report.worst.empty()) {
    std::cout << "worst coordinates:\n";
    for (const grbe::GradCheckIssue& issue : report.worst)
      std::cout << "  " << issue.param << "[" << issue.index << "]  analytic " << issue.analytic << "  numeric "
                << issue.numeric << "  rel " << issue.rel_error << "\n";
  }
  const bool ok = report.passed(a.tolerance);
  std::cout << (ok ? "PASS" : "FAIL") << "\n";
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  if (const char* threads = std::getenv("GRBE_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(threads, &end, 10);
    if (end == threads || *end != '\0' || v < 1) {
      std::cerr << "error: GRBE_THREADS must be a positive integer, got '" << threads << "'\n";
      return 2;
    }
    // The numeric kernels run sequentially; any positive cap is satisfied.
  }

  CLI::App app{"graph rationalization with environment-diversity augmentation"};
  app.require_subcommand(1);

  GenArgs gen;
  CLI::App* cmd_gen = app.add_subcommand("gen-spmotif", "generate a Spurious-Motifs corpus");
  cmd_gen->add_option("--bias", gen.cfg.bias, "base/motif correlation on train and val")
      ->check(CLI::Range(1.0 / 3.0, 1.0))
      ->capture_default_str();
  cmd_gen->add_option("--n-train", gen.cfg.n_train, "training graphs")->check(CLI::PositiveNumber);
  cmd_gen->add_option("--n-val", gen.cfg.n_val, "validation graphs")->check(CLI::PositiveNumber);
  cmd_gen->add_option("--n-test", gen.cfg.n_test, "test graphs (bases drawn uniformly)")->check(CLI::PositiveNumber);
  cmd_gen->add_option("--motif-scale", gen.cfg.motif_scale, "cycle-motif size knob")->check(CLI::PositiveNumber);
  cmd_gen->add_option("--base-scale", gen.cfg.base_scale, "base-structure size knob")->check(CLI::PositiveNumber);
  cmd_gen->add_option("--seed", gen.cfg.seed, "generation seed")->required();
  cmd_gen->add_option("--out", gen.out, "output corpus path (.jsonl)")->required();

  TrainArgs tr;
  CLI::App* cmd_train = app.add_subcommand("train", "train a model on a corpus");
  cmd_train->add_option("--config", tr.config, "flat key=value file with these option names as keys");
  cmd_train->add_option("--data", tr.data, "training corpus (.jsonl)")->required();
  cmd_train->add_option("--out", tr.out, "output directory (checkpoint.json, history.csv, config.json)")->required();
  cmd_train->add_option("--alpha", tr.cfg.alpha, "augmented-prediction loss weight");
  cmd_train->add_option("--beta", tr.cfg.beta, "contrastive loss weight");
  cmd_train->add_option("--gamma", tr.cfg.gamma, "sparsity loss weight");
  cmd_train->add_option("--r-s", tr.cfg.r_s, "target rationale edge fraction");
  cmd_train->add_option("--r-aug", tr.cfg.r_aug, "augmented graphs per training graph");
  cmd_train->add_option("--r-add", tr.cfg.r_add, "bridge edges per donor edge");
  cmd_train->add_option("--lambda", tr.cfg.lambda, "environment mixing coefficient");
  cmd_train->add_flag("--lambda-uniform", tr.cfg.lambda_uniform, "draw lambda ~ U(0.3, 0.7) per pair");
  cmd_train->add_option("--temperature", tr.cfg.temperature, "concrete relaxation temperature");
  cmd_train->add_flag("--anneal-temperature", tr.cfg.anneal_temperature, "linear temperature schedule down to 0.1");
  cmd_train->add_option("--tau", tr.cfg.tau, "contrastive softmax temperature");
  cmd_train->add_option("--hidden", tr.cfg.hidden, "hidden width")->check(CLI::PositiveNumber);
  cmd_train->add_option("--layers", tr.cfg.layers, "encoder layers")->check(CLI::PositiveNumber);
  cmd_train->add_option("--epochs", tr.cfg.epochs, "training epochs")->check(CLI::PositiveNumber);
  cmd_train->add_option("--batch-size", tr.cfg.batch_size, "graphs per batch")->check(CLI::PositiveNumber);
  cmd_train->add_option("--lr,--learning-rate", tr.cfg.learning_rate, "Adam learning rate");
  cmd_train->add_option("--seed", tr.cfg.seed, "training seed")->required();
  cmd_train->add_flag("--full-graph", tr.cfg.full_graph, "ERM mode: whole-graph prediction, no rationale gating");
  cmd_train->add_flag("--batch-norm", tr.cfg.batch_norm, "batch-normalize encoder layers");
  cmd_train->add_option("--epoch-dumps", tr.epoch_dumps, "directory for per-epoch augmented-corpus dumps");
  cmd_train->add_flag("--quiet", tr.quiet, "suppress per-epoch progress lines");

  EvalArgs ev;
  CLI::App* cmd_eval = app.add_subcommand("eval", "evaluate a checkpoint on a corpus");
  cmd_eval->add_option("--checkpoint", ev.checkpoint, "checkpoint.json from train")->required();
  cmd_eval->add_option("--data", ev.data, "corpus (.jsonl)")->required();
  cmd_eval->add_option("--split", ev.split, "train|val|test|all")
      ->check(CLI::IsMember({"train", "val", "test", "all"}));
  cmd_eval->add_flag("--full-graph", ev.full_graph, "evaluate with whole-graph prediction (ERM checkpoints)");
  cmd_eval->add_option("--out", ev.out, "also write the JSON report here");

  AugmentArgs ag;
  CLI::App* cmd_augment = app.add_subcommand("augment", "synthesize an augmented corpus from a checkpoint");
  cmd_augment->add_option("--checkpoint", ag.checkpoint, "checkpoint.json from train")->required();
  cmd_augment->add_option("--data", ag.data, "donor corpus (.jsonl)")->required();
  cmd_augment->add_option("--out", ag.out, "output corpus path (.jsonl)")->required();
  cmd_augment->add_option("--r-aug", ag.opt.r_aug, "augmented graphs per donor graph");
  cmd_augment->add_option("--r-add", ag.opt.r_add, "bridge edges per donor edge");
  cmd_augment->add_option("--lambda", ag.opt.lambda, "environment mixing coefficient")
      ->check(CLI::Range(0.0, 1.0));
  cmd_augment->add_flag("--lambda-uniform", ag.opt.lambda_uniform, "draw lambda ~ U(0.3, 0.7) per pair");
  cmd_augment->add_option("--temperature", ag.opt.temperature, "concrete relaxation temperature");
  cmd_augment->add_option("--mode", ag.mode, "mixup (default) or swap (whole-environment exchange)")
      ->check(CLI::IsMember({"mixup", "swap"}));
  cmd_augment->add_option("--seed", ag.opt.seed, "sampling seed")->required();

  DiversityArgs dv;
  CLI::App* cmd_diversity = app.add_subcommand("diversity", "environment-category and distance report");
  cmd_diversity->add_option("--checkpoint", dv.checkpoint, "checkpoint.json from train")->required();
  cmd_diversity->add_option("--data", dv.data, "corpus (.jsonl), plain or augmented")->required();
  cmd_diversity->add_option("--compare", dv.compare, "second corpus for distance and category comparison");
  cmd_diversity->add_option("--epoch-dumps", dv.epoch_dumps, "directory of per-epoch dumps for a distance series");
  cmd_diversity->add_option("--bins", dv.bins, "histogram bins per descriptor dimension")->check(CLI::PositiveNumber);
  double bandwidth_value = 0.0;
  CLI::Option* bw_opt = cmd_diversity->add_option("--bandwidth", bandwidth_value,
                                                  "mean-shift bandwidth (omit for the auto quantile rule)");
  bw_opt->check(CLI::PositiveNumber);
  cmd_diversity->add_option("--out", dv.out, "also write the JSON report here");

  GradcheckArgs gc;
  CLI::App* cmd_gradcheck = app.add_subcommand("gradcheck", "finite-difference check of the full training loss");
  cmd_gradcheck->add_option("--seed", gc.seed, "fixture seed")->required();
  cmd_gradcheck->add_option("--hidden", gc.hidden, "hidden width of the fixture model")->check(CLI::PositiveNumber);
  cmd_gradcheck->add_option("--layers", gc.layers, "encoder layers of the fixture model")->check(CLI::PositiveNumber);
  cmd_gradcheck->add_option("--tolerance", gc.tolerance, "max relative error allowed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  if (cmd_train->parsed() && !tr.config.empty()) {
    try {
      apply_train_config(*cmd_train, tr.config, tr);
    } catch (const ConfigError& e) {
      std::cerr << "error: " << e.what() << "\n";
      return 2;
    }
  }

  try {
    if (cmd_gen->parsed()) return run_gen(gen);
    if (cmd_train->parsed()) return run_train(tr);
    if (cmd_eval->parsed()) return run_eval(ev);
    if (cmd_augment->parsed()) return run_augment(ag);
    if (cmd_diversity->parsed()) {
      if (bw_opt->count() > 0) dv.bandwidth = bandwidth_value;
      return run_diversity(dv);
    }
    if (cmd_gradcheck->parsed()) return run_gradcheck(gc);
  } catch (const grbe::DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 2;  // no subcommand dispatched (unreachable with require_subcommand)
}
