// Command-line entry point: instance generation, training, solving and the
// experiment drivers. Every run that writes files also writes a manifest that
// `replay` can re-execute.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "nicopt/errors.hpp"
#include "nicopt/harness.hpp"
#include "nicopt/runtime.hpp"
#include "nicopt/search.hpp"
#include "nicopt/training.hpp"

namespace fs = std::filesystem;
using namespace nicopt;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw DataError("failed writing '" + path.string() + "'");
}

fs::path prepare_dir(const std::string& dir) {
  if (dir.empty()) throw UsageError("--out-dir is required");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create directory '" + dir + "': " + ec.message());
  return fs::path(dir);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// Arguments after the subcommand, minus the output location.
std::vector<std::string> replayable_args(const std::vector<std::string>& args) {
  std::vector<std::string> out;
  for (std::size_t i = 1; i < args.size(); ++i) {
    const auto& a = args[i];
    if (a == "--out-dir" || a == "--out") {
      ++i;
      continue;
    }
    if (a.rfind("--out-dir=", 0) == 0 || a.rfind("--out=", 0) == 0) continue;
    out.push_back(a);
  }
  return out;
}

struct ModelCache {
  std::map<std::string, std::unique_ptr<ModelParams<float>>> loaded;
  const ModelParams<float>* get(const std::string& path) {
    auto& slot = loaded[path];
    if (!slot) slot = std::make_unique<ModelParams<float>>(load_checkpoint(path));
    return slot.get();
  }
};

// `n=path` pairs; a bare path applies to every size.
std::function<std::string(int)> size_map(const std::vector<std::string>& items) {
  std::map<int, std::string> per_size;
  std::string fallback;
  for (const auto& item : items) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) {
      fallback = item;
    } else {
      try {
        per_size[std::stoi(item.substr(0, eq))] = item.substr(eq + 1);
      } catch (const std::exception&) {
        throw UsageError("expected n=path, got '" + item + "'");
      }
    }
  }
  return [per_size, fallback](int n) {
    const auto it = per_size.find(n);
    return it != per_size.end() ? it->second : fallback;
  };
}

int dispatch(const std::vector<std::string>& args);

struct Context {
  std::vector<std::string> args;  // subcommand first
  ExperimentManifest manifest(const std::string& kind, const std::string& output, nlohmann::json details) const {
    return {kind, replayable_args(args), std::move(details), output};
  }
};

int run(const std::vector<std::string>& args) {
  CLI::App app{"Neural improvement heuristics for ranking, routing and partitioning problems"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "nicopt 1.0");

  std::string clock_name = "none";
  auto add_clock = [&](CLI::App* sub) {
    sub->add_option("--clock", clock_name, "Timing columns: none (reproducible zeros) or wall")
        ->check(CLI::IsMember({"none", "wall"}));
  };

  // gen
  auto* gen = app.add_subcommand("gen", "Generate a random instance");
  std::string problem_name = "prp", out_file, format = "json";
  int n = 20;
  std::uint64_t seed = 0;
  gen->add_option("--problem", problem_name, "prp | tsp | gpp")->required();
  gen->add_option("--n", n, "Instance size")->required();
  gen->add_option("--seed", seed, "Generator seed");
  gen->add_option("--out", out_file, "Output file")->required();
  gen->add_option("--format", format, "json | lolib (PRP only)")->check(CLI::IsMember({"json", "lolib"}));

  // train
  auto* train_cmd = app.add_subcommand("train", "Train a policy with REINFORCE");
  std::string config_path, out_dir;
  TrainConfig tc;
  std::string reward_name, op_name, optimizer_name;
  train_cmd->add_option("--config", config_path, "JSON training config (flags override it)");
  train_cmd->add_option("--problem", problem_name, "prp | tsp | gpp");
  train_cmd->add_option("--n", tc.instance_size, "Training instance size");
  train_cmd->add_option("--epochs", tc.n_epochs);
  train_cmd->add_option("--batch", tc.batch_size);
  train_cmd->add_option("--lr", tc.learning_rate);
  train_cmd->add_option("--gamma", tc.gamma);
  train_cmd->add_option("--episode-len", tc.episode_len, "Steps per update window (T)");
  train_cmd->add_option("--k-max", tc.k_max);
  train_cmd->add_option("--clip", tc.grad_clip_norm, "Gradient norm clip");
  train_cmd->add_option("--reward", reward_name, "rf1 | rf2 | rf3");
  train_cmd->add_option("--operator", op_name);
  train_cmd->add_option("--optimizer", optimizer_name, "sgd | adam");
  train_cmd->add_option("--seed", tc.seed);
  train_cmd->add_option("--d", tc.d, "Embedding width");
  train_cmd->add_option("--layers", tc.layers);
  train_cmd->add_option("--max-steps", tc.max_steps_per_epoch, "Cap on steps per epoch (0: none)");
  train_cmd->add_option("--checkpoint-every", tc.checkpoint_every);
  train_cmd->add_option("--out-dir", out_dir)->required();
  add_clock(train_cmd);

  // solve
  auto* solve = app.add_subcommand("solve", "Run one search algorithm on an instance file");
  std::string instance_path, algo_name = "bfhc", model_path, start_name = "random";
  long long budget_evals = 0;
  double budget_seconds = 0.0;
  int tabu_size = 200;
  solve->add_option("--instance", instance_path, "JSON or LOLIB instance")->required();
  solve->add_option("--algo", algo_name, "nhc sahc bfhc shc msnhc mssahc msbfhc msshc nts bfts nils bfils becker");
  solve->add_option("--operator", op_name);
  solve->add_option("--budget-evals", budget_evals, "Evaluation limit");
  solve->add_option("--budget-seconds", budget_seconds, "Time limit");
  solve->add_option("--model", model_path, "Checkpoint for neural algorithms");
  solve->add_option("--seed", seed);
  solve->add_option("--tabu-size", tabu_size);
  solve->add_option("--start", start_name, "random | becker | identity");
  solve->add_option("--out-dir", out_dir)->required();
  add_clock(solve);

  // eval-one-step
  auto* one = app.add_subcommand("eval-one-step", "Rank the policy's action among all neighbors");
  std::string policy_name = "model";
  int count = 100;
  bool sample = false;
  one->add_option("--model", model_path);
  one->add_option("--policy", policy_name, "model | uniform | oracle")
      ->check(CLI::IsMember({"model", "uniform", "oracle"}));
  one->add_option("--problem", problem_name);
  one->add_option("--n", n);
  one->add_option("--count", count);
  one->add_option("--operator", op_name);
  one->add_option("--seed", seed);
  one->add_flag("--sample", sample, "Sample instead of taking the argmax");
  one->add_option("--out-dir", out_dir)->required();

  // eval-multi-step
  auto* multi = app.add_subcommand("eval-multi-step", "Trace rewards over repeated policy steps");
  int steps = 50, runs = 20;
  multi->add_option("--model", model_path);
  multi->add_option("--policy", policy_name)->check(CLI::IsMember({"model", "uniform", "oracle"}));
  multi->add_option("--problem", problem_name);
  multi->add_option("--n", n);
  multi->add_option("--steps", steps);
  multi->add_option("--runs", runs);
  multi->add_option("--operator", op_name);
  multi->add_option("--seed", seed);
  multi->add_flag("--sample", sample);
  multi->add_option("--out-dir", out_dir)->required();

  // bench-bicriteria
  auto* bi = app.add_subcommand("bench-bicriteria", "Gap vs evaluations of hill climbers run to a local optimum");
  std::string algos = "nhc,sahc,bfhc";
  std::vector<std::string> models, best_known_files;
  bi->add_option("--algos", algos, "Comma-separated algorithm names");
  bi->add_option("--problem", problem_name);
  bi->add_option("--n", n);
  bi->add_option("--count", count);
  bi->add_option("--operator", op_name);
  bi->add_option("--seed", seed);
  bi->add_option("--model", models, "Checkpoint, or n=checkpoint");
  bi->add_option("--best-known", best_known_files, "CSV of instance,value (or n=file)");
  bi->add_option("--out-dir", out_dir)->required();

  // bench-budget-table
  auto* table = app.add_subcommand("bench-budget-table", "Mean gap per algorithm, size and evaluation budget");
  std::string sizes = "20", multipliers = "10,100,1000";
  table->add_option("--algos", algos);
  table->add_option("--problem", problem_name);
  table->add_option("--sizes", sizes, "Comma-separated instance sizes");
  table->add_option("--multipliers", multipliers, "Budgets as multiples of n");
  table->add_option("--count", count);
  table->add_option("--operator", op_name);
  table->add_option("--seed", seed);
  table->add_option("--model", models, "Checkpoint, or n=checkpoint");
  table->add_option("--best-known", best_known_files, "CSV of instance,value (or n=file)");
  table->add_option("--out-dir", out_dir)->required();

  // compensation
  auto* comp = app.add_subcommand("compensation", "Instances needed before training time pays off");
  CompensationInputs ci;
  comp->add_option("--t-train", ci.t_train, "Training time (s)")->required();
  comp->add_option("--t-neigh", ci.t_neigh, "Full neighborhood evaluation time (s)")->required();
  comp->add_option("--t-infer", ci.t_infer, "Inference time per step (s)")->required();
  comp->add_option("--steps", ci.steps, "Steps per execution (T)")->required();
  comp->add_option("--out-dir", out_dir);

  // replay
  auto* replay = app.add_subcommand("replay", "Re-run an experiment from its manifest");
  std::string manifest_path;
  replay->add_option("--manifest", manifest_path)->required();
  replay->add_option("--out-dir", out_dir, "Output location (defaults to the recorded one)");

  std::vector<std::string> argv_store;
  argv_store.emplace_back("nicopt");
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : argv_store) argv.push_back(s.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  Context ctx{args};
  const ClockMode clock = parse_clock(clock_name);
  auto problem = [&] { return parse_problem(problem_name); };
  auto op_for = [&](Problem p) { return op_name.empty() ? default_operator(p) : parse_operator(op_name); };

  if (*gen) {
    const Problem p = problem();
    const Instance inst = generate(p, n, seed);
    if (format == "lolib") {
      if (p != Problem::prp) throw UsageError("LOLIB output is only defined for PRP");
      write_text(out_file, to_lolib(std::get<PrpInstance>(inst), "generated"));
    } else {
      write_instance_file(out_file, inst, seed);
    }
    write_manifest(ctx.manifest("gen", out_file, {{"problem", problem_name}, {"n", n}, {"seed", seed}}),
                   out_file + ".manifest.json");
    return 0;
  }

  if (*train_cmd) {
    TrainConfig cfg;
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw DataError("cannot read config '" + config_path + "'");
      nlohmann::json doc;
      try {
        doc = nlohmann::json::parse(in);
      } catch (const nlohmann::json::parse_error& e) {
        throw DataError(std::string("bad config JSON: ") + e.what());
      }
      cfg = train_config_from_json(doc);
    }
    auto given = [&](const char* name) { return train_cmd->count(name) > 0; };
    if (given("--problem")) cfg.problem = problem();
    if (given("--n")) cfg.instance_size = tc.instance_size;
    if (given("--epochs")) cfg.n_epochs = tc.n_epochs;
    if (given("--batch")) cfg.batch_size = tc.batch_size;
    if (given("--lr")) cfg.learning_rate = tc.learning_rate;
    if (given("--gamma")) cfg.gamma = tc.gamma;
    if (given("--episode-len")) cfg.episode_len = tc.episode_len;
    if (given("--k-max")) cfg.k_max = tc.k_max;
    if (given("--clip")) cfg.grad_clip_norm = tc.grad_clip_norm;
    if (given("--reward")) cfg.reward_variant = parse_reward_variant(reward_name);
    if (given("--optimizer")) cfg.optimizer = parse_optimizer(optimizer_name);
    if (given("--seed")) cfg.seed = tc.seed;
    if (given("--d")) cfg.d = tc.d;
    if (given("--layers")) cfg.layers = tc.layers;
    if (given("--max-steps")) cfg.max_steps_per_epoch = tc.max_steps_per_epoch;
    if (given("--checkpoint-every")) cfg.checkpoint_every = tc.checkpoint_every;
    if (given("--operator")) cfg.op = parse_operator(op_name);
    else if (!operator_fits(cfg.problem, cfg.op)) cfg.op = default_operator(cfg.problem);
    const fs::path dir = prepare_dir(out_dir);
    cfg.checkpoint_path = (dir / "model.ckpt").string();
    cfg.log_path = (dir / "train_log.csv").string();
    cfg.clock = clock;
    cfg.validate();
    auto manifest_cfg = to_json(cfg);
    manifest_cfg.erase("checkpoint_path");
    manifest_cfg.erase("log_path");
    write_text(dir / "config.json", manifest_cfg.dump(2) + "\n");
    write_manifest(ctx.manifest("train", out_dir, {{"config", manifest_cfg}, {"checkpoint", "model.ckpt"}}),
                   (dir / "manifest.json").string());
    train(cfg);
    return 0;
  }

  if (*solve) {
    const Instance inst = read_instance_file(instance_path);
    const Problem p = problem_of(inst);
    const OperatorKind op = op_for(p);
    if (!operator_fits(p, op)) throw UsageError("operator does not fit the instance's problem");
    const AlgorithmSpec algo = parse_algorithm(algo_name);
    Budget budget;
    if (budget_evals > 0) budget.max_evaluations = budget_evals;
    if (budget_seconds > 0) budget.max_seconds = budget_seconds;
    if (!budget.max_evaluations && !budget.max_seconds) {
      if (algo.kind == AlgorithmKind::hill_climb || algo.kind == AlgorithmKind::becker) {
        budget = Budget::unbounded();
      } else {
        throw UsageError("--budget-evals or --budget-seconds is required for " + algo.name);
      }
    }
    ModelCache cache;
    SearchOptions opts;
    opts.seed = seed;
    opts.clock = clock;
    opts.tabu_size = tabu_size;
    if (algo.neural()) {
      if (model_path.empty()) throw UsageError("--model is required for " + algo.name);
      opts.model = cache.get(model_path);
    }
    Solution start;
    const int size = size_of(inst);
    if (start_name == "random") {
      Rng rng(derive_seed(seed, 7));
      start = random_solution(p, size, rng);
    } else if (start_name == "becker") {
      if (p != Problem::prp) throw UsageError("becker start needs a PRP instance");
      start = becker_construct(std::get<PrpInstance>(inst));
    } else if (start_name == "identity") {
      if (p == Problem::gpp) throw UsageError("identity start needs a permutation problem");
      start = Permutation::identity(size);
    } else {
      throw UsageError("unknown --start '" + start_name + "'");
    }
    const fs::path dir = prepare_dir(out_dir);
    write_manifest(ctx.manifest("solve", out_dir,
                                {{"instance", instance_path},
                                 {"algorithm", algo.name},
                                 {"operator", std::string(to_string(op))},
                                 {"budget_evals", budget_evals},
                                 {"budget_seconds", budget_seconds},
                                 {"seed", seed},
                                 {"model", model_path}}),
                   (dir / "manifest.json").string());
    const auto res = run_algorithm(algo, inst, start, op, budget, opts);
    write_text(dir / "trace.csv", res.trace.to_csv());
    nlohmann::json sol;
    if (const auto* perm = std::get_if<Permutation>(&res.solution)) {
      sol["order"] = perm->order();
    } else {
      sol["side"] = std::get<Bipartition>(res.solution).sides();
    }
    sol["objective"] = res.objective;
    sol["evaluations"] = res.evaluations;
    write_text(dir / "solution.json", sol.dump(2) + "\n");
    std::cout << format_number(res.objective) << '\n';
    return 0;
  }

  if (*one || *multi) {
    const Problem p = problem();
    const OperatorKind op = op_for(p);
    ModelCache cache;
    PairPolicy policy;
    if (policy_name == "model") {
      if (model_path.empty()) throw UsageError("--model is required with --policy model");
      policy = model_policy(*cache.get(model_path), sample);
    } else if (policy_name == "uniform") {
      policy = [](const Instance& inst, const Solution&, Rng& rng) {
        const int size = size_of(inst);
        std::uniform_int_distribution<int> pick(0, size - 1);
        const int u = pick(rng);
        int v = pick(rng);
        while (v == u) v = pick(rng);
        return Action{u, v};
      };
    } else {
      policy = [op](const Instance& inst, const Solution& sol, Rng&) {
        const auto best = best_neighbor(inst, sol, op);
        if (!best) throw DataError("empty neighborhood");
        return node_pair_from_action(sol, best->action);
      };
    }
    const fs::path dir = prepare_dir(out_dir);
    nlohmann::json details = {{"problem", problem_name}, {"n", n},          {"seed", seed},
                              {"policy", policy_name},   {"model", model_path}, {"sample", sample},
                              {"operator", std::string(to_string(op))}};
    if (*one) {
      details["count"] = count;
      write_manifest(ctx.manifest("eval-one-step", out_dir, details), (dir / "manifest.json").string());
      const auto s = one_step_eval(policy, p, n, count, op, seed);
      write_text(dir / "histogram.csv", s.histogram_csv());
      write_text(dir / "ranks.csv", s.records_csv());
      write_text(dir / "summary.csv", s.summary_csv());
      std::cout << s.summary_csv();
    } else {
      details["steps"] = steps;
      details["runs"] = runs;
      write_manifest(ctx.manifest("eval-multi-step", out_dir, details), (dir / "manifest.json").string());
      write_text(dir / "multi_step.csv", multi_step_csv(multi_step_eval(policy, p, n, op, steps, runs, seed)));
    }
    return 0;
  }

  if (*bi || *table) {
    const Problem p = problem();
    const OperatorKind op = op_for(p);
    std::vector<AlgorithmSpec> specs;
    for (const auto& a : split_list(algos)) specs.push_back(parse_algorithm(a));
    if (specs.empty()) throw UsageError("--algos is empty");
    ModelCache cache;
    const auto model_for = size_map(models);
    ModelForSize lookup = [&](int size) -> const ModelParams<float>* {
      const auto path = model_for(size);
      return path.empty() ? nullptr : cache.get(path);
    };
    const auto bk_for = size_map(best_known_files);
    std::map<int, BestKnown> bk_cache;
    auto bk_lookup = [&](int size) -> const BestKnown* {
      const auto path = bk_for(size);
      if (path.empty()) return nullptr;
      auto it = bk_cache.find(size);
      if (it == bk_cache.end()) it = bk_cache.emplace(size, read_best_known(path)).first;
      return &it->second;
    };
    const fs::path dir = prepare_dir(out_dir);
    nlohmann::json details = {{"problem", problem_name}, {"count", count},   {"seed", seed},
                              {"algorithms", algos},     {"models", models}, {"best_known", best_known_files},
                              {"operator", std::string(to_string(op))}};
    if (*bi) {
      details["n"] = n;
      write_manifest(ctx.manifest("bench-bicriteria", out_dir, details), (dir / "manifest.json").string());
      const auto rows = bicriteria_eval(specs, p, n, count, op, seed, lookup, bk_lookup(n));
      write_text(dir / "runs.csv", runs_csv(rows));
      write_text(dir / "means.csv", means_csv(summarize(rows)));
      std::cout << means_csv(summarize(rows));
    } else {
      std::vector<int> size_list;
      std::vector<long long> mult_list;
      try {
        for (const auto& s : split_list(sizes)) size_list.push_back(std::stoi(s));
        for (const auto& s : split_list(multipliers)) mult_list.push_back(std::stoll(s));
      } catch (const std::exception&) {
        throw UsageError("--sizes and --multipliers take comma-separated integers");
      }
      details["sizes"] = size_list;
      details["multipliers"] = mult_list;
      write_manifest(ctx.manifest("bench-budget-table", out_dir, details), (dir / "manifest.json").string());
      const auto rows = budget_table(specs, p, size_list, mult_list, count, op, seed, lookup, bk_lookup);
      write_text(dir / "runs.csv", runs_csv(rows));
      write_text(dir / "table.csv", budget_table_csv(rows));
      std::cout << budget_table_csv(rows);
    }
    return 0;
  }

  if (*comp) {
    const long long value = compensation(ci);
    std::cout << value << '\n';
    if (!out_dir.empty()) {
      const fs::path dir = prepare_dir(out_dir);
      write_manifest(ctx.manifest("compensation", out_dir,
                                  {{"t_train", ci.t_train},
                                   {"t_neigh", ci.t_neigh},
                                   {"t_infer", ci.t_infer},
                                   {"steps", ci.steps}}),
                     (dir / "manifest.json").string());
      write_text(dir / "compensation.csv", "t_train,t_neigh,t_infer,steps,n_comp\n" + format_number(ci.t_train) +
                                               "," + format_number(ci.t_neigh) + "," + format_number(ci.t_infer) +
                                               "," + std::to_string(ci.steps) + "," + std::to_string(value) + "\n");
    }
    return 0;
  }

  if (*replay) {
    const auto m = read_manifest(manifest_path);
    if (m.kind == "replay") throw DataError("a manifest cannot replay another replay");
    std::vector<std::string> again{m.kind};
    again.insert(again.end(), m.argv.begin(), m.argv.end());
    const std::string target = out_dir.empty() ? m.output : out_dir;
    if (!target.empty()) {
      again.push_back(m.kind == "gen" ? "--out" : "--out-dir");
      again.push_back(target);
    }
    return dispatch(again);
  }
  return kExitUsage;
}

int dispatch(const std::vector<std::string>& args) {
  try {
    return run(args);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ArgumentError& e) {
    std::cerr << "invalid argument: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  return dispatch(std::vector<std::string>(argv + 1, argv + argc));
}
