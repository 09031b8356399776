// Command-line surface: dataset generation, training, evaluation, a
// plain-text OT solver front end, and an OT-vs-UoT timing benchmark.
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "promptot/config.hpp"
#include "promptot/errors.hpp"
#include "promptot/ot.hpp"
#include "promptot/rng.hpp"
#include "promptot/trainer.hpp"

namespace {

using namespace promptot;

struct OtProblem {
  CostMatrix cost;
  DiscreteMeasure mu;
  DiscreteMeasure nu;
};

// Text format: first line "M N", M lines of N floats, one line of M weights,
// one line of N weights.
OtProblem read_ot_problem(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open cost file " + path);
  std::size_t m = 0, n = 0;
  if (!(in >> m >> n) || m == 0 || n == 0) {
    throw DataError(path + ": expected header `M N`");
  }
  Tensor cost = Tensor::zeros(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (!(in >> cost.at(i, j))) {
        throw DataError(path + ": truncated cost matrix at row " + std::to_string(i));
      }
    }
  }
  Tensor mu({m}), nu({n});
  for (std::size_t i = 0; i < m; ++i) {
    if (!(in >> mu[i])) throw DataError(path + ": truncated row weights");
  }
  for (std::size_t j = 0; j < n; ++j) {
    if (!(in >> nu[j])) throw DataError(path + ": truncated column weights");
  }
  OtProblem problem{CostMatrix{std::move(cost)}, DiscreteMeasure::from_weights(std::move(mu)),
                    DiscreteMeasure::from_weights(std::move(nu))};
  return problem;
}

void print_matrix_text(std::ostream& out, const Tensor& t) {
  out << t.rows() << " " << t.cols() << "\n";
  for (std::size_t i = 0; i < t.rows(); ++i) {
    for (std::size_t j = 0; j < t.cols(); ++j) {
      if (j) out << " ";
      char buf[40];
      std::snprintf(buf, sizeof(buf), "%.12g", t.at(i, j));
      out << buf;
    }
    out << "\n";
  }
}

int run_gen(const std::string& config_path, const std::string& out_dir) {
  const GeneratorConfig cfg = parse_generator_config(config_path);
  const auto bags = generate_dataset(cfg);
  write_dataset(bags, out_dir);
  std::size_t train = 0, test = 0;
  for (const auto& b : bags) {
    (b.slide_id.rfind("train_", 0) == 0 ? train : test) += 1;
  }
  std::cout << "wrote " << bags.size() << " slides (" << train << " train pool, " << test
            << " test) to " << out_dir << "\n";
  return kExitOk;
}

int run_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir) {
  const TrainConfig cfg = parse_train_config(config_path);
  const TrainResult result = train(cfg, data_dir, out_dir);
  std::ostringstream table;
  write_metrics_csv(table, result.fold_metrics());
  std::cout << table.str();
  std::cout << "best fold " << result.best_fold << " (validation F1 "
            << result.folds[result.best_fold].best_val_f1 << ", epoch "
            << result.folds[result.best_fold].best_epoch << ")\n";
  std::cout << "checkpoint written to " << out_dir << "/checkpoint.bin\n";
  return kExitOk;
}

int run_eval(const std::string& ckpt, const std::string& data_dir) {
  const MetricsReport report = evaluate(ckpt, data_dir);
  std::ostringstream table;
  write_metrics_csv(table, {report});
  std::cout << table.str();
  return kExitOk;
}

int run_ot(const std::string& cost_path, const std::string& uot, double lambda,
           std::size_t iters, bool dump_plan) {
  OtProblem problem = read_ot_problem(cost_path);
  SinkhornConfig cfg;
  cfg.lambda = lambda;
  cfg.iterations = iters;
  TransportPlan plan;
  if (!uot.empty()) {
    const std::size_t comma = uot.find(',');
    if (comma == std::string::npos) throw ConfigError("--uot expects `rho1,rho2`");
    try {
      cfg.uot = {std::stod(uot.substr(0, comma)), std::stod(uot.substr(comma + 1))};
    } catch (const std::exception&) {
      throw ConfigError("--uot expects numeric `rho1,rho2`");
    }
    plan = unbalanced_sinkhorn(problem.cost, problem.mu, problem.nu, cfg);
  } else {
    plan = sinkhorn(problem.cost, problem.mu, problem.nu, cfg);
  }
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", ot_distance(plan, problem.cost));
  std::cout << "distance " << buf << "\n";
  std::snprintf(buf, sizeof(buf), "%.3g", plan.marginal_violation);
  std::cout << "marginal_violation " << buf << "\n";
  if (dump_plan) print_matrix_text(std::cout, plan.coupling);
  return kExitOk;
}

int run_bench() {
  Rng rng(7);
  const std::size_t n = 16, m = 8, instances = 64, repeats = 20;
  std::vector<CostMatrix> costs;
  for (std::size_t i = 0; i < instances; ++i) {
    Tensor c = Tensor::zeros(m, n);
    for (std::size_t j = 0; j < c.size(); ++j) c[j] = rng.uniform(0.0, 2.0);
    costs.push_back(CostMatrix{std::move(c)});
  }
  const DiscreteMeasure mu = DiscreteMeasure::uniform(m);
  const DiscreteMeasure nu = DiscreteMeasure::uniform(n);
  SinkhornConfig balanced;
  SinkhornConfig relaxed;
  relaxed.uot = {1.0, 1.0};
  using clock = std::chrono::steady_clock;
  double sink = 0.0;  // keeps the solves observable
  const auto t0 = clock::now();
  for (std::size_t r = 0; r < repeats; ++r) {
    for (const auto& c : costs) sink += ot_distance(sinkhorn(c, mu, nu, balanced), c);
  }
  const auto t1 = clock::now();
  for (std::size_t r = 0; r < repeats; ++r) {
    for (const auto& c : costs) sink += ot_distance(unbalanced_sinkhorn(c, mu, nu, relaxed), c);
  }
  const auto t2 = clock::now();
  const double ot_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
  const double uot_ms = std::chrono::duration<double, std::milli>(t2 - t1).count();
  const double per = static_cast<double>(instances * repeats);
  std::printf("solver   total_ms   per_solve_us\n");
  std::printf("ot       %8.2f   %12.2f\n", ot_ms, 1000.0 * ot_ms / per);
  std::printf("uot      %8.2f   %12.2f\n", uot_ms, 1000.0 * uot_ms / per);
  std::printf("uot/ot ratio %.2f  (checksum %.6f)\n", uot_ms / ot_ms, sink);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-granular prompt attention with OT alignment, desk scale"};
  app.require_subcommand(1);

  std::string config_path, out_dir, data_dir, ckpt_path, cost_path, uot;
  double lambda = 0.1;
  std::size_t iters = 100;
  bool dump_plan = false;

  CLI::App* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  gen->add_option("--config", config_path, "generator config file")->required();
  gen->add_option("--out", out_dir, "output dataset directory")->required();

  CLI::App* train_cmd = app.add_subcommand("train", "train on a dataset");
  train_cmd->add_option("--config", config_path, "train config file")->required();
  train_cmd->add_option("--data", data_dir, "dataset directory")->required();
  train_cmd->add_option("--out", out_dir, "output directory")->required();

  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
  eval_cmd->add_option("--data", data_dir, "dataset directory")->required();

  CLI::App* ot_cmd = app.add_subcommand("ot", "solve one transport problem from a text file");
  ot_cmd->add_option("--cost", cost_path, "plain-text cost/marginal file")->required();
  ot_cmd->add_option("--uot", uot, "rho1,rho2 for the unbalanced solver");
  ot_cmd->add_option("--lambda", lambda, "entropic regularization");
  ot_cmd->add_option("--iters", iters, "scaling iterations");
  ot_cmd->add_flag("--plan", dump_plan, "dump the transport plan");

  CLI::App* bench = app.add_subcommand("bench", "time the OT and UoT solvers");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return run_gen(config_path, out_dir);
    if (train_cmd->parsed()) return run_train(config_path, data_dir, out_dir);
    if (eval_cmd->parsed()) return run_eval(ckpt_path, data_dir);
    if (ot_cmd->parsed()) return run_ot(cost_path, uot, lambda, iters, dump_plan);
    if (bench->parsed()) return run_bench();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitDataError;
  } catch (const DivergenceError& e) {
    std::cerr << "numerical divergence: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const InvalidInputError& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kExitDataError;
  }
  return kExitOk;
}
