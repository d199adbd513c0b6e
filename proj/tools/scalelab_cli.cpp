// scalelab: placement planning, peak FLOPS, distributed-training benchmarks,
// scaling reports, published-table verification and launch recipes.
//
// Exit codes: 0 success, 1 validation/input error, 2 runtime failure.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "scalelab.hpp"

using namespace scalelab;

namespace {

constexpr int kOk = 0;
constexpr int kInputError = 1;
constexpr int kRuntimeError = 2;

int exit_code_for(const Error& e) {
  switch (e.kind()) {
    case ErrorKind::PeerUnreachable:
    case ErrorKind::ShapeMismatch:
      return kRuntimeError;
    default:
      return kInputError;
  }
}

std::string bool_str(bool b) { return b ? "yes" : "no"; }

// ---------------------------------------------------------------------------
// plan

struct PlanArgs {
  std::string cluster = "sng";
  bool list = false;
  std::optional<unsigned> ranks;
  std::optional<unsigned> threads;
  bool ht = false;
  std::optional<unsigned> numa_clustering;
};

void print_plan_row(const topo::ValidatedPlan& v) {
  std::cout << v.plan.ranks_per_node << "," << v.plan.threads_per_rank << "," << bool_str(v.plan.hyperthreading) << ","
            << v.plan.numa_clustering << "," << v.logical_cores_used << "," << v.logical_cores_available << "\n";
}

int run_plan(const PlanArgs& a) {
  const auto cluster = topo::load_cluster(a.cluster);
  std::cout << "# cluster " << cluster.name << ": " << cluster.total_nodes << " nodes x " << cluster.node.cores_per_node
            << " cores, " << cluster.node.sockets << " sockets, " << cluster.node.numa_domains << " NUMA domains, "
            << cluster.node.threads_per_core << " threads/core\n";
  std::cout << "ranks_per_node,threads_per_rank,hyperthreading,numa_clustering,logical_cores_used,logical_cores_available\n";
  if (a.ranks || a.threads) {
    topo::PlacementPlan plan{a.ranks.value_or(1), a.threads.value_or(1), a.ht,
                             a.numa_clustering.value_or(cluster.node.default_numa_clustering())};
    // A rank count that needs sub-NUMA clustering picks the smallest mode that fits.
    if (!a.numa_clustering) {
      for (auto c = cluster.node.default_numa_clustering(); c <= cluster.node.numa_clustering_limit(); ++c) {
        if (plan.ranks_per_node == 1 || (c * cluster.node.sockets) % plan.ranks_per_node == 0) {
          plan.numa_clustering = c;
          break;
        }
      }
    }
    print_plan_row(topo::validate_placement(cluster.node, plan));
    return kOk;
  }
  for (const auto& p : topo::enumerate_placements(cluster.node)) print_plan_row(topo::validate_placement(cluster.node, p));
  return kOk;
}

// ---------------------------------------------------------------------------
// peak

struct PeakArgs {
  std::string cluster = "sng";
  std::string precision = "fp64";
  std::string freq = "nominal";
  std::string scope = "node";
};

int run_peak(const PeakArgs& a) {
  const auto cluster = topo::load_cluster(a.cluster);
  const auto precision = a.precision == "fp32" ? topo::Precision::fp32 : topo::Precision::fp64;
  const auto mode = a.freq == "production" ? topo::FreqMode::production : topo::FreqMode::nominal;
  const double flops =
      a.scope == "cluster" ? topo::peak_flops(cluster, precision, mode) : topo::peak_flops(cluster.node, precision, mode);
  std::cout << "scope,precision,freq_mode,flops_per_s\n";
  std::cout << a.scope << "," << a.precision << "," << a.freq << "," << report::format_exact(flops) << "\n";
  std::cout << "# " << report::format_significant(flops / 1e12, 6) << " TFLOPS = "
            << report::format_significant(flops / 1e15, 6) << " PFLOPS\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// bench

struct BenchArgs {
  std::vector<std::size_t> workers{1};
  std::size_t per_worker_batch = 2;
  std::size_t epochs = 1;
  std::size_t repeats = 4;
  std::size_t side = 5;
  std::size_t samples_per_worker = 16;
  std::uint64_t seed = 1;
  double lr = 0.01;
  std::string lr_scaling = "none";
  std::string transport = "inproc";
  std::string out;
  bool no_timing = false;
  bool verbose = false;
  std::optional<int> rank;
  std::vector<std::string> endpoints;
};

harness::LrScaling parse_lr_scaling(const std::string& s) {
  if (s == "linear") return harness::LrScaling::linear;
  if (s == "sqrt") return harness::LrScaling::sqrt;
  return harness::LrScaling::none;
}

harness::TrainConfig bench_config(const BenchArgs& a) {
  harness::TrainConfig c;
  c.per_worker_batch = a.per_worker_batch;
  c.epochs = a.epochs;
  c.sample_side = a.side;
  c.samples_per_worker_per_epoch = a.samples_per_worker;
  c.seed = a.seed;
  c.base_learning_rate = a.lr;
  c.lr_scaling = parse_lr_scaling(a.lr_scaling);
  c.transport = a.transport == "tcp" ? coll::TransportKind::tcp : coll::TransportKind::in_process;
  return c;
}

std::string exact17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// One rank of a process-per-rank TCP run.
int run_bench_rank(const BenchArgs& a) {
  auto cfg = bench_config(a);
  cfg.workers = a.endpoints.size();
  coll::WorldConfig wc;
  wc.world_size = static_cast<int>(a.endpoints.size());
  wc.rank = *a.rank;
  wc.transport = coll::TransportKind::tcp;
  wc.endpoints = a.endpoints;
  auto comm = coll::connect_tcp(wc);
  auto result = harness::run_worker(comm, cfg);
  if (*a.rank == 0) {
    std::cout << "epoch,mean_loss,total_flops" << (a.no_timing ? "" : ",wall_time_s") << "\n";
    for (const auto& e : result.epochs) {
      std::cout << e.epoch << "," << exact17(e.mean_loss) << "," << e.total_flops;
      if (!a.no_timing) std::cout << "," << report::format_significant(e.wall_time_s, 6);
      std::cout << "\n";
    }
  }
  return kOk;
}

int run_bench(const BenchArgs& a) {
  if (a.rank) {
    if (a.endpoints.empty()) throw Error(ErrorKind::InvalidInput, "--rank requires --endpoints");
    return run_bench_rank(a);
  }
  const auto cfg = bench_config(a);
  auto m = harness::measure_scaling(cfg, a.workers, a.repeats);

  if (a.verbose) {
    std::cout << "workers,repeat,epoch,mean_loss,total_flops\n";
    for (const auto& run : m.runs)
      for (const auto& e : run.epochs)
        std::cout << run.workers << "," << run.repeat << "," << e.epoch << "," << exact17(e.mean_loss) << ","
                  << e.total_flops << "\n";
    std::cout << "\n";
  }

  if (!a.out.empty() && !m.records.empty()) {
    std::ofstream f(a.out);
    if (!f) throw Error(ErrorKind::InvalidInput, "cannot write " + a.out);
    f << report::render_records_csv(m.records);
  }

  if (a.no_timing) {
    std::cout << "workers,epoch_time_s\n";
    for (const auto& r : m.records) std::cout << r.units << ",-\n";
  } else {
    std::cout << report::render_records_csv(m.records);
    if (!m.records.empty()) {
      std::cout << "\n" << report::render_table(report::compute_scaling_report(m.records), report::TableFormat::markdown);
    }
  }

  if (m.failure_kind) {
    std::cerr << "bench: training failed: " << m.failure << "\n";
    return *m.failure_kind == ErrorKind::PeerUnreachable || *m.failure_kind == ErrorKind::ShapeMismatch
               ? kRuntimeError
               : kInputError;
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// allreduce-test

struct AllreduceArgs {
  int world_size = 4;
  std::string transport = "inproc";
  std::size_t length = 1024;
  std::size_t trials = 10;
  std::uint64_t seed = 1;
  std::optional<int> rank;
  std::vector<std::string> endpoints;
  std::optional<int> step_deadline_ms;
};

std::vector<double> test_vector(std::uint64_t seed, std::size_t trial, int rank, std::size_t length) {
  std::mt19937_64 rng(seed * 1000003ull + trial * 7919ull + static_cast<std::uint64_t>(rank));
  std::uniform_real_distribution<double> u(0.5, 1.5);
  std::vector<double> v(length);
  for (auto& x : v) x = u(rng);
  return v;
}

struct TrialOutcome {
  double max_rel_err = 0;
  bool repeatable = true;
};

TrialOutcome check_trial(coll::Communicator& comm, const AllreduceArgs& a, std::size_t trial) {
  const auto mine = test_vector(a.seed, trial, comm.rank(), a.length);
  const auto got = coll::allreduce(comm, mine, coll::ReduceOp::sum());
  const auto again = coll::allreduce(comm, mine, coll::ReduceOp::sum());
  std::vector<double> serial(a.length, 0.0);
  for (int r = 0; r < comm.size(); ++r) {
    const auto v = test_vector(a.seed, trial, r, a.length);
    for (std::size_t i = 0; i < a.length; ++i) serial[i] += v[i];
  }
  TrialOutcome out;
  out.repeatable = got == again;
  for (std::size_t i = 0; i < a.length; ++i)
    out.max_rel_err = std::max(out.max_rel_err, std::abs(got[i] - serial[i]) / std::abs(serial[i]));
  return out;
}

int run_allreduce_test(const AllreduceArgs& a) {
  constexpr double kTolerance = 1e-12;
  coll::Deadline deadline;
  if (a.step_deadline_ms) deadline = std::chrono::milliseconds(*a.step_deadline_ms);

  std::vector<std::vector<TrialOutcome>> outcomes;
  if (a.rank) {
    coll::WorldConfig wc;
    wc.world_size = static_cast<int>(a.endpoints.size());
    wc.rank = *a.rank;
    wc.transport = coll::TransportKind::tcp;
    wc.endpoints = a.endpoints;
    wc.step_deadline = deadline;
    auto comm = coll::connect_tcp(wc);
    outcomes.emplace_back();
    for (std::size_t t = 0; t < a.trials; ++t) outcomes[0].push_back(check_trial(comm, a, t));
  } else {
    if (a.world_size < 1) throw Error(ErrorKind::InvalidInput, "--world-size must be >= 1");
    const auto n = static_cast<std::size_t>(a.world_size);
    outcomes.resize(n);
    std::vector<std::exception_ptr> errors(n);
    std::vector<std::thread> threads;
    if (a.transport == "tcp") {
      auto res = coll::reserve_loopback(n);
      for (int r = 0; r < a.world_size; ++r) {
        threads.emplace_back([&, r] {
          try {
            coll::WorldConfig wc;
            wc.world_size = a.world_size;
            wc.rank = r;
            wc.transport = coll::TransportKind::tcp;
            wc.endpoints = res.endpoints;
            wc.step_deadline = deadline;
            auto comm = coll::connect_tcp(wc, std::move(res.listeners[r]));
            for (std::size_t t = 0; t < a.trials; ++t) outcomes[r].push_back(check_trial(comm, a, t));
          } catch (...) {
            errors[r] = std::current_exception();
          }
        });
      }
      for (auto& t : threads) t.join();
    } else {
      auto world = coll::make_inprocess_world(a.world_size, deadline);
      for (int r = 0; r < a.world_size; ++r) {
        threads.emplace_back([&, r] {
          try {
            for (std::size_t t = 0; t < a.trials; ++t) outcomes[r].push_back(check_trial(world.ranks[r], a, t));
          } catch (...) {
            errors[r] = std::current_exception();
            world.abort();
          }
        });
      }
      for (auto& t : threads) t.join();
    }
    harness::detail::rethrow_root_cause(errors);
  }

  bool ok = true;
  std::cout << "trial,max_rel_err,repeatable,status\n";
  for (std::size_t t = 0; t < a.trials; ++t) {
    TrialOutcome worst;
    for (const auto& per_rank : outcomes) {
      worst.max_rel_err = std::max(worst.max_rel_err, per_rank[t].max_rel_err);
      worst.repeatable = worst.repeatable && per_rank[t].repeatable;
    }
    const bool pass = worst.max_rel_err <= kTolerance && worst.repeatable;
    ok = ok && pass;
    std::cout << t << "," << report::format_significant(worst.max_rel_err, 3) << "," << bool_str(worst.repeatable) << ","
              << (pass ? "PASS" : "FAIL") << "\n";
  }
  return ok ? kOk : kRuntimeError;
}

// ---------------------------------------------------------------------------
// report / verify-paper

struct ReportArgs {
  std::string input;
  std::optional<int> table;
  std::string format = "markdown";
};

int run_report(const ReportArgs& a) {
  std::vector<report::ScalingRecord> records;
  if (a.table) {
    records = report::published_records(*a.table);
  } else {
    std::ifstream f(a.input);
    if (!f) throw Error(ErrorKind::InvalidInput, "cannot open '" + a.input + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    records = report::parse_scaling_csv(ss.str());
  }
  const auto rep = report::compute_scaling_report(records);
  std::cout << report::render_table(rep, a.format == "csv" ? report::TableFormat::csv : report::TableFormat::markdown);
  return kOk;
}

struct VerifyArgs {
  std::optional<int> table;
  double tolerance_pp = 0.15;
  double linear_tolerance_pct = 0.5;
  double peak_tolerance_pp = 0.3;
};

int run_verify(const VerifyArgs& a) {
  report::VerifyOptions opts;
  opts.table = a.table;
  opts.efficiency_tolerance_pp = a.tolerance_pp;
  opts.linear_tolerance_pct = a.linear_tolerance_pct;
  opts.peak_tolerance_pp = a.peak_tolerance_pp;
  const auto ds = report::verify_published_tables(opts);
  std::cout << report::render_discrepancies(ds);
  std::cout << "# " << ds.size() << " flagged cell" << (ds.size() == 1 ? "" : "s") << " (fixtures "
            << report::kFixtureVersion << ")\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// recipe

struct RecipeArgs {
  std::string kind = "job";
  std::string config;
  std::optional<int> preset;
  std::optional<std::uint64_t> nodes;
  std::string cluster = "sng";
  std::uint64_t threshold = 512;
};

int run_recipe(const RecipeArgs& a) {
  if (a.kind == "container") {
    const auto recipe = a.config.empty() ? deploy::default_container_recipe()
                                         : deploy::container_recipe_from_config(KeyValueConfig::load(a.config));
    std::cout << deploy::render_container_recipe(recipe);
    return kOk;
  }
  deploy::LaunchRecipe recipe;
  if (!a.config.empty())
    recipe = deploy::launch_recipe_from_config(KeyValueConfig::load(a.config));
  else
    recipe = deploy::paper_launch_recipe(a.preset.value_or(3));
  if (a.nodes) recipe.nodes = *a.nodes;
  const auto cluster = topo::load_cluster(a.cluster);

  if (a.kind == "validate") {
    const auto findings = deploy::validate_recipe(recipe, cluster.node, {a.threshold});
    if (findings.empty()) std::cout << "clean\n";
    for (const auto& f : findings) std::cout << deploy::to_string(f.kind) << ": " << f.message << "\n";
    return kOk;
  }
  std::cout << deploy::render_job_script(recipe, cluster.node);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"scalelab: distributed-training scaling laboratory"};
  app.require_subcommand(1);

  PlanArgs plan;
  auto* plan_cmd = app.add_subcommand("plan", "List or validate rank x thread placements for a node");
  plan_cmd->add_option("--cluster", plan.cluster, "Preset name (sng) or key=value spec file");
  plan_cmd->add_flag("--list", plan.list, "List every placement that fills the node");
  plan_cmd->add_option("--ranks", plan.ranks, "Ranks per node to validate");
  plan_cmd->add_option("--threads", plan.threads, "Threads per rank to validate");
  plan_cmd->add_flag("--ht", plan.ht, "Use hyperthreads");
  plan_cmd->add_option("--numa-clustering", plan.numa_clustering, "NUMA domains per socket");

  PeakArgs peak;
  auto* peak_cmd = app.add_subcommand("peak", "Theoretical peak FLOP rate");
  peak_cmd->add_option("--cluster", peak.cluster, "Preset name (sng) or key=value spec file");
  peak_cmd->add_option("--precision", peak.precision)->check(CLI::IsMember({"fp64", "fp32"}));
  peak_cmd->add_option("--freq", peak.freq)->check(CLI::IsMember({"nominal", "production"}));
  peak_cmd->add_option("--scope", peak.scope)->check(CLI::IsMember({"node", "cluster"}));

  BenchArgs bench;
  auto* bench_cmd = app.add_subcommand("bench", "Weak-scaling benchmark of data-parallel training");
  bench_cmd->add_option("--workers", bench.workers, "Worker counts, e.g. 1,2,4")->delimiter(',');
  bench_cmd->add_option("--per-worker-batch", bench.per_worker_batch);
  bench_cmd->add_option("--epochs", bench.epochs);
  bench_cmd->add_option("--repeats", bench.repeats);
  bench_cmd->add_option("--side", bench.side, "Voxel cube side");
  bench_cmd->add_option("--samples-per-worker", bench.samples_per_worker);
  bench_cmd->add_option("--seed", bench.seed);
  bench_cmd->add_option("--lr", bench.lr, "Base learning rate");
  bench_cmd->add_option("--lr-scaling", bench.lr_scaling)->check(CLI::IsMember({"none", "linear", "sqrt"}));
  bench_cmd->add_option("--transport", bench.transport)->check(CLI::IsMember({"inproc", "tcp"}));
  bench_cmd->add_option("--out", bench.out, "Write workers,epoch_time_s CSV here");
  bench_cmd->add_flag("--no-timing", bench.no_timing, "Suppress wall-time fields on stdout");
  bench_cmd->add_flag("--verbose", bench.verbose, "Print per-epoch losses");
  bench_cmd->add_option("--rank", bench.rank, "Run only this rank (process-per-rank TCP mode)");
  bench_cmd->add_option("--endpoints", bench.endpoints, "host:port per rank")->delimiter(',');

  AllreduceArgs ar;
  auto* ar_cmd = app.add_subcommand("allreduce-test", "Ring allreduce self-test against a serial sum");
  ar_cmd->add_option("--world-size", ar.world_size);
  ar_cmd->add_option("--transport", ar.transport)->check(CLI::IsMember({"inproc", "tcp"}));
  ar_cmd->add_option("--length", ar.length);
  ar_cmd->add_option("--trials", ar.trials);
  ar_cmd->add_option("--seed", ar.seed);
  ar_cmd->add_option("--rank", ar.rank, "Run only this rank (process-per-rank TCP mode)");
  ar_cmd->add_option("--endpoints", ar.endpoints, "host:port per rank")->delimiter(',');
  ar_cmd->add_option("--step-deadline-ms", ar.step_deadline_ms, "Fail a step that takes longer than this");

  ReportArgs rep;
  auto* rep_cmd = app.add_subcommand("report", "Scaling report from measurements or a published table");
  auto* rep_in = rep_cmd->add_option("--input", rep.input, "CSV with workers,epoch_time_s or units,time_s");
  auto* rep_table = rep_cmd->add_option("--table", rep.table, "Published table 1-6")->check(CLI::Range(1, 6));
  rep_in->excludes(rep_table);
  rep_cmd->add_option("--format", rep.format)->check(CLI::IsMember({"markdown", "csv"}));

  VerifyArgs ver;
  auto* ver_cmd = app.add_subcommand("verify-paper", "Recompute the published tables and list discrepancies");
  ver_cmd->add_option("--table", ver.table)->check(CLI::Range(1, 7));
  ver_cmd->add_option("--tolerance-pp", ver.tolerance_pp, "Efficiency tolerance, percentage points");
  ver_cmd->add_option("--linear-tolerance-pct", ver.linear_tolerance_pct, "Linear-time tolerance, percent");
  ver_cmd->add_option("--peak-tolerance-pp", ver.peak_tolerance_pp, "Percent-of-peak tolerance, percentage points");

  RecipeArgs rec;
  auto* rec_cmd = app.add_subcommand("recipe", "Render container recipes and batch job scripts");
  rec_cmd->add_option("--kind", rec.kind)->check(CLI::IsMember({"job", "container", "validate"}));
  auto* rec_cfg = rec_cmd->add_option("--config", rec.config, "key=value recipe file");
  auto* rec_preset = rec_cmd->add_option("--preset", rec.preset, "Measured configuration 1-4")->check(CLI::Range(1, 4));
  rec_cfg->excludes(rec_preset);
  rec_cmd->add_option("--nodes", rec.nodes);
  rec_cmd->add_option("--cluster", rec.cluster, "Node spec for placement checks");
  rec_cmd->add_option("--mixed-mpi-threshold", rec.threshold, "Node count above which container MPI is flagged");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kInputError;
  }

  try {
    if (*plan_cmd) return run_plan(plan);
    if (*peak_cmd) return run_peak(peak);
    if (*bench_cmd) return run_bench(bench);
    if (*ar_cmd) return run_allreduce_test(ar);
    if (*rep_cmd) return run_report(rep);
    if (*ver_cmd) return run_verify(ver);
    if (*rec_cmd) return run_recipe(rec);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return kInputError;
}
