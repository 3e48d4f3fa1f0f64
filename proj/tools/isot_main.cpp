#include <atomic>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "isot/server.hpp"
#include "isot/simulation.hpp"

namespace fs = std::filesystem;
using namespace isot;

namespace {

std::atomic<bool> g_stop{false};

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("isot");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::info);
  if (const char* env = std::getenv("ISOT_LOG_LEVEL")) {
    const auto level = spdlog::level::from_str(env);
    // from_str maps unknown names to off; only honour names it really knows
    if (level != spdlog::level::off || std::string(env) == "off") {
      spdlog::set_level(level);
    } else {
      spdlog::warn("ignoring unknown ISOT_LOG_LEVEL '{}'", env);
    }
  }
}

void print_report(const MetricsReport& report, const std::string& format) {
  std::cout << (format == "json" ? report_json(report) : report_table(report));
  std::cout.flush();
}

int cmd_run(const std::string& path, std::optional<int> trials, std::optional<std::uint64_t> seed,
            const std::string& out, const std::string& format) {
  const Scenario sc = load_scenario(path);
  const int k = trials.value_or(sc.trials);
  const std::uint64_t s = seed.value_or(sc.seed);
  spdlog::info("running '{}': {} trials, seed {}", sc.name, k, s);
  const SimulationRun run = run_simulation(sc, s, k);
  spdlog::info("tactile mapper test RMSE {:.4f} N", run.training.test_rmse);

  int problems = 0;
  for (const auto& t : run.trials) {
    if (!t.completed) spdlog::warn("trial {} incomplete: {}", t.log.trial, t.diagnostic);
    for (const auto& p : validate_trial(t.log, sc)) {
      spdlog::warn("{}", p);
      ++problems;
    }
  }
  if (!out.empty()) {
    const auto files = write_run(run, sc, out);
    spdlog::info("wrote {} files to {}", files.size(), out);
  }
  spdlog::debug("wall time {:.2f} s", run.wall_seconds);
  print_report(run_report(run, sc), format);
  return problems == 0 ? 0 : 2;
}

int cmd_metrics(const std::string& dir, const std::string& format) {
  const auto logs = load_trials(dir);
  if (logs.empty()) throw InvalidInput("no trial logs in " + dir);
  WorkspaceBox box;
  std::string name, task = logs.front().task;
  std::uint64_t seed = 0;
  const fs::path header = fs::path(dir) / "header.json";
  if (fs::exists(header)) {
    std::ifstream in(header);
    const auto doc = nlohmann::json::parse(in);
    const auto& sc = doc.at("scenario");
    const auto& ws = sc.at("workspace");
    for (int i = 0; i < 3; ++i) {
      box.min[i] = ws.at("min").at(i).get<double>();
      box.max[i] = ws.at("max").at(i).get<double>();
    }
    name = sc.value("name", "");
    seed = doc.value("seed", std::uint64_t{0});
  } else {
    spdlog::warn("no header.json in {}; using the default workspace box", dir);
  }
  MetricsReport r = compute_report(logs, box.diagonal());
  r.scenario = name;
  r.task = task;
  r.seed = seed;
  print_report(r, format);
  return 0;
}

int cmd_validate(const std::string& path, const std::string& logs) {
  const Scenario sc = load_scenario(path);
  std::cout << "scenario '" << sc.name << "' is valid: " << sc.objects.size() << " objects, "
            << sc.leader.keyframes.size() << " keyframes, " << sc.trials << " trials\n";
  if (logs.empty()) return 0;
  int problems = 0;
  const auto trials = load_trials(logs);
  for (const auto& t : trials) {
    for (const auto& p : validate_trial(t, sc)) {
      std::cout << p << "\n";
      ++problems;
    }
  }
  std::cout << trials.size() << " trial logs checked, " << problems << " problems\n";
  return problems == 0 ? 0 : 2;
}

int cmd_serve(const std::string& path, const ServeOptions& base) {
  const Scenario sc = load_scenario(path);
  ServeOptions opt = base;
  opt.stop = &g_stop;
  std::signal(SIGINT, [](int) { g_stop = true; });
  std::signal(SIGTERM, [](int) { g_stop = true; });
  serve(sc, opt);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"iSoT human-robot co-manipulation simulator"};
  app.require_subcommand(1);

  std::string scenario, out, logs, report = "table";
  std::optional<int> trials;
  std::optional<std::uint64_t> seed;
  ServeOptions serve_opt;

  auto* run = app.add_subcommand("run", "simulate trials and print the metrics report");
  run->add_option("--scenario", scenario, "scenario file")->required()->check(CLI::ExistingFile);
  // the metrics compare trials with each other, so one trial is not enough
  run->add_option("--trials", trials, "number of trials, at least 2 (default: scenario)")->check(CLI::Range(2, 10000));
  run->add_option("--seed", seed, "master seed (default: scenario)");
  run->add_option("--out", out, "directory for trial logs");
  run->add_option("--report", report, "report format")->check(CLI::IsMember({"table", "json"}));

  auto* metrics = app.add_subcommand("metrics", "recompute the report from trial logs");
  metrics->add_option("--logs", logs, "directory with trial_NN.csv files")->required()->check(CLI::ExistingDirectory);
  metrics->add_option("--report", report, "report format")->check(CLI::IsMember({"table", "json"}));

  auto* srv = app.add_subcommand("serve", "interactive WebSocket session for the leader console");
  srv->add_option("--scenario", scenario, "scenario file")->required()->check(CLI::ExistingFile);
  srv->add_option("--port", serve_opt.port, "TCP port")->check(CLI::Range(0, 65535));
  srv->add_option("--host", serve_opt.host, "listen address");
  srv->add_option("--seed", serve_opt.seed, "session seed");
  srv->add_option("--time-scale", serve_opt.time_scale, "simulated seconds per wall second")
      ->check(CLI::PositiveNumber);

  auto* val = app.add_subcommand("validate", "check a scenario file, and optionally logs against it");
  val->add_option("--scenario", scenario, "scenario file")->required()->check(CLI::ExistingFile);
  val->add_option("--logs", logs, "trial log directory to validate")->check(CLI::ExistingDirectory);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(scenario, trials, seed, out, report);
    if (*metrics) return cmd_metrics(logs, report);
    if (*srv) return cmd_serve(scenario, serve_opt);
    if (*val) return cmd_validate(scenario, logs);
  } catch (const SchemaError& e) {
    spdlog::error("schema error at {}", e.what());
    return 3;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
