// gomkit command line front end. Everything computational goes through the
// shared library's C interface; this file only shuffles JSON and files.
#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "gomkit.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliArgs {
  std::string config;
  std::string out_dir;
  std::uint64_t seed = 0;
  int jobs = 1;
};

void add_common(CLI::App* cmd, CliArgs& args, bool with_jobs) {
  cmd->add_option("--config", args.config, "JSON configuration file")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--seed", args.seed, "Random seed");
  cmd->add_option("--out", args.out_dir, "Output directory")->required();
  if (with_jobs) cmd->add_option("--jobs", args.jobs, "Worker threads");
}

json read_config(const std::string& path) {
  std::ifstream in(path);
  if (!in.good()) throw std::runtime_error("cannot open config " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  json cfg = json::parse(text, nullptr, false);
  if (cfg.is_discarded()) throw std::runtime_error("config is not valid JSON: " + path);
  return cfg;
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path);
  if (!out.good()) throw std::runtime_error("cannot write " + path.string());
  out << content;
  if (!out.good()) throw std::runtime_error("write failed for " + path.string());
}

// Takes ownership of C strings coming back across the interface.
struct CStr {
  char* p = nullptr;
  ~CStr() { gomkit_string_free(p); }
  std::string str() const { return p ? std::string(p) : std::string(); }
};

struct DatasetHandle {
  gomkit_dataset* p = nullptr;
  ~DatasetHandle() { gomkit_dataset_free(p); }
};

[[noreturn]] void bail(gomkit_status rc, const CStr& err) {
  std::cerr << "gomkit: " << (err.p ? err.str() : "failed") << "\n";
  std::exit(rc == GOMKIT_INFEASIBLE ? 2 : 1);
}

DatasetHandle make_dataset(const json& cfg, std::uint64_t seed) {
  json data_cfg = cfg.contains("data") ? cfg.at("data") : cfg;
  DatasetHandle ds;
  CStr err;
  gomkit_status rc = gomkit_dataset_create(data_cfg.dump().c_str(), seed, &ds.p, &err.p);
  if (rc != GOMKIT_OK) bail(rc, err);
  return ds;
}

int run_gen(const CliArgs& args) {
  json cfg = read_config(args.config);
  DatasetHandle ds = make_dataset(cfg, args.seed);
  CStr csv, err;
  gomkit_status rc = gomkit_dataset_csv(ds.p, &csv.p, &err.p);
  if (rc != GOMKIT_OK) bail(rc, err);
  fs::create_directories(args.out_dir);
  write_file(fs::path(args.out_dir) / "dataset.csv", csv.str());
  json meta = {{"n", gomkit_dataset_n(ds.p)},
               {"n_treated", gomkit_dataset_n_treated(ds.p)},
               {"n_controls", gomkit_dataset_n_controls(ds.p)},
               {"d", gomkit_dataset_dim(ds.p)},
               {"seed", args.seed}};
  write_file(fs::path(args.out_dir) / "meta.json", meta.dump(2) + "\n");
  return 0;
}

int run_weights(const CliArgs& args) {
  json cfg = read_config(args.config);
  DatasetHandle ds = make_dataset(cfg, args.seed);
  json method = cfg.contains("method") ? cfg.at("method") : json{{"name", "kom_pp"}};
  CStr out, err;
  gomkit_status rc = gomkit_weights(ds.p, method.dump().c_str(), args.seed, &out.p, &err.p);
  if (rc != GOMKIT_OK) bail(rc, err);
  json sol = json::parse(out.str());
  std::string weights_csv = sol.value("weights_csv", "");
  sol.erase("weights_csv");
  fs::create_directories(args.out_dir);
  write_file(fs::path(args.out_dir) / "weights.json", sol.dump(2) + "\n");
  write_file(fs::path(args.out_dir) / "weights.csv", weights_csv);
  return 0;
}

int run_estimate(const CliArgs& args) {
  json cfg = read_config(args.config);
  DatasetHandle ds = make_dataset(cfg, args.seed);
  CStr out, err;
  gomkit_status rc = gomkit_estimate(ds.p, cfg.dump().c_str(), args.seed, &out.p, &err.p);
  if (rc != GOMKIT_OK) bail(rc, err);
  fs::create_directories(args.out_dir);
  write_file(fs::path(args.out_dir) / "estimate.json", out.str() + "\n");
  return 0;
}

int run_frontier(const CliArgs& args) {
  json cfg = read_config(args.config);
  DatasetHandle ds = make_dataset(cfg, args.seed);
  CStr out, err;
  gomkit_status rc = gomkit_frontier(ds.p, cfg.dump().c_str(), args.seed, &out.p, &err.p);
  if (rc != GOMKIT_OK) bail(rc, err);
  json res = json::parse(out.str());
  fs::create_directories(args.out_dir);
  write_file(fs::path(args.out_dir) / "frontier.csv", res.value("csv", ""));
  res.erase("csv");
  write_file(fs::path(args.out_dir) / "frontier.json", res.dump(2) + "\n");
  return 0;
}

int run_benchmark(const CliArgs& args) {
  json cfg = read_config(args.config);
  CStr out, err;
  gomkit_status rc = gomkit_benchmark(cfg.dump().c_str(), args.seed, args.jobs, &out.p, &err.p);
  if (rc != GOMKIT_OK) bail(rc, err);
  json res = json::parse(out.str());
  fs::create_directories(args.out_dir);
  write_file(fs::path(args.out_dir) / "results.csv", res.value("csv", ""));
  write_file(fs::path(args.out_dir) / "benchmark.json",
             res.value("summary", json::object()).dump(2) + "\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gomkit: balance-optimal weights for causal inference"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(gomkit_version()));

  CliArgs args;
  CLI::App* gen = app.add_subcommand("gen", "Generate a synthetic dataset");
  CLI::App* weights = app.add_subcommand("weights", "Solve for balance-optimal weights");
  CLI::App* estimate = app.add_subcommand("estimate", "Estimate a treatment effect");
  CLI::App* frontier = app.add_subcommand("frontier", "Sweep the balance-variance path");
  CLI::App* benchmark = app.add_subcommand("benchmark", "Run a simulation study");
  add_common(gen, args, false);
  add_common(weights, args, false);
  add_common(estimate, args, false);
  add_common(frontier, args, false);
  add_common(benchmark, args, true);

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return run_gen(args);
    if (weights->parsed()) return run_weights(args);
    if (estimate->parsed()) return run_estimate(args);
    if (frontier->parsed()) return run_frontier(args);
    if (benchmark->parsed()) return run_benchmark(args);
  } catch (const std::exception& e) {
    std::cerr << "gomkit: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
