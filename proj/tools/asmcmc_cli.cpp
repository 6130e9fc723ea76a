#include "asmcmc.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

namespace {

struct CommonOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::size_t> workers;
  std::optional<std::uint64_t> budget;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config_path, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "experiment seed (overrides the config)");
  cmd->add_option("--out", o.out, "output directory (overrides the config)");
  cmd->add_option("--workers", o.workers, "concurrent replicate workers")->check(CLI::PositiveNumber);
  cmd->add_option("--budget", o.budget, "likelihood-evaluation cap per run")->check(CLI::PositiveNumber);
}

asmcmc::ExperimentConfig load(const CommonOptions& o) {
  asmcmc::ExperimentConfig c = asmcmc::load_config(o.config_path);
  if (o.seed) c.seed = *o.seed;
  if (o.out) c.output_dir = *o.out;
  if (o.workers) c.workers = *o.workers;
  if (o.budget) c.budget = *o.budget;
  asmcmc::validate(c);
  return c;
}

void print_summaries(const asmcmc::ExperimentResult& result) {
  std::cout << "algorithm       reps  median_error  mean_acceptance  evaluations/run\n";
  for (const auto& s : asmcmc::summarize(result)) {
    std::cout << std::left << std::setw(16) << s.algorithm << std::setw(6) << s.replicates << std::setw(14)
              << s.median_error << std::setw(17) << s.mean_acceptance << s.evaluations_per_run << '\n';
  }
  if (result.config.model.name == "mixture") {
    for (const auto& r : result.runs) {
      std::cout << r.algorithm << " r" << r.replicate << " occupancy(-,+) = (" << r.occupancy.negative << ", "
                << r.occupancy.positive << ")\n";
    }
  }
}

std::string quote(const std::string& s) {
  std::string out;
  for (char ch : s) {
    if (ch == '"' || ch == '\\') out += '\\';
    out += ch == '\n' ? ' ' : ch;
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Active-subspace MCMC experiments"};
  app.require_subcommand(1);

  CommonOptions identify_opts, curve_opts, run_opts, compare_opts;
  std::string report_dir;
  auto* identify = app.add_subcommand("identify", "estimate the gradient matrix, write split, spectrum and ESS curve");
  add_common(identify, identify_opts);
  auto* curve = app.add_subcommand("ess-curve", "write the ESS-vs-active-dimension curve");
  add_common(curve, curve_opts);
  auto* run = app.add_subcommand("run", "run the configured samplers and write traces");
  add_common(run, run_opts);
  auto* compare = app.add_subcommand("compare", "run all samplers over the replicate seeds and compare errors");
  add_common(compare, compare_opts);
  auto* report = app.add_subcommand("report", "summarise errors.csv from a finished run or comparison");
  report->add_option("--out", report_dir, "directory holding errors.csv")->required()->check(CLI::ExistingDirectory);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*identify || *curve) {
      const CommonOptions& o = *identify ? identify_opts : curve_opts;
      const asmcmc::ExperimentConfig c = load(o);
      const asmcmc::IdentifyResult id = asmcmc::run_identify(c, c.output_dir, true);
      if (*identify) {
        std::cout << "spectral-gap candidates:";
        for (auto k : id.spectrum.candidates) std::cout << ' ' << k;
        std::cout << '\n';
      }
      std::cout << asmcmc::ess_curve_csv(id.ess_curve);
      std::cout << "smallest d_a with ESS above " << c.subspace.ess_threshold << "%: " << id.ess_selected_dim << '\n';
    } else if (*run || *compare) {
      asmcmc::ExperimentConfig c = load(*run ? run_opts : compare_opts);
      if (*compare) c.write_traces = false;
      const asmcmc::ExperimentResult result = asmcmc::run_and_write(c, c.output_dir);
      print_summaries(result);
      std::cout << "outputs in " << c.output_dir << '\n';
    } else if (*report) {
      std::cout << asmcmc::report_from_errors_csv(std::filesystem::path(report_dir) / "errors.csv");
    }
  } catch (const asmcmc::Error& e) {
    std::cerr << "error: code=" << asmcmc::to_string(e.code()) << " message=\"" << quote(e.what()) << "\"\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: code=internal message=\"" << quote(e.what()) << "\"\n";
    return 3;
  }
  return 0;
}
