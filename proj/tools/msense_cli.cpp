// Command-line front end for the experiment runners.
//
//   msense_cli <table1|ratio|pgd-compare|landscape|theorem-audit|rip-estimate>
//              --config PATH [--out PATH] [--seed INT]
//
// Exit codes: 0 success, 1 invalid config or I/O failure, 2 audit inconsistency.

#include "msense/experiments.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

namespace {

std::string side_path(const std::string& out, const std::string& suffix) {
  const auto dot = out.rfind('.');
  const auto slash = out.rfind('/');
  const bool has_ext = dot != std::string::npos && (slash == std::string::npos || dot > slash);
  return (has_ext ? out.substr(0, dot) : out) + "." + suffix + ".csv";
}

bool write_file(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  os << text;
  return static_cast<bool>(os);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Low-rank matrix sensing experiments"};
  app.require_subcommand(1);
  std::string config_path;
  std::string out_path;
  std::uint64_t seed = 0;

  const std::pair<const char*, const char*> commands[] = {
      {"table1", "Hessian spectra at spurious and true minima of the mask problem"},
      {"ratio", "Hessian condition ratio at spurious minima"},
      {"pgd-compare", "Perturbed descent with and without the high-order penalty"},
      {"landscape", "Grids of the smallest Hessian eigenvalue around a critical point"},
      {"theorem-audit", "Strict-saddle certificates on generated critical points"},
      {"rip-estimate", "Sampled RIP constant of an operator"}};
  CLI::Option* seed_opts[std::size(commands)] = {};
  std::size_t k = 0;
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "Experiment config (JSON)")->required();
    sub->add_option("--out", out_path, "Output file; defaults to the config's output, else stdout");
    seed_opts[k++] = sub->add_option("--seed", seed, "Override the config seed");
  }
  CLI11_PARSE(app, argc, argv);

  const auto* sub = app.get_subcommands().front();
  std::string experiment = sub->get_name();
  for (auto& c : experiment)
    if (c == '-') c = '_';

  msense::ExperimentConfig cfg;
  try {
    std::ifstream is(config_path);
    if (!is) throw msense::ConfigError("cannot open config '" + config_path + "'");
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(is);
    } catch (const nlohmann::json::parse_error& e) {
      throw msense::ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw msense::ConfigError("config must be a JSON object");
    if (!j.contains("experiment")) j["experiment"] = experiment;
    if (j["experiment"] != experiment)
      throw msense::ConfigError("config is for '" + j["experiment"].dump() + "', not '" +
                                experiment + "'");
    cfg = msense::parse_config(j);
    for (auto* opt : seed_opts)
      if (opt->count() > 0) msense::set_seed(cfg, seed);
  } catch (const msense::ConfigError& e) {
    std::cerr << "invalid config: " << e.what() << "\n";
    return 1;
  }

  msense::ExperimentOutput result;
  try {
    result = msense::run_experiment(cfg);
  } catch (const msense::InvalidArgument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  for (const auto& w : result.warnings) std::cerr << "warning: " << w << "\n";

  const std::string out = out_path.empty() ? cfg.output : out_path;
  if (out.empty()) {
    std::cout << result.main;
    if (!result.side.empty()) std::cerr << "warning: side outputs need --out; skipped\n";
    return result.exit_code;
  }
  if (!write_file(out, result.main)) {
    std::cerr << "error: cannot write '" << out << "'\n";
    return 1;
  }
  for (const auto& [suffix, text] : result.side) {
    const std::string path = side_path(out, suffix);
    if (!write_file(path, text)) {
      std::cerr << "error: cannot write '" << path << "'\n";
      return 1;
    }
  }
  return result.exit_code;
}
