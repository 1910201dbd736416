// qlrecover: batch front end.
//
//   qlrecover <recover|forward|scan|probe|validate> --config run.ini [--out dir]
//             [--seed N] [--method stepper|series] [--quiet]
//
// Exit status: 0 success, 2 configuration error, 3 numerical failure, 4 I/O error.

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "qlrecover/experiment.hpp"

namespace {

struct Options {
  std::string config;
  std::string out;
  std::optional<long long> seed;
  std::string method;
  bool quiet = false;
};

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config, "experiment configuration (INI)")->required();
  cmd->add_option("--out", o.out, "output directory (overrides run.output)");
  cmd->add_option("--seed", o.seed, "random seed (overrides run.seed)");
  cmd->add_option("--method", o.method, "propagator method")->check(CLI::IsMember({"stepper", "series"}));
  cmd->add_flag("--quiet", o.quiet, "suppress progress output");
}

// Best effort: a failure report next to the other artifacts when the output
// directory is known, always a one-line summary on stderr.
void report_failure(const std::string& verb, const std::string& category, const std::string& message,
                    const std::optional<qlr::fs::path>& dir) {
  std::cerr << "qlrecover " << verb << ": " << category << " error: " << message << "\n";
  if (!dir) return;
  try {
    qlr::write_atomic(*dir / "report.json", qlr::render_json(qlr::failure_report(verb, category, message)));
  } catch (const std::exception&) {
  }
}

int run(qlr::Verb verb, const Options& o) {
  const std::string vname = qlr::to_string(verb);
  std::optional<qlr::fs::path> out_dir;
  if (!o.out.empty()) out_dir = o.out;
  try {
    const qlr::fs::path cfg_path(o.config);
    const std::string text = qlr::read_text(cfg_path);
    qlr::ExperimentConfig cfg = qlr::parse_config(text, cfg_path.parent_path());
    if (o.seed) {
      if (*o.seed < 0) throw qlr::ConfigError("--seed: must be non-negative");
      cfg.seed = static_cast<std::uint64_t>(*o.seed);
    }
    if (!o.method.empty()) cfg.solver.method = qlr::detail::parse_method(o.method);
    if (!out_dir) out_dir = qlr::fs::path(cfg.output);

    if (verb == qlr::Verb::Validate) {
      if (!o.quiet) {
        const auto model = qlr::build_model(cfg);
        for (const auto& e : qlr::validate_exponents(*model).entries)
          std::cout << (e.pass ? "ok    " : "FAIL  ") << e.name << "\n";
        std::cout << "config valid\n";
      }
      return qlr::kExitOk;
    }

    if (!o.quiet) std::cout << "qlrecover " << vname << ": " << qlr::to_string(cfg.model.kind) << ", n=" << cfg.grid.n
                            << ", K=" << cfg.time.K << " -> " << out_dir->string() << "\n";
    const qlr::RunArtifacts a = qlr::run_experiment(cfg, verb, *out_dir);
    if (a.exit_code != qlr::kExitOk) {
      std::cerr << "qlrecover " << vname << ": numerical failure, see " << a.report.string() << "\n";
    } else if (!o.quiet) {
      std::cout << "report: " << a.report.string() << "\n";
    }
    return a.exit_code;
  } catch (const qlr::ConfigError& e) {
    report_failure(vname, "config", e.what(), verb == qlr::Verb::Validate ? std::nullopt : out_dir);
    return qlr::kExitConfig;
  } catch (const qlr::IoError& e) {
    report_failure(vname, "io", e.what(), std::nullopt);
    return qlr::kExitIo;
  } catch (const qlr::NumericalError& e) {
    report_failure(vname, "numerical", e.what(), out_dir);
    return qlr::kExitNumerical;
  } catch (const qlr::ModelError& e) {
    report_failure(vname, "numerical", e.what(), out_dir);
    return qlr::kExitNumerical;
  } catch (const std::filesystem::filesystem_error& e) {
    report_failure(vname, "io", e.what(), std::nullopt);
    return qlr::kExitIo;
  }
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Recover initial states of quasilinear parabolic problems from time-averaged data"};
  app.require_subcommand(1);
  Options o;
  const std::pair<const char*, qlr::Verb> verbs[] = {
      {"recover", qlr::Verb::Recover}, {"forward", qlr::Verb::Forward}, {"scan", qlr::Verb::Scan},
      {"probe", qlr::Verb::Probe},     {"validate", qlr::Verb::Validate}};
  const char* help[] = {"fixed-point recovery of u(0)", "forward solve from the configured u0",
                        "smallness scan over data amplitudes", "random-start contraction probe",
                        "check configuration and exponent book only"};
  std::vector<std::pair<CLI::App*, qlr::Verb>> cmds;
  for (std::size_t k = 0; k < 5; ++k) {
    CLI::App* cmd = app.add_subcommand(verbs[k].first, help[k]);
    add_common(cmd, o);
    cmds.emplace_back(cmd, verbs[k].second);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : qlr::kExitConfig;
  }
  for (const auto& [cmd, verb] : cmds)
    if (cmd->parsed()) return run(verb, o);
  return qlr::kExitConfig;
}
