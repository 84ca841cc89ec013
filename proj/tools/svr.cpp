// svr: simulate paired sensor streams, colocate, fuse, and tabulate reports.
//
// Exit status: 0 success, 2 bad configuration or input, 3 runtime abort.

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "svr/pipeline.hpp"
#include "svr/record.hpp"

namespace fs = std::filesystem;
using namespace svr;

namespace {

constexpr int kExitInput = 2;
constexpr int kExitRuntime = 3;

struct Common {
  std::uint64_t seed = 0;
  bool seed_set = false;
  int workers = 1;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, const char* out_help) {
  cmd->add_option("--seed", c.seed, "Seed (overrides the scenario seed for simulate; match noise for fuse)")
      ->each([&c](const std::string&) { c.seed_set = true; });
  cmd->add_option("--workers", c.workers, "Worker threads; output does not depend on it")
      ->check(CLI::Range(1, 256))
      ->capture_default_str();
  cmd->add_option("--out", c.out, out_help)->required();
}

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  detail::write_file(p, text);
}

int input_error(const std::string& msg) {
  std::cerr << "svr: " << msg << '\n';
  return kExitInput;
}

bool is_input_error(ErrorCode c) {
  switch (c) {
    case ErrorCode::Config:
    case ErrorCode::UnsupportedVersion:
    case ErrorCode::CorruptRecord:
    case ErrorCode::InvalidArgument:
      return true;
    default:
      return false;
  }
}

int cmd_simulate(const std::string& config, const Common& c) {
  Scenario sc = load_scenario(config);
  if (c.seed_set) sc.seed = c.seed;
  try {
    const DatasetRecord rec = run_scenario(sc);
    (void)write_record(rec, c.out);
    std::cout << "wrote " << rec.lidar.size() << " lidar, " << rec.camera.size() << " camera frames to " << c.out
              << '\n';
    return 0;
  } catch (const ScenarioAbortError& e) {
    (void)write_record(e.partial(), c.out);
    std::cerr << "svr: " << e.what() << "; partial dataset (" << e.partial().lidar.size() << " lidar frames) in "
              << c.out << '\n';
    return kExitRuntime;
  }
}

int cmd_colocate(const std::string& dataset, const std::string& config, double rate, const Common& c) {
  ColocateConfig cfg;
  if (!config.empty()) cfg = colocate_config_from_json(read_json_file(config));
  if (rate > 0.0) cfg.colocation_rate_hz = rate;
  const DatasetRecord rec = read_record(dataset);
  const ColocateRun run = run_colocation(rec, cfg, c.workers);
  const Json report = colocate_report(run, rec);
  const fs::path out(c.out);
  write_text(out, report.dump(2) + "\n");
  fs::path csv = out;
  csv.replace_extension(".csv");
  write_text(csv, colocate_csv(report));
  const auto& me = report["aggregates"]["matching_error_m"]["mean"];
  std::cout << "colocated " << run.frames.size() << " frames at " << run.effective_rate_hz
            << " Hz; mean matching error " << (me.is_null() ? std::string("n/a") : std::to_string(me.get<double>()))
            << " m\n";
  return 0;
}

int cmd_fuse(const std::string& dataset, const std::string& config, bool no_maaf, bool images, const Common& c) {
  FuseConfig cfg;
  if (!config.empty()) cfg = fuse_config_from_json(read_json_file(config));
  if (no_maaf) {
    cfg.maaf = false;
    if (cfg.label == FuseConfig{}.label) cfg.label += "-no-maaf";
  }
  cfg.write_images = images;
  const DatasetRecord rec = read_record(dataset);
  const std::uint64_t seed = c.seed_set ? c.seed : rec.scenario.seed;
  const FuseRun run = run_fuse(rec, cfg, seed, c.workers);
  const Json report = fuse_report(run, rec);
  const fs::path out(c.out);
  write_text(out, report.dump(2) + "\n");
  if (images) {
    const fs::path dir = out.parent_path() / (out.stem().string() + "_images");
    fs::create_directories(dir);
    for (const auto& f : run.frames) {
      if (f.skipped || f.augmented.data.empty()) continue;
      detail::write_file(dir / (detail::frame_stem("augmented", f.index) + ".ppm"), detail::encode_image(f.augmented));
    }
  }
  const auto& od = report["aggregates"]["object_deviation"]["mean"];
  std::cout << "fused " << run.frames.size() << " frames (" << run.skipped << " skipped); mean OD "
            << (od.is_null() ? std::string("n/a") : std::to_string(od.get<double>())) << '\n';
  return 0;
}

int cmd_evaluate(const std::vector<std::string>& reports, const Common& c) {
  std::vector<TableRow> rows;
  for (const auto& path : reports) rows.push_back(table_row(load_report(path), fs::path(path).stem().string()));
  const fs::path out(c.out);
  fs::create_directories(out);
  detail::write_file(out / "table.csv", table_csv(rows));
  detail::write_file(out / "table.md", table_markdown(rows));
  std::cout << table_markdown(rows);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Twin-world colocation and synthesis toolkit"};
  app.require_subcommand(1);

  Common common;
  std::string config, dataset;
  double rate = 0.0;
  bool no_maaf = false, images = false;
  std::vector<std::string> reports;

  auto* sim = app.add_subcommand("simulate", "Run a scenario and write its dataset");
  sim->add_option("--config", config, "Scenario JSON")->required()->check(CLI::ExistingFile);
  add_common(sim, common, "Dataset directory");

  auto* col = app.add_subcommand("colocate", "Estimate state and extrinsics over a dataset");
  col->add_option("--dataset", dataset, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  col->add_option("--config", config, "Colocation config JSON")->check(CLI::ExistingFile);
  col->add_option("--rate", rate, "Colocation rate in Hz (overrides config and scenario)")->check(CLI::PositiveNumber);
  add_common(col, common, "Report JSON path (a CSV is written next to it)");

  auto* fuse = app.add_subcommand("fuse", "Register and composite virtual objects onto real images");
  fuse->add_option("--dataset", dataset, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  fuse->add_option("--config", config, "Fuse config JSON")->check(CLI::ExistingFile);
  fuse->add_flag("--no-maaf", no_maaf, "Estimate from all matches");
  fuse->add_flag("--images", images, "Write augmented frames as PPM next to the report");
  add_common(fuse, common, "Report JSON path");

  auto* eval = app.add_subcommand("evaluate", "Tabulate reports as CSV and Markdown");
  eval->add_option("reports", reports, "Report JSON files")->required()->check(CLI::ExistingFile);
  add_common(eval, common, "Output directory for table.csv and table.md");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitInput;
  }

  try {
    if (*sim) return cmd_simulate(config, common);
    if (*col) return cmd_colocate(dataset, config, rate, common);
    if (*fuse) return cmd_fuse(dataset, config, no_maaf, images, common);
    if (*eval) return cmd_evaluate(reports, common);
  } catch (const Error& e) {
    std::cerr << "svr: " << e.what() << '\n';
    return is_input_error(e.code()) ? kExitInput : kExitRuntime;
  } catch (const Json::exception& e) {
    return input_error(e.what());
  } catch (const fs::filesystem_error& e) {
    return input_error(e.what());
  } catch (const std::exception& e) {
    std::cerr << "svr: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitInput;
}
