// backdoorbox: run, validate, or export experiment manifests.

#include <iostream>

#include <CLI11.hpp>

#include "backdoorbox/backdoorbox.hpp"

namespace {

enum Exit { ok = 0, failed = 1, invalid = 2 };

bbox::RunOverrides overrides_from(const std::optional<std::uint64_t> &seed, const std::string &output_dir,
                                  const std::string &device) {
  bbox::RunOverrides o;
  o.seed = seed;
  if (!output_dir.empty()) o.output_dir = output_dir;
  if (!device.empty()) o.device = device;
  return o;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Backdoor attack and defense experiments from JSON manifests"};
  app.set_version_flag("--version", bbox::version);
  app.require_subcommand(1);

  std::string manifest_path, output_dir, device;
  std::optional<std::uint64_t> seed;
  const auto add_common = [&](CLI::App *cmd) {
    cmd->add_option("manifest", manifest_path, "experiment manifest (JSON)")->required()->check(CLI::ExistingFile);
    cmd->add_option("--seed", seed, "override the manifest seed");
    cmd->add_option("--output-dir", output_dir, "override the manifest output_dir");
    cmd->add_option("--device", device, "CPU or GPU (GPU runs on CPU with a note)")
        ->check(CLI::IsMember({"CPU", "GPU"}));
  };
  auto *run = app.add_subcommand("run", "build poisoned data, train, apply defenses, evaluate");
  auto *validate = app.add_subcommand("validate", "check a manifest without running it");
  auto *export_poison = app.add_subcommand("export-poison", "build and export the poisoned dataset only");
  for (auto *cmd : {run, validate, export_poison}) add_common(cmd);

  CLI11_PARSE(app, argc, argv);

  try {
    const auto manifest = bbox::ExperimentManifest::load(manifest_path);
    const auto o = overrides_from(seed, output_dir, device);
    if (validate->parsed()) {
      const auto findings = bbox::validate(bbox::resolve(manifest, o));
      for (const auto &f : findings) std::cout << f << '\n';
      if (findings.empty()) std::cout << "ok\n";
      return findings.empty() ? ok : invalid;
    }
    if (export_poison->parsed()) {
      std::cout << bbox::export_poison(manifest, o).string() << '\n';
      return ok;
    }
    const auto result = bbox::run(manifest, o);
    for (const auto &r : result.reports)
      std::cout << r.experiment << ' ' << r.report.value << " (" << r.report.population << ")\n";
    for (const auto &w : result.warnings) std::cerr << "warning: " << w << '\n';
    std::cout << (result.dir / "summary.json").string() << '\n';
    return ok;
  } catch (const bbox::ValidationError &e) {
    std::cerr << "error: " << e.what() << '\n';
    return invalid;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << '\n';
    return failed;
  }
}
