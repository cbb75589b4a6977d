#include <gtest/gtest.h>

#include <cstdlib>
#include <sys/wait.h>

#include "support.hpp"

using testing_support::slurp;
using testing_support::TempDir;

namespace {

struct Outcome {
  int code;
  std::string out;
};

Outcome cli(const std::string &args, const std::filesystem::path &scratch) {
  const auto out = scratch / "stdout.txt";
  const std::string cmd = std::string("\"") + BACKDOORBOX_CLI + "\" " + args + " > \"" + out.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out)};
}

} // namespace

TEST(Cli, VersionFlag) {
  TempDir dir("cli_version");
  const auto r = cli("--version", dir.path());
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find(bbox::version), std::string::npos);
}

TEST(Cli, ValidateExitCodes) {
  TempDir dir("cli_validate");
  const auto good = cli("validate \"" BACKDOORBOX_SOURCE_DIR "/configs/badnets_shrinkpad.json\"", dir.path());
  EXPECT_EQ(good.code, 0) << good.out;
  EXPECT_NE(good.out.find("ok"), std::string::npos);

  bbox::json j = bbox::read_json(BACKDOORBOX_SOURCE_DIR "/configs/badnets_shrinkpad.json");
  j["defenses"][0]["params"]["pad"] = 40;
  const auto bad_path = dir.path() / "bad.json";
  std::ofstream(bad_path) << j.dump();
  const auto bad = cli("validate \"" + bad_path.string() + "\"", dir.path());
  EXPECT_EQ(bad.code, 2) << bad.out;

  std::ofstream(dir.path() / "garbage.json") << "{not json";
  EXPECT_NE(cli("validate \"" + (dir.path() / "garbage.json").string() + "\"", dir.path()).code, 0);
  EXPECT_NE(cli("validate \"" + (dir.path() / "missing.json").string() + "\"", dir.path()).code, 0);
  EXPECT_NE(cli("", dir.path()).code, 0);
}
