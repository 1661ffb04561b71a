#include <functional>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ppmu/errors.hpp"
#include "ppmu/pipeline.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitOther = 1;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

struct SubcommandArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;
};

void add_common_options(CLI::App* sub, SubcommandArgs& args) {
  sub->add_option("-c,--config", args.config_path, "Config file (key = value lines)");
  sub->add_option("--set", args.overrides,
                  "Override a config entry, e.g. --set train.epochs=50 (repeatable)");
  sub->add_option("-o,--out", args.out_dir, "Output directory (sets out.dir)");
}

ppmu::Config load_config(const SubcommandArgs& args) {
  ppmu::Config cfg;
  if (!args.config_path.empty()) cfg = ppmu::Config::parse_file(args.config_path);
  for (const auto& kv : args.overrides) cfg.set_kv(kv);
  if (!args.out_dir.empty()) cfg.set("out.dir", args.out_dir);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Uncertainty-aware process monitoring models"};
  app.require_subcommand(1);

  std::map<std::string, SubcommandArgs> args;
  std::map<std::string, std::function<void(const ppmu::Config&)>> handlers = {
      {"prepare", ppmu::cmd_prepare}, {"synth", ppmu::cmd_synth},
      {"train", ppmu::cmd_train},     {"predict", ppmu::cmd_predict},
      {"evaluate", ppmu::cmd_evaluate}, {"sweep", ppmu::cmd_sweep}};
  const std::map<std::string, std::string> help = {
      {"prepare", "Parse an event log CSV, split it and write prefix datasets"},
      {"synth", "Generate a synthetic event log or 1D regression set"},
      {"train", "Train a model on prepared prefixes"},
      {"predict", "Write predictions with uncertainty for a checkpoint"},
      {"evaluate", "Retention curves, calibration and early-prediction buckets"},
      {"sweep", "Train the technique grid over data fractions and repeats"}};

  for (const auto& [name, fn] : handlers) {
    CLI::App* sub = app.add_subcommand(name, help.at(name));
    add_common_options(sub, args[name]);
    sub->callback([&, name]() {
      handlers.at(name)(load_config(args.at(name)));
    });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const ppmu::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ppmu::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const ppmu::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitOther;
  }
  return kExitOk;
}
