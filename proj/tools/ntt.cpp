#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ntt/commands.hpp"

namespace {

using ntt::RunConfig;

// Config file first, then explicit flags, then --set overrides.
struct ConfigFlags {
  std::string config_path;
  std::vector<std::string> sets;
  std::vector<std::pair<std::string, std::string>> flags;

  void add_config(CLI::App* app) {
    app->add_option("--config", config_path, "flat key = value config file");
    app->add_option("--set", sets, "override any config key (key=value), repeatable");
  }

  void flag(CLI::App* app, const std::string& name, const std::string& key, const std::string& help) {
    auto value = std::make_shared<std::string>();
    pending.push_back({app->add_option(name, *value, help), key, value});
  }

  // Bad config content is a usage error.
  RunConfig resolve() {
    try {
      RunConfig cfg = config_path.empty() ? RunConfig{} : ntt::load_config(config_path);
      for (auto& p : pending) {
        if (p.option->count() > 0) ntt::set_config_value(cfg, p.key, *p.value);
      }
      for (const auto& s : sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw ntt::Error("--set expects key=value, got '" + s + "'");
        ntt::set_config_value(cfg, s.substr(0, eq), s.substr(eq + 1));
      }
      return cfg;
    } catch (const ntt::Error& e) {
      throw ntt::UsageError(e.what());
    }
  }

  struct Pending {
    CLI::Option* option;
    std::string key;
    std::shared_ptr<std::string> value;
  };
  std::vector<Pending> pending;
};

void write_or_print(const std::string& path, const std::string& text) {
  if (path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream out(path);
  if (!out) throw ntt::Error("cannot write '" + path + "'");
  out << text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Twin cascaded attention captioning on a synthetic grounding task"};
  app.require_subcommand(1);

  ConfigFlags gen_flags;
  auto* gen = app.add_subcommand("gen", "generate a synthetic JSONL dataset");
  gen_flags.add_config(gen);
  gen_flags.flag(gen, "--seed", "seed", "generator seed");
  gen_flags.flag(gen, "--examples", "examples", "number of examples");
  gen_flags.flag(gen, "--categories", "categories", "number of categories K");
  gen_flags.flag(gen, "--out", "out", "output JSONL path");

  ConfigFlags train_flags;
  auto* train = app.add_subcommand("train", "train a decoder");
  train_flags.add_config(train);
  train_flags.flag(train, "--data", "data", "dataset JSONL");
  train_flags.flag(train, "--out", "out", "output directory");
  train_flags.flag(train, "--model", "model", "ntt or baseline");
  train_flags.flag(train, "--epochs", "epochs", "epochs");
  train_flags.flag(train, "--seed", "seed", "seed");
  std::string train_eval_split = "val";
  train->add_option("--eval-split", train_eval_split, "split scored after each epoch (train, val, test)");

  auto* eval = app.add_subcommand("eval", "score a checkpoint");
  std::string eval_ckpt, eval_data, eval_split = "test", eval_out;
  std::size_t eval_beam = 3;
  eval->add_option("--ckpt", eval_ckpt, "checkpoint")->required();
  eval->add_option("--data", eval_data, "dataset JSONL")->required();
  eval->add_option("--beam", eval_beam, "beam size")->capture_default_str();
  eval->add_option("--split", eval_split, "train, val or test")->capture_default_str();
  eval->add_option("--out", eval_out, "write metrics JSON here instead of stdout");

  auto* generate = app.add_subcommand("generate", "caption examples with bracketed grounded words");
  std::string gen_ckpt, gen_data, gen_split = "test";
  std::size_t gen_n = 5, gen_beam = 3;
  generate->add_option("--ckpt", gen_ckpt, "checkpoint")->required();
  generate->add_option("--data", gen_data, "dataset JSONL")->required();
  generate->add_option("--n", gen_n, "number of captions")->capture_default_str();
  generate->add_option("--beam", gen_beam, "beam size")->capture_default_str();
  generate->add_option("--split", gen_split, "train, val or test")->capture_default_str();

  auto* trace = app.add_subcommand("trace", "per-step gates, sentinel and attention as JSON");
  std::string trace_ckpt, trace_data, trace_out;
  std::size_t trace_index = 0;
  trace->add_option("--ckpt", trace_ckpt, "checkpoint")->required();
  trace->add_option("--data", trace_data, "dataset JSONL")->required();
  trace->add_option("--example-index", trace_index, "example index in the file")->capture_default_str();
  trace->add_option("--out", trace_out, "write JSON here instead of stdout");

  ConfigFlags cmp_flags;
  auto* compare = app.add_subcommand("compare", "NTT vs baseline over several seeds");
  cmp_flags.add_config(compare);
  cmp_flags.flag(compare, "--data", "data", "dataset JSONL");
  cmp_flags.flag(compare, "--seeds", "seeds", "number of seeds");
  cmp_flags.flag(compare, "--epochs", "epochs", "epochs per run");
  cmp_flags.flag(compare, "--beam", "beam", "beam size");
  std::string cmp_out;
  compare->add_option("--out", cmp_out, "write JSON here (table goes to stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return ntt::kExitUsage;
  }

  try {
    if (*gen) {
      RunConfig cfg = gen_flags.resolve();
      ntt::cmd_gen(cfg, cfg.out, std::cerr);
    } else if (*train) {
      RunConfig cfg = train_flags.resolve();
      const auto outcome = ntt::cmd_train(cfg, cfg.out, ntt::parse_split_arg(train_eval_split), std::cerr);
      std::cout << outcome.metrics.dump(2) << '\n';
    } else if (*eval) {
      const auto j = ntt::cmd_eval(eval_ckpt, eval_data, eval_beam, ntt::parse_split_arg(eval_split));
      write_or_print(eval_out, j.dump(2) + "\n");
    } else if (*generate) {
      for (const auto& line :
           ntt::cmd_generate(gen_ckpt, gen_data, gen_n, gen_beam, ntt::parse_split_arg(gen_split))) {
        std::cout << line << '\n';
      }
    } else if (*trace) {
      write_or_print(trace_out, ntt::cmd_trace(trace_ckpt, trace_data, trace_index).dump(2) + "\n");
    } else if (*compare) {
      const auto j = ntt::cmd_compare(cmp_flags.resolve(), std::cerr);
      std::cout << ntt::format_compare_table(j);
      if (!cmp_out.empty()) write_or_print(cmp_out, j.dump(2) + "\n");
    }
  } catch (const ntt::UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return ntt::kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return ntt::kExitRuntime;
  }
  return ntt::kExitOk;
}
