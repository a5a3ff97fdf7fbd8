// prism: corpus generation, training, ablation sweeps, gate traces and reports.
//
// Exit codes: 0 success, 1 config error, 2 I/O error, 3 numeric divergence.

#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "prism/error.hpp"
#include "prism/harness.hpp"

namespace {

struct Common {
  std::string config;
  std::optional<std::string> seed;
  std::optional<std::string> lambda;
  std::optional<std::string> method;
  std::optional<std::string> out;
  std::optional<std::string> corpus;
  std::vector<std::string> sets;  // key=value overrides
};

void add_common(CLI::App* cmd, Common& c, bool training) {
  cmd->add_option("--config", c.config, "key = value config file");
  cmd->add_option("--seed", c.seed, "RNG seed");
  cmd->add_option("--out", c.out, "output directory");
  cmd->add_option("--set", c.sets, "override a config key (key=value)");
  if (training) {
    cmd->add_option("--lambda", c.lambda, "complement loss weight");
    cmd->add_option("--method", c.method, "sft|prism|knowledge_mask|prism_no_gate|prism_no_mask");
    cmd->add_option("--corpus", c.corpus, "corpus JSONL");
  }
}

prism::KeyValues load(const Common& c) {
  prism::KeyValues kv;
  if (!c.config.empty()) kv = prism::read_config_file(c.config);
  for (const auto& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw prism::ConfigError("--set expects key=value, got '" + s + "'");
    prism::set_value(kv, s.substr(0, eq), s.substr(eq + 1));
  }
  if (c.seed) prism::set_value(kv, "seed", *c.seed);
  if (c.lambda) prism::set_value(kv, "lambda", *c.lambda);
  if (c.method) prism::set_value(kv, "method", *c.method);
  if (c.out) prism::set_value(kv, "out", *c.out);
  if (c.corpus) prism::set_value(kv, "corpus", *c.corpus);
  return kv;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> items;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) items.push_back(item);
  }
  return items;
}

double parse_double(const std::string& text) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != text.size() || text.empty()) throw prism::ConfigError("not a number: '" + text + "'");
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"prism: risk-aware complement training on a synthetic fact corpus"};
  app.require_subcommand(1);

  Common pre, tr, ab;
  auto* preprocess = app.add_subcommand("preprocess", "generate, verify and write the corpus");
  add_common(preprocess, pre, false);

  auto* train = app.add_subcommand("train", "train one run and write its metrics");
  add_common(train, tr, true);

  auto* ablate = app.add_subcommand("ablate", "sweep lambda (and methods) against a lambda 0 baseline");
  add_common(ablate, ab, true);
  std::string lambdas = "0,0.01,0.1,0.5,1";
  std::string methods = "prism";
  ablate->add_option("--lambdas", lambdas, "comma separated lambda list (must include 0)");
  ablate->add_option("--methods", methods, "comma separated method list");

  auto* trace = app.add_subcommand("trace", "dump per-token gate decisions for a corpus slice");
  prism::TraceOptions trace_opts;
  std::string trace_config;
  trace->add_option("--checkpoint", trace_opts.checkpoint, "checkpoint.json")->required();
  trace->add_option("--corpus", trace_opts.corpus, "corpus JSONL")->required();
  trace->add_option("--first", trace_opts.first, "first example index");
  trace->add_option("--count", trace_opts.count, "number of examples");
  trace->add_option("--out", trace_opts.out_file, "output JSONL");
  trace->add_option("--config", trace_config, "config the checkpoint must match");

  auto* report = app.add_subcommand("report", "delta table across finished runs");
  std::vector<std::string> runs;
  std::string baseline, report_out;
  report->add_option("--runs", runs, "run directories")->required();
  report->add_option("--baseline", baseline, "baseline run directory (default: first run)");
  report->add_option("--out", report_out, "directory for report.csv and report.txt");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*preprocess) {
      const auto config = prism::preprocess_config_from(load(pre));
      const auto result = prism::cmd_preprocess(config);
      std::cout << result.table;
      std::cout << "wrote " << result.corpus_path.string() << "\n";
    } else if (*train) {
      const auto config = prism::run_config_from(load(tr));
      const auto outcome = prism::cmd_train(config);
      for (const auto& [name, value] : outcome.report.metrics) {
        std::cout << name << " " << prism::format_decimal(value) << "\n";
      }
      std::cout << "wrote " << config.out_dir.string() << "\n";
    } else if (*ablate) {
      const auto config = prism::run_config_from(load(ab));
      std::vector<double> lambda_values;
      for (const auto& s : split_list(lambdas)) lambda_values.push_back(parse_double(s));
      std::vector<prism::Method> method_values;
      for (const auto& s : split_list(methods)) method_values.push_back(prism::parse_method(s));
      const auto outcome = prism::cmd_ablate(config, lambda_values, method_values);
      std::cout << outcome.summary;
      if (!outcome.failures.empty()) return 3;
    } else if (*trace) {
      if (!trace_config.empty()) {
        trace_opts.expected = prism::run_config_from(prism::read_config_file(trace_config));
      }
      const auto rows = prism::cmd_trace(trace_opts);
      std::cout << "wrote " << rows << " rows to " << trace_opts.out_file.string() << "\n";
    } else if (*report) {
      std::vector<std::filesystem::path> dirs(runs.begin(), runs.end());
      std::optional<std::filesystem::path> base, out;
      if (!baseline.empty()) base = baseline;
      if (!report_out.empty()) out = report_out;
      std::cout << prism::cmd_report(dirs, base, out);
    }
  } catch (const prism::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const prism::AnnotationError& e) {
    std::cerr << "annotation error: " << e.what() << "\n";
    return 1;
  } catch (const prism::InputError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return 1;
  } catch (const prism::EmptyBatchError& e) {
    std::cerr << "empty batch: " << e.what() << "\n";
    return 1;
  } catch (const prism::IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return 2;
  } catch (const prism::DivergenceError& e) {
    std::cerr << e.what() << "\n";
    return 3;
  } catch (const prism::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const prism::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
