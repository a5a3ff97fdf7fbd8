// Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any
// failure. Criteria 6-8 train on the default generated corpus and take a
// couple of minutes.

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "prism/corpus.hpp"
#include "prism/fact_graph.hpp"
#include "prism/finite_difference.hpp"
#include "prism/harness.hpp"
#include "prism/objective.hpp"
#include "prism/trainer.hpp"

using namespace prism;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

int failures = 0;

void report(int id, bool pass, const std::string& detail) {
  std::printf("[%s] criterion %d: %s\n", pass ? "PASS" : "FAIL", id, detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

void gate_oracle() {
  const auto start = Clock::now();
  std::mt19937_64 rng(1001);
  std::uniform_int_distribution<std::size_t> vocab(2, 64);
  std::uniform_real_distribution<double> weight(0.0, 1.0);
  std::size_t draws = 0, agree = 0;
  while (draws < 20000) {
    const auto v = vocab(rng);
    const auto label = static_cast<TokenId>(rng() % v);
    const auto p = oracle::simplex_with_top_label(rng, v, label);
    if (!(p[label] > max_competitor(p, label))) continue;
    const double w = weight(rng);
    const auto moved = redistribute(p, label, w);
    const bool kept = moved[label] >= max_competitor(moved, label);
    ++draws;
    if (keep_gate(p[label], max_competitor(p, label), w) == kept &&
        kept == oracle::label_survives_reallocation(p, label, w)) {
      ++agree;
    }
  }
  const double t = seconds_since(start);
  report(1, agree == draws && t < 10.0,
         fmt("keep gate vs redistribute-then-argmax %zu/%zu agree in %.2f s (limit 10 s)", agree,
             draws, t));
}

void simplex() {
  std::mt19937_64 rng(1002);
  std::uniform_real_distribution<double> weight(0.0, 1.0);
  double worst_sum = 0.0, min_entry = 1.0;
  for (int i = 0; i < 10000; ++i) {
    const std::size_t v = 2 + rng() % 63;
    const auto label = static_cast<TokenId>(rng() % v);
    const auto p = oracle::simplex_with_top_label(rng, v, static_cast<TokenId>(rng() % v));
    const auto moved = redistribute(p, label, weight(rng));
    worst_sum = std::max(worst_sum, std::abs(std::accumulate(moved.begin(), moved.end(), 0.0) - 1.0));
    min_entry = std::min(min_entry, *std::min_element(moved.begin(), moved.end()));
  }
  report(2, worst_sum <= 1e-12 && min_entry >= 0.0,
         fmt("10000 draws, max |sum - 1| = %.3g (limit 1e-12), min entry = %.3g", worst_sum,
             min_entry));
}

void gradients() {
  std::mt19937_64 rng(1003);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double worst_sft = 0, worst_comp = 0, worst_total = 0, worst_row = 0;
  std::size_t batches = 0, active_rows = 0;
  while (batches < 200) {
    const std::size_t rows = 1 + rng() % 8, v = 2 + rng() % 15;
    auto z = fixture::random_logits(rng, rows, v, 1.5);
    std::vector<TokenId> y(rows);
    for (auto& l : y) l = static_cast<TokenId>(rng() % v);
    TokenSignals s;
    for (std::size_t t = 0; t < rows; ++t) {
      s.valid_mask.push_back(t == 0 || unit(rng) < 0.9);
      s.fact_mask.push_back(s.valid_mask.back() && unit(rng) < 0.6);
      s.support_weight.push_back(unit(rng));
    }
    const auto variant = batches % 2 ? AlphaVariant::full : AlphaVariant::no_gate;
    const double lambda = 0.1 + unit(rng);
    auto total = total_loss(z, y, s, lambda, kDefaultClampEpsilon, variant);
    std::vector<double> alpha;
    bool near_clamp = false;
    for (const auto& r : total.trace) {
      alpha.push_back(r.alpha);
      near_clamp = near_clamp || r.p_label > 1.0 - 1e-3;
      active_rows += r.alpha > 0.0;
    }
    if (near_clamp) continue;
    ++batches;
    std::size_t n_fact = 0;
    for (auto m : s.fact_mask) n_fact += m;
    auto sft_fn = [&](const Matrix& m) { return oracle::sft_value(m, y, s.valid_mask); };
    auto comp_fn = [&](const Matrix& m) {
      return oracle::comp_value(m, y, alpha, n_fact, kDefaultClampEpsilon);
    };
    auto sft = sft_loss(z, y, s.valid_mask);
    auto comp = comp_loss(z, y, s, kDefaultClampEpsilon, variant);
    worst_sft = std::max(worst_sft, max_relative_error(sft.gradient.values(),
                                                       finite_difference_gradient(sft_fn, z, 1e-5).values(), 1e-6));
    worst_comp = std::max(worst_comp, max_relative_error(comp.gradient.values(),
                                                         finite_difference_gradient(comp_fn, z, 1e-5).values(), 1e-6));
    auto fd_total = finite_difference_gradient(
        [&](const Matrix& m) { return sft_fn(m) + lambda * comp_fn(m); }, z, 1e-5);
    worst_total = std::max(worst_total, max_relative_error(total.gradient.values(), fd_total.values(), 1e-6));
    for (std::size_t t = 0; t < rows; ++t) {
      const auto g = comp.gradient.row(t);
      worst_row = std::max(worst_row, std::abs(std::accumulate(g.begin(), g.end(), 0.0)));
    }
  }
  const bool pass = worst_sft <= 1e-5 && worst_comp <= 1e-5 && worst_total <= 1e-5 &&
                    worst_row <= 1e-12 && active_rows > 0;
  report(3, pass,
         fmt("%zu batches (%zu active rows), max rel err sft %.2g comp %.2g total %.2g "
             "(limit 1e-5), max comp row sum %.2g (limit 1e-12)",
             batches, active_rows, worst_sft, worst_comp, worst_total, worst_row));
}

void hand_examples() {
  const bool closed = !keep_gate(0.6, 0.3, 0.5);
  const bool open = keep_gate(0.9, 0.05, 0.5);
  const std::vector<double> p{0.7, 0.2, 0.1};
  const auto g = complement_gradient(p, 0, 1.0, 1);
  const std::vector<double> expect{0.7, -7.0 / 15.0, -7.0 / 30.0};
  double worst = 0.0;
  for (std::size_t k = 0; k < 3; ++k) worst = std::max(worst, std::abs(g[k] - expect[k]));
  report(4, closed && open && worst <= 1e-12,
         fmt("keep(0.6,0.3,0.5)=%d keep(0.9,0.05,0.5)=%d, gradient max abs err %.2g (limit 1e-12)",
             closed ? 0 : 1, open ? 1 : 0, worst));
}

bool same_bits(double a, double b) { return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b); }

bool identical_runs(const TrainResult& a, const TrainResult& b) {
  if (a.log.size() != b.log.size() || !(a.params == b.params)) return false;
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    const auto& x = a.log[i];
    const auto& y = b.log[i];
    if (!same_bits(x.loss.sft, y.loss.sft) || !same_bits(x.loss.total, y.loss.total) ||
        !same_bits(x.mean_p_risky, y.mean_p_risky) || !same_bits(x.mean_p_safe_fact, y.mean_p_safe_fact)) {
      return false;
    }
  }
  return true;
}

void degeneracy() {
  auto gen = fixture::small_corpus_config(300, 11);
  const auto corpus = generate(gen);
  TrainConfig c;
  c.steps = 200;
  c.seed = 5;
  c.method = Method::sft;
  const auto sft = train(corpus, c);
  c.method = Method::prism;
  c.lambda = 0.0;
  const auto prism0 = train(corpus, c);
  const bool lambda_zero = identical_runs(sft, prism0);

  gen.corruption_fraction = 0.0;
  const auto clean = generate(gen);
  c.method = Method::sft;
  const auto clean_sft = train(clean, c);
  c.method = Method::knowledge_mask;
  const auto masked = train(clean, c);
  const bool mask_same = identical_runs(clean_sft, masked);
  report(5, lambda_zero && mask_same,
         fmt("200 steps: prism(lambda=0) vs sft %s; knowledge_mask vs sft on a fully supported "
             "corpus %s",
             lambda_zero ? "bit-identical" : "DIFFER", mask_same ? "bit-identical" : "DIFFER"));
}

struct Sweep {
  std::vector<double> lambdas{0.0, 0.01, 0.1, 0.5, 1.0};
  std::vector<MetricsReport> prism;
  MetricsReport no_gate, no_mask;
  double seconds_lambda0 = 0, seconds_lambda01 = 0, seconds_preprocess = 0;
  std::size_t vocab = 0, examples = 0;
};

Sweep run_sweep(const fs::path& dir) {
  Sweep s;
  auto start = Clock::now();
  PreprocessConfig pre;
  pre.out_dir = dir;
  const auto corpus = cmd_preprocess(pre);
  s.seconds_preprocess = seconds_since(start);
  const auto kept = read_jsonl(corpus.corpus_path);
  s.examples = kept.size();
  for (const auto& ex : kept) {
    for (auto t : ex.target_tokens) s.vocab = std::max<std::size_t>(s.vocab, t + 1);
    for (auto t : ex.input_tokens) s.vocab = std::max<std::size_t>(s.vocab, t + 1);
  }

  RunConfig base;
  base.corpus = corpus.corpus_path;
  for (double lambda : s.lambdas) {
    auto c = base;
    c.train.lambda = lambda;
    c.out_dir = dir / ("prism_" + std::to_string(lambda));
    start = Clock::now();
    s.prism.push_back(cmd_train(c).report);
    if (lambda == 0.0) s.seconds_lambda0 = seconds_since(start);
    if (lambda == 0.1) s.seconds_lambda01 = seconds_since(start);
  }
  for (auto method : {Method::prism_no_gate, Method::prism_no_mask}) {
    auto c = base;
    c.train.method = method;
    c.out_dir = dir / to_string(method);
    (method == Method::prism_no_gate ? s.no_gate : s.no_mask) = cmd_train(c).report;
  }
  return s;
}

void mechanism(const Sweep& s) {
  const auto& b = s.prism[0];
  const auto& r = s.prism[2];
  const double drop = (b.metric("risky_p_label") - r.metric("risky_p_label")) / b.metric("risky_p_label");
  const double top1_drop = b.metric("nonfact_top1") - r.metric("nonfact_top1");
  const double seconds = s.seconds_preprocess + s.seconds_lambda0 + s.seconds_lambda01;
  report(6, drop >= 0.10 && top1_drop <= 0.02 && seconds < 300.0 && s.vocab <= 128,
         fmt("%zu examples, V=%zu: risky p_label %.4f -> %.4f (%.1f%% drop, need >= 10%%), "
             "non-fact top-1 %.4f -> %.4f (drop %.2f points, limit 2), %.0f s (limit 300 s)",
             s.examples, s.vocab, b.metric("risky_p_label"), r.metric("risky_p_label"), 100 * drop,
             b.metric("nonfact_top1"), r.metric("nonfact_top1"), 100 * top1_drop, seconds));
}

void tradeoff(const Sweep& s) {
  const double p0 = s.prism[0].metric("risky_p_label");
  std::string trend;
  bool monotone = true;
  double prev = 0.0;
  for (std::size_t i = 0; i < s.prism.size(); ++i) {
    const double sup = (p0 - s.prism[i].metric("risky_p_label")) / p0;
    if (i > 0 && sup < prev) monotone = false;
    prev = sup;
    trend += fmt("%s%g:%.4f", i ? " " : "", s.lambdas[i], sup);
  }
  const double cap01 = s.prism[2].metric("nonfact_top1");
  const double cap1 = s.prism[4].metric("nonfact_top1");
  report(7, monotone && cap1 <= cap01,
         fmt("suppression by lambda {%s} %s; non-fact top-1 at lambda=1 %.4f vs lambda=0.1 %.4f",
             trend.c_str(), monotone ? "non-decreasing" : "NOT monotone", cap1, cap01));
}

void components(const Sweep& s) {
  const auto& prism = s.prism[2];
  const double off_gate = s.no_gate.metric("off_target_events");
  const double off_prism = prism.metric("off_target_events");
  const double mask_active = s.no_mask.metric("nonfact_active_events");
  const double prism_active = prism.metric("nonfact_active_events");
  report(8, off_gate > off_prism && off_prism == 0.0 && mask_active > 0.0 && prism_active == 0.0,
         fmt("off-target events no_gate %.0f vs prism %.0f; non-fact alpha>0 events no_mask %.0f "
             "vs prism %.0f",
             off_gate, off_prism, mask_active, prism_active));
}

void propagation() {
  std::mt19937_64 rng(1009);
  std::size_t agree = 0;
  const std::size_t total = 1000;
  for (std::size_t i = 0; i < total; ++i) {
    auto dag = fixture::random_dag(rng, 10, 0.35);
    agree += propagate_risk(dag.sentences, dag.edges).effective_risk ==
             oracle::onehop_risk(dag.sentences, dag.edges);
  }
  report(9, agree == total, fmt("%zu/%zu random DAGs match the literal evaluator exactly", agree, total));
}

void round_trip(const fs::path& dir) {
  bool identical = true;
  for (std::uint64_t seed : {3, 4, 5}) {
    const auto corpus = generate(fixture::small_corpus_config(200, seed));
    const auto path = dir / ("round_trip_" + std::to_string(seed) + ".jsonl");
    write_jsonl(corpus, path);
    identical = identical && read_jsonl(path) == corpus;
  }
  const auto clean = generate(fixture::small_corpus_config(200, 6));
  auto defective = clean;
  plant_defects(defective, 25);
  std::set<std::size_t> planted, rejected;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    if (!(clean[i] == defective[i])) planted.insert(i);
  }
  const auto filtered = verify_and_filter(defective);
  for (const auto& r : filtered.rejected) rejected.insert(r.index);
  const bool exact = planted.size() == 25 && planted == rejected &&
                     filtered.kept.size() == clean.size() - planted.size();
  report(10, identical && exact,
         fmt("write/read identity %s; %zu planted defects, %zu rejected, sets %s", identical ? "holds" : "BROKEN",
             planted.size(), rejected.size(), planted == rejected ? "equal" : "DIFFER"));
}

}  // namespace

int main() {
  const auto dir = fs::temp_directory_path() / "prism_acceptance";
  fs::remove_all(dir);
  fs::create_directories(dir);

  gate_oracle();
  simplex();
  gradients();
  hand_examples();
  degeneracy();
  const auto sweep = run_sweep(dir);
  mechanism(sweep);
  tradeoff(sweep);
  components(sweep);
  propagation();
  round_trip(dir);

  std::printf("%d of 10 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
