// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits nonzero if any fails.

#include <fmt/format.h>

#include <boost/rational.hpp>
#include <chrono>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "../oracles.hpp"
#include "paco/data.hpp"
#include "paco/eval.hpp"
#include "paco/gradcheck.hpp"
#include "paco/losses.hpp"
#include "paco/queue.hpp"
#include "paco/theory.hpp"
#include "paco/trainer.hpp"

using namespace paco;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

Matrix random_rows(Rng& rng, std::size_t n, std::size_t dim) {
  Matrix m(n, dim);
  for (std::size_t i = 0; i < n; ++i) {
    const auto v = rng.unit_vector(dim);
    std::copy(v.begin(), v.end(), m.row(i).begin());
  }
  return m;
}

CenterBank random_bank(Rng& rng, std::size_t n, std::size_t dim) {
  CenterBank bank{Matrix(n, dim), Vector(n)};
  for (double& c : bank.centers.data()) c = rng.normal() / std::sqrt(static_cast<double>(dim));
  double total = 0.0;
  for (double& q : bank.class_freq) total += (q = rng.uniform(0.1, 1.0));
  for (double& q : bank.class_freq) q /= total;
  return bank;
}

Outcome supcon_optimum_check() {
  double worst = 0.0;
  bool converged = true;
  for (std::size_t k : {1u, 2u, 4u, 8u, 64u}) {
    const auto r = theory::simplex_oracle(theory::SimplexProblem::kSupCon, k, 0.0);
    converged = converged && r.converged;
    for (double p : r.pair_probs) worst = std::max(worst, std::abs(p - 1.0 / static_cast<double>(k)));
  }
  return {converged && worst < 1e-6, fmt::format("max |p - 1/K| = {:.2e}", worst)};
}

Outcome paco_optimum_check() {
  double worst = 0.0;
  bool converged = true;
  for (double alpha : {0.02, 0.05, 0.2, 0.5, 0.9}) {
    for (std::size_t k : {1u, 2u, 4u, 8u, 64u}) {
      const auto r = theory::simplex_oracle(theory::SimplexProblem::kPaco, k, alpha);
      converged = converged && r.converged;
      const double denom = 1.0 + alpha * static_cast<double>(k);
      worst = std::max(worst, std::abs(r.center_prob - 1.0 / denom));
      for (double p : r.pair_probs) worst = std::max(worst, std::abs(p - alpha / denom));
    }
  }
  return {converged && worst < 1e-6, fmt::format("max coordinate gap = {:.2e} over 25 cells", worst)};
}

Outcome extra_loss_check() {
  const double alpha = 0.05, k_star = 8.192;
  const double closed = theory::extra_loss_minimizer(alpha, k_star);
  const double brent = theory::extra_loss_search(alpha, k_star);
  const double golden = oracle::golden_section(
      [&](double p) { return -std::log(p) - alpha * k_star * std::log1p(-p); }, 1e-12, 1 - 1e-12);
  const double gap = std::max(std::abs(brent - closed), std::abs(golden - closed));
  const bool pass = gap < 1e-6 && std::abs(closed - 0.71) < 5e-3;
  return {pass, fmt::format("closed {:.6f}, Brent {:.6f}, golden {:.6f}", closed, brent, golden)};
}

Outcome gradient_check() {
  bool pass = true;
  std::string detail;
  for (auto loss : gradcheck::all_checked_losses()) {
    const auto s = gradcheck::run_suite(loss, 2024, 100);
    pass = pass && s.instances >= 100 && s.max_error < 1e-5;
    detail += fmt::format("{} {:.1e}; ", gradcheck::to_string(loss), s.max_error);
  }
  detail.resize(detail.size() - 2);
  return {pass, detail};
}

Outcome decomposition_check() {
  Rng rng(5);
  double worst = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t dim = 2 + rng.below(15), n = 2 + rng.below(9), a = rng.below(33);
    const std::size_t label = rng.below(n);
    std::vector<std::size_t> labels;
    for (std::size_t k = 0; k < a; ++k) labels.push_back(rng.uniform() < 0.3 ? label : rng.below(n));
    const auto cs = ContrastSet::from_rows(label, random_rows(rng, a, dim), labels);
    const auto bank = random_bank(rng, n, dim);
    PacoConfig cfg;
    cfg.alpha = rng.uniform(0.01, 0.99);
    cfg.temperature = rng.uniform(0.1, 1.0);
    const Vector x = rng.unit_vector(dim), g = rng.unit_vector(dim);
    const auto r = paco_loss(x, g, cs, bank, label, cfg);
    const auto b = decompose_paco(x, g, cs, bank, label, cfg);
    worst = std::max(worst, std::abs(r.breakdown.total - (b.l_sup + cfg.alpha * b.l_supcon + b.l_extra)));
  }
  return {worst < 1e-10, fmt::format("max |L - (L_sup + a L_supcon + L_extra)| = {:.2e}", worst)};
}

Outcome center_gradient_check() {
  Rng rng(6);
  double worst = 0.0;
  std::size_t sign_failures = 0, own_negative_cases = 0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t dim = 2 + rng.below(15), n = 2 + rng.below(9), k = rng.below(9);
    const std::size_t label = rng.below(n);
    const double alpha = rng.uniform(0.01, 0.9), tau = rng.uniform(0.1, 1.0);
    const std::size_t extra = rng.below(10);
    Matrix rows(k + extra, dim);
    std::vector<std::size_t> labels;
    const Vector pos = rng.unit_vector(dim);
    for (std::size_t i = 0; i < k + extra; ++i) {
      const Vector v = i < k ? pos : rng.unit_vector(dim);
      std::copy(v.begin(), v.end(), rows.row(i).begin());
      labels.push_back(i < k ? label : (label + 1 + rng.below(n - 1)) % n);
    }
    const auto cs = ContrastSet::from_rows(label, rows, labels);
    auto bank = random_bank(rng, n, dim);
    // Pull the own center toward x half the time so both sign regimes occur.
    const Vector x = rng.unit_vector(dim), g = rng.unit_vector(dim);
    if (t % 2 == 0) {
      for (std::size_t d = 0; d < dim; ++d) bank.centers(label, d) += 3.0 * x[d];
    }
    PacoConfig cfg;
    cfg.alpha = alpha;
    cfg.temperature = tau;
    cfg.scale_by_weight_sum = false;
    const auto r = paco_loss(x, g, cs, bank, label, cfg);

    std::vector<double> z;
    for (std::size_t c = 0; c < n; ++c) z.push_back(dot(bank.centers.row(c), x) / tau);
    for (std::size_t i = 0; i < rows.rows(); ++i) z.push_back(dot(rows.row(i), g) / tau);
    std::vector<double> probs;
    for (std::size_t c = 0; c < n; ++c) probs.push_back(std::exp(-oracle::direct_neg_log_prob(z, c)));

    const double ks = static_cast<double>(k);
    const auto formula = theory::center_gradient_formula(x, bank, label, alpha, ks, probs, tau);
    for (std::size_t i = 0; i < formula.size(); ++i) {
      worst = std::max(worst, std::abs(formula.data()[i] - r.grads.d_centers.data()[i]));
    }
    // Sign along x: the gradient of center c is coef_c * x / tau.
    for (std::size_t c = 0; c < n; ++c) {
      const double along = dot(r.grads.d_centers.row(c), x);
      if (c == label) {
        if (probs[c] < 1.0 / (1.0 + alpha * ks)) {
          ++own_negative_cases;
          if (!(along < 0.0)) ++sign_failures;
        }
      } else if (!(along > 0.0)) {
        ++sign_failures;
      }
    }
  }
  const bool pass = worst < 1e-8 && sign_failures == 0 && own_negative_cases > 0;
  return {pass, fmt::format("max formula gap {:.2e}, sign failures {} ({} own-center cases)", worst,
                            sign_failures, own_negative_cases)};
}

Outcome rebalance_ratio_check() {
  using Q = boost::rational<long long>;
  const Q k_head(819, 10), k_tail(33, 100);
  const Q supcon = theory::supcon_rebalance_ratio(k_head, k_tail);
  bool pass = true;
  std::string detail = fmt::format("supcon {:.2f}", boost::rational_cast<double>(supcon));
  Q previous = supcon;
  for (const Q alpha : {Q(1, 2), Q(1, 5), Q(1, 20)}) {
    // (1 / (1/alpha + K_tail)) / (1 / (1/alpha + K_head)), computed from the definition.
    const Q direct = (Q(1) / (Q(1) / alpha + k_tail)) / (Q(1) / (Q(1) / alpha + k_head));
    const Q paco = theory::paco_rebalance_ratio(alpha, k_head, k_tail);
    pass = pass && paco == direct && paco < supcon && paco < previous;
    previous = paco;
    detail += fmt::format(", alpha {} -> {:.2f}", boost::rational_cast<double>(alpha),
                          boost::rational_cast<double>(paco));
  }
  return {pass, detail};
}

struct SeedResult {
  double supcon_few = 0.0, paco_few = 0.0, supcon_cv = 0.0, paco_cv = 0.0;
};

BucketReport evaluate(const TrainResult& r, const SyntheticDataset& data, LossKind kind,
                      std::uint64_t seed) {
  Matrix classifier = r.model.bank.centers;
  if (!uses_centers(kind)) {
    std::vector<Vector> feats;
    std::vector<std::size_t> labels;
    for (std::size_t i : data.train_indices) {
      feats.push_back(r.model.represent(data.features[i]));
      labels.push_back(data.labels[i]);
    }
    ProbeConfig pc;
    pc.seed = seed;
    classifier = linear_probe(feats, labels, data.n_classes(), pc);
  }
  const auto preds = predict(r.model, data, data.test_indices, classifier);
  std::vector<std::size_t> labels;
  for (std::size_t i : data.test_indices) labels.push_back(data.labels[i]);
  return bucket_accuracy(preds, labels, data.profile);
}

Outcome desk_comparison_check() {
  std::size_t few_wins = 0, cv_wins = 0;
  std::string detail;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto data =
        sample_gaussian_mixture(exponential_profile(20, 500, 100.0), 32, 0.35, 50, seed);
    SeedResult s;
    for (LossKind kind : {LossKind::kSupcon, LossKind::kPacoRebalanced}) {
      TrainConfig cfg;
      cfg.loss_kind = kind;
      cfg.seed = seed;
      cfg.base_lr = 0.2;
      cfg.epochs = 30;
      const auto r = train(data, cfg);
      const double few = evaluate(r, data, kind, seed).few_acc.value_or(0.0);
      const auto profile = grad_norm_profile(r.model, data, cfg);
      const double cv = balance_metric(profile.norms).value;
      (kind == LossKind::kSupcon ? s.supcon_few : s.paco_few) = few;
      (kind == LossKind::kSupcon ? s.supcon_cv : s.paco_cv) = cv;
    }
    few_wins += s.supcon_few <= s.paco_few;
    cv_wins += s.paco_cv < s.supcon_cv;
    detail += fmt::format("[seed {}: few {:.2f}/{:.2f} cv {:.2f}/{:.2f}] ", seed, s.supcon_few,
                          s.paco_few, s.supcon_cv, s.paco_cv);
  }
  detail += fmt::format("few {}/5, cv {}/5 (supcon/paco_rebalanced)", few_wins, cv_wins);
  return {few_wins >= 4 && cv_wins >= 4, detail};
}

Outcome convergence_probability_check() {
  const auto data =
      sample_gaussian_mixture(LongTailProfile{{50, 50, 50, 50}}, 32, 0.35, 10, 11);
  TrainConfig cfg;
  cfg.loss_kind = LossKind::kPaco;
  cfg.queue_capacity = 256;
  cfg.seed = 11;
  cfg.base_lr = 0.2;
  cfg.epochs = 200;
  const auto r = train(data, cfg);
  const auto& last = r.trace.epochs.back();
  const double target = 1.0 / (1.0 + cfg.alpha * last.mean_positives);
  const double gap = std::abs(last.p_sup - target);
  return {gap < 0.15, fmt::format("P_sup {:.4f}, 1/(1+a K) {:.4f} with K = {:.2f}, gap {:.4f}",
                                  last.p_sup, target, last.mean_positives, gap)};
}

Outcome infrastructure_check() {
  bool pass = true;
  std::string detail;

  MomentumQueue q(8192, 4);
  oracle::ListQueue<std::size_t> ref{8192, {}};
  Rng rng(12);
  std::size_t label = 0;
  for (int b = 0; b < 100; ++b) {
    std::vector<LabeledKey> keys;
    for (int i = 0; i < 128; ++i) keys.push_back({rng.unit_vector(4), label++});
    q.enqueue_batch(keys);
    for (const auto& k : keys) ref.push(k.label);
  }
  bool queue_ok = q.size() == ref.items.size();
  for (std::size_t i = 0; queue_ok && i < q.size(); ++i) queue_ok = q.label(i) == ref.items[i];
  pass = pass && queue_ok;
  detail += fmt::format("queue {}; ", queue_ok ? "ok" : "mismatch");

  const auto key = EncoderParams::random(6, 5, rng);
  const auto query = EncoderParams::random(6, 5, rng);
  const auto mixed = momentum_update(key, query, 0.99);
  bool momentum_ok = true;
  const auto tk = key.tensors(), tq = query.tensors(), tm = mixed.tensors();
  for (std::size_t t = 0; t < tk.size(); ++t) {
    for (std::size_t i = 0; i < tk[t].size(); ++i) {
      const double lo = std::min(tk[t][i], tq[t][i]), hi = std::max(tk[t][i], tq[t][i]);
      momentum_ok = momentum_ok && tm[t][i] == 0.99 * tk[t][i] + (1.0 - 0.99) * tq[t][i] &&
                    tm[t][i] >= lo - 1e-15 && tm[t][i] <= hi + 1e-15;
    }
  }
  pass = pass && momentum_ok;
  detail += fmt::format("momentum {}; ", momentum_ok ? "ok" : "mismatch");

  const auto data = sample_gaussian_mixture(exponential_profile(10, 100, 10.0), 16, 0.35, 5, 13);
  TrainConfig cfg;
  cfg.seed = 13;
  cfg.epochs = 5;
  cfg.embedding_dim = 16;
  const auto a = train(data, cfg);
  const auto b = train(data, cfg);
  const bool trace_ok = a.trace == b.trace && a.model.query == b.model.query;
  pass = pass && trace_ok;
  detail += fmt::format("rerun trace {}", trace_ok ? "bit-identical" : "differs");
  return {pass, detail};
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {"supcon optimum 1/K", supcon_optimum_check},
      {"paco optimum grid", paco_optimum_check},
      {"extra-loss minimizer", extra_loss_check},
      {"gradient correctness", gradient_check},
      {"decomposition identity", decomposition_check},
      {"center gradient formula and signs", center_gradient_check},
      {"rebalance ratio", rebalance_ratio_check},
      {"desk-scale supcon vs paco_rebalanced", desk_comparison_check},
      {"convergence probability", convergence_probability_check},
      {"infrastructure invariants", infrastructure_check},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    failures += !o.pass;
    fmt::print("{} {:>2} {} ({:.1f} s): {}\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].name,
               secs, o.detail);
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
