#include "cli.hpp"

#include <CLI11.hpp>
#include <boost/rational.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "paco/io.hpp"
#include "paco/theory.hpp"

namespace paco::cli {

namespace fs = std::filesystem;

namespace {

// ---- config parsing -------------------------------------------------------

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> items;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) items.push_back(trim(item));
  return items;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& text) {
  throw ConfigError("config: bad value '" + text + "' for key '" + key + "'");
}

template <class T>
T parse_number(const std::string& key, const std::string& raw) {
  const std::string text = trim(raw);
  T value{};
  const char* end = text.data() + text.size();
  const auto r = std::from_chars(text.data(), end, value);
  if (text.empty() || r.ec != std::errc() || r.ptr != end) bad_value(key, text);
  if constexpr (std::is_floating_point_v<T>) {
    if (!std::isfinite(value)) bad_value(key, text);
  }
  return value;
}

std::vector<double> parse_double_list(const std::string& key, const std::string& text) {
  std::vector<double> out;
  for (const auto& item : split_list(text)) out.push_back(parse_number<double>(key, item));
  if (out.empty()) bad_value(key, text);
  return out;
}

using Setter = std::function<void(const std::string& key, const std::string& value)>;

template <class T>
Setter number(T& dst) {
  return [&dst](const std::string& k, const std::string& v) { dst = parse_number<T>(k, v); };
}

Setter double_list(std::vector<double>& dst) {
  return [&dst](const std::string& k, const std::string& v) { dst = parse_double_list(k, v); };
}

std::map<std::string, Setter> setters(RunConfig& c) {
  std::map<std::string, Setter> s;
  s["run.seed"] = number(c.seed);
  s["run.out"] = [&c](const std::string&, const std::string& v) { c.out = trim(v); };

  s["data.profile"] = [&c](const std::string& k, const std::string& v) {
    const std::string p = trim(v);
    if (p != "exponential" && p != "pareto") bad_value(k, p);
    c.data.profile = p;
  };
  s["data.n_classes"] = number(c.data.n_classes);
  s["data.dim"] = number(c.data.dim);
  s["data.n_max"] = number(c.data.n_max);
  s["data.imbalance"] = number(c.data.imbalance);
  s["data.pareto_min"] = number(c.data.pareto_min);
  s["data.pareto_power"] = number(c.data.pareto_power);
  s["data.noise_sigma"] = number(c.data.noise_sigma);
  s["data.test_per_class"] = number(c.data.test_per_class);
  s["data.seed"] = [&c](const std::string& k, const std::string& v) {
    c.data.seed = parse_number<std::uint64_t>(k, v);
  };
  s["data.file"] = [&c](const std::string&, const std::string& v) { c.data.file = trim(v); };

  s["train.loss_kind"] = [&c](const std::string& k, const std::string& v) {
    c.loss_kinds.clear();
    for (const auto& name : split_list(v)) {
      try {
        c.loss_kinds.push_back(parse_loss_kind(name));
      } catch (const ContractViolation&) {
        bad_value(k, name);
      }
    }
    if (c.loss_kinds.empty()) bad_value(k, v);
  };
  s["train.alpha"] = number(c.train.alpha);
  s["train.temperature"] = number(c.train.temperature);
  s["train.multitask_lambda"] = number(c.train.multitask_lambda);
  s["train.queue_capacity"] = number(c.train.queue_capacity);
  s["train.embedding_dim"] = number(c.train.embedding_dim);
  s["train.key_momentum"] = number(c.train.key_momentum);
  s["train.sgd_momentum"] = number(c.train.sgd_momentum);
  s["train.base_lr"] = number(c.train.base_lr);
  s["train.epochs"] = number(c.train.epochs);
  s["train.batch_size"] = number(c.train.batch_size);
  s["train.view_sigma"] = number(c.train.view_sigma);

  s["eval.many_min"] = number(c.eval.thresholds.many_min);
  s["eval.few_max"] = number(c.eval.thresholds.few_max);
  s["eval.probe_epochs"] = number(c.eval.probe.epochs);
  s["eval.probe_lr"] = number(c.eval.probe.base_lr);
  s["eval.probe_momentum"] = number(c.eval.probe.momentum);
  s["eval.probe_batch_size"] = number(c.eval.probe.batch_size);

  s["theory.alphas"] = double_list(c.theory.alphas);
  s["theory.ks"] = double_list(c.theory.ks);
  s["theory.extra_alpha"] = number(c.theory.extra_alpha);
  s["theory.extra_k_star"] = number(c.theory.extra_k_star);
  s["theory.curve_points"] = number(c.theory.curve_points);
  s["theory.sign_instances"] = number(c.theory.sign_instances);
  s["theory.tolerance"] = number(c.theory.tolerance);
  s["theory.k_head"] = number(c.theory.k_head);
  s["theory.k_tail"] = number(c.theory.k_tail);
  s["theory.ratio_alphas"] = double_list(c.theory.ratio_alphas);
  s["theory.corrupt_closed_form"] = number(c.theory.corrupt_closed_form);

  s["grad_check.instances"] = number(c.grad_check.instances);
  s["grad_check.tolerance"] = number(c.grad_check.tolerance);
  s["grad_check.step"] = number(c.grad_check.step);
  s["grad_check.max_dim"] = number(c.grad_check.limits.max_dim);
  s["grad_check.max_candidates"] = number(c.grad_check.limits.max_candidates);
  s["grad_check.max_classes"] = number(c.grad_check.limits.max_classes);
  s["grad_check.losses"] = [&c](const std::string& k, const std::string& v) {
    c.grad_check.losses.clear();
    for (const auto& name : split_list(v)) {
      if (name == "all") {
        c.grad_check.losses.clear();
        break;
      }
      try {
        c.grad_check.losses.push_back(gradcheck::parse_checked_loss(name));
      } catch (const ContractViolation&) {
        bad_value(k, name);
      }
    }
  };
  return s;
}

void validate(const RunConfig& c) {
  try {
    c.train.validate();
  } catch (const ContractViolation& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  auto check = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError("config: " + msg);
  };
  check(c.data.n_classes >= 2, "data.n_classes must be at least 2");
  check(c.data.dim >= 2, "data.dim must be at least 2");
  check(c.data.noise_sigma > 0.0, "data.noise_sigma must be positive");
  check(c.data.imbalance >= 1.0, "data.imbalance must be at least 1");
  check(c.eval.thresholds.many_min > c.eval.thresholds.few_max,
        "eval.many_min must exceed eval.few_max");
  check(c.eval.probe.batch_size > 0 && c.eval.probe.base_lr > 0.0, "eval probe settings invalid");
  check(c.theory.curve_points >= 3, "theory.curve_points must be at least 3");
  check(c.theory.tolerance > 0.0, "theory.tolerance must be positive");
  check(c.theory.k_head > 0.0 && c.theory.k_tail > 0.0, "theory.k_head and k_tail must be positive");
  for (double a : c.theory.alphas) check(a > 0.0 && a < 1.0, "theory.alphas must lie in (0, 1)");
  for (double a : c.theory.ratio_alphas) {
    check(a > 0.0 && a < 1.0, "theory.ratio_alphas must lie in (0, 1)");
  }
  for (double k : c.theory.ks) check(k >= 1.0, "theory.ks must be at least 1");
  check(c.grad_check.instances > 0, "grad_check.instances must be positive");
  check(c.grad_check.step > 0.0 && c.grad_check.tolerance > 0.0,
        "grad_check.step and tolerance must be positive");
  check(c.grad_check.limits.max_dim >= 2 && c.grad_check.limits.max_candidates >= 2 &&
            c.grad_check.limits.max_classes >= 2,
        "grad_check limits must be at least 2");
}

// ---- file output ----------------------------------------------------------

void write_file(const fs::path& path, const std::function<void(std::ostream&)>& body) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  std::ofstream f(path);
  if (ec || !f) throw IoError("cannot write '" + path.string() + "'");
  body(f);
  f.close();
  if (!f) throw IoError("failed writing '" + path.string() + "'");
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read '" + path.string() + "'");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

// ---- theory checks --------------------------------------------------------

using Rational = boost::rational<long long>;

// Exact value of the decimal text fmt prints for x, e.g. 81.9 -> 819/10.
Rational decimal_rational(double x) {
  const std::string text = format_double(x);
  const auto epos = text.find_first_of("eE");
  const std::string mant = text.substr(0, epos);
  long exponent = epos == std::string::npos ? 0 : std::stol(text.substr(epos + 1));
  const auto dot_pos = mant.find('.');
  std::string digits = mant;
  if (dot_pos != std::string::npos) {
    exponent -= static_cast<long>(mant.size() - dot_pos - 1);
    digits.erase(dot_pos, 1);
  }
  long long scale = 1;
  for (long i = 0; i < std::labs(exponent); ++i) scale *= 10;
  const long long num = std::stoll(digits, nullptr, 10);
  return exponent >= 0 ? Rational(num * scale) : Rational(num, scale);
}

struct CenterCheck {
  double max_formula_gap = 0.0;
  std::size_t own_negative_cases = 0;
  std::size_t own_sign_violations = 0;
  std::size_t other_sign_violations = 0;
};

// Random anchors with k* identical positives; compares the closed-form center
// gradient with the loss module and checks its sign pattern.
CenterCheck check_center_gradients(std::size_t instances, std::uint64_t seed, double offset) {
  CenterCheck out;
  for (std::size_t t = 0; t < instances; ++t) {
    Rng rng(derive_seed(seed, t));
    const std::size_t dim = 2 + rng.below(15);
    const std::size_t n_classes = 2 + rng.below(9);
    const std::size_t k_star = 1 + rng.below(16);
    const std::size_t n_neg = rng.below(17);
    const double alpha = rng.uniform(0.02, 0.9);
    const double tau = rng.uniform(0.1, 1.0);
    const std::size_t label = rng.below(n_classes);

    const Vector x = rng.unit_vector(dim);
    const Vector g = rng.unit_vector(dim);
    const Vector z_pos = rng.unit_vector(dim);
    Matrix rows(k_star + n_neg, dim);
    std::vector<std::size_t> labels(k_star + n_neg, label);
    for (std::size_t k = 0; k < rows.rows(); ++k) {
      const Vector z = k < k_star ? z_pos : rng.unit_vector(dim);
      std::copy(z.begin(), z.end(), rows.row(k).begin());
      if (k >= k_star) labels[k] = (label + 1 + rng.below(n_classes - 1)) % n_classes;
    }
    const ContrastSet contrast = ContrastSet::from_rows(label, rows, std::move(labels));
    CenterBank bank;
    bank.centers = Matrix(n_classes, dim);
    for (double& c : bank.centers.data()) c = rng.normal() / std::sqrt(static_cast<double>(dim));
    bank.class_freq.assign(n_classes, 1.0 / static_cast<double>(n_classes));

    PacoConfig cfg;
    cfg.alpha = alpha;
    cfg.temperature = tau;
    cfg.scale_by_weight_sum = false;
    const auto res = paco_loss(x, g, contrast, bank, label, cfg);

    Vector logits;
    for (std::size_t k = 0; k < contrast.size(); ++k) {
      logits.push_back(dot(contrast.candidates.row(k), g) / tau);
    }
    for (std::size_t c = 0; c < n_classes; ++c) logits.push_back(dot(bank.centers.row(c), x) / tau);
    const Vector p = softmax(logits);
    const std::span<const double> p_centers(p.data() + contrast.size(), n_classes);

    Matrix formula = theory::center_gradient_formula(x, bank, label, alpha,
                                                     static_cast<double>(k_star), p_centers, tau);
    for (double& v : formula.data()) v += offset;
    for (std::size_t i = 0; i < formula.data().size(); ++i) {
      out.max_formula_gap =
          std::max(out.max_formula_gap, std::abs(formula.data()[i] - res.grads.d_centers.data()[i]));
    }
    const double threshold = 1.0 / (1.0 + alpha * static_cast<double>(k_star));
    for (std::size_t c = 0; c < n_classes; ++c) {
      const double along_x = dot(formula.row(c), x);
      if (c == label) {
        if (p_centers[c] < threshold) {
          ++out.own_negative_cases;
          if (!(along_x < 0.0)) ++out.own_sign_violations;
        }
      } else if (!(along_x > 0.0)) {
        ++out.other_sign_violations;
      }
    }
  }
  return out;
}

// ---- training helpers -----------------------------------------------------

std::size_t env_threads() {
  const char* raw = std::getenv("PACO_LAB_THREADS");
  if (raw == nullptr || *raw == '\0') return 1;
  const auto n = parse_number<std::size_t>("PACO_LAB_THREADS", raw);
  if (n == 0) bad_value("PACO_LAB_THREADS", raw);
  return n;
}

std::string bucket_header() {
  std::ostringstream s;
  write_bucket_header(s);
  std::string h = s.str();
  h.pop_back();
  return h;
}

}  // namespace

// ---- public API -----------------------------------------------------------

RunConfig parse_config(std::istream& in) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  RunConfig cfg;
  const auto table = setters(cfg);
  for (const auto& [section, body] : tree) {
    if (body.empty()) {
      throw ConfigError("config: key '" + section + "' is outside any section");
    }
    for (const auto& [key, value] : body) {
      const std::string full = section + "." + key;
      const auto it = table.find(full);
      if (it == table.end()) throw ConfigError("config: unknown key '" + full + "'");
      it->second(full, value.data());
    }
  }
  validate(cfg);
  return cfg;
}

RunConfig load_config(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read config '" + path.string() + "'");
  return parse_config(f);
}

SyntheticDataset make_dataset(const RunConfig& cfg) {
  const auto& d = cfg.data;
  if (!d.file.empty()) {
    std::ifstream f(d.file);
    if (!f) throw IoError("cannot read dataset '" + d.file + "'");
    try {
      return read_dataset(f);
    } catch (const std::exception& e) {
      throw IoError("dataset '" + d.file + "': " + e.what());
    }
  }
  try {
    const LongTailProfile profile =
        d.profile == "pareto" ? pareto_profile(d.n_classes, d.n_max, d.pareto_min, d.pareto_power)
                              : exponential_profile(d.n_classes, d.n_max, d.imbalance);
    return sample_gaussian_mixture(profile, d.dim, d.noise_sigma, d.test_per_class,
                                   d.seed.value_or(cfg.seed));
  } catch (const ContractViolation& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

int cmd_gen_data(const RunConfig& cfg, std::ostream& log) {
  const SyntheticDataset data = make_dataset(cfg);
  write_file(cfg.out / "dataset.csv", [&](std::ostream& o) { write_dataset(o, data); });
  write_file(cfg.out / "profile.csv", [&](std::ostream& o) { write_profile_csv(o, data.profile); });
  log << fmt::format("wrote {} train + {} test samples ({} classes, imbalance {}) to {}\n",
                     data.train_indices.size(), data.test_indices.size(), data.n_classes(),
                     format_double(data.profile.imbalance_factor()), cfg.out.string());
  return kOk;
}

int cmd_verify_theory(const RunConfig& cfg, std::ostream& log) {
  const auto& th = cfg.theory;
  const double hook = th.corrupt_closed_form;
  std::vector<std::string> failures;

  // Optimal pair probability of the supervised contrastive loss.
  std::ostringstream supcon;
  supcon << "k,closed_prob,numeric_min,numeric_max,gap,converged\n";
  for (double kd : th.ks) {
    const auto k = static_cast<std::size_t>(std::llround(kd));
    const double closed = theory::supcon_optimum(static_cast<double>(k)) + hook;
    const auto num = theory::simplex_oracle(theory::SimplexProblem::kSupCon, k, 1.0);
    const auto [lo, hi] = std::minmax_element(num.pair_probs.begin(), num.pair_probs.end());
    const double gap = std::max(std::abs(*lo - closed), std::abs(*hi - closed));
    supcon << fmt::format("{},{},{},{},{},{}\n", k, closed, *lo, *hi, gap, int(num.converged));
    if (!(gap < th.tolerance) || !num.converged) {
      failures.push_back(fmt::format("supcon optimum k={} gap={}", k, gap));
    }
  }

  // Optimal pair and center probabilities of PaCo over the alpha x k grid.
  std::ostringstream optima;
  write_optima_header(optima);
  for (double alpha : th.alphas) {
    for (double kd : th.ks) {
      const auto k = static_cast<std::size_t>(std::llround(kd));
      const auto closed = theory::paco_optimum(alpha, static_cast<double>(k));
      const auto num = theory::simplex_oracle(theory::SimplexProblem::kPaco, k, alpha);
      theory::OptimaReport row;
      row.alpha = alpha;
      row.k_y = static_cast<double>(k);
      row.closed_pair_prob = closed.pair_prob + hook;
      row.closed_center_prob = closed.center_prob + hook;
      row.numeric_center_prob = num.center_prob;
      row.gap = std::abs(num.center_prob - row.closed_center_prob);
      double pair_sum = 0.0;
      for (double p : num.pair_probs) {
        row.gap = std::max(row.gap, std::abs(p - row.closed_pair_prob));
        pair_sum += p;
      }
      row.numeric_pair_prob = pair_sum / static_cast<double>(k);
      write_optima_row(optima, row);
      if (!(row.gap < th.tolerance) || !num.converged) {
        failures.push_back(fmt::format("paco optimum alpha={} k={} gap={}", alpha, k, row.gap));
      }
    }
  }

  // Minimizer of the extra loss: closed form, 1-D search and grid curve.
  std::ostringstream extra;
  extra << "alpha,k_star,alpha_k_star,closed_minimizer,search_minimizer,curve_minimizer,gap\n";
  auto extra_row = [&](double alpha, double k_star) {
    const double closed = theory::extra_loss_minimizer(alpha, k_star) + hook;
    const double search = theory::extra_loss_search(alpha, k_star);
    const auto curve = theory::extra_loss_curve(alpha, k_star, th.curve_points);
    const double gap = std::abs(closed - search);
    extra << fmt::format("{},{},{},{},{},{},{}\n", alpha, k_star, alpha * k_star, closed, search,
                         curve.argmin, gap);
    if (!(gap < th.tolerance)) {
      failures.push_back(fmt::format("extra-loss minimizer alpha={} k*={} gap={}", alpha, k_star, gap));
    }
  };
  extra_row(th.extra_alpha, th.extra_k_star);
  for (double alpha : th.alphas) {
    for (double k : th.ks) extra_row(alpha, k);
  }
  const auto curve = theory::extra_loss_curve(th.extra_alpha, th.extra_k_star, th.curve_points);

  // Center gradients and their sign pattern.
  const CenterCheck cc = check_center_gradients(th.sign_instances, cfg.seed, hook);
  std::ostringstream centers;
  centers << "instances,max_formula_gap,own_negative_cases,own_sign_violations,"
             "other_sign_violations\n";
  centers << fmt::format("{},{},{},{},{}\n", th.sign_instances, cc.max_formula_gap,
                         cc.own_negative_cases, cc.own_sign_violations, cc.other_sign_violations);
  if (!(cc.max_formula_gap < 1e-8)) {
    failures.push_back(fmt::format("center gradient formula gap={}", cc.max_formula_gap));
  }
  if (cc.own_sign_violations + cc.other_sign_violations > 0) {
    failures.push_back(fmt::format("center gradient sign violations: own={} other={}",
                                   cc.own_sign_violations, cc.other_sign_violations));
  }

  // Head/tail ratio of optimal pair probabilities, in exact arithmetic.
  std::ostringstream ratios;
  ratios << "alpha,k_head,k_tail,supcon_ratio,paco_ratio,paco_below_supcon\n";
  const Rational k_head = decimal_rational(th.k_head);
  const Rational k_tail = decimal_rational(th.k_tail);
  const Rational supcon_ratio = theory::supcon_rebalance_ratio(k_head, k_tail);
  std::vector<std::pair<double, Rational>> by_alpha;
  for (double a : th.ratio_alphas) {
    const Rational paco = theory::paco_rebalance_ratio(decimal_rational(a), k_head, k_tail);
    const bool below = paco < supcon_ratio;
    ratios << fmt::format("{},{},{},{},{},{}\n", a, th.k_head, th.k_tail,
                          boost::rational_cast<double>(supcon_ratio),
                          boost::rational_cast<double>(paco), int(below));
    if (!below) failures.push_back(fmt::format("paco ratio not below supcon ratio at alpha={}", a));
    by_alpha.emplace_back(a, paco);
  }
  std::sort(by_alpha.begin(), by_alpha.end(),
            [](const auto& l, const auto& r) { return l.first > r.first; });
  for (std::size_t i = 1; i < by_alpha.size(); ++i) {
    if (!(by_alpha[i].second < by_alpha[i - 1].second)) {
      failures.push_back(fmt::format("paco ratio does not decrease from alpha={} to alpha={}",
                                     by_alpha[i - 1].first, by_alpha[i].first));
    }
  }

  write_file(cfg.out / "supcon_optima.csv", [&](std::ostream& o) { o << supcon.str(); });
  write_file(cfg.out / "paco_optima.csv", [&](std::ostream& o) { o << optima.str(); });
  write_file(cfg.out / "extra_loss.csv", [&](std::ostream& o) { o << extra.str(); });
  write_file(cfg.out / "extra_loss_curve.csv", [&](std::ostream& o) { write_curve_csv(o, curve); });
  write_file(cfg.out / "center_gradients.csv", [&](std::ostream& o) { o << centers.str(); });
  write_file(cfg.out / "rebalance_ratio.csv", [&](std::ostream& o) { o << ratios.str(); });

  if (!failures.empty()) {
    log << fmt::format("verify-theory: {} check(s) failed\n", failures.size());
    for (const auto& f : failures) log << "  FAIL " << f << '\n';
    return kToleranceFailure;
  }
  log << fmt::format("verify-theory: all checks passed (extra-loss grid minimizer {})\n",
                     format_double(curve.argmin));
  return kOk;
}

int cmd_grad_check(const RunConfig& cfg, std::ostream& log) {
  const auto& gc = cfg.grad_check;
  std::vector<gradcheck::CheckedLoss> losses = gc.losses;
  if (losses.empty()) {
    const auto all = gradcheck::all_checked_losses();
    losses.assign(all.begin(), all.end());
  }
  std::ostringstream table;
  table << "loss,instances,max_error,median_error,worst_seed\n";
  bool ok = true;
  for (auto loss : losses) {
    const auto s = gradcheck::run_suite(loss, cfg.seed, gc.instances, gc.limits, gc.step);
    table << fmt::format("{},{},{},{},{}\n", gradcheck::to_string(loss), s.instances, s.max_error,
                         s.median_error, s.worst_seed);
    log << fmt::format("{:<16} max {:.3e}  median {:.3e}  worst seed {}\n",
                       gradcheck::to_string(loss), s.max_error, s.median_error, s.worst_seed);
    if (!(s.max_error < gc.tolerance)) {
      ok = false;
      const fs::path dump = cfg.out / fmt::format("grad_check_worst_{}.txt", gradcheck::to_string(loss));
      write_file(dump, [&](std::ostream& o) {
        o << fmt::format("error {}\n", s.max_error);
        gradcheck::dump_instance(o, gradcheck::make_instance(loss, s.worst_seed, gc.limits));
      });
      log << fmt::format("  FAIL {} exceeds {}; replay with --loss {} --replay {} (inputs in {})\n",
                         format_double(s.max_error), format_double(gc.tolerance),
                         gradcheck::to_string(loss), s.worst_seed, dump.string());
    }
  }
  write_file(cfg.out / "grad_check.csv", [&](std::ostream& o) { o << table.str(); });
  return ok ? kOk : kToleranceFailure;
}

int cmd_grad_check_replay(const RunConfig& cfg, gradcheck::CheckedLoss loss, std::uint64_t seed,
                          std::ostream& log) {
  const auto inst = gradcheck::make_instance(loss, seed, cfg.grad_check.limits);
  const double err = gradcheck::check_instance(inst, cfg.grad_check.step);
  log << fmt::format("{} seed {} error {}\n", gradcheck::to_string(loss), seed, format_double(err));
  return err < cfg.grad_check.tolerance ? kOk : kToleranceFailure;
}

int cmd_train(const RunConfig& cfg, std::ostream& log) {
  const SyntheticDataset data = make_dataset(cfg);
  std::vector<std::size_t> test_labels;
  for (std::size_t i : data.test_indices) test_labels.push_back(data.labels[i]);

  std::ostringstream comparison;
  write_bucket_header(comparison);
  for (LossKind kind : cfg.loss_kinds) {
    TrainConfig tc = cfg.train;
    tc.loss_kind = kind;
    tc.seed = cfg.seed;
    const std::string name(to_string(kind));

    TrainResult result;
    try {
      result = train(data, tc);
    } catch (const TrainingDiverged& e) {
      log << fmt::format("train {}: diverged at step {} (epoch {}): {}\n", name, e.step(),
                         e.epoch(), e.what());
      return kToleranceFailure;
    }

    Matrix classifier = result.model.bank.centers;
    if (!uses_centers(kind)) {
      std::vector<Vector> features;
      std::vector<std::size_t> labels;
      for (std::size_t i : data.train_indices) {
        features.push_back(result.model.represent(data.features[i]));
        labels.push_back(data.labels[i]);
      }
      ProbeConfig pc = cfg.eval.probe;
      pc.seed = cfg.seed;
      classifier = linear_probe(features, labels, data.n_classes(), pc);
    }
    const auto predictions = predict(result.model, data, data.test_indices, classifier);
    const BucketReport report =
        bucket_accuracy(predictions, test_labels, data.profile, cfg.eval.thresholds);
    const GradNormProfile profile = grad_norm_profile(result.model, data, tc);
    const BalanceMetric balance = balance_metric(profile.norms);

    const fs::path dir = cfg.out / name;
    write_file(dir / "trace.csv",
               [&](std::ostream& o) { write_trace_csv(o, result.trace, data.n_classes()); });
    write_file(dir / "checkpoint.txt", [&](std::ostream& o) { save_checkpoint(o, result.model); });
    write_file(dir / "bucket_report.csv", [&](std::ostream& o) {
      write_bucket_header(o);
      write_bucket_row(o, name, cfg.seed, report, balance);
    });
    write_file(dir / "grad_profile.csv",
               [&](std::ostream& o) { write_grad_profile_csv(o, profile); });
    write_bucket_row(comparison, name, cfg.seed, report, balance);

    auto pct = [](const std::optional<double>& v) {
      return v ? fmt::format("{:.3f}", *v) : std::string("-");
    };
    log << fmt::format("{:<16} many {} medium {} few {} all {:.3f} cov {}\n", name,
                       pct(report.many_acc), pct(report.medium_acc), pct(report.few_acc),
                       report.all_acc, balance.defined ? fmt::format("{:.3f}", balance.value) : "-");
  }
  write_file(cfg.out / "comparison.csv", [&](std::ostream& o) { o << comparison.str(); });
  return kOk;
}

int cmd_report(const RunConfig& cfg, const std::vector<fs::path>& runs, std::ostream& log) {
  std::vector<fs::path> dirs = runs;
  if (dirs.empty()) {
    std::error_code ec;
    for (const auto& entry : fs::directory_iterator(cfg.out, ec)) {
      if (entry.is_directory() && fs::exists(entry.path() / "bucket_report.csv")) {
        dirs.push_back(entry.path());
      }
    }
    if (ec) throw IoError("cannot list '" + cfg.out.string() + "'");
    std::sort(dirs.begin(), dirs.end());
    if (dirs.empty()) throw IoError("no run directories under '" + cfg.out.string() + "'");
  }

  const std::string header = bucket_header();
  std::set<std::pair<std::string, std::string>> seen;
  std::ostringstream table, profiles;
  table << header << '\n';
  profiles << "method,seed,rank,class,count,grad_norm\n";
  std::size_t rows = 0;
  for (const auto& dir : dirs) {
    const fs::path bucket_file = dir / "bucket_report.csv";
    const fs::path profile_file = dir / "grad_profile.csv";
    for (const auto& f : {bucket_file, profile_file}) {
      if (!fs::exists(f)) throw IoError("report: missing run file '" + f.string() + "'");
    }
    const auto lines = read_lines(bucket_file);
    if (lines.empty() || lines.front() != header) {
      throw IoError("report: unexpected header in '" + bucket_file.string() + "'");
    }
    const auto profile_lines = read_lines(profile_file);
    for (std::size_t i = 1; i < lines.size(); ++i) {
      const auto fields = split_list(lines[i]);
      if (fields.size() < 2) throw IoError("report: malformed row in '" + bucket_file.string() + "'");
      const auto key = std::make_pair(fields[0], fields[1]);
      if (!seen.insert(key).second) {
        log << fmt::format("warning: duplicate run (method {}, seed {}) in '{}' skipped\n",
                           fields[0], fields[1], bucket_file.string());
        continue;
      }
      table << lines[i] << '\n';
      ++rows;
      for (std::size_t j = 1; j < profile_lines.size(); ++j) {
        profiles << fields[0] << ',' << fields[1] << ',' << profile_lines[j] << '\n';
      }
    }
  }
  write_file(cfg.out / "report.csv", [&](std::ostream& o) { o << table.str(); });
  write_file(cfg.out / "grad_profiles.csv", [&](std::ostream& o) { o << profiles.str(); });
  log << fmt::format("report: merged {} run(s) into {}\n", rows, (cfg.out / "report.csv").string());
  return kOk;
}

int run(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"paco-lab: parametric contrastive loss laboratory"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "INI configuration file");
    sub->add_option("--seed", seed, "seed (overrides run.seed)");
    sub->add_option("--out", out_dir, "output directory (overrides run.out)");
  };
  auto* gen = app.add_subcommand("gen-data", "write a synthetic long-tailed dataset");
  auto* verify = app.add_subcommand("verify-theory", "check closed forms against numeric oracles");
  auto* grad = app.add_subcommand("grad-check", "finite-difference check of every loss gradient");
  auto* trainer = app.add_subcommand("train", "train one or more loss kinds and evaluate");
  auto* report = app.add_subcommand("report", "merge run directories into one table");
  for (auto* sub : {gen, verify, grad, trainer, report}) common(sub);

  std::optional<std::uint64_t> replay;
  std::string replay_loss;
  grad->add_option("--replay", replay, "recheck the instance with this seed");
  grad->add_option("--loss", replay_loss, "loss kind for --replay");
  std::vector<std::string> run_dirs;
  report->add_option("runs", run_dirs, "run directories (default: subdirectories of --out)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    RunConfig cfg = config_path.empty() ? RunConfig{} : load_config(config_path);
    if (seed) cfg.seed = *seed;
    if (!out_dir.empty()) cfg.out = out_dir;
    cfg.train.threads = env_threads();

    if (*gen) return cmd_gen_data(cfg, out);
    if (*verify) return cmd_verify_theory(cfg, out);
    if (*grad) {
      if (replay) {
        if (replay_loss.empty()) throw ConfigError("--replay needs --loss");
        return cmd_grad_check_replay(cfg, gradcheck::parse_checked_loss(replay_loss), *replay, out);
      }
      return cmd_grad_check(cfg, out);
    }
    if (*trainer) return cmd_train(cfg, out);
    std::vector<fs::path> dirs(run_dirs.begin(), run_dirs.end());
    return cmd_report(cfg, dirs, out);
  } catch (const ConfigError& e) {
    err << "paco-lab: " << e.what() << '\n';
    return kConfigError;
  } catch (const ContractViolation& e) {
    err << "paco-lab: " << e.what() << '\n';
    return kConfigError;
  } catch (const IoError& e) {
    err << "paco-lab: " << e.what() << '\n';
    return kIoError;
  } catch (const CheckpointError& e) {
    err << "paco-lab: " << e.what() << '\n';
    return kIoError;
  } catch (const fs::filesystem_error& e) {
    err << "paco-lab: " << e.what() << '\n';
    return kIoError;
  } catch (const std::exception& e) {
    err << "paco-lab: " << e.what() << '\n';
    return kToleranceFailure;
  }
}

}  // namespace paco::cli
