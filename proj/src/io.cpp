#include "paco/io.hpp"

#include <fmt/format.h>

#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

namespace paco {

std::string format_double(double x) { return fmt::format("{}", x); }

namespace {

std::string optional_field(const std::optional<double>& v) {
  return v ? format_double(*v) : std::string{};
}

}  // namespace

void write_trace_csv(std::ostream& out, const TrainTrace& trace, std::size_t n_classes) {
  std::string header = "epoch,lr,loss,l_sup,l_supcon,l_extra,p_sup_mean,p_supcon_mean,mean_positives";
  for (std::size_t c = 0; c < n_classes; ++c) header += fmt::format(",grad_norm_{}", c);
  out << header << '\n';
  for (const auto& r : trace.epochs) {
    std::string line = fmt::format("{},{},{},{},{},{},{},{},{}", r.epoch, r.lr, r.loss, r.l_sup,
                                   r.l_supcon, r.l_extra, r.p_sup, r.p_supcon, r.mean_positives);
    for (double g : r.grad_norms) line += fmt::format(",{}", g);
    out << line << '\n';
  }
}

void write_bucket_header(std::ostream& out) {
  out << "method,seed,many,medium,few,all,cov_grad_norm\n";
}

void write_bucket_row(std::ostream& out, const std::string& method, std::uint64_t seed,
                      const BucketReport& report, const BalanceMetric& balance) {
  out << fmt::format("{},{},{},{},{},{},{}\n", method, seed, optional_field(report.many_acc),
                     optional_field(report.medium_acc), optional_field(report.few_acc),
                     report.all_acc, balance.defined ? format_double(balance.value) : "");
}

void write_grad_profile_csv(std::ostream& out, const GradNormProfile& profile) {
  out << "rank,class,count,grad_norm\n";
  for (std::size_t r = 0; r < profile.classes.size(); ++r) {
    out << fmt::format("{},{},{},{}\n", r, profile.classes[r], profile.counts[r], profile.norms[r]);
  }
}

void write_optima_header(std::ostream& out) {
  out << "alpha,k,closed_pair,closed_center,numeric_pair,numeric_center,gap\n";
}

void write_optima_row(std::ostream& out, const theory::OptimaReport& row) {
  out << fmt::format("{},{},{},{},{},{},{}\n", row.alpha, row.k_y, row.closed_pair_prob,
                     row.closed_center_prob, row.numeric_pair_prob, row.numeric_center_prob,
                     row.gap);
}

void write_curve_csv(std::ostream& out, const theory::ExtraLossCurve& curve) {
  out << "p_sup,value\n";
  for (const auto& p : curve.points) out << fmt::format("{},{}\n", p.p_sup, p.value);
}

namespace {

constexpr const char* kMagic = "paco-lab-checkpoint";
constexpr int kVersion = 1;

const char* const kEncoderNames[] = {"encoder", "head_in", "bias_in", "head_out", "bias_out"};

void put_tensor(std::ostream& out, const std::string& name, std::span<const double> values) {
  out << "tensor " << name << ' ' << values.size() << '\n';
  std::string line;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) line += ' ';
    line += format_double(values[i]);
  }
  out << line << '\n';
}

void expect(std::istream& in, const std::string& token) {
  std::string got;
  in >> got;
  if (!in || got != token) {
    throw CheckpointError("checkpoint: expected '" + token + "', found '" + got + "'");
  }
}

void get_tensor(std::istream& in, const std::string& name, std::span<double> values) {
  expect(in, "tensor");
  expect(in, name);
  std::size_t count = 0;
  in >> count;
  if (!in || count != values.size()) {
    throw CheckpointError("checkpoint: tensor " + name + " has wrong size");
  }
  std::string text;
  for (double& v : values) {
    in >> text;
    if (!in) throw CheckpointError("checkpoint: truncated tensor " + name);
    v = std::stod(text);
  }
}

void put_encoder(std::ostream& out, const std::string& prefix, const EncoderParams& p) {
  const auto t = p.tensors();
  for (std::size_t i = 0; i < t.size(); ++i) put_tensor(out, prefix + "." + kEncoderNames[i], t[i]);
}

void get_encoder(std::istream& in, const std::string& prefix, EncoderParams& p) {
  auto t = p.tensors();
  for (std::size_t i = 0; i < t.size(); ++i) get_tensor(in, prefix + "." + kEncoderNames[i], t[i]);
}

}  // namespace

void save_checkpoint(std::ostream& out, const Model& model) {
  out << kMagic << ' ' << kVersion << '\n';
  out << "step " << model.step << '\n';
  out << "dims " << model.query.input_dim() << ' ' << model.query.embedding_dim() << ' '
      << model.bank.n_classes() << '\n';
  put_encoder(out, "query", model.query);
  put_encoder(out, "key", model.key);
  put_encoder(out, "velocity", model.query_velocity);
  put_tensor(out, "centers", model.bank.centers.data());
  put_tensor(out, "center_velocity", model.center_velocity.data());
  put_tensor(out, "class_freq", model.bank.class_freq);
  out << "queue " << model.queue.capacity() << ' ' << model.queue.size() << ' '
      << model.queue.total_written() << '\n';
  for (std::size_t i = 0; i < model.queue.size(); ++i) {
    std::string line = std::to_string(model.queue.label(i));
    for (double v : model.queue.embedding(i)) line += ' ' + format_double(v);
    out << line << '\n';
  }
  out << "rng " << model.rng.state() << '\n';
  out << "end\n";
}

Model load_checkpoint(std::istream& in) {
  expect(in, kMagic);
  int version = 0;
  in >> version;
  if (version != kVersion) {
    throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
  }
  Model m;
  expect(in, "step");
  in >> m.step;
  expect(in, "dims");
  std::size_t input_dim = 0, emb = 0, n_classes = 0;
  in >> input_dim >> emb >> n_classes;
  if (!in || input_dim == 0 || emb == 0 || n_classes == 0) {
    throw CheckpointError("checkpoint: bad dims line");
  }
  m.query = EncoderParams::zeros(input_dim, emb);
  m.key = m.query;
  m.query_velocity = m.query;
  get_encoder(in, "query", m.query);
  get_encoder(in, "key", m.key);
  get_encoder(in, "velocity", m.query_velocity);
  m.bank.centers = Matrix(n_classes, emb);
  m.center_velocity = Matrix(n_classes, emb);
  m.bank.class_freq.assign(n_classes, 0.0);
  get_tensor(in, "centers", m.bank.centers.data());
  get_tensor(in, "center_velocity", m.center_velocity.data());
  get_tensor(in, "class_freq", m.bank.class_freq);

  expect(in, "queue");
  std::size_t capacity = 0, size = 0;
  std::uint64_t written = 0;
  in >> capacity >> size >> written;
  if (!in || capacity == 0 || size > capacity) throw CheckpointError("checkpoint: bad queue line");
  std::vector<LabeledKey> entries(size);
  std::string text;
  for (auto& e : entries) {
    in >> e.label;
    e.embedding.resize(emb);
    for (double& v : e.embedding) {
      in >> text;
      if (!in) throw CheckpointError("checkpoint: truncated queue");
      v = std::stod(text);
    }
  }
  m.queue = MomentumQueue::restore(capacity, emb, entries, written);

  expect(in, "rng");
  std::string engine_line;
  std::getline(in, engine_line);
  m.rng.restore(engine_line);
  expect(in, "end");
  return m;
}

}  // namespace paco
