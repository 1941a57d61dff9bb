#pragma once

#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "paco/eval.hpp"
#include "paco/theory.hpp"
#include "paco/trainer.hpp"

namespace paco {

/// Shortest decimal text that parses back to the same double.
std::string format_double(double x);

/// Columns: epoch,lr,loss,l_sup,l_supcon,l_extra,p_sup_mean,p_supcon_mean,
/// mean_positives, then grad_norm_<c> for every class.
void write_trace_csv(std::ostream& out, const TrainTrace& trace, std::size_t n_classes);

/// Columns: method,seed,many,medium,few,all,cov_grad_norm. Absent buckets and an
/// undefined balance metric are written as empty fields.
void write_bucket_header(std::ostream& out);
void write_bucket_row(std::ostream& out, const std::string& method, std::uint64_t seed,
                      const BucketReport& report, const BalanceMetric& balance);

/// Columns: rank,class,count,grad_norm.
void write_grad_profile_csv(std::ostream& out, const GradNormProfile& profile);

/// Columns: alpha,k,closed_pair,closed_center,numeric_pair,numeric_center,gap.
void write_optima_header(std::ostream& out);
void write_optima_row(std::ostream& out, const theory::OptimaReport& row);

/// Columns: p_sup,value.
void write_curve_csv(std::ostream& out, const theory::ExtraLossCurve& curve);

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Versioned text checkpoint. Field order:
///   "paco-lab-checkpoint 1"
///   "step <n>"
///   "dims <input_dim> <embedding_dim> <n_classes>"
///   "tensor <name> <count>" followed by <count> values on one line, for
///     query.{encoder,head_in,bias_in,head_out,bias_out}, key.*, velocity.*,
///     centers, center_velocity, class_freq (in that order)
///   "queue <capacity> <size> <total_written>" followed by <size> lines
///     "<label> v_1 ... v_dim", oldest first
///   "rng <engine state> <spare flag> <spare>"
///   "end"
void save_checkpoint(std::ostream& out, const Model& model);
Model load_checkpoint(std::istream& in);

}  // namespace paco
