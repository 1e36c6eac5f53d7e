#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "ockd/autodiff/tensor.hpp"
#include "ockd/models/encoder.hpp"

namespace ockd::distill {

using ad::Tensor;

namespace detail {

inline void check_pair(const char* op, const Tensor& t, const Tensor& s) {
  if (t.rank() != 2 || t.shape() != s.shape()) throw ad::ShapeError(op, t.shape(), s.shape());
}

}  // namespace detail

/// (1/N) * sum_i ||T_i - S_i||^2 over rows of [N, d] batches.
inline Tensor loss_mse(const Tensor& teacher, const Tensor& student) {
  detail::check_pair("loss_mse", teacher, student);
  return ad::mean(ad::sum(ad::square(teacher - student), 1));
}

/// (1/N) * sum_i (1 - cos(T_i, S_i)); rows with norm below 1e-12 are rejected.
inline Tensor loss_cos(const Tensor& teacher, const Tensor& student) {
  detail::check_pair("loss_cos", teacher, student);
  const std::size_t n = teacher.dim(0), d = teacher.dim(1);
  for (std::size_t i = 0; i < n; ++i) {
    double nt = 0.0, ns = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      nt += teacher[i * d + j] * teacher[i * d + j];
      ns += student[i * d + j] * student[i * d + j];
    }
    if (std::sqrt(nt) < 1e-12 || std::sqrt(ns) < 1e-12) {
      throw numeric_error("loss_cos: degenerate (zero-norm) " +
                          std::string(std::sqrt(nt) < 1e-12 ? "teacher" : "student") +
                          " embedding at batch index " + std::to_string(i));
    }
  }
  const Tensor dot = ad::sum(teacher * student, 1);
  const Tensor norms = ad::sqrt(ad::sum(ad::square(teacher), 1)) *
                       ad::sqrt(ad::sum(ad::square(student), 1));
  return ad::add_scalar(ad::scale(ad::mean(dot / norms), -1.0), 1.0);
}

/// Which terms the student optimizes. The report always carries all of them.
enum class Objective { kTotal, kCosOnly, kMseOnly };

inline const char* objective_name(Objective o) {
  switch (o) {
    case Objective::kTotal: return "total";
    case Objective::kCosOnly: return "cos";
    case Objective::kMseOnly: return "mse";
  }
  return "?";
}

struct PairLossReport {
  std::vector<double> pair_cos;  // one per mapped pair, backend last
  std::vector<double> pair_mse;
  double l_cos = 0.0;
  double l_mse = 0.0;
  double l_total = 0.0;
  Tensor objective;  // differentiable scalar for the chosen Objective
};

/// Averages cosine and MSE losses uniformly over the layer pairs and the
/// backend pair, then combines them as L_cos + lambda * L_mse.
inline PairLossReport loss_total(const models::HiddenStack& teacher,
                                 const models::HiddenStack& student,
                                 const models::LayerMap& map, double lambda,
                                 Objective objective = Objective::kTotal) {
  if (lambda < 0.0) throw usage_error("loss_total: lambda must be >= 0");
  std::vector<std::pair<Tensor, Tensor>> terms;
  for (const auto& [s, t] : map.pairs) {
    if (s < 1 || static_cast<std::size_t>(s) > student.num_layers()) {
      throw usage_error("loss_total: student stack has no layer " + std::to_string(s) +
                        " (has " + std::to_string(student.num_layers()) + ")");
    }
    if (t < 1 || static_cast<std::size_t>(t) > teacher.num_layers()) {
      throw usage_error("loss_total: teacher stack has no layer " + std::to_string(t) +
                        " (has " + std::to_string(teacher.num_layers()) + ")");
    }
    terms.emplace_back(teacher.layers[static_cast<std::size_t>(t - 1)],
                       student.layers[static_cast<std::size_t>(s - 1)]);
  }
  if (map.includes_backend) terms.emplace_back(teacher.backend, student.backend);
  if (terms.empty()) throw usage_error("loss_total: layer map is empty");

  PairLossReport report;
  std::vector<Tensor> cos_terms, mse_terms;
  for (const auto& [t, s] : terms) {
    cos_terms.push_back(loss_cos(t, s));
    mse_terms.push_back(loss_mse(t, s));
    report.pair_cos.push_back(cos_terms.back().item());
    report.pair_mse.push_back(mse_terms.back().item());
  }
  const double inv = 1.0 / static_cast<double>(terms.size());
  auto average = [inv](const std::vector<Tensor>& xs) {
    Tensor acc = xs.front();
    for (std::size_t i = 1; i < xs.size(); ++i) acc = acc + xs[i];
    return ad::scale(acc, inv);
  };
  const Tensor l_cos = average(cos_terms);
  const Tensor l_mse = average(mse_terms);
  report.l_cos = l_cos.item();
  report.l_mse = l_mse.item();
  report.l_total = report.l_cos + lambda * report.l_mse;
  switch (objective) {
    case Objective::kTotal:
      report.objective = l_cos + ad::scale(l_mse, lambda);
      break;
    case Objective::kCosOnly:
      report.objective = l_cos;
      break;
    case Objective::kMseOnly:
      report.objective = l_mse;
      break;
  }
  return report;
}

}  // namespace ockd::distill
