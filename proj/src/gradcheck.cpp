#include "seqcount/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace seqcount::ad {

std::string GradCheckReport::summary() const {
  std::ostringstream os;
  os << (pass ? "PASS" : "FAIL") << " max_rel_err=" << max_rel_err << " tol=" << tol;
  if (!pass) {
    for (const auto& p : params)
      if (p.max_rel_err > tol)
        os << "\n  " << p.name << ": rel_err=" << p.max_rel_err << " at entry " << p.worst_index
           << " (analytic=" << p.analytic << ", numeric=" << p.numeric << ")";
  }
  return os.str();
}

GradCheckReport grad_check(const std::function<Tensor()>& f,
                           const std::vector<std::pair<std::string, Tensor>>& params,
                           double step, double tol, double denom_floor) {
  if (step <= 0.0) throw std::invalid_argument("grad_check: step must be positive");

  auto eval = [&f]() {
    NoGradGuard ng;
    return f().item();
  };
  const double f0 = eval();
  if (eval() != f0)
    throw std::runtime_error("grad_check: computation is not deterministic (two forward passes disagree)");

  // Analytic pass.
  std::vector<std::vector<double>> analytic;
  {
    for (auto& [name, p] : params) const_cast<Tensor&>(p).zero_grad();
    Graph g;
    GraphScope scope(g);
    Tensor loss = f();
    g.backward(loss);
    for (auto& [name, p] : params) {
      Tensor& t = const_cast<Tensor&>(p);
      t.grad();  // ensure allocated even if unreachable
      analytic.push_back(t.grad());
    }
  }

  GradCheckReport report;
  report.tol = tol;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = const_cast<Tensor&>(params[pi].second);
    GradCheckEntry entry;
    entry.name = params[pi].first;
    for (long i = 0; i < p.numel(); ++i) {
      const double saved = p.data()[i];
      p.data()[i] = saved + step;
      const double fp = eval();
      p.data()[i] = saved - step;
      const double fm = eval();
      p.data()[i] = saved;
      const double numeric = (fp - fm) / (2.0 * step);
      const double a = analytic[pi][i];
      const double rel = std::abs(a - numeric) /
                         std::max({std::abs(a), std::abs(numeric), denom_floor});
      if (rel > entry.max_rel_err) {
        entry.max_rel_err = rel;
        entry.worst_index = i;
        entry.analytic = a;
        entry.numeric = numeric;
      }
    }
    report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    report.params.push_back(std::move(entry));
  }
  report.pass = report.max_rel_err <= tol;
  return report;
}

}  // namespace seqcount::ad
