#include "ddtr/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ddtr {

double finite_diff_check(const std::function<Tensor()>& f, std::span<Tensor> wrt, double step,
                         std::span<const Coordinate> coords) {
  if (!(step > 0.0)) throw std::invalid_argument("finite_diff_check: step must be positive");
  std::vector<bool> saved_flags;
  for (auto& t : wrt) {
    saved_flags.push_back(t.requires_grad());
    t.set_requires_grad(true);
    t.clear_grad();
  }

  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    Tape::Scope scope(tape);
    const Tensor y = f();
    if (y.size() != 1) throw ShapeError("finite_diff_check: function must return a scalar");
    tape.backward(y);
    for (auto& t : wrt) {
      if (t.has_grad()) analytic.emplace_back(t.grad().begin(), t.grad().end());
      else analytic.emplace_back(t.size(), 0.0);
    }
    tape.clear();
  }

  std::vector<Coordinate> all;
  if (coords.empty()) {
    for (std::size_t i = 0; i < wrt.size(); ++i) {
      for (std::size_t j = 0; j < wrt[i].size(); ++j) all.push_back({i, j});
    }
    coords = all;
  }

  double worst = 0.0;
  for (const auto& c : coords) {
    auto data = wrt[c.tensor].data();
    const double original = data[c.index];
    data[c.index] = original + step;
    const double up = f().item();
    data[c.index] = original - step;
    const double down = f().item();
    data[c.index] = original;
    const double numeric = (up - down) / (2.0 * step);
    const double a = analytic[c.tensor][c.index];
    worst = std::max(worst, std::abs(a - numeric) / std::max(1.0, std::abs(a)));
  }

  for (std::size_t i = 0; i < wrt.size(); ++i) wrt[i].set_requires_grad(saved_flags[i]);
  return worst;
}

double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double step) {
  Tensor probe = x;
  return finite_diff_check([&] { return f(probe); }, std::span<Tensor>(&probe, 1), step);
}

}  // namespace ddtr
