#include <doctest.h>

#include <cmath>
#include <set>
#include <vector>

#include "ddtr/gradcheck.hpp"
#include "ddtr/ops.hpp"
#include "ddtr/set_loss.hpp"
#include "oracles.hpp"

using namespace ddtr;

namespace {

RowMatrix random_costs(std::size_t n, Rng& rng, bool integral) {
  RowMatrix c(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < c.size(); ++i) {
    c(i) = integral ? static_cast<double>(rng.index(10)) : rng.uniform(-5.0, 5.0);
  }
  return c;
}

bool is_bijection(const Assignment& a, std::size_t n) {
  std::set<std::size_t> seen(a.label_of.begin(), a.label_of.end());
  return a.label_of.size() == n && seen.size() == n && *seen.rbegin() == n - 1;
}

HeadOutput random_head(std::size_t n, std::size_t classes, Rng& rng) {
  Tensor logits(Shape{n, classes}), boxes(Shape{n, 4});
  for (double& v : logits.data()) v = rng.uniform(-3, 3);
  for (std::size_t i = 0; i < n; ++i) {
    const Boxd b = oracle::random_box(rng, 0.05, 0.4);
    for (int c = 0; c < 4; ++c) boxes.data()[i * 4 + static_cast<std::size_t>(c)] = b(c);
  }
  return {logits, boxes};
}

std::vector<GroundTruth> random_truth(std::size_t g, Rng& rng) {
  std::vector<GroundTruth> gt;
  for (std::size_t i = 0; i < g; ++i) gt.push_back({1 + static_cast<int>(rng.index(2)), oracle::random_box(rng, 0.05, 0.4)});
  return gt;
}

}  // namespace

TEST_SUITE("set_matching_loss") {
  TEST_CASE("giou reference values") {
    const Boxd a = box_from_corners(0, 0, 1, 1), b = box_from_corners(2, 2, 3, 3);
    CHECK(giou<double>(a, a) == 1.0);
    CHECK(giou<double>(a, b) == doctest::Approx(-7.0 / 9.0).epsilon(1e-15));
    const Boxd c = box_from_corners(0, 0, 2, 2), d = box_from_corners(1, 1, 3, 3);
    CHECK(giou<double>(c, d) == doctest::Approx(1.0 / 7.0 - 2.0 / 9.0).epsilon(1e-15));
    CHECK(giou<double>(c, d) == doctest::Approx(-0.0794).epsilon(1e-3));
    // a zero-area box acts as a point
    const Boxd point(0.5, 0.5, 0.0, 0.0);
    CHECK(std::isfinite(giou<double>(point, a)));
  }

  TEST_CASE("giou properties on random boxes") {
    Rng rng(41);
    for (int t = 0; t < 1000; ++t) {
      const Boxd a = oracle::random_box(rng), b = oracle::random_box(rng);
      const double g = giou<double>(a, b);
      CHECK(g == giou<double>(b, a));
      CHECK(g <= iou<double>(a, b) + 1e-15);
      CHECK(g >= -1.0);
      CHECK(g <= 1.0);
      // containment: the hull is the outer box
      Boxd inner = a;
      inner(2) *= 0.5;
      inner(3) *= 0.5;
      CHECK(std::abs(giou<double>(inner, a) - iou<double>(inner, a)) <= 1e-14);
    }
  }

  TEST_CASE("focal loss reference values") {
    CHECK(focal_loss(0.3, true, 1.0, 0.0) == doctest::Approx(-std::log(0.3)).epsilon(1e-15));
    CHECK(focal_loss(0.9, true, 0.25, 2.0) == doctest::Approx(0.25 * 0.01 * -std::log(0.9)).epsilon(1e-12));
    CHECK(focal_loss(0.9, true, 0.25, 2.0) == doctest::Approx(2.634e-4).epsilon(1e-3));
    CHECK(focal_loss(1.0 - 1e-12, true, 0.25, 2.0) < 1e-20);
    CHECK(focal_loss(0.2, false, 0.25, 2.0) == doctest::Approx(-0.75 * 0.04 * std::log(0.8)).epsilon(1e-12));
    CHECK(std::isfinite(focal_loss(0.0, true, 0.25, 2.0)));
  }

  TEST_CASE("match cost gates box terms by the label") {
    LossWeights w;
    w.l1 = 1.0;
    w.giou = 1.0;
    w.cls = 1.0;
    const std::vector<double> logits{0.3, -0.7};
    const Boxd pred(0.5, 0.5, 0.2, 0.2);
    const double cls_empty = classification_loss(logits, 0, w);
    CHECK(match_cost(logits, pred, nullptr, w) == cls_empty);
    CHECK(match_cost(logits, Boxd(0.1, 0.9, 0.05, 0.3), nullptr, w) == cls_empty);
    const GroundTruth same{1, pred};
    CHECK(match_cost(logits, pred, &same, w) == classification_loss(logits, 1, w));
    const GroundTruth shifted{1, Boxd(0.6, 0.5, 0.2, 0.2)};
    const double expect = classification_loss(logits, 1, w) + 0.1 + (1.0 - giou<double>(pred, shifted.box));
    CHECK(match_cost(logits, pred, &shifted, w) == doctest::Approx(expect).epsilon(1e-14));
  }

  TEST_CASE("hungarian reference matrices") {
    RowMatrix a(2, 2);
    a << 1, 2, 2, 1;
    const Assignment ra = hungarian_assign(a);
    CHECK(ra.label_of == std::vector<std::size_t>{0, 1});
    CHECK(ra.cost == 2.0);
    RowMatrix b(3, 3);
    b << 4, 1, 3, 2, 0, 5, 3, 2, 2;
    const Assignment rb = hungarian_assign(b);
    CHECK(rb.label_of == std::vector<std::size_t>{1, 0, 2});
    CHECK(rb.cost == 5.0);
    Rng rng(42);
    for (int t = 0; t < 50; ++t) {
      const std::size_t n = 2 + rng.index(6);
      std::vector<std::size_t> perm(n);
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      for (std::size_t i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.index(i + 1)]);
      RowMatrix c = RowMatrix::Constant(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n), 1.0);
      for (std::size_t i = 0; i < n; ++i) c(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(perm[i])) = 0.0;
      const Assignment r = hungarian_assign(c);
      CHECK(r.label_of == perm);
      CHECK(r.cost == 0.0);
    }
  }

  TEST_CASE("hungarian rejects bad input") {
    CHECK_THROWS_AS(hungarian_assign(RowMatrix::Zero(2, 3)), ShapeError);
    RowMatrix c = RowMatrix::Zero(2, 2);
    c(1, 0) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(hungarian_assign(c), std::domain_error);
    CHECK(hungarian_assign(RowMatrix(0, 0)).label_of.empty());
  }

  TEST_CASE("hungarian equals the exhaustive minimum") {
    Rng rng(43);
    for (std::size_t n = 1; n <= 7; ++n) {
      for (int t = 0; t < 200; ++t) {
        const RowMatrix c = random_costs(n, rng, t % 2 == 0);
        const Assignment a = hungarian_assign(c);
        CHECK(is_bijection(a, n));
        CHECK(a.cost == oracle::brute_assignment_cost(c));
      }
    }
  }

  TEST_CASE("adding a constant shifts the optimum by N·c") {
    Rng rng(44);
    for (int t = 0; t < 200; ++t) {
      const std::size_t n = 1 + rng.index(7);
      const RowMatrix c = random_costs(n, rng, true);
      const double k = static_cast<double>(rng.index(7)) - 3.0;
      const Assignment a = hungarian_assign(c);
      const Assignment b = hungarian_assign((c.array() + k).matrix());
      CHECK(b.cost == a.cost + static_cast<double>(n) * k);
      // a's assignment stays optimal after the shift
      double shifted = 0.0;
      for (std::size_t i = 0; i < n; ++i) shifted += c(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(a.label_of[i])) + k;
      CHECK(shifted == b.cost);
    }
  }

  TEST_CASE("rectangular assignment matches the padded square problem") {
    Rng rng(45);
    LossWeights w;
    for (int t = 0; t < 300; ++t) {
      const std::size_t n = 1 + rng.index(7);
      const HeadOutput h = random_head(n, 2, rng);
      const auto gt = random_truth(rng.index(n + 1), rng);
      const RowMatrix cost = cost_matrix(h.logits, h.boxes, gt, w);
      const Assignment fast = match_predictions(h.logits, h.boxes, gt, w);
      CHECK(is_bijection(fast, n));
      double recomputed = 0.0;
      for (std::size_t i = 0; i < n; ++i) recomputed += cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(fast.label_of[i]));
      CHECK(fast.cost == recomputed);
      CHECK(std::abs(fast.cost - oracle::brute_assignment_cost(cost)) <= 1e-12 * (1.0 + std::abs(fast.cost)));
      for (std::size_t i = 0, next = gt.size(); i < n; ++i) {
        if (fast.label_of[i] >= gt.size()) CHECK(fast.label_of[i] == next++);
      }
    }
  }

  TEST_CASE("set loss with no objects is classification against empty labels") {
    Rng rng(46);
    LossWeights w;
    const HeadOutput h = random_head(4, 2, rng);
    double cls = 0.0, loc = 0.0;
    const Tensor loss = matched_loss(h, {}, match_predictions(h.logits, h.boxes, {}, w), w, &cls, &loc);
    double expect = 0.0;
    for (std::size_t i = 0; i < 4; ++i) {
      const std::vector<double> row(h.logits.data().begin() + i * 2, h.logits.data().begin() + i * 2 + 2);
      expect += w.cls * classification_loss(row, 0, w);
    }
    CHECK(loss.item() == doctest::Approx(expect).epsilon(1e-14));
    CHECK(loc == 0.0);
  }

  TEST_CASE("duplicate predictions match one ground truth once") {
    Tensor logits(Shape{3, 2}, {1, -1, 1, -1, 1, -1});
    Tensor boxes(Shape{3, 4}, {0.5, 0.5, 0.2, 0.2, 0.5, 0.5, 0.2, 0.2, 0.5, 0.5, 0.2, 0.2});
    const std::vector<GroundTruth> gt{{1, Boxd(0.5, 0.5, 0.2, 0.2)}};
    const SetLoss s = set_loss(std::vector<HeadOutput>{{logits, boxes}}, gt, LossWeights{});
    const auto& a = s.assignments.front();
    CHECK(std::count(a.label_of.begin(), a.label_of.end(), std::size_t{0}) == 1);
    CHECK(is_bijection(a, 3));
  }

  TEST_CASE("identical layers sum to a multiple of one layer") {
    Rng rng(47);
    const HeadOutput h = random_head(5, 2, rng);
    const auto gt = random_truth(2, rng);
    const double one = set_loss(std::vector<HeadOutput>{h}, gt, LossWeights{}).total.item();
    const double six = set_loss(std::vector<HeadOutput>(6, h), gt, LossWeights{}).total.item();
    CHECK(six == doctest::Approx(6.0 * one).epsilon(1e-14));
  }

  TEST_CASE("set loss validates labels") {
    Rng rng(48);
    const HeadOutput h = random_head(2, 2, rng);
    CHECK_THROWS(set_loss(std::vector<HeadOutput>{h}, random_truth(3, rng), LossWeights{}));
    CHECK_THROWS(set_loss(std::vector<HeadOutput>{h}, std::vector<GroundTruth>{{3, Boxd(0.5, 0.5, 0.1, 0.1)}},
                          LossWeights{}));
    LossWeights bad;
    bad.cls = bad.l1 = bad.giou = 0.0;
    CHECK_THROWS(bad.validate());
  }

  TEST_CASE("set loss gradient matches central differences with the assignment frozen") {
    Rng rng(49);
    LossWeights w;
    for (int t = 0; t < 100; ++t) {
      const std::size_t n = 2 + rng.index(5);
      HeadOutput h = random_head(n, 2, rng);
      const auto gt = random_truth(1 + rng.index(n - 1), rng);
      const Assignment a = match_predictions(h.logits, h.boxes, gt, w);
      std::vector<Tensor> wrt{h.logits, h.boxes};
      const double e = finite_diff_check([&] { return matched_loss(HeadOutput{wrt[0], wrt[1]}, gt, a, w); }, wrt, 1e-5);
      CHECK(e < 1e-4);
    }
  }
}
