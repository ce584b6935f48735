#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <set>
#include <vector>

#include "ictal/error.hpp"
#include "ictal/preprocess.hpp"
#include "ictal/random.hpp"

using namespace ictal;
using namespace ictal::prep;

namespace {

std::vector<std::vector<std::vector<std::uint8_t>>> label_grid(int patients, int files, int n, std::uint64_t seed) {
  auto g = rnd::substream(seed, 0);
  std::vector<std::vector<std::vector<std::uint8_t>>> all(patients);
  for (auto& p : all)
    for (int f = 0; f < files; ++f) {
      std::vector<std::uint8_t> l(n, 0);
      if (f != 1) {
        const int start = static_cast<int>(rnd::index(g, n - 40));
        std::fill(l.begin() + start, l.begin() + start + 30, 1);
      }
      p.push_back(l);
    }
  return all;
}

}  // namespace

TEST_CASE("fragment counts and remainder") {
  CHECK(fragment({std::vector<double>(256, 1.0)}).size() == 2);
  const auto f = fragment({std::vector<double>(300, 1.0), std::vector<double>(300, 2.0)});
  REQUIRE(f.size() == 2);
  CHECK(f[0].size() == 256);
  CHECK(f[1][128] == 2.0);
}

TEST_CASE("fragment labels by midpoint") {
  const std::vector<edf::SeizureAnnotation> sz{{"x", 2.0, 3.0}};
  const auto l = label_fragments(10, sz);
  std::vector<std::uint8_t> want(10, 0);
  want[4] = want[5] = 1;
  CHECK(l == want);
  const std::vector<edf::SeizureAnnotation> s2{{"x", 10.0, 20.0}};
  const auto l2 = label_fragments(60, s2);
  for (int i = 0; i < 60; ++i) CHECK(l2[i] == (i >= 20 && i < 40));
}

TEST_CASE("channel selection") {
  std::vector<std::string> names;
  for (int i = 0; i < 18; ++i) names.push_back("C" + std::string(1, static_cast<char>('a' + i)));
  std::vector<double> scores(18, 2.0);
  scores[16] = scores[17] = 1.0;
  auto sel = select_by_score(scores, names, 16);
  std::vector<std::string> kept = sel.kept;
  std::sort(kept.begin(), kept.end());
  CHECK(kept == std::vector<std::string>(names.begin(), names.begin() + 16));

  std::vector<std::string> shuffled{"Z", "B", "Y", "A"};
  const auto eq = select_by_score(std::vector<double>(4, 1.0), shuffled, 2);
  CHECK(eq.kept == std::vector<std::string>{"A", "B"});

  auto g = rnd::substream(2, 2);
  std::vector<std::vector<double>> data(18, std::vector<double>(500));
  std::vector<double> var(18);
  for (int c = 0; c < 18; ++c) {
    const double amp = rnd::uniform(g, 0.5, 3.0);
    for (auto& v : data[c]) v = amp * rnd::normal(g);
    const double mean = std::accumulate(data[c].begin(), data[c].end(), 0.0) / 500;
    for (double v : data[c]) var[c] += (v - mean) * (v - mean);
  }
  std::vector<int> order(18);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) { return var[a] > var[b]; });
  sel = select_channels(data, names, 16);
  for (int k = 0; k < 16; ++k) CHECK(sel.kept[k] == names[order[k]]);

  try {
    select_by_score(std::vector<double>(3, 1.0), std::vector<std::string>{"a", "b", "c"}, 16);
    FAIL("expected TooFewChannels");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::TooFewChannels);
  }
}

TEST_CASE("normalization by the global maximum") {
  FragmentSet a, b, c;
  std::vector<float> x(kFragmentSize, 0.0f);
  x[0] = 500;
  a.push(x, 0, {});
  x[0] = -300;
  b.push(x, 0, {});
  x[0] = -800;
  c.push(x, 1, {});
  std::vector<FragmentSet*> sets{&a, &b, &c};
  CHECK(normalize(sets) == 800.0);
  CHECK(a.data[0] == doctest::Approx(0.625));
  CHECK(c.data[0] == -1.0f);
  CHECK(normalize(sets) == 1.0);
  CHECK(c.data[0] == -1.0f);

  FragmentSet z;
  z.push(std::vector<float>(kFragmentSize, 0.0f), 0, {});
  std::vector<FragmentSet*> zs{&z};
  CHECK_THROWS_AS(normalize(zs), Error);
}

TEST_CASE("split plan") {
  const auto labels = label_grid(3, 3, 400, 5);
  SplitPlan plan;
  const auto s = plan_splits(labels, plan, 11);
  const auto again = plan_splits(labels, plan, 11);
  CHECK(s.dev_train == again.dev_train);

  std::set<FragmentRef> seen;
  auto count = [&](const std::vector<FragmentRef>& refs, int& pos, int& neg) {
    for (const auto& r : refs) {
      CHECK(seen.insert(r).second);
      (labels[r.patient][r.file][r.index] ? pos : neg)++;
    }
  };
  int dev_pos = 0, dev_neg = 0;
  count(s.dev_train, dev_pos, dev_neg);
  count(s.dev_val, dev_pos, dev_neg);
  CHECK(dev_neg == doctest::Approx(3.0 * dev_pos).epsilon(0.02));
  const double dev_total = static_cast<double>(s.dev_train.size() + s.dev_val.size());
  CHECK(s.dev_train.size() / dev_total == doctest::Approx(0.8).epsilon(0.02));

  int re_pos = 0, re_neg = 0;
  for (std::size_t p = 0; p < s.patients.size(); ++p) {
    const auto& ps = s.patients[p];
    CHECK(ps.test_file != 1);
    count(ps.retrain_train, re_pos, re_neg);
    count(ps.retrain_val, re_pos, re_neg);
    for (const auto& r : ps.retrain_train) CHECK(r.patient == static_cast<int>(p));
  }
  CHECK(re_neg == doctest::Approx(3.0 * re_pos).epsilon(0.02));
  for (const auto& r : seen) CHECK(r.file != s.patients[r.patient].test_file);
  CHECK(dev_total / (dev_total + re_pos + re_neg) == doctest::Approx(0.4).epsilon(0.03));
}

TEST_CASE("test file choice needs a seizure") {
  const std::vector<std::vector<std::uint8_t>> none{{0, 0}, {0, 0}};
  try {
    choose_test_file(none, 1, 0);
    FAIL("expected NoSeizureFile");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NoSeizureFile);
  }
  const std::vector<std::vector<std::uint8_t>> one{{0, 0}, {0, 1}};
  CHECK(choose_test_file(one, 1, 0) == 1);
}
