#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "lfp/double_edge.hpp"
#include "test_util.hpp"

using namespace lfp;

namespace {

DoubleEdgeSet one_pair(int plan_l, int plan_r) {
  DoubleEdgeSet s;
  s.n_d = 1;
  s.n_p = 2;
  DoubleEdgeLane lane;
  lane.left.push_back({{0, 0, 0}, 0, plan_l});
  lane.right.push_back({{2, 0, 0}, 0, plan_r});
  s.lanes.push_back(lane);
  return s;
}

// Straight filter over every pair, written without reference to the library loop.
std::vector<Vec3> oracle_path(const DoubleEdgeSet& s) {
  std::vector<Vec3> out;
  for (const auto& lane : s.lanes) {
    for (std::size_t j = 0; j < lane.left.size(); ++j) {
      if (lane.left[j].plan && lane.right[j].plan) {
        const Vec3& a = lane.left[j].position;
        const Vec3& b = lane.right[j].position;
        out.push_back({(a.x + b.x) / 2, (a.y + b.y) / 2, (a.z + b.z) / 2});
      }
    }
  }
  return out;
}

}  // namespace

TEST(Interpreter, SinglePairMidpoint) {
  const auto path = interpret_path(one_pair(1, 1), 3.0);
  ASSERT_EQ(path.waypoints.size(), 1u);
  EXPECT_EQ(path.waypoints[0], (Vec3{1, 0, 0}));
  EXPECT_EQ(path.target_speed, 3.0);
}

TEST(Interpreter, NoPlanFlagsGivesEmptyPath) {
  EXPECT_TRUE(interpret_path(one_pair(0, 0), 1.0).empty());
  EXPECT_TRUE(interpret_path(one_pair(1, 0), 1.0).empty());
  EXPECT_TRUE(interpret_path(one_pair(0, 1), 1.0).empty());
}

TEST(Interpreter, MismatchedEdgesThrow) {
  auto s = one_pair(1, 1);
  s.lanes[0].right.push_back({{3, 0, 0}, 0, 1});
  EXPECT_THROW(interpret_path(s, 1.0), StructuralError);
}

TEST(Interpreter, MatchesOracleOnMixedFlags) {
  std::mt19937_64 g(11);
  const auto s = test::random_set(g, 2, 20);
  const auto path = interpret_path(s, 0.0);
  EXPECT_EQ(path.waypoints, oracle_path(s));
}

TEST(Interpreter, LengthCountsBothFlagsSet) {
  std::mt19937_64 g(5);
  for (int trial = 0; trial < 200; ++trial) {
    const auto s = test::random_set(g, 1 + trial % 6, 2 * (1 + trial % 10));
    std::size_t both = 0;
    for (const auto& lane : s.lanes) {
      for (std::size_t j = 0; j < lane.left.size(); ++j) both += lane.left[j].plan == 1 && lane.right[j].plan == 1;
    }
    EXPECT_EQ(interpret_path(s, 0).waypoints.size(), both);
  }
}

TEST(Interpreter, LanePermutationPermutesBlocks) {
  std::mt19937_64 g(17);
  for (int trial = 0; trial < 50; ++trial) {
    auto s = test::random_set(g, 5, 12);
    std::vector<std::size_t> perm(s.lanes.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), g);
    DoubleEdgeSet t = s;
    for (std::size_t i = 0; i < perm.size(); ++i) t.lanes[i] = s.lanes[perm[i]];
    std::vector<Vec3> expected;
    for (std::size_t i : perm) {
      DoubleEdgeSet single{1, s.n_p, {s.lanes[i]}};
      const auto block = interpret_path(single, 0).waypoints;
      expected.insert(expected.end(), block.begin(), block.end());
    }
    EXPECT_EQ(interpret_path(t, 0).waypoints, expected);
  }
}

TEST(Validate, WellFormedSetHasNoDiagnostics) {
  std::mt19937_64 g(1);
  EXPECT_TRUE(validate(test::random_set(g, 6, 20)).empty());
}

TEST(Validate, LengthMismatchIsOneDiagnostic) {
  std::mt19937_64 g(2);
  auto s = test::random_set(g, 1, 20);
  s.lanes[0].left.pop_back();
  const auto d = validate(s);
  ASSERT_EQ(d.size(), 1u);
  EXPECT_NE(d[0].find("mismatch"), std::string::npos);
}

TEST(Validate, OccOutOfDomainViaRawDecode) {
  std::mt19937_64 g(3);
  auto j = to_json(test::random_set(g, 2, 4));
  j["lanes"][1]["left"][0]["occ"] = 2;
  const auto raw = double_edge_from_json_raw(j);
  const auto d = validate(raw);
  ASSERT_EQ(d.size(), 1u);
  EXPECT_NE(d[0].find("occ"), std::string::npos);
  EXPECT_THROW(double_edge_from_json(j), ValidationError);
}

TEST(Validate, DeclaredLaneCountMustMatch) {
  std::mt19937_64 g(4);
  auto s = test::random_set(g, 3, 4);
  s.n_d = 4;
  EXPECT_EQ(validate(s).size(), 1u);
}

TEST(Serialization, SixLaneRoundTrip) {
  std::mt19937_64 g(6);
  const auto s = test::random_set(g, 6, 20);
  EXPECT_EQ(deserialize(serialize(s)), s);
}

TEST(Serialization, RoundTripIsIdentityOnRandomSets) {
  std::mt19937_64 g(7);
  std::uniform_real_distribution<double> wide(-1e6, 1e6);
  for (int trial = 0; trial < 300; ++trial) {
    auto s = test::random_set(g, trial % 7, 2 * (1 + trial % 12));
    // Awkward magnitudes exercise the shortest round-trip formatting.
    for (auto& lane : s.lanes) {
      for (auto& p : lane.left) p.position.x = wide(g) * 1e-7;
    }
    const auto back = deserialize(serialize(s));
    ASSERT_EQ(back, s) << "trial " << trial;
  }
}

TEST(Serialization, TruncatedInputIsParseError) {
  std::mt19937_64 g(8);
  const auto text = serialize(test::random_set(g, 2, 4));
  for (std::size_t cut : {std::size_t{0}, std::size_t{1}, text.size() / 2, text.size() - 1}) {
    EXPECT_THROW(deserialize(text.substr(0, cut)), ParseError) << "cut at " << cut;
  }
}

TEST(Serialization, ParseErrorNamesTheField) {
  std::mt19937_64 g(9);
  auto j = to_json(test::random_set(g, 2, 4));
  j["lanes"][0]["right"][1]["p"] = nlohmann::json::array({1.0, 2.0});
  try {
    double_edge_from_json(j);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.location, "$.lanes[0].right[1].p");
  }
}

TEST(Serialization, FlagOutOfDomainRejectedOnLoad) {
  std::mt19937_64 g(10);
  auto j = to_json(test::random_set(g, 1, 2));
  j["lanes"][0]["dir"] = 3;
  EXPECT_THROW(deserialize(j.dump()), ValidationError);
}

TEST(Serialization, SerializeRefusesInvalidSet) {
  std::mt19937_64 g(12);
  auto s = test::random_set(g, 1, 4);
  s.lanes[0].left[0].plan = -1;
  EXPECT_THROW(serialize(s), ValidationError);
}
