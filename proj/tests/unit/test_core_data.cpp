#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "trybuy/core_data.hpp"
#include "trybuy/simulator.hpp"

using namespace trybuy;

namespace {

std::vector<csv::Row> rows_of(const std::string& text) {
  std::istringstream in(text);
  return csv::read_all(in);
}

std::vector<ImpressionRecord> feed(const std::string& pid, std::vector<int> positions, double dwell = 1.0) {
  std::vector<ImpressionRecord> out;
  for (int p : positions) out.push_back({pid, "S" + std::to_string(p), p, dwell, false, false, {}});
  return out;
}

bool has_kind(const std::vector<Violation>& vs, ViolationKind k) {
  return std::any_of(vs.begin(), vs.end(), [&](const Violation& v) { return v.kind == k; });
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("trybuy_core_" + name)).string();
}

}  // namespace

TEST(Ratings, WellFormedFileParses) {
  auto r = parse_ratings(rows_of("rater_id,post_id,feature,value\nR1,P1,truth,4\nR2,P1,truth,2\nR1,P2,sharing,1.5\n"));
  ASSERT_EQ(r.rows.size(), 3u);
  EXPECT_TRUE(r.errors.empty());
  EXPECT_EQ(r.rows[2].feature, *feature_index("sharing"));
  EXPECT_DOUBLE_EQ(r.rows[2].value, 1.5);
}

TEST(Ratings, BadRowsAreReportedWithLineNumbers) {
  auto r = parse_ratings(
      rows_of("rater_id,post_id,feature,value\nR1,P1,credibility,4\nR1,P1,truth,abc\nR1,P1,truth,3\nR1,P1,truth\n"));
  EXPECT_EQ(r.rows.size(), 1u);
  ASSERT_EQ(r.errors.size(), 3u);
  EXPECT_EQ(r.errors[0].line, 2u);
  EXPECT_NE(r.errors[0].message.find("credibility"), std::string::npos);
  EXPECT_EQ(r.errors[1].line, 3u);
  EXPECT_EQ(r.errors[2].line, 5u);
}

TEST(Ratings, HeaderMismatchAndMissingFileAreInputErrors) {
  EXPECT_THROW(parse_ratings(rows_of("rater,post,feature,value\n")), InputError);
  EXPECT_THROW(load_ratings("/nonexistent/ratings.csv"), InputError);
}

TEST(Aggregate, ForcedMeans) {
  std::vector<RatingRecord> recs;
  for (std::size_t f = 0; f < kFeatureCount; ++f) recs.push_back({"R1", "P1", f, 5.0});
  recs.push_back({"R2", "P1", 0, 1.0});  // familiarity {5, 1}
  auto agg = aggregate_ratings(recs);
  ASSERT_EQ(agg.matrix.rows(), 1u);
  EXPECT_DOUBLE_EQ(agg.matrix.values(0, 0), 3.0);
  EXPECT_DOUBLE_EQ(agg.matrix.values(0, 1), 5.0);
}

TEST(Aggregate, IncompletePostsAreDroppedNotImputed) {
  std::vector<RatingRecord> recs;
  for (std::size_t f = 0; f < kFeatureCount; ++f) recs.push_back({"R1", "A", f, 1.0});
  for (std::size_t f = 0; f + 1 < kFeatureCount; ++f) recs.push_back({"R1", "B", f, 1.0});
  auto agg = aggregate_ratings(recs);
  EXPECT_EQ(agg.matrix.post_ids, std::vector<std::string>{"A"});
  EXPECT_EQ(agg.dropped_posts, std::vector<std::string>{"B"});
}

TEST(Aggregate, EmptyInputGivesEmptyMatrixAndWarning) {
  auto agg = aggregate_ratings({});
  EXPECT_EQ(agg.matrix.rows(), 0u);
  EXPECT_EQ(agg.matrix.values.cols(), static_cast<Eigen::Index>(kFeatureCount));
  EXPECT_FALSE(agg.warnings.empty());
}

TEST(Aggregate, MatchesSumCountOracle) {
  std::mt19937_64 rng(7);
  std::vector<RatingRecord> recs;
  std::vector<std::string> posts{"P1", "P2", "P3", "P4"};
  // Guarantee coverage, then 100 random records on top.
  for (const auto& p : posts)
    for (std::size_t f = 0; f < kFeatureCount; ++f) recs.push_back({"R0", p, f, 3.0});
  std::uniform_int_distribution<int> pick_post(0, 3), pick_feature(0, 7), pick_value(1, 7);
  for (int i = 0; i < 100; ++i)
    recs.push_back({"R" + std::to_string(i), posts[pick_post(rng)], static_cast<std::size_t>(pick_feature(rng)),
                    static_cast<double>(pick_value(rng))});
  std::map<std::pair<std::string, std::size_t>, std::pair<double, int>> oracle;
  for (const auto& r : recs) {
    auto& cell = oracle[{r.post_id, r.feature}];
    cell.first += r.value;
    cell.second += 1;
  }
  auto agg = aggregate_ratings(recs);
  ASSERT_EQ(agg.matrix.rows(), 4u);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t f = 0; f < kFeatureCount; ++f) {
      auto [sum, count] = oracle.at({agg.matrix.post_ids[i], f});
      EXPECT_NEAR(agg.matrix.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(f)), sum / count, 1e-12);
    }
  double per_cell = mean_ratings_per_cell(recs);
  EXPECT_NEAR(per_cell, static_cast<double>(recs.size()) / 32.0, 1e-12);
}

TEST(Aggregate, PermutationInvariant) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> noise(0.0, 1e3);
  std::vector<RatingRecord> recs;
  for (int p = 0; p < 20; ++p)
    for (std::size_t f = 0; f < kFeatureCount; ++f)
      for (int k = 0; k < 15; ++k) recs.push_back({"R", "P" + std::to_string(p), f, noise(rng) + 1e-7 * k});
  auto base = aggregate_ratings(recs);
  for (int trial = 0; trial < 5; ++trial) {
    std::shuffle(recs.begin(), recs.end(), rng);
    auto again = aggregate_ratings(recs);
    EXPECT_EQ(again.matrix.post_ids, base.matrix.post_ids);
    // Bitwise equality, not approximate.
    EXPECT_TRUE((again.matrix.values.array() == base.matrix.values.array()).all());
  }
}

TEST(Validation, FullFeedOf120IsValid) {
  std::vector<int> pos(120);
  std::iota(pos.begin(), pos.end(), 1);
  EXPECT_TRUE(validate_impressions(feed("U1", pos)).empty());
}

TEST(Validation, GapInPositionsIsContiguityViolation) {
  auto vs = validate_impressions(feed("U1", {1, 2, 4}));
  ASSERT_EQ(vs.size(), 1u);
  EXPECT_EQ(vs[0].kind, ViolationKind::non_contiguous_positions);
}

TEST(Validation, NegativeDwellIsViolation) {
  auto imps = feed("U1", {1, 2});
  imps[1].dwell_raw = -0.5;
  EXPECT_TRUE(has_kind(validate_impressions(imps), ViolationKind::negative_dwell));
}

TEST(Validation, DuplicatePositionAndDanglingPost) {
  auto imps = feed("U1", {1, 1, 2});
  EXPECT_TRUE(has_kind(validate_impressions(imps), ViolationKind::duplicate_position));
  std::vector<Post> posts{{"S1", "", "", Category::mundane, {}}, {"S2", "", "", Category::mundane, {}}};
  auto ok = validate_dataset(posts, feed("U1", {1, 2}));
  EXPECT_TRUE(ok.ok());
  ASSERT_TRUE(ok.dataset);
  auto bad = validate_dataset(posts, feed("U1", {1, 2, 3}));
  EXPECT_FALSE(bad.ok());
  EXPECT_FALSE(bad.dataset);
  EXPECT_TRUE(has_kind(bad.violations, ViolationKind::dangling_post));
}

TEST(Validation, NonFiniteFeatureRejected) {
  Post p{"S1", "", "", Category::opinion, {}};
  p.features[3] = std::nan("");
  auto res = validate_dataset({p}, feed("U1", {1}));
  EXPECT_TRUE(has_kind(res.violations, ViolationKind::non_finite_feature));
}

TEST(Impressions, ParsesOptionalAdjustedColumnAndRejectsEmptyFile) {
  auto r = parse_impressions(rows_of("participant_id,post_id,position,dwell_raw,shared,liked\nU,S,1,2.500,1,0\n"));
  ASSERT_EQ(r.rows.size(), 1u);
  EXPECT_TRUE(r.rows[0].shared);
  EXPECT_EQ(r.rows[0].action_count(), 1);
  EXPECT_FALSE(r.rows[0].dwell_adjusted);
  auto a = parse_impressions(
      rows_of("participant_id,post_id,position,dwell_raw,shared,liked,dwell_adjusted\nU,S,1,2.5,1,1,0.1\n"));
  ASSERT_EQ(a.rows.size(), 1u);
  EXPECT_DOUBLE_EQ(*a.rows[0].dwell_adjusted, 0.1);
  EXPECT_EQ(a.rows[0].action_count(), 2);
  try {
    parse_impressions({});
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("participant_id,post_id,position"), std::string::npos);
  }
  auto bad = parse_impressions(rows_of("participant_id,post_id,position,dwell_raw,shared,liked\nU,S,x,1,0,0\nU,S,1,1,2,0\n"));
  EXPECT_EQ(bad.errors.size(), 2u);
}

TEST(RoundTrip, CanonicalCsvIsByteIdentical) {
  SimConfig cfg;
  cfg.participants = 3;
  auto sim = simulate_dataset(cfg);
  std::ostringstream first;
  write_impressions_csv(first, sim.dataset.impressions, false);
  auto reparsed = parse_impressions(rows_of(first.str()));
  ASSERT_TRUE(reparsed.errors.empty());
  std::ostringstream second;
  write_impressions_csv(second, reparsed.rows, false);
  EXPECT_EQ(first.str(), second.str());

  std::ostringstream p1;
  write_posts_csv(p1, sim.dataset.posts);
  auto posts = parse_posts(rows_of(p1.str()));
  ASSERT_TRUE(posts.errors.empty());
  std::ostringstream p2;
  write_posts_csv(p2, posts.rows);
  EXPECT_EQ(p1.str(), p2.str());

  std::ostringstream r1;
  write_ratings_csv(r1, ratings_from_posts(sim.dataset.posts));
  auto ratings = parse_ratings(rows_of(r1.str()));
  ASSERT_TRUE(ratings.errors.empty());
  std::ostringstream r2;
  write_ratings_csv(r2, ratings.rows);
  EXPECT_EQ(r1.str(), r2.str());
  // Ratings reproduce the features exactly.
  auto agg = aggregate_ratings(ratings.rows);
  auto fm = feature_matrix(sim.dataset.posts);
  EXPECT_TRUE((agg.matrix.values.array() == fm.values.array()).all());
}

TEST(RoundTrip, DatasetJsonIsByteIdentical) {
  SimConfig cfg;
  cfg.participants = 2;
  auto sim = simulate_dataset(cfg);
  auto path = temp_path("dataset.json");
  save_dataset_json(path, sim.dataset);
  auto loaded = load_dataset_json(path);
  EXPECT_EQ(to_json(loaded).dump(2), to_json(sim.dataset).dump(2));
  EXPECT_EQ(loaded.impressions.size(), sim.dataset.impressions.size());
  EXPECT_EQ(loaded.posts[5].features, sim.dataset.posts[5].features);
  std::filesystem::remove(path);
}

TEST(Digest, Sha256KnownVector) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Closure, SimulatorOutputAlwaysValidates) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    SimConfig cfg;
    cfg.participants = 20;
    cfg.seed = seed;
    auto sim = simulate_dataset(cfg);
    auto res = validate_dataset(sim.dataset.posts, sim.dataset.impressions, sim.dataset.provenance);
    EXPECT_TRUE(res.ok()) << format_violations(res.violations);
  }
  SimConfig small;
  small.participants = 5;
  small.feed_length = 12;
  small.news_per_feed = 12;
  small.composition = {6, 6, 0, 0};
  auto sim = simulate_dataset(small);
  EXPECT_TRUE(validate_dataset(sim.dataset.posts, sim.dataset.impressions).ok());
}
