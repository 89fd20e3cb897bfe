#pragma once

// Domain types, CSV ingestion/validation, rating aggregation and persistence.
//
// Files share one fixed schema between the simulator and real study exports:
//   ratings.csv      rater_id,post_id,feature,value
//   posts.csv        post_id,headline,source,category
//   impressions.csv  participant_id,post_id,position,dwell_raw,shared,liked[,dwell_adjusted]

#include <openssl/evp.h>

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "trybuy/csv.hpp"
#include "trybuy/error.hpp"

namespace trybuy {

inline constexpr std::size_t kFeatureCount = 8;
inline constexpr std::array<std::string_view, kFeatureCount> kFeatureNames = {
    "familiarity", "favorability", "impactful", "informative",
    "provocative", "sharing",      "surprising", "truth"};

using FeatureVector = std::array<double, kFeatureCount>;

inline std::optional<std::size_t> feature_index(std::string_view name) {
  for (std::size_t i = 0; i < kFeatureCount; ++i)
    if (kFeatureNames[i] == name) return i;
  return std::nullopt;
}

enum class Category { true_news, false_news, opinion, mundane };

inline std::string_view to_string(Category c) {
  switch (c) {
    case Category::true_news: return "true_news";
    case Category::false_news: return "false_news";
    case Category::opinion: return "opinion";
    case Category::mundane: return "mundane";
  }
  return "mundane";
}

inline std::optional<Category> parse_category(std::string_view s) {
  if (s == "true_news") return Category::true_news;
  if (s == "false_news") return Category::false_news;
  if (s == "opinion") return Category::opinion;
  if (s == "mundane") return Category::mundane;
  return std::nullopt;
}

inline bool is_news(Category c) { return c == Category::true_news || c == Category::false_news; }

// Metadata row of posts.csv; features arrive separately through ratings.
struct PostInfo {
  std::string post_id;
  std::string headline;
  std::string source;
  Category category = Category::true_news;
};

struct Post {
  std::string post_id;
  std::string headline;
  std::string source;
  Category category = Category::true_news;
  FeatureVector features{};
};

struct RatingRecord {
  std::string rater_id;
  std::string post_id;
  std::size_t feature = 0;  // index into kFeatureNames
  double value = 0.0;
};

struct ImpressionRecord {
  std::string participant_id;
  std::string post_id;
  int position = 1;
  double dwell_raw = 0.0;
  bool shared = false;
  bool liked = false;
  std::optional<double> dwell_adjusted;

  int action_count() const { return static_cast<int>(shared) + static_cast<int>(liked); }
  bool engaged() const { return shared || liked; }
};

struct FeatureMatrix {
  std::vector<std::string> post_ids;
  std::vector<std::string> columns;
  Eigen::MatrixXd values;  // posts x features

  std::size_t rows() const { return post_ids.size(); }
};

struct RowError {
  std::size_t line = 0;
  std::string message;
};

template <class T>
struct LoadResult {
  std::vector<T> rows;
  std::vector<RowError> errors;
};

struct Provenance {
  std::map<std::string, std::string> digests;  // file label -> sha256 hex
  std::string ingested_at;                     // ISO-8601 UTC
};

struct Dataset {
  std::vector<Post> posts;
  std::vector<ImpressionRecord> impressions;
  Provenance provenance;
};

// ---------------------------------------------------------------------------
// Digests

inline std::string sha256_hex(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw InternalError("sha256 digest failed");
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i)
    os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return os.str();
}

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open file: " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline std::string file_sha256(const std::string& path) { return sha256_hex(read_file_bytes(path)); }

inline std::string utc_timestamp() {
  auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// ---------------------------------------------------------------------------
// Loading

namespace detail {

inline void require_header(const std::vector<csv::Row>& rows, const std::vector<std::string>& expected,
                           const std::string& what) {
  auto schema = [&] {
    std::string s;
    for (std::size_t i = 0; i < expected.size(); ++i) s += (i ? "," : "") + expected[i];
    return s;
  };
  if (rows.empty()) throw InputError(what + " is empty; expected header: " + schema());
  if (rows.front().fields != expected)
    throw InputError(what + " header mismatch; expected: " + schema());
}

inline std::optional<bool> parse_flag(std::string_view s) {
  if (s == "0") return false;
  if (s == "1") return true;
  return std::nullopt;
}

}  // namespace detail

inline LoadResult<RatingRecord> parse_ratings(const std::vector<csv::Row>& rows,
                                              const std::string& what = "ratings.csv") {
  detail::require_header(rows, {"rater_id", "post_id", "feature", "value"}, what);
  LoadResult<RatingRecord> out;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (r.fields.size() != 4) {
      out.errors.push_back({r.line, "expected 4 fields, got " + std::to_string(r.fields.size())});
      continue;
    }
    auto f = feature_index(r.fields[2]);
    if (!f) {
      out.errors.push_back({r.line, "unknown feature '" + r.fields[2] + "'"});
      continue;
    }
    auto v = csv::parse_double(r.fields[3]);
    if (!v || !std::isfinite(*v)) {
      out.errors.push_back({r.line, "non-numeric value '" + r.fields[3] + "'"});
      continue;
    }
    if (r.fields[1].empty()) {
      out.errors.push_back({r.line, "empty post_id"});
      continue;
    }
    out.rows.push_back({r.fields[0], r.fields[1], *f, *v});
  }
  return out;
}

inline LoadResult<RatingRecord> load_ratings(const std::string& path) {
  return parse_ratings(csv::read_file(path), path);
}

inline LoadResult<PostInfo> parse_posts(const std::vector<csv::Row>& rows,
                                        const std::string& what = "posts.csv") {
  detail::require_header(rows, {"post_id", "headline", "source", "category"}, what);
  LoadResult<PostInfo> out;
  std::set<std::string> seen;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (r.fields.size() != 4) {
      out.errors.push_back({r.line, "expected 4 fields, got " + std::to_string(r.fields.size())});
      continue;
    }
    auto cat = parse_category(r.fields[3]);
    if (!cat) {
      out.errors.push_back({r.line, "unknown category '" + r.fields[3] + "'"});
      continue;
    }
    if (r.fields[0].empty() || !seen.insert(r.fields[0]).second) {
      out.errors.push_back({r.line, "empty or duplicate post_id '" + r.fields[0] + "'"});
      continue;
    }
    out.rows.push_back({r.fields[0], r.fields[1], r.fields[2], *cat});
  }
  return out;
}

inline LoadResult<PostInfo> load_posts(const std::string& path) {
  return parse_posts(csv::read_file(path), path);
}

inline const std::vector<std::string>& impression_header(bool with_adjusted) {
  static const std::vector<std::string> base{"participant_id", "post_id", "position",
                                             "dwell_raw",      "shared",  "liked"};
  static const std::vector<std::string> adjusted{"participant_id", "post_id", "position", "dwell_raw",
                                                 "shared",         "liked",   "dwell_adjusted"};
  return with_adjusted ? adjusted : base;
}

inline LoadResult<ImpressionRecord> parse_impressions(const std::vector<csv::Row>& rows,
                                                      const std::string& what = "impressions.csv") {
  if (rows.empty())
    throw InputError(what + " is empty; expected header: "
                            "participant_id,post_id,position,dwell_raw,shared,liked[,dwell_adjusted]");
  bool with_adjusted = rows.front().fields == impression_header(true);
  if (!with_adjusted) detail::require_header(rows, impression_header(false), what);
  std::size_t width = with_adjusted ? 7 : 6;

  LoadResult<ImpressionRecord> out;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (r.fields.size() != width) {
      out.errors.push_back({r.line, "expected " + std::to_string(width) + " fields, got " +
                                        std::to_string(r.fields.size())});
      continue;
    }
    auto pos = csv::parse_int(r.fields[2]);
    auto dwell = csv::parse_double(r.fields[3]);
    auto shared = detail::parse_flag(r.fields[4]);
    auto liked = detail::parse_flag(r.fields[5]);
    if (!pos) {
      out.errors.push_back({r.line, "non-integer position '" + r.fields[2] + "'"});
      continue;
    }
    if (!dwell || !std::isfinite(*dwell)) {
      out.errors.push_back({r.line, "non-numeric dwell_raw '" + r.fields[3] + "'"});
      continue;
    }
    if (!shared || !liked) {
      out.errors.push_back({r.line, "shared/liked must be 0 or 1"});
      continue;
    }
    ImpressionRecord rec{r.fields[0], r.fields[1], static_cast<int>(*pos), *dwell, *shared, *liked, {}};
    if (with_adjusted) {
      auto adj = csv::parse_double(r.fields[6]);
      if (!adj || !std::isfinite(*adj)) {
        out.errors.push_back({r.line, "non-numeric dwell_adjusted '" + r.fields[6] + "'"});
        continue;
      }
      rec.dwell_adjusted = *adj;
    }
    out.rows.push_back(std::move(rec));
  }
  return out;
}

inline LoadResult<ImpressionRecord> load_impressions(const std::string& path) {
  return parse_impressions(csv::read_file(path), path);
}

inline std::string format_errors(const std::vector<RowError>& errors, std::size_t limit = 20) {
  std::ostringstream os;
  for (std::size_t i = 0; i < errors.size() && i < limit; ++i)
    os << "  line " << errors[i].line << ": " << errors[i].message << '\n';
  if (errors.size() > limit) os << "  ... " << errors.size() - limit << " more\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// Rating aggregation

struct AggregateResult {
  FeatureMatrix matrix;
  std::vector<std::string> dropped_posts;  // missing at least one feature
  std::vector<std::string> warnings;
};

/// Cell = mean of that post/feature's ratings. Posts lacking any feature are
/// dropped (never imputed). Rows are sorted by post_id and each cell's values
/// are summed in sorted order, so the result does not depend on input order.
inline AggregateResult aggregate_ratings(const std::vector<RatingRecord>& records) {
  AggregateResult out;
  out.matrix.columns.assign(kFeatureNames.begin(), kFeatureNames.end());
  if (records.empty()) {
    out.matrix.values.resize(0, kFeatureCount);
    out.warnings.push_back("no rating records; feature matrix is empty");
    return out;
  }
  std::map<std::string, std::array<std::vector<double>, kFeatureCount>> cells;
  for (const auto& r : records) cells[r.post_id][r.feature].push_back(r.value);

  std::vector<std::pair<std::string, FeatureVector>> kept;
  for (auto& [post, per_feature] : cells) {
    FeatureVector row{};
    bool complete = true;
    for (std::size_t f = 0; f < kFeatureCount; ++f) {
      auto& vals = per_feature[f];
      if (vals.empty()) {
        complete = false;
        break;
      }
      std::sort(vals.begin(), vals.end());
      double sum = 0.0;
      for (double v : vals) sum += v;
      row[f] = sum / static_cast<double>(vals.size());
    }
    if (complete) {
      kept.emplace_back(post, row);
    } else {
      out.dropped_posts.push_back(post);
    }
  }
  if (!out.dropped_posts.empty())
    out.warnings.push_back(std::to_string(out.dropped_posts.size()) +
                           " post(s) dropped for incomplete feature coverage");
  out.matrix.values.resize(static_cast<Eigen::Index>(kept.size()), kFeatureCount);
  for (std::size_t i = 0; i < kept.size(); ++i) {
    out.matrix.post_ids.push_back(kept[i].first);
    for (std::size_t f = 0; f < kFeatureCount; ++f)
      out.matrix.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(f)) = kept[i].second[f];
  }
  return out;
}

/// Average number of ratings per (post, feature) cell.
inline double mean_ratings_per_cell(const std::vector<RatingRecord>& records) {
  std::set<std::pair<std::string, std::size_t>> cells;
  for (const auto& r : records) cells.emplace(r.post_id, r.feature);
  return cells.empty() ? 0.0 : static_cast<double>(records.size()) / static_cast<double>(cells.size());
}

inline FeatureMatrix feature_matrix(const std::vector<Post>& posts) {
  FeatureMatrix m;
  m.columns.assign(kFeatureNames.begin(), kFeatureNames.end());
  m.values.resize(static_cast<Eigen::Index>(posts.size()), kFeatureCount);
  for (std::size_t i = 0; i < posts.size(); ++i) {
    m.post_ids.push_back(posts[i].post_id);
    for (std::size_t f = 0; f < kFeatureCount; ++f)
      m.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(f)) = posts[i].features[f];
  }
  return m;
}

// Joins posts.csv metadata with aggregated features. Posts without features
// are reported in `missing`.
inline std::vector<Post> assemble_posts(const std::vector<PostInfo>& infos, const FeatureMatrix& matrix,
                                        std::vector<std::string>* missing = nullptr) {
  std::map<std::string, Eigen::Index> row_of;
  for (std::size_t i = 0; i < matrix.post_ids.size(); ++i)
    row_of[matrix.post_ids[i]] = static_cast<Eigen::Index>(i);
  std::vector<Post> posts;
  for (const auto& info : infos) {
    auto it = row_of.find(info.post_id);
    if (it == row_of.end()) {
      if (missing) missing->push_back(info.post_id);
      continue;
    }
    Post p{info.post_id, info.headline, info.source, info.category, {}};
    for (std::size_t f = 0; f < kFeatureCount; ++f)
      p.features[f] = matrix.values(it->second, static_cast<Eigen::Index>(f));
    posts.push_back(std::move(p));
  }
  return posts;
}

// ---------------------------------------------------------------------------
// Validation

enum class ViolationKind {
  dangling_post,
  duplicate_position,
  non_contiguous_positions,
  negative_dwell,
  invalid_position,
  non_finite_feature,
  duplicate_post
};

inline std::string_view to_string(ViolationKind k) {
  switch (k) {
    case ViolationKind::dangling_post: return "dangling_post";
    case ViolationKind::duplicate_position: return "duplicate_position";
    case ViolationKind::non_contiguous_positions: return "non_contiguous_positions";
    case ViolationKind::negative_dwell: return "negative_dwell";
    case ViolationKind::invalid_position: return "invalid_position";
    case ViolationKind::non_finite_feature: return "non_finite_feature";
    case ViolationKind::duplicate_post: return "duplicate_post";
  }
  return "unknown";
}

struct Violation {
  ViolationKind kind;
  std::string participant_id;
  std::string post_id;
  int position = 0;
  std::string message;
};

struct ValidationResult {
  std::optional<Dataset> dataset;
  std::vector<Violation> violations;

  bool ok() const { return violations.empty(); }
};

/// Impression-level checks: positions >= 1, unique and contiguous 1..n per
/// participant, non-negative dwell.
inline std::vector<Violation> validate_impressions(const std::vector<ImpressionRecord>& impressions) {
  std::vector<Violation> out;
  std::map<std::string, std::vector<int>> positions;
  for (const auto& imp : impressions) {
    if (!(imp.dwell_raw >= 0.0))
      out.push_back({ViolationKind::negative_dwell, imp.participant_id, imp.post_id, imp.position,
                     "dwell_raw " + csv::format_shortest(imp.dwell_raw) + " < 0"});
    if (imp.position < 1) {
      out.push_back({ViolationKind::invalid_position, imp.participant_id, imp.post_id, imp.position,
                     "position must be >= 1"});
      continue;
    }
    positions[imp.participant_id].push_back(imp.position);
  }
  for (auto& [pid, pos] : positions) {
    std::sort(pos.begin(), pos.end());
    bool duplicate = false;
    for (std::size_t i = 1; i < pos.size(); ++i) {
      if (pos[i] == pos[i - 1]) {
        out.push_back({ViolationKind::duplicate_position, pid, "", pos[i],
                       "position " + std::to_string(pos[i]) + " appears more than once"});
        duplicate = true;
      }
    }
    if (duplicate) continue;
    for (std::size_t i = 0; i < pos.size(); ++i) {
      if (pos[i] != static_cast<int>(i) + 1) {
        out.push_back({ViolationKind::non_contiguous_positions, pid, "", static_cast<int>(i) + 1,
                       "positions are not contiguous 1.." + std::to_string(pos.size()) +
                           " (missing " + std::to_string(i + 1) + ")"});
        break;
      }
    }
  }
  return out;
}

inline ValidationResult validate_dataset(std::vector<Post> posts, std::vector<ImpressionRecord> impressions,
                                         Provenance provenance = {}) {
  ValidationResult result;
  std::set<std::string> ids;
  for (const auto& p : posts) {
    if (!ids.insert(p.post_id).second)
      result.violations.push_back({ViolationKind::duplicate_post, "", p.post_id, 0, "duplicate post_id"});
    for (std::size_t f = 0; f < kFeatureCount; ++f)
      if (!std::isfinite(p.features[f]))
        result.violations.push_back({ViolationKind::non_finite_feature, "", p.post_id, 0,
                                     std::string("feature ") + std::string(kFeatureNames[f]) +
                                         " is not finite"});
  }
  for (const auto& imp : impressions)
    if (!ids.count(imp.post_id))
      result.violations.push_back({ViolationKind::dangling_post, imp.participant_id, imp.post_id, imp.position,
                                   "post_id '" + imp.post_id + "' not in posts table"});
  auto imp_violations = validate_impressions(impressions);
  result.violations.insert(result.violations.end(), imp_violations.begin(), imp_violations.end());
  if (result.violations.empty())
    result.dataset = Dataset{std::move(posts), std::move(impressions), std::move(provenance)};
  return result;
}

inline std::string format_violations(const std::vector<Violation>& vs, std::size_t limit = 20) {
  std::ostringstream os;
  for (std::size_t i = 0; i < vs.size() && i < limit; ++i) {
    os << "  " << to_string(vs[i].kind);
    if (!vs[i].participant_id.empty()) os << " participant=" << vs[i].participant_id;
    if (!vs[i].post_id.empty()) os << " post=" << vs[i].post_id;
    os << ": " << vs[i].message << '\n';
  }
  if (vs.size() > limit) os << "  ... " << vs.size() - limit << " more\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// Persistence. Dwell is written with 6 fixed decimals; ratings use the
// shortest round-trip form.

inline void write_ratings_csv(std::ostream& out, const std::vector<RatingRecord>& records) {
  csv::write_row(out, {"rater_id", "post_id", "feature", "value"});
  for (const auto& r : records)
    csv::write_row(out, {r.rater_id, r.post_id, std::string(kFeatureNames[r.feature]),
                         csv::format_shortest(r.value)});
}

inline void write_posts_csv(std::ostream& out, const std::vector<PostInfo>& posts) {
  csv::write_row(out, {"post_id", "headline", "source", "category"});
  for (const auto& p : posts)
    csv::write_row(out, {p.post_id, p.headline, p.source, std::string(to_string(p.category))});
}

inline void write_posts_csv(std::ostream& out, const std::vector<Post>& posts) {
  std::vector<PostInfo> infos;
  for (const auto& p : posts) infos.push_back({p.post_id, p.headline, p.source, p.category});
  write_posts_csv(out, infos);
}

inline void write_impressions_csv(std::ostream& out, const std::vector<ImpressionRecord>& impressions,
                                  bool with_adjusted) {
  csv::write_row(out, impression_header(with_adjusted));
  for (const auto& imp : impressions) {
    std::vector<std::string> f{imp.participant_id,
                               imp.post_id,
                               std::to_string(imp.position),
                               csv::format_fixed(imp.dwell_raw, 6),
                               imp.shared ? "1" : "0",
                               imp.liked ? "1" : "0"};
    if (with_adjusted) {
      if (!imp.dwell_adjusted) throw InternalError("impression without dwell_adjusted written to cleaned CSV");
      f.push_back(csv::format_fixed(*imp.dwell_adjusted, 6));
    }
    csv::write_row(out, f);
  }
}

template <class Writer>
void write_file(const std::string& path, Writer&& writer) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write file: " + path);
  writer(out);
  if (!out) throw InputError("write failed: " + path);
}

// Features as one rating per cell, so that aggregate_ratings reproduces them.
inline std::vector<RatingRecord> ratings_from_posts(const std::vector<Post>& posts,
                                                    const std::string& rater_id = "sim") {
  std::vector<RatingRecord> out;
  for (const auto& p : posts)
    for (std::size_t f = 0; f < kFeatureCount; ++f) out.push_back({rater_id, p.post_id, f, p.features[f]});
  return out;
}

inline nlohmann::ordered_json to_json(const Dataset& d) {
  using nlohmann::ordered_json;
  ordered_json j;
  ordered_json prov;
  prov["digests"] = d.provenance.digests;
  prov["ingested_at"] = d.provenance.ingested_at;
  j["provenance"] = prov;
  ordered_json posts = ordered_json::array();
  for (const auto& p : d.posts) {
    ordered_json jp;
    jp["post_id"] = p.post_id;
    jp["headline"] = p.headline;
    jp["source"] = p.source;
    jp["category"] = std::string(to_string(p.category));
    ordered_json feats;
    for (std::size_t f = 0; f < kFeatureCount; ++f) feats[std::string(kFeatureNames[f])] = p.features[f];
    jp["features"] = feats;
    posts.push_back(jp);
  }
  j["posts"] = posts;
  ordered_json imps = ordered_json::array();
  for (const auto& i : d.impressions) {
    ordered_json ji;
    ji["participant_id"] = i.participant_id;
    ji["post_id"] = i.post_id;
    ji["position"] = i.position;
    ji["dwell_raw"] = i.dwell_raw;
    ji["shared"] = i.shared;
    ji["liked"] = i.liked;
    if (i.dwell_adjusted) ji["dwell_adjusted"] = *i.dwell_adjusted;
    imps.push_back(ji);
  }
  j["impressions"] = imps;
  return j;
}

inline Dataset dataset_from_json(const nlohmann::ordered_json& j) {
  try {
    Dataset d;
    d.provenance.digests = j.at("provenance").at("digests").get<std::map<std::string, std::string>>();
    d.provenance.ingested_at = j.at("provenance").at("ingested_at").get<std::string>();
    for (const auto& jp : j.at("posts")) {
      Post p;
      p.post_id = jp.at("post_id").get<std::string>();
      p.headline = jp.at("headline").get<std::string>();
      p.source = jp.at("source").get<std::string>();
      auto cat = parse_category(jp.at("category").get<std::string>());
      if (!cat) throw InputError("dataset.json: unknown category for post " + p.post_id);
      p.category = *cat;
      for (std::size_t f = 0; f < kFeatureCount; ++f)
        p.features[f] = jp.at("features").at(std::string(kFeatureNames[f])).get<double>();
      d.posts.push_back(std::move(p));
    }
    for (const auto& ji : j.at("impressions")) {
      ImpressionRecord r;
      r.participant_id = ji.at("participant_id").get<std::string>();
      r.post_id = ji.at("post_id").get<std::string>();
      r.position = ji.at("position").get<int>();
      r.dwell_raw = ji.at("dwell_raw").get<double>();
      r.shared = ji.at("shared").get<bool>();
      r.liked = ji.at("liked").get<bool>();
      if (ji.contains("dwell_adjusted")) r.dwell_adjusted = ji.at("dwell_adjusted").get<double>();
      d.impressions.push_back(std::move(r));
    }
    return d;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("dataset.json: ") + e.what());
  }
}

inline void save_dataset_json(const std::string& path, const Dataset& d) {
  write_file(path, [&](std::ostream& out) { out << to_json(d).dump(2) << '\n'; });
}

inline Dataset load_dataset_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open file: " + path);
  nlohmann::ordered_json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(path + ": " + e.what());
  }
  return dataset_from_json(j);
}

}  // namespace trybuy
