#pragma once

// Reference summary values: PCA loadings and variance fractions, the dwell and
// engagement coefficient tables, PC-dwell correlations and rating density.
// Used as simulator defaults and as comparison targets for released data.

#include <array>
#include <string_view>

namespace trybuy::reference {

// Rows follow kFeatureNames order; columns are PC1..PC8.
inline constexpr std::array<std::array<double, 8>, 8> kLoadings = {{
    {0.43, -0.17, 0.28, 0.26, 0.68, -0.27, 0.32, -0.02},    // familiarity
    {0.12, 0.31, 0.81, -0.06, -0.42, -0.04, 0.20, -0.09},   // favorability
    {0.43, 0.28, -0.24, -0.20, 0.05, 0.66, 0.36, -0.27},    // impactful
    {0.45, 0.07, -0.35, -0.40, -0.29, -0.63, 0.15, -0.00},  // informative
    {0.17, 0.52, 0.12, -0.29, 0.38, -0.03, -0.67, 0.01},    // provocative
    {0.35, 0.28, -0.19, 0.79, -0.28, -0.04, -0.23, -0.00},  // sharing
    {-0.26, 0.54, -0.13, 0.05, 0.14, -0.06, 0.41, 0.66},    // surprising
    {0.44, -0.37, 0.13, -0.12, -0.16, 0.30, -0.19, 0.70},   // truth
}};

inline constexpr std::array<double, 8> kVarianceFraction = {0.29, 0.25, 0.12, 0.09, 0.08, 0.07, 0.06, 0.04};

struct TableRow {
  std::string_view term;
  double estimate;
  double se;
};

// log(dwell) model.
inline constexpr std::array<TableRow, 5> kDwellTable = {{
    {"engage", 0.311, 0.025},
    {"credibility", -0.017, 0.007},
    {"sensationalism", 0.038, 0.008},
    {"engage:credibility", 0.010, 0.011},
    {"engage:sensationalism", 0.048, 0.013},
}};

// Engagement (logistic) model.
inline constexpr std::array<TableRow, 5> kEngageTable = {{
    {"dwell", 0.355, 0.029},
    {"credibility", 0.212, 0.049},
    {"sensationalism", -0.221, 0.047},
    {"dwell:credibility", 0.011, 0.020},
    {"dwell:sensationalism", 0.062, 0.021},
}};

inline constexpr double kPc1DwellR = -0.11;
inline constexpr double kPc2DwellR = 0.17;
inline constexpr double kRatingsPerCell = 15.06;
inline constexpr int kFeedLength = 120;
inline constexpr int kNewsPerFeed = 90;
inline constexpr int kPoolNews = 200;
inline constexpr int kPoolOther = 76;

}  // namespace trybuy::reference
