#pragma once

// Component parameters for the two- and three-block simulation regimes.
//
// The rare first-block components have proportions 0.02 and 0.01, means
// (0, 5.5, 5.5, 0, 0) and (0, 6, 6, 0, 0), and covariance 2I. The remaining
// values are library choices:
//   - background first-block components have distinct means and larger
//     variances than the rare pair;
//   - two second-block components have high means in all three variables;
//   - rare first-block states move to those high states far more often than
//     background states do, so after standardization variables 2, 3, 6, 7, 8
//     are jointly high on a small target region.
// Changing any value here changes every seeded draw of these regimes, so
// bump kConstantsVersion with it.

#include <array>

namespace hmmvb::sim {

inline constexpr int kConstantsVersion = 1;

inline constexpr int kFirstBlockComponents = 7;
inline constexpr int kFirstBlockDim = 5;
inline constexpr int kSecondBlockComponents = 10;
inline constexpr int kSecondBlockDim = 3;

inline constexpr std::array<double, kFirstBlockComponents> kFirstBlockProportions = {0.30, 0.25, 0.20, 0.12,
                                                                                      0.10, 0.02, 0.01};

inline constexpr std::array<std::array<double, kFirstBlockDim>, kFirstBlockComponents> kFirstBlockMeans = {{
    {2.0, 0.0, -1.0, 3.0, 1.0},
    {4.0, -2.0, 1.0, 1.0, 3.0},
    {1.0, 1.0, -3.0, 4.0, 2.0},
    {3.0, -3.0, -2.0, 2.0, 4.0},
    {5.0, 2.0, 0.0, 0.0, 2.0},
    {0.0, 5.5, 5.5, 0.0, 0.0},
    {0.0, 6.0, 6.0, 0.0, 0.0},
}};

// Diagonal covariances: variance shared by all variables of a component.
inline constexpr std::array<double, kFirstBlockComponents> kFirstBlockVariance = {4.0, 5.0, 6.0, 4.0, 5.0, 2.0, 2.0};

inline constexpr std::array<int, 2> kRareFirstBlock = {5, 6};

inline constexpr std::array<std::array<double, kSecondBlockDim>, kSecondBlockComponents> kSecondBlockMeans = {{
    {-2.0, -1.0, 0.0},
    {0.0, -3.0, 1.0},
    {1.0, 1.0, -2.0},
    {-3.0, 2.0, -1.0},
    {2.0, -2.0, -3.0},
    {-1.0, 0.0, 2.0},
    {3.0, 0.0, 0.0},
    {0.0, 3.0, -3.0},
    {6.0, 6.0, 6.0},
    {7.0, 7.0, 5.5},
}};

inline constexpr std::array<double, kSecondBlockComponents> kSecondBlockVariance = {3.0, 2.0, 3.0, 2.5, 2.0,
                                                                                    3.0, 2.5, 2.0, 1.0, 1.0};

inline constexpr std::array<int, 2> kHighSecondBlock = {8, 9};

// Row s1 gives P(s2 | s1). Background rows rotate a fixed profile over the
// eight low states and send 0.02 to each high state; rare rows send 0.25 to
// each high state.
inline constexpr std::array<std::array<double, kSecondBlockComponents>, kFirstBlockComponents> kTransitions = {{
    {0.24, 0.20, 0.16, 0.12, 0.10, 0.06, 0.05, 0.03, 0.02, 0.02},
    {0.03, 0.24, 0.20, 0.16, 0.12, 0.10, 0.06, 0.05, 0.02, 0.02},
    {0.05, 0.03, 0.24, 0.20, 0.16, 0.12, 0.10, 0.06, 0.02, 0.02},
    {0.06, 0.05, 0.03, 0.24, 0.20, 0.16, 0.12, 0.10, 0.02, 0.02},
    {0.10, 0.06, 0.05, 0.03, 0.24, 0.20, 0.16, 0.12, 0.02, 0.02},
    {0.0625, 0.0625, 0.0625, 0.0625, 0.0625, 0.0625, 0.0625, 0.0625, 0.25, 0.25},
    {0.0625, 0.0625, 0.0625, 0.0625, 0.0625, 0.0625, 0.0625, 0.0625, 0.25, 0.25},
}};

// Leading block of the three-block regime: N(0, 3I) in five variables.
inline constexpr int kLeadingBlockDim = 5;
inline constexpr double kLeadingBlockVariance = 3.0;

// Flat 50-component regime.
inline constexpr int kFlatComponents = 50;
inline constexpr int kFlatDim = 10;
inline constexpr std::array<double, 6> kFlatLeadingPriors = {0.0025, 0.005, 0.1, 0.1, 0.05, 0.03};
inline constexpr double kFlatRareMean = 5.0;
inline constexpr double kFlatWishartDof = 15.0;
inline constexpr double kFlatWishartScale = 5.0;

}  // namespace hmmvb::sim
