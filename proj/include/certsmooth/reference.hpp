#pragma once

// Reference values computed independently at 40 significant digits and
// frozen here; oracle-check and the tests compare the engine against them.

#include <string>
#include <vector>

namespace certsmooth::reference {

inline constexpr double kPhiOf2 = 0.9772498680518208;
inline constexpr double kQuantileOf0p9 = 1.2815515655446004;
inline constexpr double kClopperPearson72of100 = 0.5647828117447206;
inline constexpr double kClopperPearson100of100 = 0.9332543007969910;  // 0.001^(1/100)
inline constexpr double kClopperPearson9000of10000 = 0.8904097336749064;
inline constexpr double kQuantileOfAllOf1000 = 2.4632626147808088;     // Phi^-1(0.001^(1/1000))
inline constexpr double kRadius_0p5_0p9_0p1 = 0.6407757827723002;       // certified_radius(0.5, 0.9, 0.1)
inline constexpr double kRadius_0p25_0p8_0p2 = 0.2104053083932286;      // certified_radius(0.25, 0.8, 0.2)
inline constexpr double kSoftmaxTail = 2.0611536181902e-9;              // 1 - p_1, sims (0.3, 0.1), tau 100

struct Check {
  std::string name;
  double computed;
  double expected;
  double tolerance;

  bool passed() const;
};

/// Every scalar reference value against the engine.
std::vector<Check> scalar_checks();

}  // namespace certsmooth::reference
