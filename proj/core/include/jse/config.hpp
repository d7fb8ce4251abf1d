#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "jse/calib.hpp"
#include "jse/chain.hpp"
#include "jse/control.hpp"
#include "jse/filters.hpp"
#include "jse/sim.hpp"

namespace jse {

/// Everything an experiment run can specify, loaded from one key-value text
/// file. Sections are optional — `has_*` says which ones the file provided —
/// but any section that is present is validated strictly: unknown keys,
/// missing required keys, malformed values, and cross-section inconsistencies
/// (trajectory entries vs chain degrees of freedom, base-motion mode vs
/// floating base) all raise ConfigError with the offending line number.
struct ExperimentConfig {
  std::uint64_t seed = 0;

  bool has_chain = false;
  bool floating_base = true;
  std::vector<JointSpec> joints;
  std::vector<ImuMount> mounts;

  bool has_noise = false;
  NoiseConfig noise;

  bool has_trajectory = false;
  TrajectoryConfig trajectory;

  bool has_filters = false;
  BiasEkfConfig bias_ekf;
  VelocityKfConfig velocity_kf;
  AccelMode velocity_kf_mode = AccelMode::zero;

  bool has_calibration = false;
  OrientationCalibConfig orientation_calib;
  PositionCalibConfig position_calib;

  bool has_control = false;
  PlantConfig plant;
  SineReference control_reference;
  TrackingOptions tracking;
  std::vector<Gains> control_scenarios;

  /// Actuated degrees of freedom described by the chain section.
  int actuated_dof() const;
};

/// Parses and validates an experiment file. See ExperimentConfig for the
/// contract; all failures raise ConfigError.
ExperimentConfig load_experiment_config(const std::string& path);

/// Instantiates the chain section. Throws ConfigError when the file had none.
ChainModel build_chain(const ExperimentConfig& cfg);

}  // namespace jse
