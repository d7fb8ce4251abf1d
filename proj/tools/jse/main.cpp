// jse — command-line front end for the joint-state estimation library.
//
// Subcommands chain into a full experiment pipeline:
//
//   simulate               config -> sensor log (imu / joint_pos / truth)
//   calibrate-orientation  sensor log -> mounting orientations
//   calibrate-position     sensor log -> full mounting calibration
//   estimate-velocity      sensor log -> generalized-rate estimates
//   estimate-acceleration  sensor log -> per-joint angular accelerations
//   filter                 sensor log -> filtered state estimates
//   control-experiment     config -> tracking summary table
//   report                 tracking summary -> side-by-side comparison table
//
// Exit status: 0 on success, 1 on data errors (bad files, inconsistent
// inputs — one machine-readable "error: ..." line on stderr), 2 on usage
// errors. All commands are deterministic given the config seed.

#include <algorithm>
#include <array>
#include <cinttypes>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "jse/calib.hpp"
#include "jse/chain.hpp"
#include "jse/config.hpp"
#include "jse/control.hpp"
#include "jse/errors.hpp"
#include "jse/estimator.hpp"
#include "jse/filters.hpp"
#include "jse/logio.hpp"
#include "jse/sim.hpp"

namespace {

using namespace jse;

// ---------------------------------------------------------------------------
// Shared option plumbing
// ---------------------------------------------------------------------------

struct CommandArgs {
  std::string config;
  std::string input;
  std::string output;
  std::string calib;
  std::string mode;
  std::optional<std::uint64_t> seed;
};

ExperimentConfig load_config(const CommandArgs& args) {
  ExperimentConfig cfg = load_experiment_config(args.config);
  if (args.seed) {
    cfg.seed = *args.seed;
    cfg.noise.seed = *args.seed;
    cfg.tracking.seed = *args.seed;
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// Sensor-log <-> time-series conversion
// ---------------------------------------------------------------------------

// One record group per distinct timestamp, decoded against a chain model.
struct SensorStream {
  std::vector<std::int64_t> times_us;
  std::vector<double> times;                 // s
  std::vector<std::vector<Vec3>> gyro;       // [step][mount]
  std::vector<std::vector<Vec3>> accel;      // [step][mount]
  std::vector<std::vector<char>> have_imu;   // [step][mount]
  std::vector<VecX> theta;                   // total_dof, unmeasured rows zero
  std::vector<std::vector<char>> have_pos;   // [step][actuated]
  std::vector<VecX> truth_theta;             // total_dof, NaN-free only when
  std::vector<VecX> truth_rate;              //   have_truth[step] is true
  std::vector<VecX> truth_accel;
  std::vector<char> have_truth;              // all coordinates present
  double sample_rate_hz = 0.0;
};

SensorStream read_sensor_stream(const std::string& path,
                                const ChainModel& model) {
  const int mounts = static_cast<int>(model.mounts().size());
  const int dof = model.total_dof();
  const int base = model.base_dof();
  const int actuated = dof - base;

  SensorStream s;
  LogReader reader(path);
  std::vector<char> truth_seen;

  auto begin_step = [&](std::int64_t t_us) {
    s.times_us.push_back(t_us);
    s.times.push_back(static_cast<double>(t_us) * 1e-6);
    s.gyro.emplace_back(mounts, Vec3::Zero());
    s.accel.emplace_back(mounts, Vec3::Zero());
    s.have_imu.emplace_back(mounts, 0);
    s.theta.push_back(VecX::Zero(dof));
    s.have_pos.emplace_back(actuated, 0);
    s.truth_theta.push_back(VecX::Zero(dof));
    s.truth_rate.push_back(VecX::Zero(dof));
    s.truth_accel.push_back(VecX::Zero(dof));
    truth_seen.assign(static_cast<std::size_t>(dof), 0);
    s.have_truth.push_back(0);
  };
  auto close_step = [&] {
    if (s.times_us.empty()) return;
    bool all = dof > 0;
    for (char c : truth_seen) all = all && c != 0;
    s.have_truth.back() = all ? 1 : 0;
  };

  while (auto rec = reader.next()) {
    if (s.times_us.empty() || rec->t_us != s.times_us.back()) {
      close_step();
      begin_step(rec->t_us);
    }
    switch (rec->kind) {
      case RecordKind::imu:
        if (rec->index >= mounts) {
          throw ConfigError(path + ":" + std::to_string(reader.line()) +
                            ": imu record names mount " +
                            std::to_string(rec->index) + " but the model has " +
                            std::to_string(mounts) + " mounts");
        }
        s.gyro.back()[static_cast<std::size_t>(rec->index)] =
            Vec3(rec->values[0], rec->values[1], rec->values[2]);
        s.accel.back()[static_cast<std::size_t>(rec->index)] =
            Vec3(rec->values[3], rec->values[4], rec->values[5]);
        s.have_imu.back()[static_cast<std::size_t>(rec->index)] = 1;
        break;
      case RecordKind::joint_pos:
        if (rec->index < base || rec->index >= dof) {
          throw ConfigError(path + ":" + std::to_string(reader.line()) +
                            ": joint_pos record names coordinate " +
                            std::to_string(rec->index) +
                            " outside the actuated range [" +
                            std::to_string(base) + ", " + std::to_string(dof) +
                            ")");
        }
        s.theta.back()(rec->index) = rec->values[0];
        s.have_pos.back()[static_cast<std::size_t>(rec->index - base)] = 1;
        break;
      case RecordKind::truth:
        if (rec->index >= dof) {
          throw ConfigError(path + ":" + std::to_string(reader.line()) +
                            ": truth record names coordinate " +
                            std::to_string(rec->index) +
                            " but the model has " + std::to_string(dof));
        }
        s.truth_theta.back()(rec->index) = rec->values[0];
        s.truth_rate.back()(rec->index) = rec->values[1];
        s.truth_accel.back()(rec->index) = rec->values[2];
        truth_seen[static_cast<std::size_t>(rec->index)] = 1;
        break;
      case RecordKind::estimate:
        // Estimates from an earlier stage are carried along silently.
        break;
    }
  }
  close_step();

  if (s.times_us.size() >= 2) {
    const double span =
        static_cast<double>(s.times_us.back() - s.times_us.front());
    if (span > 0.0) {
      s.sample_rate_hz =
          1e6 * static_cast<double>(s.times_us.size() - 1) / span;
    }
  }
  return s;
}

// Every step must carry every mount's reading and every actuated coordinate.
void require_complete_sensing(const SensorStream& s, const std::string& path) {
  for (std::size_t k = 0; k < s.times_us.size(); ++k) {
    for (std::size_t m = 0; m < s.have_imu[k].size(); ++m) {
      if (!s.have_imu[k][m]) {
        throw ConfigError(path + ": step at t_us=" +
                          std::to_string(s.times_us[k]) +
                          " is missing the imu record for mount " +
                          std::to_string(m));
      }
    }
    for (std::size_t j = 0; j < s.have_pos[k].size(); ++j) {
      if (!s.have_pos[k][j]) {
        throw ConfigError(path + ": step at t_us=" +
                          std::to_string(s.times_us[k]) +
                          " is missing the joint_pos record for actuated " +
                          "coordinate " + std::to_string(j));
      }
    }
  }
}

// One raw gyro reading per link, taken from each link's slot-0 mount. Links
// without a slot-0 mount keep a zero reading, which is only acceptable for a
// fixed base; any other bare link is an error.
std::vector<Vec3> slot0_gyros(const ChainModel& model,
                              const std::vector<Vec3>& per_mount) {
  std::vector<Vec3> per_link(static_cast<std::size_t>(model.link_count()),
                             Vec3::Zero());
  std::vector<char> have(per_link.size(), 0);
  for (std::size_t m = 0; m < model.mounts().size(); ++m) {
    const ImuMount& mount = model.mounts()[m];
    if (mount.slot == 0) {
      per_link[static_cast<std::size_t>(mount.link)] = per_mount[m];
      have[static_cast<std::size_t>(mount.link)] = 1;
    }
  }
  for (std::size_t l = 0; l < per_link.size(); ++l) {
    if (!have[l] && !(l == 0 && !model.floating_base())) {
      throw ConfigError("link " + std::to_string(l) +
                        " has no slot-0 inertial mount; rate estimation "
                        "needs one gyro per moving link");
    }
  }
  return per_link;
}

CalibrationLog stream_to_calibration_log(const SensorStream& s,
                                         const ChainModel& model,
                                         const std::string& path) {
  require_complete_sensing(s, path);
  if (s.times_us.size() < 2) {
    throw SignalTooShortError(
        "calibration needs at least two recorded steps, got " +
        std::to_string(s.times_us.size()));
  }
  const int base = model.base_dof();
  const int actuated = model.total_dof() - base;

  CalibrationLog log;
  log.times = s.times;
  log.sample_rate_hz = s.sample_rate_hz;
  log.samples.reserve(s.times.size());
  log.joint_positions.reserve(s.times.size());
  for (std::size_t k = 0; k < s.times.size(); ++k) {
    std::vector<ImuSample> step(model.mounts().size());
    for (std::size_t m = 0; m < model.mounts().size(); ++m) {
      ImuSample& sample = step[m];
      sample.timestamp = s.times[k];
      sample.mount = static_cast<int>(m);
      sample.link = model.mounts()[m].link;
      sample.slot = model.mounts()[m].slot;
      sample.gyro = s.gyro[k][m];
      sample.accel = s.accel[k][m];
    }
    log.samples.push_back(std::move(step));
    log.joint_positions.push_back(s.theta[k].tail(actuated));
  }
  return log;
}

MountCalibration load_corrections(const CommandArgs& args,
                                  const ChainModel& model) {
  if (args.calib.empty()) return calibration_from_model(model);
  MountCalibration cal = load_calibration(args.calib);
  if (cal.mounts.size() != model.mounts().size()) {
    throw ConfigError("calibration file " + args.calib + " describes " +
                      std::to_string(cal.mounts.size()) +
                      " mounts but the model has " +
                      std::to_string(model.mounts().size()));
  }
  return cal;
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

int cmd_simulate(const CommandArgs& args) {
  const ExperimentConfig cfg = load_config(args);
  if (!cfg.has_noise || !cfg.has_trajectory) {
    throw ConfigError(args.config +
                      ": simulate needs [chain], [noise] and [trajectory] "
                      "sections");
  }
  const ChainModel model = build_chain(cfg);
  const SimulationResult sim = simulate(model, cfg.trajectory, cfg.noise);

  const int base = model.base_dof();
  const int dof = model.total_dof();
  LogWriter writer(args.output);
  LogRecord rec;
  for (std::size_t k = 0; k < sim.step_count(); ++k) {
    rec.t_us = LogRecord::to_micros(sim.times[k]);
    rec.kind = RecordKind::imu;
    for (std::size_t m = 0; m < sim.imu[k].size(); ++m) {
      const ImuSample& sample = sim.imu[k][m];
      rec.index = static_cast<int>(m);
      rec.values = {sample.gyro.x(),  sample.gyro.y(),  sample.gyro.z(),
                    sample.accel.x(), sample.accel.y(), sample.accel.z()};
      writer.write(rec);
    }
    rec.kind = RecordKind::joint_pos;
    for (int j = 0; j < sim.joint_measurements[k].size(); ++j) {
      rec.index = base + j;
      rec.values = {sim.joint_measurements[k](j)};
      writer.write(rec);
    }
    rec.kind = RecordKind::truth;
    for (int i = 0; i < dof; ++i) {
      rec.index = i;
      rec.values = {sim.truth[k].theta(i), sim.truth[k].theta_dot(i),
                    sim.truth[k].theta_ddot(i)};
      writer.write(rec);
    }
  }
  writer.close();
  std::printf("wrote %zu steps, %zu mounts, %d coordinates to %s\n",
              sim.step_count(), model.mounts().size(), dof,
              args.output.c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// calibrate-orientation / calibrate-position
// ---------------------------------------------------------------------------

void print_orientation_line(int mount, const MountPose& pose,
                            bool low_excitation) {
  std::printf("mount %d: rate_residual_rad_s=%.10g excitation=%.10g "
              "low_excitation=%d\n",
              mount, pose.orientation_residual, pose.orientation_excitation,
              low_excitation ? 1 : 0);
}

int cmd_calibrate_orientation(const CommandArgs& args) {
  const ExperimentConfig cfg = load_config(args);
  const ChainModel model = build_chain(cfg);
  const OrientationCalibConfig ocfg =
      cfg.has_calibration ? cfg.orientation_calib : OrientationCalibConfig{};

  const SensorStream stream = read_sensor_stream(args.input, model);
  const CalibrationLog log = stream_to_calibration_log(stream, model, args.input);

  MountCalibration cal = calibration_from_model(model);
  std::printf("reference mount %d keeps its configured pose\n",
              ocfg.reference_mount);
  for (std::size_t m = 0; m < model.mounts().size(); ++m) {
    if (static_cast<int>(m) == ocfg.reference_mount) continue;
    const OrientationCalibResult r =
        calibrate_orientation(log, model, static_cast<int>(m), ocfg);
    MountPose& pose = cal.mounts[m];
    pose.orientation = r.orientation;
    pose.orientation_residual = r.residual;
    pose.orientation_excitation = r.excitation;
    print_orientation_line(static_cast<int>(m), pose, r.low_excitation);
  }
  save_calibration(cal, args.output);
  std::printf("wrote calibration for %zu mounts to %s\n",
              model.mounts().size(), args.output.c_str());
  return 0;
}

int cmd_calibrate_position(const CommandArgs& args) {
  const ExperimentConfig cfg = load_config(args);
  const ChainModel model = build_chain(cfg);
  const OrientationCalibConfig ocfg =
      cfg.has_calibration ? cfg.orientation_calib : OrientationCalibConfig{};
  const PositionCalibConfig pcfg =
      cfg.has_calibration ? cfg.position_calib : PositionCalibConfig{};

  const SensorStream stream = read_sensor_stream(args.input, model);
  const CalibrationLog log = stream_to_calibration_log(stream, model, args.input);

  // Orientation stage first: lever arms are solved in already-aligned frames.
  const MountCalibration cal = calibrate_all(log, model, ocfg, pcfg);
  std::printf("reference mount %d keeps its configured pose\n",
              pcfg.reference_mount);
  for (std::size_t m = 0; m < cal.mounts.size(); ++m) {
    const MountPose& pose = cal.mounts[m];
    if (static_cast<int>(m) != ocfg.reference_mount) {
      print_orientation_line(static_cast<int>(m), pose,
                             pose.orientation_excitation < ocfg.excitation_warn);
    }
    std::printf("mount %zu: offset_residual_m_s2=%.10g position_in_link_m="
                "%.10g %.10g %.10g\n",
                m, pose.position_residual, pose.position_in_link.x(),
                pose.position_in_link.y(), pose.position_in_link.z());
  }
  std::printf("lever_arm_condition=%.10g ill_conditioned=%d\n",
              cal.mounts.empty() ? 0.0 : cal.mounts[0].position_condition,
              cal.position_ill_conditioned ? 1 : 0);
  save_calibration(cal, args.output);
  std::printf("wrote calibration for %zu mounts to %s\n", cal.mounts.size(),
              args.output.c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// estimate-velocity
// ---------------------------------------------------------------------------

int cmd_estimate_velocity(const CommandArgs& args) {
  const ExperimentConfig cfg = load_config(args);
  const ChainModel model = build_chain(cfg);
  const MountCalibration cal = load_corrections(args, model);
  const bool constrained = args.mode != "unconstrained";

  const SensorStream stream = read_sensor_stream(args.input, model);
  require_complete_sensing(stream, args.input);

  std::optional<LogWriter> writer;
  if (!args.output.empty()) writer.emplace(args.output);

  double max_condition = 0.0;
  std::size_t flagged = 0;
  double max_rate_error = 0.0;
  bool compared = false;
  LogRecord rec;
  rec.kind = RecordKind::estimate;
  for (std::size_t k = 0; k < stream.times_us.size(); ++k) {
    const std::vector<Vec3> gyro = slot0_gyros(model, stream.gyro[k]);
    const VelocitySolveReport report =
        constrained
            ? joint_velocities_constrained(model, stream.theta[k], gyro, cal)
            : joint_velocities_unconstrained(model, stream.theta[k], gyro, cal);
    max_condition = std::max(max_condition, report.condition);
    if (report.ill_conditioned) ++flagged;

    if (writer) {
      rec.t_us = stream.times_us[k];
      if (constrained) {
        for (int i = 0; i < model.total_dof(); ++i) {
          rec.index = i;
          rec.values = {stream.theta[k](i), report.rates(i), 0.0};
          writer->write(rec);
        }
      } else {
        // All-axes layout: index = 3*link + axis, one relative angular rate
        // component per record (block 0 is the base rate).
        for (int i = 0; i < report.rates.size(); ++i) {
          rec.index = i;
          rec.values = {0.0, report.rates(i), 0.0};
          writer->write(rec);
        }
      }
    }
    if (constrained && stream.have_truth[k]) {
      compared = true;
      max_rate_error = std::max(
          max_rate_error,
          (report.rates - stream.truth_rate[k]).cwiseAbs().maxCoeff());
    }
  }
  if (writer) writer->close();

  std::printf("steps=%zu mode=%s max_condition=%.10g ill_conditioned_steps=%zu\n",
              stream.times_us.size(),
              constrained ? "constrained" : "unconstrained", max_condition,
              flagged);
  if (compared) {
    std::printf("max_velocity_error_rad_s=%.17g\n", max_rate_error);
  }
  if (writer) {
    std::printf("wrote estimates to %s\n", args.output.c_str());
  }
  return 0;
}

// ---------------------------------------------------------------------------
// estimate-acceleration
// ---------------------------------------------------------------------------

int cmd_estimate_acceleration(const CommandArgs& args) {
  const ExperimentConfig cfg = load_config(args);
  const ChainModel model = build_chain(cfg);
  const MountCalibration cal = load_corrections(args, model);

  const SensorStream stream = read_sensor_stream(args.input, model);
  require_complete_sensing(stream, args.input);

  // Joints solvable from sensing: child link carries two mounts, parent one.
  struct Solvable {
    int child_link;
    int parent_mount;
    int child_mount_a;
    int child_mount_b;
  };
  auto mount_index = [&](const ImuMount* m) {
    return static_cast<int>(m - model.mounts().data());
  };
  std::vector<Solvable> joints;
  for (int link = 1; link < model.link_count(); ++link) {
    const ImuMount* parent = model.find_mount(link - 1, 0);
    const ImuMount* a = model.find_mount(link, 0);
    const ImuMount* b = model.find_mount(link, 1);
    if (parent && a && b) {
      joints.push_back({link, mount_index(parent), mount_index(a),
                        mount_index(b)});
    }
  }
  if (joints.empty()) {
    throw ConfigError(
        "no joint has the two child mounts plus parent mount that the "
        "acceleration solve needs");
  }

  std::optional<LogWriter> writer;
  if (!args.output.empty()) writer.emplace(args.output);

  std::map<int, std::size_t> usable_steps;
  std::map<int, double> worst_condition, worst_residual;
  double max_accel_error = 0.0;
  bool compared = false;
  LogRecord rec;
  rec.kind = RecordKind::estimate;
  for (std::size_t k = 0; k < stream.times_us.size(); ++k) {
    const std::vector<Vec3> gyro = slot0_gyros(model, stream.gyro[k]);
    const VelocitySolveReport vel =
        joint_velocities_constrained(model, stream.theta[k], gyro, cal);
    for (const Solvable& j : joints) {
      const MatX map = model.joint_velocity_map(stream.theta[k], j.child_link);
      const JointSpec& spec = model.joint(j.child_link);
      const int offset = model.dof_offset(j.child_link);
      const Vec3 joint_rate = map * vel.rates.segment(offset, spec.dof);
      const AccelSolveReport report = joint_acceleration(
          model, stream.theta[k], joint_rate, j.child_link,
          stream.accel[k][static_cast<std::size_t>(j.parent_mount)],
          stream.accel[k][static_cast<std::size_t>(j.child_mount_a)],
          stream.accel[k][static_cast<std::size_t>(j.child_mount_b)],
          j.parent_mount, j.child_mount_a, j.child_mount_b, cal);
      if (report.usable) ++usable_steps[j.child_link];
      worst_condition[j.child_link] =
          std::max(worst_condition[j.child_link], report.condition);
      worst_residual[j.child_link] =
          std::max(worst_residual[j.child_link], report.residual);

      if (writer) {
        rec.t_us = stream.times_us[k];
        for (int axis = 0; axis < 3; ++axis) {
          rec.index = 3 * j.child_link + axis;
          rec.values = {0.0, 0.0, report.joint_accel(axis)};
          writer->write(rec);
        }
      }
      // A single-axis joint rotates about a child-frame-fixed axis, so the
      // relative angular acceleration is exactly that axis times the joint
      // acceleration; project to compare against recorded truth.
      if (report.usable && spec.dof == 1 && stream.have_truth[k]) {
        compared = true;
        const double projected = spec.axes[0].dot(report.joint_accel);
        max_accel_error =
            std::max(max_accel_error,
                     std::abs(projected - stream.truth_accel[k](offset)));
      }
    }
  }
  if (writer) writer->close();

  for (const Solvable& j : joints) {
    std::printf("link %d: steps=%zu usable=%zu max_condition=%.10g "
                "max_residual_m_s2=%.10g\n",
                j.child_link, stream.times_us.size(),
                usable_steps[j.child_link], worst_condition[j.child_link],
                worst_residual[j.child_link]);
  }
  if (compared) {
    std::printf("max_acceleration_error_rad_s2=%.17g\n", max_accel_error);
  }
  if (writer) {
    std::printf("wrote estimates to %s\n", args.output.c_str());
  }
  return 0;
}

// ---------------------------------------------------------------------------
// filter
// ---------------------------------------------------------------------------

int cmd_filter(const CommandArgs& args) {
  const ExperimentConfig cfg = load_config(args);
  const ChainModel model = build_chain(cfg);
  if (model.floating_base()) {
    throw ConfigError(
        "filter runs on fixed-base chains; a floating base has no position "
        "measurement to anchor the state");
  }
  const MountCalibration cal = load_corrections(args, model);

  FilterStreamConfig stream_cfg;
  if (cfg.has_filters) {
    stream_cfg.ekf = cfg.bias_ekf;
    stream_cfg.kf = cfg.velocity_kf;
    stream_cfg.mode = cfg.velocity_kf_mode;
  }
  if (args.mode == "bias-ekf") {
    stream_cfg.kind = StreamFilter::bias_ekf;
  } else if (args.mode == "velocity-zero") {
    stream_cfg.kind = StreamFilter::velocity_kf;
    stream_cfg.mode = AccelMode::zero;
  } else if (args.mode == "velocity-desired") {
    stream_cfg.kind = StreamFilter::velocity_kf;
    stream_cfg.mode = AccelMode::desired;
  } else if (!args.mode.empty()) {
    throw ConfigError("unknown filter mode '" + args.mode +
                      "' (expected bias-ekf, velocity-zero or "
                      "velocity-desired)");
  }
  const bool velocity = stream_cfg.kind == StreamFilter::velocity_kf;
  if (velocity && stream_cfg.mode == AccelMode::desired &&
      !cfg.has_trajectory) {
    throw ConfigError(
        "velocity-desired mode reads the commanded acceleration from the "
        "[trajectory] section, which the config does not provide");
  }
  if (velocity && stream_cfg.mode == AccelMode::accelerometer) {
    throw ConfigError(
        "accelerometer acceleration feed is not available through the "
        "command line; use velocity-zero or velocity-desired");
  }

  const SensorStream stream = read_sensor_stream(args.input, model);
  require_complete_sensing(stream, args.input);

  std::vector<FilterSample> samples;
  samples.reserve(stream.times_us.size());
  for (std::size_t k = 0; k < stream.times_us.size(); ++k) {
    FilterSample s;
    s.timestamp = stream.times[k];
    s.theta_meas = stream.theta[k];
    if (velocity) {
      const std::vector<Vec3> gyro = slot0_gyros(model, stream.gyro[k]);
      s.theta_dot_meas =
          joint_velocities_constrained(model, stream.theta[k], gyro, cal).rates;
      if (stream_cfg.mode == AccelMode::desired) {
        s.theta_ddot = sine_trajectory(cfg.trajectory, s.timestamp).theta_ddot;
      }
    } else {
      s.gyro = slot0_gyros(model, stream.gyro[k]);
    }
    samples.push_back(std::move(s));
  }

  const std::vector<FilterEstimate> estimates =
      filter_stream(model, cal, samples, stream_cfg);

  std::optional<LogWriter> writer;
  if (!args.output.empty()) writer.emplace(args.output);
  double pos_sq = 0.0, rate_sq = 0.0;
  std::size_t compared = 0;
  LogRecord rec;
  rec.kind = RecordKind::estimate;
  for (std::size_t k = 0; k < estimates.size(); ++k) {
    const FilterEstimate& e = estimates[k];
    if (writer) {
      rec.t_us = stream.times_us[k];
      for (int i = 0; i < model.total_dof(); ++i) {
        rec.index = i;
        rec.values = {e.theta(i),
                      velocity ? e.theta_dot(i) : 0.0, 0.0};
        writer->write(rec);
      }
    }
    if (stream.have_truth[k]) {
      ++compared;
      pos_sq += (e.theta - stream.truth_theta[k]).squaredNorm();
      if (velocity) {
        rate_sq += (e.theta_dot - stream.truth_rate[k]).squaredNorm();
      }
    }
  }
  if (writer) writer->close();

  const char* mode_name = !velocity ? "bias-ekf"
                          : stream_cfg.mode == AccelMode::zero
                              ? "velocity-zero"
                              : "velocity-desired";
  std::printf("steps=%zu mode=%s\n", estimates.size(), mode_name);
  if (!velocity && !estimates.empty()) {
    const VecX& bias = estimates.back().bias;
    std::printf("final_gyro_bias_rad_s=");
    for (int i = 0; i < bias.size(); ++i) {
      std::printf("%s%.10g", i == 0 ? "" : " ", bias(i));
    }
    std::printf("\n");
  }
  if (compared > 0) {
    const double n = static_cast<double>(compared) *
                     static_cast<double>(model.total_dof());
    std::printf("rms_position_error_rad=%.17g\n", std::sqrt(pos_sq / n));
    if (velocity) {
      std::printf("rms_velocity_error_rad_s=%.17g\n", std::sqrt(rate_sq / n));
    }
  }
  if (writer) {
    std::printf("wrote estimates to %s\n", args.output.c_str());
  }
  return 0;
}

// ---------------------------------------------------------------------------
// control-experiment
// ---------------------------------------------------------------------------

int cmd_control_experiment(const CommandArgs& args) {
  const ExperimentConfig cfg = load_config(args);
  if (!cfg.has_control) {
    throw ConfigError(args.config +
                      ": control-experiment needs a [control] section");
  }
  if (cfg.control_scenarios.empty()) {
    throw ConfigError(args.config +
                      ": the [control] section lists no gain scenarios");
  }
  const VelocitySource sources[] = {VelocitySource::butterworth_numeric,
                                    VelocitySource::gyro_direct,
                                    VelocitySource::kf_filtered};
  std::vector<TrackingResult> results;
  for (const Gains& gains : cfg.control_scenarios) {
    for (VelocitySource source : sources) {
      results.push_back(run_tracking(cfg.plant, cfg.control_reference, gains,
                                     source, cfg.tracking));
      const TrackingResult& r = results.back();
      std::printf("source=%s p=%.10g d=%.10g stable=%d "
                  "rms_position_error=%.10g rms_velocity_error=%.10g\n",
                  velocity_source_name(source), gains.p, gains.d,
                  r.stable ? 1 : 0, r.rms_position_error,
                  r.rms_velocity_error);
    }
  }
  std::ofstream out(args.output, std::ios::binary);
  if (!out) {
    throw ConfigError("cannot open tracking summary output " + args.output);
  }
  write_tracking_summary(out, results);
  out.close();
  if (!out) {
    throw ConfigError("failed writing tracking summary to " + args.output);
  }
  std::printf("wrote %zu tracking runs to %s\n", results.size(),
              args.output.c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    if (tab == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
}

int cmd_report(const CommandArgs& args) {
  std::FILE* in = std::fopen(args.input.c_str(), "rb");
  if (!in) {
    throw ConfigError("cannot open tracking summary " + args.input);
  }
  std::string text;
  char buf[4096];
  std::size_t got;
  while ((got = std::fread(buf, 1, sizeof buf, in)) > 0) {
    text.append(buf, got);
  }
  std::fclose(in);

  struct Cell {
    bool present = false;
    bool stable = false;
    double rms_position = 0.0;
    double rms_velocity = 0.0;
  };
  const char* source_names[] = {"butterworth_numeric", "gyro_direct",
                                "kf_filtered"};
  std::vector<std::pair<double, double>> gain_order;
  std::map<std::pair<double, double>, std::array<Cell, 3>> table;

  std::size_t line_no = 0;
  std::size_t start = 0;
  bool saw_header = false;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    std::string line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      if (start > text.size()) break;
      continue;
    }
    const std::vector<std::string> fields = split_tabs(line);
    if (!saw_header) {
      if (fields.size() < 7 || fields[0] != "source") {
        throw ConfigError(args.input + ":" + std::to_string(line_no) +
                          ": expected a tracking summary header starting "
                          "with 'source'");
      }
      saw_header = true;
      continue;
    }
    if (fields.size() < 7) {
      throw ConfigError(args.input + ":" + std::to_string(line_no) +
                        ": tracking summary row has " +
                        std::to_string(fields.size()) +
                        " fields, expected at least 7");
    }
    int source = -1;
    for (int i = 0; i < 3; ++i) {
      if (fields[0] == source_names[i]) source = i;
    }
    if (source < 0) {
      throw ConfigError(args.input + ":" + std::to_string(line_no) +
                        ": unknown velocity source '" + fields[0] + "'");
    }
    auto parse = [&](const std::string& field) {
      char* rest = nullptr;
      const double v = std::strtod(field.c_str(), &rest);
      if (rest == field.c_str() || *rest != '\0') {
        throw ConfigError(args.input + ":" + std::to_string(line_no) +
                          ": malformed number '" + field + "'");
      }
      return v;
    };
    const std::pair<double, double> gains{parse(fields[1]), parse(fields[2])};
    if (table.find(gains) == table.end()) gain_order.push_back(gains);
    Cell& cell = table[gains][static_cast<std::size_t>(source)];
    cell.present = true;
    cell.stable = parse(fields[3]) != 0.0;
    cell.rms_position = parse(fields[4]);
    cell.rms_velocity = parse(fields[5]);
  }
  if (!saw_header) {
    throw ConfigError(args.input + ": tracking summary is empty");
  }

  std::FILE* out = stdout;
  if (!args.output.empty()) {
    out = std::fopen(args.output.c_str(), "wb");
    if (!out) {
      throw ConfigError("cannot open report output " + args.output);
    }
  }
  std::fprintf(out, "p\td");
  for (const char* name : source_names) {
    std::fprintf(out, "\t%s_stable\t%s_rms_position\t%s_rms_velocity", name,
                 name, name);
  }
  std::fprintf(out, "\n");
  for (const auto& gains : gain_order) {
    std::fprintf(out, "%.10g\t%.10g", gains.first, gains.second);
    for (const Cell& cell : table[gains]) {
      if (cell.present) {
        std::fprintf(out, "\t%d\t%.10g\t%.10g", cell.stable ? 1 : 0,
                     cell.rms_position, cell.rms_velocity);
      } else {
        std::fprintf(out, "\t-\t-\t-");
      }
    }
    std::fprintf(out, "\n");
  }
  if (out != stdout) std::fclose(out);
  return 0;
}

// ---------------------------------------------------------------------------
// Option wiring
// ---------------------------------------------------------------------------

void add_config(CLI::App* cmd, CommandArgs& args) {
  cmd->add_option("--config", args.config, "Experiment config file")
      ->required();
}
void add_input(CLI::App* cmd, CommandArgs& args, const char* what) {
  cmd->add_option("--input", args.input, what)->required();
}
void add_output(CLI::App* cmd, CommandArgs& args, const char* what,
                bool required) {
  auto* opt = cmd->add_option("--output", args.output, what);
  if (required) opt->required();
}
void add_seed(CLI::App* cmd, CommandArgs& args) {
  cmd->add_option("--seed", args.seed,
                  "Override the config seed (propagates to every derived "
                  "random stream)");
}
void add_calib(CLI::App* cmd, CommandArgs& args) {
  cmd->add_option("--calib", args.calib,
                  "Calibration file from calibrate-position; defaults to the "
                  "model's configured mount poses");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Joint-state estimation pipeline: simulate inertial sensor logs, "
      "calibrate mounts, estimate joint rates and accelerations, filter, "
      "and compare velocity-feedback sources on a servo plant."};
  app.name("jse");
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  CommandArgs args;
  int (*handler)(const CommandArgs&) = nullptr;

  CLI::App* simulate = app.add_subcommand(
      "simulate",
      "Run the configured trajectory and write an imu/joint_pos/truth log");
  add_config(simulate, args);
  add_output(simulate, args, "Sensor log to write", true);
  add_seed(simulate, args);
  simulate->callback([&] { handler = cmd_simulate; });

  CLI::App* calo = app.add_subcommand(
      "calibrate-orientation",
      "Recover sensor mounting orientations from a locked-joint recording");
  add_config(calo, args);
  add_input(calo, args, "Locked-joint sensor log");
  add_output(calo, args, "Calibration file to write", true);
  calo->callback([&] { handler = cmd_calibrate_orientation; });

  CLI::App* calp = app.add_subcommand(
      "calibrate-position",
      "Recover sensor orientations plus lever arms from a locked-joint "
      "recording");
  add_config(calp, args);
  add_input(calp, args, "Locked-joint sensor log");
  add_output(calp, args, "Calibration file to write", true);
  calp->callback([&] { handler = cmd_calibrate_position; });

  CLI::App* ev = app.add_subcommand(
      "estimate-velocity",
      "Solve generalized joint rates from gyro readings at every log step");
  add_config(ev, args);
  add_input(ev, args, "Sensor log");
  add_output(ev, args, "Estimate log to write (optional)", false);
  add_calib(ev, args);
  ev->add_option("--mode", args.mode,
                 "constrained (default): respect joint axes; unconstrained: "
                 "per-link all-axes rates")
      ->check(CLI::IsMember({"constrained", "unconstrained"}));
  ev->callback([&] { handler = cmd_estimate_velocity; });

  CLI::App* ea = app.add_subcommand(
      "estimate-acceleration",
      "Recover joint angular accelerations from paired accelerometers");
  add_config(ea, args);
  add_input(ea, args, "Sensor log");
  add_output(ea, args, "Estimate log to write (optional)", false);
  add_calib(ea, args);
  ea->callback([&] { handler = cmd_estimate_acceleration; });

  CLI::App* filter = app.add_subcommand(
      "filter", "Run the gyro-bias tracker or the joint velocity filter "
                "over a sensor log");
  add_config(filter, args);
  add_input(filter, args, "Sensor log");
  add_output(filter, args, "Estimate log to write (optional)", false);
  add_calib(filter, args);
  filter->add_option("--mode", args.mode,
                     "bias-ekf, velocity-zero or velocity-desired; default "
                     "follows the [filters] section")
      ->check(CLI::IsMember({"bias-ekf", "velocity-zero", "velocity-desired"}));
  filter->callback([&] { handler = cmd_filter; });

  CLI::App* control = app.add_subcommand(
      "control-experiment",
      "Run every configured gain scenario against all three velocity "
      "feedback sources and tabulate tracking quality");
  add_config(control, args);
  add_output(control, args, "Tracking summary table to write", true);
  add_seed(control, args);
  control->callback([&] { handler = cmd_control_experiment; });

  CLI::App* report = app.add_subcommand(
      "report",
      "Aggregate a tracking summary into a per-gain source comparison table");
  add_input(report, args, "Tracking summary from control-experiment");
  add_output(report, args, "Comparison table to write (default: stdout)",
             false);
  report->callback([&] { handler = cmd_report; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    return handler(args);
  } catch (const jse::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
