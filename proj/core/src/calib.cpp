#include "jse/calib.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "jse/errors.hpp"
#include "jse/filters.hpp"

namespace jse {

namespace {

constexpr const char* kCalibrationHeader = "# jse-calibration v1";

const ImuSample& reading(const CalibrationLog& log, std::size_t step,
                         int mount) {
  for (const ImuSample& s : log.samples[step]) {
    if (s.mount == mount) {
      return s;
    }
  }
  throw ConfigError("calibration log step " + std::to_string(step) +
                    " carries no reading for mount " + std::to_string(mount));
}

void check_mount_index(const ChainModel& model, int mount, const char* what) {
  if (mount < 0 || mount >= static_cast<int>(model.mounts().size())) {
    throw ConfigError(std::string(what) + " index " + std::to_string(mount) +
                      " is outside the model's mount list");
  }
}

// One causal pass over `v` in place, starting from the steady state for the
// first value so a constant stream passes through unchanged.
void settled_pass(const Biquad& f, std::vector<double>& v) {
  BiquadState st;
  st.s1 = (f.b1 + f.b2 - f.a1 - f.a2) * v.front();
  st.s2 = (f.b2 - f.a2) * v.front();
  for (double& s : v) {
    s = biquad_step(f, st, s);
  }
}

std::string format_value(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Reads one labelled line of `count` doubles from the calibration file.
std::vector<double> parse_values(std::istream& in, const std::string& key,
                                 std::size_t count, std::uint64_t& line_no) {
  std::string line;
  if (!std::getline(in, line)) {
    throw ConfigError("calibration file ended before '" + key + "'");
  }
  ++line_no;
  std::istringstream ss(line);
  std::string label;
  ss >> label;
  if (label != key) {
    throw ConfigError("calibration file line " + std::to_string(line_no) +
                      ": expected '" + key + "', found '" + label + "'");
  }
  std::vector<double> values(count);
  for (std::size_t i = 0; i < count; ++i) {
    if (!(ss >> values[i])) {
      throw ConfigError("calibration file line " + std::to_string(line_no) +
                        ": '" + key + "' needs " + std::to_string(count) +
                        " numeric values");
    }
  }
  double extra = 0.0;
  if (ss >> extra) {
    throw ConfigError("calibration file line " + std::to_string(line_no) +
                      ": '" + key + "' carries more than " +
                      std::to_string(count) + " values");
  }
  return values;
}

}  // namespace

CalibrationLog CalibrationLog::from_simulation(const SimulationResult& sim) {
  CalibrationLog log;
  log.times = sim.times;
  log.samples = sim.imu;
  log.joint_positions = sim.joint_measurements;
  log.sample_rate_hz = sim.dt > 0.0 ? 1.0 / sim.dt : 0.0;
  return log;
}

void CalibrationLog::validate(const ChainModel& model, int min_steps,
                              double locked_tol_rad) const {
  if (samples.size() != times.size() ||
      joint_positions.size() != times.size()) {
    throw ConfigError("calibration log arrays disagree on the step count");
  }
  if (!(sample_rate_hz > 0.0)) {
    throw ConfigError("calibration log needs a positive sample rate");
  }
  if (static_cast<int>(step_count()) < min_steps) {
    throw SignalTooShortError(
        "calibration log has " + std::to_string(step_count()) +
        " steps; at least " + std::to_string(min_steps) + " are required");
  }
  const int actuated = model.total_dof() - model.base_dof();
  for (std::size_t m = 0; m < joint_positions.size(); ++m) {
    if (joint_positions[m].size() != actuated) {
      throw ConfigError("calibration log step " + std::to_string(m) +
                        " carries " + std::to_string(joint_positions[m].size()) +
                        " joint coordinates; the model has " +
                        std::to_string(actuated));
    }
  }
  // Sensor jitter alone must not trip the gate, so the check ranges over
  // short-window averages instead of raw samples: averaging suppresses the
  // per-sample noise while actual drift or motion survives it.
  const std::size_t blocks = std::min<std::size_t>(32, step_count());
  const std::size_t block_len = step_count() / blocks;
  VecX lo = VecX::Constant(actuated, std::numeric_limits<double>::infinity());
  VecX hi = -lo;
  for (std::size_t blk = 0; blk < blocks; ++blk) {
    VecX mean = VecX::Zero(actuated);
    for (std::size_t m = blk * block_len; m < (blk + 1) * block_len; ++m) {
      mean += joint_positions[m];
    }
    mean /= static_cast<double>(block_len);
    lo = lo.cwiseMin(mean);
    hi = hi.cwiseMax(mean);
  }
  for (int j = 0; j < actuated; ++j) {
    const double travel = hi(j) - lo(j);
    if (travel > locked_tol_rad) {
      throw LockedJointViolationError(
          "joint coordinate " + std::to_string(j) + " moved " +
          format_value(travel) + " rad across the log (locked limit " +
          format_value(locked_tol_rad) + ")");
    }
  }
}

VecX CalibrationLog::mean_pose(const ChainModel& model) const {
  const int actuated = model.total_dof() - model.base_dof();
  VecX mean = VecX::Zero(actuated);
  for (const VecX& q : joint_positions) {
    mean += q;
  }
  if (!joint_positions.empty()) {
    mean /= static_cast<double>(joint_positions.size());
  }
  VecX full = VecX::Zero(model.total_dof());
  full.tail(actuated) = mean;
  return full;
}

OrientationCalibResult calibrate_orientation(const CalibrationLog& log,
                                             const ChainModel& model,
                                             int mount,
                                             const OrientationCalibConfig& cfg) {
  check_mount_index(model, mount, "mount");
  check_mount_index(model, cfg.reference_mount, "reference mount");
  log.validate(model, cfg.min_steps, cfg.locked_tol_rad);

  const VecX pose = log.mean_pose(model);
  const ImuMount& ref = model.mounts()[static_cast<std::size_t>(
      cfg.reference_mount)];
  const ImuMount& tgt = model.mounts()[static_cast<std::size_t>(mount)];
  // Maps the reference sensor's readings into the target link's frame: the
  // motion is rigid, so that stream equals the target link's own rate.
  const Rotation ref_to_target =
      model.relative_rotation(pose, ref.link, tgt.link) * ref.orientation;

  const auto steps = log.step_count();
  MatX a(static_cast<Eigen::Index>(steps), 3);
  MatX b(static_cast<Eigen::Index>(steps), 3);
  for (std::size_t m = 0; m < steps; ++m) {
    a.row(static_cast<Eigen::Index>(m)) = reading(log, m, mount).gyro;
    b.row(static_cast<Eigen::Index>(m)) =
        ref_to_target * reading(log, m, cfg.reference_mount).gyro;
  }

  OrientationCalibResult res;
  const Eigen::JacobiSVD<Mat3> cross(a.transpose() * b);
  res.excitation = cross.singularValues()(1) / static_cast<double>(steps);
  res.low_excitation = res.excitation < cfg.excitation_warn;
  res.orientation = kabsch_fit(a, b);
  res.residual = (a * res.orientation.matrix().transpose() - b).norm() /
                 std::sqrt(static_cast<double>(steps));
  return res;
}

PositionCalibResult calibrate_position(const CalibrationLog& log,
                                       const ChainModel& model,
                                       const MountCalibration& orientations,
                                       const PositionCalibConfig& cfg) {
  check_mount_index(model, cfg.reference_mount, "reference mount");
  if (orientations.mounts.size() != model.mounts().size()) {
    throw ConfigError("orientation set size does not match the mounts");
  }
  log.validate(model, cfg.min_steps, cfg.locked_tol_rad);

  const VecX pose = log.mean_pose(model);
  const std::size_t steps = log.step_count();
  const std::size_t mount_count = model.mounts().size();
  const int ref_idx = cfg.reference_mount;
  const ImuMount& ref = model.mounts()[static_cast<std::size_t>(ref_idx)];

  // Reference angular rate in the reference link's frame. Only the copy that
  // feeds the numeric derivative is smoothed — differentiation amplifies
  // sensor noise, so it runs on the filtered stream. The quadratic rate term
  // and the acceleration differences stay raw: the least-squares fit already
  // averages their zero-mean noise, while low-passing them would distort the
  // products (a filtered product is not the product of filtered factors).
  std::vector<Vec3> omega(steps);
  for (std::size_t m = 0; m < steps; ++m) {
    omega[m] = orientations.orientation(ref_idx) * reading(log, m, ref_idx).gyro;
  }
  const std::vector<Vec3> alpha = numeric_derivative(
      zero_delay_filter(omega, cfg.cutoff_hz, log.sample_rate_hz),
      log.sample_rate_hz);

  // The boundary samples carry the residue of the filter's start-up
  // transient, which the derivative amplifies by the sample rate; the fit
  // uses only the interior.
  const std::size_t trim = static_cast<std::size_t>(
      std::lround(log.sample_rate_hz / cfg.cutoff_hz));
  if (steps < 2 * trim + 9) {
    throw SignalTooShortError("calibration log too short to trim the filter "
                              "warm-up regions");
  }
  const std::size_t rows = steps - 2 * trim;

  // The lever-arm matrix is common to every sensor: factor it once.
  MatX a(static_cast<Eigen::Index>(3 * rows), 3);
  for (std::size_t m = 0; m < rows; ++m) {
    a.middleRows<3>(static_cast<Eigen::Index>(3 * m)) =
        skew(omega[m + trim]) * skew(omega[m + trim]) + skew(alpha[m + trim]);
  }
  const Eigen::JacobiSVD<MatX> svd(
      a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vec3 sv = svd.singularValues();
  const double tiny = std::numeric_limits<double>::min();
  const double condition = sv(2) > tiny
                               ? sv(0) / sv(2)
                               : std::numeric_limits<double>::infinity();

  PositionCalibResult res;
  res.condition = condition;
  res.ill_conditioned = !(condition < cfg.condition_warn);
  res.position_in_base.resize(mount_count, Vec3::Zero());
  res.position_in_link.resize(mount_count, Vec3::Zero());
  res.residual.resize(mount_count, 0.0);

  std::vector<Vec3> accel_ref(steps);
  for (std::size_t m = 0; m < steps; ++m) {
    accel_ref[m] =
        orientations.orientation(ref_idx) * reading(log, m, ref_idx).accel;
  }

  const Rotation ref_to_base = model.relative_rotation(pose, ref.link, 0);
  const Vec3 ref_position_in_base = model.mount_position_in_base(pose, ref);
  const std::vector<Vec3> origins = model.link_origins_in_base(pose);

  for (std::size_t i = 0; i < mount_count; ++i) {
    const ImuMount& tgt = model.mounts()[i];
    const Rotation to_ref_link =
        model.relative_rotation(pose, tgt.link, ref.link);
    VecX rhs(static_cast<Eigen::Index>(3 * rows));
    for (std::size_t m = 0; m < rows; ++m) {
      const ImuSample& s = reading(log, m + trim, static_cast<int>(i));
      rhs.segment<3>(static_cast<Eigen::Index>(3 * m)) =
          to_ref_link * (orientations.orientation(static_cast<int>(i)) *
                         s.accel) -
          accel_ref[m + trim];
    }
    const Vec3 lever = svd.solve(rhs);
    res.residual[i] =
        (a * lever - rhs).norm() / std::sqrt(static_cast<double>(rows));

    // The solve lives in the reference link's frame; express the offset in
    // the base frame and walk it back into the sensor's own link frame.
    const Vec3 offset_in_base = ref_to_base * lever;
    res.position_in_base[i] = offset_in_base;
    const Vec3 sensor_in_base = ref_position_in_base + offset_in_base;
    res.position_in_link[i] =
        model.relative_rotation(pose, 0, tgt.link) *
        (sensor_in_base - origins[static_cast<std::size_t>(tgt.link)]);
  }
  return res;
}

MountCalibration calibrate_all(const CalibrationLog& log,
                               const ChainModel& model,
                               const OrientationCalibConfig& ocfg,
                               const PositionCalibConfig& pcfg) {
  if (ocfg.reference_mount != pcfg.reference_mount) {
    throw ConfigError("orientation and position stages must agree on the "
                      "reference sensor");
  }
  MountCalibration cal = calibration_from_model(model);
  for (std::size_t i = 0; i < model.mounts().size(); ++i) {
    if (static_cast<int>(i) == ocfg.reference_mount) {
      continue;  // the reference pose is trusted, not re-estimated
    }
    const OrientationCalibResult fit =
        calibrate_orientation(log, model, static_cast<int>(i), ocfg);
    cal.mounts[i].orientation = fit.orientation;
    cal.mounts[i].orientation_residual = fit.residual;
    cal.mounts[i].orientation_excitation = fit.excitation;
  }
  const PositionCalibResult pos = calibrate_position(log, model, cal, pcfg);
  for (std::size_t i = 0; i < model.mounts().size(); ++i) {
    cal.mounts[i].position_in_base = pos.position_in_base[i];
    cal.mounts[i].position_in_link = pos.position_in_link[i];
    cal.mounts[i].position_residual = pos.residual[i];
    cal.mounts[i].position_condition = pos.condition;
  }
  cal.position_ill_conditioned = pos.ill_conditioned;
  return cal;
}

std::vector<double> zero_delay_filter(const std::vector<double>& signal,
                                      double cutoff_hz,
                                      double sample_rate_hz) {
  const Biquad f = butterworth2_design(cutoff_hz, sample_rate_hz);
  const std::size_t n = signal.size();
  const std::size_t warmup = static_cast<std::size_t>(
      std::lround(sample_rate_hz / cutoff_hz));
  if (n < 6 * warmup) {
    throw SignalTooShortError(
        "zero-delay filtering needs at least " + std::to_string(6 * warmup) +
        " samples at this cutoff; got " + std::to_string(n));
  }
  // Odd-reflection padding keeps the edges free of start-up transients; the
  // pad is discarded after both passes.
  const std::size_t pad = std::min(3 * warmup, n - 1);
  std::vector<double> x;
  x.reserve(n + 2 * pad);
  for (std::size_t k = 0; k < pad; ++k) {
    x.push_back(2.0 * signal.front() - signal[pad - k]);
  }
  x.insert(x.end(), signal.begin(), signal.end());
  for (std::size_t k = 0; k < pad; ++k) {
    x.push_back(2.0 * signal.back() - signal[n - 2 - k]);
  }
  settled_pass(f, x);
  std::reverse(x.begin(), x.end());
  settled_pass(f, x);
  std::reverse(x.begin(), x.end());
  return std::vector<double>(x.begin() + static_cast<std::ptrdiff_t>(pad),
                             x.begin() + static_cast<std::ptrdiff_t>(pad + n));
}

std::vector<Vec3> zero_delay_filter(const std::vector<Vec3>& signal,
                                    double cutoff_hz, double sample_rate_hz) {
  std::vector<Vec3> out(signal.size(), Vec3::Zero());
  std::vector<double> channel(signal.size());
  for (int axis = 0; axis < 3; ++axis) {
    for (std::size_t k = 0; k < signal.size(); ++k) {
      channel[k] = signal[k](axis);
    }
    const std::vector<double> filtered =
        zero_delay_filter(channel, cutoff_hz, sample_rate_hz);
    for (std::size_t k = 0; k < signal.size(); ++k) {
      out[k](axis) = filtered[k];
    }
  }
  return out;
}

std::vector<Vec3> numeric_derivative(const std::vector<Vec3>& signal,
                                     double sample_rate_hz) {
  if (!(sample_rate_hz > 0.0)) {
    throw ConfigError("numeric differentiation needs a positive sample rate");
  }
  const std::size_t n = signal.size();
  std::vector<Vec3> out(n, Vec3::Zero());
  if (n < 2) {
    return out;
  }
  out.front() = (signal[1] - signal[0]) * sample_rate_hz;
  out.back() = (signal[n - 1] - signal[n - 2]) * sample_rate_hz;
  for (std::size_t k = 1; k + 1 < n; ++k) {
    out[k] = (signal[k + 1] - signal[k - 1]) * (0.5 * sample_rate_hz);
  }
  return out;
}

void save_calibration(const MountCalibration& cal, const std::string& path) {
  std::ofstream out(path);
  if (!out) {
    throw ConfigError("cannot open '" + path + "' for writing");
  }
  out << kCalibrationHeader << '\n';
  out << "mount_count " << cal.mounts.size() << '\n';
  out << "position_ill_conditioned " << (cal.position_ill_conditioned ? 1 : 0)
      << '\n';
  for (std::size_t i = 0; i < cal.mounts.size(); ++i) {
    const MountPose& p = cal.mounts[i];
    out << "mount " << i << '\n';
    out << "orientation";
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) {
        out << ' ' << format_value(p.orientation.matrix()(r, c));
      }
    }
    out << '\n';
    out << "position_in_base";
    for (int k = 0; k < 3; ++k) {
      out << ' ' << format_value(p.position_in_base(k));
    }
    out << '\n';
    out << "position_in_link";
    for (int k = 0; k < 3; ++k) {
      out << ' ' << format_value(p.position_in_link(k));
    }
    out << '\n';
    out << "orientation_residual " << format_value(p.orientation_residual)
        << '\n';
    out << "orientation_excitation " << format_value(p.orientation_excitation)
        << '\n';
    out << "position_residual " << format_value(p.position_residual) << '\n';
    out << "position_condition " << format_value(p.position_condition) << '\n';
  }
  if (!out.flush()) {
    throw ConfigError("failed while writing '" + path + "'");
  }
}

MountCalibration load_calibration(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot open '" + path + "' for reading");
  }
  std::uint64_t line_no = 0;
  std::string line;
  if (!std::getline(in, line) || line != kCalibrationHeader) {
    throw ConfigError("'" + path + "' is not a calibration file (header '" +
                      line + "')");
  }
  ++line_no;
  const std::vector<double> count_v = parse_values(in, "mount_count", 1,
                                                   line_no);
  const double count_raw = count_v[0];
  if (!(count_raw >= 0.0) || count_raw != std::floor(count_raw) ||
      count_raw > 1e6) {
    throw ConfigError("calibration file mount_count is not a small "
                      "non-negative integer");
  }
  const std::size_t count = static_cast<std::size_t>(count_raw);
  const std::vector<double> flag_v =
      parse_values(in, "position_ill_conditioned", 1, line_no);
  if (flag_v[0] != 0.0 && flag_v[0] != 1.0) {
    throw ConfigError("calibration file position_ill_conditioned must be 0 "
                      "or 1");
  }

  MountCalibration cal;
  cal.position_ill_conditioned = flag_v[0] == 1.0;
  cal.mounts.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::vector<double> idx = parse_values(in, "mount", 1, line_no);
    if (idx[0] != static_cast<double>(i)) {
      throw ConfigError("calibration file mounts are out of order near line " +
                        std::to_string(line_no));
    }
    MountPose& p = cal.mounts[i];
    const std::vector<double> rot = parse_values(in, "orientation", 9, line_no);
    Mat3 m;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) {
        m(r, c) = rot[static_cast<std::size_t>(3 * r + c)];
      }
    }
    try {
      p.orientation = Rotation::from_matrix(m);
    } catch (const Error&) {
      throw ConfigError("calibration file orientation for mount " +
                        std::to_string(i) + " is not a rotation matrix");
    }
    const std::vector<double> pb =
        parse_values(in, "position_in_base", 3, line_no);
    p.position_in_base = Vec3(pb[0], pb[1], pb[2]);
    const std::vector<double> pl =
        parse_values(in, "position_in_link", 3, line_no);
    p.position_in_link = Vec3(pl[0], pl[1], pl[2]);
    p.orientation_residual =
        parse_values(in, "orientation_residual", 1, line_no)[0];
    p.orientation_excitation =
        parse_values(in, "orientation_excitation", 1, line_no)[0];
    p.position_residual = parse_values(in, "position_residual", 1, line_no)[0];
    p.position_condition =
        parse_values(in, "position_condition", 1, line_no)[0];
  }
  return cal;
}

}  // namespace jse
