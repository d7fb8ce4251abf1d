#include "jse/config.hpp"

#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "jse/errors.hpp"

namespace jse {

namespace {

struct RawEntry {
  std::string value;
  long line = 0;
};

/// Flat view of the file: "section.key" (or bare "key" before any section
/// header) mapped to its raw text, plus consumption tracking so unknown keys
/// can be reported after the typed extraction pass.
class RawConfig {
 public:
  explicit RawConfig(const std::string& path) : path_(path) {
    std::ifstream in(path);
    if (!in.is_open())
      throw ConfigError("cannot open config file " + path + ": " +
                        std::strerror(errno));
    std::string raw;
    std::string section;
    long line = 0;
    while (std::getline(in, raw)) {
      ++line;
      if (!raw.empty() && raw.back() == '\r') raw.pop_back();
      const std::string text = trim(strip_comment(raw));
      if (text.empty()) continue;
      if (text.front() == '[') {
        if (text.back() != ']')
          fail(line, "unterminated section header \"" + text + "\"");
        section = trim(text.substr(1, text.size() - 2));
        if (section.empty()) fail(line, "empty section name");
        continue;
      }
      const std::size_t eq = text.find('=');
      if (eq == std::string::npos)
        fail(line, "expected key = value, got \"" + text + "\"");
      std::string key = trim(text.substr(0, eq));
      const std::string value = trim(text.substr(eq + 1));
      if (key.empty()) fail(line, "empty key");
      if (!section.empty()) key = section + "." + key;
      if (entries_.count(key))
        fail(line, "duplicate key \"" + key + "\" (first at line " +
                       std::to_string(entries_[key].line) + ")");
      entries_[key] = RawEntry{value, line};
    }
  }

  bool has(const std::string& key) const { return entries_.count(key) != 0; }

  bool has_section(const std::string& section) const {
    const std::string prefix = section + ".";
    auto it = entries_.lower_bound(prefix);
    return it != entries_.end() && it->first.compare(0, prefix.size(), prefix) == 0;
  }

  const RawEntry& require(const std::string& key) {
    auto it = entries_.find(key);
    if (it == entries_.end())
      throw ConfigError(path_ + ": missing required key \"" + key + "\"");
    consumed_.insert(key);
    return it->second;
  }

  const RawEntry* find(const std::string& key) {
    auto it = entries_.find(key);
    if (it == entries_.end()) return nullptr;
    consumed_.insert(key);
    return &it->second;
  }

  std::string get_string(const std::string& key) { return require(key).value; }

  bool get_bool(const std::string& key) {
    const RawEntry& e = require(key);
    if (e.value == "true" || e.value == "1") return true;
    if (e.value == "false" || e.value == "0") return false;
    fail(e.line, "key \"" + key + "\" needs true/false, got \"" + e.value + "\"");
    return false;
  }

  double get_double(const std::string& key) {
    const RawEntry& e = require(key);
    return parse_double(e, key);
  }

  double get_double_or(const std::string& key, double fallback) {
    const RawEntry* e = find(key);
    return e ? parse_double(*e, key) : fallback;
  }

  long get_int(const std::string& key) {
    const RawEntry& e = require(key);
    return parse_int(e, key);
  }

  long get_int_or(const std::string& key, long fallback) {
    const RawEntry* e = find(key);
    return e ? parse_int(*e, key) : fallback;
  }

  std::uint64_t get_u64_or(const std::string& key, std::uint64_t fallback) {
    const RawEntry* e = find(key);
    if (!e) return fallback;
    errno = 0;
    char* end = nullptr;
    const unsigned long long v = std::strtoull(e->value.c_str(), &end, 10);
    if (errno != 0 || end == e->value.c_str() || *end != '\0')
      fail(e->line, "key \"" + key + "\" needs an unsigned integer, got \"" +
                        e->value + "\"");
    return v;
  }

  Vec3 get_vec3(const std::string& key) {
    const RawEntry& e = require(key);
    return parse_vec3(e, key);
  }

  Vec3 get_vec3_or(const std::string& key, const Vec3& fallback) {
    const RawEntry* e = find(key);
    return e ? parse_vec3(*e, key) : fallback;
  }

  /// After extraction: every remaining key is a typo or an unsupported
  /// option, and silence would mean silently ignoring the experimenter.
  void reject_unconsumed() const {
    for (const auto& [key, entry] : entries_)
      if (!consumed_.count(key))
        fail(entry.line, "unknown key \"" + key + "\"");
  }

  [[noreturn]] void fail(long line, const std::string& what) const {
    throw ConfigError(path_ + ":" + std::to_string(line) + ": " + what);
  }

 private:
  static std::string strip_comment(const std::string& s) {
    const std::size_t hash = s.find('#');
    return hash == std::string::npos ? s : s.substr(0, hash);
  }

  static std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
  }

  double parse_double(const RawEntry& e, const std::string& key) const {
    errno = 0;
    char* end = nullptr;
    const double v = std::strtod(e.value.c_str(), &end);
    if (errno == ERANGE || end == e.value.c_str() || *end != '\0' ||
        !std::isfinite(v))
      fail(e.line,
           "key \"" + key + "\" needs a number, got \"" + e.value + "\"");
    return v;
  }

  long parse_int(const RawEntry& e, const std::string& key) const {
    errno = 0;
    char* end = nullptr;
    const long v = std::strtol(e.value.c_str(), &end, 10);
    if (errno != 0 || end == e.value.c_str() || *end != '\0')
      fail(e.line,
           "key \"" + key + "\" needs an integer, got \"" + e.value + "\"");
    return v;
  }

  Vec3 parse_vec3(const RawEntry& e, const std::string& key) const {
    std::istringstream iss(e.value);
    Vec3 v;
    if (!(iss >> v(0) >> v(1) >> v(2)))
      fail(e.line, "key \"" + key + "\" needs three numbers, got \"" +
                       e.value + "\"");
    std::string extra;
    if (iss >> extra)
      fail(e.line, "key \"" + key + "\" needs exactly three numbers");
    if (!v.allFinite())
      fail(e.line, "key \"" + key + "\" has non-finite components");
    return v;
  }

  std::string path_;
  std::map<std::string, RawEntry> entries_;
  std::set<std::string> consumed_;
};

Vec3 axis_from_letter(char c, RawConfig& raw, long line) {
  switch (c) {
    case 'x':
      return Vec3::UnitX();
    case 'y':
      return Vec3::UnitY();
    case 'z':
      return Vec3::UnitZ();
    default:
      raw.fail(line, std::string("joint axis letters must be x, y or z, got '") +
                         c + "'");
  }
}

void load_chain(RawConfig& raw, ExperimentConfig& cfg) {
  cfg.has_chain = true;
  cfg.floating_base = raw.get_bool("chain.floating_base");
  const long joints = raw.get_int("chain.joints");
  if (joints < 1) throw ConfigError("chain.joints must be at least 1");
  for (long j = 0; j < joints; ++j) {
    const std::string prefix = "chain.joint." + std::to_string(j) + ".";
    JointSpec spec;
    const RawEntry& axes = raw.require(prefix + "axes");
    if (axes.value.empty() || axes.value.size() > 3)
      raw.fail(axes.line, "joint axes need 1 to 3 letters");
    for (char c : axes.value) spec.axes.push_back(axis_from_letter(c, raw, axes.line));
    spec.dof = static_cast<int>(spec.axes.size());
    spec.origin_in_parent = raw.get_vec3(prefix + "origin_m");
    spec.zero_rotation =
        Rotation::exp(raw.get_vec3_or(prefix + "zero_rotvec_rad", Vec3::Zero()));
    cfg.joints.push_back(std::move(spec));
  }

  const long mounts = raw.get_int("chain.mounts");
  if (mounts < 0) throw ConfigError("chain.mounts must be non-negative");
  for (long m = 0; m < mounts; ++m) {
    const std::string prefix = "chain.mount." + std::to_string(m) + ".";
    ImuMount mount;
    mount.link = static_cast<int>(raw.get_int(prefix + "link"));
    mount.slot = static_cast<int>(raw.get_int_or(prefix + "slot", 0));
    mount.position = raw.get_vec3(prefix + "position_m");
    mount.orientation =
        Rotation::exp(raw.get_vec3_or(prefix + "rotvec_rad", Vec3::Zero()));
    if (mount.link < 0 || mount.link > joints)
      throw ConfigError("chain.mount." + std::to_string(m) +
                        ".link must name a link (0.." + std::to_string(joints) +
                        ")");
    if (mount.slot != 0 && mount.slot != 1)
      throw ConfigError("chain.mount." + std::to_string(m) +
                        ".slot must be 0 or 1");
    cfg.mounts.push_back(mount);
  }
}

void load_noise(RawConfig& raw, ExperimentConfig& cfg) {
  cfg.has_noise = true;
  NoiseConfig& n = cfg.noise;
  n.gyro_noise_density = raw.get_double_or("noise.gyro_density_rad_s_sqrthz", 0.0);
  n.gyro_bias_walk = raw.get_double_or("noise.gyro_bias_walk_rad_s2_sqrthz", 0.0);
  n.initial_gyro_bias = raw.get_double_or("noise.initial_gyro_bias_rad_s", 0.0);
  n.accel_noise_density =
      raw.get_double_or("noise.accel_density_m_s2_sqrthz", 0.0);
  n.accel_bias = raw.get_vec3_or("noise.accel_bias_m_s2", Vec3::Zero());
  n.joint_sensor_noise = raw.get_double_or("noise.joint_sensor_noise_rad", 0.0);
  n.sample_rate_hz = raw.get_double_or("noise.sample_rate_hz", 1000.0);
  n.gravity = raw.get_double_or("noise.gravity_m_s2", 9.81);
  n.seed = cfg.seed;
  n.validate();
}

void load_trajectory(RawConfig& raw, ExperimentConfig& cfg) {
  cfg.has_trajectory = true;
  TrajectoryConfig& t = cfg.trajectory;
  t.duration_s = raw.get_double("trajectory.duration_s");
  const long joints = raw.get_int("trajectory.joints");
  if (joints < 0) throw ConfigError("trajectory.joints must be non-negative");
  for (long i = 0; i < joints; ++i) {
    const std::string prefix = "trajectory.joint." + std::to_string(i) + ".";
    SineSpec s;
    s.amplitude_rad = raw.get_double_or(prefix + "amplitude_rad", 0.0);
    s.frequency_hz = raw.get_double_or(prefix + "frequency_hz", 0.0);
    s.phase_rad = raw.get_double_or(prefix + "phase_rad", 0.0);
    s.offset_rad = raw.get_double_or(prefix + "offset_rad", 0.0);
    t.joints.push_back(s);
  }
  const std::string mode = raw.find("trajectory.base.mode")
                               ? raw.get_string("trajectory.base.mode")
                               : std::string("fixed");
  if (mode == "fixed") {
    t.base.mode = BaseMode::fixed;
  } else if (mode == "floating") {
    t.base.mode = BaseMode::floating;
  } else {
    throw ConfigError("trajectory.base.mode must be fixed or floating, got \"" +
                      mode + "\"");
  }
  t.base.amplitude = raw.get_vec3_or("trajectory.base.amplitude_rad_s", Vec3::Zero());
  t.base.frequency_hz = raw.get_vec3_or("trajectory.base.frequency_hz", Vec3::Zero());
  t.base.phase = raw.get_vec3_or("trajectory.base.phase_rad", Vec3::Zero());
  t.base.offset = raw.get_vec3_or("trajectory.base.offset_rad_s", Vec3::Zero());
  t.validate();
}

void load_filters(RawConfig& raw, ExperimentConfig& cfg) {
  cfg.has_filters = true;
  BiasEkfConfig& e = cfg.bias_ekf;
  e.sigma_theta_meas = raw.get_double_or("filters.bias_ekf.sigma_theta_meas_rad",
                                         e.sigma_theta_meas);
  e.sigma_gyro =
      raw.get_double_or("filters.bias_ekf.sigma_gyro_rad_s", e.sigma_gyro);
  e.sigma_bias_walk = raw.get_double_or(
      "filters.bias_ekf.sigma_bias_walk_rad_s_sqrts", e.sigma_bias_walk);
  e.initial_theta_variance = raw.get_double_or(
      "filters.bias_ekf.initial_theta_variance_rad2", e.initial_theta_variance);
  e.initial_bias_variance = raw.get_double_or(
      "filters.bias_ekf.initial_bias_variance_rad2_s2", e.initial_bias_variance);
  e.variance_ceiling =
      raw.get_double_or("filters.bias_ekf.variance_ceiling", e.variance_ceiling);

  VelocityKfConfig& k = cfg.velocity_kf;
  k.sigma_theta_meas = raw.get_double_or(
      "filters.velocity_kf.sigma_theta_meas_rad", k.sigma_theta_meas);
  k.sigma_theta_dot_meas = raw.get_double_or(
      "filters.velocity_kf.sigma_theta_dot_meas_rad_s", k.sigma_theta_dot_meas);
  k.sigma_gyro =
      raw.get_double_or("filters.velocity_kf.sigma_gyro_rad_s", k.sigma_gyro);
  k.sigma_accel = raw.get_double_or("filters.velocity_kf.sigma_accel_rad_s2",
                                    k.sigma_accel);
  k.initial_variance = raw.get_double_or("filters.velocity_kf.initial_variance",
                                         k.initial_variance);
  k.variance_ceiling = raw.get_double_or("filters.velocity_kf.variance_ceiling",
                                         k.variance_ceiling);
  const std::string mode = raw.find("filters.velocity_kf.accel_mode")
                               ? raw.get_string("filters.velocity_kf.accel_mode")
                               : std::string("zero");
  if (mode == "zero") cfg.velocity_kf_mode = AccelMode::zero;
  else if (mode == "desired") cfg.velocity_kf_mode = AccelMode::desired;
  else if (mode == "accelerometer") cfg.velocity_kf_mode = AccelMode::accelerometer;
  else
    throw ConfigError(
        "filters.velocity_kf.accel_mode must be zero, desired or "
        "accelerometer, got \"" +
        mode + "\"");
}

void load_calibration(RawConfig& raw, ExperimentConfig& cfg) {
  cfg.has_calibration = true;
  OrientationCalibConfig& o = cfg.orientation_calib;
  PositionCalibConfig& p = cfg.position_calib;
  const long ref =
      raw.get_int_or("calibration.reference_mount", o.reference_mount);
  if (ref < 0) throw ConfigError("calibration.reference_mount must be >= 0");
  o.reference_mount = static_cast<int>(ref);
  p.reference_mount = static_cast<int>(ref);
  const long steps =
      raw.get_int_or("calibration.min_steps", static_cast<long>(o.min_steps));
  if (steps < 1) throw ConfigError("calibration.min_steps must be positive");
  o.min_steps = static_cast<std::size_t>(steps);
  p.min_steps = static_cast<std::size_t>(steps);
  const double tol = raw.get_double_or("calibration.locked_tol_rad", o.locked_tol_rad);
  o.locked_tol_rad = tol;
  p.locked_tol_rad = tol;
  o.excitation_warn =
      raw.get_double_or("calibration.excitation_warn", o.excitation_warn);
  p.cutoff_hz = raw.get_double_or("calibration.cutoff_hz", p.cutoff_hz);
  p.condition_warn =
      raw.get_double_or("calibration.condition_warn", p.condition_warn);
}

void load_control(RawConfig& raw, ExperimentConfig& cfg) {
  cfg.has_control = true;
  PlantConfig& p = cfg.plant;
  p.inertia = raw.get_double_or("control.inertia_kg_m2", p.inertia);
  p.damping = raw.get_double_or("control.damping_n_m_s", p.damping);
  p.torque_limit = raw.get_double_or("control.torque_limit_n_m", p.torque_limit);
  p.actuator_lag_s = raw.get_double_or("control.actuator_lag_s", p.actuator_lag_s);
  p.sample_rate_hz = raw.get_double_or("control.sample_rate_hz", p.sample_rate_hz);
  p.delay_samples =
      static_cast<int>(raw.get_int_or("control.delay_samples", p.delay_samples));

  SineReference& r = cfg.control_reference;
  r.amplitude_rad = raw.get_double_or("control.amplitude_rad", r.amplitude_rad);
  r.frequency_hz = raw.get_double_or("control.frequency_hz", r.frequency_hz);
  r.phase_rad = raw.get_double_or("control.phase_rad", r.phase_rad);
  r.offset_rad = raw.get_double_or("control.offset_rad", r.offset_rad);

  TrackingOptions& t = cfg.tracking;
  t.duration_s = raw.get_double_or("control.duration_s", t.duration_s);
  t.transient_s = raw.get_double_or("control.transient_s", t.transient_s);
  t.sigma_position = raw.get_double_or("control.sigma_position_rad", t.sigma_position);
  t.sigma_rate = raw.get_double_or("control.sigma_rate_rad_s", t.sigma_rate);
  t.velocity_cutoff_hz =
      raw.get_double_or("control.velocity_cutoff_hz", t.velocity_cutoff_hz);
  t.seed = cfg.seed;

  const long scenarios = raw.get_int_or("control.scenarios", 0);
  if (scenarios < 0) throw ConfigError("control.scenarios must be non-negative");
  for (long i = 0; i < scenarios; ++i) {
    const std::string prefix = "control.scenario." + std::to_string(i) + ".";
    Gains g;
    g.p = raw.get_double(prefix + "p");
    g.d = raw.get_double(prefix + "d");
    cfg.control_scenarios.push_back(g);
  }
}

}  // namespace

int ExperimentConfig::actuated_dof() const {
  int dof = 0;
  for (const JointSpec& j : joints) dof += j.dof;
  return dof;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  RawConfig raw(path);
  ExperimentConfig cfg;
  cfg.seed = raw.get_u64_or("seed", 0);

  if (raw.has_section("chain")) load_chain(raw, cfg);
  if (raw.has_section("noise")) load_noise(raw, cfg);
  if (raw.has_section("trajectory")) load_trajectory(raw, cfg);
  if (raw.has_section("filters")) load_filters(raw, cfg);
  if (raw.has_section("calibration")) load_calibration(raw, cfg);
  if (raw.has_section("control")) load_control(raw, cfg);
  raw.reject_unconsumed();

  if (cfg.has_filters) cfg.tracking.kf = cfg.velocity_kf;

  if (cfg.has_chain && cfg.has_trajectory) {
    const int adof = cfg.actuated_dof();
    if (static_cast<int>(cfg.trajectory.joints.size()) != adof)
      throw ConfigError(path + ": trajectory describes " +
                        std::to_string(cfg.trajectory.joints.size()) +
                        " joint coordinates but the chain has " +
                        std::to_string(adof) + " actuated degrees of freedom");
    const bool traj_floating = cfg.trajectory.base.mode == BaseMode::floating;
    if (traj_floating != cfg.floating_base)
      throw ConfigError(path +
                        ": trajectory base mode and chain.floating_base "
                        "disagree");
  }
  return cfg;
}

ChainModel build_chain(const ExperimentConfig& cfg) {
  if (!cfg.has_chain)
    throw ConfigError("the configuration file has no [chain] section");
  return ChainModel(cfg.floating_base, cfg.joints, cfg.mounts);
}

}  // namespace jse
