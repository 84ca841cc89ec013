#pragma once

// Scenario <-> JSON. Field names carry their units; omitted optional fields
// take the reference-scenario values.

#include <fstream>
#include <string>

#include "json.hpp"
#include "svr/sim.hpp"

namespace svr {

using Json = nlohmann::json;

namespace detail {

inline const Json* find(const Json& j, const char* key) {
  const auto it = j.find(key);
  return it == j.end() ? nullptr : &*it;
}

template <typename T>
T read_field(const Json& j, const char* key, const std::string& where) {
  const Json* v = find(j, key);
  if (!v) throw Error(ErrorCode::Config, "missing required field '" + where + key + "'");
  try {
    return v->get<T>();
  } catch (const Json::exception&) {
    throw Error(ErrorCode::Config, "field '" + where + key + "' has the wrong type");
  }
}

template <typename T>
T read_opt(const Json& j, const char* key, T fallback, const std::string& where) {
  return find(j, key) ? read_field<T>(j, key, where) : fallback;
}

inline Vec3 read_vec3(const Json& j, const char* key, const Vec3& fallback, const std::string& where) {
  const Json* v = find(j, key);
  if (!v) return fallback;
  if (!v->is_array() || v->size() != 3) throw Error(ErrorCode::Config, "field '" + where + key + "' must be [x, y, z]");
  try {
    return {(*v)[0].get<double>(), (*v)[1].get<double>(), (*v)[2].get<double>()};
  } catch (const Json::exception&) {
    throw Error(ErrorCode::Config, "field '" + where + key + "' must hold numbers");
  }
}

inline Json vec3_json(const Vec3& v) { return Json::array({v.x(), v.y(), v.z()}); }

inline const char* class_name(SurfaceClass c) {
  switch (c) {
    case SurfaceClass::Ground: return "ground";
    case SurfaceClass::Wall: return "wall";
    case SurfaceClass::Static: return "static";
    case SurfaceClass::Obstacle: return "obstacle";
    default: return "none";
  }
}

inline SurfaceClass class_from(const std::string& s, const std::string& where) {
  if (s == "ground") return SurfaceClass::Ground;
  if (s == "wall") return SurfaceClass::Wall;
  if (s == "static") return SurfaceClass::Static;
  if (s == "obstacle") return SurfaceClass::Obstacle;
  throw Error(ErrorCode::Config, "field '" + where + "class' has unknown value '" + s + "'");
}

}  // namespace detail

/// Exact form: row-major rotation and translation.
inline Json transform_to_json(const RigidTransform& t) {
  Json r = Json::array();
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k) r.push_back(t.rotation()(i, k));
  return {{"rotation", r}, {"translation_m", detail::vec3_json(t.translation())}};
}

/// Accepts the exact form or the planar shorthand {yaw_rad, x_m, y_m, z_m}.
inline RigidTransform transform_from_json(const Json& j, const std::string& where) {
  using namespace detail;
  if (!j.is_object()) throw Error(ErrorCode::Config, "field '" + where + "' must be an object");
  if (find(j, "rotation")) {
    const Json& r = j["rotation"];
    if (!r.is_array() || r.size() != 9) throw Error(ErrorCode::Config, "field '" + where + ".rotation' must have 9 entries");
    Mat3 m;
    for (int i = 0; i < 9; ++i) m(i / 3, i % 3) = r[i].get<double>();
    try {
      return {m, read_vec3(j, "translation_m", Vec3::Zero(), where + ".")};
    } catch (const Error& e) {
      throw Error(ErrorCode::Config, "field '" + where + "': " + e.what());
    }
  }
  const std::string w = where + ".";
  return RigidTransform::planar(read_opt(j, "yaw_rad", 0.0, w), read_opt(j, "x_m", 0.0, w), read_opt(j, "y_m", 0.0, w),
                                read_opt(j, "z_m", 0.0, w));
}

[[nodiscard]] inline Json scenario_to_json(const Scenario& sc) {
  using namespace detail;
  Json j;
  j["seed"] = sc.seed;
  j["duration_s"] = sc.duration_s;
  j["lidar_rate_hz"] = sc.lidar_rate_hz;
  j["imu_rate_hz"] = sc.imu_rate_hz;
  j["camera_rate_hz"] = sc.camera_rate_hz;
  j["colocation_rate_hz"] = sc.colocation_rate_hz;
  j["bounds_m"] = sc.bounds_m;

  Json planes = Json::array();
  for (const auto& p : sc.world.planes)
    planes.push_back({{"normal", vec3_json(p.normal)},
                      {"offset_m", p.offset},
                      {"center_m", vec3_json(p.center)},
                      {"axis_u", vec3_json(p.axis_u)},
                      {"half_u_m", p.half_u},
                      {"half_v_m", p.half_v},
                      {"class", class_name(p.cls)}});
  Json boxes = Json::array();
  for (const auto& b : sc.world.boxes)
    boxes.push_back({{"pose", transform_to_json(b.pose)}, {"half_size_m", vec3_json(b.half)}, {"class", class_name(b.cls)}});
  j["world"] = {{"ground", sc.world.ground}, {"planes", planes}, {"boxes", boxes}};

  j["vehicle"] = {{"x_m", sc.vehicle0.pose.x},
                  {"y_m", sc.vehicle0.pose.y},
                  {"theta_rad", sc.vehicle0.pose.theta},
                  {"speed_mps", sc.vehicle0.speed},
                  {"wheelbase_m", sc.vehicle0.wheelbase},
                  {"height_m", sc.vehicle_height_m},
                  {"max_steer_rad", sc.motion.max_steer},
                  {"accel_gain_mps2", sc.motion.accel_gain},
                  {"brake_gain_mps2", sc.motion.brake_gain}};
  Json acts = Json::array();
  for (const auto& a : sc.actions)
    acts.push_back({{"t_s", a.t}, {"steer_rad", a.action.steer}, {"throttle", a.action.throttle}, {"brake", a.action.brake}});
  j["actions"] = acts;

  j["lidar"] = {{"rings", sc.lidar.rings},
                {"azimuth_steps", sc.lidar.azimuth_steps},
                {"min_elevation_rad", sc.lidar.min_elevation},
                {"max_elevation_rad", sc.lidar.max_elevation},
                {"max_range_m", sc.lidar.max_range},
                {"noise_m", sc.lidar_noise_m},
                {"height_m", sc.lidar_height_m}};
  j["imu"] = {{"accel_noise_mps2", sc.imu.accel_noise},
              {"gyro_noise_radps", sc.imu.gyro_noise},
              {"accel_bias_mps2", vec3_json(sc.imu.accel_bias)},
              {"gyro_bias_radps", vec3_json(sc.imu.gyro_bias)}};
  j["camera"] = {{"enabled", sc.camera_enabled},   {"width_px", sc.camera.width},
                 {"height_px", sc.camera.height},  {"fx_px", sc.camera.fx},
                 {"fy_px", sc.camera.fy},          {"height_m", sc.camera.height_m},
                 {"forward_m", sc.camera.forward_m}, {"pitch_rad", sc.camera.pitch_rad}};
  j["drift"] = {{"perturbation", transform_to_json(sc.drift.perturbation)},
                {"walk_sigma_m", sc.drift.walk_sigma_m},
                {"walk_sigma_rad", sc.drift.walk_sigma_rad},
                {"step_s", sc.drift.step_s},
                {"latency_s", sc.drift.latency_s},
                {"planar", sc.drift.planar}};
  j["calibration"] = transform_to_json(sc.calibration);
  j["obstacle"] = {{"enabled", sc.obstacle.enabled},
                   {"x_m", sc.obstacle.pose0.x},
                   {"y_m", sc.obstacle.pose0.y},
                   {"theta_rad", sc.obstacle.pose0.theta},
                   {"speed_mps", sc.obstacle.speed},
                   {"yaw_rate_radps", sc.obstacle.yaw_rate},
                   {"size_m", vec3_json(sc.obstacle.size)}};
  Json lms = Json::array();
  for (const auto& l : sc.landmarks) lms.push_back(vec3_json(l));
  j["landmarks_m"] = lms;
  return j;
}

[[nodiscard]] inline Scenario scenario_from_json(const Json& j) {
  using namespace detail;
  if (!j.is_object()) throw Error(ErrorCode::Config, "scenario must be a JSON object");
  Scenario sc = reference_scenario();
  sc.seed = read_field<std::uint64_t>(j, "seed", "");
  sc.duration_s = read_field<double>(j, "duration_s", "");
  sc.lidar_rate_hz = read_field<double>(j, "lidar_rate_hz", "");
  sc.imu_rate_hz = read_field<double>(j, "imu_rate_hz", "");
  sc.camera_rate_hz = read_field<double>(j, "camera_rate_hz", "");
  sc.colocation_rate_hz = read_field<double>(j, "colocation_rate_hz", "");
  sc.bounds_m = read_opt(j, "bounds_m", sc.bounds_m, "");
  sc.drift.step_s = 1.0 / sc.lidar_rate_hz;

  if (const Json* w = find(j, "world")) {
    WorldModel world;
    world.ground = read_opt(*w, "ground", true, "world.");
    if (const Json* room = find(*w, "room")) {
      const std::string fur = read_opt<std::string>(*room, "furniture", "default", "world.room.");
      if (fur != "default" && fur != "none") throw Error(ErrorCode::Config, "field 'world.room.furniture' must be default or none");
      const WorldModel r = make_room(read_opt(*room, "half_size_m", 4.0, "world.room."),
                                     read_opt(*room, "wall_height_m", 1.5, "world.room."),
                                     fur == "default" ? default_furniture() : std::vector<OrientedBox>{});
      world.planes = r.planes;
      world.boxes = r.boxes;
    }
    if (const Json* ps = find(*w, "planes")) {
      for (std::size_t i = 0; i < ps->size(); ++i) {
        const Json& p = (*ps)[i];
        const std::string at = "world.planes[" + std::to_string(i) + "].";
        BoundedPlane pl;
        pl.normal = read_vec3(p, "normal", pl.normal, at);
        pl.offset = read_field<double>(p, "offset_m", at);
        pl.center = read_vec3(p, "center_m", pl.offset * pl.normal, at);
        pl.axis_u = read_vec3(p, "axis_u", pl.axis_u, at);
        pl.half_u = read_field<double>(p, "half_u_m", at);
        pl.half_v = read_field<double>(p, "half_v_m", at);
        pl.cls = class_from(read_opt<std::string>(p, "class", "wall", at), at);
        world.planes.push_back(pl);
      }
    }
    if (const Json* bs = find(*w, "boxes")) {
      for (std::size_t i = 0; i < bs->size(); ++i) {
        const Json& b = (*bs)[i];
        const std::string at = "world.boxes[" + std::to_string(i) + "].";
        OrientedBox ob;
        if (!find(b, "pose")) throw Error(ErrorCode::Config, "missing required field '" + at + "pose'");
        ob.pose = transform_from_json(b["pose"], at + "pose");
        ob.half = read_vec3(b, "half_size_m", ob.half, at);
        ob.cls = class_from(read_opt<std::string>(b, "class", "static", at), at);
        world.boxes.push_back(ob);
      }
    }
    sc.world = world;
  }

  if (const Json* v = find(j, "vehicle")) {
    const std::string at = "vehicle.";
    sc.vehicle0.pose = Pose2D(read_opt(*v, "x_m", sc.vehicle0.pose.x, at), read_opt(*v, "y_m", sc.vehicle0.pose.y, at),
                              read_opt(*v, "theta_rad", sc.vehicle0.pose.theta, at));
    sc.vehicle0.speed = read_opt(*v, "speed_mps", sc.vehicle0.speed, at);
    sc.vehicle0.wheelbase = read_opt(*v, "wheelbase_m", sc.vehicle0.wheelbase, at);
    sc.vehicle_height_m = read_opt(*v, "height_m", sc.vehicle_height_m, at);
    sc.motion.max_steer = read_opt(*v, "max_steer_rad", sc.motion.max_steer, at);
    sc.motion.accel_gain = read_opt(*v, "accel_gain_mps2", sc.motion.accel_gain, at);
    sc.motion.brake_gain = read_opt(*v, "brake_gain_mps2", sc.motion.brake_gain, at);
  }
  if (const Json* as = find(j, "actions")) {
    sc.actions.clear();
    for (std::size_t i = 0; i < as->size(); ++i) {
      const Json& a = (*as)[i];
      const std::string at = "actions[" + std::to_string(i) + "].";
      sc.actions.push_back({read_field<double>(a, "t_s", at),
                            Action{read_opt(a, "steer_rad", 0.0, at), read_opt(a, "throttle", 0.0, at),
                                   read_opt(a, "brake", 0.0, at)}});
    }
  }
  if (const Json* l = find(j, "lidar")) {
    const std::string at = "lidar.";
    sc.lidar.rings = read_opt(*l, "rings", sc.lidar.rings, at);
    sc.lidar.azimuth_steps = read_opt(*l, "azimuth_steps", sc.lidar.azimuth_steps, at);
    sc.lidar.min_elevation = read_opt(*l, "min_elevation_rad", sc.lidar.min_elevation, at);
    sc.lidar.max_elevation = read_opt(*l, "max_elevation_rad", sc.lidar.max_elevation, at);
    if (find(*l, "min_elevation_deg")) sc.lidar.min_elevation = read_field<double>(*l, "min_elevation_deg", at) * kPi / 180.0;
    if (find(*l, "max_elevation_deg")) sc.lidar.max_elevation = read_field<double>(*l, "max_elevation_deg", at) * kPi / 180.0;
    sc.lidar.max_range = read_opt(*l, "max_range_m", sc.lidar.max_range, at);
    sc.lidar_noise_m = read_opt(*l, "noise_m", sc.lidar_noise_m, at);
    sc.lidar_height_m = read_opt(*l, "height_m", sc.lidar_height_m, at);
  }
  if (const Json* m = find(j, "imu")) {
    const std::string at = "imu.";
    sc.imu.accel_noise = read_opt(*m, "accel_noise_mps2", sc.imu.accel_noise, at);
    sc.imu.gyro_noise = read_opt(*m, "gyro_noise_radps", sc.imu.gyro_noise, at);
    sc.imu.accel_bias = read_vec3(*m, "accel_bias_mps2", sc.imu.accel_bias, at);
    sc.imu.gyro_bias = read_vec3(*m, "gyro_bias_radps", sc.imu.gyro_bias, at);
  }
  if (const Json* c = find(j, "camera")) {
    const std::string at = "camera.";
    sc.camera_enabled = read_opt(*c, "enabled", sc.camera_enabled, at);
    sc.camera.width = read_opt(*c, "width_px", sc.camera.width, at);
    sc.camera.height = read_opt(*c, "height_px", sc.camera.height, at);
    sc.camera.fx = read_opt(*c, "fx_px", sc.camera.fx, at);
    sc.camera.fy = read_opt(*c, "fy_px", sc.camera.fy, at);
    sc.camera.height_m = read_opt(*c, "height_m", sc.camera.height_m, at);
    sc.camera.forward_m = read_opt(*c, "forward_m", sc.camera.forward_m, at);
    sc.camera.pitch_rad = read_opt(*c, "pitch_rad", sc.camera.pitch_rad, at);
    if (find(*c, "pitch_deg")) sc.camera.pitch_rad = read_field<double>(*c, "pitch_deg", at) * kPi / 180.0;
  }
  if (const Json* d = find(j, "drift")) {
    const std::string at = "drift.";
    if (const Json* p = find(*d, "perturbation")) sc.drift.perturbation = transform_from_json(*p, "drift.perturbation");
    sc.drift.walk_sigma_m = read_opt(*d, "walk_sigma_m", sc.drift.walk_sigma_m, at);
    sc.drift.walk_sigma_rad = read_opt(*d, "walk_sigma_rad", sc.drift.walk_sigma_rad, at);
    sc.drift.step_s = read_opt(*d, "step_s", sc.drift.step_s, at);
    sc.drift.latency_s = read_opt(*d, "latency_s", sc.drift.latency_s, at);
    sc.drift.planar = read_opt(*d, "planar", sc.drift.planar, at);
  }
  if (const Json* c = find(j, "calibration")) sc.calibration = transform_from_json(*c, "calibration");
  if (const Json* o = find(j, "obstacle")) {
    const std::string at = "obstacle.";
    sc.obstacle.enabled = read_opt(*o, "enabled", sc.obstacle.enabled, at);
    sc.obstacle.pose0 = Pose2D(read_opt(*o, "x_m", sc.obstacle.pose0.x, at), read_opt(*o, "y_m", sc.obstacle.pose0.y, at),
                               read_opt(*o, "theta_rad", sc.obstacle.pose0.theta, at));
    sc.obstacle.speed = read_opt(*o, "speed_mps", sc.obstacle.speed, at);
    sc.obstacle.yaw_rate = read_opt(*o, "yaw_rate_radps", sc.obstacle.yaw_rate, at);
    sc.obstacle.size = read_vec3(*o, "size_m", sc.obstacle.size, at);
  }
  if (const Json* ls = find(j, "landmarks_m")) {
    sc.landmarks.clear();
    for (std::size_t i = 0; i < ls->size(); ++i) {
      const Json& l = (*ls)[i];
      if (!l.is_array() || l.size() != 3) throw Error(ErrorCode::Config, "field 'landmarks_m' entries must be [x, y, z]");
      sc.landmarks.emplace_back(l[0].get<double>(), l[1].get<double>(), l[2].get<double>());
    }
  }
  try {
    sc.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::Config, e.what());
  }
  return sc;
}

[[nodiscard]] inline Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Config, "cannot open " + path);
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::Config, "malformed JSON in " + path + ": " + e.what());
  }
}

[[nodiscard]] inline Scenario load_scenario(const std::string& path) { return scenario_from_json(read_json_file(path)); }

}  // namespace svr
