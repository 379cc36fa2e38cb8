#include "cli_io.h"

#include <cctype>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

namespace carsac::cli {

namespace {

std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream is(line);
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

std::string trim(const std::string& s) {
  size_t a = 0;
  size_t b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

std::string where(const std::string& path, int line) {
  return path + ":" + std::to_string(line);
}

double parse_double(const std::string& tok, const std::string& context) {
  double v = 0.0;
  const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc() || res.ptr != tok.data() + tok.size() || !std::isfinite(v)) {
    throw Error(ErrorCode::kParse, context + ": invalid number '" + tok + "'");
  }
  return v;
}

long long parse_int(const std::string& tok, const std::string& context) {
  long long v = 0;
  const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc() || res.ptr != tok.data() + tok.size()) {
    throw Error(ErrorCode::kParse, context + ": invalid integer '" + tok + "'");
  }
  return v;
}

bool parse_bool(const std::string& tok, const std::string& context) {
  if (tok == "true" || tok == "1") return true;
  if (tok == "false" || tok == "0") return false;
  throw Error(ErrorCode::kParse, context + ": expected true or false, got '" + tok + "'");
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path);
  return in;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot open " + path + " for writing");
  return out;
}

void finish(std::ofstream& out, const std::string& path) {
  out.flush();
  if (!out) throw Error(ErrorCode::kIo, "failed writing " + path);
}

// Reads the next non-empty line; false at end of file.
bool next_line(std::istream& in, std::string* line, int* lineno) {
  while (std::getline(in, *line)) {
    ++*lineno;
    if (!trim(*line).empty()) return true;
  }
  return false;
}

Eigen::Matrix3d read_matrix_rows(std::istream& in, const std::string& path, int* lineno, int rows) {
  Eigen::Matrix3d m = Eigen::Matrix3d::Zero();
  std::string line;
  for (int r = 0; r < rows; ++r) {
    if (!next_line(in, &line, lineno)) {
      throw Error(ErrorCode::kParse, path + ": unexpected end of file");
    }
    const std::vector<std::string> tok = split_ws(line);
    if (tok.size() != 3) {
      throw Error(ErrorCode::kParse, where(path, *lineno) + ": expected 3 numbers");
    }
    for (int c = 0; c < 3; ++c) m(r, c) = parse_double(tok[static_cast<size_t>(c)], where(path, *lineno));
  }
  return m;
}

void expect_tag(std::istream& in, const std::string& path, int* lineno, const std::string& tag) {
  std::string line;
  if (!next_line(in, &line, lineno) || trim(line) != tag) {
    throw Error(ErrorCode::kParse, where(path, *lineno) + ": expected '" + tag + "'");
  }
}

CameraIntrinsics intrinsics_from(const Eigen::Matrix3d& k, const std::string& context) {
  if (k(0, 1) != 0.0 || k(1, 0) != 0.0 || k(2, 0) != 0.0 || k(2, 1) != 0.0 || k(2, 2) != 1.0) {
    throw Error(ErrorCode::kParse, context + ": intrinsics must be [fx 0 cx; 0 fy cy; 0 0 1]");
  }
  CameraIntrinsics c{k(0, 0), k(1, 1), k(0, 2), k(1, 2)};
  if (!c.valid()) throw Error(ErrorCode::kParse, context + ": focal lengths must be positive");
  return c;
}

void write_matrix(std::ostream& os, const Eigen::Matrix3d& m) {
  for (int r = 0; r < 3; ++r) {
    os << format_double(m(r, 0)) << ' ' << format_double(m(r, 1)) << ' ' << format_double(m(r, 2))
       << '\n';
  }
}

using Setter = std::function<void(const std::string&, const std::string&, TrainConfig*)>;

const std::vector<std::pair<std::string, Setter>>& setters() {
  static const std::vector<std::pair<std::string, Setter>> table = {
      {"batches", [](auto& v, auto& c, TrainConfig* t) { t->engine.batches = static_cast<int>(parse_int(v, c)); }},
      {"batch_size", [](auto& v, auto& c, TrainConfig* t) { t->engine.batch_size = static_cast<int>(parse_int(v, c)); }},
      {"model_kind", [](auto& v, auto& c, TrainConfig* t) {
         try {
           t->engine.kind = model_kind_from_string(v);
         } catch (const Error& e) {
           throw Error(ErrorCode::kParse, c + ": " + e.what());
         }
       }},
      {"msac_threshold", [](auto& v, auto& c, TrainConfig* t) { t->engine.msac_threshold_px = parse_double(v, c); }},
      {"pool_threshold", [](auto& v, auto& c, TrainConfig* t) { t->engine.sampler.pool_threshold = parse_double(v, c); }},
      {"min_pool", [](auto& v, auto& c, TrainConfig* t) { t->engine.sampler.min_pool = static_cast<int>(parse_int(v, c)); }},
      {"refine_iterations", [](auto& v, auto& c, TrainConfig* t) { t->engine.refine.max_iterations = static_cast<int>(parse_int(v, c)); }},
      {"lo_iterations", [](auto& v, auto& c, TrainConfig* t) { t->engine.lo_iterations = static_cast<int>(parse_int(v, c)); }},
      {"top_k", [](auto& v, auto& c, TrainConfig* t) { t->engine.refine.top_k = static_cast<int>(parse_int(v, c)); }},
      {"weight_cutoff", [](auto& v, auto& c, TrainConfig* t) { t->engine.refine.weight_cutoff = parse_double(v, c); }},
      {"lambda_init", [](auto& v, auto& c, TrainConfig* t) { t->engine.refine.lambda_init = parse_double(v, c); }},
      {"consensus_update", [](auto& v, auto& c, TrainConfig* t) { t->engine.consensus_update = parse_bool(v, c); }},
      {"epsilon", [](auto& v, auto& c, TrainConfig* t) { t->epsilon = parse_double(v, c); }},
      {"lambda", [](auto& v, auto& c, TrainConfig* t) { t->lambda = parse_double(v, c); }},
      {"pose_clamp", [](auto& v, auto& c, TrainConfig* t) { t->pose_clamp_deg = parse_double(v, c); }},
      {"inlier_label_px", [](auto& v, auto& c, TrainConfig* t) { t->inlier_label_px = parse_double(v, c); }},
      {"epochs", [](auto& v, auto& c, TrainConfig* t) { t->epochs = static_cast<int>(parse_int(v, c)); }},
      {"learning_rate", [](auto& v, auto& c, TrainConfig* t) { t->learning_rate = parse_double(v, c); }},
      {"momentum", [](auto& v, auto& c, TrainConfig* t) { t->momentum = parse_double(v, c); }},
      {"clip_norm", [](auto& v, auto& c, TrainConfig* t) { t->clip_norm = parse_double(v, c); }},
      {"pairs_per_step", [](auto& v, auto& c, TrainConfig* t) { t->pairs_per_step = static_cast<int>(parse_int(v, c)); }},
      {"alpha_step", [](auto& v, auto& c, TrainConfig* t) { t->alpha_step = parse_double(v, c); }},
      {"supervise_initial_state", [](auto& v, auto& c, TrainConfig* t) { t->supervise_initial_state = parse_bool(v, c); }},
      {"train_networks", [](auto& v, auto& c, TrainConfig* t) { t->train_networks = parse_bool(v, c); }},
      {"train_alpha", [](auto& v, auto& c, TrainConfig* t) { t->train_alpha = parse_bool(v, c); }},
      {"seed", [](auto& v, auto& c, TrainConfig* t) { t->seed = static_cast<std::uint64_t>(parse_int(v, c)); }},
  };
  return table;
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::vector<Correspondence> read_matches(const std::string& path) {
  std::ifstream in = open_in(path);
  std::string line;
  int lineno = 0;
  if (!next_line(in, &line, &lineno)) throw Error(ErrorCode::kParse, path + ": empty matches file");
  const std::vector<std::string> header = split_ws(line);
  const std::vector<std::string> base = {"x1", "y1", "x2", "y2", "side_info"};
  const bool labeled = header.size() == 6 && header[5] == "gt_inlier";
  if (!(header.size() == 5 || labeled) || !std::equal(base.begin(), base.end(), header.begin())) {
    throw Error(ErrorCode::kParse,
                where(path, lineno) + ": header must be 'x1 y1 x2 y2 side_info [gt_inlier]'");
  }
  std::vector<Correspondence> out;
  while (next_line(in, &line, &lineno)) {
    const std::vector<std::string> tok = split_ws(line);
    const std::string ctx = where(path, lineno);
    if (tok.size() != header.size()) {
      throw Error(ErrorCode::kParse, ctx + ": expected " + std::to_string(header.size()) +
                                         " columns, got " + std::to_string(tok.size()));
    }
    Correspondence c;
    c.p1 = Eigen::Vector2d(parse_double(tok[0], ctx), parse_double(tok[1], ctx));
    c.p2 = Eigen::Vector2d(parse_double(tok[2], ctx), parse_double(tok[3], ctx));
    c.side_info = parse_double(tok[4], ctx);
    if (labeled) {
      if (tok[5] != "0" && tok[5] != "1") {
        throw Error(ErrorCode::kParse, ctx + ": gt_inlier must be 0 or 1");
      }
      c.gt_inlier = tok[5] == "1";
    }
    out.push_back(c);
  }
  return out;
}

void write_matches(const std::string& path, const std::vector<Correspondence>& data) {
  const bool labeled = !data.empty() && std::all_of(data.begin(), data.end(), [](const Correspondence& c) {
    return c.gt_inlier.has_value();
  });
  std::ofstream out = open_out(path);
  out << "x1 y1 x2 y2 side_info" << (labeled ? " gt_inlier" : "") << '\n';
  for (const Correspondence& c : data) {
    out << format_double(c.p1.x()) << ' ' << format_double(c.p1.y()) << ' '
        << format_double(c.p2.x()) << ' ' << format_double(c.p2.y()) << ' '
        << format_double(c.side_info);
    if (labeled) out << ' ' << (*c.gt_inlier ? 1 : 0);
    out << '\n';
  }
  finish(out, path);
}

Calibration read_calibration(const std::string& path) {
  std::ifstream in = open_in(path);
  int lineno = 0;
  Calibration calib;
  expect_tag(in, path, &lineno, "K1");
  calib.k1 = intrinsics_from(read_matrix_rows(in, path, &lineno, 3), path);
  expect_tag(in, path, &lineno, "K2");
  calib.k2 = intrinsics_from(read_matrix_rows(in, path, &lineno, 3), path);
  return calib;
}

void write_calibration(const std::string& path, const Calibration& calib) {
  std::ofstream out = open_out(path);
  out << "K1\n";
  write_matrix(out, calib.k1.matrix());
  out << "K2\n";
  write_matrix(out, calib.k2.matrix());
  finish(out, path);
}

RelativePose read_pose(const std::string& path) {
  std::ifstream in = open_in(path);
  int lineno = 0;
  RelativePose pose;
  expect_tag(in, path, &lineno, "R");
  pose.rotation = read_matrix_rows(in, path, &lineno, 3);
  expect_tag(in, path, &lineno, "t");
  pose.translation = read_matrix_rows(in, path, &lineno, 1).row(0).transpose();
  const double tn = pose.translation.norm();
  if (!(tn > 0.0)) throw Error(ErrorCode::kParse, path + ": translation must be non-zero");
  // Unit vectors written by write_pose are kept bit-exact.
  if (std::abs(tn - 1.0) > 1e-12) pose.translation /= tn;
  return pose;
}

void write_pose(const std::string& path, const RelativePose& pose) {
  std::ofstream out = open_out(path);
  out << "R\n";
  write_matrix(out, pose.rotation);
  out << "t\n"
      << format_double(pose.translation.x()) << ' ' << format_double(pose.translation.y()) << ' '
      << format_double(pose.translation.z()) << '\n';
  finish(out, path);
}

std::vector<SyntheticPair> read_dataset(const std::string& dir) {
  const std::filesystem::path root(dir);
  const std::string manifest = (root / "manifest").string();
  std::ifstream in = open_in(manifest);
  std::string line;
  int lineno = 0;
  if (!next_line(in, &line, &lineno) || trim(line) != "carsac-dataset 1") {
    throw Error(ErrorCode::kParse, manifest + ": expected 'carsac-dataset 1'");
  }
  std::vector<SyntheticPair> pairs;
  while (next_line(in, &line, &lineno)) {
    const std::string name = trim(line);
    SyntheticPair pair;
    pair.correspondences = read_matches((root / (name + ".matches")).string());
    pair.calib = read_calibration((root / (name + ".calib")).string());
    pair.pose = read_pose((root / (name + ".pose")).string());
    int inliers = 0;
    for (const Correspondence& c : pair.correspondences) inliers += c.gt_inlier.value_or(false);
    pair.inlier_rate = pair.correspondences.empty()
                           ? 0.0
                           : static_cast<double>(inliers) / static_cast<double>(pair.correspondences.size());
    pairs.push_back(std::move(pair));
  }
  if (pairs.empty()) throw Error(ErrorCode::kParse, manifest + ": dataset lists no pairs");
  return pairs;
}

void write_dataset(const std::string& dir, const std::vector<SyntheticPair>& pairs) {
  const std::filesystem::path root(dir);
  std::error_code ec;
  std::filesystem::create_directories(root, ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot create " + dir + ": " + ec.message());
  const std::string manifest = (root / "manifest").string();
  std::ofstream out = open_out(manifest);
  out << "carsac-dataset 1\n";
  for (size_t i = 0; i < pairs.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "pair_%05zu", i);
    write_matches((root / (std::string(name) + ".matches")).string(), pairs[i].correspondences);
    write_calibration((root / (std::string(name) + ".calib")).string(), pairs[i].calib);
    write_pose((root / (std::string(name) + ".pose")).string(), pairs[i].pose);
    out << name << '\n';
  }
  finish(out, manifest);
}

void load_config_file(const std::string& path, TrainConfig* cfg) {
  std::ifstream in = open_in(path);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    const std::string ctx = where(path, lineno);
    if (eq == std::string::npos) throw Error(ErrorCode::kParse, ctx + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!apply_config_key(key, value, cfg, ctx)) {
      throw Error(ErrorCode::kParse, ctx + ": unknown key '" + key + "'");
    }
  }
}

bool apply_config_key(const std::string& key, const std::string& value, TrainConfig* cfg,
                      const std::string& context) {
  for (const auto& [name, set] : setters()) {
    if (name == key) {
      set(value, context + ": " + key, cfg);
      return true;
    }
  }
  return false;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& entry : setters()) keys.push_back(entry.first);
  return keys;
}

}  // namespace carsac::cli
