#include "seqcount/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace seqcount {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double parse_real(const std::string& key, const std::string& v) {
  size_t pos = 0;
  double r;
  try {
    r = std::stod(v, &pos);
  } catch (const std::exception&) {
    throw std::invalid_argument("config: bad numeric value '" + v + "' for key '" + key + "'");
  }
  if (pos != v.size())
    throw std::invalid_argument("config: bad numeric value '" + v + "' for key '" + key + "'");
  return r;
}

int parse_int(const std::string& key, const std::string& v) {
  const double r = parse_real(key, v);
  const int i = static_cast<int>(r);
  if (static_cast<double>(i) != r)
    throw std::invalid_argument("config: expected integer for key '" + key + "', got '" + v + "'");
  return i;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true") return true;
  if (v == "0" || v == "false") return false;
  throw std::invalid_argument("config: expected 0/1 for key '" + key + "', got '" + v + "'");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_int(key, trim(item)));
  if (out.empty()) throw std::invalid_argument("config: empty list for key '" + key + "'");
  return out;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  if (key == "seed") train.seed = static_cast<std::uint64_t>(parse_real(key, value));
  else if (key == "lr0") train.lr0 = parse_real(key, value);
  else if (key == "plateau_window") train.plateau_window = parse_int(key, value);
  else if (key == "lr_factor") train.lr_factor = parse_real(key, value);
  else if (key == "episodes_per_epoch") train.episodes_per_epoch = parse_int(key, value);
  else if (key == "epochs") train.epochs = parse_int(key, value);
  else if (key == "lambda1_0") train.lambda1_0 = parse_real(key, value);
  else if (key == "gamma") train.gamma = parse_real(key, value);
  else if (key == "lambda_floor") train.lambda_floor = parse_real(key, value);
  else if (key == "lambda2") train.lambda2 = parse_real(key, value);
  else if (key == "sigma") train.sigma = parse_real(key, value);
  else if (key == "adam_beta1") train.adam_beta1 = parse_real(key, value);
  else if (key == "adam_beta2") train.adam_beta2 = parse_real(key, value);
  else if (key == "adam_eps") train.adam_eps = parse_real(key, value);
  else if (key == "backbone_widths") model.backbone_widths = parse_int_list(key, value);
  else if (key == "attn_dim") model.attn_dim = parse_int(key, value);
  else if (key == "hidden_dim") model.hidden_dim = parse_int(key, value);
  else if (key == "input_dim") model.input_dim = parse_int(key, value);
  else if (key == "embed_dim") model.embed_dim = parse_int(key, value);
  else if (key == "max_ways") model.max_ways = parse_int(key, value);
  else if (key == "coord_channels") model.coord_channels = parse_bool(key, value);
  else if (key == "guide") model.guide = parse_bool(key, value);
  else if (key == "image_h") scene.height = parse_int(key, value);
  else if (key == "image_w") scene.width = parse_int(key, value);
  else if (key == "radius_min") scene.radius_min = parse_int(key, value);
  else if (key == "radius_max") scene.radius_max = parse_int(key, value);
  else if (key == "max_objects") scene.max_objects = parse_int(key, value);
  else if (key == "ways_min") scene.ways_min = parse_int(key, value);
  else if (key == "ways_max") scene.ways_max = parse_int(key, value);
  else if (key == "shots_min") scene.shots_min = parse_int(key, value);
  else if (key == "shots_max") scene.shots_max = parse_int(key, value);
  else if (key == "count_min") scene.count_min = parse_int(key, value);
  else if (key == "count_max") scene.count_max = parse_int(key, value);
  else throw std::invalid_argument("config: unknown key '" + key + "'");
}

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig cfg;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: line " + std::to_string(lineno) +
                                  " is not key=value: '" + line + "'");
    cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

void RunConfig::apply_env() {
  if (const char* s = std::getenv("SEQCOUNT_SEED")) {
    train.seed = static_cast<std::uint64_t>(std::strtoull(s, nullptr, 10));
  }
}

std::string RunConfig::to_text() const {
  std::ostringstream os;
  os.precision(17);
  os << "seed=" << train.seed << "\n";
  os << "lr0=" << train.lr0 << "\n";
  os << "plateau_window=" << train.plateau_window << "\n";
  os << "lr_factor=" << train.lr_factor << "\n";
  os << "episodes_per_epoch=" << train.episodes_per_epoch << "\n";
  os << "epochs=" << train.epochs << "\n";
  os << "lambda1_0=" << train.lambda1_0 << "\n";
  os << "gamma=" << train.gamma << "\n";
  os << "lambda_floor=" << train.lambda_floor << "\n";
  os << "lambda2=" << train.lambda2 << "\n";
  os << "sigma=" << train.sigma << "\n";
  os << "adam_beta1=" << train.adam_beta1 << "\n";
  os << "adam_beta2=" << train.adam_beta2 << "\n";
  os << "adam_eps=" << train.adam_eps << "\n";
  os << "backbone_widths=";
  for (size_t i = 0; i < model.backbone_widths.size(); ++i)
    os << (i ? "," : "") << model.backbone_widths[i];
  os << "\n";
  os << "attn_dim=" << model.attn_dim << "\n";
  os << "hidden_dim=" << model.hidden_dim << "\n";
  os << "input_dim=" << model.input_dim << "\n";
  os << "embed_dim=" << model.embed_dim << "\n";
  os << "max_ways=" << model.max_ways << "\n";
  os << "coord_channels=" << (model.coord_channels ? 1 : 0) << "\n";
  os << "guide=" << (model.guide ? 1 : 0) << "\n";
  os << "image_h=" << scene.height << "\n";
  os << "image_w=" << scene.width << "\n";
  os << "radius_min=" << scene.radius_min << "\n";
  os << "radius_max=" << scene.radius_max << "\n";
  os << "max_objects=" << scene.max_objects << "\n";
  os << "ways_min=" << scene.ways_min << "\n";
  os << "ways_max=" << scene.ways_max << "\n";
  os << "shots_min=" << scene.shots_min << "\n";
  os << "shots_max=" << scene.shots_max << "\n";
  os << "count_min=" << scene.count_min << "\n";
  os << "count_max=" << scene.count_max << "\n";
  return os.str();
}

}  // namespace seqcount
