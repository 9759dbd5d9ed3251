#include "pixmatch/config.hpp"

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "pixmatch/errors.hpp"

namespace pixmatch {

namespace {

class TomlParser {
 public:
  TomlParser(const std::string& text, std::string source) : text_(text), source_(std::move(source)) {}

  TomlTable parse() {
    TomlTable table;
    std::string section;
    while (pos_ < text_.size()) {
      skip_ws();
      if (at_line_end()) {
        next_line();
        continue;
      }
      if (peek() == '[') {
        ++pos_;
        const auto start = pos_;
        while (pos_ < text_.size() && text_[pos_] != ']' && text_[pos_] != '\n') ++pos_;
        if (peek() != ']') fail("unterminated section header");
        section = trim(text_.substr(start, pos_ - start));
        if (section.empty()) fail("empty section name");
        ++pos_;
        expect_line_end();
        continue;
      }
      const auto key = parse_key();
      skip_ws();
      if (peek() != '=') fail("expected '=' after key '" + key + "'");
      ++pos_;
      skip_ws();
      auto value = parse_value();
      const auto full = section.empty() ? key : section + "." + key;
      if (!table.emplace(full, std::move(value)).second) fail("duplicate key '" + full + "'");
      expect_line_end();
    }
    return table;
  }

 private:
  char peek() const { return pos_ < text_.size() ? text_[pos_] : '\0'; }

  void skip_ws() {
    while (pos_ < text_.size() && (text_[pos_] == ' ' || text_[pos_] == '\t' || text_[pos_] == '\r')) ++pos_;
  }

  bool at_line_end() const { return pos_ >= text_.size() || text_[pos_] == '\n' || text_[pos_] == '#'; }

  void next_line() {
    while (pos_ < text_.size() && text_[pos_] != '\n') ++pos_;
    if (pos_ < text_.size()) {
      ++pos_;
      ++line_;
    }
  }

  void expect_line_end() {
    skip_ws();
    if (!at_line_end()) fail("unexpected trailing characters");
    next_line();
  }

  [[noreturn]] void fail(const std::string& msg) const {
    throw ConfigError(source_ + ":" + std::to_string(line_) + ": " + msg);
  }

  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t");
    const auto e = s.find_last_not_of(" \t");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  }

  std::string parse_key() {
    const auto start = pos_;
    while (pos_ < text_.size()) {
      const char c = text_[pos_];
      if (std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.') {
        ++pos_;
      } else {
        break;
      }
    }
    if (pos_ == start) fail("expected a key");
    return text_.substr(start, pos_ - start);
  }

  TomlValue parse_value() {
    const char c = peek();
    if (c == '"') return {parse_string()};
    if (c == '[') {
      ++pos_;
      TomlValue::Array items;
      while (true) {
        skip_array_ws();
        if (peek() == ']') {
          ++pos_;
          break;
        }
        items.push_back(parse_value());
        skip_array_ws();
        if (peek() == ',') {
          ++pos_;
        } else if (peek() != ']') {
          fail("expected ',' or ']' in array");
        }
      }
      return {std::move(items)};
    }
    if (text_.compare(pos_, 4, "true") == 0) {
      pos_ += 4;
      return {true};
    }
    if (text_.compare(pos_, 5, "false") == 0) {
      pos_ += 5;
      return {false};
    }
    return parse_number();
  }

  void skip_array_ws() {
    while (pos_ < text_.size()) {
      const char c = text_[pos_];
      if (c == ' ' || c == '\t' || c == '\r') {
        ++pos_;
      } else if (c == '\n') {
        ++pos_;
        ++line_;
      } else if (c == '#') {
        while (pos_ < text_.size() && text_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  std::string parse_string() {
    ++pos_;
    std::string out;
    while (pos_ < text_.size() && text_[pos_] != '"') {
      char c = text_[pos_++];
      if (c == '\n') fail("newline in string");
      if (c == '\\') {
        const char e = peek();
        ++pos_;
        switch (e) {
          case 'n': c = '\n'; break;
          case 't': c = '\t'; break;
          case '"': c = '"'; break;
          case '\\': c = '\\'; break;
          default: fail("unsupported escape sequence");
        }
      }
      out.push_back(c);
    }
    if (peek() != '"') fail("unterminated string");
    ++pos_;
    return out;
  }

  TomlValue parse_number() {
    const auto start = pos_;
    while (pos_ < text_.size()) {
      const char c = text_[pos_];
      if (std::isdigit(static_cast<unsigned char>(c)) || c == '+' || c == '-' || c == '.' || c == 'e' || c == 'E' ||
          c == '_') {
        ++pos_;
      } else {
        break;
      }
    }
    std::string token = text_.substr(start, pos_ - start);
    std::erase(token, '_');
    if (token.empty()) fail("expected a value");
    const bool is_float = token.find_first_of(".eE") != std::string::npos;
    const char* b = token.data() + (token[0] == '+' ? 1 : 0);
    const char* e = token.data() + token.size();
    if (is_float) {
      double v = 0.0;
      auto [p, ec] = std::from_chars(b, e, v);
      if (ec != std::errc() || p != e) fail("malformed number '" + token + "'");
      return {v};
    }
    std::int64_t v = 0;
    auto [p, ec] = std::from_chars(b, e, v);
    if (ec != std::errc() || p != e) fail("malformed integer '" + token + "'");
    return {v};
  }

  const std::string& text_;
  std::string source_;
  std::size_t pos_ = 0;
  std::size_t line_ = 1;
};

class TableReader {
 public:
  TableReader(const TomlTable& t, std::string source) : table_(t), source_(std::move(source)) {}

  void number(const std::string& key, double& out) {
    if (auto* v = find(key)) out = as_double(key, *v);
  }
  void size(const std::string& key, std::size_t& out) {
    if (auto* v = find(key)) out = as_size(key, *v);
  }
  void u64(const std::string& key, std::uint64_t& out) {
    if (auto* v = find(key)) out = as_size(key, *v);
  }
  void boolean(const std::string& key, bool& out) {
    if (auto* v = find(key)) {
      if (!std::holds_alternative<bool>(v->value)) fail(key, "expected a boolean");
      out = std::get<bool>(v->value);
    }
  }
  void string(const std::string& key, std::string& out) {
    if (auto* v = find(key)) out = as_string(key, *v);
  }
  void pair(const std::string& key, double& lo, double& hi) {
    if (auto* v = find(key)) {
      const auto* arr = std::get_if<TomlValue::Array>(&v->value);
      if (!arr || arr->size() != 2) fail(key, "expected a two-element array");
      lo = as_double(key, (*arr)[0]);
      hi = as_double(key, (*arr)[1]);
    }
  }
  bool sizes(const std::string& key, std::vector<std::size_t>& out) {
    if (auto* v = find(key)) {
      const auto* arr = std::get_if<TomlValue::Array>(&v->value);
      if (!arr) fail(key, "expected an array");
      out.clear();
      for (const auto& item : *arr) out.push_back(as_size(key, item));
      return true;
    }
    return false;
  }
  bool strings(const std::string& key, std::vector<std::string>& out) {
    if (auto* v = find(key)) {
      const auto* arr = std::get_if<TomlValue::Array>(&v->value);
      if (!arr) fail(key, "expected an array");
      out.clear();
      for (const auto& item : *arr) out.push_back(as_string(key, item));
      return true;
    }
    return false;
  }

  void reject_unknown() const {
    for (const auto& [key, v] : table_) {
      if (!used_.contains(key)) throw ConfigError(source_ + ": unknown key '" + key + "'");
    }
  }

 private:
  const TomlValue* find(const std::string& key) {
    auto it = table_.find(key);
    if (it == table_.end()) return nullptr;
    used_.insert(key);
    return &it->second;
  }
  [[noreturn]] void fail(const std::string& key, const std::string& msg) const {
    throw ConfigError(source_ + ": " + key + ": " + msg);
  }
  double as_double(const std::string& key, const TomlValue& v) const {
    if (auto* d = std::get_if<double>(&v.value)) return *d;
    if (auto* i = std::get_if<std::int64_t>(&v.value)) return static_cast<double>(*i);
    fail(key, "expected a number");
  }
  std::size_t as_size(const std::string& key, const TomlValue& v) const {
    auto* i = std::get_if<std::int64_t>(&v.value);
    if (!i || *i < 0) fail(key, "expected a non-negative integer");
    return static_cast<std::size_t>(*i);
  }
  std::string as_string(const std::string& key, const TomlValue& v) const {
    auto* s = std::get_if<std::string>(&v.value);
    if (!s) fail(key, "expected a string");
    return *s;
  }

  const TomlTable& table_;
  std::string source_;
  std::set<std::string> used_;
};

// Shortest representation that parses back to the same double.
std::string fmt(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  std::string s(buf, res.ptr);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

std::string quoted(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out.push_back('\\');
    out.push_back(c);
  }
  return out + "\"";
}

}  // namespace

TomlTable parse_toml(const std::string& text, const std::string& source_name) {
  return TomlParser(text, source_name).parse();
}

void TrainConfig::validate() const {
  if (source_manifest.empty()) throw ConfigError("data.source_manifest is required");
  if (target_manifest.empty() && (uses_target() || eval_manifest.empty())) {
    throw ConfigError("data.target_manifest is required");
  }
  model.validate();
  optim.validate();
  loss.validate();
  augment.validate();
  cutmix.validate();
  fourier.validate();
  for (auto k : perturbations) {
    if (k == PerturbKind::style) {
      throw ConfigError("style perturbation is not available: it requires an external pretrained style-transfer model");
    }
  }
  if (loss.lambda_t > 0.0 && perturbations.empty()) {
    throw ConfigError("loss.lambda_t > 0 requires at least one perturbation (use \"identity\" for plain self-training)");
  }
  if (augment.output_size % 4 != 0) throw ConfigError("perturb.augment.output_size must be divisible by 4");
  if (eval_every == 0 || log_every == 0) throw ConfigError("run.eval_every and run.log_every must be positive");
}

bool TrainConfig::uses_target() const { return loss.lambda_t > 0.0 || loss.lambda_msl > 0.0 || loss.lambda_ent > 0.0; }

std::vector<PerturbationFn> TrainConfig::perturbation_chain() const {
  std::vector<PerturbationFn> chain;
  for (auto k : perturbations) chain.push_back(make_perturbation(k, augment, cutmix, fourier));
  return chain;
}

TrainConfig parse_train_config(const std::string& text, const std::filesystem::path& base_dir,
                               const std::string& source_name) {
  const auto table = parse_toml(text, source_name);
  TableReader r(table, source_name);
  TrainConfig cfg;

  std::string path;
  r.string("data.source_manifest", path);
  if (!path.empty()) cfg.source_manifest = base_dir / path;
  path.clear();
  r.string("data.target_manifest", path);
  if (!path.empty()) cfg.target_manifest = base_dir / path;
  path.clear();
  r.string("data.eval_manifest", path);
  if (!path.empty()) cfg.eval_manifest = base_dir / path;

  r.size("model.num_classes", cfg.model.num_classes);
  r.sizes("model.widths", cfg.model.widths);
  r.boolean("model.zero_head", cfg.model.zero_head);

  r.number("optim.base_lr", cfg.optim.base_lr);
  r.number("optim.momentum", cfg.optim.momentum);
  r.number("optim.weight_decay", cfg.optim.weight_decay);
  r.number("optim.power", cfg.optim.power);
  r.size("optim.max_iter", cfg.optim.max_iter);

  r.number("loss.lambda_t", cfg.loss.lambda_t);
  r.number("loss.tau", cfg.loss.tau);
  r.number("loss.lambda_msl", cfg.loss.lambda_msl);
  r.number("loss.lambda_ent", cfg.loss.lambda_ent);
  r.boolean("loss.soft", cfg.loss.soft);

  std::vector<std::string> order;
  if (r.strings("perturb.order", order)) {
    cfg.perturbations.clear();
    for (const auto& name : order) cfg.perturbations.push_back(parse_perturb_kind(name));
  }
  auto& a = cfg.augment;
  r.pair("perturb.augment.crop_scale", a.crop_scale_min, a.crop_scale_max);
  r.pair("perturb.augment.crop_ratio", a.crop_ratio_min, a.crop_ratio_max);
  r.size("perturb.augment.output_size", a.output_size);
  r.number("perturb.augment.color_jitter_prob", a.color_jitter_prob);
  r.number("perturb.augment.brightness_limit", a.brightness_limit);
  r.number("perturb.augment.contrast_limit", a.contrast_limit);
  r.number("perturb.augment.hue_shift", a.hue_shift);
  r.number("perturb.augment.saturation_shift", a.saturation_shift);
  r.number("perturb.augment.value_shift", a.value_shift);
  r.number("perturb.augment.gray_prob", a.gray_prob);
  r.number("perturb.augment.blur_prob", a.blur_prob);
  r.size("perturb.augment.blur_limit", a.blur_limit);
  r.pair("perturb.augment.blur_sigma", a.blur_sigma_min, a.blur_sigma_max);
  r.pair("perturb.cutmix.ratio", cfg.cutmix.ratio_min, cfg.cutmix.ratio_max);
  r.number("perturb.fourier.beta", cfg.fourier.beta);

  r.u64("run.seed", cfg.seed);
  r.size("run.eval_every", cfg.eval_every);
  r.size("run.log_every", cfg.log_every);
  r.size("run.eval_max_images", cfg.eval_max_images);
  path.clear();
  r.string("run.out_dir", path);
  cfg.out_dir = base_dir / (path.empty() ? cfg.out_dir : std::filesystem::path(path));

  r.reject_unknown();
  cfg.model.init_seed = cfg.seed;
  cfg.validate();
  return cfg;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config: " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_train_config(ss.str(), path.parent_path(), path.string());
}

std::string to_toml(const TrainConfig& cfg) {
  std::ostringstream os;
  os << "[data]\n";
  os << "source_manifest = " << quoted(cfg.source_manifest.string()) << "\n";
  os << "target_manifest = " << quoted(cfg.target_manifest.string()) << "\n";
  os << "eval_manifest = " << quoted(cfg.eval_manifest.string()) << "\n\n";
  os << "[model]\n";
  os << "num_classes = " << cfg.model.num_classes << "\n";
  os << "widths = [";
  for (std::size_t i = 0; i < cfg.model.widths.size(); ++i) os << (i ? ", " : "") << cfg.model.widths[i];
  os << "]\n";
  os << "zero_head = " << (cfg.model.zero_head ? "true" : "false") << "\n\n";
  os << "[optim]\n";
  os << "base_lr = " << fmt(cfg.optim.base_lr) << "\n";
  os << "momentum = " << fmt(cfg.optim.momentum) << "\n";
  os << "weight_decay = " << fmt(cfg.optim.weight_decay) << "\n";
  os << "power = " << fmt(cfg.optim.power) << "\n";
  os << "max_iter = " << cfg.optim.max_iter << "\n\n";
  os << "[loss]\n";
  os << "lambda_t = " << fmt(cfg.loss.lambda_t) << "\n";
  os << "tau = " << fmt(cfg.loss.tau) << "\n";
  os << "lambda_msl = " << fmt(cfg.loss.lambda_msl) << "\n";
  os << "lambda_ent = " << fmt(cfg.loss.lambda_ent) << "\n";
  os << "soft = " << (cfg.loss.soft ? "true" : "false") << "\n\n";
  os << "[perturb]\n";
  os << "order = [";
  for (std::size_t i = 0; i < cfg.perturbations.size(); ++i) {
    os << (i ? ", " : "") << quoted(std::string(perturb_kind_name(cfg.perturbations[i])));
  }
  os << "]\n\n";
  const auto& a = cfg.augment;
  os << "[perturb.augment]\n";
  os << "crop_scale = [" << fmt(a.crop_scale_min) << ", " << fmt(a.crop_scale_max) << "]\n";
  os << "crop_ratio = [" << fmt(a.crop_ratio_min) << ", " << fmt(a.crop_ratio_max) << "]\n";
  os << "output_size = " << a.output_size << "\n";
  os << "color_jitter_prob = " << fmt(a.color_jitter_prob) << "\n";
  os << "brightness_limit = " << fmt(a.brightness_limit) << "\n";
  os << "contrast_limit = " << fmt(a.contrast_limit) << "\n";
  os << "hue_shift = " << fmt(a.hue_shift) << "\n";
  os << "saturation_shift = " << fmt(a.saturation_shift) << "\n";
  os << "value_shift = " << fmt(a.value_shift) << "\n";
  os << "gray_prob = " << fmt(a.gray_prob) << "\n";
  os << "blur_prob = " << fmt(a.blur_prob) << "\n";
  os << "blur_limit = " << a.blur_limit << "\n";
  os << "blur_sigma = [" << fmt(a.blur_sigma_min) << ", " << fmt(a.blur_sigma_max) << "]\n\n";
  os << "[perturb.cutmix]\n";
  os << "ratio = [" << fmt(cfg.cutmix.ratio_min) << ", " << fmt(cfg.cutmix.ratio_max) << "]\n\n";
  os << "[perturb.fourier]\n";
  os << "beta = " << fmt(cfg.fourier.beta) << "\n\n";
  os << "[run]\n";
  os << "seed = " << cfg.seed << "\n";
  os << "eval_every = " << cfg.eval_every << "\n";
  os << "log_every = " << cfg.log_every << "\n";
  os << "eval_max_images = " << cfg.eval_max_images << "\n";
  os << "out_dir = " << quoted(cfg.out_dir.string()) << "\n";
  return os.str();
}

}  // namespace pixmatch
