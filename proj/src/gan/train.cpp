#include "magfield/gan/train.hpp"

#include <Eigen/Core>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "magfield/error.hpp"
#include "magfield/physics.hpp"

namespace magfield::gan {

static_assert(std::endian::native == std::endian::little,
              "checkpoints are little-endian and written with native byte order");

using namespace magfield::nn;
namespace pt = boost::property_tree;

// ------------------------------------------------------------ config

void TrainConfig::validate() const {
  const Lambdas& l = lambdas;
  for (double v : {l.wgan, l.gp, l.match, l.mimic, l.div, l.curl}) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw SpecError("train: lambdas must be finite and >= 0");
  }
  if (!(learning_rate > 0.0)) throw SpecError("train: learning_rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
    throw SpecError("train: Adam betas must lie in [0, 1)");
  }
  if (batch_size < 1) throw SpecError("train: batch_size must be >= 1");
  if (critic_iters < 0) throw SpecError("train: critic_iters must be >= 0");
  if (iterations < 0) throw SpecError("train: iterations must be >= 0");
  if (norm_scale < 0.0) throw SpecError("train: norm_scale must be >= 0");
  if (!(pair_radius > 0.0)) throw SpecError("train: pair_radius must be positive");
  if (validation_interval < 0 || validation_samples < 0) {
    throw SpecError("train: validation settings must be >= 0");
  }
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw SpecError("train: test_fraction must lie in (0, 1)");
  }
  if (generator.base_width < 1 || critic.base_width < 1 || critic.depth < 1) {
    throw SpecError("train: network widths must be positive");
  }
}

Lambdas TrainConfig::effective_lambdas() const {
  Lambdas l = lambdas;
  if (!physics_losses) l.div = l.curl = 0.0;
  return l;
}

namespace {

std::string exact(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

double parse_double(const std::string& s, const std::string& key) {
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw FormatError("config key " + key + ": not a number: '" + s + "'");
  }
  return v;
}

std::string join(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::vector<int> split_ints(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stoi(item));
  }
  return out;
}

TrainConfig from_tree(const pt::ptree& tree) {
  TrainConfig c;
  auto real = [](const pt::ptree& s, const std::string& key, double fallback) {
    const auto v = s.get_optional<std::string>(key);
    return v ? parse_double(*v, key) : fallback;
  };
  if (const auto task = tree.get_child_optional("task")) {
    const auto& s = *task;
    const auto kind = s.get<std::string>("kind", "inpaint");
    if (kind == "inpaint") {
      c.task.kind = TaskKind::inpaint;
    } else if (kind == "outpaint") {
      c.task.kind = TaskKind::outpaint;
      c.lambdas = Lambdas::outpaint();
    } else {
      throw FormatError("unknown task kind '" + kind + "'");
    }
    c.task.side_px = s.get("side_px", c.task.side_px);
    c.task.jitter_frac = real(s, "jitter_frac", c.task.jitter_frac);
    c.task.n_regions = s.get("n_regions", c.task.n_regions);
    c.task.region_side_px = s.get("region_side_px", c.task.region_side_px);
    c.task.s_pad = s.get("s_pad", c.task.s_pad);
    c.task.inpaint_pad = s.get("inpaint_pad", c.task.inpaint_pad);
  }
  if (const auto train = tree.get_child_optional("train")) {
    const auto& s = *train;
    c.lambdas.wgan = real(s, "lambda_wgan_gp", c.lambdas.wgan);
    c.lambdas.gp = real(s, "lambda_gp", c.lambdas.gp);
    c.lambdas.match = real(s, "lambda_match", c.lambdas.match);
    c.lambdas.mimic = real(s, "lambda_mimic", c.lambdas.mimic);
    c.lambdas.div = real(s, "lambda_div", c.lambdas.div);
    c.lambdas.curl = real(s, "lambda_curl", c.lambdas.curl);
    c.learning_rate = real(s, "learning_rate", c.learning_rate);
    c.beta1 = real(s, "beta1", c.beta1);
    c.beta2 = real(s, "beta2", c.beta2);
    c.adam_eps = real(s, "adam_eps", c.adam_eps);
    c.batch_size = s.get("batch_size", c.batch_size);
    c.critic_iters = s.get("critic_iters", c.critic_iters);
    c.iterations = s.get("iterations", c.iterations);
    c.norm_scale = real(s, "norm_scale", c.norm_scale);
    c.seed = s.get("seed", c.seed);
    c.physics_losses = s.get("physics_losses", c.physics_losses);
    const auto mode = s.get<std::string>("gp_mode", "double_backward");
    if (mode == "double_backward") {
      c.gp_mode = GpMode::double_backward;
    } else if (mode == "pair_difference") {
      c.gp_mode = GpMode::pair_difference;
    } else {
      throw FormatError("unknown gp_mode '" + mode + "'");
    }
    c.pair_radius = real(s, "pair_radius", c.pair_radius);
    c.generator.base_width = s.get("generator_width", c.generator.base_width);
    c.generator.downsample = s.get("generator_downsample", c.generator.downsample);
    if (const auto d = s.get_optional<std::string>("generator_dilations")) {
      c.generator.dilations = split_ints(*d);
    }
    c.generator.attention.temperature =
        real(s, "attention_temperature", c.generator.attention.temperature);
    c.critic.base_width = s.get("critic_width", c.critic.base_width);
    c.critic.depth = s.get("critic_depth", c.critic.depth);
    c.validation_interval = s.get("validation_interval", c.validation_interval);
    c.validation_samples = s.get("validation_samples", c.validation_samples);
    c.test_fraction = real(s, "test_fraction", c.test_fraction);
    const auto prec = s.get<std::string>("precision", "single");
    if (prec == "single") {
      c.precision = Precision::single;
    } else if (prec == "double") {
      c.precision = Precision::double_;
    } else {
      throw FormatError("unknown precision '" + prec + "'");
    }
    c.deterministic = s.get("deterministic", c.deterministic);
  }
  c.validate();
  return c;
}

}  // namespace

TrainConfig parse_train_config(const std::string& ini_text) {
  pt::ptree tree;
  std::istringstream in(ini_text);
  try {
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw FormatError(std::string("train config: ") + e.what());
  }
  return from_tree(tree);
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_train_config(text);
}

std::string to_ini(const TrainConfig& c) {
  std::ostringstream os;
  const Lambdas& l = c.lambdas;
  os << "[task]\n"
     << "kind=" << (c.task.kind == TaskKind::inpaint ? "inpaint" : "outpaint") << '\n'
     << "side_px=" << c.task.side_px << '\n'
     << "jitter_frac=" << exact(c.task.jitter_frac) << '\n'
     << "n_regions=" << c.task.n_regions << '\n'
     << "region_side_px=" << c.task.region_side_px << '\n'
     << "s_pad=" << c.task.s_pad << '\n'
     << "inpaint_pad=" << c.task.inpaint_pad << '\n'
     << "\n[train]\n"
     << "lambda_wgan_gp=" << exact(l.wgan) << '\n'
     << "lambda_gp=" << exact(l.gp) << '\n'
     << "lambda_match=" << exact(l.match) << '\n'
     << "lambda_mimic=" << exact(l.mimic) << '\n'
     << "lambda_div=" << exact(l.div) << '\n'
     << "lambda_curl=" << exact(l.curl) << '\n'
     << "learning_rate=" << exact(c.learning_rate) << '\n'
     << "beta1=" << exact(c.beta1) << '\n'
     << "beta2=" << exact(c.beta2) << '\n'
     << "adam_eps=" << exact(c.adam_eps) << '\n'
     << "batch_size=" << c.batch_size << '\n'
     << "critic_iters=" << c.critic_iters << '\n'
     << "iterations=" << c.iterations << '\n'
     << "norm_scale=" << exact(c.norm_scale) << '\n'
     << "seed=" << c.seed << '\n'
     << "physics_losses=" << (c.physics_losses ? "true" : "false") << '\n'
     << "gp_mode=" << (c.gp_mode == GpMode::double_backward ? "double_backward" : "pair_difference")
     << '\n'
     << "pair_radius=" << exact(c.pair_radius) << '\n'
     << "generator_width=" << c.generator.base_width << '\n'
     << "generator_downsample=" << c.generator.downsample << '\n'
     << "generator_dilations=" << join(c.generator.dilations) << '\n'
     << "attention_temperature=" << exact(c.generator.attention.temperature) << '\n'
     << "critic_width=" << c.critic.base_width << '\n'
     << "critic_depth=" << c.critic.depth << '\n'
     << "validation_interval=" << c.validation_interval << '\n'
     << "validation_samples=" << c.validation_samples << '\n'
     << "test_fraction=" << exact(c.test_fraction) << '\n'
     << "precision=" << (c.precision == Precision::single ? "single" : "double") << '\n'
     << "deterministic=" << (c.deterministic ? "true" : "false") << '\n';
  return os.str();
}

// ------------------------------------------------------------ traces

std::string trace_header() {
  return "iteration\tL_WGAN_GP\tL_GP\tL_match\tL_mimic\tL_div\tL_curl\tval_MAE\t"
         "L_adv\tL_total\tval_L_div\tval_L_curl";
}

namespace {

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

double parse_num(const std::string& s) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  return parse_double(s, "trace");
}

TraceRow parse_trace_line(const std::string& line) {
  std::vector<std::string> f;
  std::stringstream ss(line);
  std::string item;
  while (std::getline(ss, item, '\t')) f.push_back(item);
  if (f.size() != 12) throw FormatError("trace line with " + std::to_string(f.size()) + " fields");
  TraceRow r;
  r.iteration = std::stoull(f[0]);
  r.wgan_gp = parse_num(f[1]);
  r.gp = parse_num(f[2]);
  r.generator.match = parse_num(f[3]);
  r.generator.mimic = parse_num(f[4]);
  r.generator.div = parse_num(f[5]);
  r.generator.curl = parse_num(f[6]);
  r.val_mae = parse_num(f[7]);
  r.generator.adversarial = parse_num(f[8]);
  r.generator.total = parse_num(f[9]);
  r.val_l_div = parse_num(f[10]);
  r.val_l_curl = parse_num(f[11]);
  return r;
}

}  // namespace

std::string trace_line(const TraceRow& r) {
  const LossTerms& g = r.generator;
  return std::to_string(r.iteration) + '\t' + num(r.wgan_gp) + '\t' + num(r.gp) + '\t' +
         num(g.match) + '\t' + num(g.mimic) + '\t' + num(g.div) + '\t' + num(g.curl) + '\t' +
         num(r.val_mae) + '\t' + num(g.adversarial) + '\t' + num(g.total) + '\t' +
         num(r.val_l_div) + '\t' + num(r.val_l_curl);
}

void write_trace(const std::vector<TraceRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write trace " + path.string());
  out << trace_header() << '\n';
  for (const auto& r : rows) out << trace_line(r) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

// ------------------------------------------------------------ checkpoints

namespace {

constexpr char kMagic[4] = {'M', 'F', 'C', 'K'};

struct Writer {
  std::string buf;
  template <class T>
  void put(const T& v) {
    char tmp[sizeof(T)];
    std::memcpy(tmp, &v, sizeof(T));
    buf.append(tmp, sizeof(T));
  }
  void str(const std::string& s) {
    put<std::uint64_t>(s.size());
    buf += s;
  }
  void tensor(const Tensor<double>& t) {
    for (int d = 0; d < 4; ++d) put<std::int32_t>(t.shape.dim(d));
    buf.append(reinterpret_cast<const char*>(t.data.data()), t.data.size() * sizeof(double));
  }
  void params(const std::vector<Parameter>& ps) {
    put<std::uint64_t>(ps.size());
    for (const auto& p : ps) {
      str(p.name);
      tensor(p.value);
    }
  }
  void adam(const AdamState& a) {
    put<std::uint64_t>(a.step);
    put<std::uint64_t>(a.m.size());
    for (std::size_t i = 0; i < a.m.size(); ++i) {
      tensor(a.m[i]);
      tensor(a.v[i]);
    }
  }
};

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;
  std::string where;

  void need(std::size_t n) {
    if (buf.size() - pos < n) throw TruncatedFileError(where + ": truncated checkpoint");
  }
  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, buf.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
  }
  std::string str() {
    const auto n = get<std::uint64_t>();
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
  Tensor<double> tensor() {
    Shape s;
    s.n = get<std::int32_t>();
    s.c = get<std::int32_t>();
    s.h = get<std::int32_t>();
    s.w = get<std::int32_t>();
    if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0) throw FormatError(where + ": bad tensor shape");
    Tensor<double> t(s);
    need(t.data.size() * sizeof(double));
    std::memcpy(t.data.data(), buf.data() + pos, t.data.size() * sizeof(double));
    pos += t.data.size() * sizeof(double);
    return t;
  }
  std::vector<Parameter> params() {
    const auto n = get<std::uint64_t>();
    std::vector<Parameter> ps;
    for (std::uint64_t i = 0; i < n; ++i) {
      Parameter p;
      p.name = str();
      p.value = tensor();
      ps.push_back(std::move(p));
    }
    return ps;
  }
  AdamState adam() {
    AdamState a;
    a.step = get<std::uint64_t>();
    const auto n = get<std::uint64_t>();
    for (std::uint64_t i = 0; i < n; ++i) {
      a.m.push_back(tensor());
      a.v.push_back(tensor());
    }
    return a;
  }
};

void assign(std::vector<Parameter>& into, std::vector<Parameter> from, const std::string& what) {
  if (into.size() != from.size()) throw FormatError(what + ": parameter count mismatch");
  for (std::size_t i = 0; i < into.size(); ++i) {
    if (into[i].name != from[i].name || !(into[i].value.shape == from[i].value.shape)) {
      throw FormatError(what + ": parameter " + from[i].name + " does not match the architecture");
    }
    into[i].value = std::move(from[i].value);
  }
}

AdamState zero_adam(const std::vector<Parameter>& ps) {
  AdamState a;
  for (const auto& p : ps) {
    a.m.emplace_back(p.value.shape);
    a.v.emplace_back(p.value.shape);
  }
  return a;
}

}  // namespace

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  Writer w;
  w.buf.append(kMagic, 4);
  w.put(kCheckpointVersion);
  w.str(to_ini(c.config));
  w.put(c.norm_scale);
  w.put(c.iteration);
  w.str(c.rng_state);
  w.params(c.generator.params);
  w.params(c.critic.params);
  w.adam(c.generator_opt);
  w.adam(c.critic_opt);
  w.params(c.best_generator);
  w.put(c.best_val_mae);
  std::string trace;
  for (const auto& r : c.trace) trace += trace_line(r) + '\n';
  w.str(trace);
  const Digest d = sha256(w.buf);
  w.buf.append(reinterpret_cast<const char*>(d.data()), d.size());

  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    out.write(w.buf.data(), static_cast<std::streamsize>(w.buf.size()));
    if (!out) throw IoError("write failed: " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  const std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string where = path.string();
  if (buf.size() < 8 + 32) throw TruncatedFileError(where + ": truncated checkpoint");
  if (std::memcmp(buf.data(), kMagic, 4) != 0) throw FormatError(where + ": not a checkpoint");
  Digest stored;
  std::memcpy(stored.data(), buf.data() + buf.size() - 32, 32);
  const std::string body = buf.substr(0, buf.size() - 32);

  Reader r{body, 4, where};
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw VersionMismatchError(where + ": checkpoint version " + std::to_string(version) +
                               ", expected " + std::to_string(kCheckpointVersion));
  }
  if (sha256(body) != stored) throw DigestMismatchError(where + ": checkpoint digest mismatch");

  Checkpoint c;
  c.config = parse_train_config(r.str());
  c.norm_scale = r.get<double>();
  c.iteration = r.get<std::uint64_t>();
  c.rng_state = r.str();
  Rng dummy;
  c.generator = init_generator(c.config.generator, dummy);
  c.critic = init_critic(c.config.critic, dummy);
  assign(c.generator.params, r.params(), where);
  assign(c.critic.params, r.params(), where);
  c.generator_opt = r.adam();
  c.critic_opt = r.adam();
  c.best_generator = r.params();
  c.best_val_mae = r.get<double>();
  std::stringstream trace(r.str());
  std::string line;
  while (std::getline(trace, line)) {
    if (!line.empty()) c.trace.push_back(parse_trace_line(line));
  }
  if (r.pos != body.size()) throw FormatError(where + ": trailing bytes in checkpoint");
  return c;
}

Checkpoint init_checkpoint(const TrainConfig& config, double norm_scale) {
  config.validate();
  if (!(norm_scale > 0.0)) throw SpecError("init_checkpoint: norm_scale must be positive");
  Checkpoint c;
  c.config = config;
  c.norm_scale = norm_scale;
  Rng rng = stream_rng(config.seed, 0x9a11);
  c.generator = init_generator(config.generator, rng);
  c.critic = init_critic(config.critic, rng);
  c.generator_opt = zero_adam(c.generator.params);
  c.critic_opt = zero_adam(c.critic.params);
  std::ostringstream os;
  os << stream_rng(config.seed, 0x7ea1);
  c.rng_state = os.str();
  return c;
}

std::size_t train_split_end(std::size_t n, double test_fraction) {
  const auto test = static_cast<std::size_t>(std::ceil(test_fraction * static_cast<double>(n)));
  return n > test ? n - test : 0;
}

double estimate_norm_scale(const DatasetReader& data, std::size_t train_end) {
  const std::size_t count = std::min<std::size_t>(train_end, 64);
  if (count == 0) throw ContractError("estimate_norm_scale: empty training split");
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < count; ++i) {
    const FieldPlane p = data.read(i).field.plane(static_cast<int>(magfield::Layer::measurement));
    for (double v : p.values()) s += v * v;
    n += p.values().size();
  }
  const double rms = std::sqrt(s / static_cast<double>(n));
  return rms > 0.0 ? rms : 1.0;
}

// ------------------------------------------------------------ trainer

namespace {

template <class T>
LossBatch<T> prepare(const Batch& b, double scale) {
  const int n = static_cast<int>(b.samples.size());
  const FieldGrid& g0 = b.samples.front().field;
  const Shape s{n, kComponents, g0.height(), g0.width()};
  Tensor<T> truth(s), input(s), z(s);
  const double inv = 1.0 / scale;
  for (int i = 0; i < n; ++i) {
    const FieldGrid& g = b.samples[i].field;
    if (g.height() != s.h || g.width() != s.w) throw DimensionError("batch: mixed plane sizes");
    const bool flanking = b.samples[i].has_flanking_layers;
    const double zf = g.dx() / (2.0 * g.dz()) * inv;
    for (int c = 0; c < kComponents; ++c) {
      for (int r = 0; r < s.h; ++r) {
        for (int col = 0; col < s.w; ++col) {
          const double v = g.at(1, c, r, col) * inv;
          truth.at(i, c, r, col) = static_cast<T>(v);
          input.at(i, c, r, col) = b.mask.missing(r, col) ? T(0) : static_cast<T>(v);
          z.at(i, c, r, col) =
              flanking ? static_cast<T>((g.at(2, c, r, col) - g.at(0, c, r, col)) * zf) : T(0);
        }
      }
    }
  }
  LossBatch<T> lb;
  lb.truth = constant(std::move(truth));
  lb.input = constant(std::move(input));
  lb.zterms = constant(std::move(z));
  lb.mask = b.mask;
  lb.dx_over_dy = g0.dx() / g0.dy();
  lb.scale = scale;
  return lb;
}

template <class T>
void adam_step(std::vector<Parameter>& params, const std::vector<Var<T>>& grads, AdamState& st,
               const TrainConfig& c) {
  ++st.step;
  const double b1 = c.beta1, b2 = c.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i].value.data;
    const auto& g = grads[i].value().data;
    auto& m = st.m[i].data;
    auto& v = st.v[i].data;
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double gk = g[k];
      m[k] = b1 * m[k] + (1.0 - b1) * gk;
      v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
      p[k] -= c.learning_rate * (m[k] / c1) / (std::sqrt(v[k] / c2) + c.adam_eps);
    }
  }
}

bool all_finite(const std::vector<double>& values) {
  for (double v : values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::string describe(const Batch& b) {
  std::ostringstream os;
  os << "batch indices:";
  for (auto i : b.indices) os << ' ' << i;
  os << "\nmissing pixels: " << b.mask.missing_count() << " of " << b.mask.pixels() << '\n';
  for (const auto& r : b.patches) {
    os << "patch " << r.row0 << ',' << r.col0 << ' ' << r.height << 'x' << r.width << '\n';
  }
  return os.str();
}

template <class T>
CriticStep critic_step_impl(Checkpoint& st, const Batch& b, Rng& rng) {
  const TrainConfig& cfg = st.config;
  const LossBatch<T> lb = prepare<T>(b, st.norm_scale);
  Var<T> fake;
  {
    GradMode off(false);
    const auto gv = bind_params<T>(st.generator.params, false);
    fake = compose(lb.input, generate<T>(st.generator, gv, lb.input, b.mask).fine, b.mask);
  }
  const auto cv = bind_params<T>(st.critic.params, true);
  const CriticFn<T> critic = [&](const Var<T>& x) {
    return critic_scores<T>(st.critic, cv, x, b.patches).combined;
  };
  const Var<T> sr = critic(lb.truth);
  const Var<T> sf = critic(fake);
  const Var<T> gp = gradient_penalty<T>(critic, lb.truth, fake, rng, cfg.gp_mode, cfg.pair_radius);
  const Var<T> loss = critic_loss(sr, sf, gp, cfg.lambdas.gp);

  CriticStep out;
  out.loss = loss.value().data[0];
  out.gp = gp.value().data[0];
  out.wasserstein = mean(sr).value().data[0] - mean(sf).value().data[0];
  if (!all_finite({out.loss, out.gp})) {
    throw NumericalError("non-finite critic loss\n" + describe(b));
  }
  adam_step(st.critic.params, grad(loss, cv), st.critic_opt, cfg);
  return out;
}

template <class T>
LossTerms generator_step_impl(Checkpoint& st, const Batch& b) {
  const TrainConfig& cfg = st.config;
  const LossBatch<T> lb = prepare<T>(b, st.norm_scale);
  const auto gv = bind_params<T>(st.generator.params, true);
  const auto cv = bind_params<T>(st.critic.params, false);
  const GeneratorOutput<T> out = generate<T>(st.generator, gv, lb.input, b.mask);
  const Var<T> composed = compose(lb.input, out.fine, b.mask);
  const Var<T> scores = critic_scores<T>(st.critic, cv, composed, b.patches).combined;
  const GeneratorLoss<T> gl =
      generator_loss(out.fine, scores, lb, cfg.effective_lambdas(), cfg.physics_losses);
  const LossTerms& t = gl.terms;
  if (!all_finite({t.adversarial, t.match, t.mimic, t.div, t.curl, t.total})) {
    throw NumericalError("non-finite generator loss\n" + describe(b));
  }
  adam_step(st.generator.params, grad(gl.total, gv), st.generator_opt, cfg);
  return t;
}

template <class T>
FieldPlane predict_with(const GeneratorParams& g, double scale, const FieldPlane& input,
                        const Mask& mask) {
  if (!mask.matches(input)) throw DimensionError("predict: mask does not match the input plane");
  GradMode off(false);
  const auto pv = bind_params<T>(g.params, false);
  const FieldPlane given = hadamard(normalize(input, scale), mask, Keep::given);
  const auto out = generate<T>(g, pv, constant(plane_tensor<T>(given)), mask);
  return compose_result(input, denormalize(tensor_plane(out.fine.value()), scale), mask);
}

FieldPlane predict_params(const GeneratorParams& g, Precision p, double scale,
                          const FieldPlane& input, const Mask& mask) {
  return p == Precision::single ? predict_with<float>(g, scale, input, mask)
                                : predict_with<double>(g, scale, input, mask);
}

Rng parse_rng(const std::string& state) {
  Rng rng;
  std::istringstream is(state);
  is >> rng;
  if (!is) throw FormatError("checkpoint: bad RNG state");
  return rng;
}

std::string rng_text(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

}  // namespace

Trainer::Trainer(const DatasetReader& data, Checkpoint state)
    : data_(data), state_(std::move(state)), rng_(parse_rng(state_.rng_state)) {
  const TrainConfig& c = state_.config;
  c.validate();
  if (c.deterministic) Eigen::setNbThreads(1);
  train_end_ = train_split_end(data_.size(), c.test_fraction);
  if (train_end_ == 0) throw ContractError("train: dataset too small for a training split");
  const int h = static_cast<int>(data_.header().height);
  const int w = static_cast<int>(data_.header().width);
  c.task.validate(h, w);
  const std::size_t n_val =
      std::min<std::size_t>(static_cast<std::size_t>(c.validation_samples), data_.size() - train_end_);
  for (std::size_t i = 0; i < n_val; ++i) {
    val_samples_.push_back(data_.read(train_end_ + i));
    Rng mrng = stream_rng(c.seed ^ 0x5a17da7eULL, i);
    val_masks_.push_back(make_mask(mrng, c.task, h, w));
  }
}

const Checkpoint& Trainer::state() const { return state_; }
Checkpoint& Trainer::state() { return state_; }

Batch Trainer::draw_batch() {
  const TrainConfig& c = state_.config;
  Batch b;
  for (int i = 0; i < c.batch_size; ++i) {
    b.indices.push_back(static_cast<std::size_t>(uniform_index(rng_, train_end_)));
  }
  for (auto i : b.indices) b.samples.push_back(data_.read(i));
  const FieldGrid& g = b.samples.front().field;
  b.mask = make_mask(rng_, c.task, g.height(), g.width());
  b.patches = local_patches(b.mask, c.task);
  return b;
}

CriticStep Trainer::critic_step(const Batch& batch) {
  return state_.config.precision == Precision::single
             ? critic_step_impl<float>(state_, batch, rng_)
             : critic_step_impl<double>(state_, batch, rng_);
}

LossTerms Trainer::generator_step(const Batch& batch) {
  return state_.config.precision == Precision::single ? generator_step_impl<float>(state_, batch)
                                                      : generator_step_impl<double>(state_, batch);
}

TraceRow Trainer::validate() {
  TraceRow row;
  if (val_samples_.empty()) return row;
  double mae_sum = 0.0, div_sum = 0.0, curl_sum = 0.0;
  for (std::size_t i = 0; i < val_samples_.size(); ++i) {
    const Sample& s = val_samples_[i];
    const FieldPlane input = make_input(s.field.plane(1), val_masks_[i]);
    const FieldPlane pred = predict_params(state_.generator, state_.config.precision,
                                           state_.norm_scale, input, val_masks_[i]);
    const MetricReport m = evaluate(pred, s, val_masks_[i]);
    mae_sum += m.mae;
    div_sum += m.l_div;
    curl_sum += m.l_curl;
  }
  const double n = static_cast<double>(val_samples_.size());
  row.val_mae = mae_sum / n;
  row.val_l_div = div_sum / n;
  row.val_l_curl = curl_sum / n;
  if (row.val_mae < state_.best_val_mae) {
    state_.best_val_mae = row.val_mae;
    state_.best_generator = state_.generator.params;
  }
  return row;
}

TraceRow Trainer::iterate(bool with_validation) {
  CriticStep cs;
  for (int t = 0; t < state_.config.critic_iters; ++t) cs = critic_step(draw_batch());
  const LossTerms terms = generator_step(draw_batch());
  ++state_.iteration;
  TraceRow row = with_validation ? validate() : TraceRow{};
  row.iteration = state_.iteration;
  row.wgan_gp = cs.loss;
  row.gp = cs.gp;
  row.generator = terms;
  state_.trace.push_back(row);
  state_.rng_state = rng_text(rng_);
  return row;
}

void Trainer::run(const TrainHooks& hooks) {
  const TrainConfig& c = state_.config;
  while (state_.iteration < static_cast<std::uint64_t>(c.iterations)) {
    const bool val = c.validation_interval > 0 &&
                     (state_.iteration + 1) % static_cast<std::uint64_t>(c.validation_interval) == 0;
    TraceRow row;
    try {
      row = iterate(val);
    } catch (const NumericalError& e) {
      if (hooks.diagnostic_path) {
        std::ofstream out(*hooks.diagnostic_path);
        out << "iteration " << state_.iteration + 1 << '\n' << e.what() << '\n';
      }
      throw;
    }
    if (hooks.on_row) hooks.on_row(row);
    if (hooks.checkpoint_path && hooks.checkpoint_interval > 0 &&
        state_.iteration % static_cast<std::uint64_t>(hooks.checkpoint_interval) == 0) {
      save_checkpoint(state_, *hooks.checkpoint_path);
    }
  }
  if (hooks.checkpoint_path) save_checkpoint(state_, *hooks.checkpoint_path);
}

Checkpoint train(const TrainConfig& config, const DatasetReader& data,
                 std::optional<Checkpoint> resume, const TrainHooks& hooks) {
  config.validate();
  Checkpoint state;
  if (resume) {
    TrainConfig a = resume->config;
    TrainConfig b = config;
    a.iterations = b.iterations = 0;
    if (to_ini(a) != to_ini(b)) throw SpecError("resume: configuration differs from the checkpoint");
    if (resume->iteration > static_cast<std::uint64_t>(config.iterations)) {
      throw SpecError("resume: checkpoint is already past the iteration target");
    }
    state = std::move(*resume);
    state.config.iterations = config.iterations;
  } else {
    const double scale = config.norm_scale > 0.0
                             ? config.norm_scale
                             : estimate_norm_scale(data, train_split_end(data.size(), config.test_fraction));
    state = init_checkpoint(config, scale);
  }
  Trainer t(data, std::move(state));
  t.run(hooks);
  return std::move(t.state());
}

FieldPlane predict(const Checkpoint& c, const FieldPlane& input, const Mask& mask) {
  GeneratorParams g = c.generator;
  if (!c.best_generator.empty()) g.params = c.best_generator;
  return predict_params(g, c.config.precision, c.norm_scale, input, mask);
}

}  // namespace magfield::gan
