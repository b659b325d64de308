#include "rego/generator.hpp"

#include "rego/errors.hpp"

namespace rego {

using nlohmann::json;

namespace {

bool is_power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

}  // namespace

void GeneratorConfig::validate() const {
  if (!is_power_of_two(height) || !is_power_of_two(width) || height < 8 || width < 16) {
    throw ConfigError("generator resolution must be powers of two with height >= 8 and width >= 16, got " +
                      std::to_string(height) + "x" + std::to_string(width));
  }
  if (decoder_layers < 2) throw ConfigError("generator.decoder_layers must be >= 2");
  if (base_channels < 1) throw ConfigError("generator.base_channels must be >= 1");
  const int scale = 1 << (decoder_layers - 1);
  if (height / scale < 1 || half_width() / scale < 1) {
    throw ConfigError("too many decoder layers for resolution " + std::to_string(height) + "x" +
                      std::to_string(width));
  }
  if (!acs_enabled.empty()) {
    if (static_cast<int>(acs_enabled.size()) != decoder_layers) {
      throw ConfigError("generator.acs_enabled needs one flag per decoder layer");
    }
    if (acs_enabled.back()) throw ConfigError("ACS cannot follow the last (RGB) decoder layer");
  }
  if (!(sketch_threshold > 0.0 && sketch_threshold < 1.0)) throw ConfigError("sketch threshold must lie in (0,1)");
}

bool GeneratorConfig::acs_at(int layer) const {
  if (layer < 0 || layer >= decoder_layers) return false;
  if (acs_enabled.empty()) return layer < decoder_layers - 1;
  return acs_enabled[static_cast<std::size_t>(layer)];
}

int GeneratorConfig::acs_count() const {
  int n = 0;
  for (int l = 0; l < decoder_layers; ++l) n += acs_at(l) ? 1 : 0;
  return n;
}

int GeneratorConfig::layer_channels(int layer) const { return base_channels << (decoder_layers - 2 - layer); }
int GeneratorConfig::layer_height(int layer) const { return height >> (decoder_layers - 1 - layer); }
int GeneratorConfig::layer_half_width(int layer) const { return half_width() >> (decoder_layers - 1 - layer); }

json GeneratorConfig::to_json() const {
  json flags = json::array();
  for (int l = 0; l < decoder_layers; ++l) flags.push_back(acs_at(l));
  return {{"height", height},
          {"width", width},
          {"base_channels", base_channels},
          {"decoder_layers", decoder_layers},
          {"acs_enabled", flags},
          {"seed", seed},
          {"sketch_threshold", sketch_threshold}};
}

GeneratorConfig GeneratorConfig::from_json(const json& j) {
  GeneratorConfig c;
  c.height = j.at("height").get<int>();
  c.width = j.at("width").get<int>();
  c.base_channels = j.at("base_channels").get<int>();
  c.decoder_layers = j.at("decoder_layers").get<int>();
  c.acs_enabled = j.at("acs_enabled").get<std::vector<bool>>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.sketch_threshold = j.value("sketch_threshold", kDefaultSketchThreshold);
  c.validate();
  return c;
}

Generator::Encoder Generator::make_encoder(ParamStore& store, const std::string& prefix, int in_channels,
                                           Rng& rng) const {
  Encoder enc;
  const int c = cfg_.base_channels;
  enc.stem = Conv2d(store, prefix + ".stem", ConvSpec{3, 3, in_channels, c, 1, true}, rng);
  int ch = c;
  for (int s = 1; s < cfg_.decoder_layers; ++s) {
    const int out = c << (s - 1);
    enc.down.emplace_back(store, prefix + ".down" + std::to_string(s), ConvSpec{3, 3, ch, out, 2, true}, rng);
    ch = out;
  }
  return enc;
}

Generator::Generator(const GeneratorConfig& cfg, ParamStore& store, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  const int L = cfg_.decoder_layers;
  encoder_ = make_encoder(store, "encoder", 4, rng);
  const int bottleneck = cfg_.layer_channels(0);
  expand_ = Conv2d(store, "expand", ConvSpec{1, 1, bottleneck, bottleneck, 1, true}, rng);
  if (cfg_.acs_count() > 0) {
    ref_encoder_ = make_encoder(store, "ref_encoder", 3, rng);
    sketch_encoder_ = make_encoder(store, "sketch_encoder", 1, rng);
  }
  acs_.resize(static_cast<std::size_t>(L));
  for (int l = 0; l < L; ++l) {
    const int in = l == 0 ? bottleneck : cfg_.layer_channels(l - 1);
    const int out = l + 1 < L ? cfg_.layer_channels(l) : 3;
    decoder_.emplace_back(store, "decoder." + std::to_string(l) + ".conv", ConvSpec{3, 3, in, out, 1, true}, rng);
    if (cfg_.acs_at(l)) {
      const int ch = cfg_.layer_channels(l);
      acs_[static_cast<std::size_t>(l)].emplace(
          store, "acs." + std::to_string(l),
          AcsShape{cfg_.layer_height(l), cfg_.layer_half_width(l), ch, ch}, rng);
    }
  }
}

void Generator::check_input(const Var& x, int channels, const char* what) const {
  const Tensor& t = x.value();
  if (t.rank() != 3 || t.height() != cfg_.height || t.width() != cfg_.half_width() || t.channels() != channels) {
    throw ShapeError(std::string(what) + ": expected " + std::to_string(cfg_.height) + "x" +
                     std::to_string(cfg_.half_width()) + "x" + std::to_string(channels) + ", got " +
                     t.shape_string());
  }
}

std::vector<Var> Generator::run_encoder(const Encoder& enc, const Var& x) const {
  std::vector<Var> steps;
  Var h = ops::relu(enc.stem(x));
  for (const auto& conv : enc.down) {
    h = ops::relu(conv(h));
    steps.push_back(h);
  }
  return steps;
}

Var Generator::encode(const Var& left, const Var& left_sketch) const {
  check_input(left, 3, "encode(left_image)");
  check_input(left_sketch, 1, "encode(left_sketch)");
  const auto steps = run_encoder(encoder_, ops::concat_channels(left, left_sketch));
  const Var& bottleneck = steps.back();
  return ops::concat_width(bottleneck, ops::relu(expand_(bottleneck)));
}

std::vector<Var> Generator::pyramid(const Encoder& enc, const Var& x, int channels, const char* what) const {
  check_input(x, channels, what);
  const int L = cfg_.decoder_layers;
  std::vector<Var> out(static_cast<std::size_t>(L));
  if (cfg_.acs_count() == 0) return out;
  const auto steps = run_encoder(enc, x);
  for (int l = 0; l < L; ++l) {
    if (cfg_.acs_at(l)) out[static_cast<std::size_t>(l)] = steps[static_cast<std::size_t>(L - 2 - l)];
  }
  return out;
}

std::vector<Var> Generator::encode_reference(const Var& reference_right) const {
  return pyramid(ref_encoder_, reference_right, 3, "encode_reference");
}

std::vector<Var> Generator::encode_sketch(const Var& sketch_right) const {
  return pyramid(sketch_encoder_, sketch_right, 1, "encode_sketch");
}

Var Generator::decode(const Var& features, const std::vector<Var>& ref_pyramid, const std::vector<Var>& sketch_pyramid,
                      ops::NormMode mode) const {
  const int L = cfg_.decoder_layers;
  const Tensor& f = features.value();
  if (f.rank() != 3 || f.height() != cfg_.layer_height(0) || f.width() != 2 * cfg_.layer_half_width(0) ||
      f.channels() != cfg_.layer_channels(0)) {
    throw ShapeError("decode: bottleneck features " + f.shape_string() + " do not match configuration");
  }
  if (static_cast<int>(ref_pyramid.size()) != L || static_cast<int>(sketch_pyramid.size()) != L) {
    throw ShapeError("decode: feature pyramids must have one entry per decoder layer");
  }
  Var x = features;
  for (int l = 0; l < L; ++l) {
    if (l > 0) x = ops::upsample_nearest2x(x);
    x = decoder_[static_cast<std::size_t>(l)](x);
    if (l + 1 == L) break;
    x = ops::relu(x);
    if (const auto& acs = acs_[static_cast<std::size_t>(l)]) {
      const Var& fg = ref_pyramid[static_cast<std::size_t>(l)];
      const Var& fs = sketch_pyramid[static_cast<std::size_t>(l)];
      if (!fg.defined() || !fs.defined()) throw ShapeError("decode: missing pyramid level " + std::to_string(l));
      const Tensor& expect = x.value();
      if (fg.value().height() != expect.height() || 2 * fg.value().width() != expect.width()) {
        throw ShapeError("decode: reference level " + std::to_string(l) + " " + fg.value().shape_string() +
                         " misaligned with " + expect.shape_string());
      }
      x = acs_forward(x, fg, fs, *acs, mode);
    }
  }
  // scaled tanh onto [0,1]
  return ops::scale(ops::add_scalar(ops::tanh(x), 1.0), 0.5);
}

Var Generator::forward(const GeneratorInputs& in, ops::NormMode mode) const {
  const Var features = encode(in.left, in.left_sketch);
  return decode(features, encode_reference(in.reference_right), encode_sketch(in.sketch_right), mode);
}

int Generator::acs_count() const {
  int n = 0;
  for (const auto& a : acs_) n += a.has_value() ? 1 : 0;
  return n;
}

const AcsModule& Generator::acs(int layer) const {
  const auto& a = acs_.at(static_cast<std::size_t>(layer));
  if (!a) throw NotFoundError("no ACS module at decoder layer " + std::to_string(layer));
  return *a;
}

Discriminator::Discriminator(int base_channels, ParamStore& store, Rng& rng) {
  const int c = base_channels;
  const int widths[4][3] = {{3, c, 2}, {c, 2 * c, 2}, {2 * c, 4 * c, 2}, {4 * c, 1, 1}};
  for (int i = 0; i < 4; ++i) {
    convs_.emplace_back(store, "disc.conv" + std::to_string(i),
                        ConvSpec{3, 3, widths[i][0], widths[i][1], widths[i][2], true}, rng);
  }
}

Var Discriminator::operator()(const Var& image) const {
  Var x = image;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    x = convs_[i](x);
    if (i + 1 < convs_.size()) x = ops::leaky_relu(x, 0.2);
  }
  return x;
}

std::vector<std::string> Model::generator_prefixes() {
  return {"encoder.", "ref_encoder.", "sketch_encoder.", "expand.", "decoder.", "acs."};
}

Model::Model(GeneratorConfig gen_cfg, StyleConfig style_cfg)
    : gen_cfg_(std::move(gen_cfg)), style_cfg_(std::move(style_cfg)) {
  gen_cfg_.validate();
  style_cfg_.validate();
  Rng rng(gen_cfg_.seed);
  generator_ = std::make_unique<Generator>(gen_cfg_, store_, rng);
  discriminator_ = std::make_unique<Discriminator>(gen_cfg_.base_channels, store_, rng);
  extractor_ = make_feature_extractor(style_cfg_.extractor);
  if (extractor_->layer_count() != static_cast<int>(style_cfg_.layer_weights.size())) {
    throw ConfigError("style.layer_weights has " + std::to_string(style_cfg_.layer_weights.size()) +
                      " entries but the extractor yields " + std::to_string(extractor_->layer_count()) + " layers");
  }
}

Tensor left_sketch_for(const Model& model, const Tensor& left) {
  return extract_sketch(ImageSample{"left", left}, model.edge_detector(), model.config().sketch_threshold).mask;
}

OutpaintResult outpaint(const Model& model, const Tensor& left, const std::optional<Tensor>& sketch_right,
                        const std::optional<Tensor>& reference_right) {
  const GeneratorConfig& cfg = model.config();
  auto check = [&](const Tensor& t, int channels, const char* what) {
    if (t.rank() != 3 || t.height() != cfg.height || t.width() != cfg.half_width() || t.channels() != channels) {
      throw ConfigError(std::string(what) + " " + t.shape_string() + " does not match checkpoint resolution " +
                        std::to_string(cfg.height) + "x" + std::to_string(cfg.width));
    }
  };
  check(left, 3, "left image");
  if (sketch_right) check(*sketch_right, 1, "sketch");
  if (reference_right) check(*reference_right, 3, "reference");

  NoGradGuard no_grad;
  GeneratorInputs in;
  in.left = constant(left);
  in.left_sketch = constant(left_sketch_for(model, left));
  in.sketch_right = constant(sketch_right ? *sketch_right : Tensor({cfg.height, cfg.half_width(), 1}));
  in.reference_right = constant(reference_right ? *reference_right : Tensor({cfg.height, cfg.half_width(), 3}));
  const Tensor full = model.generator().forward(in, ops::NormMode::Frozen).value();
  OutpaintResult out;
  out.right_half = right_half(full);
  out.composite = concat_width(left, out.right_half);
  return out;
}

}  // namespace rego
