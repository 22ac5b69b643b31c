#include "cyclead/model.hpp"

#include <random>

#include "cyclead/error.hpp"

namespace cyclead {
namespace {

constexpr double kInitStd = 0.02;
constexpr double kLeakySlope = 0.2;

template <typename T>
Tensor<T> gaussian(Shape shape, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, kInitStd);
  Tensor<T> t(shape);
  for (auto& v : t.span()) v = static_cast<T>(dist(rng));
  return t;
}

Shape bias_shape(int channels) { return Shape{1, channels, 1, 1}; }

template <typename T>
void add_conv(ParameterSet<T>& params, const std::string& name, Shape weight, int bias_channels,
              std::mt19937_64& rng) {
  params.add(name + ".weight", gaussian<T>(weight, rng));
  params.add(name + ".bias", Tensor<T>(bias_shape(bias_channels)));
}

template <typename T>
void check_layout(const ParameterSet<T>& got, const ParameterSet<T>& expected,
                  const std::string& what) {
  if (got.size() != expected.size()) {
    throw SpecError(what + ": expected " + std::to_string(expected.size()) +
                    " parameter tensors, got " + std::to_string(got.size()));
  }
  for (std::size_t i = 0; i < got.size(); ++i) {
    const auto& a = got.items()[i];
    const auto& b = expected.items()[i];
    if (a.name != b.name || a.var.shape() != b.var.shape()) {
      throw SpecError(what + ": parameter " + a.name + " " + a.var.shape().str() +
                      " does not match expected " + b.name + " " + b.var.shape().str());
    }
  }
}

template <typename T>
ParameterSet<T> generator_parameters(const GeneratorSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ParameterSet<T> p;
  const int w = spec.base_width;
  add_conv(p, "stem", Shape{w, spec.in_channels, 7, 7}, w, rng);
  add_conv(p, "down0", Shape{2 * w, w, 3, 3}, 2 * w, rng);
  add_conv(p, "down1", Shape{4 * w, 2 * w, 3, 3}, 4 * w, rng);
  for (int i = 0; i < spec.n_residual_blocks; ++i) {
    const std::string block = "res" + std::to_string(i);
    add_conv(p, block + ".conv1", Shape{4 * w, 4 * w, 3, 3}, 4 * w, rng);
    add_conv(p, block + ".conv2", Shape{4 * w, 4 * w, 3, 3}, 4 * w, rng);
  }
  const bool transpose = spec.upsampling == Upsampling::transpose;
  // Transposed conv weights are [Cin, Cout, k, k].
  add_conv(p, "up0", transpose ? Shape{4 * w, 2 * w, 3, 3} : Shape{2 * w, 4 * w, 3, 3}, 2 * w, rng);
  add_conv(p, "up1", transpose ? Shape{2 * w, w, 3, 3} : Shape{w, 2 * w, 3, 3}, w, rng);
  add_conv(p, "head", Shape{spec.out_channels, w, 7, 7}, spec.out_channels, rng);
  return p;
}

template <typename T>
ParameterSet<T> discriminator_parameters(const DiscriminatorSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ParameterSet<T> p;
  int prev = spec.in_channels;
  for (std::size_t i = 0; i < spec.widths.size(); ++i) {
    add_conv(p, "layer" + std::to_string(i), Shape{spec.widths[i], prev, 4, 4}, spec.widths[i], rng);
    prev = spec.widths[i];
  }
  add_conv(p, "head", Shape{1, prev, 4, 4}, 1, rng);
  return p;
}

}  // namespace

std::string to_string(Upsampling u) {
  return u == Upsampling::transpose ? "transpose" : "resize_conv";
}

Upsampling upsampling_from_string(const std::string& s) {
  if (s == "transpose") return Upsampling::transpose;
  if (s == "resize_conv") return Upsampling::resize_conv;
  throw ConfigError("unknown upsampling mode '" + s + "' (expected transpose|resize_conv)");
}

GeneratorSpec GeneratorSpec::for_resolution(int resolution, int channels) {
  GeneratorSpec s;
  s.resolution = resolution;
  s.in_channels = channels;
  s.out_channels = channels;
  s.n_residual_blocks = resolution >= 256 ? 9 : 6;
  return s;
}

void GeneratorSpec::validate() const {
  if (resolution <= 0 || resolution % 4 != 0) {
    throw SpecError("generator resolution " + std::to_string(resolution) +
                    " must be a positive multiple of 4");
  }
  if (resolution < 8) {
    throw SpecError("generator resolution must be at least 8 for reflection padding");
  }
  if (n_residual_blocks < 1) throw SpecError("generator needs at least one residual block");
  if (in_channels < 1 || out_channels < 1 || base_width < 1) {
    throw SpecError("generator channel counts must be positive");
  }
}

void DiscriminatorSpec::validate() const {
  if (in_channels < 1) throw SpecError("discriminator in_channels must be positive");
  if (widths.empty()) throw SpecError("discriminator widths must be non-empty");
  for (std::size_t i = 0; i < widths.size(); ++i) {
    if (widths[i] < 1) throw SpecError("discriminator widths must be positive");
    if (i > 0 && widths[i] <= widths[i - 1]) {
      throw SpecError("discriminator widths must be strictly increasing");
    }
  }
}

std::vector<ops::ConvGeometry> DiscriminatorSpec::layers() const {
  std::vector<ops::ConvGeometry> out;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    out.push_back({4, i + 1 < widths.size() ? 2 : 1, 1});
  }
  out.push_back({4, 1, 1});
  return out;
}

int receptive_field(std::span<const ops::ConvGeometry> layers) {
  int field = 1;
  int jump = 1;
  for (const auto& l : layers) {
    field += (l.kernel - 1) * jump;
    jump *= l.stride;
  }
  return field;
}

int receptive_field(const DiscriminatorSpec& spec) {
  spec.validate();
  const auto l = spec.layers();
  return receptive_field(std::span<const ops::ConvGeometry>(l));
}

int patch_map_size(const DiscriminatorSpec& spec, int input_size) {
  int size = input_size;
  for (const auto& l : spec.layers()) size = ops::conv_output_size(size, l);
  return size;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  // splitmix64 finalizer over (base, stream)
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

template <typename T>
std::size_t ParameterSet<T>::count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.var.value().size();
  return n;
}

template <typename T>
std::vector<T> ParameterSet<T>::flatten() const {
  std::vector<T> out;
  out.reserve(count());
  for (const auto& p : params_) {
    const auto& v = p.var.value().storage();
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

template <typename T>
void ParameterSet<T>::set_requires_grad(bool on) {
  for (auto& p : params_) p.var.set_requires_grad(on);
}

template <typename T>
void ParameterSet<T>::zero_grad() {
  for (auto& p : params_) p.var.zero_grad();
}

template <typename T>
Generator<T>::Generator(const GeneratorSpec& spec, std::uint64_t init_seed) : spec_(spec) {
  spec_.validate();
  params_ = generator_parameters<T>(spec_, init_seed);
}

template <typename T>
Generator<T>::Generator(const GeneratorSpec& spec, ParameterSet<T> params)
    : spec_(spec), params_(std::move(params)) {
  spec_.validate();
  check_layout(params_, generator_parameters<T>(spec_, 0), "generator");
}

template <typename T>
Var<T> Generator<T>::forward(const Var<T>& batch) const {
  const Shape s = batch.shape();
  if (s.c != spec_.in_channels || s.h != spec_.resolution || s.w != spec_.resolution) {
    throw ShapeError("generator expects [N," + std::to_string(spec_.in_channels) + "," +
                     std::to_string(spec_.resolution) + "," + std::to_string(spec_.resolution) +
                     "], got " + s.str());
  }
  std::size_t next = 0;
  auto conv = [&](const Var<T>& x, ops::ConvGeometry g) {
    const auto& w = params_[next++];
    const auto& b = params_[next++];
    return ops::conv2d(x, w, b, g);
  };
  auto norm_relu = [](const Var<T>& x) { return ops::relu(ops::instance_norm(x)); };

  Var<T> h = norm_relu(conv(ops::reflection_pad2d(batch, 3), {7, 1, 0}));
  h = norm_relu(conv(h, {3, 2, 1}));
  h = norm_relu(conv(h, {3, 2, 1}));
  for (int i = 0; i < spec_.n_residual_blocks; ++i) {
    Var<T> r = norm_relu(conv(ops::reflection_pad2d(h, 1), {3, 1, 0}));
    r = ops::instance_norm(conv(ops::reflection_pad2d(r, 1), {3, 1, 0}));
    h = ops::add(h, r);
  }
  for (int i = 0; i < 2; ++i) {
    if (spec_.upsampling == Upsampling::transpose) {
      const auto& w = params_[next++];
      const auto& b = params_[next++];
      h = ops::conv_transpose2d(h, w, b, {3, 2, 1}, 1);
    } else {
      h = conv(ops::upsample_nearest2x(h), {3, 1, 1});
    }
    h = norm_relu(h);
  }
  return ops::tanh(conv(ops::reflection_pad2d(h, 3), {7, 1, 0}));
}

template <typename T>
Discriminator<T>::Discriminator(const DiscriminatorSpec& spec, std::uint64_t init_seed)
    : spec_(spec) {
  spec_.validate();
  params_ = discriminator_parameters<T>(spec_, init_seed);
}

template <typename T>
Discriminator<T>::Discriminator(const DiscriminatorSpec& spec, ParameterSet<T> params)
    : spec_(spec), params_(std::move(params)) {
  spec_.validate();
  check_layout(params_, discriminator_parameters<T>(spec_, 0), "discriminator");
}

template <typename T>
Var<T> Discriminator<T>::forward(const Var<T>& batch) const {
  if (batch.shape().c != spec_.in_channels) {
    throw ShapeError("discriminator expects " + std::to_string(spec_.in_channels) +
                     " channels, got " + batch.shape().str());
  }
  const auto geoms = spec_.layers();
  Var<T> h = batch;
  for (std::size_t i = 0; i < geoms.size(); ++i) {
    h = ops::conv2d(h, params_[2 * i], params_[2 * i + 1], geoms[i]);
    const bool last = i + 1 == geoms.size();
    if (last) break;
    if (i > 0) h = ops::instance_norm(h);
    h = ops::leaky_relu(h, kLeakySlope);
  }
  return h;
}

template <typename T>
ModelPair<T> ModelPair<T>::build(const GeneratorSpec& gspec, const DiscriminatorSpec& dspec,
                                 std::uint64_t seed) {
  return ModelPair<T>{Generator<T>(gspec, derive_seed(seed, 0)),
                      Generator<T>(gspec, derive_seed(seed, 1)),
                      Discriminator<T>(dspec, derive_seed(seed, 2)),
                      Discriminator<T>(dspec, derive_seed(seed, 3))};
}

template class ParameterSet<float>;
template class ParameterSet<double>;
template class Generator<float>;
template class Generator<double>;
template class Discriminator<float>;
template class Discriminator<double>;
template struct ModelPair<float>;
template struct ModelPair<double>;

}  // namespace cyclead
