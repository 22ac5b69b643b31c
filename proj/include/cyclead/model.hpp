#pragma once

// Generators (residual encoder/decoder) and PatchGAN discriminators.
//
// Generator layer stack, for base width w:
//   reflect-pad 3, 7x7 conv (w), IN, ReLU
//   3x3 stride-2 conv (2w), IN, ReLU
//   3x3 stride-2 conv (4w), IN, ReLU
//   n residual blocks at 4w: reflect-pad 1, 3x3 conv, IN, ReLU, reflect-pad 1, 3x3 conv, IN, + skip
//   two fractionally-strided stages (2w, w), each followed by IN, ReLU
//   reflect-pad 3, 7x7 conv (out_channels), tanh
//
// Discriminator with widths (w0..wL-1): 4x4 convs, stride 2 for all widths but
// the last, stride 1 for the last and for the final 1-channel projection,
// padding 1, LeakyReLU(0.2), instance norm on every layer except the first and
// the projection. The default widths give a 70x70 receptive field.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cyclead/autograd.hpp"
#include "cyclead/ops.hpp"

namespace cyclead {

enum class Upsampling { transpose, resize_conv };

std::string to_string(Upsampling u);
Upsampling upsampling_from_string(const std::string& s);

struct GeneratorSpec {
  int resolution = 256;
  int in_channels = 3;
  int out_channels = 3;
  int base_width = 64;
  int n_residual_blocks = 9;
  Upsampling upsampling = Upsampling::transpose;

  // 9 residual blocks from 256 pixels upward, 6 below.
  static GeneratorSpec for_resolution(int resolution, int channels = 3);

  void validate() const;
  bool operator==(const GeneratorSpec&) const = default;
};

struct DiscriminatorSpec {
  int in_channels = 3;
  std::vector<int> widths{64, 128, 256, 512};

  void validate() const;
  // Geometry of every conv including the final projection.
  std::vector<ops::ConvGeometry> layers() const;
  bool operator==(const DiscriminatorSpec&) const = default;
};

// r <- r + (k - 1) * (product of preceding strides), starting from r = 1.
int receptive_field(std::span<const ops::ConvGeometry> layers);
int receptive_field(const DiscriminatorSpec& spec);

// Side length of the patch score map for a square input.
int patch_map_size(const DiscriminatorSpec& spec, int input_size);

template <typename T>
struct NamedParameter {
  std::string name;
  Var<T> var;
};

// Ordered parameter list shared by generators and discriminators.
template <typename T>
class ParameterSet {
 public:
  void add(std::string name, Tensor<T> value) {
    params_.push_back({std::move(name), Var<T>::parameter(std::move(value))});
  }
  std::vector<NamedParameter<T>>& items() { return params_; }
  const std::vector<NamedParameter<T>>& items() const { return params_; }
  const Var<T>& operator[](std::size_t i) const { return params_[i].var; }
  std::size_t size() const { return params_.size(); }

  std::size_t count() const;
  std::vector<T> flatten() const;
  void set_requires_grad(bool on);
  void zero_grad();
  // Deep copy with fresh nodes, optionally converting precision.
  template <typename U>
  ParameterSet<U> clone_as() const {
    ParameterSet<U> out;
    for (const auto& p : params_) out.add(p.name, p.var.value().template cast<U>());
    return out;
  }

 private:
  std::vector<NamedParameter<T>> params_;
};

template <typename T>
class Generator {
 public:
  Generator(const GeneratorSpec& spec, std::uint64_t init_seed);
  Generator(const GeneratorSpec& spec, ParameterSet<T> params);

  Generator(Generator&&) noexcept = default;
  Generator& operator=(Generator&&) noexcept = default;
  Generator(const Generator&) = delete;
  Generator& operator=(const Generator&) = delete;

  // Images in [-1,1], NCHW with H = W = resolution. Output in [-1,1].
  Var<T> forward(const Var<T>& batch) const;
  Tensor<T> operator()(const Tensor<T>& batch) const { return forward(Var<T>::constant(batch)).value(); }

  const GeneratorSpec& spec() const { return spec_; }
  ParameterSet<T>& parameters() { return params_; }
  const ParameterSet<T>& parameters() const { return params_; }

  template <typename U>
  Generator<U> clone_as() const {
    return Generator<U>(spec_, params_.template clone_as<U>());
  }
  Generator clone() const { return clone_as<T>(); }

 private:
  GeneratorSpec spec_;
  ParameterSet<T> params_;
};

template <typename T>
class Discriminator {
 public:
  Discriminator(const DiscriminatorSpec& spec, std::uint64_t init_seed);
  Discriminator(const DiscriminatorSpec& spec, ParameterSet<T> params);

  Discriminator(Discriminator&&) noexcept = default;
  Discriminator& operator=(Discriminator&&) noexcept = default;
  Discriminator(const Discriminator&) = delete;
  Discriminator& operator=(const Discriminator&) = delete;

  // Raw (unsquashed) patch scores, shape [N, 1, h, w].
  Var<T> forward(const Var<T>& batch) const;

  const DiscriminatorSpec& spec() const { return spec_; }
  ParameterSet<T>& parameters() { return params_; }
  const ParameterSet<T>& parameters() const { return params_; }

  template <typename U>
  Discriminator<U> clone_as() const {
    return Discriminator<U>(spec_, params_.template clone_as<U>());
  }

 private:
  DiscriminatorSpec spec_;
  ParameterSet<T> params_;
};

// G maps towards the normal domain Y, F towards the abnormal domain X;
// D_X judges abnormal-domain images, D_Y normal-domain ones.
template <typename T>
struct ModelPair {
  Generator<T> G;
  Generator<T> F;
  Discriminator<T> D_X;
  Discriminator<T> D_Y;

  static ModelPair build(const GeneratorSpec& gspec, const DiscriminatorSpec& dspec,
                         std::uint64_t seed);

  template <typename U>
  ModelPair<U> clone_as() const {
    return ModelPair<U>{G.template clone_as<U>(), F.template clone_as<U>(),
                        D_X.template clone_as<U>(), D_Y.template clone_as<U>()};
  }
};

// Per-component seed derivation shared by model init and training.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

extern template class ParameterSet<float>;
extern template class ParameterSet<double>;
extern template class Generator<float>;
extern template class Generator<double>;
extern template class Discriminator<float>;
extern template class Discriminator<double>;
extern template struct ModelPair<float>;
extern template struct ModelPair<double>;

}  // namespace cyclead
