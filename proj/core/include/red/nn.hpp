#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace red::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Activation { kRelu, kTanh };

std::string to_string(Activation a);
Activation parse_activation(const std::string& name);

struct Layer {
  Matrix w;  // out x in
  Vector b;  // out

  bool operator==(const Layer& o) const { return w == o.w && b == o.b; }
};

// Multilayer perceptron over column-major batches (one sample per column).
// Hidden layers use the configured activation, the output layer is affine.
// Layers at index >= split_point form the head; the rest are the backbone.
class Mlp {
 public:
  static constexpr std::size_t kDefaultSplit = static_cast<std::size_t>(-1);

  Mlp() = default;
  // dims = {in, hidden..., out}. Weights and biases ~ U(-1/sqrt(fan_in), +).
  // The default split makes the final linear layer the head.
  Mlp(const std::vector<std::size_t>& dims, Activation act, std::uint64_t seed,
      std::size_t split_point = kDefaultSplit);
  static Mlp zeros(const std::vector<std::size_t>& dims, Activation act,
                   std::size_t split_point = kDefaultSplit);

  std::size_t num_layers() const { return layers_.size(); }
  std::size_t input_dim() const { return static_cast<std::size_t>(layers_.front().w.cols()); }
  std::size_t output_dim() const { return static_cast<std::size_t>(layers_.back().w.rows()); }
  std::vector<std::size_t> dims() const;
  std::size_t split_point() const { return split_; }
  bool is_head(std::size_t layer) const { return layer >= split_; }
  Activation activation() const { return act_; }
  std::uint64_t init_seed() const { return seed_; }

  const std::vector<Layer>& layers() const { return layers_; }
  // Any mutable access invalidates outstanding forward caches.
  std::vector<Layer>& mutable_layers() {
    ++version_;
    return layers_;
  }
  std::uint64_t version() const { return version_; }

  Matrix forward(const Matrix& x) const;

  struct Cache {
    std::vector<Matrix> inputs;  // input fed to each layer
    std::vector<Matrix> pre;     // pre-activation of each layer
    const Mlp* net = nullptr;
    std::uint64_t version = 0;
  };
  Matrix forward(const Matrix& x, Cache& cache) const;

  // Parameters only; the cache version counter is not part of equality.
  bool same_parameters(const Mlp& o) const { return layers_ == o.layers_; }
  bool same_structure(const Mlp& o) const {
    return dims() == o.dims() && act_ == o.act_ && split_ == o.split_;
  }

 private:
  void check_input(const Matrix& x) const;

  std::vector<Layer> layers_;
  Activation act_ = Activation::kRelu;
  std::size_t split_ = 0;
  std::uint64_t seed_ = 0;
  std::uint64_t version_ = 0;
};

struct Gradients {
  std::vector<Matrix> dw;
  std::vector<Vector> db;
  Matrix d_input;
};

// Reverse-mode gradients of sum(d_out .* forward(x)) for the cached batch.
// Throws if the net was modified after the cache was filled.
Gradients backward(const Mlp& net, const Mlp::Cache& cache, const Matrix& d_out);

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double backbone_mult = 1.0;
  double head_mult = 1.0;
};

// Adam moments mirroring an Mlp, with separate step counters for the
// backbone and head groups.
class OptimState {
 public:
  OptimState() = default;
  OptimState(const Mlp& net, AdamConfig cfg);

  const AdamConfig& config() const { return cfg_; }
  std::uint64_t backbone_steps() const { return t_backbone_; }
  std::uint64_t head_steps() const { return t_head_; }

 private:
  friend void apply_update(Mlp&, const Gradients&, OptimState&, bool);

  AdamConfig cfg_;
  std::vector<Matrix> mw_, vw_;
  std::vector<Vector> mb_, vb_;
  std::uint64_t t_backbone_ = 0;
  std::uint64_t t_head_ = 0;
};

// One Adam step. With freeze_head the head parameters stay bitwise unchanged
// and the head moments and step counter do not advance.
void apply_update(Mlp& net, const Gradients& grads, OptimState& opt, bool freeze_head);

struct NamedNet {
  std::string name;
  Mlp net;
};

inline constexpr char kCheckpointMagic[] = "ORCK";
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Same envelope as the dataset format: JSON header (shapes, activation,
// split_point, seed per net, plus caller metadata) followed by packed f64
// tensors, row-major weights then biases, layer by layer, net by net.
std::string serialize_checkpoint(const std::vector<NamedNet>& nets, const std::string& meta_json);
std::vector<NamedNet> parse_checkpoint(std::span<const char> bytes, std::string* meta_json);

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedNet>& nets,
                     const std::string& meta_json = "{}");
std::vector<NamedNet> load_checkpoint(const std::filesystem::path& path,
                                      std::string* meta_json = nullptr);

}  // namespace red::nn
