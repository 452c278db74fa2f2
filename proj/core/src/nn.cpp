#include "red/nn.hpp"

#include <cmath>

#include "json.hpp"
#include "red/binary_io.hpp"
#include "red/error.hpp"
#include "red/rng.hpp"

namespace red::nn {

using nlohmann::json;

std::string to_string(Activation a) { return a == Activation::kRelu ? "relu" : "tanh"; }

Activation parse_activation(const std::string& name) {
  if (name == "relu") return Activation::kRelu;
  if (name == "tanh") return Activation::kTanh;
  throw Error("unknown activation \"" + name + "\"");
}

namespace {

std::vector<Layer> shaped_layers(const std::vector<std::size_t>& dims) {
  if (dims.size() < 2) throw Error("mlp needs at least input and output dimensions");
  std::vector<Layer> layers;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    if (dims[l] == 0 || dims[l + 1] == 0) throw Error("mlp layer dimensions must be positive");
    const auto in = static_cast<Eigen::Index>(dims[l]);
    const auto out = static_cast<Eigen::Index>(dims[l + 1]);
    layers.push_back({Matrix::Zero(out, in), Vector::Zero(out)});
  }
  return layers;
}

std::size_t resolve_split(std::size_t split, std::size_t n_layers) {
  if (split == Mlp::kDefaultSplit) return n_layers - 1;
  if (split > n_layers) throw Error("mlp split point beyond last layer");
  return split;
}

}  // namespace

Mlp::Mlp(const std::vector<std::size_t>& dims, Activation act, std::uint64_t seed,
         std::size_t split_point)
    : layers_(shaped_layers(dims)),
      act_(act),
      split_(resolve_split(split_point, dims.size() - 1)),
      seed_(seed) {
  Rng rng(seed);
  for (auto& layer : layers_) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(layer.w.cols()));
    for (Eigen::Index i = 0; i < layer.w.rows(); ++i) {
      for (Eigen::Index j = 0; j < layer.w.cols(); ++j) {
        layer.w(i, j) = (2.0 * rng.uniform() - 1.0) * bound;
      }
    }
    for (Eigen::Index i = 0; i < layer.b.size(); ++i) layer.b(i) = (2.0 * rng.uniform() - 1.0) * bound;
  }
}

Mlp Mlp::zeros(const std::vector<std::size_t>& dims, Activation act, std::size_t split_point) {
  Mlp net;
  net.layers_ = shaped_layers(dims);
  net.act_ = act;
  net.split_ = resolve_split(split_point, dims.size() - 1);
  return net;
}

std::vector<std::size_t> Mlp::dims() const {
  std::vector<std::size_t> d;
  if (layers_.empty()) return d;
  d.push_back(input_dim());
  for (const auto& l : layers_) d.push_back(static_cast<std::size_t>(l.w.rows()));
  return d;
}

void Mlp::check_input(const Matrix& x) const {
  if (layers_.empty()) throw Error("mlp has no layers");
  if (static_cast<std::size_t>(x.rows()) != input_dim()) {
    throw Error("mlp input dimension " + std::to_string(x.rows()) + " does not match " +
                std::to_string(input_dim()));
  }
}

namespace {

void activate(Activation act, Matrix& z) {
  if (act == Activation::kRelu) {
    z = z.cwiseMax(0.0);
  } else {
    z = z.array().tanh().matrix();
  }
}

}  // namespace

Matrix Mlp::forward(const Matrix& x) const {
  check_input(x);
  Matrix h = x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Matrix z = layers_[l].w * h;
    z.colwise() += layers_[l].b;
    if (l + 1 < layers_.size()) activate(act_, z);
    h = std::move(z);
  }
  return h;
}

Matrix Mlp::forward(const Matrix& x, Cache& cache) const {
  check_input(x);
  cache.inputs.resize(layers_.size());
  cache.pre.resize(layers_.size());
  cache.net = this;
  cache.version = version_;
  Matrix h = x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    cache.inputs[l] = h;
    Matrix z = layers_[l].w * h;
    z.colwise() += layers_[l].b;
    cache.pre[l] = z;
    if (l + 1 < layers_.size()) activate(act_, z);
    h = std::move(z);
  }
  return h;
}

Gradients backward(const Mlp& net, const Mlp::Cache& cache, const Matrix& d_out) {
  if (cache.net != &net || cache.version != net.version() ||
      cache.inputs.size() != net.num_layers()) {
    throw Error("stale forward cache: the net changed after forward()");
  }
  const auto& layers = net.layers();
  const std::size_t n = layers.size();
  if (d_out.rows() != layers.back().w.rows() || d_out.cols() != cache.inputs[0].cols()) {
    throw Error("output gradient shape does not match forward batch");
  }
  Gradients g;
  g.dw.resize(n);
  g.db.resize(n);
  Matrix dz = d_out;
  for (std::size_t l = n; l-- > 0;) {
    if (l + 1 < n) {
      const Matrix& z = cache.pre[l];
      if (net.activation() == Activation::kRelu) {
        dz = (z.array() > 0.0).select(dz, 0.0);
      } else {
        dz = (dz.array() * (1.0 - z.array().tanh().square())).matrix();
      }
    }
    g.dw[l] = dz * cache.inputs[l].transpose();
    g.db[l] = dz.rowwise().sum();
    dz = layers[l].w.transpose() * dz;
  }
  g.d_input = std::move(dz);
  return g;
}

OptimState::OptimState(const Mlp& net, AdamConfig cfg) : cfg_(cfg) {
  if (cfg_.backbone_mult < 0.0 || cfg_.head_mult < 0.0) {
    throw Error("learning-rate multipliers must be non-negative");
  }
  for (const auto& l : net.layers()) {
    mw_.push_back(Matrix::Zero(l.w.rows(), l.w.cols()));
    vw_.push_back(Matrix::Zero(l.w.rows(), l.w.cols()));
    mb_.push_back(Vector::Zero(l.b.size()));
    vb_.push_back(Vector::Zero(l.b.size()));
  }
}

void apply_update(Mlp& net, const Gradients& grads, OptimState& opt, bool freeze_head) {
  const std::size_t n = net.num_layers();
  if (grads.dw.size() != n || grads.db.size() != n || opt.mw_.size() != n) {
    throw Error("gradient/optimizer shapes do not match the net");
  }
  const auto& c = opt.cfg_;
  bool has_backbone = false, has_head = false;
  for (std::size_t l = 0; l < n; ++l) (net.is_head(l) ? has_head : has_backbone) = true;
  if (has_backbone) ++opt.t_backbone_;
  if (has_head && !freeze_head) ++opt.t_head_;

  auto& layers = net.mutable_layers();
  for (std::size_t l = 0; l < n; ++l) {
    const bool head = net.is_head(l);
    if (head && freeze_head) continue;
    const double t = static_cast<double>(head ? opt.t_head_ : opt.t_backbone_);
    const double lr = c.lr * (head ? c.head_mult : c.backbone_mult);
    const double bc1 = 1.0 - std::pow(c.beta1, t);
    const double bc2 = 1.0 - std::pow(c.beta2, t);
    auto step = [&](auto& param, const auto& grad, auto& m, auto& v) {
      if (param.rows() != grad.rows() || param.cols() != grad.cols()) {
        throw Error("gradient shape mismatch at layer " + std::to_string(l));
      }
      m = c.beta1 * m + (1.0 - c.beta1) * grad;
      v = c.beta2 * v + (1.0 - c.beta2) * grad.cwiseProduct(grad);
      param.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + c.eps);
    };
    step(layers[l].w, grads.dw[l], opt.mw_[l], opt.vw_[l]);
    step(layers[l].b, grads.db[l], opt.mb_[l], opt.vb_[l]);
  }
}

std::string serialize_checkpoint(const std::vector<NamedNet>& nets, const std::string& meta_json) {
  json header;
  header["nets"] = json::array();
  for (const auto& [name, net] : nets) {
    header["nets"].push_back({{"name", name},
                              {"dims", net.dims()},
                              {"activation", to_string(net.activation())},
                              {"split_point", net.split_point()},
                              {"seed", net.init_seed()}});
  }
  try {
    header["meta"] = json::parse(meta_json);
  } catch (const json::exception& e) {
    throw Error(std::string("checkpoint metadata is not valid JSON: ") + e.what());
  }
  io::BinaryWriter w;
  w.put_envelope(kCheckpointMagic, kCheckpointVersion, header.dump());
  for (const auto& named : nets) {
    for (const auto& layer : named.net.layers()) {
      for (Eigen::Index i = 0; i < layer.w.rows(); ++i) {
        for (Eigen::Index j = 0; j < layer.w.cols(); ++j) w.put_f64(layer.w(i, j));
      }
      for (Eigen::Index i = 0; i < layer.b.size(); ++i) w.put_f64(layer.b(i));
    }
  }
  return w.take();
}

std::vector<NamedNet> parse_checkpoint(std::span<const char> bytes, std::string* meta_json) {
  io::BinaryReader r(bytes);
  const auto env = io::read_envelope(r, kCheckpointMagic);
  if (env.version != kCheckpointVersion) {
    throw ParseError("version", "unsupported checkpoint version " + std::to_string(env.version));
  }
  json header;
  try {
    header = json::parse(env.header_json);
  } catch (const json::exception& e) {
    throw ParseError("header", std::string("invalid JSON: ") + e.what());
  }
  if (!header.contains("nets") || !header["nets"].is_array()) {
    throw ParseError("header", "missing \"nets\" array");
  }
  std::vector<NamedNet> nets;
  for (std::size_t k = 0; k < header["nets"].size(); ++k) {
    const auto& h = header["nets"][k];
    const std::string rec = "net " + std::to_string(k);
    NamedNet named;
    try {
      named.name = h.at("name").get<std::string>();
      // Seeded construction records the init seed; the values are
      // overwritten from the payload below.
      named.net = Mlp(h.at("dims").get<std::vector<std::size_t>>(),
                      parse_activation(h.at("activation").get<std::string>()),
                      h.at("seed").get<std::uint64_t>(), h.at("split_point").get<std::size_t>());
    } catch (const json::exception& e) {
      throw ParseError(rec, std::string("bad header entry: ") + e.what());
    } catch (const ParseError&) {
      throw;
    } catch (const Error& e) {
      throw ParseError(rec, e.what());
    }
    auto& layers = named.net.mutable_layers();
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const std::string lrec = rec + " (" + named.name + ") layer " + std::to_string(l);
      for (Eigen::Index i = 0; i < layers[l].w.rows(); ++i) {
        for (Eigen::Index j = 0; j < layers[l].w.cols(); ++j) layers[l].w(i, j) = r.get_f64(lrec);
      }
      for (Eigen::Index i = 0; i < layers[l].b.size(); ++i) layers[l].b(i) = r.get_f64(lrec);
    }
    nets.push_back(std::move(named));
  }
  if (r.remaining() != 0) throw ParseError("trailer", "unexpected trailing bytes");
  if (meta_json) *meta_json = header.contains("meta") ? header["meta"].dump() : "{}";
  return nets;
}

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedNet>& nets,
                     const std::string& meta_json) {
  io::write_file(path, serialize_checkpoint(nets, meta_json));
}

std::vector<NamedNet> load_checkpoint(const std::filesystem::path& path, std::string* meta_json) {
  return parse_checkpoint(io::read_file(path), meta_json);
}

}  // namespace red::nn
