#include "mesp/model.hpp"

#include <cmath>
#include <fstream>

#include "mesp/error.hpp"
#include "mesp/rng.hpp"
#include "mesp/tensor_io.hpp"

namespace mesp {

namespace {

void require(bool ok, const std::string& field, const std::string& message) {
  if (!ok) fail(ErrorKind::kConfig, field + ": " + message);
}

}  // namespace

void ModelConfig::validate() const {
  require(in_channels >= 1, "in_channels", "must be >= 1");
  require(in_time >= 1, "in_time", "must be >= 1");
  require(n_block >= 1, "n_block", "must be >= 1");
  require(patch_size == 2 || patch_size == 4, "patch_size", "must be 2 or 4");
  require(height >= 1 && height % patch_size == 0, "height",
          "must be a positive multiple of patch_size");
  require(width >= 1 && width % patch_size == 0, "width",
          "must be a positive multiple of patch_size");
  require(embed_hid >= 1, "embed_hid", "must be >= 1");
  require(embed_dim >= 1, "embed_dim", "must be >= 1");
  require(ff_expansion >= 1, "ff_expansion", "must be >= 1");
  require(!dilations.empty() && dilations.front() == 1, "dilations", "must start at 1");
  for (std::size_t i = 1; i < dilations.size(); ++i) {
    require(dilations[i] > dilations[i - 1], "dilations", "must be strictly increasing");
  }
  for (auto [k, field] : {std::pair{dw_kernel, "dw_kernel"}, std::pair{std_kernel, "std_kernel"},
                          std::pair{time_kernel, "time_kernel"}}) {
    require(k >= 1 && k % 2 == 1, field, "must be a positive odd kernel size");
  }
}

ModelConfig model_preset(std::string_view name) {
  ModelConfig c;
  if (name == "movingmnist") {
    c.in_channels = 1, c.in_time = 10, c.height = 64, c.width = 64;
    c.n_block = 8, c.patch_size = 2, c.embed_hid = 64, c.embed_dim = 128;
    c.dilations = {1, 2, 4};
  } else if (name == "taxibj") {
    c.in_channels = 2, c.in_time = 4, c.height = 32, c.width = 32;
    c.n_block = 4, c.patch_size = 4, c.embed_hid = 32, c.embed_dim = 64;
    c.dilations = {1, 2};
  } else if (name == "radarecho") {
    c.in_channels = 1, c.in_time = 5, c.height = 100, c.width = 100;
    c.n_block = 4, c.patch_size = 4, c.embed_hid = 128, c.embed_dim = 128;
    c.dilations = {1, 2};
  } else if (name == "toy") {
    c.in_channels = 1, c.in_time = 4, c.height = 16, c.width = 16;
    c.n_block = 1, c.patch_size = 2, c.embed_hid = 16, c.embed_dim = 16;
    c.dilations = {1, 2};
  } else {
    fail(ErrorKind::kConfig, "preset: unknown name '" + std::string(name) + "'");
  }
  return c;
}

std::vector<std::string> preset_names() { return {"movingmnist", "taxibj", "radarecho", "toy"}; }

// ---------------------------------------------------------------------------
// ParamStore

void ParamStore::add(std::string name, Tensor value) {
  if (index_.contains(name)) {
    fail(ErrorKind::kInvalidArgument, "parameter '" + name + "' registered twice");
  }
  index_.emplace(name, entries_.size());
  Entry e;
  e.name = std::move(name);
  e.first_moment = Tensor::zeros(value.shape());
  e.second_moment = Tensor::zeros(value.shape());
  e.value = std::move(value);
  entries_.push_back(std::move(e));
}

std::size_t ParamStore::index_of(std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) {
    fail(ErrorKind::kInvalidArgument, "unknown parameter '" + std::string(name) + "'");
  }
  return it->second;
}

bool ParamStore::contains(std::string_view name) const { return index_.find(name) != index_.end(); }

const Tensor& ParamStore::get(std::string_view name) const { return entries_[index_of(name)].value; }

Tensor& ParamStore::get(std::string_view name) { return entries_[index_of(name)].value; }

std::int64_t ParamStore::total_elements() const {
  std::int64_t n = 0;
  for (const auto& e : entries_) n += e.value.numel();
  return n;
}

bool ParamStore::bitwise_equal(const ParamStore& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name != other.entries_[i].name) return false;
    if (!entries_[i].value.bitwise_equal(other.entries_[i].value)) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Layer plan

std::int64_t LayerSpec::param_count() const {
  switch (kind) {
    case Kind::kConv:
      return out_channels * (in_channels / options.groups) * kernel_h * kernel_w + out_channels;
    case Kind::kNorm:
      return 2 * in_channels;
    case Kind::kPointwise:
      return 0;
  }
  return 0;
}

std::int64_t LayerSpec::flops() const {
  switch (kind) {
    case Kind::kConv: {
      const std::int64_t oh = conv_output_extent(plane_h, kernel_h, options.stride[0],
                                                 options.padding[0], options.dilation[0]);
      const std::int64_t ow = conv_output_extent(plane_w, kernel_w, options.stride[1],
                                                 options.padding[1], options.dilation[1]);
      const std::int64_t macs =
          kernel_h * kernel_w * (in_channels / options.groups) * out_channels * oh * ow;
      return planes_per_sequence * (2 * macs + out_channels * oh * ow);
    }
    case Kind::kNorm:
      return planes_per_sequence * 5 * in_channels * plane_h * plane_w;
    case Kind::kPointwise:
      return elements * flops_per_element;
  }
  return 0;
}

namespace {

class PlanBuilder {
 public:
  void conv(std::string name, std::int64_t cin, std::int64_t cout, std::int64_t kh,
            std::int64_t kw, Conv2dOptions options, std::int64_t plane_h, std::int64_t plane_w,
            std::int64_t planes) {
    LayerSpec s;
    s.kind = LayerSpec::Kind::kConv;
    s.name = std::move(name);
    s.in_channels = cin;
    s.out_channels = cout;
    s.kernel_h = kh;
    s.kernel_w = kw;
    s.options = options;
    s.plane_h = plane_h;
    s.plane_w = plane_w;
    s.planes_per_sequence = planes;
    layers.push_back(std::move(s));
  }

  void norm(std::string name, std::int64_t channels, std::int64_t plane_h,
            std::int64_t plane_w, std::int64_t planes) {
    LayerSpec s;
    s.kind = LayerSpec::Kind::kNorm;
    s.name = std::move(name);
    s.in_channels = channels;
    s.plane_h = plane_h;
    s.plane_w = plane_w;
    s.planes_per_sequence = planes;
    layers.push_back(std::move(s));
  }

  void pointwise(std::string name, std::int64_t elements) {
    LayerSpec s;
    s.kind = LayerSpec::Kind::kPointwise;
    s.name = std::move(name);
    s.elements = elements;
    s.flops_per_element = 1;
    layers.push_back(std::move(s));
  }

  std::vector<LayerSpec> layers;
};

Conv2dOptions same_padding(std::int64_t kh, std::int64_t kw, std::int64_t stride = 1,
                           std::int64_t groups = 1) {
  Conv2dOptions o;
  o.stride = {stride, stride};
  o.padding = {(kh - 1) / 2, (kw - 1) / 2};
  o.groups = groups;
  return o;
}

}  // namespace

std::vector<LayerSpec> layer_plan(const ModelConfig& c) {
  c.validate();
  const std::int64_t t = c.in_time;
  const std::int64_t d = c.embed_dim;
  const std::int64_t hid = c.embed_hid;
  const std::int64_t h = c.grid_height();
  const std::int64_t w = c.grid_width();
  const std::int64_t half_h = c.height / 2;
  const std::int64_t half_w = c.width / 2;
  const std::int64_t k = c.std_kernel;
  PlanBuilder b;

  b.conv("embed.conv1", c.in_channels, hid, 7, 7, same_padding(7, 7, 2), c.height, c.width, t);
  b.pointwise("embed.gelu1", t * hid * half_h * half_w);
  b.conv("embed.conv2", hid, hid, k, k, same_padding(k, k, c.patch_size / 2), half_h, half_w, t);
  b.pointwise("embed.gelu2", t * hid * h * w);
  b.conv("embed.conv3", hid, d, k, k, same_padding(k, k), h, w, t);

  const std::int64_t embedded = t * d * h * w;
  for (std::int64_t blk = 0; blk < c.n_block; ++blk) {
    const std::string sa = "blocks." + std::to_string(blk) + ".sa.";
    b.norm(sa + "norm", d, h, w, t);
    b.conv(sa + "attn", d, d, 1, 1, {}, h, w, t);
    b.conv(sa + "value", d, d, 1, 1, {}, h, w, t);
    b.pointwise(sa + "gelu", embedded);
    b.conv(sa + "dw", d, d, c.dw_kernel, c.dw_kernel, same_padding(c.dw_kernel, c.dw_kernel, 1, d),
           h, w, t);
    b.pointwise(sa + "gate", embedded);
    b.conv(sa + "proj", d, d, 1, 1, {}, h, w, t);
    b.pointwise(sa + "residual", embedded);

    // STA convolutions see one (T, h*w) plane per sequence with D channels.
    const std::string sta = "blocks." + std::to_string(blk) + ".sta.";
    const std::int64_t plane_w = h * w;
    b.norm(sta + "norm", d, t, plane_w, 1);
    b.conv(sta + "attn", d, d, 1, 1, {}, t, plane_w, 1);
    b.conv(sta + "value", d, d, 1, 1, {}, t, plane_w, 1);
    b.pointwise(sta + "gelu", embedded);
    for (std::size_t i = 0; i < c.dilations.size(); ++i) {
      const std::int64_t dil = c.dilations[i];
      Conv2dOptions o;
      o.dilation = {dil, 1};
      o.padding = {dil * (c.time_kernel - 1) / 2, (k - 1) / 2};
      o.groups = d;
      b.conv(sta + "dwd." + std::to_string(i), d, d, c.time_kernel, k, o, t, plane_w, 1);
    }
    b.pointwise(sta + "gate", embedded);
    b.conv(sta + "proj", d, d, 1, 1, {}, t, plane_w, 1);
    b.pointwise(sta + "residual", embedded);

    const std::string ff = "blocks." + std::to_string(blk) + ".ff.";
    const std::int64_t td = t * d;
    b.conv(ff + "fc1", td, c.ff_expansion * td, 1, 1, {}, h, w, 1);
    b.pointwise(ff + "gelu", c.ff_expansion * embedded);
    b.conv(ff + "fc2", c.ff_expansion * td, td, 1, 1, {}, h, w, 1);
    b.pointwise(ff + "residual", embedded);
  }

  const std::int64_t p2 = c.patch_size * c.patch_size;
  b.conv("back.conv1", d, hid, k, k, same_padding(k, k), h, w, t);
  b.pointwise("back.gelu", t * hid * h * w);
  b.conv("back.conv2", hid, c.in_channels * p2, k, k, same_padding(k, k), h, w, t);
  b.conv("back.refine", c.in_channels, c.in_channels, k, k, same_padding(k, k), c.height,
         c.width, t);
  return b.layers;
}

std::vector<std::pair<std::string, Shape>> param_layout(const ModelConfig& config) {
  std::vector<std::pair<std::string, Shape>> layout;
  for (const LayerSpec& s : layer_plan(config)) {
    if (s.kind == LayerSpec::Kind::kConv) {
      layout.emplace_back(s.name + ".weight", Shape{s.out_channels, s.in_channels / s.options.groups,
                                                    s.kernel_h, s.kernel_w});
      layout.emplace_back(s.name + ".bias", Shape{s.out_channels});
    } else if (s.kind == LayerSpec::Kind::kNorm) {
      layout.emplace_back(s.name + ".gamma", Shape{s.in_channels});
      layout.emplace_back(s.name + ".beta", Shape{s.in_channels});
    }
  }
  return layout;
}

ParamStore init_params(const ModelConfig& config, std::uint64_t seed) {
  Rng rng(seed);
  ParamStore store;
  for (const LayerSpec& s : layer_plan(config)) {
    if (s.kind == LayerSpec::Kind::kConv) {
      const std::int64_t cin_g = s.in_channels / s.options.groups;
      Tensor weight({s.out_channels, cin_g, s.kernel_h, s.kernel_w});
      const double stddev = std::sqrt(2.0 / static_cast<double>(cin_g * s.kernel_h * s.kernel_w));
      for (std::int64_t i = 0; i < weight.numel(); ++i) {
        weight[i] = static_cast<float>(rng.truncated_normal(stddev));
      }
      store.add(s.name + ".weight", std::move(weight));
      store.add(s.name + ".bias", Tensor::zeros({s.out_channels}));
    } else if (s.kind == LayerSpec::Kind::kNorm) {
      store.add(s.name + ".gamma", Tensor::full({s.in_channels}, 1.0f));
      store.add(s.name + ".beta", Tensor::zeros({s.in_channels}));
    }
  }
  return store;
}

std::int64_t count_params(const ModelConfig& config) {
  std::int64_t n = 0;
  for (const LayerSpec& s : layer_plan(config)) n += s.param_count();
  return n;
}

std::int64_t count_flops(const ModelConfig& config, std::int64_t batch) {
  if (batch < 1) fail(ErrorKind::kInvalidArgument, "count_flops batch must be >= 1");
  std::int64_t n = 0;
  for (const LayerSpec& s : layer_plan(config)) n += s.flops();
  return n * batch;
}

// ---------------------------------------------------------------------------
// Network

Network::Network(const ModelConfig& config, const ParamStore& params, Tape& tape, bool trainable)
    : config_(config), tape_(tape) {
  for (LayerSpec& s : layer_plan(config)) {
    if (s.kind != LayerSpec::Kind::kPointwise) layers_.emplace(s.name, std::move(s));
  }
  for (const auto& e : params.entries()) {
    vars_.emplace(e.name, trainable ? tape.leaf(e.value) : tape.constant(e.value));
  }
}

Var Network::param(std::string_view name) const {
  auto it = vars_.find(std::string(name));
  if (it == vars_.end()) {
    fail(ErrorKind::kInvalidArgument, "parameter '" + std::string(name) + "' is not bound");
  }
  return it->second;
}

Var Network::conv(std::string_view layer, Var x) const {
  auto it = layers_.find(std::string(layer));
  if (it == layers_.end() || it->second.kind != LayerSpec::Kind::kConv) {
    fail(ErrorKind::kInvalidArgument, "no conv layer '" + std::string(layer) + "'");
  }
  const std::string prefix(layer);
  return mesp::conv2d(x, param(prefix + ".weight"), param(prefix + ".bias"), it->second.options);
}

Var Network::norm(std::string_view layer, Var x) const {
  const std::string prefix(layer);
  return mesp::layer_norm(x, param(prefix + ".gamma"), param(prefix + ".beta"));
}

// ---------------------------------------------------------------------------
// Model stages

Var patch_embed(const Network& net, Var x) {
  const ModelConfig& c = net.config();
  if (x.value().rank() != 4 || x.shape()[1] != c.in_channels || x.shape()[2] != c.height ||
      x.shape()[3] != c.width) {
    fail(ErrorKind::kInvalidShape, "patch_embed expects (B*T," + std::to_string(c.in_channels) +
                                       "," + std::to_string(c.height) + "," +
                                       std::to_string(c.width) + "), got " +
                                       shape_to_string(x.shape()));
  }
  Var y = gelu(net.conv("embed.conv1", x));
  y = gelu(net.conv("embed.conv2", y));
  return net.conv("embed.conv3", y);
}

Var patch_back(const Network& net, Var x) {
  const ModelConfig& c = net.config();
  if (x.value().rank() != 4 || x.shape()[1] != c.embed_dim || x.shape()[2] != c.grid_height() ||
      x.shape()[3] != c.grid_width()) {
    fail(ErrorKind::kInvalidShape, "patch_back expects (B*T," + std::to_string(c.embed_dim) + "," +
                                       std::to_string(c.grid_height()) + "," +
                                       std::to_string(c.grid_width()) + "), got " +
                                       shape_to_string(x.shape()));
  }
  Var y = gelu(net.conv("back.conv1", x));
  y = net.conv("back.conv2", y);
  y = pixel_shuffle(y, c.patch_size);
  return net.conv("back.refine", y);
}

namespace {

void check_embedded(const Network& net, Var x, const char* where) {
  const ModelConfig& c = net.config();
  if (x.value().rank() != 4 || x.shape()[1] != c.embed_dim) {
    fail(ErrorKind::kInvalidShape, std::string(where) + " expects (B*T," +
                                       std::to_string(c.embed_dim) + ",h,w), got " +
                                       shape_to_string(x.shape()));
  }
}

std::string block_prefix(std::int64_t block, const char* part) {
  return "blocks." + std::to_string(block) + "." + part + ".";
}

// PWConv(A (.) V) with A = PWConv(x_att), V = spatial(gelu(PWConv(x_att))).
template <typename SpatialFn>
Var gated_attention(const Network& net, Var x, const std::string& prefix, SpatialFn spatial) {
  Var x_att = net.norm(prefix + "norm", x);
  Var attn = net.conv(prefix + "attn", x_att);
  Var value = spatial(gelu(net.conv(prefix + "value", x_att)));
  return net.conv(prefix + "proj", hadamard(attn, value));
}

}  // namespace

Var sa_block(const Network& net, Var x, std::int64_t block) {
  check_embedded(net, x, "sa_block");
  const std::string prefix = block_prefix(block, "sa");
  Var out = gated_attention(net, x, prefix, [&](Var v) { return net.conv(prefix + "dw", v); });
  return add(out, x);
}

Var dilated_time_conv(const Network& net, Var x, std::int64_t block) {
  const std::string prefix = block_prefix(block, "sta");
  for (std::size_t i = 0; i < net.config().dilations.size(); ++i) {
    x = net.conv(prefix + "dwd." + std::to_string(i), x);
  }
  return x;
}

Var sta_block(const Network& net, Var x, std::int64_t block, std::int64_t batch) {
  check_embedded(net, x, "sta_block");
  const Shape s = x.shape();
  if (batch < 1 || s[0] % batch != 0) {
    fail(ErrorKind::kInvalidArgument, "sta_block: leading axis " + std::to_string(s[0]) +
                                          " is not divisible by batch " + std::to_string(batch));
  }
  const std::int64_t t = s[0] / batch;
  const std::int64_t d = s[1];
  const std::int64_t hw = s[2] * s[3];

  // (B*T, D, h, w) -> (B, D, T, h*w): convolution plane (T, h*w), D depthwise channels.
  Var x_st = permute(reshape(x, {batch, t, d, hw}), {0, 2, 1, 3});
  const std::string prefix = block_prefix(block, "sta");
  Var out = gated_attention(net, x_st, prefix,
                            [&](Var v) { return dilated_time_conv(net, v, block); });
  Var x_sta = add(out, x_st);
  return reshape(permute(x_sta, {0, 2, 1, 3}), s);
}

Var feed_forward(const Network& net, Var x, std::int64_t block) {
  const ModelConfig& c = net.config();
  if (x.value().rank() != 4 || x.shape()[1] != c.in_time * c.embed_dim) {
    fail(ErrorKind::kInvalidShape, "feed_forward expects (B," +
                                       std::to_string(c.in_time * c.embed_dim) +
                                       ",h,w), got " + shape_to_string(x.shape()));
  }
  const std::string prefix = block_prefix(block, "ff");
  Var hidden = gelu(net.conv(prefix + "fc1", x));
  return add(net.conv(prefix + "fc2", hidden), x);
}

Var forward(const Network& net, Var x) {
  const ModelConfig& c = net.config();
  const Shape expected_tail{c.in_time, c.in_channels, c.height, c.width};
  if (x.value().rank() != 5 || Shape(x.shape().begin() + 1, x.shape().end()) != expected_tail) {
    fail(ErrorKind::kInvalidShape, "forward expects (B," + std::to_string(c.in_time) + "," +
                                       std::to_string(c.in_channels) + "," +
                                       std::to_string(c.height) + "," + std::to_string(c.width) +
                                       "), got " + shape_to_string(x.shape()));
  }
  const Shape in_shape = x.shape();
  const std::int64_t batch = in_shape[0];
  const std::int64_t bt = batch * c.in_time;
  const std::int64_t h = c.grid_height();
  const std::int64_t w = c.grid_width();

  Var y = patch_embed(net, reshape(x, {bt, c.in_channels, c.height, c.width}));
  for (std::int64_t blk = 0; blk < c.n_block; ++blk) {
    y = sa_block(net, y, blk);
    y = sta_block(net, y, blk, batch);
    y = feed_forward(net, reshape(y, {batch, c.in_time * c.embed_dim, h, w}), blk);
    y = reshape(y, {bt, c.embed_dim, h, w});
  }
  return reshape(patch_back(net, y), in_shape);
}

Tensor forward(const ModelConfig& config, const ParamStore& params, const Tensor& x) {
  Tape tape(false);
  Network net(config, params, tape, false);
  return forward(net, tape.constant(x)).value();
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_checkpoint(const ParamStore& params, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) fail(ErrorKind::kIo, "cannot open " + path.string() + " for writing");
  write_u32(os, static_cast<std::uint32_t>(params.size()));
  for (const auto& e : params.entries()) {
    write_u32(os, static_cast<std::uint32_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    write_tensor(os, e.value);
  }
  if (!os) fail(ErrorKind::kIo, "failed writing checkpoint " + path.string());
}

ParamStore load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::kIo, "cannot open " + path.string() + " for reading");
  const std::uint32_t count = read_u32(is, "entry count");
  ParamStore store;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t len = read_u32(is, "name length");
    std::string name(len, '\0');
    is.read(name.data(), len);
    if (is.gcount() != static_cast<std::streamsize>(len)) {
      fail(ErrorKind::kFormat, "truncated while reading parameter name");
    }
    store.add(std::move(name), read_tensor(is));
  }
  if (is.peek() != std::char_traits<char>::eof()) {
    fail(ErrorKind::kFormat, "trailing bytes after checkpoint entries in " + path.string());
  }
  return store;
}

ParamStore load_checkpoint(const std::filesystem::path& path, const ModelConfig& config) {
  ParamStore store = load_checkpoint(path);
  const auto layout = param_layout(config);
  if (store.size() != layout.size()) {
    fail(ErrorKind::kFormat, "checkpoint has " + std::to_string(store.size()) +
                                 " parameters, model expects " + std::to_string(layout.size()));
  }
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& got = store.entries()[i];
    const auto& [name, shape] = layout[i];
    if (got.name != name || got.value.shape() != shape) {
      fail(ErrorKind::kFormat, "checkpoint entry " + std::to_string(i) + " '" + got.name +
                                   "' " + shape_to_string(got.value.shape()) +
                                   " does not match model parameter '" + name + "' " +
                                   shape_to_string(shape));
    }
  }
  return store;
}

}  // namespace mesp
