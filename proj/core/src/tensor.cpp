#include "vlif/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unordered_set>

namespace vlif {

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t e : s) n *= e;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

ParseError::ParseError(const std::string& msg, std::size_t byte_offset)
    : std::runtime_error(msg + " (byte " + std::to_string(byte_offset) + ")"),
      offset_(byte_offset) {}

namespace detail {

std::vector<double>& Node::grad_buf() {
  if (grad.empty() && !data.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

}  // namespace detail

static void check_defined(const std::shared_ptr<detail::Node>& n) {
  if (!n) throw ContractError("use of undefined tensor");
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  for (int64_t e : shape)
    if (e <= 0) throw DimensionError("non-positive extent in shape " + shape_str(shape));
  auto n = std::make_shared<detail::Node>();
  n->data.assign(static_cast<size_t>(shape_numel(shape)), value);
  n->shape = std::move(shape);
  return Tensor(std::move(n));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data) {
  if (shape_numel(shape) != static_cast<int64_t>(data.size()))
    throw DimensionError("data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(double value) { return from_data({1}, {value}); }

const Shape& Tensor::shape() const {
  check_defined(node_);
  return node_->shape;
}

int64_t Tensor::rank() const { return static_cast<int64_t>(shape().size()); }

int64_t Tensor::size(int64_t axis) const {
  const Shape& s = shape();
  if (axis < 0 || axis >= static_cast<int64_t>(s.size()))
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  return s[static_cast<size_t>(axis)];
}

int64_t Tensor::numel() const {
  check_defined(node_);
  return node_->numel();
}

const std::vector<double>& Tensor::data() const {
  check_defined(node_);
  return node_->data;
}

std::vector<double>& Tensor::mut_data() {
  check_defined(node_);
  return node_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of " + std::to_string(numel()) + " values");
  return node_->data[0];
}

int64_t flat_index(const Shape& shape, std::initializer_list<int64_t> idx) {
  if (idx.size() != shape.size())
    throw DimensionError("index rank " + std::to_string(idx.size()) + " vs shape " + shape_str(shape));
  int64_t flat = 0;
  size_t a = 0;
  for (int64_t i : idx) {
    if (i < 0 || i >= shape[a]) throw DimensionError("index out of range");
    flat = flat * shape[a] + i;
    ++a;
  }
  return flat;
}

double Tensor::at(std::initializer_list<int64_t> idx) const {
  return data()[static_cast<size_t>(flat_index(shape(), idx))];
}

Tensor& Tensor::set_requires_grad(bool rg) {
  check_defined(node_);
  if (!node_->is_leaf()) throw ContractError("requires_grad can only be toggled on leaves");
  node_->requires_grad = rg;
  return *this;
}

bool Tensor::requires_grad() const {
  check_defined(node_);
  return node_->requires_grad;
}

bool Tensor::has_grad() const {
  check_defined(node_);
  return !node_->grad.empty();
}

const std::vector<double>& Tensor::grad() const {
  check_defined(node_);
  if (node_->grad.empty()) throw ContractError("gradient not populated");
  return node_->grad;
}

std::vector<double>& Tensor::mut_grad() {
  check_defined(node_);
  return node_->grad_buf();
}

double Tensor::grad_at(std::initializer_list<int64_t> idx) const {
  return grad()[static_cast<size_t>(flat_index(shape(), idx))];
}

void Tensor::zero_grad() {
  check_defined(node_);
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const {
  check_defined(node_);
  return from_data(node_->shape, node_->data);
}

Tensor make_node(Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                 std::function<void(detail::Node&)> backprop, const char* op_name) {
  if (shape_numel(shape) != static_cast<int64_t>(data.size()))
    throw DimensionError(std::string(op_name) + ": result data does not match shape");
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  n->op = op_name;
  bool rg = false;
  for (const Tensor& t : inputs) rg = rg || (t.defined() && t.requires_grad());
  n->requires_grad = rg;
  if (rg) {
    n->inputs.reserve(inputs.size());
    for (const Tensor& t : inputs) n->inputs.push_back(t.node());
    n->backprop = std::move(backprop);
  }
  return Tensor::wrap(std::move(n));
}

void backward(const Tensor& loss) {
  check_defined(loss.node());
  if (loss.numel() != 1) throw ContractError("backward requires a scalar loss");

  // Iterative post-order DFS; `order` ends up topologically sorted with the
  // loss last.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  struct Frame {
    detail::Node* node;
    size_t next_input;
  };
  std::vector<Frame> stack;
  detail::Node* root = loss.node().get();
  if (seen.insert(root).second) stack.push_back({root, 0});
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_input < f.node->inputs.size()) {
      detail::Node* in = f.node->inputs[f.next_input++].get();
      if (in->requires_grad && seen.insert(in).second) stack.push_back({in, 0});
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  // Interior gradients are per-sweep scratch; leaf gradients accumulate.
  for (detail::Node* n : order) {
    if (!n->is_leaf()) n->grad.assign(n->data.size(), 0.0);
  }
  if (root->is_leaf()) {
    root->grad_buf()[0] += 1.0;
    return;
  }
  root->grad_buf()[0] = 1.0;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backprop && n->requires_grad) n->backprop(*n);
  }
}

bool all_finite(const Tensor& t) {
  for (double v : t.data())
    if (!std::isfinite(v)) return false;
  return true;
}

// ---------------------------------------------------------------------------
// SPKT serialization

static void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

static uint32_t get_u32(std::istream& is, std::size_t& off) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (is.gcount() != 4) throw ParseError("truncated u32", off);
  off += 4;
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

static void put_f64_le(std::ostream& os, double v) {
  uint64_t u;
  std::memcpy(&u, &v, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(u >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

static double get_f64_le(std::istream& is, std::size_t& off) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (is.gcount() != 8) throw ParseError("truncated f64 payload", off);
  off += 8;
  uint64_t u = 0;
  for (int i = 0; i < 8; ++i) u |= static_cast<uint64_t>(b[i]) << (8 * i);
  double v;
  std::memcpy(&v, &u, 8);
  return v;
}

void write_spkt(std::ostream& os, const Tensor& t) {
  os.write("SPKT", 4);
  put_u32(os, static_cast<uint32_t>(t.rank()));
  for (int64_t e : t.shape()) put_u32(os, static_cast<uint32_t>(e));
  for (double v : t.data()) put_f64_le(os, v);
  if (!os) throw IoError("SPKT write failed");
}

Tensor read_spkt(std::istream& is) {
  std::size_t off = 0;
  char magic[4];
  is.read(magic, 4);
  if (is.gcount() != 4 || std::memcmp(magic, "SPKT", 4) != 0)
    throw ParseError("bad SPKT magic", off);
  off += 4;
  uint32_t rank = get_u32(is, off);
  if (rank > 8) throw ParseError("implausible SPKT rank " + std::to_string(rank), off - 4);
  Shape shape;
  for (uint32_t i = 0; i < rank; ++i) shape.push_back(static_cast<int64_t>(get_u32(is, off)));
  int64_t n = shape_numel(shape);
  std::vector<double> data(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) data[static_cast<size_t>(i)] = get_f64_le(is, off);
  return Tensor::from_data(std::move(shape), std::move(data));
}

void save_spkt(const std::string& path, const Tensor& t) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path);
  write_spkt(f, t);
}

Tensor load_spkt(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for reading: " + path);
  return read_spkt(f);
}

}  // namespace vlif
