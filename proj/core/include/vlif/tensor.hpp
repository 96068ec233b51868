#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <iosfwd>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace vlif {

// Axis extents, outermost first. Canonical feature layout is T x C x H x W
// (row-major, time outermost); patch-to-time reorganisation produces
// (T*r^2) x C x H/r x W/r.
using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// Incompatible tensor extents.
class DimensionError : public std::runtime_error {
 public:
  explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

// An operation was called outside its contract (non-scalar loss, ...).
class ContractError : public std::runtime_error {
 public:
  explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid user-supplied value (config field, pixel range, degenerate spec).
class ValueError : public std::runtime_error {
 public:
  explicit ValueError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed on-disk data; carries the byte offset where parsing stopped.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& msg, std::size_t byte_offset);
  std::size_t byte_offset() const { return offset_; }

 private:
  std::size_t offset_;
};

class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {

// One value in the dynamic compute graph. Interior nodes keep their inputs
// alive through shared ownership; `backprop` pulls this node's gradient into
// the inputs' gradient buffers.
struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // sized on first use; leaves keep it across sweeps
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backprop;

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  bool is_leaf() const { return inputs.empty(); }
  // Gradient buffer sized to numel; zero-filled the first time.
  std::vector<double>& grad_buf();
};

}  // namespace detail

// Dense 64-bit tensor with an optional gradient slot. Copies share storage
// (shared_ptr semantics), so a Parameter list and the module that owns the
// weights always see the same data and gradient.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor from_data(Shape shape, std::vector<double> data);
  static Tensor scalar(double value);  // shape {1}

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int64_t rank() const;
  int64_t size(int64_t axis) const;
  int64_t numel() const;

  const std::vector<double>& data() const;
  // Direct write access. Only meaningful on leaves (parameter init, optimizer
  // updates, test fixtures); mutating an interior node of a live graph is
  // undefined.
  std::vector<double>& mut_data();
  double item() const;  // requires numel() == 1
  double at(std::initializer_list<int64_t> idx) const;

  Tensor& set_requires_grad(bool rg);  // leaves only
  bool requires_grad() const;

  bool has_grad() const;
  const std::vector<double>& grad() const;
  std::vector<double>& mut_grad();
  double grad_at(std::initializer_list<int64_t> idx) const;
  void zero_grad();

  // Copy of the data with no graph attached.
  Tensor detach() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }

  static Tensor wrap(std::shared_ptr<detail::Node> n) { return Tensor(std::move(n)); }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
  std::shared_ptr<detail::Node> node_;
};

// Builds an op result node. When no input tracks gradients the inputs and the
// closure are dropped, so evaluation-only code builds no graph.
Tensor make_node(Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                 std::function<void(detail::Node&)> backprop, const char* op_name);

// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate across
// calls; interior gradients are reset at the start of each sweep.
void backward(const Tensor& loss);

bool all_finite(const Tensor& t);

int64_t flat_index(const Shape& shape, std::initializer_list<int64_t> idx);

// SPKT dump: magic "SPKT", u32 rank, u32 extents, f64 payload, little-endian.
void write_spkt(std::ostream& os, const Tensor& t);
Tensor read_spkt(std::istream& is);
void save_spkt(const std::string& path, const Tensor& t);
Tensor load_spkt(const std::string& path);

// Named learnable tensor. Copies share storage with the owning module.
struct Parameter {
  std::string name;
  Tensor tensor;
};

}  // namespace vlif
