#include "railkd/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <numeric>

#include "railkd/errors.hpp"

namespace railkd {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

using detail::make_result;
using detail::Node;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  }
}

// Accumulate g into the input's gradient when it participates.
template <typename F>
void accumulate(Node& self, std::size_t which, F&& fill) {
  auto& in = *self.inputs[which];
  if (in.requires_grad) fill(in.grad_buffer());
}

std::size_t last_dim(const Tensor& x) {
  if (x.rank() == 0) throw DimensionError("operation needs rank >= 1, got a scalar");
  return x.shape().back();
}

void check_finite(std::span<const double> v, const char* op) {
  for (double x : v) {
    if (!std::isfinite(x)) throw NumericError(std::string(op) + ": non-finite input");
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      accumulate(self, k, [&](std::span<double> g) {
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      });
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    accumulate(self, 0, [&](std::span<double> g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
    accumulate(self, 1, [&](std::span<double> g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    });
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    const auto& x = self.inputs[0]->data;
    const auto& y = self.inputs[1]->data;
    accumulate(self, 0, [&](std::span<double> g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * y[i];
    });
    accumulate(self, 1, [&](std::span<double> g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * x[i];
    });
  });
}

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (auto& v : out) v *= factor;
  return make_result(x.shape(), std::move(out), {x}, [factor](Node& self) {
    accumulate(self, 0, [&](std::span<double> g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
    });
  });
}

Tensor add_scalar(const Tensor& x, double value) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (auto& v : out) v += value;
  return make_result(x.shape(), std::move(out), {x}, [](Node& self) {
    accumulate(self, 0, [&](std::span<double> g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
  });
}

Tensor square(const Tensor& x) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (auto& v : out) v *= v;
  return make_result(x.shape(), std::move(out), {x}, [](Node& self) {
    const auto& in = self.inputs[0]->data;
    accumulate(self, 0, [&](std::span<double> g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += 2.0 * in[i] * self.grad[i];
    });
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  const auto d = last_dim(x);
  if (bias.rank() != 1 || bias.dim(0) != d) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " does not fit " +
                         shape_str(x.shape()));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  auto b = bias.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i % d];
  return make_result(x.shape(), std::move(out), {x, bias}, [d](Node& self) {
    accumulate(self, 0, [&](std::span<double> g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
    accumulate(self, 1, [&](std::span<double> g) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % d] += self.grad[i];
    });
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + shape_str(a.shape()) + " by " +
                         shape_str(b.shape()));
  }
  const auto p = a.dim(0), q = a.dim(1), r = b.dim(1);
  std::vector<double> out(p * r);
  MutMap(out.data(), p, r).noalias() =
      ConstMap(a.data().data(), p, q) * ConstMap(b.data().data(), q, r);
  return make_result({p, r}, std::move(out), {a, b}, [p, q, r](Node& self) {
    ConstMap dc(self.grad.data(), p, r);
    accumulate(self, 0, [&](std::span<double> g) {
      MutMap(g.data(), p, q).noalias() +=
          dc * ConstMap(self.inputs[1]->data.data(), q, r).transpose();
    });
    accumulate(self, 1, [&](std::span<double> g) {
      MutMap(g.data(), q, r).noalias() +=
          ConstMap(self.inputs[0]->data.data(), p, q).transpose() * dc;
    });
  });
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) {
    throw DimensionError("bmm: cannot multiply " + shape_str(a.shape()) + " by " +
                         shape_str(b.shape()));
  }
  const auto nb = a.dim(0), p = a.dim(1), q = a.dim(2), r = b.dim(2);
  std::vector<double> out(nb * p * r);
  for (std::size_t i = 0; i < nb; ++i) {
    MutMap(out.data() + i * p * r, p, r).noalias() =
        ConstMap(a.data().data() + i * p * q, p, q) *
        ConstMap(b.data().data() + i * q * r, q, r);
  }
  return make_result({nb, p, r}, std::move(out), {a, b}, [nb, p, q, r](Node& self) {
    const double* ad = self.inputs[0]->data.data();
    const double* bd = self.inputs[1]->data.data();
    accumulate(self, 0, [&](std::span<double> g) {
      for (std::size_t i = 0; i < nb; ++i) {
        MutMap(g.data() + i * p * q, p, q).noalias() +=
            ConstMap(self.grad.data() + i * p * r, p, r) *
            ConstMap(bd + i * q * r, q, r).transpose();
      }
    });
    accumulate(self, 1, [&](std::span<double> g) {
      for (std::size_t i = 0; i < nb; ++i) {
        MutMap(g.data() + i * q * r, q, r).noalias() +=
            ConstMap(ad + i * p * q, p, q).transpose() *
            ConstMap(self.grad.data() + i * p * r, p, r);
      }
    });
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  const auto in = last_dim(x);
  if (weight.rank() != 2 || weight.dim(0) != in) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " does not fit weight " +
                         shape_str(weight.shape()));
  }
  const auto out_dim = weight.dim(1);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != out_dim)) {
    throw DimensionError("linear: bias " + shape_str(bias.shape()) + " does not fit weight " +
                         shape_str(weight.shape()));
  }
  const auto rows = x.numel() / in;
  Shape out_shape = x.shape();
  out_shape.back() = out_dim;
  std::vector<double> out(rows * out_dim);
  MutMap om(out.data(), rows, out_dim);
  om.noalias() = ConstMap(x.data().data(), rows, in) * ConstMap(weight.data().data(), in, out_dim);
  if (bias.defined()) {
    om.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.data().data(), out_dim);
  }
  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_result(std::move(out_shape), std::move(out), std::move(inputs),
                     [rows, in, out_dim](Node& self) {
                       ConstMap dy(self.grad.data(), rows, out_dim);
                       accumulate(self, 0, [&](std::span<double> g) {
                         MutMap(g.data(), rows, in).noalias() +=
                             dy * ConstMap(self.inputs[1]->data.data(), in, out_dim).transpose();
                       });
                       accumulate(self, 1, [&](std::span<double> g) {
                         MutMap(g.data(), in, out_dim).noalias() +=
                             ConstMap(self.inputs[0]->data.data(), rows, in).transpose() * dy;
                       });
                       if (self.inputs.size() > 2) {
                         accumulate(self, 2, [&](std::span<double> g) {
                           // Row order fixed so the sum is bit-stable across buffer alignments.
                           for (std::size_t r = 0; r < rows; ++r) {
                             const double* row = self.grad.data() + r * out_dim;
                             for (std::size_t j = 0; j < out_dim; ++j) g[j] += row[j];
                           }
                         });
                       }
                     });
}

Tensor transpose(const Tensor& x) {
  if (x.rank() != 2 && x.rank() != 3) {
    throw DimensionError("transpose expects rank 2 or 3, got " + shape_str(x.shape()));
  }
  const std::size_t nb = x.rank() == 3 ? x.dim(0) : 1;
  const auto p = x.dim(-2), q = x.dim(-1);
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < nb; ++i) {
    MutMap(out.data() + i * p * q, q, p) = ConstMap(x.data().data() + i * p * q, p, q).transpose();
  }
  Shape s = x.shape();
  std::swap(s[s.size() - 1], s[s.size() - 2]);
  return make_result(std::move(s), std::move(out), {x}, [nb, p, q](Node& self) {
    accumulate(self, 0, [&](std::span<double> g) {
      for (std::size_t i = 0; i < nb; ++i) {
        MutMap(g.data() + i * p * q, p, q) +=
            ConstMap(self.grad.data() + i * p * q, q, p).transpose();
      }
    });
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result(std::move(shape), std::move(out), {x}, [](Node& self) {
    accumulate(self, 0, [&](std::span<double> g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
  });
}

Tensor permute(const Tensor& x, std::span<const std::size_t> axes) {
  const auto r = x.rank();
  if (axes.size() != r) throw DimensionError("permute: axis count does not match rank");
  std::vector<bool> used(r, false);
  for (auto a : axes) {
    if (a >= r || used[a]) throw DimensionError("permute: invalid axis list");
    used[a] = true;
  }
  const auto& in_shape = x.shape();
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * in_shape[i];
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = in_shape[axes[i]];

  const auto n = x.numel();
  auto source = std::make_shared<std::vector<std::size_t>>(n);
  std::vector<std::size_t> counter(r, 0);
  for (std::size_t o = 0; o < n; ++o) {
    std::size_t src = 0;
    for (std::size_t i = 0; i < r; ++i) src += counter[i] * in_strides[axes[i]];
    (*source)[o] = src;
    for (std::size_t i = r; i-- > 0;) {
      if (++counter[i] < out_shape[i]) break;
      counter[i] = 0;
    }
  }
  std::vector<double> out(n);
  auto xd = x.data();
  for (std::size_t o = 0; o < n; ++o) out[o] = xd[(*source)[o]];
  return make_result(std::move(out_shape), std::move(out), {x}, [source](Node& self) {
    accumulate(self, 0, [&](std::span<double> g) {
      for (std::size_t o = 0; o < self.grad.size(); ++o) g[(*source)[o]] += self.grad[o];
    });
  });
}

Tensor softmax(const Tensor& x) {
  const auto k = last_dim(x);
  check_finite(x.data(), "softmax");
  const auto rows = x.numel() / k;
  std::vector<double> out(x.numel());
  auto xd = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xd.data() + r * k;
    double* o = out.data() + r * k;
    const double mx = *std::max_element(in, in + k);
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += (o[j] = std::exp(in[j] - mx));
    for (std::size_t j = 0; j < k; ++j) o[j] /= s;
  }
  return make_result(x.shape(), std::move(out), {x}, [rows, k](Node& self) {
    accumulate(self, 0, [&](std::span<double> g) {
      for (std::size_t r = 0; r < rows; ++r) {
        const double* y = self.data.data() + r * k;
        const double* dy = self.grad.data() + r * k;
        double dot = 0.0;
        for (std::size_t j = 0; j < k; ++j) dot += y[j] * dy[j];
        for (std::size_t j = 0; j < k; ++j) g[r * k + j] += y[j] * (dy[j] - dot);
      }
    });
  });
}

Tensor log_softmax(const Tensor& x) {
  const auto k = last_dim(x);
  check_finite(x.data(), "log_softmax");
  const auto rows = x.numel() / k;
  std::vector<double> out(x.numel());
  auto xd = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xd.data() + r * k;
    const double mx = *std::max_element(in, in + k);
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(in[j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < k; ++j) out[r * k + j] = in[j] - lse;
  }
  return make_result(x.shape(), std::move(out), {x}, [rows, k](Node& self) {
    accumulate(self, 0, [&](std::span<double> g) {
      for (std::size_t r = 0; r < rows; ++r) {
        const double* y = self.data.data() + r * k;
        const double* dy = self.grad.data() + r * k;
        double total = 0.0;
        for (std::size_t j = 0; j < k; ++j) total += dy[j];
        for (std::size_t j = 0; j < k; ++j) g[r * k + j] += dy[j] - std::exp(y[j]) * total;
      }
    });
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const auto d = last_dim(x);
  if (gain.shape() != Shape{d} || bias.shape() != Shape{d}) {
    throw DimensionError("layer_norm: gain/bias must be [" + std::to_string(d) + "]");
  }
  const auto rows = x.numel() / d;
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto rstd = std::make_shared<std::vector<double>>(rows);
  std::vector<double> out(x.numel());
  auto xd = x.data();
  auto gd = gain.data();
  auto bd = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xd.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += in[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= static_cast<double>(d);
    const double rs = 1.0 / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (in[j] - mu) * rs;
      (*xhat)[r * d + j] = h;
      out[r * d + j] = h * gd[j] + bd[j];
    }
  }
  return make_result(x.shape(), std::move(out), {x, gain, bias}, [rows, d, xhat, rstd](Node& self) {
    const auto& gd = self.inputs[1]->data;
    accumulate(self, 0, [&](std::span<double> g) {
      std::vector<double> dh(d);
      for (std::size_t r = 0; r < rows; ++r) {
        const double* dy = self.grad.data() + r * d;
        const double* h = xhat->data() + r * d;
        double m1 = 0.0, m2 = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          dh[j] = dy[j] * gd[j];
          m1 += dh[j];
          m2 += dh[j] * h[j];
        }
        m1 /= static_cast<double>(d);
        m2 /= static_cast<double>(d);
        for (std::size_t j = 0; j < d; ++j) g[r * d + j] += (*rstd)[r] * (dh[j] - m1 - h[j] * m2);
      }
    });
    accumulate(self, 1, [&](std::span<double> g) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % d] += self.grad[i] * (*xhat)[i];
    });
    accumulate(self, 2, [&](std::span<double> g) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % d] += self.grad[i];
    });
  });
}

Tensor gelu(const Tensor& x) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  std::vector<double> out(x.numel());
  auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = xd[i];
    out[i] = 0.5 * v * (1.0 + std::tanh(c * (v + 0.044715 * v * v * v)));
  }
  return make_result(x.shape(), std::move(out), {x}, [](Node& self) {
    const auto& in = self.inputs[0]->data;
    accumulate(self, 0, [&](std::span<double> g) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double v = in[i];
        const double t = std::tanh(c * (v + 0.044715 * v * v * v));
        const double dt = (1.0 - t * t) * c * (1.0 + 3.0 * 0.044715 * v * v);
        g[i] += self.grad[i] * (0.5 * (1.0 + t) + 0.5 * v * dt);
      }
    });
  });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (auto& v : out) v = std::max(v, 0.0);
  return make_result(x.shape(), std::move(out), {x}, [](Node& self) {
    const auto& in = self.inputs[0]->data;
    accumulate(self, 0, [&](std::span<double> g) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (in[i] > 0.0) g[i] += self.grad[i];
      }
    });
  });
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
  if (table.rank() != 2) throw DimensionError("embedding: table must be rank 2");
  if (ids.empty()) throw DataError("embedding: empty id list");
  const auto vocab = table.dim(0), d = table.dim(1);
  auto rows = std::make_shared<std::vector<int>>(ids.begin(), ids.end());
  std::vector<double> out(ids.size() * d);
  auto td = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const int id = ids[i];
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw DataError("embedding: id " + std::to_string(id) + " outside [0, " +
                      std::to_string(vocab) + ")");
    }
    std::copy_n(td.data() + static_cast<std::size_t>(id) * d, d, out.data() + i * d);
  }
  return make_result({ids.size(), d}, std::move(out), {table}, [rows, d](Node& self) {
    accumulate(self, 0, [&](std::span<double> g) {
      for (std::size_t i = 0; i < rows->size(); ++i) {
        double* dst = g.data() + static_cast<std::size_t>((*rows)[i]) * d;
        const double* src = self.grad.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
      }
    });
  });
}

Tensor sum(const Tensor& x) {
  auto xd = x.data();
  const double total = std::accumulate(xd.begin(), xd.end(), 0.0);
  return make_result({}, {total}, {x}, [](Node& self) {
    accumulate(self, 0, [&](std::span<double> g) {
      for (auto& v : g) v += self.grad[0];
    });
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor sum_axis(const Tensor& x, int axis) {
  const int r = static_cast<int>(x.rank());
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) throw DimensionError("sum_axis: axis out of range for " + shape_str(x.shape()));
  const auto& s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < a; ++i) outer *= s[static_cast<std::size_t>(i)];
  for (int i = a + 1; i < r; ++i) inner *= s[static_cast<std::size_t>(i)];
  const auto n = s[static_cast<std::size_t>(a)];
  Shape out_shape;
  for (int i = 0; i < r; ++i) {
    if (i != a) out_shape.push_back(s[static_cast<std::size_t>(i)]);
  }
  std::vector<double> out(outer * inner, 0.0);
  auto xd = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t k = 0; k < n; ++k) {
      const double* src = xd.data() + (o * n + k) * inner;
      double* dst = out.data() + o * inner;
      for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  }
  return make_result(std::move(out_shape), std::move(out), {x}, [outer, n, inner](Node& self) {
    accumulate(self, 0, [&](std::span<double> g) {
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t k = 0; k < n; ++k) {
          double* dst = g.data() + (o * n + k) * inner;
          const double* src = self.grad.data() + o * inner;
          for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
        }
      }
    });
  });
}

Tensor mean_axis(const Tensor& x, int axis) {
  return scale(sum_axis(x, axis), 1.0 / static_cast<double>(x.dim(axis)));
}

Tensor concat(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  const auto& first = parts.front().shape();
  if (first.empty()) throw DimensionError("concat: scalars cannot be concatenated");
  const std::size_t outer = parts.front().numel() / first.back();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    if (s.size() != first.size() || !std::equal(s.begin(), s.end() - 1, first.begin())) {
      throw DimensionError("concat: leading dims differ, " + shape_str(first) + " vs " +
                           shape_str(s));
    }
    widths.push_back(s.back());
    total += s.back();
  }
  std::vector<double> out(outer * total);
  std::size_t offset = 0;
  for (std::size_t t = 0; t < parts.size(); ++t) {
    auto pd = parts[t].data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(pd.data() + o * widths[t], widths[t], out.data() + o * total + offset);
    }
    offset += widths[t];
  }
  Shape out_shape = first;
  out_shape.back() = total;
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return make_result(std::move(out_shape), std::move(out), std::move(inputs),
                     [outer, total, widths](Node& self) {
                       std::size_t offset = 0;
                       for (std::size_t t = 0; t < widths.size(); ++t) {
                         accumulate(self, t, [&](std::span<double> g) {
                           for (std::size_t o = 0; o < outer; ++o) {
                             const double* src = self.grad.data() + o * total + offset;
                             double* dst = g.data() + o * widths[t];
                             for (std::size_t j = 0; j < widths[t]; ++j) dst[j] += src[j];
                           }
                         });
                         offset += widths[t];
                       }
                     });
}

Tensor stack(std::span<const Tensor> parts, int axis) {
  if (parts.empty()) throw ContractError("stack: no inputs");
  const auto& s = parts.front().shape();
  const int r = static_cast<int>(s.size());
  const int a = axis < 0 ? axis + r + 1 : axis;
  if (a < 0 || a > r) throw DimensionError("stack: axis out of range");
  for (const auto& p : parts) {
    if (p.shape() != s) {
      throw DimensionError("stack: shapes differ, " + shape_str(s) + " vs " + shape_str(p.shape()));
    }
  }
  std::size_t outer = 1;
  for (int i = 0; i < a; ++i) outer *= s[static_cast<std::size_t>(i)];
  const std::size_t inner = shape_numel(s) / outer;
  const std::size_t k = parts.size();
  std::vector<double> out(outer * k * inner);
  for (std::size_t t = 0; t < k; ++t) {
    auto pd = parts[t].data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(pd.data() + o * inner, inner, out.data() + (o * k + t) * inner);
    }
  }
  Shape out_shape = s;
  out_shape.insert(out_shape.begin() + a, k);
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return make_result(std::move(out_shape), std::move(out), std::move(inputs),
                     [outer, k, inner](Node& self) {
                       for (std::size_t t = 0; t < k; ++t) {
                         accumulate(self, t, [&](std::span<double> g) {
                           for (std::size_t o = 0; o < outer; ++o) {
                             const double* src = self.grad.data() + (o * k + t) * inner;
                             double* dst = g.data() + o * inner;
                             for (std::size_t j = 0; j < inner; ++j) dst[j] += src[j];
                           }
                         });
                       }
                     });
}

Tensor l2_normalize(const Tensor& x, double eps) {
  const auto k = last_dim(x);
  const auto rows = x.numel() / k;
  auto norms = std::make_shared<std::vector<double>>(rows);
  std::vector<double> out(x.numel());
  auto xd = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double ss = 0.0;
    for (std::size_t j = 0; j < k; ++j) ss += xd[r * k + j] * xd[r * k + j];
    const double n = std::sqrt(ss);
    if (!(n > eps)) {
      throw NumericError("l2_normalize: row " + std::to_string(r) + " has norm " +
                         std::to_string(n) + " (degenerate input)");
    }
    (*norms)[r] = n;
    for (std::size_t j = 0; j < k; ++j) out[r * k + j] = xd[r * k + j] / n;
  }
  return make_result(x.shape(), std::move(out), {x}, [rows, k, norms](Node& self) {
    accumulate(self, 0, [&](std::span<double> g) {
      for (std::size_t r = 0; r < rows; ++r) {
        const double* y = self.data.data() + r * k;
        const double* dy = self.grad.data() + r * k;
        double dot = 0.0;
        for (std::size_t j = 0; j < k; ++j) dot += y[j] * dy[j];
        for (std::size_t j = 0; j < k; ++j) g[r * k + j] += (dy[j] - y[j] * dot) / (*norms)[r];
      }
    });
  });
}

Tensor pick(const Tensor& x, std::span<const int> index) {
  if (x.rank() != 2 || x.dim(0) != index.size()) {
    throw DimensionError("pick: expected [" + std::to_string(index.size()) + " x C], got " +
                         shape_str(x.shape()));
  }
  const auto n = x.dim(0), c = x.dim(1);
  auto cols = std::make_shared<std::vector<int>>(index.begin(), index.end());
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (index[i] < 0 || static_cast<std::size_t>(index[i]) >= c) {
      throw DataError("pick: index " + std::to_string(index[i]) + " outside [0, " +
                      std::to_string(c) + ")");
    }
    out[i] = x.data()[i * c + static_cast<std::size_t>(index[i])];
  }
  return make_result({n}, std::move(out), {x}, [c, cols](Node& self) {
    accumulate(self, 0, [&](std::span<double> g) {
      for (std::size_t i = 0; i < cols->size(); ++i) {
        g[i * c + static_cast<std::size_t>((*cols)[i])] += self.grad[i];
      }
    });
  });
}

}  // namespace railkd
