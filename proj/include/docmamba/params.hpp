#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "docmamba/tensor.hpp"

namespace docmamba {

enum class ParamFamily { a_log, skip, conv, projection, bias, table, norm, head };

std::string_view family_name(ParamFamily family);

/// Flat, named view of one parameter tensor. Used by the optimizer,
/// checkpointing and gradient checking, which all treat the model as a
/// list of tensors.
template <typename Scalar>
struct TensorRef {
  std::string name;
  ParamFamily family;
  Scalar* data;
  Index rows;
  Index cols;

  Index size() const { return rows * cols; }
  Eigen::Map<Matrix<Scalar>> map() const { return {data, rows, cols}; }
  // Weight decay applies to matrices only; norms, biases, and skips are excluded.
  bool decays() const {
    return cols > 1 && family != ParamFamily::norm && family != ParamFamily::bias &&
           family != ParamFamily::skip && family != ParamFamily::a_log;
  }
};

template <typename Scalar>
using Inventory = std::vector<TensorRef<Scalar>>;

template <typename Scalar, typename Derived>
void add_tensor(Inventory<Scalar>& out, std::string name, ParamFamily family,
                Eigen::PlainObjectBase<Derived>& t) {
  out.push_back({std::move(name), family, t.data(), t.rows(), t.cols()});
}

}  // namespace docmamba
