#include <pybind11/pybind11.h>

#include "fmil/divergence.hpp"

namespace py = pybind11;

PYBIND11_MODULE(_core, m) {
  m.doc() = "divergence-minimization imitation learning core";
  py::enum_<fmil::FDivergenceKind>(m, "FDivergenceKind")
      .value("ReverseKL", fmil::FDivergenceKind::ReverseKL)
      .value("ForwardKL", fmil::FDivergenceKind::ForwardKL)
      .value("JensenShannon", fmil::FDivergenceKind::JensenShannon);
}
