#pragma once

// Canonical conic form shared by the subproblem assembler and the solver:
//
//   minimize    c'x
//   subject to  b - A x in K,   K a product of tagged cone blocks.
//
// Supported cones: zero (equalities), nonnegative orthant, second-order,
// rotated second-order (2 x0 x1 >= ||x2:||^2, x0,x1 >= 0), exponential
// (x1 e^{x0/x1} <= x2, x1 > 0 plus closure) and the 3-d power cone
// (x0^alpha x1^(1-alpha) >= |x2|).

#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Sparse>

namespace conoma {

enum class Cone { Zero, NonNeg, Soc, RotatedSoc, Exp, Power };

inline const char* cone_name(Cone c) {
  switch (c) {
    case Cone::Zero: return "zero";
    case Cone::NonNeg: return "nonneg";
    case Cone::Soc: return "soc";
    case Cone::RotatedSoc: return "rsoc";
    case Cone::Exp: return "exp";
    default: return "power";
  }
}

struct ConeBlock {
  Cone cone = Cone::Zero;
  int offset = 0;  // first row in the stacked constraint matrix
  int dim = 0;
  double alpha = 0.0;  // power cone exponent, x0^alpha x1^(1-alpha) >= |x2|
};

class ConeProgram {
 public:
  int num_vars = 0;
  Eigen::VectorXd c;                 // minimize c'x
  double objective_constant = 0.0;   // added when reporting
  bool maximize = false;             // reporting sense of the source problem
  std::vector<ConeBlock> blocks;
  std::vector<Eigen::Triplet<double>> entries;
  std::vector<double> b;
  std::vector<std::string> var_names;  // maps columns back to ResourceState slots

  int rows() const { return static_cast<int>(b.size()); }

  int add_var(const std::string& name) {
    var_names.push_back(name);
    return num_vars++;
  }

  // Opens a cone block of the given dimension; rows are b-initialized to zero.
  int add_block(Cone cone, int dim, double alpha = 0.0) {
    if (dim <= 0) throw std::invalid_argument("ConeProgram: block dimension must be positive");
    if (cone == Cone::Exp && dim != 3) throw std::invalid_argument("ConeProgram: exp cone is 3-d");
    if (cone == Cone::Power) {
      if (dim != 3) throw std::invalid_argument("ConeProgram: power cone is 3-d");
      if (alpha <= 0.0 || alpha >= 1.0)
        throw std::invalid_argument("ConeProgram: power cone exponent must be in (0,1)");
    }
    if ((cone == Cone::Soc && dim < 2) || (cone == Cone::RotatedSoc && dim < 3))
      throw std::invalid_argument("ConeProgram: SOC block too small");
    const int off = rows();
    blocks.push_back({cone, off, dim, alpha});
    b.insert(b.end(), dim, 0.0);
    return off;
  }

  void add_entry(int row, int col, double v) {
    if (col < 0 || col >= num_vars || row < 0 || row >= rows())
      throw std::out_of_range("ConeProgram: entry index out of range");
    if (v != 0.0) entries.emplace_back(row, col, v);
  }

  void set_b(int row, double v) { b.at(row) = v; }

  Eigen::SparseMatrix<double> matrix() const {
    Eigen::SparseMatrix<double> A(rows(), num_vars);
    A.setFromTriplets(entries.begin(), entries.end());
    return A;
  }

  void finalize() const {
    for (const auto& blk : blocks)
      if (blk.offset + blk.dim > rows()) throw std::logic_error("ConeProgram: block out of range");
  }
};

// ---------------------------------------------------------------------------
// Debug serialization: a line-oriented text format, full double precision.
// Also read by the external reference-solver script used in the tests.
// ---------------------------------------------------------------------------

inline void write_cone_program(const ConeProgram& prog, std::ostream& out) {
  auto num = [](double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  out << "conoma-coneprog v1\n";
  out << "vars " << prog.num_vars << "\n";
  out << "maximize " << (prog.maximize ? 1 : 0) << "\n";
  out << "objective_constant " << num(prog.objective_constant) << "\n";
  out << "c";
  for (int j = 0; j < prog.num_vars; ++j) out << " " << num(prog.c(j));
  out << "\n";
  // Group triplets by block for readable diffs.
  Eigen::SparseMatrix<double> A = prog.matrix();
  Eigen::SparseMatrix<double, Eigen::RowMajor> Ar(A);
  for (const auto& blk : prog.blocks) {
    out << "block " << cone_name(blk.cone) << " " << blk.dim;
    if (blk.cone == Cone::Power) out << " " << num(blk.alpha);
    out << "\n";
    out << "b";
    for (int i = 0; i < blk.dim; ++i) out << " " << num(prog.b[blk.offset + i]);
    out << "\n";
    for (int i = 0; i < blk.dim; ++i)
      for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(Ar, blk.offset + i); it;
           ++it)
        out << "A " << i << " " << it.col() << " " << num(it.value()) << "\n";
  }
  out << "end\n";
}

inline std::string cone_program_to_string(const ConeProgram& prog) {
  std::ostringstream ss;
  write_cone_program(prog, ss);
  return ss.str();
}

inline ConeProgram read_cone_program(std::istream& in) {
  ConeProgram prog;
  std::string line;
  if (!std::getline(in, line) || line != "conoma-coneprog v1")
    throw std::runtime_error("read_cone_program: bad header");
  int cur_block_offset = -1;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string tag;
    ss >> tag;
    if (tag == "end") return prog;
    if (tag == "vars") {
      int n = 0;
      ss >> n;
      for (int j = 0; j < n; ++j) prog.add_var("x" + std::to_string(j));
      prog.c = Eigen::VectorXd::Zero(n);
    } else if (tag == "maximize") {
      int m = 0;
      ss >> m;
      prog.maximize = m != 0;
    } else if (tag == "objective_constant") {
      ss >> prog.objective_constant;
    } else if (tag == "c") {
      for (int j = 0; j < prog.num_vars; ++j) ss >> prog.c(j);
    } else if (tag == "block") {
      std::string name;
      int dim = 0;
      double alpha = 0.0;
      ss >> name >> dim;
      Cone cone;
      if (name == "zero") cone = Cone::Zero;
      else if (name == "nonneg") cone = Cone::NonNeg;
      else if (name == "soc") cone = Cone::Soc;
      else if (name == "rsoc") cone = Cone::RotatedSoc;
      else if (name == "exp") cone = Cone::Exp;
      else if (name == "power") { cone = Cone::Power; ss >> alpha; }
      else throw std::runtime_error("read_cone_program: unknown cone '" + name + "'");
      cur_block_offset = prog.add_block(cone, dim, alpha);
    } else if (tag == "b") {
      const auto& blk = prog.blocks.back();
      for (int i = 0; i < blk.dim; ++i) ss >> prog.b[blk.offset + i];
    } else if (tag == "A") {
      int i = 0, j = 0;
      double v = 0.0;
      ss >> i >> j >> v;
      prog.add_entry(cur_block_offset + i, j, v);
    } else {
      throw std::runtime_error("read_cone_program: unknown tag '" + tag + "'");
    }
  }
  throw std::runtime_error("read_cone_program: missing end marker");
}

}  // namespace conoma
