#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "densmed/util.hpp"

namespace densmed {

// One subject: follow-up time, event indicator (1 = event, 0 = censored),
// group indicator (1 = comparison group, 0 = reference group), continuous
// mediator, and a level index per covariate factor.
struct SubjectRecord {
  double time = 0.0;
  int event = 0;
  int group = 0;
  double mediator = 0.0;
  std::vector<int> covariates;
};

struct Factor {
  std::string name;
  std::vector<std::string> levels;  // levels[0] is the reference level
};

struct FactorSchema {
  std::vector<Factor> factors;

  int n_factors() const { return static_cast<int>(factors.size()); }

  int n_strata() const {
    int n = 1;
    for (const auto& f : factors) n *= static_cast<int>(f.levels.size());
    return n;
  }

  int n_dummies() const {
    int n = 0;
    for (const auto& f : factors) n += static_cast<int>(f.levels.size()) - 1;
    return n;
  }

  int level_index(int factor, std::string_view level) const {
    const auto& ls = factors.at(factor).levels;
    for (std::size_t i = 0; i < ls.size(); ++i)
      if (ls[i] == level) return static_cast<int>(i);
    return -1;
  }
};

// One combination of covariate factor levels. `index` is the position in the
// deterministic enumeration order (first factor slowest, last fastest).
struct CovariateStratum {
  int index = 0;
  std::vector<int> levels;

  std::string label(const FactorSchema& schema) const {
    if (levels.empty()) return "(all)";
    std::string s;
    for (std::size_t f = 0; f < levels.size(); ++f) {
      if (f) s += ",";
      s += schema.factors[f].name + "=" + schema.factors[f].levels[levels[f]];
    }
    return s;
  }
};

inline std::vector<CovariateStratum> enumerate_strata(const FactorSchema& schema) {
  std::vector<CovariateStratum> out;
  int n = schema.n_strata();
  out.reserve(n);
  for (int idx = 0; idx < n; ++idx) {
    CovariateStratum s;
    s.index = idx;
    s.levels.resize(schema.n_factors());
    int rem = idx;
    for (int f = schema.n_factors() - 1; f >= 0; --f) {
      int sz = static_cast<int>(schema.factors[f].levels.size());
      s.levels[f] = rem % sz;
      rem /= sz;
    }
    out.push_back(std::move(s));
  }
  return out;
}

inline int stratum_index(const std::vector<int>& levels, const FactorSchema& schema) {
  require(static_cast<int>(levels.size()) == schema.n_factors(),
          "stratum_index: level count does not match schema");
  int idx = 0;
  for (int f = 0; f < schema.n_factors(); ++f) {
    int sz = static_cast<int>(schema.factors[f].levels.size());
    require(levels[f] >= 0 && levels[f] < sz, "stratum_index: level out of range");
    idx = idx * sz + levels[f];
  }
  return idx;
}

struct Dataset {
  FactorSchema schema;
  std::vector<SubjectRecord> records;
  std::vector<std::string> warnings;
};

// Number of cutpoints at or below m; category 0 is everything below the
// first cutpoint.
inline int categorize(double m, std::span<const double> cutpoints) {
  int c = 0;
  for (double cp : cutpoints)
    if (m >= cp) ++c;
  return c;
}

// How the mediator enters a design: not at all, as centered polynomial
// terms, or as category indicators against cutpoints.
struct MediatorBasis {
  enum class Kind { none, polynomial, categorical };

  Kind kind = Kind::none;
  int degree = 0;
  double centering = 0.0;
  std::vector<double> cutpoints;

  static MediatorBasis none() { return {}; }

  static MediatorBasis polynomial(int degree, double centering = 0.0) {
    require(degree >= 1, "MediatorBasis::polynomial: degree must be >= 1");
    MediatorBasis b;
    b.kind = Kind::polynomial;
    b.degree = degree;
    b.centering = centering;
    return b;
  }

  static MediatorBasis categorical(std::vector<double> cutpoints) {
    require(!cutpoints.empty(), "MediatorBasis::categorical: need at least one cutpoint");
    require(std::is_sorted(cutpoints.begin(), cutpoints.end()),
            "MediatorBasis::categorical: cutpoints must be increasing");
    MediatorBasis b;
    b.kind = Kind::categorical;
    b.cutpoints = std::move(cutpoints);
    return b;
  }

  int term_count() const {
    switch (kind) {
      case Kind::none: return 0;
      case Kind::polynomial: return degree;
      case Kind::categorical: return static_cast<int>(cutpoints.size());
    }
    return 0;
  }

  // j in [0, term_count())
  double term(double m, int j) const {
    if (kind == Kind::polynomial) return std::pow(m - centering, j + 1);
    return categorize(m, cutpoints) == j + 1 ? 1.0 : 0.0;
  }

  std::string term_name(int j) const {
    if (kind == Kind::polynomial) return j == 0 ? "med" : "med^" + std::to_string(j + 1);
    return "med_cat" + std::to_string(j + 1);
  }
};

// Declarative description of a regression design. Column order is fixed:
// intercept, group, mediator terms, group x mediator terms, covariate
// dummies, group x covariate dummies, mediator x covariate dummies.
struct DesignMatrixSpec {
  FactorSchema schema;
  bool intercept = true;
  bool group_main = true;
  MediatorBasis basis;
  bool group_mediator = false;
  std::vector<int> group_covariate_factors;    // factor indices with a group interaction
  std::vector<int> mediator_covariate_factors; // factor indices with mediator interactions

  void validate() const {
    require(!group_mediator || (group_main && basis.kind != MediatorBasis::Kind::none),
            "DesignMatrixSpec: group x mediator interaction needs both main effects");
    for (int f : group_covariate_factors) {
      require(group_main, "DesignMatrixSpec: group x covariate interaction needs the group main effect");
      require(f >= 0 && f < schema.n_factors(), "DesignMatrixSpec: bad factor index in group interactions");
    }
    for (int f : mediator_covariate_factors) {
      require(basis.kind != MediatorBasis::Kind::none,
              "DesignMatrixSpec: mediator x covariate interaction needs mediator terms");
      require(f >= 0 && f < schema.n_factors(), "DesignMatrixSpec: bad factor index in mediator interactions");
    }
  }
};

// Resolved column offsets for a DesignMatrixSpec.
struct ColumnLayout {
  int n_cols = 0;
  int intercept_col = -1;
  int group_col = -1;
  int med_first = -1;      // q consecutive columns
  int group_med_first = -1;
  int q = 0;
  std::vector<int> cov_first;                 // per factor, -1 if absent from schema
  std::vector<int> group_cov_first;           // per factor, -1 unless interacted
  std::vector<std::vector<int>> med_cov_first;  // [term j][factor], -1 unless interacted
  std::vector<std::string> names;

  static ColumnLayout build(const DesignMatrixSpec& spec) {
    spec.validate();
    ColumnLayout lay;
    lay.q = spec.basis.term_count();
    int c = 0;
    auto push = [&](const std::string& name) {
      lay.names.push_back(name);
      return c++;
    };
    if (spec.intercept) lay.intercept_col = push("intercept");
    if (spec.group_main) lay.group_col = push("group");
    if (lay.q > 0) {
      lay.med_first = c;
      for (int j = 0; j < lay.q; ++j) push(spec.basis.term_name(j));
    }
    if (spec.group_mediator) {
      lay.group_med_first = c;
      for (int j = 0; j < lay.q; ++j) push("group:" + spec.basis.term_name(j));
    }
    int nf = spec.schema.n_factors();
    lay.cov_first.assign(nf, -1);
    for (int f = 0; f < nf; ++f) {
      const auto& fac = spec.schema.factors[f];
      lay.cov_first[f] = c;
      for (std::size_t l = 1; l < fac.levels.size(); ++l) push(fac.name + "=" + fac.levels[l]);
    }
    lay.group_cov_first.assign(nf, -1);
    for (int f : spec.group_covariate_factors) {
      const auto& fac = spec.schema.factors[f];
      lay.group_cov_first[f] = c;
      for (std::size_t l = 1; l < fac.levels.size(); ++l)
        push("group:" + fac.name + "=" + fac.levels[l]);
    }
    lay.med_cov_first.assign(lay.q, std::vector<int>(nf, -1));
    for (int j = 0; j < lay.q; ++j) {
      for (int f : spec.mediator_covariate_factors) {
        const auto& fac = spec.schema.factors[f];
        lay.med_cov_first[j][f] = c;
        for (std::size_t l = 1; l < fac.levels.size(); ++l)
          push(spec.basis.term_name(j) + ":" + fac.name + "=" + fac.levels[l]);
      }
    }
    lay.n_cols = c;
    return lay;
  }
};

inline Eigen::RowVectorXd expand_design(int group, double mediator,
                                        const std::vector<int>& levels,
                                        const DesignMatrixSpec& spec,
                                        const ColumnLayout& lay) {
  Eigen::RowVectorXd x = Eigen::RowVectorXd::Zero(lay.n_cols);
  if (lay.intercept_col >= 0) x(lay.intercept_col) = 1.0;
  if (lay.group_col >= 0) x(lay.group_col) = group;
  for (int j = 0; j < lay.q; ++j) {
    double t = spec.basis.term(mediator, j);
    x(lay.med_first + j) = t;
    if (lay.group_med_first >= 0) x(lay.group_med_first + j) = group * t;
  }
  int nf = spec.schema.n_factors();
  require(static_cast<int>(levels.size()) == nf, "expand_design: covariate count mismatch");
  for (int f = 0; f < nf; ++f) {
    int lvl = levels[f];
    require(lvl >= 0 && lvl < static_cast<int>(spec.schema.factors[f].levels.size()),
            "expand_design: covariate level out of range");
    if (lvl == 0) continue;
    x(lay.cov_first[f] + lvl - 1) = 1.0;
    if (lay.group_cov_first[f] >= 0) x(lay.group_cov_first[f] + lvl - 1) = group;
    for (int j = 0; j < lay.q; ++j)
      if (lay.med_cov_first[j][f] >= 0)
        x(lay.med_cov_first[j][f] + lvl - 1) = spec.basis.term(mediator, j);
  }
  return x;
}

inline Eigen::RowVectorXd expand_design(const SubjectRecord& r, const DesignMatrixSpec& spec,
                                        const ColumnLayout& lay) {
  return expand_design(r.group, r.mediator, r.covariates, spec, lay);
}

inline Eigen::MatrixXd design_matrix(std::span<const SubjectRecord> records,
                                     const DesignMatrixSpec& spec, const ColumnLayout& lay) {
  Eigen::MatrixXd x(records.size(), lay.n_cols);
  for (std::size_t i = 0; i < records.size(); ++i)
    x.row(static_cast<Eigen::Index>(i)) = expand_design(records[i], spec, lay);
  return x;
}

enum class IntervalKind { credible, bootstrap };

struct IntervalSummary {
  double point = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  double level = 0.95;
  IntervalKind kind = IntervalKind::credible;
};

// ---- dataset CSV ----------------------------------------------------------
//
// Header: time,event,group,mediator[,factor...]. Any columns after the four
// fixed ones are covariate factors. If no schema is supplied, factor levels
// are collected from the file and sorted, so the schema does not depend on
// row order.

inline Dataset load_dataset(const std::string& path,
                            const std::optional<FactorSchema>& schema = std::nullopt) {
  std::ifstream in(path);
  if (!in) fail("cannot open dataset file '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) fail("dataset file '" + path + "' is empty (no header)");
  auto header = split(trim(line), ',');
  require(header.size() >= 4, "dataset header needs at least time,event,group,mediator");
  const char* expect[] = {"time", "event", "group", "mediator"};
  for (int i = 0; i < 4; ++i)
    require(std::string(trim(header[i])) == expect[i],
            std::string("dataset header column ") + std::to_string(i + 1) + " must be '" +
                expect[i] + "', got '" + std::string(trim(header[i])) + "'");
  int nf = static_cast<int>(header.size()) - 4;

  Dataset ds;
  if (schema) {
    require(schema->n_factors() == nf, "supplied schema has " +
                                           std::to_string(schema->n_factors()) +
                                           " factors but file has " + std::to_string(nf));
    for (int f = 0; f < nf; ++f)
      require(schema->factors[f].name == std::string(trim(header[4 + f])),
              "schema factor '" + schema->factors[f].name + "' does not match file column '" +
                  std::string(trim(header[4 + f])) + "'");
    ds.schema = *schema;
  } else {
    ds.schema.factors.resize(nf);
    for (int f = 0; f < nf; ++f) ds.schema.factors[f].name = std::string(trim(header[4 + f]));
  }

  std::vector<std::vector<std::string>> raw_levels(nf);
  long row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    auto cells = split(line, ',');
    if (cells.size() != header.size())
      fail("row " + std::to_string(row) + ": expected " + std::to_string(header.size()) +
           " columns, got " + std::to_string(cells.size()));
    SubjectRecord r;
    std::string where = "row " + std::to_string(row);
    r.time = parse_double(cells[0], where + " time");
    if (!(r.time > 0.0) || !std::isfinite(r.time)) fail(where + ": time must be positive and finite");
    long ev = parse_long(cells[1], where + " event");
    if (ev != 0 && ev != 1) fail(where + ": event must be 0 or 1");
    r.event = static_cast<int>(ev);
    long g = parse_long(cells[2], where + " group");
    if (g != 0 && g != 1) fail(where + ": group must be 0 or 1");
    r.group = static_cast<int>(g);
    r.mediator = parse_double(cells[3], where + " mediator");
    if (!std::isfinite(r.mediator)) fail(where + ": mediator must be finite");
    r.covariates.resize(nf);
    for (int f = 0; f < nf; ++f) {
      std::string lvl(trim(cells[4 + f]));
      if (lvl.empty()) fail(where + ": empty level for factor '" + ds.schema.factors[f].name + "'");
      if (schema) {
        int li = ds.schema.level_index(f, lvl);
        if (li < 0)
          fail(where + ": level '" + lvl + "' not in schema for factor '" +
               ds.schema.factors[f].name + "'");
        r.covariates[f] = li;
      } else {
        auto& seen = raw_levels[f];
        auto it = std::find(seen.begin(), seen.end(), lvl);
        if (it == seen.end()) {
          seen.push_back(lvl);
          r.covariates[f] = static_cast<int>(seen.size()) - 1;
        } else {
          r.covariates[f] = static_cast<int>(it - seen.begin());
        }
      }
    }
    ds.records.push_back(std::move(r));
  }

  if (!schema) {
    for (int f = 0; f < nf; ++f) {
      std::vector<std::string> sorted = raw_levels[f];
      std::sort(sorted.begin(), sorted.end());
      ds.schema.factors[f].levels = sorted;
      std::vector<int> remap(raw_levels[f].size());
      for (std::size_t i = 0; i < raw_levels[f].size(); ++i) {
        auto it = std::find(sorted.begin(), sorted.end(), raw_levels[f][i]);
        remap[i] = static_cast<int>(it - sorted.begin());
      }
      for (auto& r : ds.records) r.covariates[f] = remap[r.covariates[f]];
    }
  }

  if (ds.records.empty()) ds.warnings.push_back("dataset '" + path + "' has a header but no rows");
  return ds;
}

inline void write_dataset(const std::string& path, const Dataset& ds) {
  std::ofstream out(path);
  if (!out) fail("cannot write dataset file '" + path + "'");
  out << "time,event,group,mediator";
  for (const auto& f : ds.schema.factors) out << "," << f.name;
  out << "\n";
  for (const auto& r : ds.records) {
    out << format_double(r.time) << "," << r.event << "," << r.group << ","
        << format_double(r.mediator);
    for (std::size_t f = 0; f < r.covariates.size(); ++f)
      out << "," << ds.schema.factors[f].levels[r.covariates[f]];
    out << "\n";
  }
}

}  // namespace densmed
