#pragma once

// Variables, values, noise models and the factor interface.

#include <Eigen/Dense>

#include <compare>
#include <map>
#include <memory>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mbfg/errors.hpp"
#include "mbfg/mech_model.hpp"

namespace mbfg {

enum class VarKind : int { q = 0, dq, ddq, z, dz, ddz, Q };

inline const char* to_string(VarKind k) {
  switch (k) {
    case VarKind::q: return "q";
    case VarKind::dq: return "dq";
    case VarKind::ddq: return "ddq";
    case VarKind::z: return "z";
    case VarKind::dz: return "dz";
    case VarKind::ddz: return "ddz";
    case VarKind::Q: return "Q";
  }
  return "?";
}

/// Ordered by (timestep, kind).
struct VariableKey {
  int timestep = 0;
  VarKind kind = VarKind::q;

  VariableKey() = default;
  VariableKey(VarKind k, int t) : timestep(t), kind(k) {}
  auto operator<=>(const VariableKey&) const = default;
  bool operator==(const VariableKey&) const = default;

  std::string str() const { return std::string(to_string(kind)) + "_" + std::to_string(timestep); }
};

class Values {
 public:
  using Map = std::map<VariableKey, Vector>;

  void insert(const VariableKey& k, Vector v) {
    if (!map_.emplace(k, std::move(v)).second)
      throw ConfigurationError("value for " + k.str() + " already present");
  }
  void insert_or_assign(const VariableKey& k, Vector v) { map_.insert_or_assign(k, std::move(v)); }
  void update(const VariableKey& k, Vector v) {
    auto it = map_.find(k);
    if (it == map_.end()) throw ConfigurationError("no value for " + k.str());
    it->second = std::move(v);
  }
  const Vector& at(const VariableKey& k) const {
    auto it = map_.find(k);
    if (it == map_.end()) throw ConfigurationError("no value for " + k.str());
    return it->second;
  }
  bool contains(const VariableKey& k) const { return map_.count(k) > 0; }
  void erase(const VariableKey& k) { map_.erase(k); }
  std::size_t size() const { return map_.size(); }
  auto begin() const { return map_.begin(); }
  auto end() const { return map_.end(); }

 private:
  Map map_;
};

/// Variance that stands in for "zero covariance" (hard) rows.
inline constexpr double kSurrogateVariance = 1e-10;

/// Diagonal Gaussian noise model; the cost of an error e is 1/2 e' Lambda e.
class NoiseModel {
 public:
  enum class Form { Isotropic, Diagonal, Constrained };

  static NoiseModel isotropic(int dim, double variance) {
    if (!(variance > 0.0)) throw ConfigurationError("variance must be > 0");
    return NoiseModel(Form::Isotropic, Vector::Constant(dim, variance));
  }
  static NoiseModel diagonal(const Vector& variances) {
    if (!(variances.array() > 0.0).all()) throw ConfigurationError("variances must be > 0");
    return NoiseModel(Form::Diagonal, variances);
  }
  static NoiseModel constrained(int dim, double surrogate = kSurrogateVariance) {
    return NoiseModel(Form::Constrained, Vector::Constant(dim, surrogate));
  }

  Form form() const { return form_; }
  int dim() const { return static_cast<int>(variances_.size()); }
  const Vector& variances() const { return variances_; }
  const Vector& sqrt_information() const { return sqrt_info_; }
  Vector information() const { return sqrt_info_.array().square(); }

  Vector whiten(const Vector& e) const { return sqrt_info_.cwiseProduct(e); }
  Matrix whiten(const Matrix& J) const { return sqrt_info_.asDiagonal() * J; }
  double cost(const Vector& e) const {
    return 0.5 * (e.array().square() / variances_.array()).sum();
  }

 private:
  NoiseModel(Form f, Vector variances)
      : form_(f), variances_(std::move(variances)), sqrt_info_(variances_.cwiseInverse().cwiseSqrt()) {}

  Form form_;
  Vector variances_;
  Vector sqrt_info_;
};

struct FactorEval {
  Vector error;
  std::vector<Matrix> jacobians;  // one per key, in key order
};

/// A residual over a few keyed variables with analytic or numerical Jacobians.
class Factor {
 public:
  Factor(std::vector<VariableKey> keys, NoiseModel noise)
      : keys_(std::move(keys)), noise_(std::move(noise)) {}
  virtual ~Factor() = default;

  virtual std::string_view name() const = 0;
  int dim() const { return noise_.dim(); }
  const std::vector<VariableKey>& keys() const { return keys_; }
  const NoiseModel& noise() const { return noise_; }

  /// Raw error at x (x[i] is the value of keys()[i]). When `jac` is non-null,
  /// fills (*jac)[i] for every i with need[i] (all if `need` is empty).
  virtual Vector error(std::span<const Vector* const> x, std::vector<Matrix>* jac,
                       const std::vector<bool>& need) const = 0;

  FactorEval evaluate(const Values& values, bool with_jacobians = true) const {
    std::vector<const Vector*> x;
    x.reserve(keys_.size());
    for (const auto& k : keys_) x.push_back(&values.at(k));
    FactorEval out;
    out.jacobians.resize(with_jacobians ? keys_.size() : 0);
    out.error = error(x, with_jacobians ? &out.jacobians : nullptr, {});
    return out;
  }
  double cost(const Values& values) const { return noise_.cost(evaluate(values, false).error); }

 protected:
  static bool wanted(const std::vector<bool>& need, std::size_t i) {
    return need.empty() || need[i];
  }

 private:
  std::vector<VariableKey> keys_;
  NoiseModel noise_;
};

using FactorPtr = std::shared_ptr<const Factor>;

class FactorGraph {
 public:
  void add_variable(const VariableKey& k, int dim) {
    auto [it, fresh] = registry_.emplace(k, dim);
    if (!fresh && it->second != dim)
      throw ConfigurationError("variable " + k.str() + " re-registered with another dimension");
  }
  void add(FactorPtr f) {
    for (const auto& k : f->keys())
      if (!registry_.count(k))
        throw ConfigurationError(std::string(f->name()) + " references unregistered " + k.str());
    factors_.push_back(std::move(f));
  }

  const std::vector<FactorPtr>& factors() const { return factors_; }
  const std::map<VariableKey, int>& variables() const { return registry_; }
  std::size_t size() const { return factors_.size(); }
  int dim(const VariableKey& k) const { return registry_.at(k); }

  double cost(const Values& values) const {
    double c = 0.0;
    for (const auto& f : factors_) c += f->cost(values);
    return c;
  }

  /// True when the variable/factor bipartite graph has one component.
  bool connected() const {
    if (registry_.empty()) return true;
    std::map<VariableKey, VariableKey> parent;
    for (const auto& [k, d] : registry_) parent[k] = k;
    auto find = [&](VariableKey k) {
      while (!(parent[k] == k)) k = parent[k] = parent[parent[k]];
      return k;
    };
    for (const auto& f : factors_)
      for (std::size_t i = 1; i < f->keys().size(); ++i)
        parent[find(f->keys()[i])] = find(f->keys()[0]);
    std::set<VariableKey> roots;
    for (const auto& [k, d] : registry_) roots.insert(find(k));
    return roots.size() == 1;
  }

 private:
  std::vector<FactorPtr> factors_;
  std::map<VariableKey, int> registry_;
};

}  // namespace mbfg
