#include "pataplectic/chart.hpp"

#include <algorithm>
#include <stdexcept>

namespace pataplectic {
namespace {

void subsets(int from, int size, std::vector<std::vector<int>>& out) {
  std::vector<int> cur;
  auto rec = [&](auto&& self, int start) -> void {
    if (static_cast<int>(cur.size()) == size) {
      out.push_back(cur);
      return;
    }
    for (int v = start; v < from; ++v) {
      cur.push_back(v);
      self(self, v + 1);
      cur.pop_back();
    }
  };
  rec(rec, 0);
}

std::string digits(const std::vector<int>& v) {
  std::string s;
  for (int a : v) s += std::to_string(a + 1);
  return s;
}

}  // namespace

Canonical canonicalize(std::span<const int> indices, int dim) {
  Canonical out;
  out.index.assign(indices.begin(), indices.end());
  for (int v : out.index)
    if (v < 0 || v >= dim) throw std::out_of_range("index " + std::to_string(v) + " outside chart");
  int sign = 1;
  for (std::size_t i = 1; i < out.index.size(); ++i) {
    for (std::size_t j = i; j > 0 && out.index[j - 1] >= out.index[j]; --j) {
      if (out.index[j - 1] == out.index[j]) return Canonical{};
      std::swap(out.index[j - 1], out.index[j]);
      sign = -sign;
    }
  }
  out.sign = sign;
  return out;
}

Chart::Chart(int n, int k, std::set<int> momentum_degrees) : n_(n), k_(k), degrees_(std::move(momentum_degrees)) {
  if (n < 1 || k < 1) throw std::invalid_argument("chart needs n >= 1 and k >= 1");
  if (n > 9 || k > 9) throw std::invalid_argument("chart dimensions above 9 are not supported");
  degrees_.insert(0);
  for (int d : degrees_)
    if (d < 0 || d > n) throw std::invalid_argument("momentum degree " + std::to_string(d) + " outside 0..n");
  int next = n + k;
  Index base(static_cast<std::size_t>(n));
  for (int a = 0; a < n; ++a) base[static_cast<std::size_t>(a)] = a;
  for (int d : degrees_) {
    if (d > k) continue;
    std::vector<std::vector<int>> alpha_sets;
    std::vector<std::vector<int>> field_sets;
    subsets(n, d, alpha_sets);
    subsets(k, d, field_sets);
    for (const auto& alphas : alpha_sets) {
      for (const auto& fields : field_sets) {
        Momentum m;
        m.symbol = next++;
        m.alphas = alphas;
        m.fields = fields;
        m.slots = base;
        for (std::size_t j = 0; j < alphas.size(); ++j)
          m.slots[static_cast<std::size_t>(alphas[j])] = n + fields[j];
        Canonical c = canonicalize(m.slots, n + k);
        m.sorted = c.index;
        m.sign = c.sign;
        m.name = d == 0 ? "eps" : "p" + digits(alphas) + "_" + digits(fields);
        by_sorted_[m.sorted] = m.symbol;
        momenta_.push_back(std::move(m));
      }
    }
  }
  dim_ = next;
}

Chart Chart::full(int n, int k) {
  std::set<int> degrees;
  for (int d = 0; d <= std::min(n, k); ++d) degrees.insert(d);
  return Chart(n, k, degrees);
}

const Momentum& Chart::momentum_of(int symbol) const {
  if (!is_momentum(symbol)) throw std::out_of_range("symbol " + std::to_string(symbol) + " is not a momentum");
  return momenta_[static_cast<std::size_t>(symbol - n_ - k_)];
}

std::optional<int> Chart::momentum_symbol(const std::vector<int>& alphas, const std::vector<int>& fields) const {
  for (const auto& m : momenta_)
    if (m.alphas == alphas && m.fields == fields) return m.symbol;
  return std::nullopt;
}

const Momentum* Chart::momentum_at(const Index& sorted) const {
  auto it = by_sorted_.find(sorted);
  if (it == by_sorted_.end()) return nullptr;
  return &momentum_of(it->second);
}

Expr Chart::p_component(std::span<const int> tuple) const {
  Canonical c = canonicalize(tuple, n_ + k_);
  if (c.sign == 0) return Expr();
  const Momentum* m = momentum_at(c.index);
  if (!m) return Expr();
  // p_{sorted} = sign * P, so p_{tuple} = c.sign * sign * P.
  return Expr(c.sign * m->sign) * Expr::symbol(m->symbol);
}

Chart Chart::with_volume_weight(Expr weight) const {
  for (int s : weight.symbols())
    if (!is_base(s)) throw std::invalid_argument("volume weight may depend on base coordinates only");
  Chart c = *this;
  c.volume_ = std::move(weight);
  return c;
}

bool Chart::flat_volume() const { return volume_.is_constant(); }

std::string Chart::name(int id) const {
  if (is_base(id)) return "x" + std::to_string(id + 1);
  if (is_field(id)) return "y" + std::to_string(id - n_ + 1);
  if (is_momentum(id)) return momentum_of(id).name;
  if (is_velocity(id)) {
    int r = id - dim_;
    return "v" + std::to_string(r / n_ + 1) + "_" + std::to_string(r % n_ + 1);
  }
  return "s" + std::to_string(id);
}

std::optional<int> Chart::lookup(std::string_view name) const {
  for (int id = 0; id < symbol_count(); ++id)
    if (this->name(id) == name) return id;
  return std::nullopt;
}

SymbolResolver Chart::resolver(const std::map<std::string, Expr>& parameters) const {
  return [this, parameters](std::string_view name) -> std::optional<Expr> {
    if (auto it = parameters.find(std::string(name)); it != parameters.end()) return it->second;
    if (auto id = lookup(name)) return Expr::symbol(*id);
    return std::nullopt;
  };
}

Expr Chart::parse(std::string_view text, const std::map<std::string, Expr>& parameters) const {
  return parse_expression(text, resolver(parameters));
}

std::string Chart::print(const Expr& e) const {
  return e.str([this](int id) { return name(id); });
}

}  // namespace pataplectic
