#include "entlab/regularizer.hpp"

#include <cmath>
#include <string>

#include "entlab/entropy.hpp"
#include "entlab/errors.hpp"

namespace entlab {

void RegConfig::validate() const {
  std::string bad;
  if (!(lambda >= 0.0)) bad += " lambda must be >= 0;";
  if (!(gamma >= 0.0 && gamma < 1.0)) bad += " gamma must lie in [0, 1);";
  if (!(threshold_init > 0.0 && threshold_init < 1.0)) bad += " threshold_init must lie in (0, 1);";
  if (!bad.empty()) throw ConfigError("invalid regularizer settings:" + bad);
}

Parameter make_thresholds(std::size_t layers, std::size_t heads, double threshold_init) {
  return Parameter("reg.thresholds", Tensor({layers, heads}, threshold_init), false);
}

namespace {
void check_context(std::size_t context) {
  if (context < 2) throw UsageError("entropy regularization needs a context length of at least 2");
}
}  // namespace

Var reg_loss_from_entropies(Var entropies, Var thresholds, const RegConfig& cfg, std::size_t context) {
  check_context(context);
  const Tensor& e = entropies.value();
  if (e.rank() != 2 || thresholds.shape() != e.shape())
    throw ConfigError("threshold grid " + shape_str(thresholds.shape()) + " does not match entropy grid " +
                      shape_str(e.shape()));
  const double e_max = std::log(static_cast<double>(context));
  const double tol = cfg.gamma * e_max;
  Var penalty = dead_zone_square(sub(entropies, scale(thresholds, e_max)), tol);
  const std::size_t layers = e.rows(), heads = e.cols();
  std::vector<Var> per_layer;
  per_layer.reserve(layers);
  for (std::size_t l = 0; l < layers; ++l) per_layer.push_back(reshape(mean(slice(penalty, l, 1, 0, heads)), {1, 1}));
  return mean(layers == 1 ? per_layer[0] : concat(per_layer, 0));
}

Var reg_loss(const ModelOutput& out, Var thresholds, const RegConfig& cfg, std::size_t context) {
  check_context(context);
  if (out.attention.empty()) throw UsageError("reg_loss needs a forward pass with attention");
  if (thresholds.shape() != Shape{out.layers, out.heads})
    throw ConfigError("threshold grid " + shape_str(thresholds.shape()) + " does not match " +
                      std::to_string(out.layers) + " layers x " + std::to_string(out.heads) + " heads");
  const double inv_batch = 1.0 / static_cast<double>(out.batch);

  if (cfg.per_position) {
    const double e_max = std::log(static_cast<double>(context));
    const double tol = cfg.gamma * e_max;
    std::vector<Var> layer_losses;
    for (std::size_t l = 0; l < out.layers; ++l) {
      std::vector<Var> terms;
      for (std::size_t h = 0; h < out.heads; ++h) {
        Var thr = scale(slice(thresholds, l, 1, h, 1), e_max);
        for (std::size_t b = 0; b < out.batch; ++b)
          terms.push_back(reshape(sum(dead_zone_square(sub(row_entropy(out.attn(b, l, h), kEntropyEps), thr), tol)),
                                  {1, 1}));
      }
      Var total = sum(terms.size() == 1 ? terms[0] : concat(terms, 0));
      layer_losses.push_back(reshape(scale(total, 1.0 / static_cast<double>(out.heads)), {1, 1}));
    }
    return mean(layer_losses.size() == 1 ? layer_losses[0] : concat(layer_losses, 0));
  }

  std::vector<Var> rows;
  for (std::size_t l = 0; l < out.layers; ++l) {
    std::vector<Var> cells;
    for (std::size_t h = 0; h < out.heads; ++h) {
      std::vector<Var> per_item;
      for (std::size_t b = 0; b < out.batch; ++b)
        per_item.push_back(reshape(mean(row_entropy(out.attn(b, l, h), kEntropyEps)), {1, 1}));
      Var e = per_item.size() == 1 ? per_item[0] : scale(sum(concat(per_item, 0)), inv_batch);
      cells.push_back(reshape(e, {1, 1}));
    }
    rows.push_back(cells.size() == 1 ? cells[0] : concat(cells, 1));
  }
  Var grid = rows.size() == 1 ? rows[0] : concat(rows, 0);
  return reg_loss_from_entropies(grid, thresholds, cfg, context);
}

Var total_loss(Var ce, Var reg, double lambda) { return add(ce, scale(reg, lambda)); }

double dead_zone_gradient(double delta, double tol) { return std::fabs(delta) > tol ? 2.0 * delta : 0.0; }

}  // namespace entlab
