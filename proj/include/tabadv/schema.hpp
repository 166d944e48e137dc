#ifndef TABADV_SCHEMA_HPP
#define TABADV_SCHEMA_HPP

#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "tabadv/common.hpp"

namespace tabadv {

// Column layout of a tabular dataset: continuous features first, then one
// one-hot block per discrete feature. Labels are indices into label_alphabet
// (loan grades "A".."G" by default, A = 0).
struct Schema {
  std::vector<std::string> continuous_names;
  std::vector<std::string> discrete_names;
  // Category labels per discrete feature; the index of a label inside its
  // vector is the stable category code used by the one-hot encoding.
  std::vector<std::vector<std::string>> discrete_categories;
  std::string label_name;
  std::vector<std::string> label_alphabet;

  int n_continuous() const { return static_cast<int>(continuous_names.size()); }
  int n_discrete() const { return static_cast<int>(discrete_names.size()); }
  int n_classes() const { return static_cast<int>(label_alphabet.size()); }

  std::vector<int> discrete_cardinalities() const {
    std::vector<int> card;
    card.reserve(discrete_categories.size());
    for (const auto& cats : discrete_categories) card.push_back(static_cast<int>(cats.size()));
    return card;
  }

  int onehot_width() const {
    int w = 0;
    for (const auto& cats : discrete_categories) w += static_cast<int>(cats.size());
    return w;
  }

  int feature_dim() const { return n_continuous() + onehot_width(); }

  // Column offset of the one-hot block of discrete feature d.
  int onehot_offset(int d) const {
    int off = n_continuous();
    for (int k = 0; k < d; ++k) off += static_cast<int>(discrete_categories[k].size());
    return off;
  }

  int label_index(const std::string& v) const {
    for (int i = 0; i < n_classes(); ++i)
      if (label_alphabet[i] == v) return i;
    return -1;
  }

  void validate() const;

  nlohmann::json to_json() const;
  static Schema from_json(const nlohmann::json& j);
};

// Per-continuous-feature standardization statistics, fit on the training
// split with the population (1/N) standard deviation.
struct StandardizationStats {
  Eigen::VectorXd mean;
  Eigen::VectorXd std;

  int size() const { return static_cast<int>(mean.size()); }

  nlohmann::json to_json() const;
  static StandardizationStats from_json(const nlohmann::json& j);
};

}  // namespace tabadv

#endif  // TABADV_SCHEMA_HPP
