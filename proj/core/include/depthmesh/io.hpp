// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "depthmesh/numerics.hpp"

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace depthmesh {

/// Plain-text container of named matrices.
///
///   depthmesh-container <kind> <version>
///   meta <key> <value...>          (any number)
///   matrix <name> <rows> <cols>
///   <rows lines of cols values, 17 significant digits>
///   end
///
/// Round-trips every double exactly.
struct TextContainer {
  std::string kind;
  int version = 1;
  std::vector<std::pair<std::string, std::string>> meta;
  std::vector<std::pair<std::string, Matrix>> matrices;

  void add(const std::string& name, const Matrix& m) { matrices.emplace_back(name, m); }
  void set_meta(const std::string& key, const std::string& value) { meta.emplace_back(key, value); }

  /// Throws std::runtime_error when absent.
  const Matrix& matrix(const std::string& name) const;
  const std::string& meta_value(const std::string& key) const;
  bool has_matrix(const std::string& name) const;
};

void write_container(std::ostream& os, const TextContainer& container);
/// Throws std::runtime_error on malformed input or a kind mismatch (when `expected_kind` is set).
TextContainer read_container(std::istream& is, const std::string& expected_kind = {});

void save_container(const std::string& path, const TextContainer& container);
TextContainer load_container(const std::string& path, const std::string& expected_kind = {});

/// Lower-case hex SHA-256 of a byte string.
std::string sha256_hex(const std::string& bytes);

}  // namespace depthmesh
