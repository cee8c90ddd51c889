// SPDX-License-Identifier: Apache-2.0
#include "depthmesh/io.hpp"

#include <openssl/evp.h>

#include <array>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace depthmesh {

const Matrix& TextContainer::matrix(const std::string& name) const {
  for (const auto& [key, value] : matrices) {
    if (key == name) return value;
  }
  throw std::runtime_error("container '" + kind + "' has no matrix '" + name + "'");
}

bool TextContainer::has_matrix(const std::string& name) const {
  for (const auto& entry : matrices) {
    if (entry.first == name) return true;
  }
  return false;
}

const std::string& TextContainer::meta_value(const std::string& key) const {
  for (const auto& [k, v] : meta) {
    if (k == key) return v;
  }
  throw std::runtime_error("container '" + kind + "' has no meta key '" + key + "'");
}

void write_container(std::ostream& os, const TextContainer& c) {
  os << "depthmesh-container " << c.kind << ' ' << c.version << '\n';
  for (const auto& [k, v] : c.meta) os << "meta " << k << ' ' << v << '\n';
  const auto old = os.precision(17);
  for (const auto& [name, m] : c.matrices) {
    os << "matrix " << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index k = 0; k < m.cols(); ++k) {
        if (k) os << ' ';
        os << m(r, k);
      }
      os << '\n';
    }
  }
  os.precision(old);
  os << "end\n";
}

TextContainer read_container(std::istream& is, const std::string& expected_kind) {
  TextContainer c;
  std::string magic;
  if (!(is >> magic >> c.kind >> c.version) || magic != "depthmesh-container") {
    throw std::runtime_error("not a depthmesh container");
  }
  if (!expected_kind.empty() && c.kind != expected_kind) {
    throw std::runtime_error("expected container kind '" + expected_kind + "', found '" + c.kind + "'");
  }
  std::string tag;
  while (is >> tag) {
    if (tag == "end") return c;
    if (tag == "meta") {
      std::string key, value;
      is >> key;
      std::getline(is >> std::ws, value);
      c.meta.emplace_back(key, value);
    } else if (tag == "matrix") {
      std::string name;
      Eigen::Index rows = 0, cols = 0;
      if (!(is >> name >> rows >> cols) || rows < 0 || cols < 0) {
        throw std::runtime_error("malformed matrix header in container");
      }
      Matrix m(rows, cols);
      for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index k = 0; k < cols; ++k) {
          std::string token;
          if (!(is >> token)) throw std::runtime_error("truncated matrix '" + name + "'");
          char* end = nullptr;
          m(r, k) = std::strtod(token.c_str(), &end);
          if (end == token.c_str() || *end != '\0') {
            throw std::runtime_error("bad number '" + token + "' in matrix '" + name + "'");
          }
        }
      }
      c.matrices.emplace_back(name, std::move(m));
    } else {
      throw std::runtime_error("unknown container tag '" + tag + "'");
    }
  }
  throw std::runtime_error("container is missing its end marker");
}

void save_container(const std::string& path, const TextContainer& container) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  write_container(os, container);
  if (!os) throw std::runtime_error("write failed for '" + path + "'");
}

TextContainer load_container(const std::string& path, const std::string& expected_kind) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open '" + path + "'");
  return read_container(is, expected_kind);
}

std::string sha256_hex(const std::string& bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int length = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest.data(), &length, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256 failed");
  }
  std::ostringstream os;
  for (unsigned int i = 0; i < length; ++i) {
    os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  }
  return os.str();
}

}  // namespace depthmesh
