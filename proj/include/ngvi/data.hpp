#pragma once

#include <Eigen/Dense>
#include <Eigen/SparseCore>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ngvi/errors.hpp"

namespace ngvi::data {

using SparseRows = Eigen::SparseMatrix<double, Eigen::RowMajor>;

// n x d design matrix in CSR form, labels in {-1, +1}.
class DesignMatrix {
 public:
  DesignMatrix(SparseRows x, Eigen::VectorXd labels);
  static DesignMatrix from_dense(const Eigen::MatrixXd& x,
                                 const Eigen::VectorXd& labels);

  const SparseRows& x() const { return x_; }
  const Eigen::VectorXd& labels() const { return labels_; }
  Eigen::Index rows() const { return x_.rows(); }
  Eigen::Index cols() const { return x_.cols(); }

  Eigen::VectorXd row_norms() const;
  DesignMatrix subset(const std::vector<Eigen::Index>& rows) const;
  DesignMatrix scaled(double factor) const;

  bool operator==(const DesignMatrix& other) const;

 private:
  SparseRows x_;
  Eigen::VectorXd labels_;
};

struct ParseOptions {
  std::optional<Eigen::Index> cols;  // override inferred dimension
  // Class taken as +1 when the source has more than two classes
  // (one-vs-rest); unset means more than two classes is an error.
  std::optional<double> positive_class;
};

// LIBSVM text: "<label> <idx>:<val> ..." with ascending 1-based indices.
// Two-class labels are mapped to {-1,+1}: the smaller value becomes -1.
DesignMatrix parse_libsvm(std::istream& in, const ParseOptions& opts = {});
DesignMatrix parse_libsvm_file(const std::filesystem::path& path,
                               const ParseOptions& opts = {});
void serialize_libsvm(const DesignMatrix& dm, std::ostream& out);

struct SplitSpec {
  Eigen::Index train_count = 0;
  std::uint64_t shuffle_seed = 0;
  bool scale = false;
};

// Seeded shuffle, then the first train_count rows go to train. With scale on,
// every row is divided by the largest row norm of the full matrix.
std::pair<DesignMatrix, DesignMatrix> split(const DesignMatrix& dm,
                                            const SplitSpec& spec);

// Deterministic permutation of 0..n-1 (Fisher-Yates on mt19937_64).
std::vector<Eigen::Index> seeded_permutation(Eigen::Index n,
                                             std::uint64_t seed);

// ---- LIBSVM repository client ----

struct DatasetInfo {
  std::string name;
  std::string url;
  std::string filename;
  Eigen::Index rows;  // documented size, for reporting
  Eigen::Index cols;  // dimension override applied at parse time
  Eigen::Index train_count;
  std::optional<double> positive_class;
};

const std::vector<DatasetInfo>& dataset_table();
const DatasetInfo& dataset_info(const std::string& name);

struct FetchOptions {
  bool offline = false;
  long timeout_seconds = 120;
};

// Cache root: explicit argument, else $NGVI_CACHE_DIR, else ~/.cache/ngvi.
std::filesystem::path default_cache_dir();

// Returns <cache>/<name>/<filename>; downloads it when absent (unless
// offline). A MANIFEST next to the file records url, byte length and
// retrieval time; the length is re-verified on every cache hit.
std::filesystem::path fetch_dataset(const std::string& name,
                                    const std::filesystem::path& cache_dir,
                                    const FetchOptions& opts = {});

struct Manifest {
  std::string url;
  std::uintmax_t bytes = 0;
  std::string retrieved;
};
Manifest read_manifest(const std::filesystem::path& dataset_dir);
std::string sha256_hex(const std::string& bytes);
// Hex SHA-256 of the manifest file contents ("none" when absent).
std::string manifest_digest(const std::filesystem::path& dataset_dir);

// Reads a possibly .gz / .bz2 compressed file into memory.
std::string read_maybe_compressed(const std::filesystem::path& path);

// fetch + decompress + parse with the table's dimension override.
DesignMatrix load_dataset(const std::string& name,
                          const std::filesystem::path& cache_dir,
                          const FetchOptions& opts = {});

}  // namespace ngvi::data
