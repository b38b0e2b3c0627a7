#include "ngvi/data.hpp"

#include <curl/curl.h>
#include <openssl/evp.h>

#include <algorithm>
#include <boost/iostreams/copy.hpp>
#include <boost/iostreams/filter/bzip2.hpp>
#include <boost/iostreams/filter/gzip.hpp>
#include <boost/iostreams/filtering_streambuf.hpp>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <map>
#include <limits>
#include <random>
#include <set>
#include <sstream>

namespace ngvi::data {

namespace fs = std::filesystem;

DesignMatrix::DesignMatrix(SparseRows x, Eigen::VectorXd labels)
    : x_(std::move(x)), labels_(std::move(labels)) {
  if (x_.rows() != labels_.size()) {
    throw DimensionError("design matrix has " + std::to_string(x_.rows()) +
                         " rows but " + std::to_string(labels_.size()) + " labels");
  }
  for (Eigen::Index i = 0; i < labels_.size(); ++i) {
    if (labels_(i) != 1.0 && labels_(i) != -1.0) {
      throw FormatError("label " + std::to_string(labels_(i)) + " is not +-1",
                        static_cast<std::size_t>(i + 1));
    }
  }
  x_.makeCompressed();
}

DesignMatrix DesignMatrix::from_dense(const Eigen::MatrixXd& x,
                                      const Eigen::VectorXd& labels) {
  SparseRows s = x.sparseView(0.0, 0.0);
  return DesignMatrix(std::move(s), labels);
}

Eigen::VectorXd DesignMatrix::row_norms() const {
  Eigen::VectorXd out(rows());
  for (Eigen::Index i = 0; i < x_.outerSize(); ++i) {
    double s = 0.0;
    for (SparseRows::InnerIterator it(x_, i); it; ++it) s += it.value() * it.value();
    out(i) = std::sqrt(s);
  }
  return out;
}

DesignMatrix DesignMatrix::subset(const std::vector<Eigen::Index>& rows) const {
  std::vector<Eigen::Triplet<double>> trips;
  Eigen::VectorXd y(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const Eigen::Index i = rows[r];
    y(static_cast<Eigen::Index>(r)) = labels_(i);
    for (SparseRows::InnerIterator it(x_, i); it; ++it) {
      trips.emplace_back(static_cast<Eigen::Index>(r), it.col(), it.value());
    }
  }
  SparseRows s(static_cast<Eigen::Index>(rows.size()), cols());
  s.setFromTriplets(trips.begin(), trips.end());
  return DesignMatrix(std::move(s), std::move(y));
}

DesignMatrix DesignMatrix::scaled(double factor) const {
  SparseRows s = x_ * factor;
  return DesignMatrix(std::move(s), labels_);
}

bool DesignMatrix::operator==(const DesignMatrix& other) const {
  if (rows() != other.rows() || cols() != other.cols()) return false;
  if (labels_ != other.labels_) return false;
  if (x_.nonZeros() != other.x_.nonZeros()) return false;
  for (Eigen::Index i = 0; i < x_.outerSize(); ++i) {
    SparseRows::InnerIterator a(x_, i);
    SparseRows::InnerIterator b(other.x_, i);
    for (; a && b; ++a, ++b) {
      if (a.col() != b.col() || a.value() != b.value()) return false;
    }
    if (a || b) return false;
  }
  return true;
}

// ---------------------------------------------------------------- parsing

namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\r'; }

double parse_number(const std::string& line, std::size_t begin, std::size_t end,
                    std::size_t line_no, const char* what) {
  if (begin >= end) {
    throw ParseError(std::string("empty ") + what + " at line " +
                         std::to_string(line_no) + ", column " + std::to_string(begin + 1),
                     line_no, begin + 1);
  }
  const std::string token = line.substr(begin, end - begin);
  char* stop = nullptr;
  const double v = std::strtod(token.c_str(), &stop);
  if (stop != token.c_str() + token.size()) {
    throw ParseError(std::string("malformed ") + what + " '" + token + "' at line " +
                         std::to_string(line_no) + ", column " + std::to_string(begin + 1),
                     line_no, begin + 1);
  }
  return v;
}

}  // namespace

DesignMatrix parse_libsvm(std::istream& in, const ParseOptions& opts) {
  std::vector<Eigen::Triplet<double>> trips;
  std::vector<double> raw_labels;
  std::vector<std::size_t> label_lines;
  Eigen::Index max_col = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::size_t pos = 0;
    const std::size_t n = line.size();
    while (pos < n && is_space(line[pos])) ++pos;
    if (pos == n || line[pos] == '#') continue;
    std::size_t end = pos;
    while (end < n && !is_space(line[end])) ++end;
    const double label = parse_number(line, pos, end, line_no, "label");
    const Eigen::Index row = static_cast<Eigen::Index>(raw_labels.size());
    raw_labels.push_back(label);
    label_lines.push_back(line_no);
    long last_index = 0;
    pos = end;
    while (true) {
      while (pos < n && is_space(line[pos])) ++pos;
      if (pos == n || line[pos] == '#') break;
      end = pos;
      while (end < n && !is_space(line[end])) ++end;
      const std::size_t colon = line.find(':', pos);
      if (colon == std::string::npos || colon >= end) {
        throw ParseError("feature token without ':' at line " + std::to_string(line_no) +
                             ", column " + std::to_string(pos + 1),
                         line_no, pos + 1);
      }
      const double idx_value = parse_number(line, pos, colon, line_no, "feature index");
      const long idx = static_cast<long>(idx_value);
      if (static_cast<double>(idx) != idx_value || idx < 1) {
        throw ParseError("feature index must be a positive integer at line " +
                             std::to_string(line_no) + ", column " + std::to_string(pos + 1),
                         line_no, pos + 1);
      }
      if (idx <= last_index) {
        throw FormatError("feature indices not strictly ascending at line " +
                              std::to_string(line_no),
                          line_no);
      }
      last_index = idx;
      const double value = parse_number(line, colon + 1, end, line_no, "feature value");
      if (opts.cols && idx > *opts.cols) {
        throw FormatError("feature index " + std::to_string(idx) + " exceeds dimension " +
                              std::to_string(*opts.cols) + " at line " +
                              std::to_string(line_no),
                          line_no);
      }
      if (value != 0.0) trips.emplace_back(row, idx - 1, value);
      max_col = std::max<Eigen::Index>(max_col, idx);
      pos = end;
    }
  }

  std::set<double> classes(raw_labels.begin(), raw_labels.end());
  std::map<double, double> mapping;
  if (classes.size() > 2) {
    if (!opts.positive_class) {
      throw FormatError("more than two label values and no positive class given", 0);
    }
    for (double c : classes) mapping[c] = (c == *opts.positive_class) ? 1.0 : -1.0;
  } else if (classes.size() == 2) {
    mapping[*classes.begin()] = -1.0;
    mapping[*classes.rbegin()] = 1.0;
  } else if (classes.size() == 1) {
    const double c = *classes.begin();
    mapping[c] = c > 0.0 ? 1.0 : -1.0;
  }
  Eigen::VectorXd y(static_cast<Eigen::Index>(raw_labels.size()));
  for (std::size_t i = 0; i < raw_labels.size(); ++i) {
    y(static_cast<Eigen::Index>(i)) = mapping.at(raw_labels[i]);
  }
  const Eigen::Index cols = opts.cols ? *opts.cols : max_col;
  SparseRows x(static_cast<Eigen::Index>(raw_labels.size()), cols);
  x.setFromTriplets(trips.begin(), trips.end());
  return DesignMatrix(std::move(x), std::move(y));
}

DesignMatrix parse_libsvm_file(const fs::path& path, const ParseOptions& opts) {
  std::istringstream in(read_maybe_compressed(path));
  return parse_libsvm(in, opts);
}

void serialize_libsvm(const DesignMatrix& dm, std::ostream& out) {
  char buf[64];
  const auto& x = dm.x();
  for (Eigen::Index i = 0; i < x.outerSize(); ++i) {
    out << (dm.labels()(i) > 0 ? "+1" : "-1");
    for (SparseRows::InnerIterator it(x, i); it; ++it) {
      std::snprintf(buf, sizeof buf, "%.17g", it.value());
      out << ' ' << (it.col() + 1) << ':' << buf;
    }
    out << '\n';
  }
}

// ---------------------------------------------------------------- split

std::vector<Eigen::Index> seeded_permutation(Eigen::Index n, std::uint64_t seed) {
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
  std::mt19937_64 rng(seed);
  // Explicit Fisher-Yates with rejection sampling, so the permutation does
  // not depend on the standard library's distribution implementation.
  for (Eigen::Index i = n - 1; i > 0; --i) {
    const std::uint64_t bound = static_cast<std::uint64_t>(i) + 1;
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t r;
    do {
      r = rng();
    } while (r >= limit);
    std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(r % bound)]);
  }
  return perm;
}

std::pair<DesignMatrix, DesignMatrix> split(const DesignMatrix& dm, const SplitSpec& spec) {
  const Eigen::Index n = dm.rows();
  if (spec.train_count <= 0 || spec.train_count >= n) {
    throw SplitError("train_count " + std::to_string(spec.train_count) +
                     " must lie in (0, " + std::to_string(n) + ")");
  }
  const DesignMatrix* source = &dm;
  DesignMatrix scaled = dm;
  if (spec.scale) {
    const double max_norm = dm.row_norms().maxCoeff();
    if (max_norm > 0.0) {
      scaled = dm.scaled(1.0 / max_norm);
      source = &scaled;
    }
  }
  const auto perm = seeded_permutation(n, spec.shuffle_seed);
  std::vector<Eigen::Index> train(perm.begin(), perm.begin() + spec.train_count);
  std::vector<Eigen::Index> test(perm.begin() + spec.train_count, perm.end());
  return {source->subset(train), source->subset(test)};
}

// ---------------------------------------------------------------- repository

namespace {
const std::string kBinaryBase = "https://www.csie.ntu.edu.tw/~cjlin/libsvmtools/datasets/binary/";
const std::string kMultiBase = "https://www.csie.ntu.edu.tw/~cjlin/libsvmtools/datasets/multiclass/";
}  // namespace

const std::vector<DatasetInfo>& dataset_table() {
  static const std::vector<DatasetInfo> table = {
      {"australian-scale", kBinaryBase + "australian_scale", "australian_scale", 690, 14, 552, {}},
      {"diabetes-scale", kBinaryBase + "diabetes_scale", "diabetes_scale", 768, 8, 614, {}},
      {"breast-cancer", kBinaryBase + "breast-cancer_scale", "breast-cancer_scale", 683, 10, 546, {}},
      {"mushrooms", kBinaryBase + "mushrooms", "mushrooms", 8124, 112, 6499, {}},
      {"phishing", kBinaryBase + "phishing", "phishing", 11055, 68, 8844, {}},
      {"mnist", kMultiBase + "mnist.scale.bz2", "mnist.scale.bz2", 60000, 784, 48000, 0.0},
      {"covtype-scale", kBinaryBase + "covtype.libsvm.binary.scale.bz2",
       "covtype.libsvm.binary.scale.bz2", 581012, 54, 500000, {}},
      {"leukemia", kBinaryBase + "leu.bz2", "leu.bz2", 38, 7129, 34, {}},
  };
  return table;
}

const DatasetInfo& dataset_info(const std::string& name) {
  for (const auto& info : dataset_table()) {
    if (info.name == name) return info;
  }
  throw ConfigError("unknown dataset '" + name + "'");
}

fs::path default_cache_dir() {
  if (const char* env = std::getenv("NGVI_CACHE_DIR"); env && *env) return fs::path(env);
  if (const char* home = std::getenv("HOME"); home && *home) {
    return fs::path(home) / ".cache" / "ngvi";
  }
  return fs::temp_directory_path() / "ngvi-cache";
}

namespace {

constexpr const char* kManifestName = "MANIFEST";

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

void write_atomically(const fs::path& target, const std::string& contents) {
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << contents;
    if (!out) throw IoError("short write to " + tmp.string());
  }
  fs::rename(tmp, target);
}

void write_manifest(const fs::path& dir, const Manifest& m) {
  std::ostringstream os;
  os << "url=" << m.url << "\nbytes=" << m.bytes << "\nretrieved=" << m.retrieved << "\n";
  write_atomically(dir / kManifestName, os.str());
}

std::size_t curl_write(char* ptr, std::size_t size, std::size_t nmemb, void* userdata) {
  auto* out = static_cast<std::ofstream*>(userdata);
  out->write(ptr, static_cast<std::streamsize>(size * nmemb));
  return out->good() ? size * nmemb : 0;
}

void download(const std::string& url, const fs::path& target, long timeout,
              std::uintmax_t& bytes_out) {
  static const bool init_ok = curl_global_init(CURL_GLOBAL_DEFAULT) == CURLE_OK;
  if (!init_ok) throw FetchError("libcurl initialization failed");
  const fs::path tmp = target.string() + ".part";
  CURL* curl = curl_easy_init();
  if (!curl) throw FetchError("libcurl handle creation failed");
  std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
  if (!out) {
    curl_easy_cleanup(curl);
    throw IoError("cannot write " + tmp.string());
  }
  curl_easy_setopt(curl, CURLOPT_URL, url.c_str());
  curl_easy_setopt(curl, CURLOPT_FOLLOWLOCATION, 1L);
  curl_easy_setopt(curl, CURLOPT_FAILONERROR, 1L);
  curl_easy_setopt(curl, CURLOPT_TIMEOUT, timeout);
  curl_easy_setopt(curl, CURLOPT_CONNECTTIMEOUT, 20L);
  curl_easy_setopt(curl, CURLOPT_WRITEFUNCTION, curl_write);
  curl_easy_setopt(curl, CURLOPT_WRITEDATA, &out);
  const CURLcode rc = curl_easy_perform(curl);
  curl_off_t expected = -1;
  curl_easy_getinfo(curl, CURLINFO_CONTENT_LENGTH_DOWNLOAD_T, &expected);
  curl_easy_cleanup(curl);
  out.close();
  if (rc != CURLE_OK) {
    std::error_code ec;
    fs::remove(tmp, ec);
    throw FetchError("download of " + url + " failed: " + curl_easy_strerror(rc));
  }
  const std::uintmax_t got = fs::file_size(tmp);
  if (expected >= 0 && static_cast<std::uintmax_t>(expected) != got) {
    std::error_code ec;
    fs::remove(tmp, ec);
    throw IntegrityError("download of " + url + " returned " + std::to_string(got) +
                         " bytes, expected " + std::to_string(expected));
  }
  fs::rename(tmp, target);
  bytes_out = got;
}

}  // namespace

Manifest read_manifest(const fs::path& dataset_dir) {
  std::ifstream in(dataset_dir / kManifestName);
  if (!in) throw IoError("no manifest in " + dataset_dir.string());
  Manifest m;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "url") m.url = value;
    else if (key == "bytes") m.bytes = std::stoull(value);
    else if (key == "retrieved") m.retrieved = value;
  }
  return m;
}

std::string sha256_hex(const std::string& text) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(text.data(), text.size(), digest, &len, EVP_sha256(), nullptr);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) {
    hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  }
  return hex.str();
}

std::string manifest_digest(const fs::path& dataset_dir) {
  std::ifstream in(dataset_dir / kManifestName, std::ios::binary);
  if (!in) return "none";
  std::ostringstream buf;
  buf << in.rdbuf();
  return sha256_hex(buf.str());
}

fs::path fetch_dataset(const std::string& name, const fs::path& cache_dir,
                       const FetchOptions& opts) {
  const DatasetInfo& info = dataset_info(name);
  const fs::path dir = cache_dir / name;
  const fs::path file = dir / info.filename;
  if (fs::exists(file)) {
    const std::uintmax_t size = fs::file_size(file);
    if (fs::exists(dir / kManifestName)) {
      const Manifest m = read_manifest(dir);
      if (m.bytes != size) {
        throw IntegrityError("cached " + file.string() + " has " + std::to_string(size) +
                             " bytes, manifest records " + std::to_string(m.bytes));
      }
    } else {
      // Placed by hand: record what is there so later hits are verified.
      write_manifest(dir, Manifest{"local:" + file.string(), size, utc_timestamp()});
    }
    return file;
  }
  if (opts.offline) {
    throw FetchError("dataset '" + name + "' is not cached in " + dir.string() +
                     " and offline mode is on");
  }
  fs::create_directories(dir);
  std::uintmax_t bytes = 0;
  download(info.url, file, opts.timeout_seconds, bytes);
  write_manifest(dir, Manifest{info.url, bytes, utc_timestamp()});
  return file;
}

std::string read_maybe_compressed(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  namespace io = boost::iostreams;
  io::filtering_streambuf<io::input> buf;
  const std::string ext = path.extension().string();
  if (ext == ".gz") buf.push(io::gzip_decompressor());
  else if (ext == ".bz2") buf.push(io::bzip2_decompressor());
  buf.push(in);
  std::ostringstream out;
  try {
    io::copy(buf, out);
  } catch (const std::exception& e) {
    throw IoError("decompression of " + path.string() + " failed: " + e.what());
  }
  return out.str();
}

DesignMatrix load_dataset(const std::string& name, const fs::path& cache_dir,
                          const FetchOptions& opts) {
  const DatasetInfo& info = dataset_info(name);
  const fs::path file = fetch_dataset(name, cache_dir, opts);
  ParseOptions po;
  po.cols = info.cols;
  po.positive_class = info.positive_class;
  return parse_libsvm_file(file, po);
}

}  // namespace ngvi::data
