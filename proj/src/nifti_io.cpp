#include "fastaid/nifti_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <string>

namespace fastaid {
namespace {

constexpr int kHeaderSize = 348;
constexpr int kDataOffset = 352;

// Byte offsets of the NIfTI-1 header fields we touch.
namespace off {
constexpr int sizeof_hdr = 0;
constexpr int dim = 40;
constexpr int datatype = 70;
constexpr int bitpix = 72;
constexpr int pixdim = 76;
constexpr int vox_offset = 108;
constexpr int scl_slope = 112;
constexpr int scl_inter = 116;
constexpr int xyzt_units = 123;
constexpr int descrip = 148;
constexpr int qform_code = 252;
constexpr int sform_code = 254;
constexpr int quatern_b = 256;
constexpr int qoffset_x = 268;
constexpr int srow_x = 280;
constexpr int magic = 344;
}  // namespace off

bool has_gz_suffix(const std::filesystem::path& p) {
  const auto s = p.string();
  return s.size() >= 3 && s.compare(s.size() - 3, 3, ".gz") == 0;
}

std::vector<unsigned char> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b) {
    gzFile gz = gzopen(path.string().c_str(), "rb");
    if (!gz) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
    std::vector<unsigned char> out;
    std::array<unsigned char, 1 << 16> buf{};
    int n = 0;
    while ((n = gzread(gz, buf.data(), static_cast<unsigned>(buf.size()))) > 0)
      out.insert(out.end(), buf.begin(), buf.begin() + n);
    const bool failed = n < 0;
    gzclose(gz);
    if (failed) throw Error(ErrorCode::TruncatedData, "corrupt gzip stream in " + path.string());
    return out;
  }
  return bytes;
}

class Reader {
 public:
  Reader(const std::vector<unsigned char>& bytes, bool swap) : bytes_(bytes), swap_(swap) {}

  template <class T>
  T get(std::size_t offset) const {
    std::array<unsigned char, sizeof(T)> raw{};
    std::memcpy(raw.data(), bytes_.data() + offset, sizeof(T));
    if (swap_) std::reverse(raw.begin(), raw.end());
    T v;
    std::memcpy(&v, raw.data(), sizeof(T));
    return v;
  }

 private:
  const std::vector<unsigned char>& bytes_;
  bool swap_;
};

class Writer {
 public:
  explicit Writer(std::vector<unsigned char>& bytes) : bytes_(bytes) {}
  template <class T>
  void put(std::size_t offset, T v) {
    std::memcpy(bytes_.data() + offset, &v, sizeof(T));
  }

 private:
  std::vector<unsigned char>& bytes_;
};

Affine quatern_to_affine(double b, double c, double d, const Vec3& offset, const Vec3& spacing,
                         double qfac) {
  double a = 1.0 - (b * b + c * c + d * d);
  if (a < 1e-7) {
    const double n = 1.0 / std::sqrt(b * b + c * c + d * d);
    b *= n;
    c *= n;
    d *= n;
    a = 0.0;
  } else {
    a = std::sqrt(a);
  }
  const double r[3][3] = {
      {a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)},
      {2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)},
      {2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - c * c - b * b}};
  const double scale[3] = {spacing[0], spacing[1], qfac * spacing[2]};
  Affine m{};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) m[i][j] = r[i][j] * scale[j];
    m[i][3] = offset[i];
  }
  m[3][3] = 1.0;
  return m;
}

// Quaternion for an affine whose 3x3 part is a scaled rotation (possibly with
// a reflection folded into qfac). Returns false for sheared matrices.
bool affine_to_quatern(const Affine& m, std::array<double, 3>& bcd, double& qfac) {
  double r[3][3];
  for (int j = 0; j < 3; ++j) {
    const double n = std::sqrt(m[0][j] * m[0][j] + m[1][j] * m[1][j] + m[2][j] * m[2][j]);
    if (n == 0.0) return false;
    for (int i = 0; i < 3; ++i) r[i][j] = m[i][j] / n;
  }
  for (int j = 0; j < 3; ++j)
    for (int k = j + 1; k < 3; ++k) {
      const double dot = r[0][j] * r[0][k] + r[1][j] * r[1][k] + r[2][j] * r[2][k];
      if (std::abs(dot) > 1e-4) return false;
    }
  const double det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1]) -
                     r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0]) +
                     r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
  qfac = det < 0 ? -1.0 : 1.0;
  if (det < 0)
    for (int i = 0; i < 3; ++i) r[i][2] = -r[i][2];
  double a = r[0][0] + r[1][1] + r[2][2] + 1.0;
  double b, c, d;
  if (a > 0.5) {
    a = 0.5 * std::sqrt(a);
    b = 0.25 * (r[2][1] - r[1][2]) / a;
    c = 0.25 * (r[0][2] - r[2][0]) / a;
    d = 0.25 * (r[1][0] - r[0][1]) / a;
  } else {
    const double xd = 1.0 + r[0][0] - (r[1][1] + r[2][2]);
    const double yd = 1.0 + r[1][1] - (r[0][0] + r[2][2]);
    const double zd = 1.0 + r[2][2] - (r[0][0] + r[1][1]);
    if (xd > 1.0) {
      b = 0.5 * std::sqrt(xd);
      c = 0.25 * (r[0][1] + r[1][0]) / b;
      d = 0.25 * (r[0][2] + r[2][0]) / b;
      a = 0.25 * (r[2][1] - r[1][2]) / b;
    } else if (yd > 1.0) {
      c = 0.5 * std::sqrt(yd);
      b = 0.25 * (r[0][1] + r[1][0]) / c;
      d = 0.25 * (r[1][2] + r[2][1]) / c;
      a = 0.25 * (r[0][2] - r[2][0]) / c;
    } else {
      d = 0.5 * std::sqrt(zd);
      b = 0.25 * (r[0][2] + r[2][0]) / d;
      c = 0.25 * (r[1][2] + r[2][1]) / d;
      a = 0.25 * (r[1][0] - r[0][1]) / d;
    }
    if (a < 0.0) {
      b = -b;
      c = -c;
      d = -d;
    }
  }
  bcd = {b, c, d};
  return true;
}

struct Parsed {
  NiftiHeader header;
  std::size_t data_offset = 0;
  bool swap = false;
  int16_t raw_type = 0;
};

Parsed parse_header(const std::vector<unsigned char>& bytes, const std::string& name) {
  if (bytes.size() < kHeaderSize) throw Error(ErrorCode::MalformedHeader, "short header in " + name);
  Parsed p;
  int32_t sizeof_hdr = 0;
  std::memcpy(&sizeof_hdr, bytes.data(), 4);
  if (sizeof_hdr != kHeaderSize) {
    unsigned char rev[4] = {bytes[3], bytes[2], bytes[1], bytes[0]};
    std::memcpy(&sizeof_hdr, rev, 4);
    if (sizeof_hdr != kHeaderSize)
      throw Error(ErrorCode::MalformedHeader, "sizeof_hdr is not 348 in " + name);
    p.swap = true;
  }
  const char* magic = reinterpret_cast<const char*>(bytes.data() + off::magic);
  if (std::memcmp(magic, "n+1\0", 4) != 0 && std::memcmp(magic, "ni1\0", 4) != 0)
    throw Error(ErrorCode::MalformedHeader, "bad magic in " + name);

  Reader r(bytes, p.swap);
  const int ndim = r.get<int16_t>(off::dim);
  if (ndim < 1 || ndim > 7) throw Error(ErrorCode::MalformedHeader, "dim[0] out of range");
  NiftiHeader& h = p.header;
  for (int i = 0; i < 3; ++i) {
    const int d = i < ndim ? r.get<int16_t>(off::dim + 2 * (i + 1)) : 1;
    if (d < 1) throw Error(ErrorCode::MalformedHeader, "nonpositive dimension");
    h.dims[i] = d;
  }
  for (int i = 3; i < ndim; ++i)
    if (r.get<int16_t>(off::dim + 2 * (i + 1)) > 1)
      throw Error(ErrorCode::MalformedHeader, "only single 3D volumes are supported");

  p.raw_type = r.get<int16_t>(off::datatype);
  switch (p.raw_type) {
    case 2: case 4: case 8: case 16: case 64:
      h.datatype = static_cast<DataType>(p.raw_type);
      break;
    default:
      throw Error(ErrorCode::UnsupportedDatatype, "datatype code " + std::to_string(p.raw_type));
  }
  for (int i = 0; i < 3; ++i) {
    double s = std::abs(static_cast<double>(r.get<float>(off::pixdim + 4 * (i + 1))));
    h.spacing[i] = s > 0.0 ? s : 1.0;
  }
  h.scl_slope = r.get<float>(off::scl_slope);
  h.scl_inter = r.get<float>(off::scl_inter);
  if (!std::isfinite(h.scl_slope)) h.scl_slope = 0.0;
  if (!std::isfinite(h.scl_inter)) h.scl_inter = 0.0;
  h.qform_code = r.get<int16_t>(off::qform_code);
  h.sform_code = r.get<int16_t>(off::sform_code);

  if (h.sform_code > 0) {
    Affine a{};
    for (int row = 0; row < 3; ++row)
      for (int c = 0; c < 4; ++c) a[row][c] = r.get<float>(off::srow_x + 16 * row + 4 * c);
    a[3][3] = 1.0;
    h.affine = a;
  } else if (h.qform_code > 0) {
    double qfac = r.get<float>(off::pixdim);
    if (qfac == 0.0) qfac = 1.0;
    h.affine = quatern_to_affine(r.get<float>(off::quatern_b), r.get<float>(off::quatern_b + 4),
                                 r.get<float>(off::quatern_b + 8),
                                 {r.get<float>(off::qoffset_x), r.get<float>(off::qoffset_x + 4),
                                  r.get<float>(off::qoffset_x + 8)},
                                 h.spacing, qfac < 0 ? -1.0 : 1.0);
  } else {
    h.affine = diagonal_affine(h.spacing);
  }

  const double vox_offset = r.get<float>(off::vox_offset);
  p.data_offset = std::max<std::size_t>(kHeaderSize, static_cast<std::size_t>(vox_offset));
  if (std::memcmp(magic, "ni1\0", 4) == 0) p.data_offset = 0;  // detached .img not supported
  if (p.data_offset == 0) throw Error(ErrorCode::MalformedHeader, "two-file NIfTI not supported");

  const std::size_t need = p.data_offset + h.voxel_count() * bytes_per_voxel(h.datatype);
  if (bytes.size() < need) throw Error(ErrorCode::TruncatedData, name + " is shorter than its header promises");
  return p;
}

template <class Out>
void decode(const std::vector<unsigned char>& bytes, const Parsed& p, std::vector<Out>& out,
            bool apply_scaling) {
  const auto& h = p.header;
  const std::size_t n = h.voxel_count();
  out.resize(n);
  Reader r(bytes, p.swap);
  const int bpv = bytes_per_voxel(h.datatype);
  const bool scale = apply_scaling && h.scl_slope != 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t o = p.data_offset + i * bpv;
    double v = 0.0;
    switch (h.datatype) {
      case DataType::UInt8: v = bytes[o]; break;
      case DataType::Int16: v = r.get<int16_t>(o); break;
      case DataType::Int32: v = r.get<int32_t>(o); break;
      case DataType::Float32: v = r.get<float>(o); break;
      case DataType::Float64: v = r.get<double>(o); break;
    }
    if (scale) v = h.scl_slope * v + h.scl_inter;
    if constexpr (std::is_integral_v<Out>)
      out[i] = static_cast<Out>(std::llround(v));
    else
      out[i] = v;
  }
}

bool is_identity_scaling(const NiftiHeader& h) {
  return h.scl_slope == 0.0 || (h.scl_slope == 1.0 && h.scl_inter == 0.0);
}

std::vector<unsigned char> encode_header(const NiftiHeader& h) {
  std::vector<unsigned char> bytes(kDataOffset, 0);
  Writer w(bytes);
  w.put<int32_t>(off::sizeof_hdr, kHeaderSize);
  w.put<int16_t>(off::dim, 3);
  for (int i = 0; i < 3; ++i) w.put<int16_t>(off::dim + 2 * (i + 1), static_cast<int16_t>(h.dims[i]));
  for (int i = 4; i < 8; ++i) w.put<int16_t>(off::dim + 2 * i, 1);
  w.put<int16_t>(off::datatype, static_cast<int16_t>(h.datatype));
  w.put<int16_t>(off::bitpix, static_cast<int16_t>(8 * bytes_per_voxel(h.datatype)));

  std::array<double, 3> bcd{};
  double qfac = 1.0;
  const bool have_quat = affine_to_quatern(h.affine, bcd, qfac);
  w.put<float>(off::pixdim, static_cast<float>(qfac));
  for (int i = 0; i < 3; ++i) w.put<float>(off::pixdim + 4 * (i + 1), static_cast<float>(h.spacing[i]));
  for (int i = 4; i < 8; ++i) w.put<float>(off::pixdim + 4 * i, 1.0f);
  w.put<float>(off::vox_offset, static_cast<float>(kDataOffset));
  w.put<float>(off::scl_slope, static_cast<float>(h.scl_slope));
  w.put<float>(off::scl_inter, static_cast<float>(h.scl_inter));
  bytes[off::xyzt_units] = 2;  // mm
  std::memcpy(bytes.data() + off::descrip, "fastaid", 7);

  const int16_t qcode = have_quat ? (h.qform_code > 0 ? h.qform_code : 1) : 0;
  const int16_t scode = h.sform_code > 0 ? h.sform_code : 1;
  w.put<int16_t>(off::qform_code, qcode);
  w.put<int16_t>(off::sform_code, scode);
  if (have_quat) {
    for (int i = 0; i < 3; ++i) {
      w.put<float>(off::quatern_b + 4 * i, static_cast<float>(bcd[i]));
      w.put<float>(off::qoffset_x + 4 * i, static_cast<float>(h.affine[i][3]));
    }
  }
  for (int row = 0; row < 3; ++row)
    for (int c = 0; c < 4; ++c) w.put<float>(off::srow_x + 16 * row + 4 * c, static_cast<float>(h.affine[row][c]));
  std::memcpy(bytes.data() + off::magic, "n+1\0", 4);
  return bytes;
}

template <class T>
void encode_data(const NiftiHeader& h, const std::vector<T>& data, std::vector<unsigned char>& bytes) {
  const int bpv = bytes_per_voxel(h.datatype);
  const std::size_t base = bytes.size();
  bytes.resize(base + data.size() * bpv);
  Writer w(bytes);
  const bool scale = h.scl_slope != 0.0 && !is_identity_scaling(h);
  for (std::size_t i = 0; i < data.size(); ++i) {
    double v = static_cast<double>(data[i]);
    if (scale) v = (v - h.scl_inter) / h.scl_slope;
    const std::size_t o = base + i * bpv;
    auto clamp_round = [v](double lo, double hi) { return std::clamp(std::nearbyint(v), lo, hi); };
    switch (h.datatype) {
      case DataType::UInt8: bytes[o] = static_cast<unsigned char>(clamp_round(0, 255)); break;
      case DataType::Int16: w.put<int16_t>(o, static_cast<int16_t>(clamp_round(-32768, 32767))); break;
      case DataType::Int32:
        w.put<int32_t>(o, static_cast<int32_t>(clamp_round(std::numeric_limits<int32_t>::min(),
                                                           std::numeric_limits<int32_t>::max())));
        break;
      case DataType::Float32: w.put<float>(o, static_cast<float>(v)); break;
      case DataType::Float64: w.put<double>(o, v); break;
    }
  }
}

void emit(const std::vector<unsigned char>& bytes, const std::filesystem::path& path) {
  if (has_gz_suffix(path)) {
    gzFile gz = gzopen(path.string().c_str(), "wb6");
    if (!gz) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
    const int n = gzwrite(gz, bytes.data(), static_cast<unsigned>(bytes.size()));
    const int rc = gzclose(gz);
    if (n != static_cast<int>(bytes.size()) || rc != Z_OK)
      throw Error(ErrorCode::IoFailure, "short write to " + path.string());
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::IoFailure, "short write to " + path.string());
}

template <class T>
void write_grid(const Grid<T>& g, const std::filesystem::path& path) {
  if (g.data.size() != g.header.voxel_count())
    throw Error(ErrorCode::ShapeMismatch, "data size does not match header dims");
  auto bytes = encode_header(g.header);
  encode_data(g.header, g.data, bytes);
  emit(bytes, path);
}

// Axis assignment for RAS reorientation: out axis `world[j]` takes input voxel axis j.
struct AxisMap {
  std::array<int, 3> world{};  // world axis for input voxel axis j
  std::array<bool, 3> flip{};
};

AxisMap ras_axis_map(const Affine& a) {
  const double det = a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) -
                     a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0]) +
                     a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
  if (!std::isfinite(det) || std::abs(det) < 1e-12)
    throw Error(ErrorCode::SingularAffine, "affine 3x3 part is singular");

  // Greedy assignment by largest remaining magnitude keeps the map a permutation.
  AxisMap m;
  std::array<bool, 3> row_used{}, col_used{};
  for (int step = 0; step < 3; ++step) {
    double best = -1.0;
    int bi = 0, bj = 0;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        if (!row_used[i] && !col_used[j] && std::abs(a[i][j]) > best) {
          best = std::abs(a[i][j]);
          bi = i;
          bj = j;
        }
    row_used[bi] = col_used[bj] = true;
    m.world[bj] = bi;
    m.flip[bj] = a[bi][bj] < 0.0;
  }
  return m;
}

template <class T>
Grid<T> reorient(const Grid<T>& in) {
  const AxisMap m = ras_axis_map(in.header.affine);
  const auto& a = in.header.affine;
  NiftiHeader h = in.header;
  for (int j = 0; j < 3; ++j) {
    const int i = m.world[j];
    h.dims[i] = in.header.dims[j];
    h.spacing[i] = in.header.spacing[j];
    for (int r = 0; r < 3; ++r) h.affine[r][i] = m.flip[j] ? -a[r][j] : a[r][j];
  }
  for (int r = 0; r < 3; ++r) {
    double t = a[r][3];
    for (int j = 0; j < 3; ++j)
      if (m.flip[j]) t += a[r][j] * (in.header.dims[j] - 1);
    h.affine[r][3] = t;
  }
  Grid<T> out(h);
  std::array<int, 3> src{};
  std::array<int, 3> dst{};
  for (src[2] = 0; src[2] < in.nz(); ++src[2])
    for (src[1] = 0; src[1] < in.ny(); ++src[1])
      for (src[0] = 0; src[0] < in.nx(); ++src[0]) {
        for (int j = 0; j < 3; ++j)
          dst[m.world[j]] = m.flip[j] ? in.header.dims[j] - 1 - src[j] : src[j];
        out.at(dst[0], dst[1], dst[2]) = in.at(src[0], src[1], src[2]);
      }
  return out;
}

}  // namespace

NiftiHeader read_header(const std::filesystem::path& path) {
  return parse_header(slurp(path), path.string()).header;
}

Volume read_volume(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  const Parsed p = parse_header(bytes, path.string());
  Volume v;
  v.header = p.header;
  decode(bytes, p, v.data, true);
  for (double x : v.data)
    if (!std::isfinite(x)) throw Error(ErrorCode::MalformedHeader, "non-finite voxel values in " + path.string());
  return v;
}

LabelVolume read_labels(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  const Parsed p = parse_header(bytes, path.string());
  LabelVolume v;
  v.header = p.header;
  decode(bytes, p, v.data, true);
  for (int32_t x : v.data)
    if (x < 0) throw Error(ErrorCode::InvalidArgument, "negative label id in " + path.string());
  v.header.datatype = is_integer(p.header.datatype) ? p.header.datatype : DataType::Int32;
  v.header.scl_slope = 0.0;
  v.header.scl_inter = 0.0;
  return v;
}

std::variant<Volume, LabelVolume> read_nifti(const std::filesystem::path& path) {
  const NiftiHeader h = read_header(path);
  if (is_integer(h.datatype) && is_identity_scaling(h)) return read_labels(path);
  return read_volume(path);
}

void write_nifti(const Volume& volume, const std::filesystem::path& path) { write_grid(volume, path); }

void write_nifti(const LabelVolume& labels, const std::filesystem::path& path) {
  if (!is_integer(labels.header.datatype)) {
    LabelVolume copy = labels;
    copy.header.datatype = DataType::Int32;
    copy.header.scl_slope = 0.0;
    copy.header.scl_inter = 0.0;
    write_grid(copy, path);
    return;
  }
  write_grid(labels, path);
}

Volume reorient_to_ras(const Volume& volume) { return reorient(volume); }
LabelVolume reorient_to_ras(const LabelVolume& labels) { return reorient(labels); }

}  // namespace fastaid
