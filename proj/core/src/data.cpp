#include "stonet/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <numbers>
#include <sstream>

#include "stonet/errors.hpp"
#include "stonet/random.hpp"

namespace stonet {

namespace {

constexpr char kValuesMagic[8] = {'S', 'T', 'O', 'V', 'A', 'L', 'U', 'E'};
constexpr unsigned char kValuesVersion = 1;

std::size_t wrap(long long i, std::size_t n) {
  const auto m = static_cast<long long>(n);
  return static_cast<std::size_t>(((i % m) + m) % m);
}

// Shortest signed offset along an axis of period `period`.
double min_image(double d, double period) { return d - period * std::round(d / period); }

void laplacian(const std::vector<double>& u, std::vector<double>& out, std::size_t nx,
               std::size_t ny, double hx, double hy, Boundary b) {
  const double ix2 = 1.0 / (hx * hx);
  const double iy2 = 1.0 / (hy * hy);
  auto idx = [&](long long i, long long j) -> std::size_t {
    if (b == Boundary::kPeriodic) return wrap(i, nx) * ny + wrap(j, ny);
    // zero-flux: the ghost value equals the boundary value
    i = std::clamp<long long>(i, 0, static_cast<long long>(nx) - 1);
    j = std::clamp<long long>(j, 0, static_cast<long long>(ny) - 1);
    return static_cast<std::size_t>(i) * ny + static_cast<std::size_t>(j);
  };
  for (std::size_t i = 0; i < nx; ++i) {
    for (std::size_t j = 0; j < ny; ++j) {
      const auto ii = static_cast<long long>(i), jj = static_cast<long long>(j);
      const double c = u[i * ny + j];
      out[i * ny + j] = (u[idx(ii + 1, jj)] - 2.0 * c + u[idx(ii - 1, jj)]) * ix2 +
                        (u[idx(ii, jj + 1)] - 2.0 * c + u[idx(ii, jj - 1)]) * iy2;
    }
  }
}

template <typename U>
void put_le(std::string& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xff));
}

template <typename U>
U get_le(const std::string& bytes, std::size_t& pos) {
  if (pos + sizeof(U) > bytes.size()) throw DataError("values.bin truncated");
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    value |= static_cast<U>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
  }
  pos += sizeof(U);
  return value;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

}  // namespace

// ---- ObservationSeries ------------------------------------------------------

std::size_t ObservationSeries::present_count() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

void ObservationSeries::validate() const {
  if (channels == 0) throw DataError("series needs at least one channel");
  if (values.size() != n_times() * n_nodes() * channels) {
    throw DataError("series holds " + std::to_string(values.size()) + " values, expected " +
                    std::to_string(n_times() * n_nodes() * channels));
  }
  if (mask.size() != n_times()) throw DataError("mask length differs from timestamp count");
  for (std::size_t t = 0; t < n_times(); ++t) {
    if (!std::isfinite(times[t])) throw DataError("non-finite timestamp");
    if (t > 0 && !(times[t] > times[t - 1])) throw DataError("timestamps must strictly increase");
    if (!mask[t]) continue;
    for (std::size_t k = 0; k < n_nodes() * channels; ++k) {
      if (!std::isfinite(values[t * n_nodes() * channels + k])) {
        throw DataError("non-finite value at present timestamp " + std::to_string(t));
      }
    }
  }
}

ObservationSeries ObservationSeries::slice_times(std::size_t begin, std::size_t end) const {
  if (begin > end || end > n_times()) throw DimensionError("slice_times out of range");
  ObservationSeries out;
  out.points = points;
  out.channels = channels;
  out.times.assign(times.begin() + static_cast<long>(begin), times.begin() + static_cast<long>(end));
  out.mask.assign(mask.begin() + static_cast<long>(begin), mask.begin() + static_cast<long>(end));
  const std::size_t frame = n_nodes() * channels;
  out.values.assign(values.begin() + static_cast<long>(begin * frame),
                    values.begin() + static_cast<long>(end * frame));
  return out;
}

ObservationSeries ObservationSeries::select_nodes(std::span<const std::size_t> ids) const {
  ObservationSeries out;
  out.points = points.subset(ids);
  out.times = times;
  out.mask = mask;
  out.channels = channels;
  out.values.reserve(n_times() * ids.size() * channels);
  for (std::size_t t = 0; t < n_times(); ++t) {
    for (auto s : ids) {
      for (std::size_t c = 0; c < channels; ++c) out.values.push_back(at(t, s, c));
    }
  }
  return out;
}

ObservationSeries make_series(PointSet points, std::vector<double> times, std::size_t channels,
                              std::vector<double> values) {
  ObservationSeries s;
  s.points = std::move(points);
  s.mask.assign(times.size(), 1);
  s.times = std::move(times);
  s.channels = channels;
  s.values = std::move(values);
  s.validate();
  return s;
}

// ---- simulators ---------------------------------------------------------------

PdeKind parse_pde_kind(const std::string& name) {
  if (name == "heat") return PdeKind::kHeat;
  if (name == "wave") return PdeKind::kWave;
  throw ParameterError("unknown PDE kind '" + name + "'");
}

Boundary parse_boundary(const std::string& name) {
  if (name == "periodic") return Boundary::kPeriodic;
  if (name == "reflective") return Boundary::kReflective;
  throw ParameterError("unknown boundary '" + name + "'");
}

std::string pde_kind_name(PdeKind kind) { return kind == PdeKind::kHeat ? "heat" : "wave"; }
std::string boundary_name(Boundary b) { return b == Boundary::kPeriodic ? "periodic" : "reflective"; }

double PdeSpec::hx() const {
  return boundary == Boundary::kPeriodic ? length / static_cast<double>(nx)
                                         : length / static_cast<double>(nx - 1);
}

double PdeSpec::hy() const {
  return boundary == Boundary::kPeriodic ? length / static_cast<double>(ny)
                                         : length / static_cast<double>(ny - 1);
}

double PdeSpec::stability_number() const {
  const double h = std::min(hx(), hy());
  if (kind == PdeKind::kHeat) return diffusivity * dt_sim / (h * h);
  const double courant = wave_speed * dt_sim / h;
  return courant * courant;
}

double PdeSpec::stability_limit() const { return kind == PdeKind::kHeat ? 0.25 : 0.5; }

std::vector<double> source_field(const PdeSpec& spec, double t) {
  std::vector<double> q(spec.nx * spec.ny, 0.0);
  const auto& s = spec.source;
  if (s.amplitude == 0.0) return q;
  const double phase = 2.0 * std::numbers::pi * t / s.period;
  const double c = 0.5 * spec.length;
  const double px = c + s.orbit_radius * std::cos(phase), py = c + s.orbit_radius * std::sin(phase);
  const double mx = c - s.orbit_radius * std::cos(phase), my = c - s.orbit_radius * std::sin(phase);
  const double inv = 1.0 / (2.0 * s.width * s.width);
  const bool periodic = spec.boundary == Boundary::kPeriodic;
  for (std::size_t i = 0; i < spec.nx; ++i) {
    for (std::size_t j = 0; j < spec.ny; ++j) {
      const double x = static_cast<double>(i) * spec.hx();
      const double y = static_cast<double>(j) * spec.hy();
      auto off = [&](double d) { return periodic ? min_image(d, spec.length) : d; };
      const double dp = std::pow(off(x - px), 2) + std::pow(off(y - py), 2);
      const double dm = std::pow(off(x - mx), 2) + std::pow(off(y - my), 2);
      q[i * spec.ny + j] = s.amplitude * (std::exp(-dp * inv) - std::exp(-dm * inv));
    }
  }
  return q;
}

Movie simulate(const PdeSpec& spec, const std::vector<double>& initial, std::size_t total_steps,
               std::size_t stride) {
  if (spec.nx < 3 || spec.ny < 3) throw ParameterError("grid needs at least 3x3 vertices");
  if (!(spec.dt_sim > 0.0)) throw ParameterError("dt_sim must be positive");
  if (stride == 0) throw ParameterError("frame stride must be positive");
  if (initial.size() != spec.nx * spec.ny) {
    throw DimensionError("initial field has " + std::to_string(initial.size()) +
                         " values for a " + std::to_string(spec.nx) + "x" +
                         std::to_string(spec.ny) + " grid");
  }
  const double stab = spec.stability_number();
  if (stab > spec.stability_limit()) {
    std::ostringstream os;
    os << "unstable time step: stability number " << stab << " exceeds "
       << spec.stability_limit();
    throw ParameterError(os.str());
  }

  Movie movie;
  movie.nx = spec.nx;
  movie.ny = spec.ny;
  movie.hx = spec.hx();
  movie.hy = spec.hy();
  movie.boundary = spec.boundary;

  const std::size_t n = spec.nx * spec.ny;
  const bool sourced = spec.source.amplitude != 0.0;
  std::vector<double> u = initial, lap(n), prev, next(n);
  const double dt = spec.dt_sim;

  if (spec.kind == PdeKind::kWave) {
    // first step from rest: u^1 = u^0 + dt^2/2 (c^2 lap u^0 + q)
    prev = u;
  }

  for (std::size_t step = 1; step <= total_steps; ++step) {
    const double t = static_cast<double>(step - 1) * dt;
    laplacian(u, lap, spec.nx, spec.ny, movie.hx, movie.hy, spec.boundary);
    std::vector<double> q = sourced ? source_field(spec, t) : std::vector<double>();
    if (spec.kind == PdeKind::kHeat) {
      for (std::size_t k = 0; k < n; ++k) {
        u[k] += dt * (spec.diffusivity * lap[k] + (sourced ? q[k] : 0.0));
      }
    } else {
      const double c2 = spec.wave_speed * spec.wave_speed;
      for (std::size_t k = 0; k < n; ++k) {
        const double accel = c2 * lap[k] + (sourced ? q[k] : 0.0);
        next[k] = step == 1 ? u[k] + 0.5 * dt * dt * accel : 2.0 * u[k] - prev[k] + dt * dt * accel;
      }
      prev.swap(u);
      u.swap(next);
    }
    if (step % stride == 0) {
      movie.times.push_back(static_cast<double>(step) * dt);
      movie.frames.push_back(u);
    }
  }
  return movie;
}

std::vector<double> initial_field(const PdeSpec& spec, const InitialCondition& init,
                                  std::uint64_t seed) {
  std::vector<double> u(spec.nx * spec.ny, init.value);
  if (init.kind == InitialCondition::Kind::kConstant) return u;
  Rng rng(seed);
  const bool periodic = spec.boundary == Boundary::kPeriodic;
  for (int b = 0; b < init.blobs; ++b) {
    const double cx = rng.uniform(0.0, spec.length);
    const double cy = rng.uniform(0.0, spec.length);
    const double amp = init.amplitude * rng.uniform(-1.0, 1.0);
    for (std::size_t i = 0; i < spec.nx; ++i) {
      for (std::size_t j = 0; j < spec.ny; ++j) {
        double dx = static_cast<double>(i) * spec.hx() - cx;
        double dy = static_cast<double>(j) * spec.hy() - cy;
        if (periodic) {
          dx = min_image(dx, spec.length);
          dy = min_image(dy, spec.length);
        }
        u[i * spec.ny + j] += amp * std::exp(-(dx * dx + dy * dy) / (2.0 * init.width * init.width));
      }
    }
  }
  return u;
}

std::pair<double, double> grid_position(const PdeSpec& spec, DomainKind kind,
                                        std::span<const double> point) {
  validate_point(kind, point);
  if (kind == DomainKind::kPlane) return {point[0], point[1]};
  const double lon = std::atan2(point[1], point[0]);                 // (-pi, pi]
  const double lat = std::asin(std::clamp(point[2], -1.0, 1.0));    // [-pi/2, pi/2]
  double gx = (lon + std::numbers::pi) / (2.0 * std::numbers::pi) * spec.length;
  if (gx >= spec.length) gx -= spec.length;
  const double gy = (lat + 0.5 * std::numbers::pi) / std::numbers::pi * spec.length;
  return {gx, gy};
}

ObservationSeries sample_nodes(const Movie& movie, const PdeSpec& spec, const PointSet& points) {
  const std::size_t ns = points.size();
  struct Stencil {
    std::size_t i0, i1, j0, j1;
    double tx, ty;
  };
  std::vector<Stencil> stencils(ns);
  const bool periodic = movie.boundary == Boundary::kPeriodic;
  for (std::size_t s = 0; s < ns; ++s) {
    auto [gx, gy] = grid_position(spec, points.kind(), points.point(s));
    double fx = gx / movie.hx, fy = gy / movie.hy;
    Stencil& st = stencils[s];
    if (periodic) {
      const double flx = std::floor(fx), fly = std::floor(fy);
      st.tx = fx - flx;
      st.ty = fy - fly;
      st.i0 = wrap(static_cast<long long>(flx), movie.nx);
      st.j0 = wrap(static_cast<long long>(fly), movie.ny);
      st.i1 = (st.i0 + 1) % movie.nx;
      st.j1 = (st.j0 + 1) % movie.ny;
    } else {
      const double mx = static_cast<double>(movie.nx - 1), my = static_cast<double>(movie.ny - 1);
      if (fx < -1e-9 || fy < -1e-9 || fx > mx + 1e-9 || fy > my + 1e-9) {
        throw DomainError("sample point outside the simulated grid");
      }
      fx = std::clamp(fx, 0.0, mx);
      fy = std::clamp(fy, 0.0, my);
      st.i0 = std::min(static_cast<std::size_t>(fx), movie.nx - 2);
      st.j0 = std::min(static_cast<std::size_t>(fy), movie.ny - 2);
      st.tx = fx - static_cast<double>(st.i0);
      st.ty = fy - static_cast<double>(st.j0);
      st.i1 = st.i0 + 1;
      st.j1 = st.j0 + 1;
    }
  }

  std::vector<double> values;
  values.reserve(movie.frames.size() * ns);
  for (const auto& f : movie.frames) {
    for (const auto& st : stencils) {
      const double v00 = f[st.i0 * movie.ny + st.j0], v10 = f[st.i1 * movie.ny + st.j0];
      const double v01 = f[st.i0 * movie.ny + st.j1], v11 = f[st.i1 * movie.ny + st.j1];
      values.push_back((1 - st.tx) * (1 - st.ty) * v00 + st.tx * (1 - st.ty) * v10 +
                       (1 - st.tx) * st.ty * v01 + st.tx * st.ty * v11);
    }
  }
  return make_series(points, movie.times, 1, std::move(values));
}

PointSet random_points(const PdeSpec& spec, DomainKind kind, std::size_t count,
                       std::uint64_t seed) {
  if (count == 0) throw ParameterError("need at least one node");
  Rng rng(seed);
  std::vector<double> coords;
  const double hi = spec.length;
  for (std::size_t s = 0; s < count; ++s) {
    if (kind == DomainKind::kPlane) {
      coords.push_back(rng.uniform(0.0, hi));
      coords.push_back(rng.uniform(0.0, hi));
    } else {
      const double lon = rng.uniform(-std::numbers::pi, std::numbers::pi);
      const double z = rng.uniform(-std::sqrt(3.0) / 2.0, std::sqrt(3.0) / 2.0);
      const double r = std::sqrt(1.0 - z * z);
      coords.push_back(r * std::cos(lon));
      coords.push_back(r * std::sin(lon));
      coords.push_back(z);
    }
  }
  return PointSet(kind, std::move(coords));
}

// ---- split / masking ----------------------------------------------------------

SplitPlan make_split(std::size_t n_nodes, double ratio, std::uint64_t seed,
                     std::size_t train_count) {
  if (!(ratio > 0.0)) throw ParameterError("inductive ratio must be positive");
  auto inductive_for = [ratio](std::size_t train) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(ratio * static_cast<double>(train))));
  };
  if (train_count == 0) {
    for (std::size_t t = n_nodes; t >= 1; --t) {
      if (t + inductive_for(t) <= n_nodes) {
        train_count = t;
        break;
      }
    }
  }
  if (train_count == 0 || train_count + inductive_for(train_count) > n_nodes) {
    throw ParameterError("not enough nodes for an inductive split at ratio " + std::to_string(ratio));
  }
  const std::size_t n_ind = inductive_for(train_count);
  std::vector<std::size_t> ids(n_nodes);
  for (std::size_t i = 0; i < n_nodes; ++i) ids[i] = i;
  Rng rng(seed);
  rng.shuffle(ids);
  SplitPlan plan;
  plan.inductive_ratio = ratio;
  plan.train_node_ids.assign(ids.begin(), ids.begin() + static_cast<long>(train_count));
  plan.inductive_node_ids.assign(ids.begin() + static_cast<long>(train_count),
                                 ids.begin() + static_cast<long>(train_count + n_ind));
  std::sort(plan.train_node_ids.begin(), plan.train_node_ids.end());
  std::sort(plan.inductive_node_ids.begin(), plan.inductive_node_ids.end());
  return plan;
}

std::vector<std::uint8_t> presence_mask(std::size_t n, double missing_ratio, std::uint64_t seed) {
  if (missing_ratio < 0.0 || missing_ratio >= 1.0) {
    throw ParameterError("missing ratio must lie in [0, 1)");
  }
  std::vector<std::uint8_t> mask(n, 1);
  if (n == 0) return mask;
  std::size_t k = static_cast<std::size_t>(std::llround(missing_ratio * static_cast<double>(n)));
  k = std::min(k, n - 1);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  for (std::size_t i = 0; i < k; ++i) mask[order[i]] = 0;
  return mask;
}

ObservationSeries drop_timestamps(const ObservationSeries& series, double missing_ratio,
                                  std::uint64_t seed) {
  ObservationSeries out = series;
  const auto keep = presence_mask(series.n_times(), missing_ratio, seed);
  for (std::size_t i = 0; i < keep.size(); ++i) out.mask[i] = out.mask[i] && keep[i];
  return out;
}

// ---- dataset IO ---------------------------------------------------------------

std::string serialize_values(const ObservationSeries& series) {
  std::string out(kValuesMagic, sizeof(kValuesMagic));
  out.push_back(static_cast<char>(kValuesVersion));
  put_le<std::uint32_t>(out, 3);
  put_le<std::uint64_t>(out, series.n_times());
  put_le<std::uint64_t>(out, series.n_nodes());
  put_le<std::uint64_t>(out, series.channels);
  for (double v : series.values) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

void write_dataset(const std::filesystem::path& dir, const Dataset& dataset) {
  const auto& s = dataset.series;
  s.validate();
  std::filesystem::create_directories(dir);
  write_points_csv(dir / "points.csv", s.points);
  {
    std::ofstream os(dir / "times.csv");
    os << "t\n" << std::setprecision(17);
    for (double t : s.times) os << t << '\n';
  }
  {
    std::ofstream os(dir / "mask.csv");
    os << "index,present\n";
    for (std::size_t i = 0; i < s.mask.size(); ++i) os << i << ',' << int(s.mask[i]) << '\n';
  }
  {
    std::ofstream os(dir / "values.bin", std::ios::binary | std::ios::trunc);
    const std::string bytes = serialize_values(s);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw DataError("failed writing values.bin");
  }
  {
    std::ofstream os(dir / "meta.toml");
    for (const auto& [k, v] : dataset.meta) os << k << " = " << v << '\n';
  }
}

Dataset read_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw DataError("no dataset directory " + dir.string());
  Dataset ds;
  ds.series.points = read_points_csv(dir / "points.csv");

  std::ifstream ts(dir / "times.csv");
  if (!ts) throw DataError("missing times.csv");
  std::string line;
  std::getline(ts, line);
  if (trim(line) != "t") throw DataError("times.csv header must be 't'");
  while (std::getline(ts, line)) {
    if (trim(line).empty()) continue;
    try {
      ds.series.times.push_back(std::stod(line));
    } catch (const std::exception&) {
      throw DataError("times.csv: bad number '" + line + "'");
    }
  }

  std::ifstream vs(dir / "values.bin", std::ios::binary);
  if (!vs) throw DataError("missing values.bin");
  std::string bytes((std::istreambuf_iterator<char>(vs)), std::istreambuf_iterator<char>());
  if (bytes.size() < sizeof(kValuesMagic) + 1 ||
      bytes.compare(0, sizeof(kValuesMagic), std::string(kValuesMagic, sizeof(kValuesMagic))) != 0) {
    throw DataError("values.bin: bad magic");
  }
  std::size_t pos = sizeof(kValuesMagic);
  if (static_cast<unsigned char>(bytes[pos++]) != kValuesVersion) throw DataError("values.bin: bad version");
  if (get_le<std::uint32_t>(bytes, pos) != 3) throw DataError("values.bin: rank must be 3");
  const auto nt = get_le<std::uint64_t>(bytes, pos);
  const auto ns = get_le<std::uint64_t>(bytes, pos);
  const auto nc = get_le<std::uint64_t>(bytes, pos);
  if (nt != ds.series.times.size() || ns != ds.series.points.size()) {
    throw DataError("values.bin shape disagrees with times.csv/points.csv");
  }
  if (bytes.size() != pos + 8 * nt * ns * nc) throw DataError("values.bin: payload size mismatch");
  ds.series.channels = nc;
  ds.series.values.resize(nt * ns * nc);
  for (auto& v : ds.series.values) v = std::bit_cast<double>(get_le<std::uint64_t>(bytes, pos));

  ds.series.mask.assign(nt, 1);
  std::ifstream ms(dir / "mask.csv");
  if (!ms) throw DataError("missing mask.csv");
  std::getline(ms, line);
  while (std::getline(ms, line)) {
    if (trim(line).empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw DataError("mask.csv: bad row '" + line + "'");
    const auto i = std::stoull(line.substr(0, comma));
    if (i >= nt) throw DataError("mask.csv: index out of range");
    ds.series.mask[i] = static_cast<std::uint8_t>(std::stoi(line.substr(comma + 1)) != 0);
  }

  std::ifstream meta(dir / "meta.toml");
  while (meta && std::getline(meta, line)) {
    const auto eq = line.find('=');
    if (trim(line).empty() || trim(line)[0] == '#') continue;
    if (eq == std::string::npos) throw DataError("meta.toml: bad line '" + line + "'");
    ds.meta[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  ds.series.validate();
  return ds;
}

}  // namespace stonet
