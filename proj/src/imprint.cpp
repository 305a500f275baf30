#include "vimprint/imprint.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <string>

#include "vimprint/binary_io.hpp"
#include "vimprint/errors.hpp"

namespace vimprint::imprint {

VideoImprint from_tcg(const tcg::CountingGrid& grid, PosteriorField q, std::string video_id) {
  if (q.grid != grid.grid) throw DomainError("imprint: posterior grid does not match the counting grid");
  return {std::move(video_id), Source::kTcg, grid.grid, grid.window, grid.channels, grid.pi, std::move(q)};
}

VideoImprint from_epitome(const epitome::Epitome& ep, PosteriorField q, std::string video_id) {
  if (q.grid != ep.grid) throw DomainError("imprint: posterior grid does not match the epitome");
  return {std::move(video_id), Source::kEpitome, ep.grid, ep.window, ep.depth, ep.mu, std::move(q)};
}

std::size_t ActiveMap::count() const {
  std::size_t n = 0;
  for (auto v : a) n += v;
  return n;
}

std::vector<std::size_t> ActiveMap::locations() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i]) out.push_back(i);
  return out;
}

ActiveMap build_active_map(const PosteriorField& q, Extent2 window, double tau, bool per_frame_tau) {
  if (!(tau >= 0.0)) throw ConfigError("imprint: tau must be >= 0");
  if (window.x < 1 || window.y < 1 || window.x > q.grid.x || window.y > q.grid.y)
    throw DomainError("imprint: window does not fit the posterior grid");
  const double threshold = per_frame_tau ? tau * q.frames : tau;
  const std::vector<double> mass = q.accumulated_mass();
  const Torus torus(q.grid);
  ActiveMap map{q.grid, std::vector<std::uint8_t>(q.grid.area(), 0), tau};
  for (std::size_t k = 0; k < mass.size(); ++k) {
    if (!(mass[k] > threshold)) continue;
    for (int jx = 0; jx < window.x; ++jx)
      for (int jy = 0; jy < window.y; ++jy) map.a[torus.offset(k, jx, jy)] = 1;
  }
  return map;
}

std::vector<double> aggregate(const VideoImprint& imprint, const ActiveMap& active) {
  if (active.grid != imprint.grid) throw DomainError("imprint: active map grid does not match the imprint");
  std::vector<double> sum(static_cast<std::size_t>(imprint.dim), 0.0);
  for (std::size_t i = 0; i < active.a.size(); ++i) {
    if (!active.a[i]) continue;
    auto d = imprint.at(i);
    for (std::size_t c = 0; c < sum.size(); ++c) sum[c] += d[c];
  }
  return sum;
}

std::vector<double> sum_aggregate(const FeatureSequence& seq) {
  seq.validate();
  const auto d = static_cast<std::size_t>(seq.depth);
  std::vector<double> out(d, 0.0);
  for (std::size_t i = 0; i < seq.data.size(); ++i) out[i % d] += seq.data[i];
  const double n = static_cast<double>(seq.frames) * static_cast<double>(seq.spatial.area());
  for (double& v : out) v /= n;
  return out;
}

ImprintDescriptorSet descriptor_set(const VideoImprint& imprint, const ActiveMap& active) {
  if (active.grid != imprint.grid) throw DomainError("imprint: active map grid does not match the imprint");
  ImprintDescriptorSet set;
  set.source = imprint.source;
  set.grid = imprint.grid;
  set.locations = active.locations();
  for (std::size_t i : set.locations) {
    auto d = imprint.at(i);
    set.vectors.emplace_back(d.begin(), d.end());
  }
  return set;
}

PostprocessResult postprocess_video_vector(std::span<const double> v, const numerics::PcaModel& pca) {
  PostprocessResult out;
  std::vector<double> unit;
  if (!numerics::l2_normalize(v, unit)) {
    out.zero_input = true;
    out.vector.assign(static_cast<std::size_t>(pca.output_dim()), 0.0);
    return out;
  }
  const Eigen::VectorXd w = numerics::pca_whiten_project(pca, unit);
  if (!numerics::l2_normalize(std::span<const double>(w.data(), static_cast<std::size_t>(w.size())), out.vector))
    out.zero_input = true;
  return out;
}

ImprintDescriptorSet postprocess_imprint_descriptors(const ImprintDescriptorSet& set, const numerics::PcaModel& pca,
                                                     double alpha) {
  ImprintDescriptorSet out = set;
  out.post_state = PostState::kWhitened;
  for (auto& v : out.vectors) {
    const auto p = numerics::power_normalize(v, alpha);
    const Eigen::VectorXd w = numerics::pca_whiten_project(pca, p);
    numerics::l2_normalize(std::span<const double>(w.data(), static_cast<std::size_t>(w.size())), v);
  }
  return out;
}

numerics::PcaModel fit_vector_pca(const std::vector<std::vector<double>>& vectors, int dim, double epsilon) {
  std::vector<std::vector<double>> rows;
  for (const auto& v : vectors) {
    std::vector<double> unit;
    if (numerics::l2_normalize(v, unit)) rows.push_back(std::move(unit));
  }
  if (rows.empty()) throw ConfigError("imprint: no nonzero vectors to fit pca on");
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    m.row(static_cast<Eigen::Index>(r)) = Eigen::Map<const Eigen::RowVectorXd>(rows[r].data(), m.cols());
  return numerics::pca_fit(m, dim, epsilon);
}

numerics::PcaModel fit_descriptor_pca(const std::vector<ImprintDescriptorSet>& sets, int dim, double alpha, double epsilon) {
  std::size_t n = 0, d = 0;
  for (const auto& s : sets) {
    n += s.vectors.size();
    if (!s.vectors.empty()) d = s.dim();
  }
  if (n == 0) throw ConfigError("imprint: no descriptors to fit pca on");
  Eigen::MatrixXd m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  Eigen::Index r = 0;
  for (const auto& s : sets)
    for (const auto& v : s.vectors) {
      if (v.size() != d) throw DomainError("imprint: descriptor dims differ across the corpus");
      const auto p = numerics::power_normalize(v, alpha);
      m.row(r++) = Eigen::Map<const Eigen::RowVectorXd>(p.data(), static_cast<Eigen::Index>(d));
    }
  return numerics::pca_fit(m, dim, epsilon);
}

// VVEC ------------------------------------------------------------------------

void VectorStore::add(std::string id, std::vector<double> v) {
  if (ids.empty() && dim == 0) dim = static_cast<int>(v.size());
  if (v.size() != static_cast<std::size_t>(dim)) throw DomainError("imprint: vector dim differs from the store");
  ids.push_back(std::move(id));
  vectors.push_back(std::move(v));
}

std::vector<std::uint8_t> encode_store(const VectorStore& store) {
  io::ByteWriter w;
  w.magic("VVEC");
  w.u32(1);
  w.u32(static_cast<std::uint32_t>(store.size()));
  w.u32(static_cast<std::uint32_t>(store.dim));
  for (std::size_t i = 0; i < store.size(); ++i) {
    w.u32(static_cast<std::uint32_t>(store.ids[i].size()));
    w.raw(store.ids[i]);
    w.f32s(std::span<const double>(store.vectors[i]));
  }
  return w.bytes();
}

VectorStore decode_store(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes, "imprint: vector store");
  r.expect_magic("VVEC");
  r.expect_version(1);
  const std::uint32_t n = r.u32();
  const std::uint32_t dim = r.u32();
  io::checked_volume({n, dim}, r.context());
  VectorStore store;
  store.dim = static_cast<int>(dim);
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::uint32_t len = r.u32();
    std::string id = r.raw(len);
    std::vector<double> v(dim);
    r.f32s(std::span<double>(v));
    for (double x : v)
      if (!std::isfinite(x)) throw ParseError(ParseFailure::kMalformed, r.context() + ": non-finite entry for " + id);
    store.ids.push_back(std::move(id));
    store.vectors.push_back(std::move(v));
  }
  r.expect_end();
  return store;
}

void save_store(const VectorStore& store, const std::filesystem::path& path) { io::write_file(path, encode_store(store)); }

VectorStore load_store(const std::filesystem::path& path) { return decode_store(io::read_file(path)); }

// VPCA ------------------------------------------------------------------------

std::vector<std::uint8_t> encode_pca(const numerics::PcaModel& pca) {
  io::ByteWriter w;
  w.magic("VPCA");
  w.u32(1);
  w.u32(static_cast<std::uint32_t>(pca.input_dim()));
  w.u32(static_cast<std::uint32_t>(pca.output_dim()));
  w.f32(static_cast<float>(pca.epsilon));
  w.f32s(std::span<const double>(pca.mean.data(), static_cast<std::size_t>(pca.mean.size())));
  w.f32s(std::span<const double>(pca.eigenvalues.data(), static_cast<std::size_t>(pca.eigenvalues.size())));
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rows = pca.basis;
  w.f32s(std::span<const double>(rows.data(), static_cast<std::size_t>(rows.size())));
  return w.bytes();
}

numerics::PcaModel decode_pca(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes, "imprint: pca file");
  r.expect_magic("VPCA");
  r.expect_version(1);
  const std::uint32_t D = r.u32(), d = r.u32();
  io::checked_volume({D, d}, r.context());
  if (D == 0 || d == 0 || d > D) throw ParseError(ParseFailure::kMalformed, r.context() + ": bad dimensions");
  numerics::PcaModel pca;
  pca.epsilon = r.f32();
  pca.mean.resize(D);
  pca.eigenvalues.resize(d);
  r.f32s(std::span<double>(pca.mean.data(), D));
  r.f32s(std::span<double>(pca.eigenvalues.data(), d));
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rows(d, D);
  r.f32s(std::span<double>(rows.data(), static_cast<std::size_t>(rows.size())));
  r.expect_end();
  pca.basis = rows;
  if (!pca.mean.allFinite() || !pca.basis.allFinite() || !pca.eigenvalues.allFinite() || !(pca.epsilon >= 0.0))
    throw ParseError(ParseFailure::kMalformed, r.context() + ": non-finite values");
  return pca;
}

void save_pca(const numerics::PcaModel& pca, const std::filesystem::path& path) { io::write_file(path, encode_pca(pca)); }

numerics::PcaModel load_pca(const std::filesystem::path& path) { return decode_pca(io::read_file(path)); }

}  // namespace vimprint::imprint
