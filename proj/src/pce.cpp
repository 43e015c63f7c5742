#include "gnmk/pce.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <functional>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>

namespace gnmk::pce {

int total_degree(const MultiIndex& alpha)
{
    int s = 0;
    for (int a : alpha) s += a;
    return s;
}

double hermite_norm_sq(const MultiIndex& alpha)
{
    double v = 1.0;
    for (int a : alpha) {
        for (int k = 2; k <= a; ++k) v *= k;
    }
    return v;
}

MultiIndexSet::MultiIndexSet(int germ_dim, std::vector<MultiIndex> indices)
    : germ_dim_(germ_dim), indices_(std::move(indices))
{
    if (germ_dim_ < 1) throw std::invalid_argument("MultiIndexSet: germ_dim must be >= 1");
    if (indices_.empty()) throw std::invalid_argument("MultiIndexSet: empty index list");
    for (std::size_t i = 0; i < indices_.size(); ++i) {
        const MultiIndex& a = indices_[i];
        if (static_cast<int>(a.size()) != germ_dim_) throw std::invalid_argument("MultiIndexSet: index length mismatch");
        for (int e : a) {
            if (e < 0) throw std::invalid_argument("MultiIndexSet: negative exponent");
        }
        if (!lookup_.emplace(a, i).second) throw std::invalid_argument("MultiIndexSet: duplicate index");
        max_order_ = std::max(max_order_, total_degree(a));
    }
    if (total_degree(indices_.front()) != 0) throw std::invalid_argument("MultiIndexSet: zero index must come first");
}

std::optional<std::size_t> MultiIndexSet::find(const MultiIndex& alpha) const
{
    auto it = lookup_.find(alpha);
    if (it == lookup_.end()) return std::nullopt;
    return it->second;
}

MultiIndexSet total_degree_index_set(int germ_dim, int order)
{
    if (germ_dim < 1 || order < 0) throw std::invalid_argument("total_degree_index_set: need germ_dim >= 1, order >= 0");
    std::vector<MultiIndex> out;
    MultiIndex cur(static_cast<std::size_t>(germ_dim), 0);
    // Compositions of `remaining` into components pos..end, first component largest first.
    std::function<void(int, int)> rec = [&](int pos, int remaining) {
        if (pos == germ_dim - 1) {
            cur[static_cast<std::size_t>(pos)] = remaining;
            out.push_back(cur);
            return;
        }
        for (int e = remaining; e >= 0; --e) {
            cur[static_cast<std::size_t>(pos)] = e;
            rec(pos + 1, remaining - e);
        }
    };
    for (int deg = 0; deg <= order; ++deg) rec(0, deg);
    return MultiIndexSet(germ_dim, std::move(out));
}

MultiIndexSet direct_sum(const MultiIndexSet& a, const MultiIndexSet& b)
{
    const int g = a.germ_dim() + b.germ_dim();
    std::vector<MultiIndex> out;
    out.reserve(a.size() + b.size() - 1);
    for (const MultiIndex& alpha : a.indices()) {
        MultiIndex m(static_cast<std::size_t>(g), 0);
        std::copy(alpha.begin(), alpha.end(), m.begin());
        out.push_back(std::move(m));
    }
    for (const MultiIndex& beta : b.indices()) {
        if (total_degree(beta) == 0) continue;
        MultiIndex m(static_cast<std::size_t>(g), 0);
        std::copy(beta.begin(), beta.end(), m.begin() + a.germ_dim());
        out.push_back(std::move(m));
    }
    return MultiIndexSet(g, std::move(out));
}

MultiIndexSet subset(const MultiIndexSet& s, const std::vector<std::size_t>& positions)
{
    std::vector<MultiIndex> out;
    out.push_back(s[0]);
    for (std::size_t p : positions) {
        if (p == 0) continue;
        if (p >= s.size()) throw std::out_of_range("subset: position out of range");
        out.push_back(s[p]);
    }
    return MultiIndexSet(s.germ_dim(), std::move(out));
}

double hermite_1d(int n, double x)
{
    if (n < 0) throw std::invalid_argument("hermite_1d: negative degree");
    if (n == 0) return 1.0;
    double hm = 1.0, h = x;
    for (int k = 1; k < n; ++k) {
        const double hn = x * h - k * hm;
        hm = h;
        h = hn;
    }
    return h;
}

double hermite_eval(const MultiIndex& alpha, const Vec& point)
{
    if (static_cast<Eigen::Index>(alpha.size()) != point.size()) throw std::invalid_argument("hermite_eval: dimension mismatch");
    double v = 1.0;
    for (std::size_t i = 0; i < alpha.size(); ++i) v *= hermite_1d(alpha[i], point(static_cast<Eigen::Index>(i)));
    return v;
}

const char* basis_family_name(BasisFamily f)
{
    switch (f) {
    case BasisFamily::hermite: return "hermite";
    case BasisFamily::mgs_orthonormal: return "mgs";
    case BasisFamily::nmap_monomial: return "nmap";
    }
    return "unknown";
}

BasisKind BasisKind::mgs(Mat transform, std::string reference)
{
    BasisKind b;
    b.family = BasisFamily::mgs_orthonormal;
    b.transform = std::move(transform);
    b.reference = std::move(reference);
    return b;
}

BasisKind BasisKind::nmap(std::string reference)
{
    BasisKind b;
    b.family = BasisFamily::nmap_monomial;
    b.reference = std::move(reference);
    return b;
}

PCExpansion::PCExpansion(Mat coeffs, BasisKind basis, MultiIndexSet index_set)
    : coeffs_(std::move(coeffs)), basis_(std::move(basis)), index_set_(std::move(index_set))
{
    if (coeffs_.cols() != static_cast<Eigen::Index>(index_set_.size())) {
        throw std::invalid_argument("PCExpansion: coefficient columns must match index set cardinality");
    }
    if (!coeffs_.allFinite()) throw std::invalid_argument("PCExpansion: non-finite coefficients");
    if (basis_.family == BasisFamily::mgs_orthonormal) {
        const auto p = static_cast<Eigen::Index>(index_set_.size());
        if (basis_.transform.rows() != p || basis_.transform.cols() != p) {
            throw std::invalid_argument("PCExpansion: MGS transform must be P x P");
        }
    }
}

PCExpansion PCExpansion::constant(const Vec& c, const MultiIndexSet& index_set)
{
    Mat coeffs = Mat::Zero(c.size(), static_cast<Eigen::Index>(index_set.size()));
    coeffs.col(0) = c;
    return PCExpansion(std::move(coeffs), BasisKind::hermite(), index_set);
}

PCExpansion PCExpansion::linear(const Vec& mean, const Mat& factor)
{
    if (factor.rows() != mean.size()) throw std::invalid_argument("PCExpansion::linear: dimension mismatch");
    const int g = static_cast<int>(factor.cols());
    MultiIndexSet set = total_degree_index_set(g, 1);
    Mat coeffs(mean.size(), g + 1);
    coeffs.col(0) = mean;
    coeffs.rightCols(g) = factor;
    return PCExpansion(std::move(coeffs), BasisKind::hermite(), std::move(set));
}

namespace {

void fill_row(const BasisKind& basis, const MultiIndexSet& set, const double* point, Mat& table, double* out)
{
    const int g = set.germ_dim();
    const int p = set.max_order();
    for (int i = 0; i < g; ++i) {
        const double x = point[i];
        table(0, i) = 1.0;
        if (p >= 1) table(1, i) = x;
        for (int k = 1; k < p; ++k) {
            table(k + 1, i) = basis.family == BasisFamily::hermite ? x * table(k, i) - k * table(k - 1, i)
                                                                   : x * table(k, i);
        }
    }
    for (std::size_t j = 0; j < set.size(); ++j) {
        const MultiIndex& a = set[j];
        double v = 1.0;
        for (int i = 0; i < g; ++i) {
            if (a[static_cast<std::size_t>(i)] != 0) v *= table(a[static_cast<std::size_t>(i)], i);
        }
        out[j] = v;
    }
}

}  // namespace

RowVec basis_row(const BasisKind& basis, const MultiIndexSet& set, const Vec& point)
{
    if (point.size() != set.germ_dim()) throw std::invalid_argument("basis_row: dimension mismatch");
    Mat table(set.max_order() + 1, set.germ_dim());
    RowVec row(static_cast<Eigen::Index>(set.size()));
    fill_row(basis, set, point.data(), table, row.data());
    if (basis.family == BasisFamily::mgs_orthonormal) return row * basis.transform;
    return row;
}

Mat design_matrix(const BasisKind& basis, const MultiIndexSet& set, const Mat& points, Exec exec)
{
    if (points.cols() != set.germ_dim()) throw std::invalid_argument("design_matrix: dimension mismatch");
    const long n = points.rows();
    const auto p = static_cast<Eigen::Index>(set.size());
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> out(n, p);
#pragma omp parallel if (exec == Exec::parallel)
    {
        Mat table(set.max_order() + 1, set.germ_dim());
        Vec pt(set.germ_dim());
#pragma omp for schedule(static)
        for (long r = 0; r < n; ++r) {
            pt = points.row(r).transpose();
            fill_row(basis, set, pt.data(), table, out.row(r).data());
        }
    }
    if (basis.family == BasisFamily::mgs_orthonormal) return out * basis.transform;
    return out;
}

Vec pce_eval(const PCExpansion& exp, const Vec& xi)
{
    if (xi.size() != exp.germ_dim()) throw std::invalid_argument("pce_eval: germ dimension mismatch");
    return exp.coeffs() * basis_row(exp.basis(), exp.index_set(), xi).transpose();
}

Mat pce_eval_samples(const PCExpansion& exp, const Mat& germ_samples, Exec exec)
{
    if (germ_samples.cols() != exp.germ_dim()) throw std::invalid_argument("pce_eval_samples: germ dimension mismatch");
    const long n = germ_samples.rows();
    Mat out(n, exp.state_dim());
    const long block = 4096;
    const long nblocks = (n + block - 1) / block;
#pragma omp parallel for schedule(static) if (exec == Exec::parallel)
    for (long b = 0; b < nblocks; ++b) {
        const long start = b * block;
        const long len = std::min(block, n - start);
        const Mat psi = design_matrix(exp.basis(), exp.index_set(), germ_samples.middleRows(start, len), Exec::serial);
        out.middleRows(start, len) = psi * exp.coeffs().transpose();
    }
    return out;
}

Vec pce_mean(const PCExpansion& exp)
{
    if (exp.basis().family == BasisFamily::nmap_monomial) {
        throw std::invalid_argument("pce_mean: the mean of an NmapMonomial expansion is not a single coefficient");
    }
    return exp.coeffs().col(0);
}

Mat pce_cov(const PCExpansion& a, const PCExpansion& b)
{
    if (a.basis().family != b.basis().family || !(a.index_set() == b.index_set())) {
        throw std::invalid_argument("pce_cov: expansions must share basis and index set");
    }
    if (a.basis().family == BasisFamily::nmap_monomial) {
        throw std::invalid_argument("pce_cov: unsupported for NmapMonomial expansions");
    }
    const auto p = static_cast<Eigen::Index>(a.cardinality());
    if (p <= 1) return Mat::Zero(a.state_dim(), b.state_dim());
    Vec delta(p - 1);
    for (Eigen::Index j = 1; j < p; ++j) {
        delta(j - 1) = a.is_hermite() ? hermite_norm_sq(a.index_set()[static_cast<std::size_t>(j)]) : 1.0;
    }
    return a.coeffs().rightCols(p - 1) * delta.asDiagonal() * b.coeffs().rightCols(p - 1).transpose();
}

Mat sample_germ(long n, int germ_dim, std::uint64_t seed)
{
    if (n < 0 || germ_dim < 0) throw std::invalid_argument("sample_germ: negative size");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Mat out(n, germ_dim);
    for (long i = 0; i < n; ++i) {
        for (int j = 0; j < germ_dim; ++j) out(i, j) = normal(rng);
    }
    return out;
}

GaussianDensity gaussianize(const PCExpansion& exp, Flags* flags)
{
    GaussianDensity g;
    g.mean = pce_mean(exp);
    bool clamped = false;
    g.cov = repair_psd(pce_cov(exp, exp), &clamped);
    if (clamped && flags) flags->add(Flag::psd_clamped);
    return g;
}

PCExpansion embed(const PCExpansion& exp, const MultiIndexSet& target, int offset)
{
    if (!exp.is_hermite()) throw std::invalid_argument("embed: Hermite expansion required");
    if (offset < 0 || exp.germ_dim() + offset > target.germ_dim()) {
        throw std::invalid_argument("embed: germ does not fit into the target germ");
    }
    Mat coeffs = Mat::Zero(exp.state_dim(), static_cast<Eigen::Index>(target.size()));
    MultiIndex m(static_cast<std::size_t>(target.germ_dim()), 0);
    for (std::size_t j = 0; j < exp.cardinality(); ++j) {
        std::fill(m.begin(), m.end(), 0);
        const MultiIndex& a = exp.index_set()[j];
        std::copy(a.begin(), a.end(), m.begin() + offset);
        auto pos = target.find(m);
        if (!pos) {
            if (exp.coeffs().col(static_cast<Eigen::Index>(j)).isZero(0.0)) continue;
            throw std::invalid_argument("embed: index missing from the target set");
        }
        coeffs.col(static_cast<Eigen::Index>(*pos)) = exp.coeffs().col(static_cast<Eigen::Index>(j));
    }
    return PCExpansion(std::move(coeffs), BasisKind::hermite(), target);
}

std::vector<std::size_t> active_support(const PCExpansion& exp)
{
    std::vector<std::size_t> out{0};
    for (std::size_t j = 1; j < exp.cardinality(); ++j) {
        if (!exp.coeffs().col(static_cast<Eigen::Index>(j)).isZero(0.0)) out.push_back(j);
    }
    return out;
}

PCExpansion restrict_to(const PCExpansion& exp, const std::vector<std::size_t>& positions)
{
    if (!exp.is_hermite()) throw std::invalid_argument("restrict_to: Hermite expansion required");
    MultiIndexSet sub = subset(exp.index_set(), positions);
    Mat coeffs(exp.state_dim(), static_cast<Eigen::Index>(sub.size()));
    for (std::size_t j = 0; j < sub.size(); ++j) {
        coeffs.col(static_cast<Eigen::Index>(j)) = exp.coeffs().col(static_cast<Eigen::Index>(*exp.index_set().find(sub[j])));
    }
    return PCExpansion(std::move(coeffs), BasisKind::hermite(), std::move(sub));
}

int effective_order(const PCExpansion& exp)
{
    int order = 0;
    for (std::size_t j = 0; j < exp.cardinality(); ++j) {
        if (!exp.coeffs().col(static_cast<Eigen::Index>(j)).isZero(0.0)) {
            order = std::max(order, total_degree(exp.index_set()[j]));
        }
    }
    return order;
}

namespace {

std::string format_double(double v)
{
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

double parse_double(const std::string& tok)
{
    double v = 0.0;
    auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (res.ec != std::errc() || res.ptr != tok.data() + tok.size()) {
        throw std::runtime_error("read_pce: malformed number '" + tok + "'");
    }
    return v;
}

void write_row(std::ostream& os, const char* tag, const Eigen::Ref<const RowVec>& row)
{
    os << tag;
    for (Eigen::Index j = 0; j < row.size(); ++j) os << ' ' << format_double(row(j));
    os << '\n';
}

std::istringstream next_line(std::istream& is, const std::string& expected_tag)
{
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::string tag;
        ls >> tag;
        if (tag != expected_tag) throw std::runtime_error("read_pce: expected '" + expected_tag + "', found '" + tag + "'");
        return ls;
    }
    throw std::runtime_error("read_pce: unexpected end of input, expected '" + expected_tag + "'");
}

RowVec read_values(std::istringstream& ls, Eigen::Index n)
{
    RowVec row(n);
    for (Eigen::Index j = 0; j < n; ++j) {
        std::string tok;
        if (!(ls >> tok)) throw std::runtime_error("read_pce: row too short");
        row(j) = parse_double(tok);
    }
    return row;
}

}  // namespace

void write_pce(std::ostream& os, const PCExpansion& exp, const std::string& comment)
{
    os << "gnmk-pce 1\n";
    if (!comment.empty()) os << "# " << comment << '\n';
    os << "basis " << basis_family_name(exp.basis().family);
    if (!exp.basis().reference.empty()) os << ' ' << exp.basis().reference;
    os << '\n';
    os << "germ_dim " << exp.germ_dim() << '\n';
    os << "order " << exp.index_set().max_order() << '\n';
    os << "state_dim " << exp.state_dim() << '\n';
    os << "cardinality " << exp.cardinality() << '\n';
    for (const MultiIndex& a : exp.index_set().indices()) {
        os << "index";
        for (int e : a) os << ' ' << e;
        os << '\n';
    }
    if (exp.basis().family == BasisFamily::mgs_orthonormal) {
        for (Eigen::Index r = 0; r < exp.basis().transform.rows(); ++r) write_row(os, "transform", exp.basis().transform.row(r));
    }
    for (Eigen::Index r = 0; r < exp.coeffs().rows(); ++r) write_row(os, "coeffs", exp.coeffs().row(r));
    os << "end\n";
}

PCExpansion read_pce(std::istream& is)
{
    {
        auto ls = next_line(is, "gnmk-pce");
        int version = 0;
        ls >> version;
        if (version != 1) throw std::runtime_error("read_pce: unsupported format version");
    }
    BasisKind basis;
    {
        auto ls = next_line(is, "basis");
        std::string family, reference;
        ls >> family;
        std::getline(ls >> std::ws, reference);
        if (family == "hermite") basis = BasisKind::hermite();
        else if (family == "mgs") basis = BasisKind::mgs(Mat(), reference);
        else if (family == "nmap") basis = BasisKind::nmap(reference);
        else throw std::runtime_error("read_pce: unknown basis '" + family + "'");
    }
    auto read_int = [&](const std::string& tag) {
        auto ls = next_line(is, tag);
        long v = -1;
        if (!(ls >> v) || v < 0) throw std::runtime_error("read_pce: bad value for " + tag);
        return v;
    };
    const long g = read_int("germ_dim");
    read_int("order");
    const long d = read_int("state_dim");
    const long p = read_int("cardinality");
    std::vector<MultiIndex> indices;
    for (long j = 0; j < p; ++j) {
        auto ls = next_line(is, "index");
        MultiIndex a(static_cast<std::size_t>(g));
        for (auto& e : a) {
            if (!(ls >> e)) throw std::runtime_error("read_pce: short index row");
        }
        indices.push_back(std::move(a));
    }
    if (basis.family == BasisFamily::mgs_orthonormal) {
        basis.transform.resize(p, p);
        for (long r = 0; r < p; ++r) {
            auto ls = next_line(is, "transform");
            basis.transform.row(r) = read_values(ls, p);
        }
    }
    Mat coeffs(d, p);
    for (long r = 0; r < d; ++r) {
        auto ls = next_line(is, "coeffs");
        coeffs.row(r) = read_values(ls, p);
    }
    next_line(is, "end");
    return PCExpansion(std::move(coeffs), std::move(basis), MultiIndexSet(static_cast<int>(g), std::move(indices)));
}

std::string serialize(const PCExpansion& exp)
{
    std::ostringstream os;
    write_pce(os, exp);
    return os.str();
}

PCExpansion deserialize(const std::string& text)
{
    std::istringstream is(text);
    return read_pce(is);
}

}  // namespace gnmk::pce
