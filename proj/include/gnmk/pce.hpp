#pragma once

#include "gnmk/exec.hpp"
#include "gnmk/linalg.hpp"

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace gnmk::pce {

/// Exponents of a multivariate polynomial, one per germ component.
using MultiIndex = std::vector<int>;

int total_degree(const MultiIndex& alpha);

/// E(Psi_alpha^2) = prod alpha_i! for probabilists' Hermite polynomials.
double hermite_norm_sq(const MultiIndex& alpha);

/// Ordered, duplicate-free list of multi-indices with the zero index first.
class MultiIndexSet {
public:
    MultiIndexSet() = default;
    MultiIndexSet(int germ_dim, std::vector<MultiIndex> indices);

    int germ_dim() const { return germ_dim_; }
    int max_order() const { return max_order_; }
    std::size_t size() const { return indices_.size(); }
    const MultiIndex& operator[](std::size_t i) const { return indices_[i]; }
    const std::vector<MultiIndex>& indices() const { return indices_; }
    std::optional<std::size_t> find(const MultiIndex& alpha) const;

    bool operator==(const MultiIndexSet& other) const
    {
        return germ_dim_ == other.germ_dim_ && indices_ == other.indices_;
    }

private:
    int germ_dim_ = 0;
    int max_order_ = 0;
    std::vector<MultiIndex> indices_;
    std::map<MultiIndex, std::size_t> lookup_;
};

/// All indices of total degree <= order, graded-lexicographic, zero index first.
MultiIndexSet total_degree_index_set(int germ_dim, int order);

/// Index set on the concatenated germ (a's components first): the indices of a
/// padded with zeros, followed by the non-zero indices of b prefixed with zeros.
MultiIndexSet direct_sum(const MultiIndexSet& a, const MultiIndexSet& b);

/// Sub-set of the given positions; position 0 (the zero index) is always kept first.
MultiIndexSet subset(const MultiIndexSet& s, const std::vector<std::size_t>& positions);

double hermite_1d(int n, double x);
double hermite_eval(const MultiIndex& alpha, const Vec& point);

enum class BasisFamily { hermite, mgs_orthonormal, nmap_monomial };

const char* basis_family_name(BasisFamily f);

/// Polynomial family of an expansion. MgsOrthonormal evaluates the monomials of
/// the index set and multiplies by the upper-triangular transform; NmapMonomial
/// uses the raw monomials of a reference state.
struct BasisKind {
    BasisFamily family = BasisFamily::hermite;
    Mat transform;
    std::string reference;

    static BasisKind hermite() { return {}; }
    static BasisKind mgs(Mat transform, std::string reference = {});
    static BasisKind nmap(std::string reference);
};

class PCExpansion {
public:
    PCExpansion() = default;
    PCExpansion(Mat coeffs, BasisKind basis, MultiIndexSet index_set);

    /// Hermite expansion whose only non-zero column is the mean.
    static PCExpansion constant(const Vec& c, const MultiIndexSet& index_set);
    /// Order-1 Hermite expansion mean + factor * xi on a germ of dimension factor.cols().
    static PCExpansion linear(const Vec& mean, const Mat& factor);

    const Mat& coeffs() const { return coeffs_; }
    const BasisKind& basis() const { return basis_; }
    const MultiIndexSet& index_set() const { return index_set_; }
    int state_dim() const { return static_cast<int>(coeffs_.rows()); }
    int germ_dim() const { return index_set_.germ_dim(); }
    std::size_t cardinality() const { return index_set_.size(); }
    bool is_hermite() const { return basis_.family == BasisFamily::hermite; }

private:
    Mat coeffs_;
    BasisKind basis_;
    MultiIndexSet index_set_;
};

/// Basis functions of (basis, index_set) at one germ point.
RowVec basis_row(const BasisKind& basis, const MultiIndexSet& index_set, const Vec& point);

/// N x P matrix of basis evaluations at the rows of points.
Mat design_matrix(const BasisKind& basis, const MultiIndexSet& index_set, const Mat& points,
                  Exec exec = Exec::parallel);

Vec pce_eval(const PCExpansion& exp, const Vec& germ_sample);

/// Evaluates the expansion at each row of germ_samples; returns N x state_dim.
Mat pce_eval_samples(const PCExpansion& exp, const Mat& germ_samples, Exec exec = Exec::parallel);

Vec pce_mean(const PCExpansion& exp);
Mat pce_cov(const PCExpansion& a, const PCExpansion& b);
inline Mat pce_cov(const PCExpansion& a) { return pce_cov(a, a); }

/// n x germ_dim matrix of i.i.d. standard normals, reproducible for a fixed seed.
Mat sample_germ(long n, int germ_dim, std::uint64_t seed);

struct GaussianDensity {
    Vec mean;
    Mat cov;
};

GaussianDensity gaussianize(const PCExpansion& exp, Flags* flags = nullptr);

/// Re-indexes a Hermite expansion onto a larger index set whose germ contains the
/// expansion's germ at component offset `offset`.
PCExpansion embed(const PCExpansion& exp, const MultiIndexSet& target, int offset = 0);

/// Columns whose coefficients are non-zero in some row; position 0 always included.
std::vector<std::size_t> active_support(const PCExpansion& exp);

/// Restriction of a Hermite expansion to the given positions of its index set.
PCExpansion restrict_to(const PCExpansion& exp, const std::vector<std::size_t>& positions);

/// Highest total degree carrying a non-zero coefficient.
int effective_order(const PCExpansion& exp);

void write_pce(std::ostream& os, const PCExpansion& exp, const std::string& comment = {});
PCExpansion read_pce(std::istream& is);
std::string serialize(const PCExpansion& exp);
PCExpansion deserialize(const std::string& text);

}  // namespace gnmk::pce
