#pragma once

#include "gnmk/filter.hpp"

#include <unsupported/Eigen/MatrixFunctions>

namespace oracle {

using gnmk::Mat;
using gnmk::Vec;

/// Gaussian prior at t0, deterministic linear dynamics dx/dt = A x and one
/// measurement y = S x(T) + eps at T. Without process noise the fixed-interval
/// smoother is the Kalman posterior of x(t0) carried along the flow.
struct LinearChain {
    Mat A;
    Vec m0;
    Mat L0;
    std::vector<int> observed;
    Mat R;
    Vec y;
    double t0 = 0.0;
    double T = 4.0;

    Mat selector() const
    {
        Mat S = Mat::Zero(static_cast<Eigen::Index>(observed.size()), A.rows());
        for (std::size_t i = 0; i < observed.size(); ++i) S(static_cast<Eigen::Index>(i), observed[i]) = 1.0;
        return S;
    }
    Mat phi(double a, double b) const { return (A * (b - a)).exp(); }
    gnmk::pce::PCExpansion prior() const { return gnmk::pce::PCExpansion::linear(m0, L0); }
    gnmk::filter::MeasurementModel model() const
    {
        return gnmk::filter::MeasurementModel(observed, static_cast<int>(A.rows()), R);
    }

    void smoothed(double t, Vec& mean, Mat& cov) const
    {
        const Mat P0 = L0 * L0.transpose();
        const Mat H = selector() * phi(t0, T);
        const Mat K = P0 * H.transpose() * (H * P0 * H.transpose() + R).inverse();
        const Vec m = m0 + K * (y - H * m0);
        const Mat P = P0 - K * H * P0;
        const Mat F = phi(t0, t);
        mean = F * m;
        cov = F * P * F.transpose();
    }
};

inline LinearChain chain3()
{
    LinearChain c;
    c.A.resize(3, 3);
    c.A << -0.1, 0.5, 0.0, -0.5, -0.1, 0.2, 0.0, -0.2, -0.3;
    c.m0 = (Vec(3) << 1.0, -0.5, 0.25).finished();
    c.L0.resize(3, 3);
    c.L0 << 1.0, 0.0, 0.0, 0.3, 0.8, 0.0, -0.2, 0.1, 0.6;
    c.observed = {0, 2};
    c.R = (Vec(2) << 0.04, 0.09).finished().asDiagonal();
    c.y = (Vec(2) << 0.7, -0.1).finished();
    return c;
}

inline LinearChain chain1()
{
    LinearChain c;
    c.A = Mat::Constant(1, 1, -0.3);
    c.m0 = Vec::Constant(1, 0.5);
    c.L0 = Mat::Constant(1, 1, 1.2);
    c.observed = {0};
    c.R = Mat::Constant(1, 1, 0.05);
    c.y = Vec::Constant(1, 0.9);
    return c;
}

}  // namespace oracle
