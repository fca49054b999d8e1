#ifndef ULV_NELDER_MEAD_HPP
#define ULV_NELDER_MEAD_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace ulv {

struct NelderMeadOptions {
    /// Stop when the spread of objective values across the simplex drops below this, relative to their magnitude.
    double relative_tolerance = 1e-10;
    int max_iterations = 500;
    /// Edge length of the initial simplex along each coordinate.
    double initial_step = 1;
};

template<typename Scalar>
struct NelderMeadResult {
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> minimizer;
    Scalar minimum;
    int iterations = 0;
    bool converged = false;
};

/**
 * Derivative-free simplex minimization of `fun`, with the standard reflection (1), expansion (2), contraction (1/2) and shrink (1/2) coefficients.
 */
template<typename Scalar, class Function_>
NelderMeadResult<Scalar> nelder_mead(Function_ fun, Eigen::Matrix<Scalar, Eigen::Dynamic, 1> start, const NelderMeadOptions& options = {}) {
    using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
    const Eigen::Index dim = start.size();

    std::vector<Vector> simplex(dim + 1, start);
    std::vector<Scalar> values(dim + 1);
    for (Eigen::Index d = 0; d < dim; ++d) {
        simplex[d + 1][d] += options.initial_step;
    }
    for (Eigen::Index v = 0; v <= dim; ++v) {
        values[v] = fun(simplex[v]);
    }

    std::vector<Eigen::Index> order(dim + 1);
    NelderMeadResult<Scalar> output;
    auto tiny = std::numeric_limits<Scalar>::min();

    for (output.iterations = 0; output.iterations < options.max_iterations; ++output.iterations) {
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](Eigen::Index l, Eigen::Index r) -> bool { return values[l] < values[r]; });
        const Eigen::Index best = order.front(), worst = order.back(), next_worst = order[dim - 1];

        const Scalar spread = std::abs(values[worst] - values[best]);
        if (spread <= options.relative_tolerance * (std::abs(values[worst]) + std::abs(values[best])) / 2 + tiny) {
            output.converged = true;
            break;
        }

        Vector centroid = Vector::Zero(dim);
        for (Eigen::Index v = 0; v <= dim; ++v) {
            if (v != worst) {
                centroid += simplex[v];
            }
        }
        centroid /= Scalar(dim);

        const Vector reflected = centroid + (centroid - simplex[worst]);
        const Scalar f_reflected = fun(reflected);

        if (f_reflected < values[best]) {
            const Vector expanded = centroid + Scalar(2) * (centroid - simplex[worst]);
            const Scalar f_expanded = fun(expanded);
            if (f_expanded < f_reflected) {
                simplex[worst] = expanded;
                values[worst] = f_expanded;
            } else {
                simplex[worst] = reflected;
                values[worst] = f_reflected;
            }
            continue;
        }

        if (f_reflected < values[next_worst]) {
            simplex[worst] = reflected;
            values[worst] = f_reflected;
            continue;
        }

        // Outside contraction if the reflection improved on the worst point, inside otherwise.
        const bool outside = f_reflected < values[worst];
        const Vector contracted = outside ?
            Vector(centroid + Scalar(0.5) * (reflected - centroid)) :
            Vector(centroid + Scalar(0.5) * (simplex[worst] - centroid));
        const Scalar f_contracted = fun(contracted);
        if (f_contracted < (outside ? f_reflected : values[worst])) {
            simplex[worst] = contracted;
            values[worst] = f_contracted;
            continue;
        }

        for (Eigen::Index v = 0; v <= dim; ++v) {
            if (v != best) {
                simplex[v] = simplex[best] + Scalar(0.5) * (simplex[v] - simplex[best]);
                values[v] = fun(simplex[v]);
            }
        }
    }

    const auto best = std::min_element(values.begin(), values.end()) - values.begin();
    output.minimizer = simplex[best];
    output.minimum = values[best];
    return output;
}

}

#endif
