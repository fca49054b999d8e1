#include "ulv/distributions.hpp"

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <limits>
#include <cmath>
#include <stdexcept>
#include <string>

namespace ulv {

Alternative parse_alternative(std::string_view name) {
    if (name == "two-sided") {
        return Alternative::TWO_SIDED;
    } else if (name == "greater") {
        return Alternative::GREATER;
    } else if (name == "less") {
        return Alternative::LESS;
    }
    throw std::invalid_argument("unknown alternative '" + std::string(name) + "' (expected two-sided, greater or less)");
}

double normal_upper_tail(double z) {
    if (std::isinf(z)) {
        return z > 0 ? 0 : 1;
    }
    return boost::math::cdf(boost::math::complement(boost::math::normal_distribution<double>(), z));
}

double t_upper_tail(double t, double df) {
    if (std::isinf(t)) {
        return t > 0 ? 0 : 1;
    }
    if (std::isinf(df)) {
        return normal_upper_tail(t);
    }
    return boost::math::cdf(boost::math::complement(boost::math::students_t_distribution<double>(df), t));
}

double t_lower_tail(double t, double df) {
    return t_upper_tail(-t, df);
}

double t_pvalue(double t, double df, Alternative alternative, bool normal) {
    if (normal) {
        df = std::numeric_limits<double>::infinity();
    }
    switch (alternative) {
        case Alternative::GREATER:
            return t_upper_tail(t, df);
        case Alternative::LESS:
            return t_lower_tail(t, df);
        default:
            return std::min(1.0, 2 * t_upper_tail(std::abs(t), df));
    }
}

double chisq_upper_tail(double x, double df) {
    if (x <= 0) {
        return 1;
    }
    if (std::isinf(x)) {
        return 0;
    }
    return boost::math::cdf(boost::math::complement(boost::math::chi_squared_distribution<double>(df), x));
}

}
