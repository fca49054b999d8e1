#ifndef ULV_DISTRIBUTIONS_HPP
#define ULV_DISTRIBUTIONS_HPP

#include <string_view>

/**
 * @file distributions.hpp
 * @brief Tail probabilities of the reference distributions used by the tests.
 */

namespace ulv {

enum class Alternative { TWO_SIDED, GREATER, LESS };

Alternative parse_alternative(std::string_view name);

/// Upper tail P(T > t) of Student's t distribution; `df` may be infinite for the standard normal.
double t_upper_tail(double t, double df);

/// Lower tail P(T <= t) of Student's t distribution.
double t_lower_tail(double t, double df);

/// P-value of the statistic `t` under the requested alternative, from t with `df` degrees of freedom or the standard normal when `normal` is set.
double t_pvalue(double t, double df, Alternative alternative, bool normal = false);

/// Upper tail of the chi-squared distribution.
double chisq_upper_tail(double x, double df);

double normal_upper_tail(double z);

}

#endif
